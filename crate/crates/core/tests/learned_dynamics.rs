use rand::Rng;
use sncbf_core::dynamics::{
    fit_dynamics, sample_controls_with, step_learned, step_true, Control, ControlBounds, DynamicsKind, DynamicsParams,
    EgoState, FitConfig, Transition,
};
use sncbf_core::seed;

fn transitions(kind: DynamicsKind, n: usize, s: u64) -> Vec<Transition> {
    let mut rng = seed::rng(s);
    let bounds = ControlBounds::default_for(kind);
    let p = DynamicsParams::default();
    (0..n)
        .map(|_| {
            let mut c: Vec<f64> = (0..kind.state_dim()).map(|_| rng.random_range(-5.0..5.0)).collect();
            match kind {
                DynamicsKind::DoubleIntegrator => {
                    c[2] = rng.random_range(-1.5..1.5);
                    c[3] = rng.random_range(-1.5..1.5);
                }
                DynamicsKind::Dubins => {
                    c[2] = rng.random_range(0.0..1.5);
                    c[3] = rng.random_range(-3.14..3.14);
                }
                DynamicsKind::Bicycle => {
                    c[2] = rng.random_range(-3.14..3.14);
                    c[3] = rng.random_range(-0.6..0.6);
                }
                DynamicsKind::SingleIntegrator => {}
            }
            let x = EgoState::new(kind, c).unwrap();
            let u = sample_controls_with(kind, &bounds, 1, &mut rng).pop().unwrap();
            let next = step_true(&x, &u, 0.1, &p).unwrap();
            Transition { x, u, next }
        })
        .collect()
}

#[test]
fn fits_single_integrator() {
    let data = transitions(DynamicsKind::SingleIntegrator, 10_000, 1);
    let m = fit_dynamics(&data, &FitConfig::default()).unwrap();
    for r in &m.held_out_rmse {
        assert!(*r < 1e-3, "rmse {:?}", m.held_out_rmse);
    }
    let k = DynamicsKind::SingleIntegrator;
    let y = step_learned(&m, &EgoState::new(k, vec![0.0, 0.0]).unwrap(), &Control::new(k, vec![1.0, 0.0]).unwrap()).unwrap();
    assert!((y.components[0] - 0.1).abs() < 1e-2 && y.components[1].abs() < 1e-2, "{y:?}");

    let fresh = transitions(k, 200, 77);
    for t in &fresh {
        let y = step_learned(&m, &t.x, &t.u).unwrap();
        for (a, b) in y.components.iter().zip(&t.next.components) {
            assert!((a - b).abs() < 1e-2);
        }
    }

    let again = step_learned(&m, &fresh[0].x, &fresh[0].u).unwrap();
    assert_eq!(again, step_learned(&m, &fresh[0].x, &fresh[0].u).unwrap());
}

#[test]
fn fits_dubins_closely() {
    let data = transitions(DynamicsKind::Dubins, 10_000, 2);
    let m = fit_dynamics(&data, &FitConfig::default()).unwrap();
    for r in &m.held_out_rmse {
        assert!(*r < 5e-3, "rmse {:?}", m.held_out_rmse);
    }
}

#[test]
fn rejects_bad_data() {
    assert!(fit_dynamics(&[], &FitConfig::default()).is_err());
    let mut data = transitions(DynamicsKind::SingleIntegrator, 1000, 3);
    data.extend(transitions(DynamicsKind::Dubins, 10, 3));
    assert!(fit_dynamics(&data, &FitConfig::default()).is_err());
    let few = transitions(DynamicsKind::SingleIntegrator, 999, 3);
    assert!(fit_dynamics(&few, &FitConfig::default()).is_err());
}

#[test]
fn learned_step_rejects_nan_and_wrong_kind() {
    let data = transitions(DynamicsKind::SingleIntegrator, 1000, 4);
    let m = fit_dynamics(&data, &FitConfig { iterations: 10, ..Default::default() }).unwrap();
    let k = DynamicsKind::SingleIntegrator;
    let nan = EgoState { kind: k, components: vec![f64::NAN, 0.0] };
    assert!(step_learned(&m, &nan, &Control::zero(k)).is_err());
    let d = DynamicsKind::Dubins;
    let x = EgoState::new(d, vec![0.0; 4]).unwrap();
    assert!(step_learned(&m, &x, &Control::zero(d)).is_err());
}
