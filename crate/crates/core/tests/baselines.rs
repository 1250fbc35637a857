use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;
use sncbf_core::baselines::{
    gpfm_control, perturb_controls, potential, potential_gradient, smpc_control, smpc_seeds, spfm_control, GpfmConfig,
    GpfmController, PotentialFieldParams, SmpcConfig, SmpcController, SpfmController,
};
use sncbf_core::dynamics::{sample_controls, ControlBounds, DynamicsKind, DynamicsParams, EgoPredictor, EgoState, TrueDynamics};
use sncbf_core::sim::{run_episode, Controller, ObstacleModel, Scenario};
use sncbf_core::{seed, Vec2};

fn analytic_gradient(s: Vec2, goal: Vec2, obstacles: &[Vec2], p: &PotentialFieldParams) -> Vec2 {
    let mut g = (s - goal) * (0.5 * p.zeta / s.distance(goal));
    for &o in obstacles {
        let d = s.distance(o);
        if d <= p.influence {
            g = g - (s - o) * (p.eta * (1.0 / d - 1.0 / p.influence) / (d * d * d));
        }
    }
    g
}

proptest! {
    #[test]
    fn potential_is_non_negative(sx in -5.0f64..5.0, sy in -5.0f64..5.0, obs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 0..6)) {
        let o: Vec<Vec2> = obs.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
        prop_assert!(potential(Vec2::new(sx, sy), Vec2::new(1.0, 1.0), &o, &PotentialFieldParams::default()) >= 0.0);
    }

    #[test]
    fn numeric_gradient_matches_analytic(sx in -4.0f64..4.0, sy in -4.0f64..4.0, obs in proptest::collection::vec((-4.0f64..4.0, -4.0f64..4.0), 0..4)) {
        let p = PotentialFieldParams::default();
        let s = Vec2::new(sx, sy);
        let goal = Vec2::new(3.0, -1.0);
        let o: Vec<Vec2> = obs.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
        // Stay clear of the goal cusp, the Q* kink and the singularity.
        prop_assume!(s.distance(goal) > 0.1);
        prop_assume!(o.iter().all(|q| { let d = s.distance(*q); d > 0.3 && (d - p.influence).abs() > 1e-3 }));
        let num = potential_gradient(s, goal, &o, &p);
        let ana = analytic_gradient(s, goal, &o, &p);
        prop_assert!((num - ana).norm() <= 1e-5 * ana.norm().max(1.0), "{:?} vs {:?}", num, ana);
    }

    #[test]
    fn gpfm_single_integrator_converges(gx in -6.0f64..6.0, gy in -6.0f64..6.0) {
        let kind = DynamicsKind::SingleIntegrator;
        let dynamics = TrueDynamics::new(kind, 0.1);
        let goal = Vec2::new(gx, gy);
        let mut x = EgoState::at_rest(kind, Vec2::ZERO, 0.0);
        let cfg = GpfmConfig::default();
        let b = ControlBounds::default_for(kind);
        let mut d = x.position().distance(goal);
        let mut steps = 0;
        while d > 0.5 {
            let u = gpfm_control(&x, goal, &[], &cfg, &b, &DynamicsParams::default(), 0.1).unwrap();
            x = dynamics.predict(&x, &u).unwrap();
            let nd = x.position().distance(goal);
            prop_assert!(nd < d);
            d = nd;
            steps += 1;
            prop_assert!(steps < 200);
        }
    }
}

#[test]
fn repulsion_is_continuous_at_the_influence_distance() {
    let p = PotentialFieldParams::default();
    let at = |d: f64| potential(Vec2::ZERO, Vec2::ZERO, &[Vec2::new(d, 0.0)], &p);
    assert_eq!(at(2.0), 0.0);
    assert!(at(2.0 - 1e-9) < 1e-15);
    assert_eq!(at(2.0 + 1e-9), 0.0);
}

#[test]
fn spfm_rescoring_oracle() {
    let p = PotentialFieldParams::default();
    let mut rng = seed::rng(1);
    for trial in 0..40u64 {
        let kind = DynamicsKind::ALL[trial as usize % 4];
        let dynamics = TrueDynamics::new(kind, 0.1);
        let b = ControlBounds::default_for(kind);
        let x = EgoState::at_rest(kind, Vec2::new(rng.random_range(-1.0..1.0), 0.0), 0.3);
        let obs: Vec<Vec2> = (0..3).map(|_| Vec2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
        let goal = Vec2::new(4.0, 1.0);
        let u = spfm_control(&x, goal, &obs, &p, &b, 32, &dynamics, trial).unwrap();
        let cands = sample_controls(kind, &b, 32, trial);
        let score = |u| potential(dynamics.predict(&x, u).unwrap().position(), goal, &obs, &p);
        let best = cands.iter().map(score).fold(f64::INFINITY, f64::min);
        assert_eq!(score(&u), best);
        assert!(cands.contains(&u));
        // Without obstacles the potential is the goal distance.
        let u = spfm_control(&x, goal, &[], &p, &b, 32, &dynamics, trial).unwrap();
        let dist = |u| dynamics.predict(&x, u).unwrap().position().distance(goal);
        assert!(cands.iter().all(|c| dist(&u) <= dist(c)));
        let one = spfm_control(&x, goal, &obs, &p, &b, 1, &dynamics, trial).unwrap();
        assert_eq!(one, sample_controls(kind, &b, 1, trial)[0]);
    }
    let x = EgoState::at_rest(DynamicsKind::Dubins, Vec2::ZERO, 0.0);
    let b = ControlBounds::default_for(DynamicsKind::Dubins);
    assert!(spfm_control(&x, Vec2::ZERO, &[], &p, &b, 0, &TrueDynamics::new(DynamicsKind::Dubins, 0.1), 0).is_err());
}

#[test]
fn gpfm_direction_and_plateau() {
    let kind = DynamicsKind::SingleIntegrator;
    let b = ControlBounds::default_for(kind);
    let cfg = GpfmConfig::default();
    let x = EgoState::at_rest(kind, Vec2::new(3.0, 0.0), 0.0);
    let u = gpfm_control(&x, Vec2::ZERO, &[], &cfg, &b, &DynamicsParams::default(), 0.1).unwrap();
    assert!(u.components[0] < 0.0 && u.components[1].abs() < 1e-9);
    let at_goal = gpfm_control(&x, Vec2::new(3.0, 0.0), &[], &cfg, &b, &DynamicsParams::default(), 0.1).unwrap();
    assert_eq!(at_goal.components, vec![0.0, 0.0]);
    for kind in DynamicsKind::ALL {
        let b = ControlBounds::default_for(kind);
        let x = EgoState::at_rest(kind, Vec2::ZERO, 1.0);
        let u = gpfm_control(&x, Vec2::new(5.0, -2.0), &[Vec2::new(1.0, 0.0)], &cfg, &b, &DynamicsParams::default(), 0.1).unwrap();
        assert!(b.contains(&u), "{kind:?}");
    }
}

/// Flat enumeration of every root-to-leaf path of a two-level tree.
fn two_level_oracle(
    x: &EgoState,
    goal: Vec2,
    obstacles: &[(Vec2, Vec2)],
    cfg: &SmpcConfig,
    p: &PotentialFieldParams,
    b: &ControlBounds,
    dynamics: &TrueDynamics,
    s: u64,
) -> (usize, f64) {
    let at = |k: f64| obstacles.iter().map(|&(q, v)| q + v * (0.1 * k)).collect::<Vec<_>>();
    let level = |x: &EgoState, node: u64, depth: f64| {
        let (ns, ps) = smpc_seeds(node);
        let nominal = spfm_control(x, goal, &at(depth + 1.0), p, b, cfg.nominal_samples, dynamics, ns).unwrap();
        perturb_controls(&nominal, b, cfg.sigma_fraction, cfg.samples_per_step, ps)
    };
    let mut best = (0, f64::INFINITY);
    for (i, u0) in level(x, s, 0.0).iter().enumerate() {
        let x1 = dynamics.predict(x, u0).unwrap();
        let node1 = seed::derive(s, i as u64 + 1);
        for u1 in level(&x1, node1, 1.0) {
            let x2 = dynamics.predict(&x1, &u1).unwrap();
            let v = potential(x2.position(), goal, &at(2.0), p);
            if v < best.1 {
                best = (i, v);
            }
        }
    }
    best
}

#[test]
fn smpc_matches_brute_force_tree() {
    let p = PotentialFieldParams::default();
    let mut rng = seed::rng(2);
    for trial in 0..12u64 {
        let kind = DynamicsKind::ALL[trial as usize % 4];
        let dynamics = TrueDynamics::new(kind, 0.1);
        let b = ControlBounds::default_for(kind);
        let x = EgoState::at_rest(kind, Vec2::ZERO, 0.2);
        let obs: Vec<(Vec2, Vec2)> = (0..3)
            .map(|_| (Vec2::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)), Vec2::new(rng.random_range(-1.0..1.0), 0.0)))
            .collect();
        let cfg = SmpcConfig { horizon: 2, samples_per_step: 3, nominal_samples: 4, ..Default::default() };
        let goal = Vec2::new(3.0, 2.0);
        let r = smpc_control(&x, goal, &obs, 0.1, &p, &b, &cfg, &dynamics, trial).unwrap();
        assert_eq!(r.leaves, 9);
        let (i, v) = two_level_oracle(&x, goal, &obs, &cfg, &p, &b, &dynamics, trial);
        let (ns, ps) = smpc_seeds(trial);
        let obs1: Vec<Vec2> = obs.iter().map(|&(q, v)| q + v * 0.1).collect();
        let nominal = spfm_control(&x, goal, &obs1, &p, &b, 4, &dynamics, ns).unwrap();
        assert_eq!(r.control, perturb_controls(&nominal, &b, cfg.sigma_fraction, 3, ps)[i]);
        assert_eq!(r.best_potential, v);
    }
}

#[test]
fn smpc_limits_and_accounting() {
    let p = PotentialFieldParams::default();
    let kind = DynamicsKind::Dubins;
    let dynamics = TrueDynamics::new(kind, 0.1);
    let b = ControlBounds::default_for(kind);
    let x = EgoState::at_rest(kind, Vec2::ZERO, 0.0);
    let obs = [(Vec2::new(1.0, 0.5), Vec2::new(-0.5, 0.0))];
    let goal = Vec2::new(4.0, 0.0);
    let cfg = SmpcConfig::default();
    let r = smpc_control(&x, goal, &obs, 0.1, &p, &b, &cfg, &dynamics, 5).unwrap();
    assert_eq!(r.leaves, 1000);
    assert_eq!(r, smpc_control(&x, goal, &obs, 0.1, &p, &b, &cfg, &dynamics, 5).unwrap());

    let flat = SmpcConfig { horizon: 1, sigma_fraction: 0.0, ..cfg.clone() };
    let r = smpc_control(&x, goal, &obs, 0.1, &p, &b, &flat, &dynamics, 5).unwrap();
    let (ns, _) = smpc_seeds(5);
    let obs1 = [obs[0].0 + obs[0].1 * 0.1];
    assert_eq!(r.control, spfm_control(&x, goal, &obs1, &p, &b, flat.nominal_samples, &dynamics, ns).unwrap());
    assert_eq!(r.leaves, 10);

    assert!(smpc_control(&x, goal, &obs, 0.1, &p, &b, &SmpcConfig { horizon: 0, ..cfg }, &dynamics, 5).is_err());
}

#[test]
fn baseline_controllers_run_episodes() {
    let kind = DynamicsKind::Dubins;
    let cfg = Scenario::new(kind, 8, 3);
    let pred: Arc<dyn EgoPredictor> = Arc::new(TrueDynamics::new(kind, 0.1));
    let b = ControlBounds::default_for(kind);
    let controllers: Vec<Box<dyn Controller>> = vec![
        Box::new(SpfmController { field: PotentialFieldParams::default(), predictor: pred.clone(), bounds: b.clone(), samples: 64 }),
        Box::new(GpfmController { kind, cfg: GpfmConfig::default(), bounds: b.clone(), dynamics: DynamicsParams::default() }),
        Box::new(SmpcController {
            cfg: SmpcConfig { samples_per_step: 4, ..Default::default() },
            field: PotentialFieldParams::default(),
            predictor: pred,
            bounds: b,
        }),
    ];
    for c in &controllers {
        let r = run_episode(&cfg, c.as_ref(), ObstacleModel::Orca(cfg.orca)).unwrap();
        assert!(r.steps_taken > 0, "{}", c.name());
    }
    assert_eq!(controllers[2].name(), "smpc");
}
