use sncbf_core::decomp::{
    build_training_set, evaluate_generalization, scenes_of, simulate_crowd, train_predictor, write_report_csv, CrowdConfig,
    DecompDataset, FramePredictor, PredictorConfig, PredictorKind, PredictorModel, SceneSample, SimulatorOracle,
};
use sncbf_core::exec::Execution;
use sncbf_core::sim::orca::{orca_step, OrcaParams};
use sncbf_core::sim::ObstacleState;
use sncbf_core::{seed, Vec2};
use rand::Rng;

fn small_cfg(seed_value: u64) -> PredictorConfig {
    PredictorConfig { hidden: 16, head: vec![16], iterations: 600, batch: 32, seed: seed_value, ..Default::default() }
}

#[test]
fn window_counting_and_determinism() {
    let cfg = CrowdConfig { frames: 30, ..Default::default() };
    let d = build_training_set(2, 1, 5, &cfg, 1, Execution::Sequential).unwrap();
    assert_eq!(d.pair_count(), 2 * (30 - 5));
    let again = build_training_set(2, 1, 5, &cfg, 1, Execution::Parallel).unwrap();
    assert_eq!(d, again);
    assert_ne!(d, build_training_set(2, 1, 5, &cfg, 2, Execution::Sequential).unwrap());
    assert!(build_training_set(2, 1, 0, &cfg, 1, Execution::Sequential).is_err());
}

#[test]
fn targets_replay_the_simulator() {
    let cfg = CrowdConfig { frames: 60, ..Default::default() };
    let d = build_training_set(8, 2, 4, &cfg, 3, Execution::Sequential).unwrap();
    for s in &d.scenes {
        let next = orca_step(s.window.last().unwrap(), cfg.dt, &cfg.orca).obstacles;
        for (j, o) in next.iter().enumerate() {
            assert_eq!((o.position, o.velocity), s.next[j]);
        }
    }
    let oracle = SimulatorOracle { dt: cfg.dt, orca: cfg.orca };
    let report = evaluate_generalization(&[&oracle], &[4, 12], 2, &cfg, 5, Execution::Sequential).unwrap();
    for r in &report.rows {
        assert_eq!(r.stats.mean_l2, 0.0);
        assert_eq!(r.stats.eps95, 0.0);
        assert!(r.stats.samples > 0);
    }
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &report).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "kind,density,mean_l2,mean_maxnorm,eps95");
    assert_eq!(text.lines().count(), 3);
}

fn constant_velocity_set(n_scenes: usize, k: usize) -> DecompDataset {
    let mut rng = seed::rng(9);
    let dt = 0.1;
    let scenes = (0..n_scenes)
        .map(|_| {
            let obs: Vec<(Vec2, Vec2)> = (0..3)
                .map(|_| {
                    (Vec2::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)), Vec2::from_angle(rng.random_range(-3.2..3.2)) * rng.random_range(0.2..1.4))
                })
                .collect();
            let at = |t: usize| -> Vec<ObstacleState> {
                obs.iter().map(|&(p, v)| ObstacleState::new(p + v * (dt * t as f64), v, 0.3, p + v * 100.0, 1.0).unwrap()).collect()
            };
            SceneSample { window: (0..k).map(at).collect(), next: at(k).iter().map(|o| (o.position, o.velocity)).collect() }
        })
        .collect();
    DecompDataset { k, dt, scenes }
}

#[test]
fn linear_motion_is_learned() {
    let data = constant_velocity_set(400, 5);
    let m = train_predictor(PredictorKind::CSM, &data, &small_cfg(1)).unwrap();
    let held = m.held_out.clone().unwrap();
    assert!(held.mean_l2 < 0.01, "{held:?}");
}

#[test]
fn zero_iterations_leave_the_network_untouched() {
    let data = constant_velocity_set(20, 5);
    for kind in PredictorKind::ALL {
        let cfg = PredictorConfig { iterations: 0, ..small_cfg(4) };
        let m = train_predictor(kind, &data, &cfg).unwrap();
        assert_eq!(m.params, PredictorModel::new(kind, &cfg).unwrap().params);
    }
    let wrong = PredictorConfig { k: 4, ..small_cfg(4) };
    assert!(train_predictor(PredictorKind::CSM, &data, &wrong).is_err());
}

#[test]
fn collective_model_is_order_invariant() {
    let cfg = CrowdConfig { frames: 20, ..Default::default() };
    let r = simulate_crowd(7, &cfg, 4).unwrap();
    let s = &scenes_of(&r, 5)[3];
    let m = PredictorModel::new(PredictorKind::CoSM, &small_cfg(2)).unwrap();
    let p = m.predict_scene(&s.window).unwrap();
    let perm: Vec<usize> = vec![3, 0, 6, 1, 5, 2, 4];
    let w: Vec<Vec<ObstacleState>> = s.window.iter().map(|f| perm.iter().map(|&i| f[i]).collect()).collect();
    let q = m.predict_scene(&w).unwrap();
    for (a, &i) in perm.iter().enumerate() {
        assert!((q[a].0 - p[i].0).norm() < 1e-12 && (q[a].1 - p[i].1).norm() < 1e-12);
    }
    assert!(m.predict_scene(&s.window[1..]).is_err());
}

/// Two pedestrians walking at each other with random lateral offsets.
fn head_on_set(n_rollouts: usize, k: usize, seed_value: u64) -> DecompDataset {
    let mut rng = seed::rng(seed_value);
    let orca = OrcaParams::default();
    let dt = 0.1;
    let mut scenes = Vec::new();
    for _ in 0..n_rollouts {
        let y1 = rng.random_range(-0.4..0.4);
        let y2 = rng.random_range(-0.4..0.4);
        let s1 = rng.random_range(0.8..1.2);
        let s2 = rng.random_range(0.8..1.2);
        let mut frame = vec![
            ObstacleState::new(Vec2::new(-4.0, y1), Vec2::new(s1, 0.0), 0.3, Vec2::new(6.0, y1), s1).unwrap(),
            ObstacleState::new(Vec2::new(4.0, y2), Vec2::new(-s2, 0.0), 0.3, Vec2::new(-6.0, y2), s2).unwrap(),
        ];
        let mut frames = vec![frame.clone()];
        for _ in 0..80 {
            frame = orca_step(&frame, dt, &orca).obstacles;
            frames.push(frame.clone());
        }
        scenes.extend(scenes_of(&sncbf_core::decomp::CrowdRollout { frames }, k));
    }
    DecompDataset { k, dt, scenes }
}

#[test]
fn neighbor_feature_helps_on_head_on_encounters() {
    let data = head_on_set(40, 5, 7);
    let cfg = PredictorConfig { iterations: 2500, hidden: 32, head: vec![32], ..small_cfg(3) };
    let csm = train_predictor(PredictorKind::CSM, &data, &cfg).unwrap();
    let icsm = train_predictor(PredictorKind::ICSM, &data, &cfg).unwrap();
    let test = head_on_set(20, 5, 8);
    let err = |m: &PredictorModel| sncbf_core::decomp::scene_errors(m, &test.scenes).unwrap().1.iter().sum::<f64>();
    let (a, b) = (err(&icsm), err(&csm));
    assert!(a < b, "ICSM {a} vs CSM {b}");
}
