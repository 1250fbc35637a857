use diffcomp::ParamBundle;
use proptest::prelude::*;
use rand::Rng;
use sncbf_core::barrier::{
    barrier_loss, barrier_value, label_trajectory, margin, nonseq_barrier_value, BarrierArch, BarrierHyper, BarrierModel,
    JointSample, LabelConfig, LossBatch, NonSeqArch, NonSeqBarrierModel, ObstacleHistory, RelativeState, Sample,
};
use sncbf_core::dynamics::{Control, DynamicsKind, EgoState};
use sncbf_core::sim::{EpisodeResult, ObstacleState, Outcome};
use sncbf_core::{seed, Vec2};

fn small_arch(kind: DynamicsKind, k: usize) -> BarrierArch {
    BarrierArch { k, lstm_hidden: 6, ego_widths: vec![5, 4], head_hidden: vec![7, 6], ..BarrierArch::new(kind) }
}

fn rand_state(rng: &mut impl Rng, kind: DynamicsKind) -> EgoState {
    let c = (0..kind.state_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
    EgoState::new(kind, c).unwrap()
}

fn rand_history(rng: &mut impl Rng, k: usize) -> ObstacleHistory {
    ObstacleHistory::new(
        (0..k)
            .map(|_| {
                RelativeState::new(
                    Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
                    Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                )
            })
            .collect(),
    )
    .unwrap()
}

fn rand_sample(rng: &mut impl Rng, kind: DynamicsKind, k: usize) -> Sample {
    Sample { x: rand_state(rng, kind), h: rand_history(rng, k) }
}

// ---- independent oracle -------------------------------------------------

fn tensor<'a>(p: &'a ParamBundle, name: &str) -> &'a [f64] {
    p.get(name).unwrap().data()
}

fn dense(p: &ParamBundle, prefix: &str, layer: usize, x: &[f64]) -> Vec<f64> {
    let w = tensor(p, &format!("{prefix}.l{layer}.weight"));
    let b = tensor(p, &format!("{prefix}.l{layer}.bias"));
    let n_in = x.len();
    (0..b.len())
        .map(|o| {
            let mut s = b[o];
            for i in 0..n_in {
                s += w[o * n_in + i] * x[i];
            }
            s
        })
        .collect()
}

fn mlp(p: &ParamBundle, prefix: &str, layers: usize, x: &[f64]) -> Vec<f64> {
    let mut cur = x.to_vec();
    for l in 0..layers {
        cur = dense(p, prefix, l, &cur);
        if l + 1 < layers {
            cur = cur.iter().map(|v| v.tanh()).collect();
        }
    }
    cur
}

fn sig(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn lstm(p: &ParamBundle, hd: usize, seq: &[[f64; 4]]) -> Vec<f64> {
    let w_ih = tensor(p, "lstm.w_ih");
    let w_hh = tensor(p, "lstm.w_hh");
    let b = tensor(p, "lstm.bias");
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    for x in seq {
        let gate = |g: usize, j: usize| {
            let row = g * hd + j;
            let mut s = b[row];
            for i in 0..4 {
                s += w_ih[row * 4 + i] * x[i];
            }
            for i in 0..hd {
                s += w_hh[row * hd + i] * h[i];
            }
            s
        };
        let mut nh = vec![0.0; hd];
        for j in 0..hd {
            let (ig, fg, gg, og) = (sig(gate(0, j)), sig(gate(1, j)), gate(2, j).tanh(), sig(gate(3, j)));
            c[j] = fg * c[j] + ig * gg;
            nh[j] = og * c[j].tanh();
        }
        h = nh;
    }
    h
}

fn features(x: &EgoState) -> Vec<f64> {
    let c = &x.components;
    match x.kind {
        DynamicsKind::SingleIntegrator => vec![1.0],
        DynamicsKind::DoubleIntegrator => vec![c[2], c[3]],
        DynamicsKind::Dubins => vec![c[2], c[3].cos(), c[3].sin()],
        DynamicsKind::Bicycle => vec![c[2].cos(), c[2].sin(), c[3]],
    }
}

fn oracle_b(m: &BarrierModel, x: &EgoState, h: &ObstacleHistory) -> f64 {
    let seq: Vec<[f64; 4]> = h.steps().iter().map(|s| s.to_array()).collect();
    let mut d = lstm(&m.params, m.arch.lstm_hidden, &seq);
    d.extend(mlp(&m.params, "ego", m.arch.ego_widths.len(), &features(x)));
    mlp(&m.params, "head", m.arch.head_hidden.len() + 1, &d)[0]
}

fn oracle_loss(m: &BarrierModel, b: &LossBatch<'_, Sample>) -> f64 {
    let hp = m.hyper;
    let val = |s: &Sample| oracle_b(m, &s.x, &s.h);
    let t1: f64 = b.safe.iter().map(|s| margin(hp.gamma, -val(s))).sum::<f64>() / b.safe.len() as f64;
    let t2: f64 = b.unsafe_.iter().map(|s| margin(hp.gamma, val(s))).sum::<f64>() / b.unsafe_.len() as f64;
    let t3: f64 = b
        .pairs
        .iter()
        .map(|(a, c)| {
            let (ba, bc) = (val(a), val(c));
            margin(hp.gamma, -((bc - ba) / hp.dt) - hp.kappa * ba)
        })
        .sum::<f64>()
        / b.pairs.len() as f64;
    t1 + t2 + t3
}

// ---- tests ---------------------------------------------------------------

#[test]
fn matches_layer_by_layer_oracle() {
    let mut rng = seed::rng(1);
    for kind in DynamicsKind::ALL {
        let m = BarrierModel::new(BarrierArch::new(kind), BarrierHyper::default(), 3).unwrap();
        for _ in 0..5 {
            let s = rand_sample(&mut rng, kind, 5);
            let fast = barrier_value(&m, &s.x, &s.h).unwrap();
            let oracle = oracle_b(&m, &s.x, &s.h);
            assert!((fast - oracle).abs() < 1e-12, "{kind:?}: {fast} vs {oracle}");
            let mut g = diffcomp::Graph::new(&m.params);
            let node = m.trace(&mut g, &[&s.x], &[&s.h]).unwrap();
            assert!((g.value(node).item() - oracle).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_head_gives_zero() {
    let mut m = BarrierModel::new(BarrierArch::new(DynamicsKind::Dubins), BarrierHyper::default(), 0).unwrap();
    let names: Vec<String> = m.params.iter().map(|(n, _)| n.to_string()).filter(|n| n.starts_with("head")).collect();
    for n in names {
        let i = m.params.index_of(&n).unwrap();
        m.params.tensor_mut(i).data_mut().fill(0.0);
    }
    let mut rng = seed::rng(2);
    for _ in 0..10 {
        let s = rand_sample(&mut rng, DynamicsKind::Dubins, 5);
        assert_eq!(barrier_value(&m, &s.x, &s.h).unwrap(), 0.0);
    }
}

#[test]
fn time_order_matters() {
    let m = BarrierModel::new(BarrierArch::new(DynamicsKind::Dubins), BarrierHyper::default(), 5).unwrap();
    let mut rng = seed::rng(3);
    let s = rand_sample(&mut rng, DynamicsKind::Dubins, 5);
    let mut rev = s.h.steps().to_vec();
    rev.reverse();
    let r = ObstacleHistory::new(rev).unwrap();
    assert_ne!(barrier_value(&m, &s.x, &s.h).unwrap(), barrier_value(&m, &s.x, &r).unwrap());
}

#[test]
fn shape_mismatches_rejected() {
    let m = BarrierModel::new(BarrierArch::new(DynamicsKind::Dubins), BarrierHyper::default(), 5).unwrap();
    let mut rng = seed::rng(4);
    let s = rand_sample(&mut rng, DynamicsKind::Dubins, 4);
    assert!(barrier_value(&m, &s.x, &s.h).is_err());
    let s = rand_sample(&mut rng, DynamicsKind::Bicycle, 5);
    assert!(barrier_value(&m, &s.x, &s.h).is_err());
}

#[test]
fn params_rebind_round_trip() {
    let m = BarrierModel::new(small_arch(DynamicsKind::Bicycle, 3), BarrierHyper::default(), 9).unwrap();
    let back = BarrierModel::from_params(m.arch.clone(), m.hyper, m.params.clone()).unwrap();
    let mut rng = seed::rng(5);
    let s = rand_sample(&mut rng, DynamicsKind::Bicycle, 3);
    assert_eq!(back.value(&s.x, &s.h).unwrap(), m.value(&s.x, &s.h).unwrap());
    let wrong = BarrierArch { lstm_hidden: 7, ..m.arch.clone() };
    assert!(BarrierModel::from_params(wrong, m.hyper, m.params.clone()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn joint_translation_leaves_value_unchanged(seed_v in any::<u64>(), dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
        let mut rng = seed::rng(seed_v);
        let kind = DynamicsKind::ALL[rng.random_range(0..4)];
        let m = BarrierModel::new(small_arch(kind, 4), BarrierHyper::default(), 1).unwrap();
        let x = rand_state(&mut rng, kind);
        // Absolute obstacle track, relative states built from it.
        let obs: Vec<(Vec2, Vec2)> = (0..4).map(|_| (Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)), Vec2::new(0.3, -0.2))).collect();
        let build = |d: Vec2| {
            let ego = x.translated(d);
            let h = ObstacleHistory::new(obs.iter().map(|&(p, v)| RelativeState::between(ego.position(), Vec2::ZERO, p + d, v)).collect()).unwrap();
            (ego, h)
        };
        let (x0, h0) = build(Vec2::ZERO);
        let (x1, h1) = build(Vec2::new(dx, dy));
        let a = barrier_value(&m, &x0, &h0).unwrap();
        let b = barrier_value(&m, &x1, &h1).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

fn const_model(value: f64) -> BarrierModel {
    let mut m = BarrierModel::new(small_arch(DynamicsKind::SingleIntegrator, 2), BarrierHyper::default(), 0).unwrap();
    let last = m.arch.head_hidden.len();
    let names: Vec<String> = m.params.iter().map(|(n, _)| n.to_string()).filter(|n| n.starts_with("head")).collect();
    for n in names {
        let i = m.params.index_of(&n).unwrap();
        let fill = if n == format!("head.l{last}.bias") { value } else { 0.0 };
        m.params.tensor_mut(i).data_mut().fill(fill);
    }
    m
}

#[test]
fn loss_of_constant_models() {
    let mut rng = seed::rng(6);
    let k = DynamicsKind::SingleIntegrator;
    let samples: Vec<Sample> = (0..6).map(|_| rand_sample(&mut rng, k, 2)).collect();
    let batch = LossBatch {
        safe: samples[..2].iter().collect(),
        unsafe_: samples[2..4].iter().collect(),
        pairs: vec![(&samples[4], &samples[5])],
    };
    let (zero, _) = barrier_loss(&const_model(0.0), &batch).unwrap();
    assert!((zero.total() - 0.03).abs() < 1e-15);
    assert_eq!(zero.safe, 0.01);
    assert_eq!(zero.lie, 0.01);

    // B = 1 with kappa > gamma: safe and pair terms vanish.
    let (one, _) = barrier_loss(&const_model(1.0), &batch).unwrap();
    assert_eq!(one.safe, 0.0);
    assert_eq!(one.lie, 0.0);

    let empty = LossBatch { safe: vec![], unsafe_: batch.unsafe_.clone(), pairs: batch.pairs.clone() };
    assert!(barrier_loss(&const_model(0.0), &empty).is_err());
}

#[test]
fn loss_and_gradients_match_oracles() {
    let mut rng = seed::rng(7);
    for trial in 0..4 {
        let kind = DynamicsKind::ALL[trial];
        let mut m = BarrierModel::new(small_arch(kind, 3), BarrierHyper::default(), trial as u64).unwrap();
        let samples: Vec<Sample> = (0..10).map(|_| rand_sample(&mut rng, kind, 3)).collect();
        let batch = LossBatch {
            safe: samples[..3].iter().collect(),
            unsafe_: samples[3..6].iter().collect(),
            pairs: vec![(&samples[6], &samples[7]), (&samples[8], &samples[9])],
        };
        let (terms, grads) = barrier_loss(&m, &batch).unwrap();
        let base = oracle_loss(&m, &batch);
        assert!((terms.total() - base).abs() < 1e-10);

        let step = 1e-5;
        for pi in 0..m.params.len() {
            for e in 0..m.params.tensor(pi).len() {
                let orig = m.params.tensor(pi).data()[e];
                m.params.tensor_mut(pi).data_mut()[e] = orig + step;
                let up = oracle_loss(&m, &batch);
                m.params.tensor_mut(pi).data_mut()[e] = orig - step;
                let down = oracle_loss(&m, &batch);
                m.params.tensor_mut(pi).data_mut()[e] = orig;
                let fd = (up - down) / (2.0 * step);
                let an = grads.tensor(pi).data()[e];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                assert!(rel < 1e-5, "{} [{e}]: {an} vs {fd}", m.params.name(pi));
            }
        }
    }
}

#[test]
fn labels_follow_the_horizon_rule() {
    let k = DynamicsKind::SingleIntegrator;
    let ob = |x: f64| ObstacleState::new(Vec2::new(x, 0.0), Vec2::ZERO, 0.3, Vec2::new(x, 5.0), 1.0).unwrap();
    let ego = |x: f64| EgoState::new(k, vec![x, 0.0]).unwrap();
    let r = EpisodeResult {
        outcome: Outcome::Collided,
        steps_taken: 2,
        ego_trajectory: vec![ego(0.0), ego(0.6), ego(1.2)],
        obstacle_trajectories: vec![vec![ob(1.5)], vec![ob(1.5)], vec![ob(1.5)]],
        controls: vec![Control::zero(k), Control::zero(k)],
        evaluations: 0,
    };
    let cfg = LabelConfig { k: 3, horizon: 1, ..Default::default() };
    let d = label_trajectory(&r, Vec2::new(5.0, 0.0), &cfg);
    // t=2 collides (0.3 m), t=1 precedes it within the horizon, t=0 is clear.
    assert_eq!(d.unsafe_.len(), 1);
    assert_eq!(d.unsafe_.items()[0].sample.x, ego(1.2));
    assert_eq!(d.safe.len(), 1);
    assert_eq!(d.safe.items()[0].sample.x, ego(0.0));
    assert_eq!(d.pairs.len(), 1);
    assert_eq!(d.pairs[0].1.x, ego(0.6));
    let h = &d.unsafe_.items()[0].sample.h;
    let xs: Vec<f64> = h.steps().iter().map(|s| s.rel_position.x).collect();
    assert!((xs[0] - 1.5).abs() < 1e-12 && (xs[1] - 0.9).abs() < 1e-12 && (xs[2] - 0.3).abs() < 1e-12);
    // Velocity is differenced from the trajectory.
    assert!((h.last().rel_velocity.x + 6.0).abs() < 1e-9);
}

// ---- pooled baseline -------------------------------------------------------

fn oracle_nonseq(m: &NonSeqBarrierModel, x: &EgoState, rels: &[RelativeState]) -> f64 {
    let width = *m.arch.obstacle_widths.last().unwrap();
    let mut pooled = vec![f64::NEG_INFINITY; width];
    for r in rels {
        let e = mlp(&m.params, "obs", m.arch.obstacle_widths.len(), &r.to_array());
        for (p, v) in pooled.iter_mut().zip(e) {
            *p = p.max(v);
        }
    }
    if rels.is_empty() {
        pooled.fill(0.0);
    }
    pooled.extend(mlp(&m.params, "ego", m.arch.ego_widths.len(), &features(x)));
    mlp(&m.params, "head", m.arch.head_hidden.len() + 1, &pooled)[0]
}

#[test]
fn pooled_model_properties() {
    let m = NonSeqBarrierModel::new(NonSeqArch::new(DynamicsKind::Dubins), BarrierHyper::default(), 4).unwrap();
    let mut rng = seed::rng(8);
    let x = rand_state(&mut rng, DynamicsKind::Dubins);
    let rels: Vec<RelativeState> = rand_history(&mut rng, 4).steps().to_vec();
    let v = nonseq_barrier_value(&m, &x, &rels).unwrap();
    assert!((v - oracle_nonseq(&m, &x, &rels)).abs() < 1e-12);

    let mut perm = rels.clone();
    perm.reverse();
    perm.swap(0, 2);
    assert_eq!(v, nonseq_barrier_value(&m, &x, &perm).unwrap());

    assert_eq!(m.pooled(&rels[..1]), m.obstacle_encoder().forward_row(&m.params, &rels[0].to_array()));
    let empty = nonseq_barrier_value(&m, &x, &[]).unwrap();
    assert!((empty - oracle_nonseq(&m, &x, &[])).abs() < 1e-12);

    let samples = [JointSample { x: x.clone(), rels: rels.clone() }, JointSample { x: x.clone(), rels: vec![] }];
    let mut g = diffcomp::Graph::new(&m.params);
    let node = m.trace(&mut g, &[&samples[0], &samples[1]]).unwrap();
    assert!((g.value(node).data()[0] - v).abs() < 1e-12);
    assert!((g.value(node).data()[1] - empty).abs() < 1e-12);
}
