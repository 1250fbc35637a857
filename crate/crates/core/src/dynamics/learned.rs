use diffcomp::{Activation, Adam, AdamConfig, Graph, Mlp, MlpSpec, ParamBundle, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{normalize_state, Control, DynamicsKind, DynamicsParams, EgoPredictor, EgoState};
use crate::geom::wrap_angle;
use crate::seed;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub x: EgoState,
    pub u: Control,
    pub next: EgoState,
}

#[derive(Clone, Debug)]
pub struct FitConfig {
    pub hidden: Vec<usize>,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub holdout_fraction: f64,
    pub min_transitions: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            iterations: 4000,
            batch: 256,
            lr: 3e-3,
            holdout_fraction: 0.1,
            min_transitions: 1000,
            seed: 0,
        }
    }
}

/// Neural one-step model of the ego dynamics.
///
/// The network sees translation-free features (positions dropped, angles as
/// cosine/sine) plus the control, and predicts the z-scored state increment.
#[derive(Clone, Debug)]
pub struct LearnedDynamics {
    pub kind: DynamicsKind,
    pub params: ParamBundle,
    pub mlp: Mlp,
    pub in_mean: Vec<f64>,
    pub in_scale: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_scale: Vec<f64>,
    /// Per-component RMSE of the predicted next state on held-out data.
    pub held_out_rmse: Vec<f64>,
    pub state_params: DynamicsParams,
}

/// Width of the network input for `kind`.
pub fn input_width(kind: DynamicsKind) -> usize {
    let state = kind.state_dim() - 2 + kind.angle_components().len();
    state + kind.control_dim()
}

fn features(x: &EgoState, u: &Control) -> Vec<f64> {
    let kind = x.kind;
    let mut f = Vec::with_capacity(input_width(kind));
    for i in 2..kind.state_dim() {
        if kind.angle_components().contains(&i) {
            f.push(x.components[i].cos());
            f.push(x.components[i].sin());
        } else {
            f.push(x.components[i]);
        }
    }
    f.extend_from_slice(&u.components);
    f
}

fn increment(t: &Transition) -> Vec<f64> {
    let kind = t.x.kind;
    (0..kind.state_dim())
        .map(|i| {
            let d = t.next.components[i] - t.x.components[i];
            if kind.angle_components().contains(&i) {
                wrap_angle(d)
            } else {
                d
            }
        })
        .collect()
}

fn moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let w = rows[0].len();
    let mut mean = vec![0.0; w];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; w];
    for r in rows {
        for j in 0..w {
            scale[j] += (r[j] - mean[j]).powi(2) / n;
        }
    }
    for s in &mut scale {
        *s = s.sqrt();
        if *s < 1e-8 {
            *s = 1.0;
        }
    }
    (mean, scale)
}

fn standardize(rows: &[Vec<f64>], mean: &[f64], scale: &[f64]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| r.iter().enumerate().map(|(j, v)| (v - mean[j]) / scale[j]).collect()).collect()
}

/// Fits the surrogate by Adam on mean squared error of the normalized
/// increment, with a linearly decaying learning rate.
pub fn fit_dynamics(data: &[Transition], cfg: &FitConfig) -> Result<LearnedDynamics> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no transitions to fit".into()));
    }
    if data.len() < cfg.min_transitions {
        return Err(Error::InvalidInput(format!(
            "need at least {} transitions, got {}",
            cfg.min_transitions,
            data.len()
        )));
    }
    let kind = data[0].x.kind;
    for t in data {
        if t.x.kind != kind || t.u.kind != kind || t.next.kind != kind {
            return Err(Error::InvalidInput("transitions mix dynamics kinds".into()));
        }
        if !t.x.is_finite() || !t.next.is_finite() || t.u.components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("transition data".into()));
        }
    }

    let mut rng = seed::rng(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = ((data.len() as f64 * cfg.holdout_fraction).round() as usize).min(data.len() - 1);
    let (hold_idx, train_idx) = order.split_at(n_hold);

    let inputs: Vec<Vec<f64>> = train_idx.iter().map(|&i| features(&data[i].x, &data[i].u)).collect();
    let targets: Vec<Vec<f64>> = train_idx.iter().map(|&i| increment(&data[i])).collect();
    let (in_mean, in_scale) = moments(&inputs);
    let (out_mean, out_scale) = moments(&targets);
    let xs = standardize(&inputs, &in_mean, &in_scale);
    let ys = standardize(&targets, &out_mean, &out_scale);

    let mut widths = vec![input_width(kind)];
    widths.extend_from_slice(&cfg.hidden);
    widths.push(kind.state_dim());
    let spec = MlpSpec::new(widths, Activation::Tanh)?;
    let mut params = ParamBundle::new();
    let mlp = Mlp::init(spec, "dyn", &mut params, &mut rng)?;

    let mut adam = Adam::new(&params, AdamConfig { lr: cfg.lr, ..Default::default() });
    let batch = cfg.batch.min(xs.len()).max(1);
    for it in 0..cfg.iterations {
        adam.config.lr = cfg.lr * (1.0 - 0.9 * it as f64 / cfg.iterations as f64);
        let rows: Vec<usize> = (0..batch).map(|_| rng.random_range(0..xs.len())).collect();
        let xb = Tensor::from_rows(&rows.iter().map(|&r| xs[r].as_slice()).collect::<Vec<_>>())?;
        let yb = Tensor::from_rows(&rows.iter().map(|&r| ys[r].as_slice()).collect::<Vec<_>>())?;
        let grads = {
            let mut g = Graph::new(&params);
            let xi = g.input(xb);
            let yi = g.input(yb);
            let pred = mlp.trace(&mut g, xi)?;
            let diff = g.sub(pred, yi)?;
            let sq = g.square(diff);
            let loss = g.mean(sq);
            if !g.value(loss).item().is_finite() {
                return Err(Error::NonFinite(format!("dynamics loss at iteration {it}")));
            }
            g.backward(loss)?
        };
        adam.step(&mut params, &grads)?;
    }

    let mut model = LearnedDynamics {
        kind,
        params,
        mlp,
        in_mean,
        in_scale,
        out_mean,
        out_scale,
        held_out_rmse: vec![],
        state_params: DynamicsParams::default(),
    };
    let eval: Vec<usize> = if hold_idx.is_empty() { train_idx.to_vec() } else { hold_idx.to_vec() };
    let mut sq = vec![0.0; kind.state_dim()];
    for &i in &eval {
        let pred = step_learned(&model, &data[i].x, &data[i].u)?;
        for (j, s) in sq.iter_mut().enumerate() {
            let mut d = pred.components[j] - data[i].next.components[j];
            if kind.angle_components().contains(&j) {
                d = wrap_angle(d);
            }
            *s += d * d;
        }
    }
    model.held_out_rmse = sq.iter().map(|s| (s / eval.len() as f64).sqrt()).collect();
    Ok(model)
}

/// Next state predicted by the surrogate.
pub fn step_learned(m: &LearnedDynamics, x: &EgoState, u: &Control) -> Result<EgoState> {
    if x.kind != m.kind || u.kind != m.kind {
        return Err(Error::KindMismatch { expected: m.kind.name(), got: if x.kind != m.kind { x.kind.name() } else { u.kind.name() } });
    }
    if !x.is_finite() || u.components.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("learned-dynamics input".into()));
    }
    let f: Vec<f64> = features(x, u).iter().enumerate().map(|(j, v)| (v - m.in_mean[j]) / m.in_scale[j]).collect();
    let out = m.mlp.forward_row(&m.params, &f);
    let mut c: Vec<f64> = x
        .components
        .iter()
        .enumerate()
        .map(|(j, s)| s + out[j] * m.out_scale[j] + m.out_mean[j])
        .collect();
    normalize_state(m.kind, &mut c, &m.state_params);
    Ok(EgoState { kind: m.kind, components: c })
}

impl EgoPredictor for LearnedDynamics {
    fn kind(&self) -> DynamicsKind {
        self.kind
    }

    fn predict(&self, x: &EgoState, u: &Control) -> Result<EgoState> {
        step_learned(self, x, u)
    }
}
