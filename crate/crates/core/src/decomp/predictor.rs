use diffcomp::{Activation, Adam, AdamConfig, Graph, Lstm, LstmSpec, Mlp, MlpSpec, ParamBundle, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{scene_errors, DecompDataset, ErrorStats, FramePredictor, SceneSample};
use crate::geom::Vec2;
use crate::sim::ObstacleState;
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredictorKind {
    /// Set encoder over all obstacles' absolute windows.
    CoSM,
    /// Per-obstacle sequence model on the obstacle's own window.
    CSM,
    /// CSM plus the nearest neighbor's relative state at each step.
    ICSM,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 3] = [PredictorKind::CoSM, PredictorKind::CSM, PredictorKind::ICSM];

    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::CoSM => "CoSM",
            PredictorKind::CSM => "CSM",
            PredictorKind::ICSM => "ICSM",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }

    fn step_width(self) -> usize {
        match self {
            PredictorKind::ICSM => 8,
            _ => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub k: usize,
    pub hidden: usize,
    pub head: Vec<usize>,
    pub iterations: usize,
    /// Obstacle rows per minibatch.
    pub batch: usize,
    pub lr: f64,
    pub holdout_fraction: f64,
    /// Neighbor offsets are shortened to at most this length.
    pub neighbor_range: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self { k: 5, hidden: 64, head: vec![64], iterations: 1500, batch: 64, lr: 3e-3, holdout_fraction: 0.1, neighbor_range: 5.0, dt: 0.1, seed: 0 }
    }
}

#[derive(Clone, Debug)]
enum Net {
    Seq { lstm: Lstm, head: Mlp },
    Collective { enc: Mlp, dec: Mlp },
}

#[derive(Clone, Debug)]
pub struct PredictorModel {
    pub kind: PredictorKind,
    pub cfg: PredictorConfig,
    pub params: ParamBundle,
    net: Net,
    pub in_mean: Vec<f64>,
    pub in_scale: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_scale: Vec<f64>,
    pub held_out: Option<ErrorStats>,
}

fn input_width(kind: PredictorKind, k: usize) -> usize {
    match kind {
        PredictorKind::CoSM => 4 * k,
        _ => kind.step_width(),
    }
}

impl PredictorModel {
    /// Freshly initialized network with identity normalization.
    pub fn new(kind: PredictorKind, cfg: &PredictorConfig) -> Result<Self> {
        if cfg.k == 0 || cfg.hidden == 0 {
            return Err(Error::InvalidInput("predictor window and width must be positive".into()));
        }
        let mut rng = seed::rng(cfg.seed);
        let mut params = ParamBundle::new();
        let tail = |first: usize| {
            let mut w = vec![first];
            w.extend_from_slice(&cfg.head);
            w.push(4);
            MlpSpec::new(w, Activation::Tanh)
        };
        let net = match kind {
            PredictorKind::CoSM => {
                let enc = Mlp::init(MlpSpec::new(vec![4 * cfg.k, cfg.hidden, cfg.hidden], Activation::Tanh)?, "enc", &mut params, &mut rng)?;
                let dec = Mlp::init(tail(4 * cfg.k + cfg.hidden)?, "dec", &mut params, &mut rng)?;
                Net::Collective { enc, dec }
            }
            _ => {
                let lstm = Lstm::init(LstmSpec { input: kind.step_width(), hidden: cfg.hidden }, "lstm", &mut params, &mut rng)?;
                let head = Mlp::init(tail(cfg.hidden)?, "head", &mut params, &mut rng)?;
                Net::Seq { lstm, head }
            }
        };
        let w = input_width(kind, cfg.k);
        Ok(Self {
            kind,
            cfg: cfg.clone(),
            params,
            net,
            in_mean: vec![0.0; w],
            in_scale: vec![1.0; w],
            out_mean: vec![0.0; 4],
            out_scale: vec![1.0; 4],
            held_out: None,
        })
    }

    /// Raw per-step features of obstacle `i` (sequence kinds) or its
    /// flattened absolute window (collective kind).
    fn raw_inputs(&self, window: &[Vec<ObstacleState>], i: usize) -> Vec<Vec<f64>> {
        let last = window[window.len() - 1][i].position;
        match self.kind {
            PredictorKind::CoSM => {
                vec![window.iter().flat_map(|f| [f[i].position.x, f[i].position.y, f[i].velocity.x, f[i].velocity.y]).collect()]
            }
            _ => window
                .iter()
                .map(|f| {
                    let o = &f[i];
                    let rel = o.position - last;
                    let mut v = vec![rel.x, rel.y, o.velocity.x, o.velocity.y];
                    if self.kind == PredictorKind::ICSM {
                        let nb = f
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != i)
                            .min_by(|a, b| a.1.position.distance(o.position).total_cmp(&b.1.position.distance(o.position)));
                        match nb {
                            Some((_, n)) => {
                                let mut d = n.position - o.position;
                                if d.norm() > self.cfg.neighbor_range {
                                    d = d.normalized() * self.cfg.neighbor_range;
                                }
                                let dv = n.velocity - o.velocity;
                                v.extend([d.x, d.y, dv.x, dv.y]);
                            }
                            None => v.extend([0.0; 4]),
                        }
                    }
                    v
                })
                .collect(),
        }
    }

    fn standardize(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(j, x)| (x - self.in_mean[j]) / self.in_scale[j]).collect()
    }

    /// Standardized input tensors for `rows = (window, obstacle)`:
    /// k step tensors for sequence kinds, one matrix for the collective kind.
    fn inputs(&self, rows: &[(&[Vec<ObstacleState>], usize)]) -> Result<Vec<Tensor>> {
        let raw: Vec<Vec<Vec<f64>>> =
            rows.iter().map(|(w, i)| self.raw_inputs(w, *i).iter().map(|s| self.standardize(s)).collect()).collect();
        let steps = raw[0].len();
        (0..steps).map(|t| Tensor::from_rows(&raw.iter().map(|r| r[t].as_slice()).collect::<Vec<_>>())).map(|r| r.map_err(Into::into)).collect()
    }

    fn trace(&self, g: &mut Graph<'_>, inputs: &[Tensor], groups: &[usize]) -> Result<diffcomp::NodeId> {
        let nodes: Vec<_> = inputs.iter().map(|t| g.input(t.clone())).collect();
        match &self.net {
            Net::Seq { lstm, head } => {
                let h = lstm.trace(g, &nodes)?;
                Ok(head.trace(g, h)?)
            }
            Net::Collective { enc, dec } => {
                let x = nodes[0];
                let e = enc.trace(g, x)?;
                let mut offsets = vec![0];
                let mut member = Vec::new();
                for (gi, &n) in groups.iter().enumerate() {
                    offsets.push(offsets.last().unwrap() + n);
                    member.extend(std::iter::repeat_n(gi, n));
                }
                let pooled = g.mean_pool_groups(e, &offsets)?;
                let ctx = g.gather_rows(pooled, &member)?;
                let joined = g.concat_cols(&[x, ctx])?;
                Ok(dec.trace(g, joined)?)
            }
        }
    }

    fn decode(&self, last: &ObstacleState, out: &[f64]) -> (Vec2, Vec2) {
        let o: Vec<f64> = out.iter().enumerate().map(|(j, v)| v * self.out_scale[j] + self.out_mean[j]).collect();
        let v = last.velocity;
        (last.position + (v + Vec2::new(o[0], o[1])) * self.cfg.dt, v + Vec2::new(o[2], o[3]))
    }
}

/// Residual of the next state over constant-velocity extrapolation.
fn target(s: &SceneSample, i: usize, dt: f64) -> [f64; 4] {
    let last = &s.window[s.window.len() - 1][i];
    let (p, v) = s.next[i];
    let d = (p - last.position) * (1.0 / dt) - last.velocity;
    let dv = v - last.velocity;
    [d.x, d.y, dv.x, dv.y]
}

fn moments(rows: impl Iterator<Item = Vec<f64>>, w: usize) -> (Vec<f64>, Vec<f64>) {
    let (mut n, mut s, mut s2) = (0.0, vec![0.0; w], vec![0.0; w]);
    for r in rows {
        n += 1.0;
        for j in 0..w {
            s[j] += r[j];
            s2[j] += r[j] * r[j];
        }
    }
    let n = f64::max(n, 1.0);
    let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
    let scale = (0..w)
        .map(|j| {
            let var = (s2[j] / n - mean[j] * mean[j]).max(0.0);
            if var.sqrt() < 1e-8 { 1.0 } else { var.sqrt() }
        })
        .collect();
    (mean, scale)
}

/// Adam on the mean squared error of standardized next-state targets.
pub fn train_predictor(kind: PredictorKind, data: &DecompDataset, cfg: &PredictorConfig) -> Result<PredictorModel> {
    let mut m = PredictorModel::new(kind, cfg)?;
    if data.k != cfg.k {
        return Err(Error::Dataset(format!("dataset window {} does not match predictor window {}", data.k, cfg.k)));
    }
    if data.scenes.len() < 2 {
        return Err(Error::Dataset("need at least two scenes".into()));
    }
    let mut rng = seed::rng(seed::derive(cfg.seed, 0xDEC0));
    let mut order: Vec<usize> = (0..data.scenes.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = ((data.scenes.len() as f64 * cfg.holdout_fraction).round() as usize).clamp(1, data.scenes.len() - 1);
    let (hold, train) = order.split_at(n_hold);
    let scenes: Vec<&SceneSample> = train.iter().map(|&i| &data.scenes[i]).collect();
    let rows: Vec<(usize, usize)> = scenes.iter().enumerate().flat_map(|(s, sc)| (0..sc.next.len()).map(move |i| (s, i))).collect();
    if rows.is_empty() {
        return Err(Error::Dataset("no obstacles in training scenes".into()));
    }

    let w = input_width(kind, cfg.k);
    (m.in_mean, m.in_scale) = moments(rows.iter().flat_map(|&(s, i)| m.raw_inputs(&scenes[s].window, i)), w);
    (m.out_mean, m.out_scale) = moments(rows.iter().map(|&(s, i)| target(scenes[s], i, cfg.dt).to_vec()), 4);

    let mut adam = Adam::new(&m.params, AdamConfig { lr: cfg.lr, ..Default::default() });
    for it in 0..cfg.iterations {
        adam.config.lr = cfg.lr * (1.0 - 0.9 * it as f64 / cfg.iterations as f64);
        // Collective batches are whole scenes; sequence batches are rows.
        let (batch_rows, groups): (Vec<(usize, usize)>, Vec<usize>) = match kind {
            PredictorKind::CoSM => {
                let (mut br, mut gs) = (Vec::new(), Vec::new());
                while br.len() < cfg.batch.max(1) {
                    let s = rng.random_range(0..scenes.len());
                    let n = scenes[s].next.len();
                    br.extend((0..n).map(|i| (s, i)));
                    gs.push(n);
                }
                (br, gs)
            }
            _ => ((0..cfg.batch.max(1)).map(|_| rows[rng.random_range(0..rows.len())]).collect(), vec![]),
        };
        let keyed: Vec<(&[Vec<ObstacleState>], usize)> = batch_rows.iter().map(|&(s, i)| (scenes[s].window.as_slice(), i)).collect();
        let inputs = m.inputs(&keyed)?;
        let ys: Vec<Vec<f64>> = batch_rows
            .iter()
            .map(|&(s, i)| target(scenes[s], i, cfg.dt).iter().enumerate().map(|(j, v)| (v - m.out_mean[j]) / m.out_scale[j]).collect())
            .collect();
        let yt = Tensor::from_rows(&ys)?;
        let grads = {
            let mut g = Graph::new(&m.params);
            let pred = m.trace(&mut g, &inputs, &groups)?;
            let y = g.input(yt);
            let d = g.sub(pred, y)?;
            let sq = g.square(d);
            let loss = g.mean(sq);
            if !g.value(loss).item().is_finite() {
                return Err(Error::NonFinite(format!("{} predictor loss at iteration {it}", kind.name())));
            }
            g.backward(loss)?
        };
        adam.step(&mut m.params, &grads)?;
    }
    let held: Vec<SceneSample> = hold.iter().map(|&i| data.scenes[i].clone()).collect();
    let (mx, l2) = scene_errors(&m, &held)?;
    m.held_out = Some(ErrorStats::from_errors(&mx, &l2));
    Ok(m)
}

impl FramePredictor for PredictorModel {
    fn name(&self) -> String {
        self.kind.name().into()
    }

    fn window(&self) -> usize {
        self.cfg.k
    }

    fn predict_scene(&self, window: &[Vec<ObstacleState>]) -> Result<Vec<(Vec2, Vec2)>> {
        if window.len() != self.cfg.k {
            return Err(Error::InvalidInput(format!("window of {} frames, model expects {}", window.len(), self.cfg.k)));
        }
        let m = window[0].len();
        if window.iter().any(|f| f.len() != m) {
            return Err(Error::InvalidInput("obstacle count changes within the window".into()));
        }
        if m == 0 {
            return Ok(vec![]);
        }
        let rows: Vec<(&[Vec<ObstacleState>], usize)> = (0..m).map(|i| (window, i)).collect();
        let inputs = self.inputs(&rows)?;
        let out = match &self.net {
            Net::Seq { lstm, head } => {
                let h = lstm.forward(&self.params, &inputs)?;
                head.forward(&self.params, &h)?
            }
            Net::Collective { enc, dec } => {
                let e = enc.forward(&self.params, &inputs[0])?;
                let width = e.cols();
                let mut ctx = vec![0.0; width];
                for r in 0..m {
                    for (c, v) in ctx.iter_mut().zip(e.row(r)) {
                        *c += v / m as f64;
                    }
                }
                let joined: Vec<Vec<f64>> = (0..m).map(|r| inputs[0].row(r).iter().chain(&ctx).copied().collect()).collect();
                dec.forward(&self.params, &Tensor::from_rows(&joined)?)?
            }
        };
        let last = &window[window.len() - 1];
        Ok((0..m).map(|i| self.decode(&last[i], out.row(i))).collect())
    }
}
