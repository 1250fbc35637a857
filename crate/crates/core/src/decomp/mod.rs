//! Obstacle next-state prediction at increasing crowd density: a
//! collective set model against per-obstacle sequence models with and
//! without a nearest-neighbor feature.

mod predictor;

pub use predictor::{train_predictor, PredictorConfig, PredictorKind, PredictorModel};

use std::io::Write;

use crate::exec::{self, Execution};
use crate::fmt::sig9;
use crate::geom::Vec2;
use crate::sim::orca::{orca_step, OrcaParams};
use crate::sim::{resample_goals, spawn_scenario, ObstacleState, Scenario};
use crate::dynamics::DynamicsKind;
use crate::{seed, Error, Result};

/// Crowd-only rollout: `frames[t][j]` is obstacle j at step t.
#[derive(Clone, Debug, PartialEq)]
pub struct CrowdRollout {
    pub frames: Vec<Vec<ObstacleState>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrowdConfig {
    pub arena_half_extent: f64,
    pub dt: f64,
    /// Frames recorded per rollout.
    pub frames: usize,
    pub orca: OrcaParams,
}

impl Default for CrowdConfig {
    fn default() -> Self {
        Self { arena_half_extent: 10.0, dt: 0.1, frames: 200, orca: OrcaParams::default() }
    }
}

/// ORCA crowd of `density` pedestrians, no ego.
pub fn simulate_crowd(density: usize, cfg: &CrowdConfig, seed_value: u64) -> Result<CrowdRollout> {
    let mut sc = Scenario::new(DynamicsKind::SingleIntegrator, density, seed_value);
    sc.arena_half_extent = cfg.arena_half_extent;
    sc.dt = cfg.dt;
    sc.orca = cfg.orca;
    let mut obstacles = spawn_scenario(&sc)?.obstacles;
    let mut goal_rng = seed::rng(seed::derive(seed_value, 0x60A1));
    let mut frames = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        if t > 0 {
            obstacles = orca_step(&obstacles, cfg.dt, &cfg.orca).obstacles;
            resample_goals(&mut obstacles, cfg.arena_half_extent, &mut goal_rng);
        }
        frames.push(obstacles.clone());
    }
    Ok(CrowdRollout { frames })
}

/// All obstacles over `k` consecutive frames plus their true next state.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub window: Vec<Vec<ObstacleState>>,
    pub next: Vec<(Vec2, Vec2)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecompDataset {
    pub k: usize,
    pub dt: f64,
    pub scenes: Vec<SceneSample>,
}

impl DecompDataset {
    /// Per-obstacle (window, next) pairs.
    pub fn pair_count(&self) -> usize {
        self.scenes.iter().map(|s| s.next.len()).sum()
    }
}

/// Every window of `k` frames that has a successor frame.
pub fn scenes_of(r: &CrowdRollout, k: usize) -> Vec<SceneSample> {
    if k == 0 || r.frames.len() <= k {
        return vec![];
    }
    (k - 1..r.frames.len() - 1)
        .map(|t| SceneSample {
            window: r.frames[t + 1 - k..=t].to_vec(),
            next: r.frames[t + 1].iter().map(|o| (o.position, o.velocity)).collect(),
        })
        .collect()
}

/// Windows of `n_rollouts` crowd rollouts at the given density.
pub fn build_training_set(density: usize, n_rollouts: usize, k: usize, cfg: &CrowdConfig, seed_value: u64, ex: Execution) -> Result<DecompDataset> {
    if k == 0 {
        return Err(Error::InvalidInput("window length must be at least 1".into()));
    }
    let rollouts = exec::map_range(ex, n_rollouts, |i| simulate_crowd(density, cfg, seed::derive(seed_value, i as u64)));
    let mut scenes = Vec::new();
    for r in rollouts {
        scenes.extend(scenes_of(&r?, k));
    }
    Ok(DecompDataset { k, dt: cfg.dt, scenes })
}

/// Predicts every obstacle's next (position, velocity) from the last `k`
/// frames of the crowd.
pub trait FramePredictor: Send + Sync {
    fn name(&self) -> String;
    fn window(&self) -> usize;
    fn predict_scene(&self, window: &[Vec<ObstacleState>]) -> Result<Vec<(Vec2, Vec2)>>;
}

/// The crowd simulator itself, as a reference predictor.
pub struct SimulatorOracle {
    pub dt: f64,
    pub orca: OrcaParams,
}

impl FramePredictor for SimulatorOracle {
    fn name(&self) -> String {
        "simulator".into()
    }

    fn window(&self) -> usize {
        1
    }

    fn predict_scene(&self, window: &[Vec<ObstacleState>]) -> Result<Vec<(Vec2, Vec2)>> {
        let last = window.last().ok_or_else(|| Error::InvalidInput("empty window".into()))?;
        Ok(orca_step(last, self.dt, &self.orca).obstacles.iter().map(|o| (o.position, o.velocity)).collect())
    }
}

/// Max-norm and L2 errors over the 4-vector (position, velocity).
pub fn state_errors(pred: (Vec2, Vec2), truth: (Vec2, Vec2)) -> (f64, f64) {
    let d = [pred.0.x - truth.0.x, pred.0.y - truth.0.y, pred.1.x - truth.1.x, pred.1.y - truth.1.y];
    let max = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let l2 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    (max, l2)
}

/// Empirical quantile (nearest rank) of `values`; 0 for an empty list.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorStats {
    pub mean_l2: f64,
    pub mean_maxnorm: f64,
    pub eps95: f64,
    pub samples: usize,
}

impl ErrorStats {
    pub fn from_errors(maxnorm: &[f64], l2: &[f64]) -> Self {
        let n = maxnorm.len().max(1) as f64;
        Self {
            mean_l2: l2.iter().sum::<f64>() / n,
            mean_maxnorm: maxnorm.iter().sum::<f64>() / n,
            eps95: quantile(maxnorm, 0.95),
            samples: maxnorm.len(),
        }
    }
}

/// One-step errors of `p` on every scene.
pub fn scene_errors(p: &dyn FramePredictor, scenes: &[SceneSample]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut mx, mut l2) = (Vec::new(), Vec::new());
    for s in scenes {
        let w = p.window().min(s.window.len());
        let pred = p.predict_scene(&s.window[s.window.len() - w..])?;
        if pred.len() != s.next.len() {
            return Err(Error::InvalidInput(format!("predictor returned {} states for {} obstacles", pred.len(), s.next.len())));
        }
        for (a, b) in pred.iter().zip(&s.next) {
            let (m, l) = state_errors(*a, *b);
            mx.push(m);
            l2.push(l);
        }
    }
    Ok((mx, l2))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecompRow {
    pub kind: String,
    pub density: usize,
    pub stats: ErrorStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecompEvalReport {
    pub densities: Vec<usize>,
    pub rows: Vec<DecompRow>,
}

impl DecompEvalReport {
    pub fn get(&self, kind: &str, density: usize) -> Option<&ErrorStats> {
        self.rows.iter().find(|r| r.kind == kind && r.density == density).map(|r| &r.stats)
    }
}

/// Fresh rollouts per density; every predictor is scored on the same scenes.
pub fn evaluate_generalization(
    predictors: &[&dyn FramePredictor],
    densities: &[usize],
    episodes: usize,
    cfg: &CrowdConfig,
    seed_value: u64,
    ex: Execution,
) -> Result<DecompEvalReport> {
    let k = predictors.iter().map(|p| p.window()).max().unwrap_or(1);
    let mut rows = Vec::new();
    for &d in densities {
        let data = build_training_set(d, episodes, k, cfg, seed::derive(seed_value, d as u64), ex)?;
        let per: Vec<Result<(Vec<f64>, Vec<f64>)>> = exec::map(ex, predictors, |p| scene_errors(*p, &data.scenes));
        for (p, e) in predictors.iter().zip(per) {
            let (mx, l2) = e?;
            rows.push(DecompRow { kind: p.name(), density: d, stats: ErrorStats::from_errors(&mx, &l2) });
        }
    }
    Ok(DecompEvalReport { densities: densities.to_vec(), rows })
}

pub fn write_report_csv<W: Write>(w: W, report: &DecompEvalReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["kind", "density", "mean_l2", "mean_maxnorm", "eps95"])?;
    for r in &report.rows {
        out.write_record([r.kind.clone(), r.density.to_string(), sig9(r.stats.mean_l2), sig9(r.stats.mean_maxnorm), sig9(r.stats.eps95)])?;
    }
    out.flush()?;
    Ok(())
}
