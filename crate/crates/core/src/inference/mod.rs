//! Online control selection: per-obstacle barrier values are clipped and
//! multiplied into one safety score, and sampled controls are tried in
//! order of goal progress until one keeps the score positive.

mod controller;
mod trace;

pub use controller::{tracked_obstacles, BarrierSet, NonSeqController, SncbfController};
pub use trace::{write_trace_csv, CandidateTrace, StepTrace};

use crate::barrier::{BarrierModel, HistoryPrefix, NominalPolicy, ObstacleHistory, RelativeState};
use crate::dynamics::{planar_velocity, projected_position, sample_controls, Control, ControlBounds, DynamicsKind, EgoPredictor, EgoState};
use crate::exec::{self, Execution};
use crate::geom::Vec2;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregationConfig {
    /// Clip level b; values at or above it count as fully safe.
    pub b: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self { b: 0.5 }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::InvalidInput(format!("clip level must be positive, got {}", self.b)));
        }
        Ok(())
    }

    fn factor(&self, v: f64) -> f64 {
        (v.min(self.b) / self.b).max(0.0)
    }
}

/// Π max(min(Bᵢ, b)/b, 0); 1 for an empty list.
pub fn aggregate(values: &[f64], cfg: &AggregationConfig) -> f64 {
    values.iter().map(|&v| cfg.factor(v)).product()
}

/// Drops the oldest step and appends `next`.
pub fn advance_history(h: &ObstacleHistory, next: RelativeState) -> ObstacleHistory {
    h.advance(next)
}

/// An obstacle in sensing range: its relative history and current
/// absolute state (for extrapolating one step ahead).
#[derive(Clone, Debug, PartialEq)]
pub struct Tracked {
    pub history: ObstacleHistory,
    pub position: Vec2,
    pub velocity: Vec2,
}

impl Tracked {
    /// Relative state after the ego moves from `x` to `next`, with the
    /// obstacle extrapolated at constant velocity.
    pub fn successor(&self, x: &EgoState, next: &EgoState, dt: f64) -> RelativeState {
        let v = planar_velocity(Some(x), next, dt);
        RelativeState::between(next.position(), v, self.position + self.velocity * dt, self.velocity)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleMode {
    /// Mean of the members' aggregated values must be positive.
    MeanPositive,
    /// Every member's aggregated value must be positive.
    AllPositive,
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    pub members: Vec<BarrierModel>,
    /// Bound on the across-member variance of clipped per-obstacle values.
    pub variance_threshold: f64,
    pub mode: EnsembleMode,
}

impl Ensemble {
    pub fn new(members: Vec<BarrierModel>, variance_threshold: f64, mode: EnsembleMode) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidInput(format!("an ensemble needs at least 2 members, got {}", members.len())));
        }
        if members.iter().any(|m| m.arch != members[0].arch || m.hyper != members[0].hyper) {
            return Err(Error::InvalidInput("ensemble members differ in architecture".into()));
        }
        if !(variance_threshold >= 0.0) {
            return Err(Error::InvalidInput(format!("variance threshold must be non-negative, got {variance_threshold}")));
        }
        Ok(Self { members, variance_threshold, mode })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectConfig {
    pub aggregation: AggregationConfig,
    /// Sampled candidates l.
    pub candidates: usize,
    /// Evaluate every candidate instead of stopping at the first feasible.
    pub exhaustive: bool,
    /// Seconds of constant-velocity extrapolation in the goal-progress score.
    pub lookahead: f64,
    pub exec: Execution,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self { aggregation: AggregationConfig::default(), candidates: 64, exhaustive: false, lookahead: 1.0, exec: Execution::Sequential }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerDecision {
    pub chosen: Option<Control>,
    /// Position of the chosen control in the candidate list.
    pub chosen_index: Option<usize>,
    pub candidates_evaluated: usize,
    /// Feasible candidates among those evaluated.
    pub feasible_count: usize,
}

/// `l` uniform samples; when given, the nominal control takes the last slot.
pub fn candidate_controls(kind: DynamicsKind, bounds: &ControlBounds, l: usize, seed: u64, nominal: Option<Control>) -> Vec<Control> {
    let mut c = sample_controls(kind, bounds, l, seed);
    if let (Some(mut u), Some(last)) = (nominal, c.last_mut()) {
        bounds.clamp(&mut u);
        *last = u;
    }
    c
}

/// Convenience: candidates from a nominal policy's suggestion plus samples.
pub fn nominal_candidates(
    policy: &dyn NominalPolicy,
    x: &EgoState,
    goal: Vec2,
    tracked: &[Tracked],
    dt: f64,
    bounds: &ControlBounds,
    l: usize,
    seed: u64,
) -> Result<Vec<Control>> {
    let next: Vec<Vec2> = tracked.iter().map(|t| t.position + t.velocity * dt).collect();
    let u = policy.nominal(x, goal, &next, crate::seed::derive(seed, 0x70A1))?;
    Ok(candidate_controls(x.kind, bounds, l, seed, Some(u)))
}

struct Verdict {
    values: Vec<f64>,
    aggregated: f64,
    feasible: bool,
}

/// Members evaluated together; a single model is a one-member ensemble
/// with no variance gate.
struct Judge<'a> {
    members: &'a [BarrierModel],
    threshold: f64,
    mode: EnsembleMode,
    agg: AggregationConfig,
    /// `prefixes[member][obstacle]` over the k-1 retained steps.
    prefixes: Vec<Vec<HistoryPrefix>>,
}

impl<'a> Judge<'a> {
    fn new(members: &'a [BarrierModel], threshold: f64, mode: EnsembleMode, agg: AggregationConfig, tracked: &[Tracked]) -> Result<Self> {
        agg.validate()?;
        let k = members[0].arch.k;
        for t in tracked {
            if t.history.k() != k {
                return Err(Error::InvalidInput(format!("history length {} does not match model k = {k}", t.history.k())));
            }
        }
        let prefixes = members.iter().map(|m| tracked.iter().map(|t| m.prefix(&t.history.steps()[1..])).collect()).collect();
        Ok(Self { members, threshold, mode, agg, prefixes })
    }

    fn judge(&self, next: &EgoState, rels: &[RelativeState], lazy: bool) -> Verdict {
        let n = self.members.len();
        if n == 1 {
            let m = &self.members[0];
            let ego = m.head_ego_part(next);
            let mut values = Vec::with_capacity(rels.len());
            let mut aggregated = 1.0;
            for (j, r) in rels.iter().enumerate() {
                let v = m.value_from_parts(&self.prefixes[0][j], r, &ego);
                values.push(v);
                aggregated *= self.agg.factor(v);
                if lazy && aggregated == 0.0 {
                    break;
                }
            }
            return Verdict { values, aggregated, feasible: aggregated > 0.0 };
        }
        let per: Vec<Vec<f64>> = self
            .members
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let ego = m.head_ego_part(next);
                rels.iter().enumerate().map(|(j, r)| m.value_from_parts(&self.prefixes[i][j], r, &ego)).collect()
            })
            .collect();
        let aggs: Vec<f64> = per.iter().map(|v| aggregate(v, &self.agg)).collect();
        let mean_agg = aggs.iter().sum::<f64>() / n as f64;
        let mut max_var: f64 = 0.0;
        let mut values = Vec::with_capacity(rels.len());
        for j in 0..rels.len() {
            // Offsets from the first member, so agreement gives exactly 0.
            let c0 = per[0][j].min(self.agg.b);
            let d: Vec<f64> = per.iter().map(|v| v[j].min(self.agg.b) - c0).collect();
            let mean = d.iter().sum::<f64>() / n as f64;
            let var = (d.iter().map(|x| x * x).sum::<f64>() / n as f64 - mean * mean).max(0.0);
            max_var = max_var.max(var);
            values.push(per.iter().map(|v| v[j]).sum::<f64>() / n as f64);
        }
        let positive = match self.mode {
            EnsembleMode::MeanPositive => mean_agg > 0.0,
            EnsembleMode::AllPositive => aggs.iter().all(|&a| a > 0.0),
        };
        Verdict { values, aggregated: mean_agg, feasible: positive && max_var <= self.threshold }
    }
}

fn check_kinds(x: &EgoState, model: &BarrierModel, dynamics: &dyn EgoPredictor) -> Result<()> {
    let kind = model.arch.kind;
    for got in [x.kind, dynamics.kind()] {
        if got != kind {
            return Err(Error::KindMismatch { expected: kind.name(), got: got.name() });
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn select_with(
    judge: &Judge<'_>,
    x: &EgoState,
    tracked: &[Tracked],
    dynamics: &dyn EgoPredictor,
    goal: Vec2,
    candidates: &[Control],
    cfg: &SelectConfig,
    step: usize,
) -> Result<(ControllerDecision, Option<StepTrace>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidate controls".into()));
    }
    let dt = judge.members[0].hyper.dt;
    let nexts: Vec<EgoState> = candidates.iter().map(|u| dynamics.predict(x, u)).collect::<Result<_>>()?;
    let scores: Vec<f64> = nexts.iter().map(|n| -projected_position(x, n, dt, cfg.lookahead).distance(goal)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let rels = |i: usize| -> Vec<RelativeState> { tracked.iter().map(|t| t.successor(x, &nexts[i], dt)).collect() };

    if cfg.exhaustive {
        let verdicts: Vec<Verdict> = exec::map_range(cfg.exec, candidates.len(), |i| judge.judge(&nexts[i], &rels(i), false));
        let chosen_index = order.iter().copied().find(|&i| verdicts[i].feasible);
        let decision = ControllerDecision {
            chosen: chosen_index.map(|i| candidates[i].clone()),
            chosen_index,
            candidates_evaluated: candidates.len(),
            feasible_count: verdicts.iter().filter(|v| v.feasible).count(),
        };
        let trace = StepTrace {
            step,
            candidates: verdicts
                .into_iter()
                .enumerate()
                .map(|(i, v)| CandidateTrace {
                    control: candidates[i].clone(),
                    score: scores[i],
                    values: v.values,
                    aggregated: v.aggregated,
                    feasible: v.feasible,
                })
                .collect(),
            chosen: chosen_index,
        };
        return Ok((decision, Some(trace)));
    }
    for (n, &i) in order.iter().enumerate() {
        if judge.judge(&nexts[i], &rels(i), true).feasible {
            let d = ControllerDecision { chosen: Some(candidates[i].clone()), chosen_index: Some(i), candidates_evaluated: n + 1, feasible_count: 1 };
            return Ok((d, None));
        }
    }
    Ok((ControllerDecision { chosen: None, chosen_index: None, candidates_evaluated: candidates.len(), feasible_count: 0 }, None))
}

/// Tries `candidates` in descending goal progress and returns the first
/// whose successor keeps the aggregated barrier value positive.
pub fn select_control(
    x: &EgoState,
    tracked: &[Tracked],
    model: &BarrierModel,
    dynamics: &dyn EgoPredictor,
    goal: Vec2,
    candidates: &[Control],
    cfg: &SelectConfig,
) -> Result<ControllerDecision> {
    select_control_traced(x, tracked, model, dynamics, goal, candidates, cfg, 0).map(|(d, _)| d)
}

#[allow(clippy::too_many_arguments)]
pub fn select_control_traced(
    x: &EgoState,
    tracked: &[Tracked],
    model: &BarrierModel,
    dynamics: &dyn EgoPredictor,
    goal: Vec2,
    candidates: &[Control],
    cfg: &SelectConfig,
    step: usize,
) -> Result<(ControllerDecision, Option<StepTrace>)> {
    check_kinds(x, model, dynamics)?;
    let judge = Judge::new(std::slice::from_ref(model), f64::INFINITY, EnsembleMode::MeanPositive, cfg.aggregation, tracked)?;
    select_with(&judge, x, tracked, dynamics, goal, candidates, cfg, step)
}

/// As [`select_control`], additionally rejecting candidates on which the
/// members disagree by more than the variance threshold.
pub fn ensemble_select(
    x: &EgoState,
    tracked: &[Tracked],
    ens: &Ensemble,
    dynamics: &dyn EgoPredictor,
    goal: Vec2,
    candidates: &[Control],
    cfg: &SelectConfig,
) -> Result<ControllerDecision> {
    ensemble_select_traced(x, tracked, ens, dynamics, goal, candidates, cfg, 0).map(|(d, _)| d)
}

#[allow(clippy::too_many_arguments)]
pub fn ensemble_select_traced(
    x: &EgoState,
    tracked: &[Tracked],
    ens: &Ensemble,
    dynamics: &dyn EgoPredictor,
    goal: Vec2,
    candidates: &[Control],
    cfg: &SelectConfig,
    step: usize,
) -> Result<(ControllerDecision, Option<StepTrace>)> {
    check_kinds(x, &ens.members[0], dynamics)?;
    let judge = Judge::new(&ens.members, ens.variance_threshold, ens.mode, cfg.aggregation, tracked)?;
    select_with(&judge, x, tracked, dynamics, goal, candidates, cfg, step)
}
