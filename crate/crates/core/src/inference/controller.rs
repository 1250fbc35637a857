use std::sync::{Arc, Mutex};

use super::{
    candidate_controls, ensemble_select_traced, nominal_candidates, select_control_traced, ControllerDecision, Ensemble,
    SelectConfig, StepTrace, Tracked,
};
use crate::barrier::{BarrierModel, NominalPolicy, NonSeqBarrierModel, RelativeState};
use crate::dynamics::{planar_velocity, projected_position, Control, ControlBounds, DynamicsKind, EgoPredictor};
use crate::sim::{Controller, Decision, Observation};
use crate::{seed, Error, Result};

const CANDIDATE_TAG: u64 = 0xCA2D;

/// Obstacles within `range` of the ego, with their last `k` relative states.
pub fn tracked_obstacles(obs: &Observation<'_>, k: usize, range: f64) -> Result<Vec<Tracked>> {
    let p = obs.ego.position();
    let mut out = Vec::new();
    for (j, o) in obs.obstacles.iter().enumerate() {
        if o.position.distance(p) > range {
            continue;
        }
        let history = obs.history.window(j, k).ok_or_else(|| Error::InvalidInput("empty frame history".into()))?;
        out.push(Tracked { history, position: o.position, velocity: o.velocity });
    }
    Ok(out)
}

fn candidates(
    obs: &Observation<'_>,
    tracked: &[Tracked],
    bounds: &ControlBounds,
    l: usize,
    nominal: Option<&dyn NominalPolicy>,
) -> Result<Vec<Control>> {
    let s = seed::derive(obs.seed, CANDIDATE_TAG);
    match nominal {
        Some(p) => nominal_candidates(p, obs.ego, obs.goal, tracked, obs.dt, bounds, l, s),
        None => Ok(candidate_controls(obs.ego.kind, bounds, l, s, None)),
    }
}

pub enum BarrierSet {
    Single(BarrierModel),
    Ensemble(Ensemble),
}

impl BarrierSet {
    fn lead(&self) -> &BarrierModel {
        match self {
            BarrierSet::Single(m) => m,
            BarrierSet::Ensemble(e) => &e.members[0],
        }
    }
}

/// Sampling controller filtered by the sequential barrier model(s).
pub struct SncbfController {
    pub barrier: BarrierSet,
    pub dynamics: Arc<dyn EgoPredictor>,
    pub bounds: ControlBounds,
    pub select: SelectConfig,
    pub sensing_range: f64,
    pub nominal: Option<Arc<dyn NominalPolicy>>,
    trace: Option<Mutex<Vec<StepTrace>>>,
}

impl SncbfController {
    pub fn new(barrier: BarrierSet, dynamics: Arc<dyn EgoPredictor>, bounds: ControlBounds, select: SelectConfig) -> Result<Self> {
        let kind = barrier.lead().arch.kind;
        if dynamics.kind() != kind {
            return Err(Error::KindMismatch { expected: kind.name(), got: dynamics.kind().name() });
        }
        Ok(Self { barrier, dynamics, bounds, select, sensing_range: 5.0, nominal: None, trace: None })
    }

    pub fn with_nominal(mut self, nominal: Arc<dyn NominalPolicy>) -> Self {
        self.nominal = Some(nominal);
        self
    }

    /// Records every step; forces exhaustive candidate evaluation.
    pub fn with_trace(mut self) -> Self {
        self.select.exhaustive = true;
        self.trace = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn take_trace(&self) -> Vec<StepTrace> {
        self.trace.as_ref().map(|t| std::mem::take(&mut *t.lock().unwrap())).unwrap_or_default()
    }

    pub fn decide_full(&self, obs: &Observation<'_>) -> Result<ControllerDecision> {
        let lead = self.barrier.lead();
        let tracked = tracked_obstacles(obs, lead.arch.k, self.sensing_range)?;
        let cands = candidates(obs, &tracked, &self.bounds, self.select.candidates, self.nominal.as_deref())?;
        let (d, t) = match &self.barrier {
            BarrierSet::Single(m) => {
                select_control_traced(obs.ego, &tracked, m, self.dynamics.as_ref(), obs.goal, &cands, &self.select, obs.step)?
            }
            BarrierSet::Ensemble(e) => {
                ensemble_select_traced(obs.ego, &tracked, e, self.dynamics.as_ref(), obs.goal, &cands, &self.select, obs.step)?
            }
        };
        if let (Some(store), Some(t)) = (&self.trace, t) {
            store.lock().unwrap().push(t);
        }
        Ok(d)
    }
}

impl Controller for SncbfController {
    fn name(&self) -> String {
        match self.barrier {
            BarrierSet::Single(_) => "sncbf".into(),
            BarrierSet::Ensemble(_) => "sncbf-ensemble".into(),
        }
    }

    fn kind(&self) -> DynamicsKind {
        self.barrier.lead().arch.kind
    }

    fn decide(&self, obs: &Observation<'_>) -> Result<Decision> {
        let d = self.decide_full(obs)?;
        Ok(Decision { control: d.chosen, evaluations: d.candidates_evaluated as u64 })
    }
}

/// Same selection rule with the pooled single-frame barrier model: a
/// candidate is feasible when the one joint value is positive.
pub struct NonSeqController {
    pub model: NonSeqBarrierModel,
    pub dynamics: Arc<dyn EgoPredictor>,
    pub bounds: ControlBounds,
    pub candidates: usize,
    pub sensing_range: f64,
    pub lookahead: f64,
    pub nominal: Option<Arc<dyn NominalPolicy>>,
}

impl NonSeqController {
    pub fn new(model: NonSeqBarrierModel, dynamics: Arc<dyn EgoPredictor>, bounds: ControlBounds, candidates: usize) -> Result<Self> {
        if dynamics.kind() != model.arch.kind {
            return Err(Error::KindMismatch { expected: model.arch.kind.name(), got: dynamics.kind().name() });
        }
        Ok(Self { model, dynamics, bounds, candidates, sensing_range: 5.0, lookahead: 1.0, nominal: None })
    }
}

impl Controller for NonSeqController {
    fn name(&self) -> String {
        "nonseq-cbf".into()
    }

    fn kind(&self) -> DynamicsKind {
        self.model.arch.kind
    }

    fn decide(&self, obs: &Observation<'_>) -> Result<Decision> {
        let tracked = tracked_obstacles(obs, 1, self.sensing_range)?;
        let cands = candidates(obs, &tracked, &self.bounds, self.candidates, self.nominal.as_deref())?;
        let nexts = cands.iter().map(|u| self.dynamics.predict(obs.ego, u)).collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..cands.len()).collect();
        let score = |i: usize| -projected_position(obs.ego, &nexts[i], obs.dt, self.lookahead).distance(obs.goal);
        order.sort_by(|&a, &b| score(b).total_cmp(&score(a)));
        for (n, &i) in order.iter().enumerate() {
            let v = planar_velocity(Some(obs.ego), &nexts[i], obs.dt);
            let rels: Vec<RelativeState> = tracked
                .iter()
                .map(|t| RelativeState::between(nexts[i].position(), v, t.position + t.velocity * obs.dt, t.velocity))
                .collect();
            if self.model.value(&nexts[i], &rels)? > 0.0 {
                return Ok(Decision::act(cands[i].clone(), n as u64 + 1));
            }
        }
        Ok(Decision::stop(cands.len() as u64))
    }
}
