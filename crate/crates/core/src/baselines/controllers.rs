use std::sync::Arc;

use super::{gpfm_control, smpc_control, spfm_control, GpfmConfig, PotentialFieldParams, SmpcConfig};
use crate::barrier::NominalPolicy;
use crate::dynamics::{Control, ControlBounds, DynamicsKind, DynamicsParams, EgoPredictor, EgoState};
use crate::geom::Vec2;
use crate::sim::{Controller, Decision, Observation};
use crate::Result;

fn next_positions(obs: &Observation<'_>) -> Vec<Vec2> {
    obs.obstacles.iter().map(|o| o.position + o.velocity * obs.dt).collect()
}

/// Sampled potential-field controller; also serves as the nominal policy.
pub struct SpfmController {
    pub field: PotentialFieldParams,
    pub predictor: Arc<dyn EgoPredictor>,
    pub bounds: ControlBounds,
    pub samples: usize,
}

impl Controller for SpfmController {
    fn name(&self) -> String {
        "spfm".into()
    }

    fn kind(&self) -> DynamicsKind {
        self.predictor.kind()
    }

    fn decide(&self, obs: &Observation<'_>) -> Result<Decision> {
        let u = spfm_control(obs.ego, obs.goal, &next_positions(obs), &self.field, &self.bounds, self.samples, self.predictor.as_ref(), obs.seed)?;
        Ok(Decision::act(u, self.samples as u64))
    }
}

/// S-PFM as a nominal policy for boundary refinement and candidate injection.
pub struct SpfmNominal(pub SpfmController);

impl NominalPolicy for SpfmNominal {
    fn nominal(&self, x: &EgoState, goal: Vec2, obstacles_next: &[Vec2], seed: u64) -> Result<Control> {
        let c = &self.0;
        spfm_control(x, goal, obstacles_next, &c.field, &c.bounds, c.samples, c.predictor.as_ref(), seed)
    }
}

/// Gradient potential-field controller on the true dynamics.
pub struct GpfmController {
    pub kind: DynamicsKind,
    pub cfg: GpfmConfig,
    pub bounds: ControlBounds,
    pub dynamics: DynamicsParams,
}

impl Controller for GpfmController {
    fn name(&self) -> String {
        "gpfm".into()
    }

    fn kind(&self) -> DynamicsKind {
        self.kind
    }

    fn decide(&self, obs: &Observation<'_>) -> Result<Decision> {
        let u = gpfm_control(obs.ego, obs.goal, &next_positions(obs), &self.cfg, &self.bounds, &self.dynamics, obs.dt)?;
        Ok(Decision::act(u, 1))
    }
}

/// Tree MPC; `evaluations` counts leaves.
pub struct SmpcController {
    pub cfg: SmpcConfig,
    pub field: PotentialFieldParams,
    pub predictor: Arc<dyn EgoPredictor>,
    pub bounds: ControlBounds,
}

impl Controller for SmpcController {
    fn name(&self) -> String {
        if self.cfg.use_true_dynamics { "smpc-true".into() } else { "smpc".into() }
    }

    fn kind(&self) -> DynamicsKind {
        self.predictor.kind()
    }

    fn decide(&self, obs: &Observation<'_>) -> Result<Decision> {
        let tracks: Vec<(Vec2, Vec2)> = obs.obstacles.iter().map(|o| (o.position, o.velocity)).collect();
        let r = smpc_control(obs.ego, obs.goal, &tracks, obs.dt, &self.field, &self.bounds, &self.cfg, self.predictor.as_ref(), obs.seed)?;
        Ok(Decision::act(r.control, r.leaves))
    }
}
