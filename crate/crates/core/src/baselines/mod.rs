//! Comparison controllers: potential fields (sampled and gradient) and
//! sampling-based tree MPC over a one-step predictor.

mod controllers;
mod smpc;

pub use controllers::{GpfmController, SmpcController, SpfmController, SpfmNominal};
pub use smpc::{perturb_controls, smpc_control, smpc_seeds, SmpcConfig, SmpcResult};

use serde::{Deserialize, Serialize};

use crate::dynamics::{held_position, sample_controls, Control, ControlBounds, DynamicsKind, DynamicsParams, EgoPredictor, EgoState};
use crate::geom::{wrap_angle, Vec2};
use crate::{Error, Result};

/// Repulsion cap, reached as the distance goes to zero.
pub const REPULSION_CAP: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialFieldParams {
    pub zeta: f64,
    pub eta: f64,
    /// Influence distance Q* of the repulsive term.
    pub influence: f64,
}

impl Default for PotentialFieldParams {
    fn default() -> Self {
        Self { zeta: 1.0, eta: 1.0, influence: 2.0 }
    }
}

impl PotentialFieldParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.eta > 0.0 && self.influence > 0.0) {
            return Err(Error::InvalidInput(format!("potential field gains must be positive: {self:?}")));
        }
        Ok(())
    }
}

fn repulsion(d: f64, p: &PotentialFieldParams) -> f64 {
    if d > p.influence {
        return 0.0;
    }
    if d <= 0.0 {
        return REPULSION_CAP;
    }
    let r = 1.0 / d - 1.0 / p.influence;
    (0.5 * p.eta * r * r).min(REPULSION_CAP)
}

/// U(s) = ½ζ‖s − goal‖ + Σ ½η(1/d − 1/Q*)² over obstacles within Q*.
pub fn potential(s: Vec2, goal: Vec2, obstacles: &[Vec2], p: &PotentialFieldParams) -> f64 {
    0.5 * p.zeta * s.distance(goal) + obstacles.iter().map(|o| repulsion(s.distance(*o), p)).sum::<f64>()
}

/// Central-difference gradient of [`potential`], step 1e-4 m.
pub fn potential_gradient(s: Vec2, goal: Vec2, obstacles: &[Vec2], p: &PotentialFieldParams) -> Vec2 {
    let h = 1e-4;
    let f = |q: Vec2| potential(q, goal, obstacles, p);
    Vec2::new(
        (f(s + Vec2::new(h, 0.0)) - f(s - Vec2::new(h, 0.0))) / (2.0 * h),
        (f(s + Vec2::new(0.0, h)) - f(s - Vec2::new(0.0, h))) / (2.0 * h),
    )
}

/// Index of the candidate whose held position (two steps under the
/// candidate) has the lowest potential; ties go to the lowest index.
pub fn best_by_potential(
    x: &EgoState,
    candidates: &[Control],
    goal: Vec2,
    obstacles_next: &[Vec2],
    p: &PotentialFieldParams,
    predictor: &dyn EgoPredictor,
) -> Result<usize> {
    let mut best = (f64::INFINITY, 0);
    for (i, u) in candidates.iter().enumerate() {
        let next = predictor.predict(x, u)?;
        let v = potential(held_position(predictor, &next, u)?, goal, obstacles_next, p);
        if v < best.0 {
            best = (v, i);
        }
    }
    Ok(best.1)
}

/// Samples `l` controls and keeps the one with the lowest potential at the
/// held position.
#[allow(clippy::too_many_arguments)]
pub fn spfm_control(
    x: &EgoState,
    goal: Vec2,
    obstacles_next: &[Vec2],
    p: &PotentialFieldParams,
    bounds: &ControlBounds,
    l: usize,
    predictor: &dyn EgoPredictor,
    seed: u64,
) -> Result<Control> {
    if l == 0 {
        return Err(Error::InvalidInput("S-PFM needs at least one sample".into()));
    }
    let cands = sample_controls(x.kind, bounds, l, seed);
    let i = best_by_potential(x, &cands, goal, obstacles_next, p, predictor)?;
    Ok(cands[i].clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpfmConfig {
    pub field: PotentialFieldParams,
    /// Proportional gain of the heading / velocity tracking laws.
    pub gain: f64,
    /// Speed tracked by the non-holonomic mappings.
    pub cruise_speed: f64,
}

impl Default for GpfmConfig {
    fn default() -> Self {
        Self { field: PotentialFieldParams::default(), gain: 2.0, cruise_speed: 1.0 }
    }
}

/// Follows −∇U. Plateaus (‖∇U‖ < 1e-9) yield the zero control.
pub fn gpfm_control(
    x: &EgoState,
    goal: Vec2,
    obstacles_next: &[Vec2],
    cfg: &GpfmConfig,
    bounds: &ControlBounds,
    dyn_params: &DynamicsParams,
    dt: f64,
) -> Result<Control> {
    let g = potential_gradient(x.position(), goal, obstacles_next, &cfg.field);
    if !g.is_finite() {
        return Err(Error::NonFinite("potential gradient".into()));
    }
    if g.norm() < 1e-9 {
        return Ok(Control::zero(x.kind));
    }
    let dir = (-g).normalized();
    let s = &x.components;
    let heading_err = |theta: f64| wrap_angle(dir.angle() - theta);
    let c = match x.kind {
        DynamicsKind::SingleIntegrator => vec![dir.x * bounds.upper[0], dir.y * bounds.upper[1]],
        DynamicsKind::DoubleIntegrator => {
            let target = dir * cfg.cruise_speed;
            vec![cfg.gain * (target.x - s[2]), cfg.gain * (target.y - s[3])]
        }
        DynamicsKind::Dubins => {
            let e = heading_err(s[3]);
            let speed = cfg.cruise_speed * e.cos().max(0.0);
            vec![cfg.gain * (speed - s[2]), cfg.gain * e]
        }
        DynamicsKind::Bicycle => {
            let e = heading_err(s[2]);
            let steer = (cfg.gain * e).clamp(-dyn_params.bicycle_steer_max, dyn_params.bicycle_steer_max);
            let speed = cfg.cruise_speed * e.cos().max(0.0) * dyn_params.bicycle_length;
            vec![speed, (steer - s[3]) / dt]
        }
    };
    let mut u = Control::new(x.kind, c)?;
    bounds.clamp(&mut u);
    Ok(u)
}
