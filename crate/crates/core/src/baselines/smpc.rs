use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{potential, spfm_control, PotentialFieldParams};
use crate::dynamics::{Control, ControlBounds, EgoPredictor, EgoState};
use crate::exec::{self, Execution};
use crate::geom::Vec2;
use crate::{seed, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmpcConfig {
    pub horizon: usize,
    pub samples_per_step: usize,
    /// S-PFM samples used to pick each node's nominal control.
    pub nominal_samples: usize,
    /// Gaussian std per control component, as a fraction of the half-width.
    pub sigma_fraction: f64,
    pub use_true_dynamics: bool,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for SmpcConfig {
    fn default() -> Self {
        Self { horizon: 3, samples_per_step: 10, nominal_samples: 10, sigma_fraction: 0.2, use_true_dynamics: false, exec: Execution::Sequential }
    }
}

impl SmpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.samples_per_step == 0 || self.nominal_samples == 0 {
            return Err(Error::InvalidInput(format!("S-MPC sizes must be positive: {self:?}")));
        }
        if !(self.sigma_fraction >= 0.0) {
            return Err(Error::InvalidInput(format!("sigma fraction must be non-negative, got {}", self.sigma_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmpcResult {
    pub control: Control,
    pub leaves: u64,
    pub best_potential: f64,
}

/// `(nominal, perturbation)` seeds of a tree node.
pub fn smpc_seeds(node_seed: u64) -> (u64, u64) {
    (seed::derive(node_seed, 0x5EED_0001), seed::derive(node_seed, 0x5EED_0002))
}

/// `n` Gaussian perturbations of `nominal`, clamped to `bounds`.
pub fn perturb_controls(nominal: &Control, bounds: &ControlBounds, sigma_fraction: f64, n: usize, rng_seed: u64) -> Vec<Control> {
    let mut rng = seed::rng(rng_seed);
    let dists: Vec<Option<Normal<f64>>> = (0..nominal.components.len())
        .map(|i| {
            let s = sigma_fraction * 0.5 * (bounds.upper[i] - bounds.lower[i]);
            (s > 0.0).then(|| Normal::new(0.0, s).unwrap())
        })
        .collect();
    (0..n)
        .map(|_| {
            let mut u = nominal.clone();
            for (c, d) in u.components.iter_mut().zip(&dists) {
                if let Some(d) = d {
                    *c += d.sample(&mut rng);
                }
            }
            bounds.clamp(&mut u);
            u
        })
        .collect()
}

struct Tree<'a> {
    goal: Vec2,
    obstacles: &'a [(Vec2, Vec2)],
    dt: f64,
    field: &'a PotentialFieldParams,
    bounds: &'a ControlBounds,
    cfg: &'a SmpcConfig,
    predictor: &'a dyn EgoPredictor,
}

impl Tree<'_> {
    fn obstacles_at(&self, steps: usize) -> Vec<Vec2> {
        self.obstacles.iter().map(|&(p, v)| p + v * (self.dt * steps as f64)).collect()
    }

    fn children(&self, x: &EgoState, depth: usize, node_seed: u64) -> Result<Vec<Control>> {
        let (ns, ps) = smpc_seeds(node_seed);
        let next = self.obstacles_at(depth + 1);
        let nominal = spfm_control(x, self.goal, &next, self.field, self.bounds, self.cfg.nominal_samples, self.predictor, ns)?;
        Ok(perturb_controls(&nominal, self.bounds, self.cfg.sigma_fraction, self.cfg.samples_per_step, ps))
    }

    /// Best leaf potential below `x` and the number of leaves visited.
    fn search(&self, x: &EgoState, depth: usize, node_seed: u64, leaf_obstacles: &[Vec2]) -> Result<(f64, u64)> {
        if depth == self.cfg.horizon {
            return Ok((potential(x.position(), self.goal, leaf_obstacles, self.field), 1));
        }
        let mut best = f64::INFINITY;
        let mut leaves = 0;
        for (i, u) in self.children(x, depth, node_seed)?.iter().enumerate() {
            let nx = self.predictor.predict(x, u)?;
            let (v, n) = self.search(&nx, depth + 1, seed::derive(node_seed, i as u64 + 1), leaf_obstacles)?;
            leaves += n;
            if v < best {
                best = v;
            }
        }
        Ok((best, leaves))
    }
}

/// Depth-H sampling tree around S-PFM nominal controls; returns the root
/// action leading to the leaf of lowest potential (lowest index on ties).
#[allow(clippy::too_many_arguments)]
pub fn smpc_control(
    x: &EgoState,
    goal: Vec2,
    obstacles: &[(Vec2, Vec2)],
    dt: f64,
    field: &PotentialFieldParams,
    bounds: &ControlBounds,
    cfg: &SmpcConfig,
    predictor: &dyn EgoPredictor,
    seed_value: u64,
) -> Result<SmpcResult> {
    cfg.validate()?;
    let tree = Tree { goal, obstacles, dt, field, bounds, cfg, predictor };
    let leaf_obstacles = tree.obstacles_at(cfg.horizon);
    let roots = tree.children(x, 0, seed_value)?;
    let scored: Vec<Result<(f64, u64)>> = exec::map_range(cfg.exec, roots.len(), |i| {
        let nx = predictor.predict(x, &roots[i])?;
        tree.search(&nx, 1, seed::derive(seed_value, i as u64 + 1), &leaf_obstacles)
    });
    let mut best = (f64::INFINITY, 0usize);
    let mut leaves = 0;
    for (i, s) in scored.into_iter().enumerate() {
        let (v, n) = s?;
        leaves += n;
        if v < best.0 {
            best = (v, i);
        }
    }
    Ok(SmpcResult { control: roots[best.1].clone(), leaves, best_potential: best.0 })
}
