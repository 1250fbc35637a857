//! Benchmark sweeps over method, density and seed.

use std::io::Write;

use sncbf_core::exec::{self, Execution};
use sncbf_core::fmt::sig9;
use sncbf_core::seed;
use sncbf_core::sim::{run_episode, Controller, EpisodeResult, ObstacleModel, Outcome, Scenario};

use crate::config::ExperimentConfig;
use crate::registry::{self, ModelSet};
use crate::CmdError;

pub const TABLE_HEADER: &str = "dynamics,method,obstacles,seed,episodes,collision_rate,mean_steps,frozen_fraction";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub dynamics: String,
    pub method: String,
    pub obstacles: usize,
    pub seed: u64,
    pub episodes: usize,
    /// Fraction of failed episodes: collided, frozen or timed out.
    pub collision_rate: f64,
    pub mean_steps: f64,
    pub frozen_fraction: f64,
    /// Mean controller evaluations per decision.
    pub evaluations_per_step: f64,
}

/// Scenario of episode `i` in the (density, seed) cell. Independent of the
/// method, so every method faces the same episodes.
pub fn episode_scenario(cfg: &ExperimentConfig, obstacles: usize, cell_seed: u64, i: usize) -> Scenario {
    let s = seed::derive(seed::derive(cell_seed, obstacles as u64), i as u64);
    cfg.scenario(obstacles, 0).randomized(s, cfg.endpoint_radius)
}

pub fn summarize(dynamics: &str, method: &str, obstacles: usize, cell_seed: u64, results: &[EpisodeResult]) -> BenchRow {
    let n = results.len().max(1) as f64;
    let failed = results.iter().filter(|r| r.outcome.is_failure()).count() as f64;
    let frozen = results.iter().filter(|r| r.outcome == Outcome::Frozen).count() as f64;
    let steps: usize = results.iter().map(|r| r.steps_taken).sum();
    let evals: u64 = results.iter().map(|r| r.evaluations).sum();
    BenchRow {
        dynamics: dynamics.into(),
        method: method.into(),
        obstacles,
        seed: cell_seed,
        episodes: results.len(),
        collision_rate: failed / n,
        mean_steps: steps as f64 / n,
        frozen_fraction: frozen / n,
        evaluations_per_step: evals as f64 / steps.max(1) as f64,
    }
}

/// All episodes of one method over every (density, seed) cell; rows come
/// back in cell order whatever the completion order.
pub fn run_method(cfg: &ExperimentConfig, method: &str, controller: &dyn Controller, exec: Execution) -> Result<Vec<BenchRow>, CmdError> {
    let cells: Vec<(usize, u64)> = cfg.densities.iter().flat_map(|&d| cfg.seeds.iter().map(move |&s| (d, s))).collect();
    let per = cfg.episodes;
    let results = exec::map_range(exec, cells.len() * per, |job| {
        let (d, s) = cells[job / per];
        let sc = episode_scenario(cfg, d, s, job % per);
        run_episode(&sc, controller, ObstacleModel::Orca(sc.orca))
    });
    let mut rows = Vec::with_capacity(cells.len());
    let mut it = results.into_iter();
    for &(d, s) in &cells {
        let chunk: Vec<EpisodeResult> =
            it.by_ref().take(per).collect::<Result<_, _>>().map_err(|e| CmdError::stage(&format!("episode ({method}, {d}, {s})"), e))?;
        rows.push(summarize(cfg.dynamics.name(), method, d, s, &chunk));
    }
    Ok(rows)
}

/// Every configured method; rows ordered by method, density, seed.
pub fn run_sweep(cfg: &ExperimentConfig, models: &ModelSet, exec: Execution, log: &mut dyn FnMut(String)) -> Result<Vec<BenchRow>, CmdError> {
    let controllers = cfg.methods.iter().map(|m| registry::build(m, cfg, models).map(|c| (m, c))).collect::<Result<Vec<_>, _>>()?;
    let mut rows = vec![];
    for (m, c) in &controllers {
        let r = run_method(cfg, m, c.as_ref(), exec)?;
        for row in &r {
            log(format!(
                "{m} obstacles={} seed={}: collision_rate {} frozen {} mean_steps {}",
                row.obstacles,
                row.seed,
                sig9(row.collision_rate),
                sig9(row.frozen_fraction),
                sig9(row.mean_steps)
            ));
        }
        rows.extend(r);
    }
    Ok(rows)
}

pub fn write_table_csv(mut w: impl Write, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(w, "{TABLE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.dynamics,
            r.method,
            r.obstacles,
            r.seed,
            r.episodes,
            sig9(r.collision_rate),
            sig9(r.mean_steps),
            sig9(r.frozen_fraction)
        )?;
    }
    Ok(())
}

/// Mean collision rate of `method` at `obstacles` over seeds.
pub fn mean_rate(rows: &[BenchRow], method: &str, obstacles: usize) -> Option<f64> {
    mean_of(rows, method, obstacles, |r| r.collision_rate)
}

pub fn mean_of(rows: &[BenchRow], method: &str, obstacles: usize, f: impl Fn(&BenchRow) -> f64) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| r.method == method && r.obstacles == obstacles).map(f).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
