//! The four subcommands, each writing its artifacts under the output directory.

use std::path::{Path, PathBuf};

use sncbf_core::barrier::BarrierModel;
use sncbf_core::container::StoredModel;
use sncbf_core::decomp::{
    build_training_set, evaluate_generalization, train_predictor, write_report_csv, CrowdConfig, DecompEvalReport, FramePredictor,
    PredictorConfig, PredictorKind,
};
use sncbf_core::exec::Execution;
use sncbf_core::fmt::sig9;
use sncbf_core::inference::AggregationConfig;
use sncbf_core::seed;
use sncbf_core::sim::{read_trajectory_csv, run_episode, write_trajectory_csv, ObstacleModel, OrcaParams, TrajectoryRecord};

use crate::config::ExperimentConfig;
use crate::pipeline::{self, TrainReport};
use crate::registry::{self, ModelSet};
use crate::replay::{self, GridSpec};
use crate::svg::{LinePlot, Series};
use crate::sweep::{self, BenchRow};
use crate::CmdError;

fn io(path: &Path, e: impl std::fmt::Display) -> CmdError {
    CmdError::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CmdError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io(path, e))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn cmd_train(cfg: &ExperimentConfig, exec: Execution, log: &mut dyn FnMut(String)) -> Result<(ModelSet, TrainReport), CmdError> {
    let (models, report) = pipeline::train_all(cfg, exec, log)?;
    let stored = pipeline::save_models(&models, &cfg.models_dir())?;
    pipeline::write_training_outputs(&cfg.out_dir, &report)?;
    let series = report
        .members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let all: Vec<f64> = m.phase1_curve.iter().chain(&m.phase2_curve).copied().collect();
            // Every 10th point keeps the file small.
            let points = all.iter().enumerate().step_by(10).map(|(t, v)| (t as f64, *v)).collect();
            Series { name: format!("member {i}"), points, band: vec![] }
        })
        .collect();
    let plot = LinePlot { title: "training loss (both phases)".into(), x_label: "iteration".into(), y_label: "loss".into(), series };
    write(&cfg.out_dir.join("loss_curves.svg"), plot.render())?;
    log(format!("models written to {}", cfg.models_dir().display()));
    Ok((stored, report))
}

/// Collision rate against density per method, shaded by the spread over seeds.
pub fn bench_plot(rows: &[BenchRow], methods: &[String], densities: &[usize]) -> LinePlot {
    let series = methods
        .iter()
        .map(|m| {
            let mut points = vec![];
            let mut band = vec![];
            for &d in densities {
                let v: Vec<f64> = rows.iter().filter(|r| &r.method == m && r.obstacles == d).map(|r| r.collision_rate).collect();
                if v.is_empty() {
                    continue;
                }
                let (mean, sd) = mean_std(&v);
                points.push((d as f64, mean));
                band.push(((mean - sd).max(0.0), (mean + sd).min(1.0)));
            }
            Series { name: m.clone(), points, band }
        })
        .collect();
    LinePlot { title: "collision rate vs obstacle count".into(), x_label: "obstacles".into(), y_label: "collision rate".into(), series }
}

pub fn cmd_bench(cfg: &ExperimentConfig, exec: Execution, log: &mut dyn FnMut(String)) -> Result<Vec<BenchRow>, CmdError> {
    let models = ModelSet::load(&cfg.models_dir())?;
    let rows = sweep::run_sweep(cfg, &models, exec, log)?;
    let mut csv = Vec::new();
    sweep::write_table_csv(&mut csv, &rows).map_err(|e| CmdError::Io(e.to_string()))?;
    write(&cfg.out_dir.join("bench_table.csv"), csv)?;
    write(&cfg.out_dir.join("collision_rate.svg"), bench_plot(&rows, &cfg.methods, &cfg.densities).render())?;
    for m in &cfg.methods {
        let c = registry::build(m, cfg, &models)?;
        for &d in &cfg.densities {
            let sc = sweep::episode_scenario(cfg, d, cfg.seeds[0], 0);
            let r = run_episode(&sc, c.as_ref(), ObstacleModel::Orca(sc.orca)).map_err(|e| CmdError::stage("sample trajectory", e))?;
            let mut buf = Vec::new();
            write_trajectory_csv(&mut buf, &TrajectoryRecord::from(&r)).map_err(|e| CmdError::Io(e.to_string()))?;
            write(&cfg.out_dir.join("trajectories").join(format!("{m}_{d}.csv")), buf)?;
        }
    }
    Ok(rows)
}

pub fn decomp_predictor_config(cfg: &ExperimentConfig, s: u64) -> PredictorConfig {
    PredictorConfig {
        k: cfg.decomp.k,
        hidden: cfg.decomp.hidden,
        head: vec![cfg.decomp.hidden],
        iterations: cfg.decomp.iterations,
        lr: cfg.decomp.lr,
        dt: cfg.dt,
        seed: seed::derive(s, 0xDC),
        ..Default::default()
    }
}

fn crowd_config(cfg: &ExperimentConfig) -> CrowdConfig {
    CrowdConfig { arena_half_extent: cfg.arena_half_extent, dt: cfg.dt, frames: cfg.decomp.frames, orca: OrcaParams::default() }
}

/// Train the three predictors at the training density and score them
/// across the density list, once per seed.
pub fn run_decomp(cfg: &ExperimentConfig, exec: Execution, log: &mut dyn FnMut(String)) -> Result<Vec<(u64, DecompEvalReport)>, CmdError> {
    let crowd = crowd_config(cfg);
    let mut out = vec![];
    for &s in &cfg.decomp.seeds {
        let data = build_training_set(cfg.decomp.train_density, cfg.decomp.rollouts, cfg.decomp.k, &crowd, seed::derive(s, 0x7D), exec)
            .map_err(|e| CmdError::stage("decomp dataset", e))?;
        let pc = decomp_predictor_config(cfg, s);
        let models = PredictorKind::ALL
            .iter()
            .map(|&k| train_predictor(k, &data, &pc).map_err(|e| CmdError::stage(&format!("train {}", k.name()), e)))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&dyn FramePredictor> = models.iter().map(|m| m as &dyn FramePredictor).collect();
        let report = evaluate_generalization(&refs, &cfg.decomp.densities, cfg.decomp.episodes, &crowd, seed::derive(s, 0xE7), exec)
            .map_err(|e| CmdError::stage("evaluate_generalization", e))?;
        for r in &report.rows {
            log(format!("seed {s} {} density {}: mean error {}", r.kind, r.density, sig9(r.stats.mean_l2)));
        }
        out.push((s, report));
    }
    Ok(out)
}

pub fn decomp_plot(reports: &[(u64, DecompEvalReport)], densities: &[usize]) -> LinePlot {
    let series = PredictorKind::ALL
        .iter()
        .map(|k| {
            let mut points = vec![];
            let mut band = vec![];
            for &d in densities {
                let v: Vec<f64> = reports.iter().filter_map(|(_, r)| r.get(k.name(), d)).map(|s| s.mean_l2).collect();
                let (m, sd) = mean_std(&v);
                points.push((d as f64, m));
                band.push(((m - sd).max(0.0), m + sd));
            }
            Series { name: k.name().into(), points, band }
        })
        .collect();
    LinePlot { title: "prediction error vs density".into(), x_label: "pedestrians".into(), y_label: "mean error".into(), series }
}

pub fn cmd_decomp(cfg: &ExperimentConfig, exec: Execution, log: &mut dyn FnMut(String)) -> Result<Vec<(u64, DecompEvalReport)>, CmdError> {
    let reports = run_decomp(cfg, exec, log)?;
    let mut all = String::from("seed,kind,density,mean_l2,mean_maxnorm,eps95\n");
    for (s, r) in &reports {
        let mut buf = Vec::new();
        write_report_csv(&mut buf, r).map_err(|e| CmdError::Io(e.to_string()))?;
        write(&cfg.out_dir.join(format!("decomp_seed{s}.csv")), buf)?;
        for row in &r.rows {
            all.push_str(&format!(
                "{s},{},{},{},{},{}\n",
                row.kind,
                row.density,
                sig9(row.stats.mean_l2),
                sig9(row.stats.mean_maxnorm),
                sig9(row.stats.eps95)
            ));
        }
    }
    write(&cfg.out_dir.join("decomp_report.csv"), all)?;
    write(&cfg.out_dir.join("decomp_error.svg"), decomp_plot(&reports, &cfg.decomp.densities).render())?;
    Ok(reports)
}

pub fn load_barrier(path: &Path) -> Result<BarrierModel, CmdError> {
    if !path.exists() {
        return Err(CmdError::Io(format!("{}: no such file", path.display())));
    }
    match StoredModel::load(path).map_err(|e| io(path, e))? {
        StoredModel::Barrier(m) => Ok(m),
        other => Err(CmdError::Io(format!("{}: holds a {} model, expected a barrier", path.display(), other.kind_name()))),
    }
}

/// Level-set frames around the ego for every `replay.every`-th step plus the last.
pub fn cmd_replay(cfg: &ExperimentConfig, trajectory: &Path, model: &Path, half_extent: f64, exec: Execution) -> Result<Vec<PathBuf>, CmdError> {
    let file = std::fs::File::open(trajectory).map_err(|e| io(trajectory, e))?;
    let rec = read_trajectory_csv(file).map_err(|e| io(trajectory, e))?;
    let m = load_barrier(model)?;
    if rec.kind != m.arch.kind {
        return Err(CmdError::Config(format!("trajectory is {} but the model is {}", rec.kind.name(), m.arch.kind.name())));
    }
    if rec.ego.is_empty() {
        return Err(CmdError::Config("trajectory has no frames".into()));
    }
    let agg = AggregationConfig { b: cfg.infer.b };
    let every = cfg.replay.every.max(1);
    let mut frames: Vec<usize> = (0..rec.ego.len()).step_by(every).collect();
    if frames.last() != Some(&(rec.ego.len() - 1)) {
        frames.push(rec.ego.len() - 1);
    }
    let mut written = vec![];
    for t in frames {
        let spec = GridSpec { center: rec.ego[t].position(), half_extent, pitch: cfg.replay.pitch };
        let tracks = replay::frame_tracks(&rec, t, m.arch.k, cfg.dt);
        let grid = replay::evaluate_grid(&m, &rec.ego[t], &tracks, &spec, &agg, cfg.infer.sensing_range, cfg.replay.max_cells, exec)?;
        let path = cfg.out_dir.join(format!("replay_{t:04}.svg"));
        write(&path, replay::render_frame(&grid, &rec, t, cfg.pedestrian_radius))?;
        written.push(path);
    }
    Ok(written)
}
