//! Demonstrations, dynamics fit, two-phase barrier training, persistence.

use std::path::Path;
use std::sync::Arc;

use sncbf_core::barrier::{
    invariance_violation_rate, label_demonstrations, label_demonstrations_joint, refine_boundary, run_demonstrations,
    train_initial, train_net, transitions, BarrierArch, BarrierHyper, BarrierModel, DataView, DemoConfig, LabelConfig,
    LabeledDataset, NonSeqArch, NonSeqBarrierModel, RefineConfig, RoundReport, TrainConfig,
};
use sncbf_core::container::StoredModel;
use sncbf_core::dynamics::{fit_dynamics, ControlBounds, EgoPredictor, FitConfig, TrueDynamics};
use sncbf_core::exec::Execution;
use sncbf_core::fmt::sig9;
use sncbf_core::seed;

use crate::config::ExperimentConfig;
use crate::registry::{self, spfm_nominal, ModelSet};
use crate::CmdError;

#[derive(Clone, Debug)]
pub struct MemberReport {
    pub seed: u64,
    pub phase1_curve: Vec<f64>,
    pub phase2_curve: Vec<f64>,
    pub rounds: Vec<RoundReport>,
    /// Held-out fraction of pairs violating the invariance condition.
    pub violation_phase1: f64,
    pub violation_refined: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub demonstrations: usize,
    pub held_out_demonstrations: usize,
    /// Safe, unsafe and pair counts of the training set.
    pub counts: (usize, usize, usize),
    pub held_out_pairs: usize,
    pub dynamics_rmse: Vec<f64>,
    pub members: Vec<MemberReport>,
    pub nonseq_curve: Vec<f64>,
}

fn hyper(cfg: &ExperimentConfig) -> BarrierHyper {
    BarrierHyper { gamma: cfg.train.gamma, kappa: cfg.train.kappa, dt: cfg.dt }
}

pub fn barrier_arch(cfg: &ExperimentConfig) -> BarrierArch {
    BarrierArch { k: cfg.train.k, ..BarrierArch::new(cfg.dynamics) }
}

fn label_config(cfg: &ExperimentConfig) -> LabelConfig {
    LabelConfig {
        k: cfg.train.k,
        horizon: cfg.train.horizon,
        sensing_range: cfg.infer.sensing_range,
        collision_radius: cfg.collision_radius,
        dt: cfg.dt,
    }
}

fn refine_config(cfg: &ExperimentConfig, member_seed: u64, exec: Execution) -> RefineConfig {
    let mut r = RefineConfig::new(ControlBounds::default_for(cfg.dynamics));
    r.theta = cfg.train.theta;
    r.jitter_sigma = cfg.train.jitter;
    r.samples_per_seed = cfg.train.samples_per_seed;
    r.seed_pairs = cfg.train.seed_pairs;
    r.max_rounds = cfg.train.refine_rounds;
    r.train = TrainConfig { iterations: cfg.train.refine_iterations, batch: cfg.train.batch, lr: cfg.train.lr, seed: 0 };
    r.collision_radius = cfg.collision_radius;
    r.seed = seed::derive(member_seed, 0x2E);
    r.exec = exec;
    r
}

fn member_seed(cfg: &ExperimentConfig, i: usize) -> u64 {
    seed::derive(cfg.train.seed, 0xB0 + i as u64)
}

/// Full training run; `log` receives one line per phase.
pub fn train_all(cfg: &ExperimentConfig, exec: Execution, log: &mut dyn FnMut(String)) -> Result<(ModelSet, TrainReport), CmdError> {
    let kind = cfg.dynamics;
    let label = label_config(cfg);
    let mut demo = DemoConfig::new(cfg.scenario(cfg.train.obstacles, 0), cfg.train.demonstrations);
    demo.endpoint_radius = cfg.endpoint_radius;
    demo.exploration = cfg.train.exploration;
    demo.label = label;
    demo.seed = seed::derive(cfg.train.seed, 0xDE);
    demo.exec = exec;
    let demonstrator = registry::spfm_nominal(cfg, Arc::new(TrueDynamics::new(kind, cfg.dt))).0;
    let episodes = run_demonstrations(&demo, &demonstrator).map_err(|e| CmdError::stage("collect_demonstrations", e))?;
    let n_hold = ((episodes.len() as f64) * cfg.train.holdout).round() as usize;
    let (train_eps, held_eps) = episodes.split_at(episodes.len() - n_hold.min(episodes.len() - 1));
    let data = label_demonstrations(train_eps, &label).map_err(|e| CmdError::stage("collect_demonstrations", e))?;
    let held = if held_eps.is_empty() { LabeledDataset::default() } else { label_demonstrations(held_eps, &label).unwrap_or_default() };
    let counts = data.counts();
    log(format!(
        "demonstrations: {} episodes ({} held out), {} safe, {} unsafe, {} pairs",
        episodes.len(),
        held_eps.len(),
        counts.0,
        counts.1,
        counts.2
    ));

    let fit = FitConfig { iterations: cfg.train.dynamics_iterations, seed: seed::derive(cfg.train.seed, 0xD1), ..Default::default() };
    let dynamics = fit_dynamics(&transitions(train_eps), &fit).map_err(|e| CmdError::stage("fit_dynamics", e))?;
    log(format!("fit_dynamics: held-out rmse {}", dynamics.held_out_rmse.iter().map(|v| sig9(*v)).collect::<Vec<_>>().join(" ")));
    let predictor: Arc<dyn EgoPredictor> = Arc::new(dynamics.clone());
    let nominal = spfm_nominal(cfg, predictor.clone());
    let held_pairs = if held.pairs.is_empty() { data.pairs.clone() } else { held.pairs.clone() };

    let mut members = Vec::new();
    let mut reports = Vec::new();
    for i in 0..cfg.train.ensemble {
        let ms = member_seed(cfg, i);
        let init = BarrierModel::new(barrier_arch(cfg), hyper(cfg), ms).map_err(|e| CmdError::stage("train_initial", e))?;
        let tc = TrainConfig { iterations: cfg.train.iterations, batch: cfg.train.batch, lr: cfg.train.lr, seed: ms };
        let (m1, c1) = train_initial(init, &data, &tc).map_err(|e| CmdError::stage("train_initial", e))?;
        let v1 = invariance_violation_rate(&m1, &held_pairs).map_err(|e| CmdError::stage("train_initial", e))?;
        log(format!("member {i} train_initial: final loss {}, held-out invariance violations {}", sig9(*c1.last().unwrap_or(&0.0)), sig9(v1)));
        let out = refine_boundary(m1, data.clone(), predictor.as_ref(), &nominal, &refine_config(cfg, ms, exec))
            .map_err(|e| CmdError::stage("refine_boundary", e))?;
        let v2 = invariance_violation_rate(&out.model, &held_pairs).map_err(|e| CmdError::stage("refine_boundary", e))?;
        log(format!(
            "member {i} refine_boundary: {} rounds, final loss {}, held-out invariance violations {}",
            out.rounds.len(),
            sig9(out.rounds.last().map(|r| r.loss.total()).unwrap_or(0.0)),
            sig9(v2)
        ));
        members.push(out.model);
        reports.push(MemberReport {
            seed: ms,
            phase1_curve: c1,
            phase2_curve: out.curve,
            rounds: out.rounds,
            violation_phase1: v1,
            violation_refined: v2,
        });
    }

    let mut nonseq = None;
    let mut nonseq_curve = vec![];
    if cfg.methods.iter().any(|m| m == "nonseq-cbf") {
        let joint = label_demonstrations_joint(train_eps, &label).map_err(|e| CmdError::stage("train_nonseq", e))?;
        let view = DataView {
            safe: joint.safe.iter().collect(),
            unsafe_: joint.unsafe_.iter().collect(),
            pairs: joint.pairs.iter().map(|(a, b)| (a, b)).collect(),
            focus_safe: vec![],
            focus_unsafe: vec![],
        };
        let s = seed::derive(cfg.train.seed, 0x9F);
        let mut m = NonSeqBarrierModel::new(NonSeqArch::new(kind), hyper(cfg), s).map_err(|e| CmdError::stage("train_nonseq", e))?;
        // Same number of gradient steps as a sequential member's two phases.
        let iterations = cfg.train.iterations + cfg.train.refine_rounds * cfg.train.refine_iterations;
        let tc = TrainConfig { iterations, batch: cfg.train.batch, lr: cfg.train.lr, seed: s };
        nonseq_curve = train_net(&mut m, &view, &tc).map_err(|e| CmdError::stage("train_nonseq", e))?;
        log(format!("train_nonseq: {iterations} iterations, final loss {}", sig9(*nonseq_curve.last().unwrap_or(&0.0))));
        nonseq = Some(m);
    }

    let report = TrainReport {
        demonstrations: train_eps.len(),
        held_out_demonstrations: held_eps.len(),
        counts,
        held_out_pairs: held_pairs.len(),
        dynamics_rmse: dynamics.held_out_rmse.clone(),
        members: reports,
        nonseq_curve,
    };
    Ok((ModelSet { dynamics: Some(dynamics), barriers: members, nonseq }, report))
}

fn io(path: &Path, e: impl std::fmt::Display) -> CmdError {
    CmdError::Io(format!("{}: {e}", path.display()))
}

/// Writes containers to `models_dir`, returning them reloaded, since
/// sweeps run on the stored (single-precision) weights.
pub fn save_models(models: &ModelSet, models_dir: &Path) -> Result<ModelSet, CmdError> {
    std::fs::create_dir_all(models_dir).map_err(|e| io(models_dir, e))?;
    let mut stored: Vec<(std::path::PathBuf, StoredModel)> = vec![];
    if let Some(d) = &models.dynamics {
        stored.push((registry::dynamics_path(models_dir), StoredModel::LearnedDynamics(d.clone())));
    }
    for (i, b) in models.barriers.iter().enumerate() {
        stored.push((registry::barrier_path(models_dir, i), StoredModel::Barrier(b.clone())));
    }
    if let Some(n) = &models.nonseq {
        stored.push((registry::nonseq_path(models_dir), StoredModel::NonSeqBarrier(n.clone())));
    }
    for (path, m) in &stored {
        m.save(path).map_err(|e| io(path, e))?;
    }
    ModelSet::load(models_dir)
}

pub fn write_curve_csv(path: &Path, curve: &[f64]) -> Result<(), CmdError> {
    let mut s = String::from("iteration,loss\n");
    for (i, v) in curve.iter().enumerate() {
        s.push_str(&format!("{i},{}\n", sig9(*v)));
    }
    std::fs::write(path, s).map_err(|e| io(path, e))
}

pub fn write_summary_csv(path: &Path, r: &TrainReport) -> Result<(), CmdError> {
    let mut s = String::from("member,seed,phase1_final_loss,phase2_initial_loss,phase2_final_loss,rounds,violation_phase1,violation_refined\n");
    for (i, m) in r.members.iter().enumerate() {
        let last = |c: &[f64]| c.last().copied().unwrap_or(f64::NAN);
        s.push_str(&format!(
            "{i},{},{},{},{},{},{},{}\n",
            m.seed,
            sig9(last(&m.phase1_curve)),
            sig9(m.phase2_curve.first().copied().unwrap_or(f64::NAN)),
            sig9(last(&m.phase2_curve)),
            m.rounds.len(),
            sig9(m.violation_phase1),
            sig9(m.violation_refined)
        ));
    }
    std::fs::write(path, s).map_err(|e| io(path, e))
}

/// Loss-curve files for every member plus the training summary.
pub fn write_training_outputs(out: &Path, r: &TrainReport) -> Result<(), CmdError> {
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    for (i, m) in r.members.iter().enumerate() {
        write_curve_csv(&out.join(format!("loss_phase1_{i}.csv")), &m.phase1_curve)?;
        write_curve_csv(&out.join(format!("loss_phase2_{i}.csv")), &m.phase2_curve)?;
    }
    if !r.nonseq_curve.is_empty() {
        write_curve_csv(&out.join("loss_nonseq.csv"), &r.nonseq_curve)?;
    }
    write_summary_csv(&out.join("train_summary.csv"), r)
}

