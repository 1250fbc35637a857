//! Controller construction by method name.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use sncbf_core::barrier::{BarrierModel, NonSeqBarrierModel};
use sncbf_core::baselines::{GpfmConfig, GpfmController, PotentialFieldParams, SmpcConfig, SmpcController, SpfmController, SpfmNominal};
use sncbf_core::container::StoredModel;
use sncbf_core::dynamics::{ControlBounds, DynamicsParams, EgoPredictor, LearnedDynamics, TrueDynamics};
use sncbf_core::exec::Execution;
use sncbf_core::inference::{AggregationConfig, BarrierSet, Ensemble, NonSeqController, SelectConfig, SncbfController};
use sncbf_core::sim::Controller;

use crate::config::ExperimentConfig;
use crate::CmdError;

pub const METHODS: [&str; 7] = ["sncbf", "sncbf-ensemble", "nonseq-cbf", "spfm", "gpfm", "smpc", "smpc-true"];

pub fn dynamics_path(dir: &Path) -> PathBuf {
    dir.join("dynamics.sncb")
}

pub fn barrier_path(dir: &Path, member: usize) -> PathBuf {
    dir.join(format!("barrier_{member}.sncb"))
}

pub fn nonseq_path(dir: &Path) -> PathBuf {
    dir.join("nonseq.sncb")
}

/// Trained artifacts a sweep draws on.
#[derive(Clone, Debug, Default)]
pub struct ModelSet {
    pub dynamics: Option<LearnedDynamics>,
    pub barriers: Vec<BarrierModel>,
    pub nonseq: Option<NonSeqBarrierModel>,
}

fn load_as(path: &Path) -> Result<Option<StoredModel>, CmdError> {
    if !path.exists() {
        return Ok(None);
    }
    StoredModel::load(path).map(Some).map_err(|e| CmdError::Io(format!("{}: {e}", path.display())))
}

impl ModelSet {
    /// Loads whatever is present in `dir`; barrier members are read as
    /// `barrier_0`, `barrier_1`, ... until the first gap.
    pub fn load(dir: &Path) -> Result<Self, CmdError> {
        let mut set = ModelSet::default();
        if let Some(m) = load_as(&dynamics_path(dir))? {
            match m {
                StoredModel::LearnedDynamics(d) => set.dynamics = Some(d),
                other => return Err(CmdError::Io(format!("dynamics.sncb holds a {} model", other.kind_name()))),
            }
        }
        for i in 0.. {
            match load_as(&barrier_path(dir, i))? {
                None => break,
                Some(StoredModel::Barrier(b)) => set.barriers.push(b),
                Some(other) => return Err(CmdError::Io(format!("barrier_{i}.sncb holds a {} model", other.kind_name()))),
            }
        }
        if let Some(m) = load_as(&nonseq_path(dir))? {
            match m {
                StoredModel::NonSeqBarrier(b) => set.nonseq = Some(b),
                other => return Err(CmdError::Io(format!("nonseq.sncb holds a {} model", other.kind_name()))),
            }
        }
        Ok(set)
    }

    fn learned(&self, method: &str) -> Result<Arc<dyn EgoPredictor>, CmdError> {
        let d = self.dynamics.clone().ok_or_else(|| CmdError::MissingModel { method: method.into(), what: "learned dynamics (dynamics.sncb)".into() })?;
        Ok(Arc::new(d))
    }
}

pub fn field(cfg: &ExperimentConfig) -> PotentialFieldParams {
    PotentialFieldParams { zeta: cfg.baselines.zeta, eta: cfg.baselines.eta, influence: cfg.baselines.influence }
}

fn spfm(cfg: &ExperimentConfig, predictor: Arc<dyn EgoPredictor>) -> SpfmController {
    SpfmController {
        field: field(cfg),
        predictor,
        bounds: ControlBounds::default_for(cfg.dynamics),
        samples: cfg.baselines.spfm_samples,
    }
}

/// S-PFM over `predictor`, as a refinement and candidate nominal.
pub fn spfm_nominal(cfg: &ExperimentConfig, predictor: Arc<dyn EgoPredictor>) -> SpfmNominal {
    SpfmNominal(spfm(cfg, predictor))
}

pub fn select_config(cfg: &ExperimentConfig) -> SelectConfig {
    SelectConfig {
        aggregation: AggregationConfig { b: cfg.infer.b },
        candidates: cfg.infer.l,
        exhaustive: false,
        lookahead: cfg.infer.lookahead,
        exec: Execution::Sequential,
    }
}

fn sncbf(cfg: &ExperimentConfig, set: BarrierSet, predictor: Arc<dyn EgoPredictor>) -> Result<SncbfController, CmdError> {
    let bounds = ControlBounds::default_for(cfg.dynamics);
    let mut c = SncbfController::new(set, predictor.clone(), bounds, select_config(cfg)).map_err(|e| CmdError::stage("build controller", e))?;
    c.sensing_range = cfg.infer.sensing_range;
    if cfg.infer.nominal {
        c = c.with_nominal(Arc::new(spfm_nominal(cfg, predictor)));
    }
    Ok(c)
}

pub fn build(method: &str, cfg: &ExperimentConfig, models: &ModelSet) -> Result<Box<dyn Controller>, CmdError> {
    let kind = cfg.dynamics;
    let bounds = ControlBounds::default_for(kind);
    let truth: Arc<dyn EgoPredictor> = Arc::new(TrueDynamics::new(kind, cfg.dt));
    let missing = |what: &str| CmdError::MissingModel { method: method.into(), what: what.into() };
    let smpc_cfg = |use_true_dynamics| SmpcConfig {
        horizon: cfg.baselines.smpc_horizon,
        samples_per_step: cfg.baselines.smpc_samples,
        nominal_samples: cfg.baselines.smpc_nominal_samples,
        sigma_fraction: cfg.baselines.smpc_sigma,
        use_true_dynamics,
        exec: Execution::Sequential,
    };
    let c: Box<dyn Controller> = match method {
        "sncbf" => {
            let b = models.barriers.first().cloned().ok_or_else(|| missing("barrier model (barrier_0.sncb)"))?;
            Box::new(sncbf(cfg, BarrierSet::Single(b), models.learned(method)?)?)
        }
        "sncbf-ensemble" => {
            if models.barriers.len() < 2 {
                return Err(missing("at least two barrier models (barrier_0.sncb, barrier_1.sncb, ...)"));
            }
            let e = Ensemble::new(models.barriers.clone(), cfg.infer.variance_threshold, cfg.infer.ensemble_mode)
                .map_err(|e| CmdError::stage("build ensemble", e))?;
            Box::new(sncbf(cfg, BarrierSet::Ensemble(e), models.learned(method)?)?)
        }
        "nonseq-cbf" => {
            let m = models.nonseq.clone().ok_or_else(|| missing("pooled barrier model (nonseq.sncb)"))?;
            let predictor = models.learned(method)?;
            let mut c = NonSeqController::new(m, predictor.clone(), bounds, cfg.infer.l).map_err(|e| CmdError::stage("build controller", e))?;
            c.sensing_range = cfg.infer.sensing_range;
            c.lookahead = cfg.infer.lookahead;
            if cfg.infer.nominal {
                c.nominal = Some(Arc::new(spfm_nominal(cfg, predictor)));
            }
            Box::new(c)
        }
        "spfm" => Box::new(spfm(cfg, truth)),
        "gpfm" => Box::new(GpfmController {
            kind,
            cfg: GpfmConfig { field: field(cfg), gain: cfg.baselines.gpfm_gain, cruise_speed: cfg.baselines.gpfm_cruise },
            bounds,
            dynamics: DynamicsParams::default(),
        }),
        "smpc" => Box::new(SmpcController { cfg: smpc_cfg(false), field: field(cfg), predictor: models.learned(method)?, bounds }),
        "smpc-true" => Box::new(SmpcController { cfg: smpc_cfg(true), field: field(cfg), predictor: truth, bounds }),
        other => return Err(CmdError::Config(format!("unregistered method {other:?}"))),
    };
    Ok(c)
}
