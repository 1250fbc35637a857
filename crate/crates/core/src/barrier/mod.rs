//! Sequential neural barrier model B(x, h), its pooled non-sequential
//! counterpart, demonstration labeling, the three-term training loss and
//! boundary refinement.

mod dataset;
mod loss;
mod model;
mod nonseq;
mod refine;
mod train;

pub use crate::observe::{ObstacleHistory, RelativeState};
pub use dataset::{
    collect_demonstrations, label_demonstrations, label_demonstrations_joint, label_trajectory, label_trajectory_joint,
    run_demonstrations, transitions, DemoConfig, Exploring, JointDataset, LabelConfig, Labeled, LabeledDataset, LabeledSet,
    Sample, SampleKey,
};
pub use loss::{barrier_loss, barrier_loss_value, margin, trace_loss, BarrierNet, LossBatch, LossTerms};
pub use model::{ego_feature_dim, ego_features, BarrierArch, BarrierHyper, BarrierModel, HistoryPrefix};
pub use nonseq::{JointSample, NonSeqArch, NonSeqBarrierModel};
pub use refine::{
    apply_action, refine_boundary, refine_sample, sample_boundary_states, NominalPolicy, ProbeControl, RefineAction,
    RefineConfig, RefineOutcome, RoundReport,
};
pub use train::{dataset_loss, invariance_violation_rate, sign_accuracy, train_initial, train_net, DataView, TrainConfig};

/// Scalar barrier value B(x, h).
pub fn barrier_value(m: &BarrierModel, x: &crate::dynamics::EgoState, h: &ObstacleHistory) -> crate::Result<f64> {
    m.value(x, h)
}

/// Pooled baseline value over the current relative states of all obstacles.
pub fn nonseq_barrier_value(m: &NonSeqBarrierModel, x: &crate::dynamics::EgoState, rels: &[RelativeState]) -> crate::Result<f64> {
    m.value(x, rels)
}
