use diffcomp::{Graph, Mlp, MlpSpec, NodeId, ParamBundle, Tensor};
use serde::{Deserialize, Serialize};

use super::model::{ego_feature_dim, ego_features, BarrierHyper};
use crate::dynamics::{DynamicsKind, EgoState};
use crate::observe::RelativeState;
use crate::seed;
use crate::{Error, Result};

/// Pooled-encoder barrier over the current relative states of all obstacles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonSeqArch {
    pub kind: DynamicsKind,
    pub obstacle_widths: Vec<usize>,
    pub ego_widths: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub activation: String,
}

impl NonSeqArch {
    pub fn new(kind: DynamicsKind) -> Self {
        Self {
            kind,
            obstacle_widths: vec![64, 64],
            ego_widths: vec![64, 64],
            head_hidden: vec![128, 128],
            activation: "tanh".into(),
        }
    }

    fn specs(&self) -> Result<(MlpSpec, MlpSpec, MlpSpec)> {
        let act = diffcomp::Activation::from_name(&self.activation)
            .ok_or_else(|| Error::InvalidInput(format!("unknown activation {:?}", self.activation)))?;
        let mut o = vec![RelativeState::DIM];
        o.extend_from_slice(&self.obstacle_widths);
        let mut e = vec![ego_feature_dim(self.kind)];
        e.extend_from_slice(&self.ego_widths);
        let pooled = *o.last().unwrap();
        let mut h = vec![pooled + *e.last().unwrap()];
        h.extend_from_slice(&self.head_hidden);
        h.push(1);
        Ok((MlpSpec::new(o, act)?, MlpSpec::new(e, act)?, MlpSpec::new(h, act)?))
    }
}

/// One training input: ego state and the relative states of the obstacles
/// in sensing range.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSample {
    pub x: EgoState,
    pub rels: Vec<RelativeState>,
}

#[derive(Clone, Debug)]
pub struct NonSeqBarrierModel {
    pub arch: NonSeqArch,
    pub hyper: BarrierHyper,
    pub params: ParamBundle,
    obstacle: Mlp,
    ego: Mlp,
    head: Mlp,
}

impl NonSeqBarrierModel {
    pub fn new(arch: NonSeqArch, hyper: BarrierHyper, seed_value: u64) -> Result<Self> {
        hyper.validate()?;
        let (o, e, h) = arch.specs()?;
        let mut rng = seed::rng(seed_value);
        let mut params = ParamBundle::new();
        let obstacle = Mlp::init(o, "obs", &mut params, &mut rng)?;
        let ego = Mlp::init(e, "ego", &mut params, &mut rng)?;
        let head = Mlp::init(h, "head", &mut params, &mut rng)?;
        Ok(Self { arch, hyper, params, obstacle, ego, head })
    }

    pub fn from_params(arch: NonSeqArch, hyper: BarrierHyper, params: ParamBundle) -> Result<Self> {
        hyper.validate()?;
        let (o, e, h) = arch.specs()?;
        let obstacle = Mlp::bind(o, "obs", &params)?;
        let ego = Mlp::bind(e, "ego", &params)?;
        let head = Mlp::bind(h, "head", &params)?;
        Ok(Self { arch, hyper, params, obstacle, ego, head })
    }

    pub fn obstacle_encoder(&self) -> &Mlp {
        &self.obstacle
    }

    pub fn ego_encoder(&self) -> &Mlp {
        &self.ego
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    /// Elementwise maximum of the obstacle encodings (zeros when empty).
    pub fn pooled(&self, rels: &[RelativeState]) -> Vec<f64> {
        let width = self.obstacle.spec().output();
        let mut pooled: Option<Vec<f64>> = None;
        for r in rels {
            let e = self.obstacle.forward_row(&self.params, &r.to_array());
            pooled = Some(match pooled {
                None => e,
                Some(p) => p.iter().zip(&e).map(|(a, b)| a.max(*b)).collect(),
            });
        }
        pooled.unwrap_or_else(|| vec![0.0; width])
    }

    pub fn value(&self, x: &EgoState, rels: &[RelativeState]) -> Result<f64> {
        if x.kind != self.arch.kind {
            return Err(Error::KindMismatch { expected: self.arch.kind.name(), got: x.kind.name() });
        }
        if rels.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("relative state".into()));
        }
        let mut d = self.pooled(rels);
        d.extend(self.ego.forward_row(&self.params, &ego_features(x)));
        Ok(self.head.forward_row(&self.params, &d)[0])
    }

    pub fn trace(&self, g: &mut Graph<'_>, samples: &[&JointSample]) -> Result<NodeId> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut rows: Vec<[f64; 4]> = Vec::new();
        let mut offsets = vec![0usize];
        for s in samples {
            if s.x.kind != self.arch.kind {
                return Err(Error::KindMismatch { expected: self.arch.kind.name(), got: s.x.kind.name() });
            }
            rows.extend(s.rels.iter().map(|r| r.to_array()));
            offsets.push(rows.len());
        }
        let width = self.obstacle.spec().output();
        let pooled = if rows.is_empty() {
            g.input(Tensor::zeros(&[samples.len(), width]))
        } else {
            let r = g.input(Tensor::from_rows(&rows)?);
            let enc = self.obstacle.trace(g, r)?;
            g.max_pool_groups(enc, &offsets)?
        };
        let feats: Vec<Vec<f64>> = samples.iter().map(|s| ego_features(&s.x)).collect();
        let fx = g.input(Tensor::from_rows(&feats)?);
        let e = self.ego.trace(g, fx)?;
        let d = g.concat_cols(&[pooled, e])?;
        Ok(self.head.trace(g, d)?)
    }
}
