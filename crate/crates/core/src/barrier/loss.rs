use diffcomp::{Graph, NodeId, ParamBundle};

use super::model::{BarrierHyper, BarrierModel};
use super::nonseq::{JointSample, NonSeqBarrierModel};
use super::Sample;
use crate::{Error, Result};

/// A trainable barrier network with a batched tape forward pass.
pub trait BarrierNet {
    type Input;

    fn params(&self) -> &ParamBundle;
    fn params_mut(&mut self) -> &mut ParamBundle;
    fn hyper(&self) -> BarrierHyper;
    /// Records B for every input; the returned node is `[n x 1]`.
    fn trace_values(&self, g: &mut Graph<'_>, inputs: &[&Self::Input]) -> Result<NodeId>;
}

impl BarrierNet for BarrierModel {
    type Input = Sample;

    fn params(&self) -> &ParamBundle {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamBundle {
        &mut self.params
    }

    fn hyper(&self) -> BarrierHyper {
        self.hyper
    }

    fn trace_values(&self, g: &mut Graph<'_>, inputs: &[&Sample]) -> Result<NodeId> {
        let xs: Vec<_> = inputs.iter().map(|s| &s.x).collect();
        let hs: Vec<_> = inputs.iter().map(|s| &s.h).collect();
        self.trace(g, &xs, &hs)
    }
}

impl BarrierNet for NonSeqBarrierModel {
    type Input = JointSample;

    fn params(&self) -> &ParamBundle {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamBundle {
        &mut self.params
    }

    fn hyper(&self) -> BarrierHyper {
        self.hyper
    }

    fn trace_values(&self, g: &mut Graph<'_>, inputs: &[&JointSample]) -> Result<NodeId> {
        self.trace(g, inputs)
    }
}

/// φ_γ(z) = max(γ + z, 0).
pub fn margin(gamma: f64, z: f64) -> f64 {
    (gamma + z).max(0.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub safe: f64,
    pub unsafe_: f64,
    pub lie: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.safe + self.unsafe_ + self.lie
    }
}

/// A minibatch: safe inputs, unsafe inputs and consecutive pairs.
pub struct LossBatch<'a, I> {
    pub safe: Vec<&'a I>,
    pub unsafe_: Vec<&'a I>,
    pub pairs: Vec<(&'a I, &'a I)>,
}

/// Records the three-term loss on `g`; returns the total node and the
/// per-term nodes.
pub fn trace_loss<M: BarrierNet>(m: &M, g: &mut Graph<'_>, batch: &LossBatch<'_, M::Input>) -> Result<(NodeId, [NodeId; 3])> {
    let (ns, nu, np) = (batch.safe.len(), batch.unsafe_.len(), batch.pairs.len());
    if ns == 0 || nu == 0 || np == 0 {
        return Err(Error::Dataset(format!(
            "loss needs safe, unsafe and pair samples (got {ns}, {nu}, {np})"
        )));
    }
    let hp = m.hyper();
    let mut all: Vec<&M::Input> = Vec::with_capacity(ns + nu + 2 * np);
    all.extend(&batch.safe);
    all.extend(&batch.unsafe_);
    all.extend(batch.pairs.iter().map(|p| p.0));
    all.extend(batch.pairs.iter().map(|p| p.1));
    let b = m.trace_values(g, &all)?;

    let bs = g.slice_rows(b, 0, ns)?;
    let neg = g.scale(bs, -1.0);
    let z = g.add_scalar(neg, hp.gamma);
    let z = g.relu(z);
    let t_safe = g.mean(z);

    let bu = g.slice_rows(b, ns, ns + nu)?;
    let z = g.add_scalar(bu, hp.gamma);
    let z = g.relu(z);
    let t_unsafe = g.mean(z);

    let ba = g.slice_rows(b, ns + nu, ns + nu + np)?;
    let bb = g.slice_rows(b, ns + nu + np, ns + nu + 2 * np)?;
    let diff = g.sub(bb, ba)?;
    let bdot = g.scale(diff, 1.0 / hp.dt);
    let kb = g.scale(ba, hp.kappa);
    let s = g.add(bdot, kb)?;
    let neg = g.scale(s, -1.0);
    let z = g.add_scalar(neg, hp.gamma);
    let z = g.relu(z);
    let t_lie = g.mean(z);

    let total = g.add(t_safe, t_unsafe)?;
    let total = g.add(total, t_lie)?;
    Ok((total, [t_safe, t_unsafe, t_lie]))
}

/// Loss value, per-term breakdown and parameter gradients.
pub fn barrier_loss<M: BarrierNet>(m: &M, batch: &LossBatch<'_, M::Input>) -> Result<(LossTerms, ParamBundle)> {
    let mut g = Graph::new(m.params());
    let (total, terms) = trace_loss(m, &mut g, batch)?;
    let t = LossTerms { safe: g.value(terms[0]).item(), unsafe_: g.value(terms[1]).item(), lie: g.value(terms[2]).item() };
    if !t.total().is_finite() {
        return Err(Error::NonFinite(format!("barrier loss {t:?}")));
    }
    let grads = g.backward(total)?;
    Ok((t, grads))
}

/// Loss value only.
pub fn barrier_loss_value<M: BarrierNet>(m: &M, batch: &LossBatch<'_, M::Input>) -> Result<LossTerms> {
    let mut g = Graph::new(m.params());
    let (_, terms) = trace_loss(m, &mut g, batch)?;
    Ok(LossTerms { safe: g.value(terms[0]).item(), unsafe_: g.value(terms[1]).item(), lie: g.value(terms[2]).item() })
}
