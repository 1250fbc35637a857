use diffcomp::{Adam, AdamConfig};
use rand::Rng;

use super::loss::{barrier_loss, barrier_loss_value, BarrierNet, LossBatch, LossTerms};
use super::model::BarrierModel;
use super::{LabeledDataset, Sample};
use crate::seed;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Samples drawn from each of D_s, D_u and D per iteration.
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { iterations: 2000, batch: 64, lr: 1e-3, seed: 0 }
    }
}

/// Borrowed view of a dataset in the shape the loss consumes.
pub struct DataView<'a, I> {
    pub safe: Vec<&'a I>,
    pub unsafe_: Vec<&'a I>,
    pub pairs: Vec<(&'a I, &'a I)>,
    /// Oversampled subsets: when non-empty, half of the safe (unsafe) draws
    /// of each minibatch come from here.
    pub focus_safe: Vec<&'a I>,
    pub focus_unsafe: Vec<&'a I>,
}

impl<'a> DataView<'a, Sample> {
    pub fn of(d: &'a LabeledDataset) -> Self {
        Self {
            safe: d.safe.items().iter().map(|l| &l.sample).collect(),
            unsafe_: d.unsafe_.items().iter().map(|l| &l.sample).collect(),
            pairs: d.pairs.iter().map(|(a, b)| (a, b)).collect(),
            focus_safe: vec![],
            focus_unsafe: vec![],
        }
    }
}

impl<'a, I> DataView<'a, I> {
    pub fn validate(&self) -> Result<()> {
        let (s, u, p) = (self.safe.len(), self.unsafe_.len(), self.pairs.len());
        if s == 0 || u == 0 || p == 0 {
            return Err(Error::Dataset(format!("need non-empty safe, unsafe and pair sets (got {s}, {u}, {p})")));
        }
        Ok(())
    }

    /// Uniform draws with replacement, `n` from each set.
    pub fn minibatch(&self, n: usize, rng: &mut impl Rng) -> LossBatch<'a, I> {
        fn draw<T: Copy>(from: &[T], focus: &[T], n: usize, rng: &mut impl Rng) -> Vec<T> {
            let from_focus = if focus.is_empty() { 0 } else { n / 2 };
            let mut out: Vec<T> = (0..n - from_focus).map(|_| from[rng.random_range(0..from.len())]).collect();
            out.extend((0..from_focus).map(|_| focus[rng.random_range(0..focus.len())]));
            out
        }
        LossBatch {
            safe: draw(&self.safe, &self.focus_safe, n, rng),
            unsafe_: draw(&self.unsafe_, &self.focus_unsafe, n, rng),
            pairs: draw(&self.pairs, &[], n, rng),
        }
    }

    pub fn full(&self) -> LossBatch<'a, I> {
        LossBatch { safe: self.safe.clone(), unsafe_: self.unsafe_.clone(), pairs: self.pairs.clone() }
    }
}

/// Adam on minibatches of the three-term loss; returns the total loss of
/// every iteration.
pub fn train_net<M: BarrierNet>(m: &mut M, data: &DataView<'_, M::Input>, cfg: &TrainConfig) -> Result<Vec<f64>> {
    if cfg.iterations == 0 {
        return Ok(vec![]);
    }
    data.validate()?;
    let mut rng = seed::rng(cfg.seed);
    let mut adam = Adam::new(m.params(), AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch = data.minibatch(cfg.batch.max(1), &mut rng);
        let (terms, grads) = barrier_loss(m, &batch).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at iteration {it}")),
            e => e,
        })?;
        curve.push(terms.total());
        adam.step(m.params_mut(), &grads)?;
    }
    Ok(curve)
}

/// Phase-one training from demonstrations.
pub fn train_initial(mut m: BarrierModel, data: &LabeledDataset, cfg: &TrainConfig) -> Result<(BarrierModel, Vec<f64>)> {
    let curve = train_net(&mut m, &DataView::of(data), cfg)?;
    Ok((m, curve))
}

/// Loss over the whole dataset, evaluated in chunks.
pub fn dataset_loss<M: BarrierNet>(m: &M, data: &DataView<'_, M::Input>, chunk: usize) -> Result<LossTerms> {
    data.validate()?;
    let chunk = chunk.max(1);
    let mean_over = |len: usize, f: &dyn Fn(std::ops::Range<usize>) -> Result<f64>| -> Result<f64> {
        let mut acc = 0.0;
        let mut start = 0;
        while start < len {
            let end = (start + chunk).min(len);
            acc += f(start..end)? * (end - start) as f64;
            start = end;
        }
        Ok(acc / len as f64)
    };
    let one_s = [data.safe[0]];
    let one_u = [data.unsafe_[0]];
    let one_p = [data.pairs[0]];
    let safe = mean_over(data.safe.len(), &|r| {
        let b = LossBatch { safe: data.safe[r].to_vec(), unsafe_: one_u.to_vec(), pairs: one_p.to_vec() };
        Ok(barrier_loss_value(m, &b)?.safe)
    })?;
    let unsafe_ = mean_over(data.unsafe_.len(), &|r| {
        let b = LossBatch { safe: one_s.to_vec(), unsafe_: data.unsafe_[r].to_vec(), pairs: one_p.to_vec() };
        Ok(barrier_loss_value(m, &b)?.unsafe_)
    })?;
    let lie = mean_over(data.pairs.len(), &|r| {
        let b = LossBatch { safe: one_s.to_vec(), unsafe_: one_u.to_vec(), pairs: data.pairs[r].to_vec() };
        Ok(barrier_loss_value(m, &b)?.lie)
    })?;
    Ok(LossTerms { safe, unsafe_, lie })
}

/// Fraction of pairs whose invariance term is active: γ − Ḃ − κB > 0.
pub fn invariance_violation_rate(m: &BarrierModel, pairs: &[(Sample, Sample)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Dataset("no pairs to evaluate".into()));
    }
    let hp = m.hyper;
    let mut bad = 0usize;
    for (a, b) in pairs {
        let ba = m.value(&a.x, &a.h)?;
        let bb = m.value(&b.x, &b.h)?;
        let bdot = (bb - ba) / hp.dt;
        if hp.gamma - bdot - hp.kappa * ba > 0.0 {
            bad += 1;
        }
    }
    Ok(bad as f64 / pairs.len() as f64)
}

/// Fraction of labeled samples whose barrier sign matches the label
/// (B > 0 safe, B < 0 unsafe).
pub fn sign_accuracy(m: &BarrierModel, safe: &[&Sample], unsafe_: &[&Sample]) -> Result<f64> {
    let mut right = 0usize;
    for s in safe {
        right += (m.value(&s.x, &s.h)? > 0.0) as usize;
    }
    for s in unsafe_ {
        right += (m.value(&s.x, &s.h)? < 0.0) as usize;
    }
    let n = safe.len() + unsafe_.len();
    if n == 0 {
        return Err(Error::Dataset("no samples to score".into()));
    }
    Ok(right as f64 / n as f64)
}
