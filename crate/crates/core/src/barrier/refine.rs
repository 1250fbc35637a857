use std::collections::HashSet;

use rand_distr::{Distribution, Normal};

use super::dataset::{Labeled, LabeledDataset, SampleKey};
use super::loss::LossTerms;
use super::model::BarrierModel;
use super::train::{dataset_loss, train_net, DataView, TrainConfig};
use crate::dynamics::{sample_controls_with, Control, ControlBounds, EgoPredictor, EgoState};
use crate::exec::{self, Execution};
use crate::geom::Vec2;
use crate::seed;
use crate::{Error, Result};

/// Goal-seeking control used to roll boundary states forward.
pub trait NominalPolicy: Send + Sync {
    /// `obstacles_next` are obstacle positions one step ahead.
    fn nominal(&self, x: &EgoState, goal: Vec2, obstacles_next: &[Vec2], seed: u64) -> Result<Control>;
}

/// Second control tried on a state whose nominal successor is safe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeControl {
    /// One uniform draw from the control box.
    Random,
    /// Best of `n` uniform draws by barrier value of the successor.
    BestOf(usize),
}

#[derive(Clone, Debug)]
pub struct RefineConfig {
    pub theta: f64,
    pub jitter_sigma: f64,
    pub samples_per_seed: usize,
    /// Safe samples drawn as seeds per round.
    pub seed_pairs: usize,
    /// Upper bound on boundary states processed per round.
    pub max_boundary_states: usize,
    pub max_rounds: usize,
    pub tolerance: f64,
    pub train: TrainConfig,
    pub probe: ProbeControl,
    pub collision_radius: f64,
    pub bounds: ControlBounds,
    pub seed: u64,
    pub exec: Execution,
}

impl RefineConfig {
    pub fn new(bounds: ControlBounds) -> Self {
        Self {
            theta: 0.05,
            jitter_sigma: 0.2,
            samples_per_seed: 100,
            seed_pairs: 200,
            max_boundary_states: 4000,
            max_rounds: 10,
            tolerance: 1e-3,
            train: TrainConfig { iterations: 300, ..Default::default() },
            probe: ProbeControl::Random,
            collision_radius: 0.5,
            bounds,
            seed: 0,
            exec: Execution::Parallel,
        }
    }
}

/// What one boundary state contributes to the dataset.
#[derive(Clone, Debug, PartialEq)]
pub enum RefineAction {
    /// The state or its nominal successor collides: both become unsafe.
    Unsafe { current: Labeled, successor: Labeled },
    /// Nominal successor is safe: the state becomes safe, and the probe
    /// successor becomes unsafe if it collides.
    Safe { current: Labeled, probe_unsafe: Option<Labeled> },
}

fn successor_labeled(l: &Labeled, next: &EgoState, dt: f64) -> Labeled {
    let sample = l.successor(next, dt);
    let (p, v) = l.obstacle_next;
    Labeled { sample, goal: l.goal, obstacle_next: (p + v * dt, v) }
}

/// One pass of the refinement rule for a single boundary state.
pub fn refine_sample(
    l: &Labeled,
    model: &BarrierModel,
    predictor: &dyn EgoPredictor,
    nominal: &dyn NominalPolicy,
    cfg: &RefineConfig,
    seed_value: u64,
) -> Result<RefineAction> {
    let dt = model.hyper.dt;
    let r = cfg.collision_radius;
    let u = nominal.nominal(&l.sample.x, l.goal, &[l.obstacle_next.0], seed_value)?;
    let x1 = predictor.predict(&l.sample.x, &u)?;
    let succ = successor_labeled(l, &x1, dt);
    if l.sample.in_collision(r) || succ.sample.in_collision(r) {
        return Ok(RefineAction::Unsafe { current: l.clone(), successor: succ });
    }
    let mut rng = seed::rng(seed::derive(seed_value, 0x9B0E));
    let kind = l.sample.x.kind;
    let probe = match cfg.probe {
        ProbeControl::Random => {
            let u = sample_controls_with(kind, &cfg.bounds, 1, &mut rng).pop().unwrap();
            successor_labeled(l, &predictor.predict(&l.sample.x, &u)?, dt)
        }
        ProbeControl::BestOf(n) => {
            let mut best: Option<(f64, Labeled)> = None;
            for u in sample_controls_with(kind, &cfg.bounds, n.max(1), &mut rng) {
                let s = successor_labeled(l, &predictor.predict(&l.sample.x, &u)?, dt);
                let b = model.value(&s.sample.x, &s.sample.h)?;
                if best.as_ref().is_none_or(|(bb, _)| b > *bb) {
                    best = Some((b, s));
                }
            }
            best.unwrap().1
        }
    };
    let probe_unsafe = probe.sample.in_collision(r).then_some(probe);
    Ok(RefineAction::Safe { current: l.clone(), probe_unsafe })
}

/// Applies an action; returns the keys added to D_s and to D_u.
pub fn apply_action(data: &mut LabeledDataset, action: RefineAction) -> (Vec<SampleKey>, Vec<SampleKey>) {
    let (mut s, mut u) = (vec![], vec![]);
    match action {
        RefineAction::Unsafe { current, successor } => {
            u.push(current.sample.key());
            u.push(successor.sample.key());
            data.insert_unsafe(current);
            data.insert_unsafe(successor);
        }
        RefineAction::Safe { current, probe_unsafe } => {
            s.push(current.sample.key());
            data.insert_safe(current);
            if let Some(p) = probe_unsafe {
                u.push(p.sample.key());
                data.insert_unsafe(p);
            }
        }
    }
    (s, u)
}

/// Random safe-labeled seed pairs and Gaussian position jitters of them,
/// kept where the barrier value lies in `[0, θ)`.
pub fn sample_boundary_states(model: &BarrierModel, data: &LabeledDataset, cfg: &RefineConfig, round_seed: u64) -> Result<Vec<Labeled>> {
    let items = data.safe.items();
    if items.is_empty() {
        return Ok(vec![]);
    }
    let mut rng = seed::rng(round_seed);
    let n_seeds = cfg.seed_pairs.min(items.len());
    let seeds: Vec<usize> = rand::seq::index::sample(&mut rng, items.len(), n_seeds).into_vec();
    let normal = Normal::new(0.0, cfg.jitter_sigma.max(0.0)).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let jitters: Vec<Vec<Vec2>> = seeds
        .iter()
        .map(|_| (0..cfg.samples_per_seed).map(|_| Vec2::new(normal.sample(&mut rng), normal.sample(&mut rng))).collect())
        .collect();
    let near = |l: &Labeled| -> Result<bool> {
        let b = model.value(&l.sample.x, &l.sample.h)?;
        Ok((0.0..cfg.theta).contains(&b))
    };
    let per_seed: Vec<Result<Vec<Labeled>>> = exec::map_range(cfg.exec, seeds.len(), |i| {
        let base = &items[seeds[i]];
        let mut out = vec![];
        if near(base)? {
            out.push(base.clone());
        }
        for d in &jitters[i] {
            let j = base.shifted(*d);
            if near(&j)? {
                out.push(j);
            }
        }
        Ok(out)
    });
    let mut out = Vec::new();
    for r in per_seed {
        out.extend(r?);
    }
    out.truncate(cfg.max_boundary_states);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundReport {
    pub boundary_states: usize,
    pub marked_unsafe: usize,
    pub marked_safe: usize,
    pub probe_unsafe: usize,
    pub loss: LossTerms,
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub model: BarrierModel,
    pub data: LabeledDataset,
    pub rounds: Vec<RoundReport>,
    /// Training loss of every phase-two iteration.
    pub curve: Vec<f64>,
}

/// Boundary refinement: relabel and augment near-boundary states by
/// rolling them forward with the learned dynamics, retrain, and repeat
/// until the full-dataset loss settles.
pub fn refine_boundary(
    mut model: BarrierModel,
    mut data: LabeledDataset,
    predictor: &dyn EgoPredictor,
    nominal: &dyn NominalPolicy,
    cfg: &RefineConfig,
) -> Result<RefineOutcome> {
    if predictor.kind() != model.arch.kind {
        return Err(Error::KindMismatch { expected: model.arch.kind.name(), got: predictor.kind().name() });
    }
    data.validate()?;
    let mut rounds = Vec::new();
    let mut curve = Vec::new();
    let mut focus_safe: HashSet<SampleKey> = HashSet::new();
    let mut focus_unsafe: HashSet<SampleKey> = HashSet::new();
    let mut prev_loss: Option<f64> = None;
    for round in 0..cfg.max_rounds {
        let round_seed = seed::derive(cfg.seed, round as u64);
        let boundary = sample_boundary_states(&model, &data, cfg, round_seed)?;
        if boundary.is_empty() {
            let loss = dataset_loss(&model, &DataView::of(&data), 512)?;
            rounds.push(RoundReport { boundary_states: 0, marked_unsafe: 0, marked_safe: 0, probe_unsafe: 0, loss });
            break;
        }
        let actions: Vec<Result<RefineAction>> = exec::map_range(cfg.exec, boundary.len(), |i| {
            refine_sample(&boundary[i], &model, predictor, nominal, cfg, seed::derive(round_seed, i as u64 + 1))
        });
        let (mut marked_unsafe, mut marked_safe, mut probe_unsafe) = (0, 0, 0);
        for a in actions {
            let a = a?;
            match &a {
                RefineAction::Unsafe { .. } => marked_unsafe += 1,
                RefineAction::Safe { probe_unsafe: p, .. } => {
                    marked_safe += 1;
                    probe_unsafe += p.is_some() as usize;
                }
            }
            let (s, u) = apply_action(&mut data, a);
            for k in &u {
                focus_safe.remove(k);
            }
            focus_safe.extend(s);
            focus_unsafe.extend(u);
        }

        let mut view = DataView::of(&data);
        view.focus_safe = focus_safe.iter().filter_map(|k| data.safe.get(k)).map(|l| &l.sample).collect();
        view.focus_unsafe = focus_unsafe.iter().filter_map(|k| data.unsafe_.get(k)).map(|l| &l.sample).collect();
        // HashSet order is arbitrary; sort for reproducible minibatches.
        view.focus_safe.sort_by_key(|s| s.key());
        view.focus_unsafe.sort_by_key(|s| s.key());
        let train = TrainConfig { seed: seed::derive(round_seed, 0x7A1), ..cfg.train.clone() };
        curve.extend(train_net(&mut model, &view, &train)?);
        let loss = dataset_loss(&model, &DataView::of(&data), 512)?;
        rounds.push(RoundReport { boundary_states: boundary.len(), marked_unsafe, marked_safe, probe_unsafe, loss });
        let total = loss.total();
        if let Some(p) = prev_loss {
            if (total - p).abs() / p.abs().max(1e-12) < cfg.tolerance {
                break;
            }
        }
        prev_loss = Some(total);
    }
    Ok(RefineOutcome { model, data, rounds, curve })
}
