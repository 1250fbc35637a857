use std::collections::HashMap;

use rand::Rng;

use super::nonseq::JointSample;
use crate::dynamics::{planar_velocity, sample_controls_with, Control, ControlBounds, EgoState, Transition};
use crate::exec::{self, Execution};
use crate::geom::Vec2;
use crate::observe::{ObstacleHistory, RelativeState};
use crate::seed;
use crate::sim::{run_episode_with, Controller, Decision, EpisodeOptions, EpisodeResult, Observation, ObstacleModel, Scenario};
use crate::{Error, Result};

/// One barrier input (x, h).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: EgoState,
    pub h: ObstacleHistory,
}

/// Exact-equality identity of a sample (bit patterns of every number).
pub type SampleKey = Vec<u64>;

impl Sample {
    pub fn key(&self) -> SampleKey {
        self.x
            .components
            .iter()
            .copied()
            .chain(self.h.flatten())
            .map(f64::to_bits)
            .collect()
    }

    /// True when the newest relative position is inside the collision radius.
    pub fn in_collision(&self, collision_radius: f64) -> bool {
        self.h.last().distance() < collision_radius
    }

    /// Ego moved rigidly by `d`; every relative position shifts by `-d`.
    pub fn shifted(&self, d: Vec2) -> Self {
        Self { x: self.x.translated(d), h: self.h.shifted(-d) }
    }
}

/// A sample with what is needed to roll it forward: the ego's goal and the
/// obstacle's absolute state one step later.
#[derive(Clone, Debug, PartialEq)]
pub struct Labeled {
    pub sample: Sample,
    pub goal: Vec2,
    pub obstacle_next: (Vec2, Vec2),
}

impl Labeled {
    /// Successor sample after the ego moves from `x` to `next`.
    pub fn successor(&self, next: &EgoState, dt: f64) -> Sample {
        let v = planar_velocity(Some(&self.sample.x), next, dt);
        let (p, ov) = self.obstacle_next;
        let rel = RelativeState::between(next.position(), v, p, ov);
        Sample { x: next.clone(), h: self.sample.h.advance(rel) }
    }

    /// Copy with the ego moved rigidly by `d` (the obstacle stays put).
    pub fn shifted(&self, d: Vec2) -> Self {
        Self { sample: self.sample.shifted(d), ..self.clone() }
    }
}

/// Deduplicated set of labeled samples.
#[derive(Clone, Debug, Default)]
pub struct LabeledSet {
    items: Vec<Labeled>,
    index: HashMap<SampleKey, usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Labeled] {
        &self.items
    }

    pub fn contains(&self, s: &Sample) -> bool {
        self.index.contains_key(&s.key())
    }

    pub fn get(&self, key: &SampleKey) -> Option<&Labeled> {
        self.index.get(key).map(|&i| &self.items[i])
    }

    /// Adds `l` unless an identical sample is present; returns whether added.
    pub fn insert(&mut self, l: Labeled) -> bool {
        let key = l.sample.key();
        if self.index.contains_key(&key) {
            return false;
        }
        self.index.insert(key, self.items.len());
        self.items.push(l);
        true
    }

    pub fn remove(&mut self, s: &Sample) -> Option<Labeled> {
        let idx = self.index.remove(&s.key())?;
        let out = self.items.swap_remove(idx);
        if idx < self.items.len() {
            let moved = self.items[idx].sample.key();
            self.index.insert(moved, idx);
        }
        Some(out)
    }
}

/// Safe set D_s, unsafe set D_u and consecutive pairs D.
#[derive(Clone, Debug, Default)]
pub struct LabeledDataset {
    pub safe: LabeledSet,
    pub unsafe_: LabeledSet,
    pub pairs: Vec<(Sample, Sample)>,
}

impl LabeledDataset {
    /// Adds to D_s unless the sample is already unsafe.
    pub fn insert_safe(&mut self, l: Labeled) -> bool {
        if self.unsafe_.contains(&l.sample) {
            return false;
        }
        self.safe.insert(l)
    }

    /// Adds to D_u, removing the sample from D_s if present.
    pub fn insert_unsafe(&mut self, l: Labeled) -> bool {
        self.safe.remove(&l.sample);
        self.unsafe_.insert(l)
    }

    pub fn merge(&mut self, other: LabeledDataset) {
        for l in other.unsafe_.items {
            self.insert_unsafe(l);
        }
        for l in other.safe.items {
            self.insert_safe(l);
        }
        self.pairs.extend(other.pairs);
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.safe.len(), self.unsafe_.len(), self.pairs.len())
    }

    /// All three sets non-empty.
    pub fn validate(&self) -> Result<()> {
        let (s, u, p) = self.counts();
        if s == 0 || u == 0 || p == 0 {
            return Err(Error::Dataset(format!("need non-empty safe, unsafe and pair sets (got {s}, {u}, {p})")));
        }
        Ok(())
    }
}

/// Joint-obstacle dataset for the pooled baseline.
#[derive(Clone, Debug, Default)]
pub struct JointDataset {
    pub safe: Vec<JointSample>,
    pub unsafe_: Vec<JointSample>,
    pub pairs: Vec<(JointSample, JointSample)>,
}

impl JointDataset {
    pub fn merge(&mut self, other: JointDataset) {
        self.safe.extend(other.safe);
        self.unsafe_.extend(other.unsafe_);
        self.pairs.extend(other.pairs);
    }

    pub fn validate(&self) -> Result<()> {
        let (s, u, p) = (self.safe.len(), self.unsafe_.len(), self.pairs.len());
        if s == 0 || u == 0 || p == 0 {
            return Err(Error::Dataset(format!("need non-empty safe, unsafe and pair sets (got {s}, {u}, {p})")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelConfig {
    pub k: usize,
    /// Steps ahead that must stay collision-free for a safe label.
    pub horizon: usize,
    pub sensing_range: f64,
    pub collision_radius: f64,
    pub dt: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self { k: 5, horizon: 5, sensing_range: 5.0, collision_radius: 0.5, dt: 0.1 }
    }
}

/// Relative states `rel[t][j]` of a recorded trajectory.
fn relative_track(r: &EpisodeResult, dt: f64) -> Vec<Vec<RelativeState>> {
    (0..r.ego_trajectory.len())
        .map(|t| {
            let ego = &r.ego_trajectory[t];
            let prev = t.checked_sub(1).map(|p| &r.ego_trajectory[p]);
            let v = planar_velocity(prev, ego, dt);
            r.obstacle_trajectories[t]
                .iter()
                .map(|o| RelativeState::between(ego.position(), v, o.position, o.velocity))
                .collect()
        })
        .collect()
}

fn window(rel: &[Vec<RelativeState>], t: usize, j: usize, k: usize) -> ObstacleHistory {
    let steps = (0..k).map(|i| rel[(t + i + 1).saturating_sub(k)][j]).collect();
    ObstacleHistory::new(steps).expect("recorded states are finite")
}

/// Per-obstacle labels for one recorded trajectory: unsafe when in
/// collision, safe when the next `horizon` steps stay clear of that
/// obstacle, excluded otherwise; consecutive pairs start at safe samples.
pub fn label_trajectory(r: &EpisodeResult, goal: Vec2, cfg: &LabelConfig) -> LabeledDataset {
    let mut out = LabeledDataset::default();
    let n = r.ego_trajectory.len();
    if n == 0 {
        return out;
    }
    let rel = relative_track(r, cfg.dt);
    let m = rel[0].len();
    let hit = |t: usize, j: usize| rel[t][j].distance() < cfg.collision_radius;
    for t in 0..n {
        for j in 0..m {
            if rel[t][j].distance() > cfg.sensing_range {
                continue;
            }
            let sample = Sample { x: r.ego_trajectory[t].clone(), h: window(&rel, t, j, cfg.k) };
            let o = &r.obstacle_trajectories[t][j];
            let obstacle_next = match r.obstacle_trajectories.get(t + 1) {
                Some(next) => (next[j].position, next[j].velocity),
                None => (o.position + o.velocity * cfg.dt, o.velocity),
            };
            let l = Labeled { sample, goal, obstacle_next };
            if hit(t, j) {
                out.insert_unsafe(l);
            } else if (t + 1..n.min(t + 1 + cfg.horizon)).all(|s| !hit(s, j)) {
                if t + 1 < n {
                    let next = Sample { x: r.ego_trajectory[t + 1].clone(), h: window(&rel, t + 1, j, cfg.k) };
                    out.pairs.push((l.sample.clone(), next));
                }
                out.insert_safe(l);
            }
        }
    }
    out
}

/// Joint labels: the sample at `t` holds every obstacle in range; unsafe if
/// any is in collision, safe if no collision with any obstacle follows
/// within the horizon. A pair's successor keeps the obstacle set of `t`.
pub fn label_trajectory_joint(r: &EpisodeResult, cfg: &LabelConfig) -> JointDataset {
    let mut out = JointDataset::default();
    let n = r.ego_trajectory.len();
    if n == 0 {
        return out;
    }
    let rel = relative_track(r, cfg.dt);
    let any_hit = |t: usize| rel[t].iter().any(|s| s.distance() < cfg.collision_radius);
    for t in 0..n {
        let in_range: Vec<usize> = (0..rel[t].len()).filter(|&j| rel[t][j].distance() <= cfg.sensing_range).collect();
        let pick = |s: usize| JointSample { x: r.ego_trajectory[s].clone(), rels: in_range.iter().map(|&j| rel[s][j]).collect() };
        if any_hit(t) {
            out.unsafe_.push(pick(t));
        } else if (t + 1..n.min(t + 1 + cfg.horizon)).all(|s| !any_hit(s)) {
            if t + 1 < n {
                out.pairs.push((pick(t), pick(t + 1)));
            }
            out.safe.push(pick(t));
        }
    }
    out
}

/// Nominal controller with epsilon-uniform exploration.
pub struct Exploring<'a> {
    pub inner: &'a dyn Controller,
    pub epsilon: f64,
    pub bounds: ControlBounds,
}

impl Controller for Exploring<'_> {
    fn name(&self) -> String {
        format!("{}+explore", self.inner.name())
    }

    fn kind(&self) -> crate::dynamics::DynamicsKind {
        self.inner.kind()
    }

    fn decide(&self, obs: &Observation<'_>) -> Result<Decision> {
        let mut rng = seed::rng(seed::derive(obs.seed, 0xE4_9));
        if rng.random::<f64>() < self.epsilon {
            let u = sample_controls_with(self.kind(), &self.bounds, 1, &mut rng).pop().unwrap();
            return Ok(Decision::act(u, 1));
        }
        match self.inner.decide(obs)?.control {
            Some(u) => Ok(Decision::act(u, 1)),
            None => Ok(Decision::act(Control::zero(self.kind()), 1)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DemoConfig {
    pub scenario: Scenario,
    pub n_trajectories: usize,
    pub endpoint_radius: f64,
    pub exploration: f64,
    pub label: LabelConfig,
    pub seed: u64,
    pub exec: Execution,
}

impl DemoConfig {
    pub fn new(scenario: Scenario, n_trajectories: usize) -> Self {
        let label = LabelConfig { collision_radius: scenario.collision_radius, dt: scenario.dt, ..Default::default() };
        Self { scenario, n_trajectories, endpoint_radius: 5.0, exploration: 0.2, label, seed: 0, exec: Execution::Parallel }
    }

    pub fn episode_scenario(&self, i: usize) -> Scenario {
        self.scenario.randomized(seed::derive(self.seed, i as u64), self.endpoint_radius)
    }
}

/// Demonstration rollouts, continuing through collisions so that unsafe
/// states are observed.
pub fn run_demonstrations(cfg: &DemoConfig, nominal: &dyn Controller) -> Result<Vec<(Scenario, EpisodeResult)>> {
    if cfg.n_trajectories == 0 {
        return Err(Error::Dataset("no demonstration trajectories requested".into()));
    }
    let explorer = Exploring { inner: nominal, epsilon: cfg.exploration, bounds: ControlBounds::default_for(nominal.kind()) };
    let opts = EpisodeOptions { stop_on_collision: false, ..Default::default() };
    let model = ObstacleModel::Orca(cfg.scenario.orca);
    exec::map_range(cfg.exec, cfg.n_trajectories, |i| {
        let sc = cfg.episode_scenario(i);
        run_episode_with(&sc, &explorer, model, opts).map(|r| (sc, r))
    })
    .into_iter()
    .collect()
}

pub fn label_demonstrations(episodes: &[(Scenario, EpisodeResult)], cfg: &LabelConfig) -> Result<LabeledDataset> {
    let mut data = LabeledDataset::default();
    for (sc, r) in episodes {
        data.merge(label_trajectory(r, sc.ego_goal, cfg));
    }
    if data.unsafe_.is_empty() {
        return Err(Error::Dataset(
            "demonstrations contain no unsafe samples; raise obstacle density, exploration or trajectory count".into(),
        ));
    }
    data.validate()?;
    Ok(data)
}

pub fn label_demonstrations_joint(episodes: &[(Scenario, EpisodeResult)], cfg: &LabelConfig) -> Result<JointDataset> {
    let mut data = JointDataset::default();
    for (_, r) in episodes {
        data.merge(label_trajectory_joint(r, cfg));
    }
    data.validate()?;
    Ok(data)
}

/// Runs the nominal controller and labels the result.
pub fn collect_demonstrations(cfg: &DemoConfig, nominal: &dyn Controller) -> Result<LabeledDataset> {
    let episodes = run_demonstrations(cfg, nominal)?;
    label_demonstrations(&episodes, &cfg.label)
}

/// `(x, u, x')` transitions of recorded rollouts, for fitting dynamics.
pub fn transitions(episodes: &[(Scenario, EpisodeResult)]) -> Vec<Transition> {
    episodes
        .iter()
        .flat_map(|(_, r)| {
            r.controls.iter().enumerate().map(move |(t, u)| Transition {
                x: r.ego_trajectory[t].clone(),
                u: u.clone(),
                next: r.ego_trajectory[t + 1].clone(),
            })
        })
        .collect()
}
