//! Pedestrian crowd world: spawning, stepping, collision checks and
//! trajectory records.

mod episode;
pub mod orca;
mod trajectory;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Control, DynamicsKind, DynamicsParams, EgoState};
use crate::geom::Vec2;
use crate::seed;
use crate::{Error, Result};

pub use episode::{run_batch, run_episode, run_episode_with, Controller, Decision, EpisodeOptions, Observation, ObstacleModel};
pub use orca::{orca_step, OrcaParams, OrcaStep};
pub use trajectory::{read_trajectory_csv, write_trajectory_csv, TrajectoryRecord};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    pub goal: Vec2,
    pub pref_speed: f64,
}

impl ObstacleState {
    pub fn new(position: Vec2, velocity: Vec2, radius: f64, goal: Vec2, pref_speed: f64) -> Result<Self> {
        let s = Self { position, velocity, radius, goal, pref_speed };
        if !(radius > 0.0) || !(pref_speed > 0.0) {
            return Err(Error::InvalidInput("obstacle radius and preferred speed must be positive".into()));
        }
        if !(position.is_finite() && velocity.is_finite() && goal.is_finite()) {
            return Err(Error::NonFinite("obstacle state".into()));
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PedestrianParams {
    pub radius: f64,
    pub pref_speed: f64,
}

impl Default for PedestrianParams {
    fn default() -> Self {
        Self { radius: 0.3, pref_speed: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub arena_half_extent: f64,
    pub obstacle_count: usize,
    pub ego_kind: DynamicsKind,
    pub ego_start: Vec2,
    pub ego_goal: Vec2,
    pub dt: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub collision_radius: f64,
    pub goal_tolerance: f64,
    pub pedestrian: PedestrianParams,
    pub orca: OrcaParams,
    pub dynamics: DynamicsParams,
}

impl Scenario {
    pub fn new(ego_kind: DynamicsKind, obstacle_count: usize, seed: u64) -> Self {
        Self {
            arena_half_extent: 10.0,
            obstacle_count,
            ego_kind,
            ego_start: Vec2::new(-5.0, 0.0),
            ego_goal: Vec2::new(5.0, 0.0),
            dt: 0.1,
            max_steps: 400,
            seed,
            collision_radius: 0.5,
            goal_tolerance: 0.5,
            pedestrian: PedestrianParams::default(),
            orca: OrcaParams::default(),
            dynamics: DynamicsParams::default(),
        }
    }

    /// Copy with a fresh seed and ego start/goal drawn from it: the start
    /// lies at a random angle on a circle of radius `endpoint_radius` and
    /// the goal diametrically opposite.
    pub fn randomized(&self, seed: u64, endpoint_radius: f64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, 0xE9_0));
        let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let dir = Vec2::from_angle(angle);
        Self { seed, ego_start: dir * endpoint_radius, ego_goal: dir * -endpoint_radius, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if !(self.collision_radius > 0.0) {
            return bad("collision_radius must be positive");
        }
        if !(self.arena_half_extent > 0.0) {
            return bad("arena_half_extent must be positive");
        }
        if self.ego_start == self.ego_goal {
            return bad("ego start and goal coincide");
        }
        if !(self.pedestrian.radius > 0.0 && self.pedestrian.pref_speed > 0.0) {
            return bad("pedestrian radius and speed must be positive");
        }
        if !(self.orca.time_horizon > 0.0 && self.orca.max_speed > 0.0) {
            return bad("ORCA time horizon and max speed must be positive");
        }
        Ok(())
    }

    pub fn initial_ego(&self) -> EgoState {
        let heading = (self.ego_goal - self.ego_start).angle();
        EgoState::at_rest(self.ego_kind, self.ego_start, heading)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub time_step: usize,
    pub ego: EgoState,
    pub obstacles: Vec<ObstacleState>,
}

/// Attempts per obstacle before declaring the request over-dense.
const PLACEMENT_ATTEMPTS: usize = 20_000;

fn random_point(rng: &mut impl Rng, half: f64) -> Vec2 {
    Vec2::new(rng.random_range(-half..=half), rng.random_range(-half..=half))
}

/// Seeded initial world: obstacles by rejection sampling with pairwise and
/// ego clearance, each with a random goal.
pub fn spawn_scenario(cfg: &Scenario) -> Result<WorldState> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive(cfg.seed, 0x5_9A_11));
    let half = cfg.arena_half_extent;
    let r = cfg.pedestrian.radius;
    let min_pair = 2.0 * r;
    let min_ego = cfg.collision_radius + 0.5;
    let cell = min_pair.max(1e-3);
    let key = |p: Vec2| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
    let mut grid: std::collections::HashMap<(i64, i64), Vec<Vec2>> = std::collections::HashMap::new();
    let mut obstacles = Vec::with_capacity(cfg.obstacle_count);
    while obstacles.len() < cfg.obstacle_count {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let p = random_point(&mut rng, half);
            if p.distance(cfg.ego_start) < min_ego {
                continue;
            }
            let (cx, cy) = key(p);
            let clear = (-1..=1).all(|dx| {
                (-1..=1).all(|dy| {
                    grid.get(&(cx + dx, cy + dy)).is_none_or(|b| b.iter().all(|q| q.distance(p) >= min_pair))
                })
            });
            if clear {
                placed = Some(p);
                break;
            }
        }
        let Some(p) = placed else {
            return Err(Error::OverDense { requested: cfg.obstacle_count, placed: obstacles.len() });
        };
        grid.entry(key(p)).or_default().push(p);
        let goal = random_point(&mut rng, half);
        obstacles.push(ObstacleState { position: p, velocity: Vec2::ZERO, radius: r, goal, pref_speed: cfg.pedestrian.pref_speed });
    }
    Ok(WorldState { time_step: 0, ego: cfg.initial_ego(), obstacles })
}

/// Draws a new goal for every obstacle that has arrived at its own.
pub fn resample_goals(obstacles: &mut [ObstacleState], half_extent: f64, rng: &mut impl Rng) {
    for o in obstacles {
        if o.position.distance(o.goal) <= o.radius {
            o.goal = random_point(rng, half_extent);
        }
    }
}

/// Smallest ego-obstacle center distance, infinite without obstacles.
pub fn min_distance(ego: Vec2, obstacles: &[ObstacleState]) -> f64 {
    obstacles.iter().map(|o| o.position.distance(ego)).fold(f64::INFINITY, f64::min)
}

pub fn detect_collision(w: &WorldState, collision_radius: f64) -> bool {
    min_distance(w.ego.position(), &w.obstacles) < collision_radius
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    ReachedGoal,
    Collided,
    Frozen,
    TimedOut,
}

impl Outcome {
    pub fn is_failure(self) -> bool {
        self != Outcome::ReachedGoal
    }

    pub fn name(self) -> &'static str {
        match self {
            Outcome::ReachedGoal => "reached_goal",
            Outcome::Collided => "collided",
            Outcome::Frozen => "frozen",
            Outcome::TimedOut => "timed_out",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    pub steps_taken: usize,
    pub ego_trajectory: Vec<EgoState>,
    /// Obstacle states per recorded step, aligned with `ego_trajectory`.
    pub obstacle_trajectories: Vec<Vec<ObstacleState>>,
    /// Control applied at each step; one fewer than the recorded states.
    pub controls: Vec<Control>,
    /// Candidate evaluations reported by the controller, summed over steps.
    pub evaluations: u64,
}

/// Fraction of failed episodes (collided, frozen or timed out).
pub fn collision_rate(results: &[EpisodeResult]) -> Result<f64> {
    outcome_failure_rate(results.iter().map(|r| r.outcome))
}

pub fn outcome_failure_rate(outcomes: impl IntoIterator<Item = Outcome>) -> Result<f64> {
    let (mut n, mut failed) = (0usize, 0usize);
    for o in outcomes {
        n += 1;
        failed += o.is_failure() as usize;
    }
    if n == 0 {
        return Err(Error::InvalidInput("failure rate of an empty result list".into()));
    }
    Ok(failed as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(obs: &[(f64, f64)]) -> WorldState {
        WorldState {
            time_step: 0,
            ego: EgoState::at_rest(DynamicsKind::SingleIntegrator, Vec2::ZERO, 0.0),
            obstacles: obs
                .iter()
                .map(|&(x, y)| ObstacleState::new(Vec2::new(x, y), Vec2::ZERO, 0.3, Vec2::ZERO, 1.0).unwrap())
                .collect(),
        }
    }

    #[test]
    fn collision_examples() {
        assert!(!detect_collision(&world(&[(1.0, 0.0)]), 0.5));
        assert!(detect_collision(&world(&[(0.3, 0.0)]), 0.5));
        assert!(!detect_collision(&world(&[]), 0.5));
    }

    #[test]
    fn failure_rate_examples() {
        use Outcome::*;
        assert_eq!(outcome_failure_rate([ReachedGoal, ReachedGoal, Collided, Frozen]).unwrap(), 0.5);
        assert_eq!(outcome_failure_rate([ReachedGoal, ReachedGoal]).unwrap(), 0.0);
        assert_eq!(outcome_failure_rate([Collided, Collided]).unwrap(), 1.0);
        assert_eq!(outcome_failure_rate([TimedOut]).unwrap(), 1.0);
        assert!(outcome_failure_rate([]).is_err());
    }

    #[test]
    fn empty_spawn_places_ego_at_start() {
        let cfg = Scenario::new(DynamicsKind::Dubins, 0, 1);
        let w = spawn_scenario(&cfg).unwrap();
        assert!(w.obstacles.is_empty());
        assert_eq!(w.ego.position(), cfg.ego_start);
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut cfg = Scenario::new(DynamicsKind::Dubins, 0, 1);
        cfg.ego_goal = cfg.ego_start;
        assert!(spawn_scenario(&cfg).is_err());
        let mut cfg = Scenario::new(DynamicsKind::Dubins, 0, 1);
        cfg.dt = 0.0;
        assert!(spawn_scenario(&cfg).is_err());
    }

    #[test]
    fn goals_resample_on_arrival() {
        let mut obs = world(&[(1.0, 1.0)]).obstacles;
        obs[0].goal = Vec2::new(1.1, 1.0);
        let mut rng = seed::rng(0);
        resample_goals(&mut obs, 10.0, &mut rng);
        assert_ne!(obs[0].goal, Vec2::new(1.1, 1.0));
    }
}
