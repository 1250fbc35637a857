use super::orca::{constant_velocity_step, orca_step, OrcaParams};
use super::{min_distance, resample_goals, spawn_scenario, EpisodeResult, ObstacleState, Outcome, Scenario};
use crate::dynamics::{planar_velocity, step_true, Control, DynamicsKind, EgoState};
use crate::geom::{wrap_angle, Vec2};
use crate::observe::{Frame, FrameHistory};
use crate::seed;
use crate::{Error, Result};

/// What a controller sees at one decision step.
pub struct Observation<'a> {
    pub step: usize,
    pub dt: f64,
    pub ego: &'a EgoState,
    pub goal: Vec2,
    pub obstacles: &'a [ObstacleState],
    pub history: &'a FrameHistory,
    /// Seed reserved for this decision's sampling.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    /// `None` declares that no admissible control was found.
    pub control: Option<Control>,
    pub evaluations: u64,
}

impl Decision {
    pub fn act(control: Control, evaluations: u64) -> Self {
        Self { control: Some(control), evaluations }
    }

    pub fn stop(evaluations: u64) -> Self {
        Self { control: None, evaluations }
    }
}

pub trait Controller: Send + Sync {
    fn name(&self) -> String;
    fn kind(&self) -> DynamicsKind;
    fn decide(&self, obs: &Observation<'_>) -> Result<Decision>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObstacleModel {
    Orca(OrcaParams),
    ConstantVelocity,
}

#[derive(Clone, Copy, Debug)]
pub struct EpisodeOptions {
    /// End the episode at the first collision.
    pub stop_on_collision: bool,
    /// Frames of history handed to the controller.
    pub history: usize,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self { stop_on_collision: true, history: 8 }
    }
}

fn frame(prev: Option<&EgoState>, ego: &EgoState, obstacles: &[ObstacleState], dt: f64) -> Frame {
    Frame {
        ego_position: ego.position(),
        ego_velocity: planar_velocity(prev, ego, dt),
        obstacles: obstacles.iter().map(|o| (o.position, o.velocity)).collect(),
    }
}

fn lerp_ego(a: &EgoState, b: &EgoState) -> EgoState {
    let mut c: Vec<f64> = a.components.iter().zip(&b.components).map(|(x, y)| 0.5 * (x + y)).collect();
    for &i in a.kind.angle_components() {
        c[i] = wrap_angle(a.components[i] + 0.5 * wrap_angle(b.components[i] - a.components[i]));
    }
    EgoState { kind: a.kind, components: c }
}

fn lerp_obstacles(a: &[ObstacleState], b: &[ObstacleState]) -> Vec<ObstacleState> {
    a.iter()
        .zip(b)
        .map(|(x, y)| ObstacleState { position: x.position.lerp(y.position, 0.5), velocity: y.velocity, ..*y })
        .collect()
}

pub fn run_episode(cfg: &Scenario, controller: &dyn Controller, world_model: ObstacleModel) -> Result<EpisodeResult> {
    run_episode_with(cfg, controller, world_model, EpisodeOptions::default())
}

/// Steps ego and crowd until the goal is reached, a collision occurs, the
/// controller gives up, or the step budget runs out. Collisions are checked
/// at each step's end and at its midpoint; a midpoint hit is recorded as
/// the final frame. Controller errors end the episode as frozen.
pub fn run_episode_with(
    cfg: &Scenario,
    controller: &dyn Controller,
    world_model: ObstacleModel,
    opts: EpisodeOptions,
) -> Result<EpisodeResult> {
    if controller.kind() != cfg.ego_kind {
        return Err(Error::KindMismatch { expected: cfg.ego_kind.name(), got: controller.kind().name() });
    }
    let world = spawn_scenario(cfg)?;
    let mut goal_rng = seed::rng(seed::derive(cfg.seed, 0x60A1));
    let mut ego = world.ego;
    let mut obstacles = world.obstacles;
    let mut history = FrameHistory::new(opts.history);
    history.push(frame(None, &ego, &obstacles, cfg.dt));
    let mut ego_traj = vec![ego.clone()];
    let mut obs_traj = vec![obstacles.clone()];
    let mut controls = Vec::new();
    let mut evaluations = 0u64;
    let mut collided = false;

    let finish = |outcome, ego_traj: Vec<EgoState>, obs_traj, controls, evaluations| {
        Ok(EpisodeResult {
            outcome,
            steps_taken: ego_traj.len() - 1,
            ego_trajectory: ego_traj,
            obstacle_trajectories: obs_traj,
            controls,
            evaluations,
        })
    };

    if ego.position().distance(cfg.ego_goal) <= cfg.goal_tolerance {
        return finish(Outcome::ReachedGoal, ego_traj, obs_traj, controls, evaluations);
    }

    for step in 0..cfg.max_steps {
        let obs = Observation {
            step,
            dt: cfg.dt,
            ego: &ego,
            goal: cfg.ego_goal,
            obstacles: &obstacles,
            history: &history,
            seed: seed::derive(cfg.seed, step as u64 + 1),
        };
        let control = match controller.decide(&obs) {
            Ok(d) => {
                evaluations += d.evaluations;
                d.control
            }
            Err(_) => None,
        };
        let Some(u) = control else {
            return finish(if collided { Outcome::Collided } else { Outcome::Frozen }, ego_traj, obs_traj, controls, evaluations);
        };
        let next_ego = step_true(&ego, &u, cfg.dt, &cfg.dynamics)?;
        let mut next_obs = match world_model {
            ObstacleModel::Orca(p) => orca_step(&obstacles, cfg.dt, &p).obstacles,
            ObstacleModel::ConstantVelocity => constant_velocity_step(&obstacles, cfg.dt),
        };
        resample_goals(&mut next_obs, cfg.arena_half_extent, &mut goal_rng);

        let mid_ego = lerp_ego(&ego, &next_ego);
        let mid_obs = lerp_obstacles(&obstacles, &next_obs);
        let mid_hit = min_distance(mid_ego.position(), &mid_obs) < cfg.collision_radius;
        let end_hit = min_distance(next_ego.position(), &next_obs) < cfg.collision_radius;

        controls.push(u);
        if mid_hit && !end_hit && opts.stop_on_collision {
            ego_traj.push(mid_ego);
            obs_traj.push(mid_obs);
            return finish(Outcome::Collided, ego_traj, obs_traj, controls, evaluations);
        }
        history.push(frame(Some(&ego), &next_ego, &next_obs, cfg.dt));
        ego = next_ego;
        obstacles = next_obs;
        ego_traj.push(ego.clone());
        obs_traj.push(obstacles.clone());
        if end_hit {
            collided = true;
            if opts.stop_on_collision {
                return finish(Outcome::Collided, ego_traj, obs_traj, controls, evaluations);
            }
        }
        if ego.position().distance(cfg.ego_goal) <= cfg.goal_tolerance {
            return finish(if collided { Outcome::Collided } else { Outcome::ReachedGoal }, ego_traj, obs_traj, controls, evaluations);
        }
    }
    finish(if collided { Outcome::Collided } else { Outcome::TimedOut }, ego_traj, obs_traj, controls, evaluations)
}

/// One episode per scenario, in scenario order.
pub fn run_batch(
    scenarios: &[Scenario],
    controller: &dyn Controller,
    world_model: ObstacleModel,
    exec: crate::exec::Execution,
) -> Result<Vec<EpisodeResult>> {
    crate::exec::map(exec, scenarios, |s| run_episode(s, controller, world_model)).into_iter().collect()
}
