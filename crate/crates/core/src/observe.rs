//! Per-obstacle relative observations and the sliding windows built from them.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::{Error, Result};

/// Obstacle state relative to the ego: position and velocity differences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RelativeState {
    pub rel_position: Vec2,
    pub rel_velocity: Vec2,
}

impl RelativeState {
    pub const DIM: usize = 4;

    pub fn new(rel_position: Vec2, rel_velocity: Vec2) -> Self {
        Self { rel_position, rel_velocity }
    }

    pub fn between(ego_pos: Vec2, ego_vel: Vec2, obs_pos: Vec2, obs_vel: Vec2) -> Self {
        Self { rel_position: obs_pos - ego_pos, rel_velocity: obs_vel - ego_vel }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.rel_position.x, self.rel_position.y, self.rel_velocity.x, self.rel_velocity.y]
    }

    pub fn is_finite(self) -> bool {
        self.rel_position.is_finite() && self.rel_velocity.is_finite()
    }

    pub fn distance(self) -> f64 {
        self.rel_position.norm()
    }
}

/// Oldest-first window of the last `k` relative states of one obstacle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleHistory {
    steps: Vec<RelativeState>,
}

impl ObstacleHistory {
    pub fn new(steps: Vec<RelativeState>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidInput("obstacle history needs at least one step".into()));
        }
        if steps.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("obstacle history".into()));
        }
        Ok(Self { steps })
    }

    /// `k` copies of a single observation.
    pub fn constant(k: usize, s: RelativeState) -> Self {
        Self { steps: vec![s; k.max(1)] }
    }

    pub fn k(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self) -> &[RelativeState] {
        &self.steps
    }

    pub fn last(&self) -> RelativeState {
        *self.steps.last().unwrap()
    }

    /// Drops the oldest entry and appends `next`.
    pub fn advance(&self, next: RelativeState) -> Self {
        let mut steps = Vec::with_capacity(self.steps.len());
        steps.extend_from_slice(&self.steps[1..]);
        steps.push(next);
        Self { steps }
    }

    /// Every entry shifted by the same position offset (a rigid move of the
    /// ego in the opposite direction).
    pub fn shifted(&self, d: Vec2) -> Self {
        Self {
            steps: self
                .steps
                .iter()
                .map(|s| RelativeState::new(s.rel_position + d, s.rel_velocity))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.steps.iter().flat_map(|s| s.to_array()).collect()
    }
}

/// One recorded instant: ego position and planar velocity plus every
/// obstacle's position and velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub ego_position: Vec2,
    pub ego_velocity: Vec2,
    pub obstacles: Vec<(Vec2, Vec2)>,
}

impl Frame {
    pub fn relative(&self, j: usize) -> RelativeState {
        let (p, v) = self.obstacles[j];
        RelativeState::between(self.ego_position, self.ego_velocity, p, v)
    }
}

/// Bounded queue of recent frames, newest last.
#[derive(Clone, Debug, Default)]
pub struct FrameHistory {
    frames: VecDeque<Frame>,
    capacity: usize,
}

impl FrameHistory {
    pub fn new(capacity: usize) -> Self {
        Self { frames: VecDeque::with_capacity(capacity.max(1)), capacity: capacity.max(1) }
    }

    pub fn push(&mut self, f: Frame) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(f);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn latest(&self) -> Option<&Frame> {
        self.frames.back()
    }

    /// Length-`k` window for obstacle `j`; missing early entries replicate
    /// the oldest available observation.
    pub fn window(&self, j: usize, k: usize) -> Option<ObstacleHistory> {
        let n = self.frames.len();
        if n == 0 {
            return None;
        }
        let steps = (0..k)
            .map(|i| {
                let back = k - 1 - i;
                let idx = n.saturating_sub(1 + back);
                self.frames[idx].relative(j)
            })
            .collect();
        Some(ObstacleHistory { steps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(ego: f64, obs: f64) -> Frame {
        Frame {
            ego_position: Vec2::new(ego, 0.0),
            ego_velocity: Vec2::ZERO,
            obstacles: vec![(Vec2::new(obs, 0.0), Vec2::ZERO)],
        }
    }

    #[test]
    fn window_pads_with_oldest() {
        let mut h = FrameHistory::new(5);
        h.push(frame(0.0, 3.0));
        h.push(frame(1.0, 3.0));
        let w = h.window(0, 4).unwrap();
        let xs: Vec<f64> = w.steps().iter().map(|s| s.rel_position.x).collect();
        assert_eq!(xs, vec![3.0, 3.0, 3.0, 2.0]);
    }

    #[test]
    fn capacity_drops_oldest() {
        let mut h = FrameHistory::new(2);
        for i in 0..4 {
            h.push(frame(i as f64, 10.0));
        }
        assert_eq!(h.len(), 2);
        let w = h.window(0, 2).unwrap();
        assert_eq!(w.steps()[0].rel_position.x, 8.0);
    }

    #[test]
    fn advance_shifts_window() {
        let a = RelativeState::new(Vec2::new(1.0, 0.0), Vec2::ZERO);
        let b = RelativeState::new(Vec2::new(2.0, 0.0), Vec2::ZERO);
        let h = ObstacleHistory::new(vec![a, a, b]).unwrap().advance(b);
        assert_eq!(h.steps(), &[a, b, b]);
        assert!(ObstacleHistory::new(vec![]).is_err());
    }
}
