//! Optimal reciprocal collision avoidance between pedestrians.
//!
//! Port of the agent-agent part of the reference RVO2 library: every
//! neighbor contributes a half-plane of permitted velocities, and an
//! incremental 2-D linear program picks the permitted velocity closest to
//! the preferred one, falling back to the least-violating velocity when the
//! half-planes have no common point.

use serde::{Deserialize, Serialize};

use super::ObstacleState;
use crate::geom::Vec2;

const EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrcaParams {
    pub time_horizon: f64,
    pub neighbor_dist: f64,
    pub max_neighbors: usize,
    pub max_speed: f64,
}

impl Default for OrcaParams {
    fn default() -> Self {
        Self { time_horizon: 2.0, neighbor_dist: 5.0, max_neighbors: 10, max_speed: 1.5 }
    }
}

/// Directed line; the permitted half-plane lies to its left.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line {
    pub point: Vec2,
    pub direction: Vec2,
}

impl Line {
    /// Positive when `v` lies strictly on the forbidden side.
    pub fn violation(&self, v: Vec2) -> f64 {
        self.direction.det(self.point - v)
    }
}

/// Result of one simulation step for the whole crowd.
#[derive(Clone, Debug)]
pub struct OrcaStep {
    pub obstacles: Vec<ObstacleState>,
    /// Pairs `(i, j)` with coincident centers whose constraint was skipped.
    pub faults: Vec<(usize, usize)>,
    /// Agents whose program had no feasible point.
    pub infeasible: Vec<usize>,
}

pub fn preferred_velocity(o: &ObstacleState, dt: f64) -> Vec2 {
    let to_goal = o.goal - o.position;
    let d = to_goal.norm();
    if d == 0.0 {
        return Vec2::ZERO;
    }
    let speed = o.pref_speed.min(d / dt);
    to_goal * (speed / d)
}

/// Neighbor index lists within `neighbor_dist`, nearest first.
pub fn neighbors(obstacles: &[ObstacleState], params: &OrcaParams) -> Vec<Vec<usize>> {
    let n = obstacles.len();
    let range = params.neighbor_dist;
    let range_sq = range * range;
    let cell = range.max(1e-6);
    let key = |p: Vec2| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
    let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> = std::collections::HashMap::new();
    for (i, o) in obstacles.iter().enumerate() {
        grid.entry(key(o.position)).or_default().push(i);
    }
    (0..n)
        .map(|i| {
            let p = obstacles[i].position;
            let (cx, cy) = key(p);
            let mut found: Vec<(f64, usize)> = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(bucket) = grid.get(&(cx + dx, cy + dy)) {
                        for &j in bucket {
                            if j == i {
                                continue;
                            }
                            let d = (obstacles[j].position - p).norm_sq();
                            if d < range_sq {
                                found.push((d, j));
                            }
                        }
                    }
                }
            }
            found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            found.truncate(params.max_neighbors);
            found.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// Half-plane constraint that agent `a` takes for neighbor `b`, or `None`
/// when their centers coincide.
pub fn pair_line(a: &ObstacleState, b: &ObstacleState, dt: f64, tau: f64) -> Option<Line> {
    let inv_tau = 1.0 / tau;
    let rel_pos = b.position - a.position;
    let rel_vel = a.velocity - b.velocity;
    let dist_sq = rel_pos.norm_sq();
    if dist_sq == 0.0 {
        return None;
    }
    let r = a.radius + b.radius;
    let r_sq = r * r;
    let (direction, u);
    if dist_sq > r_sq {
        let w = rel_vel - rel_pos * inv_tau;
        let w_len_sq = w.norm_sq();
        let dot1 = w.dot(rel_pos);
        if dot1 < 0.0 && dot1 * dot1 > r_sq * w_len_sq {
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            direction = Vec2::new(unit_w.y, -unit_w.x);
            u = unit_w * (r * inv_tau - w_len);
        } else {
            let leg = (dist_sq - r_sq).sqrt();
            // Exactly head-on (det == 0) always takes the right leg, so both
            // agents of a symmetric pair turn to their own right.
            if rel_pos.det(w) > 0.0 {
                direction = Vec2::new(rel_pos.x * leg - rel_pos.y * r, rel_pos.x * r + rel_pos.y * leg) / dist_sq;
            } else {
                direction = -Vec2::new(rel_pos.x * leg + rel_pos.y * r, -rel_pos.x * r + rel_pos.y * leg) / dist_sq;
            }
            u = direction * rel_vel.dot(direction) - rel_vel;
        }
    } else {
        let inv_dt = 1.0 / dt;
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.norm();
        let unit_w = w / w_len;
        direction = Vec2::new(unit_w.y, -unit_w.x);
        u = unit_w * (r * inv_dt - w_len);
    }
    Some(Line { point: a.velocity + u * 0.5, direction })
}

/// All constraint lines of agent `i` and the neighbors skipped as faults.
pub fn agent_lines(obstacles: &[ObstacleState], i: usize, nbrs: &[usize], dt: f64, params: &OrcaParams) -> (Vec<Line>, Vec<usize>) {
    let mut lines = Vec::with_capacity(nbrs.len());
    let mut faults = Vec::new();
    for &j in nbrs {
        match pair_line(&obstacles[i], &obstacles[j], dt, params.time_horizon) {
            Some(l) => lines.push(l),
            None => faults.push(j),
        }
    }
    (lines, faults)
}

fn lp1(lines: &[Line], line_no: usize, radius: f64, opt: Vec2, direction_opt: bool) -> Option<Vec2> {
    let line = lines[line_no];
    let dot = line.point.dot(line.direction);
    let disc = dot * dot + radius * radius - line.point.norm_sq();
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let mut t_left = -dot - sq;
    let mut t_right = -dot + sq;
    for other in &lines[..line_no] {
        let denom = line.direction.det(other.direction);
        let numer = other.direction.det(line.point - other.point);
        if denom.abs() <= EPS {
            if numer < 0.0 {
                return None;
            }
            continue;
        }
        let t = numer / denom;
        if denom >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }
    Some(if direction_opt {
        if opt.dot(line.direction) > 0.0 {
            line.point + line.direction * t_right
        } else {
            line.point + line.direction * t_left
        }
    } else {
        let t = line.direction.dot(opt - line.point);
        line.point + line.direction * t.clamp(t_left, t_right)
    })
}

/// Returns the optimum and the index of the first line that made the
/// program infeasible (`lines.len()` on success).
fn lp2(lines: &[Line], radius: f64, opt: Vec2, direction_opt: bool) -> (Vec2, usize) {
    let mut result = if direction_opt {
        opt * radius
    } else if opt.norm_sq() > radius * radius {
        opt.normalized() * radius
    } else {
        opt
    };
    for i in 0..lines.len() {
        if lines[i].violation(result) > 0.0 {
            match lp1(lines, i, radius, opt, direction_opt) {
                Some(r) => result = r,
                None => return (result, i),
            }
        }
    }
    (result, lines.len())
}

fn lp3(lines: &[Line], begin: usize, radius: f64, mut result: Vec2) -> Vec2 {
    let mut distance = 0.0;
    for i in begin..lines.len() {
        if lines[i].violation(result) > distance {
            let mut proj = Vec::with_capacity(i);
            for j in 0..i {
                let det = lines[i].direction.det(lines[j].direction);
                let point = if det.abs() <= EPS {
                    if lines[i].direction.dot(lines[j].direction) > 0.0 {
                        continue;
                    }
                    (lines[i].point + lines[j].point) * 0.5
                } else {
                    lines[i].point
                        + lines[i].direction * (lines[j].direction.det(lines[i].point - lines[j].point) / det)
                };
                proj.push(Line { point, direction: (lines[j].direction - lines[i].direction).normalized() });
            }
            let temp = result;
            let (r, fail) = lp2(&proj, radius, lines[i].direction.perp(), true);
            result = if fail < proj.len() { temp } else { r };
            distance = lines[i].violation(result);
        }
    }
    result
}

/// Velocity closest to `pref` within speed `max_speed` satisfying `lines`;
/// the flag is false when the constraints had to be relaxed.
pub fn solve_velocity(lines: &[Line], max_speed: f64, pref: Vec2) -> (Vec2, bool) {
    let (v, fail) = lp2(lines, max_speed, pref, false);
    if fail < lines.len() {
        (lp3(lines, fail, max_speed, v), false)
    } else {
        (v, true)
    }
}

/// Advances every pedestrian one step. The ego robot is not a neighbor.
pub fn orca_step(obstacles: &[ObstacleState], dt: f64, params: &OrcaParams) -> OrcaStep {
    let nbrs = neighbors(obstacles, params);
    let mut out = Vec::with_capacity(obstacles.len());
    let mut faults = Vec::new();
    let mut infeasible = Vec::new();
    for (i, o) in obstacles.iter().enumerate() {
        let (lines, skipped) = agent_lines(obstacles, i, &nbrs[i], dt, params);
        faults.extend(skipped.into_iter().filter(|&j| i < j).map(|j| (i, j)));
        let (v, ok) = solve_velocity(&lines, params.max_speed, preferred_velocity(o, dt));
        if !ok {
            infeasible.push(i);
        }
        let mut next = *o;
        next.velocity = v;
        next.position = o.position + v * dt;
        out.push(next);
    }
    OrcaStep { obstacles: out, faults, infeasible }
}

/// Constant-velocity motion, for debugging and oracle comparisons.
pub fn constant_velocity_step(obstacles: &[ObstacleState], dt: f64) -> Vec<ObstacleState> {
    obstacles
        .iter()
        .map(|o| {
            let mut n = *o;
            n.position = o.position + o.velocity * dt;
            n
        })
        .collect()
}
