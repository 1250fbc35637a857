//! Barrier level sets over a position grid along a recorded trajectory.

use sncbf_core::barrier::{BarrierModel, ObstacleHistory};
use sncbf_core::dynamics::{planar_velocity, EgoState};
use sncbf_core::exec::{self, Execution};
use sncbf_core::inference::{aggregate, AggregationConfig};
use sncbf_core::observe::{Frame, FrameHistory};
use sncbf_core::sim::TrajectoryRecord;
use sncbf_core::Vec2;

use crate::svg::Scene;
use crate::CmdError;

pub const LEVELS: [f64; 4] = [0.0, 0.25, 0.5, 0.75];
const LEVEL_COLORS: [&str; 4] = ["#d62728", "#ff7f0e", "#bcbd22", "#2ca02c"];

/// Square grid of `n x n` nodes centered on `center`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub center: Vec2,
    pub half_extent: f64,
    pub pitch: f64,
}

impl GridSpec {
    pub fn nodes_per_side(&self) -> usize {
        (2.0 * self.half_extent / self.pitch).round() as usize + 1
    }

    pub fn check(&self, max_cells: usize) -> Result<usize, CmdError> {
        if !(self.pitch > 0.0 && self.half_extent > 0.0) {
            return Err(CmdError::Config("grid pitch and extent must be positive".into()));
        }
        let n = self.nodes_per_side();
        if n.saturating_mul(n) > max_cells {
            let hint = 2.0 * self.half_extent / ((max_cells as f64).sqrt() - 1.0);
            return Err(CmdError::Config(format!(
                "grid of {n}x{n} nodes exceeds the limit of {max_cells}; use a pitch of at least {hint:.3} m or raise replay.max_cells"
            )));
        }
        Ok(n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelGrid {
    pub origin: Vec2,
    pub pitch: f64,
    pub n: usize,
    /// Row-major, `values[iy * n + ix]` at `origin + pitch * (ix, iy)`.
    pub values: Vec<f64>,
}

impl LevelGrid {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.n + ix]
    }

    pub fn node(&self, ix: usize, iy: usize) -> Vec2 {
        self.origin + Vec2::new(ix as f64, iy as f64) * self.pitch
    }

    pub fn nearest(&self, p: Vec2) -> Option<(usize, usize)> {
        let f = (p - self.origin) * (1.0 / self.pitch);
        let (ix, iy) = (f.x.round(), f.y.round());
        (ix >= 0.0 && iy >= 0.0 && (ix as usize) < self.n && (iy as usize) < self.n).then_some((ix as usize, iy as usize))
    }

    /// Whether the region `value <= level` connected to `(ix, iy)` stays
    /// clear of the grid border.
    pub fn region_is_closed(&self, ix: usize, iy: usize, level: f64) -> bool {
        let n = self.n;
        if self.at(ix, iy) > level {
            return false;
        }
        let mut seen = vec![false; n * n];
        let mut stack = vec![(ix, iy)];
        seen[iy * n + ix] = true;
        while let Some((x, y)) = stack.pop() {
            if x == 0 || y == 0 || x == n - 1 || y == n - 1 {
                return false;
            }
            for (nx, ny) in [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)] {
                let i = ny * n + nx;
                if !seen[i] && self.values[i] <= level {
                    seen[i] = true;
                    stack.push((nx, ny));
                }
            }
        }
        true
    }
}

/// Obstacle tracks at frame `t`: position plus length-`k` relative history.
pub fn frame_tracks(rec: &TrajectoryRecord, t: usize, k: usize, dt: f64) -> Vec<(Vec2, ObstacleHistory)> {
    let mut hist = FrameHistory::new(k);
    for s in t.saturating_sub(k - 1)..=t {
        let prev = s.checked_sub(1).map(|p| &rec.ego[p]);
        hist.push(Frame {
            ego_position: rec.ego[s].position(),
            ego_velocity: planar_velocity(prev, &rec.ego[s], dt),
            obstacles: rec.obstacles[s].clone(),
        });
    }
    (0..rec.obstacles[t].len()).filter_map(|j| hist.window(j, k).map(|h| (rec.obstacles[t][j].0, h))).collect()
}

/// Aggregated barrier value with the ego moved to every grid node and its
/// non-positional state held fixed. Obstacles beyond `sensing_range` of a
/// node do not contribute, as online.
pub fn evaluate_grid(
    model: &BarrierModel,
    x: &EgoState,
    tracks: &[(Vec2, ObstacleHistory)],
    spec: &GridSpec,
    agg: &AggregationConfig,
    sensing_range: f64,
    max_cells: usize,
    exec: Execution,
) -> Result<LevelGrid, CmdError> {
    let n = spec.check(max_cells)?;
    let origin = spec.center - Vec2::new(spec.half_extent, spec.half_extent);
    let ego_part = model.head_ego_part(x);
    let here = x.position();
    let values = exec::map_range(exec, n * n, |i| {
        let p = origin + Vec2::new((i % n) as f64, (i / n) as f64) * spec.pitch;
        let d = p - here;
        let vals: Vec<f64> = tracks
            .iter()
            .filter(|(o, _)| o.distance(p) <= sensing_range)
            .map(|(_, h)| {
                let h = h.shifted(-d);
                let prefix = model.prefix(&h.steps()[..h.k() - 1]);
                model.value_from_parts(&prefix, &h.last(), &ego_part)
            })
            .collect();
        aggregate(&vals, agg)
    });
    Ok(LevelGrid { origin, pitch: spec.pitch, n, values })
}

/// Marching-squares segments of the `level` contour, separating nodes with
/// value `> level` from the rest.
pub fn contour(grid: &LevelGrid, level: f64) -> Vec<((f64, f64), (f64, f64))> {
    let n = grid.n;
    let mut segs = vec![];
    if n < 2 {
        return segs;
    }
    let lerp = |a: (usize, usize), b: (usize, usize)| -> (f64, f64) {
        let (va, vb) = (grid.at(a.0, a.1), grid.at(b.0, b.1));
        let t = if (vb - va).abs() < 1e-300 { 0.5 } else { ((level - va) / (vb - va)).clamp(0.0, 1.0) };
        let (pa, pb) = (grid.node(a.0, a.1), grid.node(b.0, b.1));
        (pa.x + t * (pb.x - pa.x), pa.y + t * (pb.y - pa.y))
    };
    for iy in 0..n - 1 {
        for ix in 0..n - 1 {
            let c = [(ix, iy), (ix + 1, iy), (ix + 1, iy + 1), (ix, iy + 1)];
            let above: Vec<bool> = c.iter().map(|&(x, y)| grid.at(x, y) > level).collect();
            let mask = above.iter().enumerate().fold(0u8, |m, (i, &a)| m | ((a as u8) << i));
            if mask == 0 || mask == 15 {
                continue;
            }
            // Edge e joins corners e and e+1.
            let crossing: Vec<(f64, f64)> = (0..4).filter(|&e| above[e] != above[(e + 1) % 4]).map(|e| lerp(c[e], c[(e + 1) % 4])).collect();
            match crossing.len() {
                2 => segs.push((crossing[0], crossing[1])),
                4 => {
                    // Saddle: split by the center value.
                    let center = c.iter().map(|&(x, y)| grid.at(x, y)).sum::<f64>() / 4.0;
                    if (center > level) == above[0] {
                        segs.push((crossing[0], crossing[1]));
                        segs.push((crossing[2], crossing[3]));
                    } else {
                        segs.push((crossing[3], crossing[0]));
                        segs.push((crossing[1], crossing[2]));
                    }
                }
                _ => {}
            }
        }
    }
    segs
}

/// One replay frame: contours, obstacles, ego path so far.
pub fn render_frame(grid: &LevelGrid, rec: &TrajectoryRecord, t: usize, obstacle_radius: f64) -> String {
    let span = grid.pitch * (grid.n.max(2) - 1) as f64;
    let min = (grid.origin.x, grid.origin.y);
    let max = (grid.origin.x + span, grid.origin.y + span);
    let mut s = Scene::new(min, max, 600.0 / span.max(1e-9));
    for (level, col) in LEVELS.iter().zip(LEVEL_COLORS) {
        s.segments(&contour(grid, *level), col, 1.5);
    }
    for (p, _) in &rec.obstacles[t] {
        s.circle((p.x, p.y), obstacle_radius, "#888", "black");
    }
    let path: Vec<(f64, f64)> = rec.ego[..=t].iter().map(|e| (e.position().x, e.position().y)).collect();
    s.polyline(&path, "#1f77b4", 2.0);
    let e = rec.ego[t].position();
    s.circle((e.x, e.y), 0.15, "#1f77b4", "black");
    s.text((min.0 + 0.2 * grid.pitch, max.1 - 0.4), &format!("step {t}; contours at 0, 0.25, 0.5, 0.75"));
    s.render()
}
