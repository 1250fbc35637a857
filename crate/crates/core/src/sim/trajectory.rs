use std::io::{Read, Write};

use super::EpisodeResult;
use crate::dynamics::{DynamicsKind, EgoState};
use crate::fmt::sig9;
use crate::geom::Vec2;
use crate::{Error, Result};

/// Trajectory as stored on disk: ego states and per-step obstacle
/// positions and velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub kind: DynamicsKind,
    pub ego: Vec<EgoState>,
    pub obstacles: Vec<Vec<(Vec2, Vec2)>>,
}

impl From<&EpisodeResult> for TrajectoryRecord {
    fn from(r: &EpisodeResult) -> Self {
        Self {
            kind: r.ego_trajectory[0].kind,
            ego: r.ego_trajectory.clone(),
            obstacles: r
                .obstacle_trajectories
                .iter()
                .map(|step| step.iter().map(|o| (o.position, o.velocity)).collect())
                .collect(),
        }
    }
}

pub fn write_trajectory_csv(w: impl Write, rec: &TrajectoryRecord) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let n_obs = rec.obstacles.first().map_or(0, |o| o.len());
    let mut header = vec!["step".to_string()];
    header.extend(rec.kind.state_labels().iter().map(|l| format!("ego_{l}")));
    for j in 0..n_obs {
        for c in ["px", "py", "vx", "vy"] {
            header.push(format!("o{j}_{c}"));
        }
    }
    out.write_record(&header)?;
    for (t, (ego, obs)) in rec.ego.iter().zip(&rec.obstacles).enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(ego.components.iter().map(|&c| sig9(c)));
        for (p, v) in obs {
            row.extend([p.x, p.y, v.x, v.y].map(sig9));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(r: impl Read) -> Result<TrajectoryRecord> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let labels: Vec<&str> = header
        .iter()
        .skip(1)
        .take_while(|h| h.starts_with("ego_"))
        .map(|h| &h[4..])
        .collect();
    let kind = DynamicsKind::from_state_labels(&labels)
        .ok_or_else(|| Error::InvalidInput(format!("unrecognized ego columns {labels:?}")))?;
    let dim = kind.state_dim();
    let rest = header.len() - 1 - dim;
    if rest % 4 != 0 {
        return Err(Error::InvalidInput("obstacle columns must come in groups of four".into()));
    }
    let mut rec = TrajectoryRecord { kind, ego: vec![], obstacles: vec![] };
    for row in rdr.records() {
        let row = row?;
        let vals: Vec<f64> = row
            .iter()
            .skip(1)
            .map(|c| c.parse::<f64>().map_err(|e| Error::InvalidInput(format!("bad number {c:?}: {e}"))))
            .collect::<Result<_>>()?;
        rec.ego.push(EgoState::new(kind, vals[..dim].to_vec())?);
        rec.obstacles.push(
            vals[dim..]
                .chunks(4)
                .map(|c| (Vec2::new(c[0], c[1]), Vec2::new(c[2], c[3])))
                .collect(),
        );
    }
    Ok(rec)
}
