use std::io::Write;

use crate::dynamics::Control;
use crate::fmt::sig9;
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateTrace {
    pub control: Control,
    pub score: f64,
    /// Per-obstacle barrier values (member mean for an ensemble).
    pub values: Vec<f64>,
    pub aggregated: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub step: usize,
    pub candidates: Vec<CandidateTrace>,
    pub chosen: Option<usize>,
}

fn joined(v: &[f64]) -> String {
    v.iter().map(|&x| sig9(x)).collect::<Vec<_>>().join(";")
}

/// One row per candidate; vector-valued columns are `;`-separated.
pub fn write_trace_csv<W: Write>(w: W, steps: &[StepTrace]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "candidate", "control", "score", "aggregated", "feasible", "chosen", "barrier_values"])?;
    for s in steps {
        for (i, c) in s.candidates.iter().enumerate() {
            out.write_record([
                s.step.to_string(),
                i.to_string(),
                joined(&c.control.components),
                sig9(c.score),
                sig9(c.aggregated),
                (c.feasible as u8).to_string(),
                ((s.chosen == Some(i)) as u8).to_string(),
                joined(&c.values),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
