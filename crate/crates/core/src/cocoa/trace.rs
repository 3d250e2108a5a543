use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "round,wall_s,sim_cost,objective,gap,theta";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub wall_s: f64,
    pub sim_cost: f64,
    pub objective: f64,
    pub gap: Option<f64>,
    /// Largest device θ measured during the round (test mode only).
    pub theta: Option<f64>,
}

/// Per-round record of a training run; row 0 is the starting point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl ConvergenceTrace {
    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.6},{:e},{:e},{},{}",
                r.round,
                r.wall_s,
                r.sim_cost,
                r.objective,
                opt(r.gap),
                opt(r.theta)
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if i == 0 {
                if line != TRACE_HEADER {
                    return Err(Error::Parse { line: 1, message: format!("expected header `{TRACE_HEADER}`") });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse { line: i + 1, message };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(bad(format!("expected 6 fields, found {}", fields.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("bad number `{s}`: {e}")));
            let opt_num = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            rows.push(TraceRow {
                round: fields[0].parse().map_err(|e| bad(format!("bad round `{}`: {e}", fields[0])))?,
                wall_s: num(fields[1])?,
                sim_cost: num(fields[2])?,
                objective: num(fields[3])?,
                gap: opt_num(fields[4])?,
                theta: opt_num(fields[5])?,
            });
        }
        Ok(Self { rows })
    }
}
