use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::Error;

/// One solver run. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub ordering: String,
    pub solver: String,
    pub cost: f64,
    pub runtime_s: f64,
    pub build_s: f64,
    pub max_p1: usize,
    pub max_p2: usize,
    pub status: String,
}

pub const RECORD_HEADER: &str = "experiment,n,m,t,ordering,solver,cost,runtime_s,build_s,max_p1,max_p2,status";

impl ExperimentRecord {
    pub fn new(experiment: &str, n: usize, m: usize, t: usize, ordering: &str, solver: &str) -> Self {
        Self {
            experiment: experiment.into(),
            n,
            m,
            t,
            ordering: ordering.into(),
            solver: solver.into(),
            cost: f64::NAN,
            runtime_s: 0.0,
            build_s: 0.0,
            max_p1: 0,
            max_p2: 0,
            status: "ok".into(),
        }
    }

    pub fn failed(mut self, err: &Error) -> Self {
        self.status = format!("error:{}", err.kind());
        self
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

pub fn write_records(path: &Path, records: &[ExperimentRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(RECORD_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()
}

/// Writes a header and rows of plain numbers.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
}

/// Repetitions stop early once this much time has been spent on one run.
pub const TIMING_BUDGET_S: f64 = 2.0;

/// Runs `f` up to `reps` times; returns the last result and the median wall
/// time. Slow runs stop after [`TIMING_BUDGET_S`] seconds in total.
pub fn timed_median<T>(reps: usize, mut f: impl FnMut() -> T) -> (T, f64) {
    let mut times = Vec::with_capacity(reps.max(1));
    let mut out = None;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        out = Some(f());
        times.push(start.elapsed().as_secs_f64());
        if times.iter().sum::<f64>() > TIMING_BUDGET_S {
            break;
        }
    }
    times.sort_by(f64::total_cmp);
    (out.expect("at least one repetition"), times[times.len() / 2])
}
