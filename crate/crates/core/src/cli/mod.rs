//! Command-line front end.
//!
//! Exit codes: 0 success, 1 the run finished but failed its check, 2 usage or
//! configuration error.

mod experiments;
mod record;
mod svg;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};

pub use experiments::{
    loglog_slope, run_riccati, run_sgopt, seeded_initial_state, sgopt_solve, OrderingChoice, RiccatiRun, SgoptRun,
};
pub use record::{timed_median, write_records, ExperimentRecord, RECORD_HEADER};
pub use svg::{Chart, Series};

use crate::cartpole::{solution_to_trajectory, Actuation, LoadedConfig, Trajectory};
use crate::error::Error;
use crate::solvers::{iterative_sgopt, zero_control_guess, InnerOrdering, LmOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Timing repetitions per solver run.
const REPS: usize = 5;
/// Sweep initial tilts are drawn from this range, in degrees.
const SWEEP_TILT_DEG: f64 = 1.15;
const UPRIGHT_TOL: f64 = 0.05;

#[derive(Debug, Parser)]
#[command(name = "sgopt", version, about = "Cart-pole chain optimal control by factor-graph elimination")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON problem description; missing keys keep the command's defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = OrderingArg::Structured)]
    pub ordering: OrderingArg,
    /// Seeds the initial angles of sweep points.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// SGOPT against Riccati on the linear validation scenario.
    Validate,
    /// Runtime sweep over N (fixed rho) or over rho (fixed N), T = 10.
    Scale {
        #[arg(long, value_enum)]
        mode: ScaleMode,
        /// `a:b:step`, `a:b:xF` (geometric) or `a,b,c`.
        #[arg(long)]
        range: String,
        /// Held value: rho for mode n (default 0.25), N for mode rho (default 30).
        #[arg(long)]
        fixed: Option<f64>,
        /// Also write cost and runtime charts.
        #[arg(long)]
        svg: bool,
    },
    /// Nonlinear swing-up from hanging with the Levenberg-Marquardt loop.
    Swingup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderingArg {
    Structured,
    Mindegree,
}

impl From<OrderingArg> for OrderingChoice {
    fn from(o: OrderingArg) -> Self {
        match o {
            OrderingArg::Structured => OrderingChoice::Structured,
            OrderingArg::Mindegree => OrderingChoice::MinDegree,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleMode {
    N,
    Rho,
}

impl ScaleMode {
    fn name(self) -> &'static str {
        match self {
            ScaleMode::N => "n",
            ScaleMode::Rho => "rho",
        }
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: &Cli) -> i32 {
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("error: cannot create {}: {e}", cli.out.display());
        return EXIT_USAGE;
    }
    let outcome = match &cli.command {
        Command::Validate => cmd_validate(cli),
        Command::Scale {
            mode,
            range,
            fixed,
            svg,
        } => cmd_scale(cli, *mode, range, *fixed, *svg),
        Command::Swingup => cmd_swingup(cli),
    };
    match outcome {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Failed(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAILED
        }
    }
}

enum CliError {
    Usage(String),
    Failed(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Failed(format!("csv: {e}"))
    }
}

fn config_error(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn load(cli: &Cli, base: LoadedConfig) -> Result<LoadedConfig, CliError> {
    let cfg = match &cli.config {
        Some(path) => LoadedConfig::from_path(base, path).map_err(config_error)?,
        None => base,
    };
    cfg.params.validate().map_err(config_error)?;
    cfg.problem.validate().map_err(config_error)?;
    Ok(cfg)
}

fn cmd_validate(cli: &Cli) -> Result<i32, CliError> {
    let cfg = load(cli, LoadedConfig::validation_default())?;
    let (problem, params) = (&cfg.problem, &cfg.params);

    let sg = run_sgopt("validate", problem, params, cli.ordering.into(), REPS);
    let rc = run_riccati("validate", problem, params, REPS);
    write_records(&cli.out.join("validate.csv"), &[sg.record.clone(), rc.record.clone()])?;

    let solution = match (&sg.solution, &rc.solution) {
        (Some(s), Some(_)) => s,
        _ => {
            return Err(CliError::Failed(format!(
                "solve failed (sgopt: {}, riccati: {})",
                sg.record.status, rc.record.status
            )))
        }
    };
    let traj = solution_to_trajectory(problem, solution, None).map_err(|e| CliError::Failed(e.to_string()))?;
    write_angle_table(&cli.out.join("trajectory.csv"), &traj, false)?;

    let (a, b) = (sg.record.cost, rc.record.cost);
    let rel = (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    println!("sgopt cost   {a:.9} ({:.3} ms)", sg.record.runtime_s * 1e3);
    println!("riccati cost {b:.9} ({:.3} ms)", rc.record.runtime_s * 1e3);
    println!("relative difference {rel:.3e}");
    if (a - b).abs() <= 1e-6 * b.abs() {
        Ok(EXIT_OK)
    } else {
        eprintln!("error: costs differ by {rel:.3e} (> 1e-6)");
        Ok(EXIT_FAILED)
    }
}

/// Expands `a:b:step`, `a:b:xF` or `a,b,c` into the listed values.
pub fn parse_range(spec: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("bad number '{s}' in range"));
    let values = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [a, b, step] = parts[..] else {
            return Err(format!("range '{spec}' must be a:b:step"));
        };
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            return Err(format!("range '{spec}' is empty"));
        }
        let mut out = Vec::new();
        if let Some(f) = step.trim().strip_prefix('x') {
            let f = num(f)?;
            if !(f > 1.0) || !(a > 0.0) {
                return Err(format!("geometric range '{spec}' needs a > 0 and factor > 1"));
            }
            let mut k = 0;
            loop {
                let v = a * f.powi(k);
                if v > b * (1.0 + 1e-9) {
                    break;
                }
                out.push(v);
                k += 1;
            }
        } else {
            let s = num(step)?;
            if !(s > 0.0) {
                return Err(format!("range step in '{spec}' must be positive"));
            }
            let count = ((b - a) / s + 1e-9).floor() as usize;
            out.extend((0..=count).map(|k| a + k as f64 * s));
        }
        out
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(format!("range '{spec}' is empty"));
    }
    Ok(values)
}

fn cmd_scale(cli: &Cli, mode: ScaleMode, range: &str, fixed: Option<f64>, svg: bool) -> Result<i32, CliError> {
    let mut base = LoadedConfig::validation_default();
    base.problem.horizon = 10;
    let base = load(cli, base)?;
    let values = parse_range(range).map_err(CliError::Usage)?;

    let points: Vec<(usize, Actuation)> = match mode {
        ScaleMode::N => {
            let rho = fixed.unwrap_or(0.25);
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(CliError::Usage(format!("rho {rho} outside (0, 1]")));
            }
            let mut pts = Vec::new();
            for v in &values {
                if v.fract() != 0.0 || *v < 1.0 {
                    return Err(CliError::Usage(format!("N = {v} is not a positive integer")));
                }
                pts.push((*v as usize, Actuation::Ratio(rho)));
            }
            pts
        }
        ScaleMode::Rho => {
            let n = fixed.unwrap_or(30.0);
            if n.fract() != 0.0 || n < 1.0 {
                return Err(CliError::Usage(format!("N = {n} is not a positive integer")));
            }
            if let Some(r) = values.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
                return Err(CliError::Usage(format!("rho {r} outside (0, 1]")));
            }
            values.iter().map(|&r| (n as usize, Actuation::Ratio(r))).collect()
        }
    };

    let experiment = format!("scale_{}", mode.name());
    let run_point = |index: usize| -> Vec<ExperimentRecord> {
        let (n, actuation) = &points[index];
        let mut problem = base.problem.clone();
        problem.n = *n;
        problem.actuation = actuation.clone();
        problem.x0 = seeded_initial_state(*n, cli.seed.wrapping_add(index as u64), SWEEP_TILT_DEG);
        if let Err(e) = problem.validate() {
            let m = problem.actuators().len();
            return ["structured", "mindegree"]
                .iter()
                .map(|o| ExperimentRecord::new(&experiment, *n, m, problem.horizon, o, "sgopt").failed(&e))
                .chain([ExperimentRecord::new(&experiment, *n, m, problem.horizon, "none", "riccati").failed(&e)])
                .collect();
        }
        vec![
            run_sgopt(&experiment, &problem, &base.params, OrderingChoice::Structured, REPS).record,
            run_sgopt(&experiment, &problem, &base.params, OrderingChoice::MinDegree, REPS).record,
            run_riccati(&experiment, &problem, &base.params, REPS).record,
        ]
    };

    let threads = std::env::var("SGOPT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(1)
        .clamp(1, points.len());
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(points.len()));
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, AtomicOrdering::Relaxed);
                if i >= points.len() {
                    break;
                }
                let rows = run_point(i);
                results.lock().expect("worker panicked").push((i, rows));
            });
        }
    });
    let mut results = results.into_inner().expect("worker panicked");
    results.sort_by_key(|(i, _)| *i);
    let records: Vec<ExperimentRecord> = results.into_iter().flat_map(|(_, r)| r).collect();

    write_records(&cli.out.join(format!("{experiment}.csv")), &records)?;
    for r in &records {
        println!(
            "n={:<4} m={:<3} {:<8} {:<10} cost={:<14.6} runtime={:.3e}s p2={} {}",
            r.n, r.m, r.solver, r.ordering, r.cost, r.runtime_s, r.max_p2, r.status
        );
    }
    if svg {
        write_scale_charts(&cli.out, mode, &records)?;
    }
    if records.iter().any(ExperimentRecord::is_ok) {
        Ok(EXIT_OK)
    } else {
        eprintln!("error: every sweep point failed");
        Ok(EXIT_FAILED)
    }
}

fn write_scale_charts(out: &Path, mode: ScaleMode, records: &[ExperimentRecord]) -> Result<(), CliError> {
    let x_of = |r: &ExperimentRecord| match mode {
        ScaleMode::N => r.n as f64,
        ScaleMode::Rho => r.m as f64 / r.n as f64,
    };
    let series = |value: &dyn Fn(&ExperimentRecord) -> f64| -> Vec<Series> {
        [("sgopt", "structured"), ("sgopt", "mindegree"), ("riccati", "none")]
            .iter()
            .map(|(solver, ordering)| Series {
                label: if *solver == "riccati" {
                    "riccati".into()
                } else {
                    format!("sgopt/{ordering}")
                },
                points: records
                    .iter()
                    .filter(|r| r.is_ok() && r.solver == *solver && r.ordering == *ordering)
                    .map(|r| (x_of(r), value(r)))
                    .collect(),
            })
            .collect()
    };
    let x_label = match mode {
        ScaleMode::N => "N (carts)",
        ScaleMode::Rho => "rho (actuation ratio)",
    };
    let runtime = Chart {
        title: format!("Runtime vs {}", mode.name()),
        x_label: x_label.into(),
        y_label: "runtime [s]".into(),
        log_x: mode == ScaleMode::N,
        log_y: true,
        series: series(&|r| r.runtime_s),
    };
    let cost = Chart {
        title: format!("Cost vs {}", mode.name()),
        x_label: x_label.into(),
        y_label: "cost".into(),
        log_x: mode == ScaleMode::N,
        log_y: false,
        series: series(&|r| r.cost),
    };
    std::fs::write(out.join(format!("scale_{}_runtime.svg", mode.name())), runtime.render())?;
    std::fs::write(out.join(format!("scale_{}_cost.svg", mode.name())), cost.render())?;
    Ok(())
}

fn cmd_swingup(cli: &Cli) -> Result<i32, CliError> {
    let cfg = load(cli, LoadedConfig::swingup_default())?;
    let (problem, params) = (&cfg.problem, &cfg.params);
    if problem.horizon < 2 {
        return Err(CliError::Usage(format!(
            "horizon {} leaves no controls to optimize",
            problem.horizon
        )));
    }
    let options = LmOptions {
        ordering: match cli.ordering {
            OrderingArg::Structured => InnerOrdering::Structured,
            OrderingArg::Mindegree => InnerOrdering::MinDegree,
        },
        ..LmOptions::default()
    };
    let guess = zero_control_guess(problem, params);
    let start = std::time::Instant::now();
    let report = match iterative_sgopt(problem, params, &guess, &options) {
        Ok(r) => r,
        Err(e @ Error::NoProgress { .. }) => return Err(CliError::Failed(e.to_string())),
        Err(e @ (Error::Config(_) | Error::DimensionMismatch(_))) => return Err(CliError::Usage(e.to_string())),
        Err(e) => return Err(CliError::Failed(e.to_string())),
    };
    let elapsed = start.elapsed().as_secs_f64();

    let header: Vec<String> = ["iteration", "lambda", "cost", "accepted"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = report
        .history
        .iter()
        .map(|r| vec![r.iteration.to_string(), r.lambda.to_string(), r.cost.to_string(), r.accepted.to_string()])
        .collect();
    record::write_table(&cli.out.join("swingup.csv"), &header, &rows)?;
    write_angle_table(&cli.out.join("swingup_traj.csv"), &report.trajectory, true)?;

    let last = report.trajectory.states.last().expect("horizon >= 2");
    let worst = (0..problem.n).map(|j| last[4 * j + 2].abs()).fold(0.0, f64::max);
    println!(
        "iterations {} converged {} cost {:.3} max |theta(T-1)| {:.4} rad ({:.2} s)",
        report.iterations, report.converged, report.cost, worst, elapsed
    );
    if worst <= UPRIGHT_TOL {
        Ok(EXIT_OK)
    } else {
        eprintln!("error: final angle {worst:.4} rad exceeds {UPRIGHT_TOL} rad");
        Ok(EXIT_FAILED)
    }
}

/// `t, [x_j,] theta_j, u_a`; the last step has no control.
fn write_angle_table(path: &Path, traj: &Trajectory, with_carts: bool) -> Result<(), CliError> {
    let n = traj.states[0].len() / 4;
    let m = traj.controls.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    if with_carts {
        header.extend((0..n).map(|j| format!("x_{j}")));
    }
    header.extend((0..n).map(|j| format!("theta_{j}")));
    header.extend((0..m).map(|a| format!("u_{a}")));
    let rows: Vec<Vec<String>> = traj
        .states
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let mut row = vec![t.to_string()];
            if with_carts {
                row.extend((0..n).map(|j| s[4 * j].to_string()));
            }
            row.extend((0..n).map(|j| s[4 * j + 2].to_string()));
            match traj.controls.get(t) {
                Some(u) => row.extend(u.iter().map(f64::to_string)),
                None => row.extend((0..m).map(|_| String::new())),
            }
            row
        })
        .collect();
    record::write_table(path, &header, &rows)?;
    Ok(())
}
