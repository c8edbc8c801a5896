//! Single-point experiment runners shared by the commands and the tests.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::record::{timed_median, ExperimentRecord};
use crate::cartpole::{build_ocp_graph, local_linear_dynamics, CartPoleParams, ProblemConfig};
use crate::elimination::{min_degree_ordering, solve, structured_ordering, EliminationStats};
use crate::error::Result;
use crate::graph::{FactorGraph, Solution};
use crate::solvers::{assemble_dense_lti, riccati_lqr, RiccatiSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderingChoice {
    Structured,
    MinDegree,
}

impl OrderingChoice {
    pub fn name(self) -> &'static str {
        match self {
            OrderingChoice::Structured => "structured",
            OrderingChoice::MinDegree => "mindegree",
        }
    }
}

/// Uniform tilt in `[-max_deg, max_deg]` on every pendulum, reproducible from `seed`.
pub fn seeded_initial_state(n: usize, seed: u64, max_deg: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = max_deg.to_radians();
    let mut x = vec![0.0; 4 * n];
    for j in 0..n {
        x[4 * j + 2] = rng.gen_range(-bound..=bound);
    }
    x
}

/// Ordering plus elimination and back-substitution; the ordering is part of
/// the solve because min-degree must inspect the graph.
pub fn sgopt_solve(
    config: &ProblemConfig,
    graph: &FactorGraph,
    ordering: OrderingChoice,
) -> Result<(Solution, EliminationStats)> {
    let ord = match ordering {
        OrderingChoice::Structured => structured_ordering(config),
        OrderingChoice::MinDegree => min_degree_ordering(graph),
    };
    solve(graph, &ord)
}

pub struct SgoptRun {
    pub record: ExperimentRecord,
    pub solution: Option<Solution>,
}

/// Builds the linear OCP graph and solves it `reps` times; runtime is the median.
pub fn run_sgopt(
    experiment: &str,
    config: &ProblemConfig,
    params: &CartPoleParams,
    ordering: OrderingChoice,
    reps: usize,
) -> SgoptRun {
    let mut record = ExperimentRecord::new(
        experiment,
        config.n,
        config.actuators().len(),
        config.horizon,
        ordering.name(),
        "sgopt",
    );
    let start = Instant::now();
    let graph = build_ocp_graph(config, &local_linear_dynamics(params));
    record.build_s = start.elapsed().as_secs_f64();
    let graph = match graph {
        Ok(g) => g,
        Err(e) => {
            return SgoptRun {
                record: record.failed(&e),
                solution: None,
            }
        }
    };
    let (out, runtime) = timed_median(reps, || sgopt_solve(config, &graph, ordering));
    record.runtime_s = runtime;
    match out {
        Ok((solution, stats)) => {
            record.cost = solution.total_cost;
            record.max_p1 = stats.max_p1();
            record.max_p2 = stats.max_p2();
            SgoptRun {
                record,
                solution: Some(solution),
            }
        }
        Err(e) => SgoptRun {
            record: record.failed(&e),
            solution: None,
        },
    }
}

pub struct RiccatiRun {
    pub record: ExperimentRecord,
    pub solution: Option<RiccatiSolution>,
}

/// Dense baseline on the same linear model; assembly is reported as `build_s`.
pub fn run_riccati(experiment: &str, config: &ProblemConfig, params: &CartPoleParams, reps: usize) -> RiccatiRun {
    let mut record = ExperimentRecord::new(
        experiment,
        config.n,
        config.actuators().len(),
        config.horizon,
        "none",
        "riccati",
    );
    let start = Instant::now();
    let model = assemble_dense_lti(config, &local_linear_dynamics(params));
    record.build_s = start.elapsed().as_secs_f64();
    let model = match model {
        Ok(m) => m,
        Err(e) => {
            return RiccatiRun {
                record: record.failed(&e),
                solution: None,
            }
        }
    };
    let (out, runtime) = timed_median(reps, || riccati_lqr(&model, config.horizon, &config.x0));
    record.runtime_s = runtime;
    match out {
        Ok(sol) => {
            record.cost = sol.cost;
            RiccatiRun {
                record,
                solution: Some(sol),
            }
        }
        Err(e) => RiccatiRun {
            record: record.failed(&e),
            solution: None,
        },
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartpole::Actuation;

    #[test]
    fn seeded_state_is_reproducible_and_bounded() {
        let a = seeded_initial_state(4, 7, 1.15);
        assert_eq!(a, seeded_initial_state(4, 7, 1.15));
        assert_ne!(a, seeded_initial_state(4, 8, 1.15));
        for j in 0..4 {
            assert!(a[4 * j + 2].abs() <= 1.15f64.to_radians());
            assert_eq!(a[4 * j], 0.0);
        }
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(1.5))).collect();
        assert!((loglog_slope(&pts) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn both_solvers_agree_on_small_point() {
        let p = CartPoleParams::default();
        let cfg = ProblemConfig::new(3, Actuation::Count(1), 6).with_uniform_tilt(0.01);
        let s = run_sgopt("t", &cfg, &p, OrderingChoice::MinDegree, 1);
        let r = run_riccati("t", &cfg, &p, 1);
        assert!(s.record.is_ok() && r.record.is_ok());
        assert!((s.record.cost - r.record.cost).abs() <= 1e-8 * r.record.cost);
        assert!(s.record.max_p2 > 0);
    }
}
