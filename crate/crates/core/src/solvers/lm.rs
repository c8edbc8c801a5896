//! Levenberg-Marquardt outer loop for nonlinear trajectory optimization.
//!
//! Each iteration linearizes the dynamics about the current trajectory, solves
//! the damped deviation problem by variable elimination and rolls the result
//! through the true dynamics. With the structured ordering every control
//! conditional depends only on same-step states, so the rollout can apply
//! the extracted gains to the actual state deviations (closed loop). This keeps
//! unstable open-loop dynamics from amplifying small control errors.

use std::collections::HashMap;

use crate::cartpole::{
    build_deviation_graph, nonlinear_step, solution_to_trajectory, step_jacobian, trajectory_cost, CartPoleParams,
    ChainLayout, ProblemConfig, StepDynamics, Trajectory,
};
use crate::elimination::{extract_feedback_gain, FeedbackGain, min_degree_ordering, solve_with_net, structured_ordering, BayesNet};
use crate::error::{Error, Result};
use crate::graph::{VariableKey, VariableKind};

/// Discrete-time dynamics the outer loop can query.
pub trait TransitionModel {
    fn step(&self, state: &[f64], control: &[f64]) -> Vec<f64>;
    /// Jacobian blocks at `(state, control)` with zero offsets.
    fn linearize(&self, state: &[f64], control: &[f64]) -> StepDynamics;
}

pub struct NonlinearChain<'a> {
    pub layout: &'a ChainLayout,
    pub params: &'a CartPoleParams,
}

impl TransitionModel for NonlinearChain<'_> {
    fn step(&self, state: &[f64], control: &[f64]) -> Vec<f64> {
        nonlinear_step(state, control, self.layout, self.params)
    }

    fn linearize(&self, state: &[f64], control: &[f64]) -> StepDynamics {
        step_jacobian(state, control, self.layout, self.params)
    }
}

/// A linear model behind the same interface.
pub struct LinearChain<'a>(pub &'a StepDynamics);

impl TransitionModel for LinearChain<'_> {
    fn step(&self, state: &[f64], control: &[f64]) -> Vec<f64> {
        self.0.apply(state, control)
    }

    fn linearize(&self, _: &[f64], _: &[f64]) -> StepDynamics {
        let mut s = self.0.clone();
        for b in &mut s.bodies {
            b.cart.offset = [0.0; 2];
            b.pendulum.offset = [0.0; 2];
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerOrdering {
    Structured,
    MinDegree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rollout {
    /// Apply the updated controls as they are.
    OpenLoop,
    /// Apply the control conditionals to the realized state deviations.
    /// Falls back to open loop when a conditional is not Markovian.
    ClosedLoop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub lambda0: f64,
    pub factor: f64,
    pub lambda_max: f64,
    /// Used on the first rejection when `lambda0 = 0`.
    pub lambda_restart: f64,
    pub rel_tol: f64,
    pub max_iterations: usize,
    pub ordering: InnerOrdering,
    pub rollout: Rollout,
    /// Step fractions tried before a rejection: 1, 1/2, ..., 2^-line_search.
    pub line_search: usize,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            lambda0: 1e-3,
            factor: 10.0,
            lambda_max: 1e8,
            lambda_restart: 1e-3,
            rel_tol: 1e-6,
            max_iterations: 200,
            ordering: InnerOrdering::Structured,
            rollout: Rollout::ClosedLoop,
            line_search: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmState {
    pub lambda: f64,
    pub iteration: usize,
    pub trajectory: Trajectory,
    pub cost: f64,
}

/// One row of the iteration log: the damping used and the candidate cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmRecord {
    pub iteration: usize,
    pub lambda: f64,
    pub cost: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub trajectory: Trajectory,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<LmRecord>,
}

impl LmReport {
    pub fn accepted_costs(&self) -> Vec<f64> {
        self.history.iter().filter(|r| r.accepted).map(|r| r.cost).collect()
    }
}

/// Rolls `x0` through `model` under `controls`.
pub fn rollout(model: &dyn TransitionModel, x0: &[f64], controls: &[Vec<f64>]) -> Trajectory {
    let mut states = vec![x0.to_vec()];
    for u in controls {
        let next = model.step(states.last().expect("nonempty"), u);
        states.push(next);
    }
    Trajectory {
        states,
        controls: controls.to_vec(),
    }
}

/// Zero controls rolled out from the configured initial state.
pub fn zero_control_guess(config: &ProblemConfig, params: &CartPoleParams) -> Trajectory {
    let layout = config.layout();
    let model = NonlinearChain {
        layout: &layout,
        params,
    };
    rollout(&model, &config.x0, &vec![vec![0.0; layout.m()]; config.horizon - 1])
}

/// Nonlinear cart-pole chain entry point.
pub fn iterative_sgopt(
    config: &ProblemConfig,
    params: &CartPoleParams,
    initial_guess: &Trajectory,
    options: &LmOptions,
) -> Result<LmReport> {
    params.validate()?;
    let layout = config.layout();
    let model = NonlinearChain {
        layout: &layout,
        params,
    };
    iterative_sgopt_with(&model, config, initial_guess, options)
}

pub fn iterative_sgopt_with(
    model: &dyn TransitionModel,
    config: &ProblemConfig,
    initial_guess: &Trajectory,
    options: &LmOptions,
) -> Result<LmReport> {
    config.validate()?;
    if config.horizon < 2 {
        return Err(Error::Config("horizon must be at least 2 to have controls".into()));
    }
    let m = config.actuators().len();
    initial_guess.check(config.n, m)?;
    if initial_guess.horizon() != config.horizon {
        return Err(Error::DimensionMismatch(format!(
            "initial guess has {} steps, horizon is {}",
            initial_guess.horizon(),
            config.horizon
        )));
    }

    // Start from a dynamically consistent trajectory.
    let start = rollout(model, &config.x0, &initial_guess.controls);
    let cost = trajectory_cost(config, &start);
    if !cost.is_finite() {
        return Err(Error::Config("initial guess diverges under the dynamics".into()));
    }
    let mut state = LmState {
        lambda: options.lambda0,
        iteration: 0,
        trajectory: start,
        cost,
    };
    let mut history = Vec::new();
    let mut converged = state.cost <= 1e-12;

    let ordering = match options.ordering {
        InnerOrdering::Structured => structured_ordering(config),
        InnerOrdering::MinDegree => {
            // structure does not change between iterations
            let steps = linearize(model, &state.trajectory);
            min_degree_ordering(&build_deviation_graph(config, &steps, &state.trajectory, 1.0)?)
        }
    };

    while !converged && state.iteration < options.max_iterations {
        state.iteration += 1;
        let steps = linearize(model, &state.trajectory);
        let graph = build_deviation_graph(config, &steps, &state.trajectory, state.lambda)?;
        let (solution, net, _) = solve_with_net(&graph, &ordering)?;
        let target = solution_to_trajectory(config, &solution, Some(&state.trajectory))?;

        let policies = match options.rollout {
            Rollout::ClosedLoop => closed_loop_policies(config, &net),
            Rollout::OpenLoop => None,
        };
        // Backtrack along the step until the cost drops; the last try stands
        // for the whole iteration if none does.
        let mut candidate = state.trajectory.clone();
        let mut cand_cost = f64::INFINITY;
        for k in 0..=options.line_search {
            let alpha = 0.5f64.powi(k as i32);
            let trial = policies
                .as_ref()
                .and_then(|p| closed_loop_rollout(model, config, p, &state.trajectory, alpha))
                .unwrap_or_else(|| open_loop_rollout(model, config, &state.trajectory, &target, alpha));
            let trial_cost = trajectory_cost(config, &trial);
            candidate = trial;
            cand_cost = trial_cost;
            if trial_cost.is_finite() && trial_cost < state.cost {
                break;
            }
        }
        let accepted = cand_cost.is_finite() && cand_cost < state.cost;
        history.push(LmRecord {
            iteration: state.iteration,
            lambda: state.lambda,
            cost: cand_cost,
            accepted,
        });

        let change = (state.cost - cand_cost).abs() / state.cost.max(f64::MIN_POSITIVE);
        if accepted {
            state.trajectory = candidate;
            state.cost = cand_cost;
            state.lambda /= options.factor;
            converged = change < options.rel_tol || state.cost <= 1e-12;
        } else if cand_cost.is_finite() && change < options.rel_tol {
            // no decrease, but no room left to decrease either
            converged = true;
        } else {
            state.lambda = if state.lambda == 0.0 {
                options.lambda_restart
            } else {
                state.lambda * options.factor
            };
            if state.lambda > options.lambda_max {
                return Err(Error::NoProgress {
                    iterations: state.iteration,
                    lambda: state.lambda,
                });
            }
        }
    }

    Ok(LmReport {
        cost: state.cost,
        trajectory: state.trajectory,
        iterations: state.iteration,
        converged,
        history,
    })
}

fn linearize(model: &dyn TransitionModel, traj: &Trajectory) -> Vec<StepDynamics> {
    (0..traj.controls.len())
        .map(|t| {
            let (x, u) = (&traj.states[t], &traj.controls[t]);
            let mut step = model.linearize(x, u);
            let next = model.step(x, u);
            for (j, body) in step.bodies.iter_mut().enumerate() {
                for (row, blocks) in [(0, &mut body.cart), (2, &mut body.pendulum)] {
                    let r = 4 * j + row;
                    blocks.offset = [next[r] - traj.states[t + 1][r], next[r + 1] - traj.states[t + 1][r + 1]];
                }
            }
            step
        })
        .collect()
}

/// Control conditionals of each step, latest-eliminated first. `None` if
/// some control conditional depends on anything other than same-step states
/// or controls.
fn closed_loop_policies(config: &ProblemConfig, net: &BayesNet) -> Option<Vec<Vec<FeedbackGain>>> {
    let m = config.actuators().len();
    let position: HashMap<VariableKey, usize> =
        net.conditionals.iter().enumerate().map(|(i, c)| (c.frontal, i)).collect();
    let mut policies = Vec::with_capacity(config.horizon - 1);
    for t in 0..config.horizon - 1 {
        let mut keys: Vec<VariableKey> = (0..m).map(|a| VariableKey::control(a, t)).collect();
        // later-eliminated controls are solved first
        keys.sort_by_key(|k| std::cmp::Reverse(position[k]));
        let mut step = Vec::with_capacity(m);
        for key in keys {
            let cond = net.conditional(&key)?;
            if cond.separator.iter().any(|s| s.time != t) {
                return None;
            }
            step.push(extract_feedback_gain(cond).ok()?);
        }
        policies.push(step);
    }
    Some(policies)
}

/// Forward pass `u_t = u_ref_t + K_t (x_t - x_ref_t) + alpha k_t`.
fn closed_loop_rollout(
    model: &dyn TransitionModel,
    config: &ProblemConfig,
    policies: &[Vec<FeedbackGain>],
    reference: &Trajectory,
    alpha: f64,
) -> Option<Trajectory> {
    let m = config.actuators().len();
    let mut states = vec![config.x0.clone()];
    let mut controls = Vec::with_capacity(policies.len());
    for (t, policy) in policies.iter().enumerate() {
        let x = &states[t];
        let mut du = vec![f64::NAN; m];
        for gain in policy {
            let sep: Vec<f64> = gain
                .separator
                .iter()
                .flat_map(|k| match k.kind {
                    VariableKind::Cart => deviation(x, &reference.states[t], 4 * k.body),
                    VariableKind::Pendulum => deviation(x, &reference.states[t], 4 * k.body + 2),
                    VariableKind::Control => vec![du[k.body]],
                })
                .collect();
            du[gain.control_key.body] = gain.k.mul_vec(&sep)[0] + alpha * gain.offset[0];
        }
        let u: Vec<f64> = du.iter().zip(&reference.controls[t]).map(|(d, r)| d + r).collect();
        if u.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let next = model.step(x, &u);
        states.push(next);
        controls.push(u);
    }
    Some(Trajectory { states, controls })
}

fn open_loop_rollout(
    model: &dyn TransitionModel,
    config: &ProblemConfig,
    reference: &Trajectory,
    target: &Trajectory,
    alpha: f64,
) -> Trajectory {
    let controls: Vec<Vec<f64>> = reference
        .controls
        .iter()
        .zip(&target.controls)
        .map(|(r, u)| r.iter().zip(u).map(|(r, u)| r + alpha * (u - r)).collect())
        .collect();
    rollout(model, &config.x0, &controls)
}

fn deviation(x: &[f64], r: &[f64], at: usize) -> Vec<f64> {
    vec![x[at] - r[at], x[at + 1] - r[at + 1]]
}
