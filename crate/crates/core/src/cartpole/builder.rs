use std::collections::BTreeMap;

use super::{LocalDynamics, ProblemConfig, RowBlocks, StepDynamics, Trajectory};
use crate::error::{Error, Result};
use crate::graph::{Factor, FactorGraph, Solution, VariableKey};
use crate::linalg::Matrix;

/// Column order of the figure layout: per time step (latest first) all
/// pendulums, all carts, then the controls feeding that step.
pub fn figure_column_order(config: &ProblemConfig) -> Vec<VariableKey> {
    let m = config.actuators().len();
    let mut out = Vec::with_capacity(config.variable_count());
    for t in (0..config.horizon).rev() {
        out.extend((0..config.n).map(|j| VariableKey::pendulum(j, t)));
        out.extend((0..config.n).map(|j| VariableKey::cart(j, t)));
        if t > 0 {
            out.extend((0..m).map(|a| VariableKey::control(a, t - 1)));
        }
    }
    out
}

/// OCP graph for a time-invariant linear model.
pub fn build_ocp_graph(config: &ProblemConfig, dynamics: &LocalDynamics) -> Result<FactorGraph> {
    config.validate()?;
    let step = dynamics.expand(&config.layout());
    build(config, |_| &step, None, 0.0)
}

/// OCP graph with one transition per step (`horizon - 1` of them).
pub fn build_ocp_graph_with(config: &ProblemConfig, steps: &[StepDynamics]) -> Result<FactorGraph> {
    config.validate()?;
    check_steps(config, steps)?;
    build(config, |t| &steps[t], None, 0.0)
}

/// Graph over deviations from `reference`, with `sqrt(lambda) I` damping on
/// every deviation when `lambda > 0`. `steps` must linearize the dynamics about
/// `reference`, with defects in their offsets.
pub fn build_deviation_graph(
    config: &ProblemConfig,
    steps: &[StepDynamics],
    reference: &Trajectory,
    lambda: f64,
) -> Result<FactorGraph> {
    config.validate()?;
    check_steps(config, steps)?;
    reference.check(config.n, config.actuators().len())?;
    if reference.horizon() != config.horizon {
        return Err(Error::DimensionMismatch(format!(
            "reference has {} steps, horizon is {}",
            reference.horizon(),
            config.horizon
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!("damping must be nonnegative, got {lambda}")));
    }
    build(config, |t| &steps[t], Some(reference), lambda)
}

fn check_steps(config: &ProblemConfig, steps: &[StepDynamics]) -> Result<()> {
    let need = config.horizon - 1;
    if steps.len() < need || steps.iter().any(|s| s.bodies.len() != config.n) {
        return Err(Error::DimensionMismatch(format!(
            "need {need} transitions over {} bodies, got {}",
            config.n,
            steps.len()
        )));
    }
    Ok(())
}

fn build<'a>(
    config: &ProblemConfig,
    step_at: impl Fn(usize) -> &'a StepDynamics,
    reference: Option<&Trajectory>,
    lambda: f64,
) -> Result<FactorGraph> {
    let m = config.actuators().len();
    let last = config.horizon - 1;
    let w = &config.weights;
    let mut g = FactorGraph::new();
    let order = figure_column_order(config);
    for key in &order {
        g.add_variable(*key)?;
    }

    let state_ref = |t: usize, idx: usize| reference.map_or([0.0; 2], |r| [r.states[t][idx], r.states[t][idx + 1]]);
    let control_ref = |t: usize, a: usize| reference.map_or(0.0, |r| r.controls[t][a]);
    let unary = |key: VariableKey, q: f64, target: &[f64]| {
        let s = q.sqrt();
        let dim = key.dim();
        Factor::cost(
            vec![key],
            vec![Matrix::identity(dim).scaled(s)],
            target.iter().map(|v| -s * v).collect(),
        )
    };

    for t in (0..config.horizon).rev() {
        let (qx, qth) = if t == last { (w.qxf, w.qthetaf) } else { (w.qx, w.qtheta) };
        for j in 0..config.n {
            g.add_factor(unary(VariableKey::pendulum(j, t), qth, &state_ref(t, 4 * j + 2))?)?;
        }
        for j in 0..config.n {
            g.add_factor(unary(VariableKey::cart(j, t), qx, &state_ref(t, 4 * j))?)?;
        }
        if t > 0 {
            for a in 0..m {
                g.add_factor(unary(VariableKey::control(a, t - 1), w.qu, &[control_ref(t - 1, a)])?)?;
            }
            let step = step_at(t - 1);
            for j in 0..config.n {
                g.add_factor(transition(VariableKey::pendulum(j, t), j, t - 1, &step.bodies[j].pendulum)?)?;
            }
            for j in 0..config.n {
                g.add_factor(transition(VariableKey::cart(j, t), j, t - 1, &step.bodies[j].cart)?)?;
            }
        } else {
            for (key, idx) in (0..config.n)
                .map(|j| (VariableKey::pendulum(j, 0), 4 * j + 2))
                .chain((0..config.n).map(|j| (VariableKey::cart(j, 0), 4 * j)))
            {
                let r = state_ref(0, idx);
                let rhs = vec![config.x0[idx] - r[0], config.x0[idx + 1] - r[1]];
                g.add_factor(Factor::constraint(vec![key], vec![Matrix::identity(2)], rhs)?)?;
            }
        }
    }

    if lambda > 0.0 {
        let s = lambda.sqrt();
        for key in &order {
            let dim = key.dim();
            g.add_factor(Factor::cost(vec![*key], vec![Matrix::identity(dim).scaled(s)], vec![0.0; dim])?)?;
        }
    }
    Ok(g)
}

/// `next - sum(blocks * inputs) = offset` for one body's cart or pendulum.
/// Zero coupling blocks are left out so they do not create graph edges.
fn transition(next: VariableKey, body: usize, t: usize, rows: &RowBlocks) -> Result<Factor> {
    let mut keys = vec![next];
    let mut blocks = vec![Matrix::identity(2)];
    let mut push = |key: VariableKey, m: &Matrix| {
        if !m.is_zero() {
            keys.push(key);
            blocks.push(m.scaled(-1.0));
        }
    };
    push(VariableKey::pendulum(body, t), &rows.own_pendulum);
    push(VariableKey::cart(body, t), &rows.own_cart);
    for (i, m) in &rows.neighbor_carts {
        push(VariableKey::cart(*i, t), m);
    }
    for (i, m) in &rows.neighbor_pendulums {
        push(VariableKey::pendulum(*i, t), m);
    }
    if let Some((a, m)) = &rows.control {
        push(VariableKey::control(*a, t), m);
    }
    Factor::constraint(keys, blocks, rows.offset.to_vec())
}

/// Reads a trajectory out of a solution. With a reference, the solution holds
/// deviations and the reference is added back.
pub fn solution_to_trajectory(
    config: &ProblemConfig,
    solution: &Solution,
    reference: Option<&Trajectory>,
) -> Result<Trajectory> {
    let m = config.actuators().len();
    let fetch = |key: VariableKey| solution.get(&key).ok_or(Error::UnknownVariable(key));
    let mut states = Vec::with_capacity(config.horizon);
    for t in 0..config.horizon {
        let mut s = vec![0.0; 4 * config.n];
        for j in 0..config.n {
            s[4 * j..4 * j + 2].copy_from_slice(fetch(VariableKey::cart(j, t))?);
            s[4 * j + 2..4 * j + 4].copy_from_slice(fetch(VariableKey::pendulum(j, t))?);
        }
        if let Some(r) = reference {
            s.iter_mut().zip(&r.states[t]).for_each(|(a, b)| *a += b);
        }
        states.push(s);
    }
    let mut controls = Vec::with_capacity(config.horizon - 1);
    for t in 0..config.horizon - 1 {
        let mut u = (0..m)
            .map(|a| fetch(VariableKey::control(a, t)).map(|v| v[0]))
            .collect::<Result<Vec<_>>>()?;
        if let Some(r) = reference {
            u.iter_mut().zip(&r.controls[t]).for_each(|(a, b)| *a += b);
        }
        controls.push(u);
    }
    Ok(Trajectory { states, controls })
}

/// Inverse of [`solution_to_trajectory`] without a reference.
pub fn trajectory_to_values(traj: &Trajectory) -> BTreeMap<VariableKey, Vec<f64>> {
    let mut values = BTreeMap::new();
    for (t, s) in traj.states.iter().enumerate() {
        for (j, body) in s.chunks(4).enumerate() {
            values.insert(VariableKey::cart(j, t), body[..2].to_vec());
            values.insert(VariableKey::pendulum(j, t), body[2..].to_vec());
        }
    }
    for (t, u) in traj.controls.iter().enumerate() {
        for (a, v) in u.iter().enumerate() {
            values.insert(VariableKey::control(a, t), vec![*v]);
        }
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartpole::{local_linear_dynamics, trajectory_cost, Actuation, CartPoleParams};
    use crate::graph::VariableKind;

    fn small() -> (ProblemConfig, FactorGraph) {
        let cfg = ProblemConfig::new(2, Actuation::Count(1), 3).with_uniform_tilt(0.02);
        let g = build_ocp_graph(&cfg, &local_linear_dynamics(&CartPoleParams::default())).unwrap();
        (cfg, g)
    }

    #[test]
    fn figure_layout_columns() {
        let (cfg, g) = small();
        let order = figure_column_order(&cfg);
        assert_eq!(order.len(), 14);
        assert_eq!(
            &order[..5],
            &[
                VariableKey::pendulum(0, 2),
                VariableKey::pendulum(1, 2),
                VariableKey::cart(0, 2),
                VariableKey::cart(1, 2),
                VariableKey::control(0, 1),
            ]
        );
        let (f, _, _) = g.assemble_dense(&order).unwrap();
        assert_eq!(f.cols(), 4 * 2 * 3 + 2);
        assert_eq!(g.total_dim(), cfg.scalar_dim());
    }

    #[test]
    fn pendulum_constraint_touches_expected_nodes() {
        let (_, g) = small();
        let f = g
            .factors()
            .iter()
            .find(|f| f.is_constraint() && f.keys()[0] == VariableKey::pendulum(0, 2))
            .unwrap();
        let mut keys = f.keys().to_vec();
        keys.sort();
        let mut want = vec![
            VariableKey::pendulum(0, 2),
            VariableKey::pendulum(0, 1),
            VariableKey::cart(0, 1),
            VariableKey::cart(1, 1),
            VariableKey::control(0, 1),
        ];
        want.sort();
        assert_eq!(keys, want);
    }

    #[test]
    fn degenerate_horizon() {
        let cfg = ProblemConfig::new(1, Actuation::Count(1), 1);
        let g = build_ocp_graph(&cfg, &local_linear_dynamics(&CartPoleParams::default())).unwrap();
        assert_eq!(g.variables().len(), 2);
        assert_eq!(g.factors().iter().filter(|f| !f.is_constraint()).count(), 2);
        assert_eq!(g.factors().iter().filter(|f| f.is_constraint()).count(), 2);
        assert!(g.variables().iter().all(|v| v.key.kind != VariableKind::Control));
    }

    #[test]
    fn constraints_stay_local() {
        let cfg = ProblemConfig::new(5, Actuation::Count(2), 4);
        let g = build_ocp_graph(&cfg, &local_linear_dynamics(&CartPoleParams::default())).unwrap();
        for f in g.factors().iter().filter(|f| f.is_constraint()) {
            let head = f.keys()[0];
            for k in f.keys() {
                assert!(head.time - k.time <= 1);
                if k.kind != VariableKind::Control {
                    assert!(head.body.abs_diff(k.body) <= 1);
                }
            }
        }
    }

    #[test]
    fn graph_cost_matches_trajectory_cost() {
        let (cfg, g) = small();
        let traj = Trajectory {
            states: (0..3).map(|t| (0..8).map(|i| (t * 8 + i) as f64 * 0.01).collect()).collect(),
            controls: vec![vec![0.3], vec![-0.2]],
        };
        let (cost, _) = g.residual_cost(&trajectory_to_values(&traj)).unwrap();
        assert!((cost - trajectory_cost(&cfg, &traj)).abs() < 1e-10);
    }

    #[test]
    fn rejects_short_step_list() {
        let cfg = ProblemConfig::new(1, Actuation::Count(1), 4);
        assert!(matches!(build_ocp_graph_with(&cfg, &[]), Err(Error::DimensionMismatch(_))));
    }
}
