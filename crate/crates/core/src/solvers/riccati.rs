//! Dense finite-horizon LQR by backward Riccati recursion. This is the
//! baseline: it ignores all sparsity and costs `O(T (N_s + M)^3)`.

use nalgebra::{DMatrix, DVector};

use crate::cartpole::{LocalDynamics, ProblemConfig, StepDynamics};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DenseLTIModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Diagonals of Q, Q_f and R_u.
    pub q: Vec<f64>,
    pub qf: Vec<f64>,
    pub r: Vec<f64>,
}

impl DenseLTIModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }
}

pub fn assemble_dense_lti(config: &ProblemConfig, dynamics: &LocalDynamics) -> Result<DenseLTIModel> {
    config.validate()?;
    let step = dynamics.expand(&config.layout());
    dense_from_step(config, &step)
}

/// Dense model from an already expanded transition. Offsets must be zero.
pub fn dense_from_step(config: &ProblemConfig, step: &StepDynamics) -> Result<DenseLTIModel> {
    let m = config.actuators().len();
    if step.bodies.len() != config.n {
        return Err(Error::DimensionMismatch(format!(
            "transition covers {} bodies, config has {}",
            step.bodies.len(),
            config.n
        )));
    }
    let (a, b, c) = step.to_dense(m);
    if c.iter().any(|v| *v != 0.0) {
        return Err(Error::DimensionMismatch("affine transitions are not LTI".into()));
    }
    let ns = a.rows();
    let w = &config.weights;
    let per_body = |qx: f64, qth: f64| (0..ns).map(|i| if i % 4 < 2 { qx } else { qth }).collect::<Vec<_>>();
    Ok(DenseLTIModel {
        a: DMatrix::from_row_slice(ns, ns, a.as_slice()),
        b: DMatrix::from_row_slice(ns, m, b.as_slice()),
        q: per_body(w.qx, w.qtheta),
        qf: per_body(w.qxf, w.qthetaf),
        r: vec![w.qu; m],
    })
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// `u_t = -K_t x_t`
    pub gains: Vec<DMatrix<f64>>,
    pub cost: f64,
    /// Cost-to-go matrix at `t = 0`; `x0' P_0 x0` equals `cost`.
    pub p0: DMatrix<f64>,
}

fn add_diagonal(m: &mut DMatrix<f64>, d: &[f64]) {
    for (i, v) in d.iter().enumerate() {
        m[(i, i)] += v;
    }
}

/// Backward recursion from `P_{T-1} = Q_f`, then a forward rollout.
pub fn riccati_lqr(model: &DenseLTIModel, horizon: usize, x0: &[f64]) -> Result<RiccatiSolution> {
    let ns = model.state_dim();
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if x0.len() != ns || model.q.len() != ns || model.qf.len() != ns || model.r.len() != model.control_dim() {
        return Err(Error::DimensionMismatch(format!(
            "model has {ns} states; x0 has {}",
            x0.len()
        )));
    }
    let (a, b) = (&model.a, &model.b);
    let mut p = DMatrix::from_diagonal(&DVector::from_column_slice(&model.qf));
    let mut gains = vec![DMatrix::zeros(0, 0); horizon - 1];
    for t in (0..horizon - 1).rev() {
        let bt_p = b.transpose() * &p;
        let mut s = &bt_p * b;
        add_diagonal(&mut s, &model.r);
        let k = s
            .lu()
            .solve(&(&bt_p * a))
            .ok_or(Error::SingularInnovation { step: t })?;
        if !k.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularInnovation { step: t });
        }
        let closed = a - b * &k;
        let mut next = a.transpose() * (&p * closed);
        add_diagonal(&mut next, &model.q);
        // keep P symmetric against rounding drift
        p = (&next + next.transpose()) * 0.5;
        gains[t] = k;
    }

    let mut x = DVector::from_column_slice(x0);
    let mut states = Vec::with_capacity(horizon);
    let mut controls = Vec::with_capacity(horizon - 1);
    let mut cost = 0.0;
    let quad = |d: &[f64], v: &DVector<f64>| d.iter().zip(v.iter()).map(|(w, x)| w * x * x).sum::<f64>();
    for k in &gains {
        let u = -(k * &x);
        cost += quad(&model.q, &x) + quad(&model.r, &u);
        states.push(x.as_slice().to_vec());
        controls.push(u.as_slice().to_vec());
        x = a * &x + b * &u;
    }
    cost += quad(&model.qf, &x);
    states.push(x.as_slice().to_vec());
    Ok(RiccatiSolution {
        states,
        controls,
        gains,
        cost,
        p0: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartpole::{local_linear_dynamics, simulate, Actuation, CartPoleParams, Model};
    use approx::assert_relative_eq;

    fn scalar() -> DenseLTIModel {
        DenseLTIModel {
            a: DMatrix::from_element(1, 1, 1.0),
            b: DMatrix::from_element(1, 1, 1.0),
            q: vec![1.0],
            qf: vec![1.0],
            r: vec![1.0],
        }
    }

    #[test]
    fn scalar_two_step() {
        let sol = riccati_lqr(&scalar(), 2, &[1.0]).unwrap();
        assert_relative_eq!(sol.gains[0][(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(sol.controls[0][0], -0.5, epsilon = 1e-15);
        assert_relative_eq!(sol.cost, 1.5, epsilon = 1e-15);
        assert_relative_eq!(sol.p0[(0, 0)], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_start_stays_at_zero() {
        let sol = riccati_lqr(&scalar(), 5, &[0.0]).unwrap();
        assert!(sol.controls.iter().all(|u| u[0] == 0.0));
        assert_eq!(sol.cost, 0.0);
    }

    #[test]
    fn single_horizon_is_terminal_cost() {
        let sol = riccati_lqr(&scalar(), 1, &[2.0]).unwrap();
        assert!(sol.controls.is_empty());
        assert_eq!(sol.cost, 4.0);
    }

    #[test]
    fn singular_innovation() {
        let mut m = scalar();
        m.r = vec![0.0];
        m.qf = vec![0.0];
        assert!(matches!(riccati_lqr(&m, 2, &[1.0]), Err(Error::SingularInnovation { step: 0 })));
    }

    #[test]
    fn dense_assembly_layout() {
        let p = CartPoleParams::default();
        let d = local_linear_dynamics(&p);
        let single = assemble_dense_lti(&ProblemConfig::new(1, Actuation::Count(1), 2), &d).unwrap();
        assert_eq!(single.a.shape(), (4, 4));
        assert_relative_eq!(single.b[(1, 0)], d.b_x[(1, 0)]);
        assert_relative_eq!(single.b[(3, 0)], d.b_theta[(1, 0)]);

        let cfg = ProblemConfig::new(3, Actuation::Count(2), 2);
        let model = assemble_dense_lti(&cfg, &d).unwrap();
        assert!(model.a.view((0, 8), (4, 4)).iter().all(|v| *v == 0.0));
        let x: Vec<f64> = (0..12).map(|i| 0.01 * i as f64).collect();
        let u = vec![vec![0.5, -0.25]];
        let step = d.expand(&cfg.layout());
        let sim = simulate(&x, &u, &cfg.layout(), &p, Model::Linear(&step)).unwrap();
        let dense = &model.a * DVector::from_vec(x) + &model.b * DVector::from_vec(u[0].clone());
        for (a, b) in dense.iter().zip(&sim.states[1]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cost_identity() {
        let cfg = ProblemConfig::new(2, Actuation::Count(1), 12).with_uniform_tilt(0.02);
        let model = assemble_dense_lti(&cfg, &local_linear_dynamics(&CartPoleParams::default())).unwrap();
        let sol = riccati_lqr(&model, cfg.horizon, &cfg.x0).unwrap();
        let x = DVector::from_column_slice(&cfg.x0);
        let identity = (x.transpose() * &sol.p0 * &x)[(0, 0)];
        assert_relative_eq!(sol.cost, identity, max_relative = 1e-8);
    }
}
