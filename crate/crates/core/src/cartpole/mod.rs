//! Chain of N cart-poles joined by spring-dampers between neighboring carts.
//!
//! State layout: body `j` owns entries `4j..4j+4` = (x, x_dot, theta,
//! theta_dot). The angle is measured from upright. Controls are forces on the
//! actuated carts, indexed by actuator.

mod builder;
mod config;

pub use builder::{build_deviation_graph, build_ocp_graph, build_ocp_graph_with, figure_column_order,
    solution_to_trajectory, trajectory_to_values};
pub use config::{ConfigFile, InitialState, LoadedConfig, Preset};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pendulum_mass: f64,
    pub length: f64,
    pub spring: f64,
    pub damping: f64,
    pub gravity: f64,
    pub dt: f64,
}

impl Default for CartPoleParams {
    /// m_c = 1 kg, m_p = 0.2 kg, L = 0.5 m, k = 1000 N/m, c = 1 Ns/m, dt = 0.05 s.
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pendulum_mass: 0.2,
            length: 0.5,
            spring: 1000.0,
            damping: 1.0,
            gravity: STANDARD_GRAVITY,
            dt: 0.05,
        }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("cart_mass", self.cart_mass),
            ("pendulum_mass", self.pendulum_mass),
            ("length", self.length),
            ("spring", self.spring),
            ("damping", self.damping),
            ("gravity", self.gravity),
            ("dt", self.dt),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Actuation {
    Count(usize),
    Ratio(f64),
    /// Explicit actuated cart indices, in actuator order.
    Explicit(Vec<usize>),
}

/// Diagonal cost weights, one scalar per node kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub qx: f64,
    pub qtheta: f64,
    pub qu: f64,
    pub qxf: f64,
    pub qthetaf: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            qx: 10.0,
            qtheta: 10.0,
            qu: 0.01,
            qxf: 3000.0,
            qthetaf: 3000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub n: usize,
    pub actuation: Actuation,
    pub horizon: usize,
    pub weights: CostWeights,
    /// Initial full state, `4n` values.
    pub x0: Vec<f64>,
}

impl ProblemConfig {
    /// Zero initial state and default weights.
    pub fn new(n: usize, actuation: Actuation, horizon: usize) -> Self {
        Self {
            n,
            actuation,
            horizon,
            weights: CostWeights::default(),
            x0: vec![0.0; 4 * n],
        }
    }

    /// Same angle (radians) on every pendulum, everything else at rest.
    pub fn with_uniform_tilt(mut self, theta: f64) -> Self {
        self.x0 = vec![0.0; 4 * self.n];
        for j in 0..self.n {
            self.x0[4 * j + 2] = theta;
        }
        self
    }

    pub fn actuators(&self) -> Vec<usize> {
        actuator_layout(self.n, &self.actuation)
    }

    pub fn layout(&self) -> ChainLayout {
        ChainLayout::new(self.n, self.actuators())
    }

    pub fn state_dim(&self) -> usize {
        4 * self.n
    }

    /// Graph node count: `2N T + M (T - 1)`.
    pub fn variable_count(&self) -> usize {
        let m = self.actuators().len();
        2 * self.n * self.horizon + m * self.horizon.saturating_sub(1)
    }

    /// Scalar decision count: `4N T + M (T - 1)`.
    pub fn scalar_dim(&self) -> usize {
        let m = self.actuators().len();
        4 * self.n * self.horizon + m * self.horizon.saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("need at least one cart".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        match &self.actuation {
            Actuation::Count(m) if *m == 0 || *m > self.n => {
                return Err(Error::Config(format!("actuator count {m} outside [1, {}]", self.n)))
            }
            Actuation::Ratio(r) if !(r.is_finite() && *r > 0.0 && *r <= 1.0) => {
                return Err(Error::Config(format!("actuation ratio {r} outside (0, 1]")))
            }
            Actuation::Explicit(idx) => {
                if idx.is_empty() {
                    return Err(Error::Config("explicit actuator list is empty".into()));
                }
                let mut sorted = idx.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != idx.len() || idx.iter().any(|&i| i >= self.n) {
                    return Err(Error::Config(format!("bad actuator list {idx:?}")));
                }
            }
            _ => {}
        }
        let w = &self.weights;
        for (name, v) in [
            ("qx", w.qx),
            ("qtheta", w.qtheta),
            ("qu", w.qu),
            ("qxf", w.qxf),
            ("qthetaf", w.qthetaf),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("weight {name} must be nonnegative, got {v}")));
            }
        }
        if self.x0.len() != self.state_dim() {
            return Err(Error::DimensionMismatch(format!(
                "x0 has {} entries, expected {}",
                self.x0.len(),
                self.state_dim()
            )));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("x0 must be finite".into()));
        }
        Ok(())
    }
}

/// Evenly spaced actuated carts: `floor(j N / M)` for `j < M`, with
/// `M = round(rho N)` clamped to `[1, N]` for ratios.
pub fn actuator_layout(n: usize, actuation: &Actuation) -> Vec<usize> {
    let m = match actuation {
        Actuation::Explicit(idx) => return idx.clone(),
        Actuation::Count(m) => *m,
        Actuation::Ratio(r) => (r * n as f64).round() as usize,
    };
    let m = m.clamp(1, n.max(1));
    (0..m).map(|j| j * n / m).collect()
}

/// Which carts exist, which are actuated, and who neighbors whom.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainLayout {
    pub n: usize,
    pub actuators: Vec<usize>,
    actuator_of: Vec<Option<usize>>,
}

impl ChainLayout {
    pub fn new(n: usize, actuators: Vec<usize>) -> Self {
        let mut actuator_of = vec![None; n];
        for (a, &j) in actuators.iter().enumerate() {
            actuator_of[j] = Some(a);
        }
        Self {
            n,
            actuators,
            actuator_of,
        }
    }

    pub fn m(&self) -> usize {
        self.actuators.len()
    }

    pub fn actuator_of(&self, body: usize) -> Option<usize> {
        self.actuator_of[body]
    }

    pub fn neighbors(&self, body: usize) -> impl Iterator<Item = usize> + '_ {
        let left = body.checked_sub(1);
        let right = (body + 1 < self.n).then_some(body + 1);
        left.into_iter().chain(right)
    }

    pub fn neighbor_count(&self, body: usize) -> usize {
        self.neighbors(body).count()
    }
}

/// Uniform linear blocks of one cart-pole, linearized about upright.
///
/// `a_xx` and `a_theta_x` are for an uncoupled body; a body with `n`
/// spring-damper neighbors uses [`LocalDynamics::a_xx_with`] and
/// [`LocalDynamics::a_theta_x_with`]. Positions use `dt^2 / 2` terms and
/// velocities `dt` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDynamics {
    pub a_xx: Matrix,
    pub a_x_theta: Matrix,
    pub a_x_nb_x: Matrix,
    pub a_theta_theta: Matrix,
    pub a_theta_x: Matrix,
    pub a_theta_nb_x: Matrix,
    pub b_x: Matrix,
    pub b_theta: Matrix,
    /// Neighbor pendulum to cart. Zero for this model, so `None`.
    pub a_x_nb_theta: Option<Matrix>,
}

impl LocalDynamics {
    pub fn a_xx_with(&self, neighbors: usize) -> Matrix {
        self.a_xx.sub(&self.a_x_nb_x.scaled(neighbors as f64))
    }

    pub fn a_theta_x_with(&self, neighbors: usize) -> Matrix {
        self.a_theta_x
            .sub(&self.a_theta_nb_x.scaled(neighbors as f64))
    }

    /// Per-body blocks for one transition of the whole chain.
    pub fn expand(&self, layout: &ChainLayout) -> StepDynamics {
        let bodies = (0..layout.n)
            .map(|j| {
                let nn = layout.neighbor_count(j);
                let control = layout.actuator_of(j);
                BodyDynamics {
                    cart: RowBlocks {
                        own_cart: self.a_xx_with(nn),
                        own_pendulum: self.a_x_theta.clone(),
                        neighbor_carts: layout.neighbors(j).map(|i| (i, self.a_x_nb_x.clone())).collect(),
                        neighbor_pendulums: match &self.a_x_nb_theta {
                            Some(b) => layout.neighbors(j).map(|i| (i, b.clone())).collect(),
                            None => Vec::new(),
                        },
                        control: control.map(|a| (a, self.b_x.clone())),
                        offset: [0.0; 2],
                    },
                    pendulum: RowBlocks {
                        own_cart: self.a_theta_x_with(nn),
                        own_pendulum: self.a_theta_theta.clone(),
                        neighbor_carts: layout
                            .neighbors(j)
                            .map(|i| (i, self.a_theta_nb_x.clone()))
                            .collect(),
                        neighbor_pendulums: Vec::new(),
                        control: control.map(|a| (a, self.b_theta.clone())),
                        offset: [0.0; 2],
                    },
                }
            })
            .collect();
        StepDynamics { bodies }
    }
}

/// Discrete linearization about the upright equilibrium.
pub fn local_linear_dynamics(p: &CartPoleParams) -> LocalDynamics {
    let dt = p.dt;
    let h2 = 0.5 * dt * dt;
    let (mc, mp, l, g) = (p.cart_mass, p.pendulum_mass, p.length, p.gravity);
    // Continuous accelerations: xdd = (F - m_p g th) / m_c,
    // thdd = ((m_c + m_p) g th - F) / (m_c L), F = u + spring-damper force.
    let disc = |pos_coeff: f64, vel_coeff: f64| {
        Matrix::from_rows(&[&[h2 * pos_coeff, h2 * vel_coeff], &[dt * pos_coeff, dt * vel_coeff]])
    };
    let w2 = (mc + mp) * g / (mc * l);
    LocalDynamics {
        a_xx: Matrix::from_rows(&[&[1.0, dt], &[0.0, 1.0]]),
        a_x_theta: disc(-mp * g / mc, 0.0),
        a_x_nb_x: disc(p.spring / mc, p.damping / mc),
        a_theta_theta: Matrix::from_rows(&[&[1.0 + h2 * w2, dt], &[dt * w2, 1.0]]),
        a_theta_x: Matrix::zeros(2, 2),
        a_theta_nb_x: disc(-p.spring / (mc * l), -p.damping / (mc * l)),
        b_x: Matrix::column_vector(&[h2 / mc, dt / mc]),
        b_theta: Matrix::column_vector(&[-h2 / (mc * l), -dt / (mc * l)]),
        a_x_nb_theta: None,
    }
}

/// Blocks of one next-state row pair (cart or pendulum) of one body:
/// `next = own_cart X_j + own_pendulum th_j + sum nb + B u + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowBlocks {
    pub own_cart: Matrix,
    pub own_pendulum: Matrix,
    pub neighbor_carts: Vec<(usize, Matrix)>,
    pub neighbor_pendulums: Vec<(usize, Matrix)>,
    /// (actuator index, 2x1 input block)
    pub control: Option<(usize, Matrix)>,
    pub offset: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyDynamics {
    pub cart: RowBlocks,
    pub pendulum: RowBlocks,
}

/// One chain transition, `x_{t+1} = A x_t + B u_t + c`, kept as one-hop blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDynamics {
    pub bodies: Vec<BodyDynamics>,
}

impl StepDynamics {
    pub fn apply(&self, state: &[f64], control: &[f64]) -> Vec<f64> {
        let mut next = vec![0.0; state.len()];
        for (j, body) in self.bodies.iter().enumerate() {
            for (row, blocks) in [(0, &body.cart), (2, &body.pendulum)] {
                let mut out = blocks.offset;
                let mut add = |m: &Matrix, v: &[f64]| {
                    for (o, x) in out.iter_mut().zip(m.mul_vec(v)) {
                        *o += x;
                    }
                };
                add(&blocks.own_cart, &state[4 * j..4 * j + 2]);
                add(&blocks.own_pendulum, &state[4 * j + 2..4 * j + 4]);
                for (i, b) in &blocks.neighbor_carts {
                    add(b, &state[4 * i..4 * i + 2]);
                }
                for (i, b) in &blocks.neighbor_pendulums {
                    add(b, &state[4 * i + 2..4 * i + 4]);
                }
                if let Some((a, b)) = &blocks.control {
                    add(b, &control[*a..*a + 1]);
                }
                next[4 * j + row..4 * j + row + 2].copy_from_slice(&out);
            }
        }
        next
    }

    /// Dense `(A, B, c)` of this transition.
    pub fn to_dense(&self, m: usize) -> (Matrix, Matrix, Vec<f64>) {
        let ns = 4 * self.bodies.len();
        let mut a = Matrix::zeros(ns, ns);
        let mut b = Matrix::zeros(ns, m);
        let mut c = vec![0.0; ns];
        let place = |dst: &mut Matrix, r0: usize, c0: usize, blk: &Matrix| {
            for i in 0..blk.rows() {
                for k in 0..blk.cols() {
                    dst[(r0 + i, c0 + k)] += blk[(i, k)];
                }
            }
        };
        for (j, body) in self.bodies.iter().enumerate() {
            for (row, blocks) in [(0, &body.cart), (2, &body.pendulum)] {
                let r0 = 4 * j + row;
                place(&mut a, r0, 4 * j, &blocks.own_cart);
                place(&mut a, r0, 4 * j + 2, &blocks.own_pendulum);
                for (i, blk) in &blocks.neighbor_carts {
                    place(&mut a, r0, 4 * i, blk);
                }
                for (i, blk) in &blocks.neighbor_pendulums {
                    place(&mut a, r0, 4 * i + 2, blk);
                }
                if let Some((act, blk)) = &blocks.control {
                    place(&mut b, r0, *act, blk);
                }
                c[r0..r0 + 2].copy_from_slice(&blocks.offset);
            }
        }
        (a, b, c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `T` rows of `4N` states.
    pub states: Vec<Vec<f64>>,
    /// `T - 1` rows of `M` controls.
    pub controls: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn check(&self, n: usize, m: usize) -> Result<()> {
        let t = self.states.len();
        if t == 0 || self.controls.len() != t - 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} states need {} control rows, got {}",
                t,
                t.saturating_sub(1),
                self.controls.len()
            )));
        }
        if self.states.iter().any(|s| s.len() != 4 * n) || self.controls.iter().any(|u| u.len() != m) {
            return Err(Error::DimensionMismatch(format!(
                "trajectory rows must have {} states and {m} controls",
                4 * n
            )));
        }
        Ok(())
    }

    pub fn angle(&self, t: usize, body: usize) -> f64 {
        self.states[t][4 * body + 2]
    }
}

/// Quadratic cost of a trajectory under the problem weights.
pub fn trajectory_cost(config: &ProblemConfig, traj: &Trajectory) -> f64 {
    let w = &config.weights;
    let last = traj.states.len() - 1;
    let mut cost = 0.0;
    for (t, s) in traj.states.iter().enumerate() {
        let (qx, qth) = if t == last { (w.qxf, w.qthetaf) } else { (w.qx, w.qtheta) };
        for body in s.chunks(4) {
            cost += qx * (body[0] * body[0] + body[1] * body[1]);
            cost += qth * (body[2] * body[2] + body[3] * body[3]);
        }
    }
    for u in &traj.controls {
        cost += w.qu * u.iter().map(|x| x * x).sum::<f64>();
    }
    cost
}

// ---------------------------------------------------------------------------
// Nonlinear model

/// Spring-damper force on cart `j` from its neighbors.
fn coupling_force(state: &[f64], layout: &ChainLayout, j: usize, p: &CartPoleParams) -> f64 {
    layout
        .neighbors(j)
        .map(|i| p.spring * (state[4 * i] - state[4 * j]) + p.damping * (state[4 * i + 1] - state[4 * j + 1]))
        .sum()
}

/// Time derivative of one cart-pole under a horizontal cart force.
fn local_rhs(z: [f64; 4], force: f64, p: &CartPoleParams) -> [f64; 4] {
    let (s, c) = z[2].sin_cos();
    let w = z[3];
    let mp = p.pendulum_mass;
    let den = p.cart_mass + mp * s * s;
    let acc = (force + mp * s * (p.length * w * w - p.gravity * c)) / den;
    let alpha = (p.gravity * s - acc * c) / p.length;
    [z[1], acc, w, alpha]
}

/// Partial derivatives of [`local_rhs`]: (4x4 w.r.t. z, 4 w.r.t. force).
fn local_rhs_jacobian(z: [f64; 4], force: f64, p: &CartPoleParams) -> ([[f64; 4]; 4], [f64; 4]) {
    let (s, c) = z[2].sin_cos();
    let w = z[3];
    let (mp, l, g) = (p.pendulum_mass, p.length, p.gravity);
    let den = p.cart_mass + mp * s * s;
    let num = force + mp * s * (l * w * w - g * c);
    let acc = num / den;
    let dnum_dth = mp * (l * w * w * c - g * (c * c - s * s));
    let dden_dth = 2.0 * mp * s * c;
    let dacc_dth = (dnum_dth - acc * dden_dth) / den;
    let dacc_dw = 2.0 * mp * s * l * w / den;
    let dacc_df = 1.0 / den;
    let dalpha_dth = (g * c - dacc_dth * c + acc * s) / l;
    let dalpha_dw = -dacc_dw * c / l;
    let dalpha_df = -dacc_df * c / l;
    (
        [
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, dacc_dth, dacc_dw],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, dalpha_dth, dalpha_dw],
        ],
        [0.0, dacc_df, 0.0, dalpha_df],
    )
}

fn rk4_local(z: [f64; 4], force: f64, p: &CartPoleParams) -> [f64; 4] {
    let h = p.dt;
    let add = |a: [f64; 4], b: [f64; 4], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2], a[3] + s * b[3]];
    let k1 = local_rhs(z, force, p);
    let k2 = local_rhs(add(z, k1, 0.5 * h), force, p);
    let k3 = local_rhs(add(z, k2, 0.5 * h), force, p);
    let k4 = local_rhs(add(z, k3, h), force, p);
    let mut out = z;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// RK4 step and its 4x5 Jacobian w.r.t. (z, force).
fn rk4_local_with_jacobian(z: [f64; 4], force: f64, p: &CartPoleParams) -> ([f64; 4], [[f64; 5]; 4]) {
    let h = p.dt;
    type Tan = [[f64; 5]; 4];
    let mut eye: Tan = [[0.0; 5]; 4];
    for (i, row) in eye.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let stage = |zs: [f64; 4], dz: &Tan| -> ([f64; 4], Tan) {
        let k = local_rhs(zs, force, p);
        let (gz, gf) = local_rhs_jacobian(zs, force, p);
        let mut dk: Tan = [[0.0; 5]; 4];
        for i in 0..4 {
            for c in 0..5 {
                let mut v = (0..4).map(|m| gz[i][m] * dz[m][c]).sum::<f64>();
                if c == 4 {
                    v += gf[i];
                }
                dk[i][c] = v;
            }
        }
        (k, dk)
    };
    let step = |base: [f64; 4], dbase: &Tan, k: [f64; 4], dk: &Tan, s: f64| {
        let mut zn = base;
        let mut dn = *dbase;
        for i in 0..4 {
            zn[i] += s * k[i];
            for c in 0..5 {
                dn[i][c] += s * dk[i][c];
            }
        }
        (zn, dn)
    };
    let (k1, d1) = stage(z, &eye);
    let (z2, j2) = step(z, &eye, k1, &d1, 0.5 * h);
    let (k2, d2) = stage(z2, &j2);
    let (z3, j3) = step(z, &eye, k2, &d2, 0.5 * h);
    let (k3, d3) = stage(z3, &j3);
    let (z4, j4) = step(z, &eye, k3, &d3, h);
    let (k4, d4) = stage(z4, &j4);
    let mut out = z;
    let mut jac = eye;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        for c in 0..5 {
            jac[i][c] += h / 6.0 * (d1[i][c] + 2.0 * d2[i][c] + 2.0 * d3[i][c] + d4[i][c]);
        }
    }
    (out, jac)
}

fn body_state(state: &[f64], j: usize) -> [f64; 4] {
    [state[4 * j], state[4 * j + 1], state[4 * j + 2], state[4 * j + 3]]
}

fn body_force(state: &[f64], control: &[f64], layout: &ChainLayout, j: usize, p: &CartPoleParams) -> f64 {
    let u = layout.actuator_of(j).map_or(0.0, |a| control[a]);
    u + coupling_force(state, layout, j, p)
}

/// One `dt` step of the nonlinear chain.
///
/// Each cart-pole is integrated with classical RK4 while the spring-damper
/// force from its neighbors is held at its start-of-step value, so the next
/// state of body `j` depends only on bodies `j - 1`, `j`, `j + 1`.
pub fn nonlinear_step(state: &[f64], control: &[f64], layout: &ChainLayout, p: &CartPoleParams) -> Vec<f64> {
    let mut next = vec![0.0; state.len()];
    for j in 0..layout.n {
        let f = body_force(state, control, layout, j, p);
        let z = rk4_local(body_state(state, j), f, p);
        next[4 * j..4 * j + 4].copy_from_slice(&z);
    }
    next
}

fn mat2(rows: [[f64; 2]; 2]) -> Matrix {
    Matrix::from_rows(&[&rows[0], &rows[1]])
}

/// Analytic one-hop linearization of [`nonlinear_step`] at `(state, control)`.
/// Offsets are zero; callers add defects as needed.
pub fn step_jacobian(state: &[f64], control: &[f64], layout: &ChainLayout, p: &CartPoleParams) -> StepDynamics {
    let bodies = (0..layout.n)
        .map(|j| {
            let f = body_force(state, control, layout, j, p);
            let (_, jac) = rk4_local_with_jacobian(body_state(state, j), f, p);
            let nn = layout.neighbor_count(j) as f64;
            let rows = |r0: usize| {
                let df = [jac[r0][4], jac[r0 + 1][4]];
                // F depends on own (x, xd) with (-nn k, -nn c) and on a neighbor's with (k, c).
                let own_cart = mat2([
                    [jac[r0][0] - df[0] * nn * p.spring, jac[r0][1] - df[0] * nn * p.damping],
                    [jac[r0 + 1][0] - df[1] * nn * p.spring, jac[r0 + 1][1] - df[1] * nn * p.damping],
                ]);
                let own_pendulum = mat2([[jac[r0][2], jac[r0][3]], [jac[r0 + 1][2], jac[r0 + 1][3]]]);
                let nb = mat2([
                    [df[0] * p.spring, df[0] * p.damping],
                    [df[1] * p.spring, df[1] * p.damping],
                ]);
                RowBlocks {
                    own_cart,
                    own_pendulum,
                    neighbor_carts: layout.neighbors(j).map(|i| (i, nb.clone())).collect(),
                    neighbor_pendulums: Vec::new(),
                    control: layout
                        .actuator_of(j)
                        .map(|a| (a, Matrix::column_vector(&df))),
                    offset: [0.0; 2],
                }
            };
            BodyDynamics {
                cart: rows(0),
                pendulum: rows(2),
            }
        })
        .collect();
    StepDynamics { bodies }
}

/// Per-step linearizations along a trajectory. The offset of step `t` is the
/// defect `f(x_t, u_t) - x_{t+1}`, zero for a dynamically consistent rollout.
pub fn linearize_about(traj: &Trajectory, layout: &ChainLayout, p: &CartPoleParams) -> Result<Vec<StepDynamics>> {
    traj.check(layout.n, layout.m())?;
    let mut out = Vec::with_capacity(traj.controls.len());
    for t in 0..traj.controls.len() {
        let (x, u) = (&traj.states[t], &traj.controls[t]);
        let mut step = step_jacobian(x, u, layout, p);
        let next = nonlinear_step(x, u, layout, p);
        for (j, body) in step.bodies.iter_mut().enumerate() {
            for (row, blocks) in [(0, &mut body.cart), (2, &mut body.pendulum)] {
                let r = 4 * j + row;
                blocks.offset = [next[r] - traj.states[t + 1][r], next[r + 1] - traj.states[t + 1][r + 1]];
            }
        }
        out.push(step);
    }
    Ok(out)
}

pub enum Model<'a> {
    /// One transition reused at every step.
    Linear(&'a StepDynamics),
    /// Per-step transitions.
    TimeVarying(&'a [StepDynamics]),
    Nonlinear,
}

/// Rolls `x0` forward under `controls`.
pub fn simulate(
    x0: &[f64],
    controls: &[Vec<f64>],
    layout: &ChainLayout,
    p: &CartPoleParams,
    model: Model<'_>,
) -> Result<Trajectory> {
    if x0.len() != 4 * layout.n {
        return Err(Error::DimensionMismatch(format!(
            "x0 has {} entries, expected {}",
            x0.len(),
            4 * layout.n
        )));
    }
    if let Model::TimeVarying(steps) = &model {
        if steps.len() < controls.len() {
            return Err(Error::DimensionMismatch("fewer transitions than controls".into()));
        }
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0.to_vec());
    for (t, u) in controls.iter().enumerate() {
        if u.len() != layout.m() {
            return Err(Error::DimensionMismatch(format!(
                "control row {t} has {} entries, expected {}",
                u.len(),
                layout.m()
            )));
        }
        let x = &states[t];
        let next = match &model {
            Model::Linear(step) => step.apply(x, u),
            Model::TimeVarying(steps) => steps[t].apply(x, u),
            Model::Nonlinear => nonlinear_step(x, u, layout, p),
        };
        states.push(next);
    }
    Ok(Trajectory {
        states,
        controls: controls.to_vec(),
    })
}

/// Total mechanical energy of one cart-pole (no springs).
pub fn mechanical_energy(z: &[f64], p: &CartPoleParams) -> f64 {
    let (v, th, w) = (z[1], z[2], z[3]);
    let (mc, mp, l) = (p.cart_mass, p.pendulum_mass, p.length);
    0.5 * (mc + mp) * v * v + mp * l * v * w * th.cos() + 0.5 * mp * l * l * w * w + mp * p.gravity * l * th.cos()
}
