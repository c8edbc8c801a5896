//! JSON problem description.
//!
//! Every key is optional; missing keys keep the values of the base config the
//! caller starts from. Example:
//!
//! ```json
//! {
//!   "n": 3,
//!   "actuation": { "m": 2 },
//!   "horizon": 150,
//!   "dt": 0.05,
//!   "masses": { "cart": 1.0, "pendulum": 0.2 },
//!   "length": 0.5,
//!   "spring": 1000.0,
//!   "damping": 1.0,
//!   "gravity": 9.81,
//!   "weights": { "qx": 10, "qtheta": 10, "qu": 0.01, "qxf": 3000, "qthetaf": 3000 },
//!   "preset": { "upright_perturbed": 1.15 }
//! }
//! ```
//!
//! `actuation` is one of `{"m": count}`, `{"rho": ratio}` or
//! `{"indices": [..]}`. The initial state is either `"x0": [4n values]` or a
//! preset: `{"upright_perturbed": degrees}` or `"hanging"`.

use std::path::Path;

use serde::Deserialize;

use super::{Actuation, CartPoleParams, CostWeights, ProblemConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n: Option<usize>,
    pub actuation: Option<ActuationSpec>,
    pub horizon: Option<usize>,
    pub dt: Option<f64>,
    pub masses: Option<Masses>,
    pub length: Option<f64>,
    pub spring: Option<f64>,
    pub damping: Option<f64>,
    pub gravity: Option<f64>,
    pub weights: Option<WeightSpec>,
    pub x0: Option<Vec<f64>>,
    pub preset: Option<Preset>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuationSpec {
    m: Option<usize>,
    rho: Option<f64>,
    indices: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Masses {
    cart: Option<f64>,
    pendulum: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    qx: Option<f64>,
    qtheta: Option<f64>,
    qu: Option<f64>,
    qxf: Option<f64>,
    qthetaf: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Degrees from upright on every pendulum.
    UprightPerturbed(f64),
    Hanging,
}

/// How the initial state is produced once `n` is known.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Explicit(Vec<f64>),
    UprightPerturbed { degrees: f64 },
    Hanging,
}

impl InitialState {
    pub fn resolve(&self, n: usize) -> Result<Vec<f64>> {
        let tilt = |theta: f64| {
            let mut x = vec![0.0; 4 * n];
            for j in 0..n {
                x[4 * j + 2] = theta;
            }
            x
        };
        match self {
            InitialState::Explicit(x) if x.len() == 4 * n => Ok(x.clone()),
            InitialState::Explicit(x) => Err(Error::Config(format!(
                "x0 has {} entries, expected {}",
                x.len(),
                4 * n
            ))),
            InitialState::UprightPerturbed { degrees } => Ok(tilt(degrees.to_radians())),
            InitialState::Hanging => Ok(tilt(std::f64::consts::PI)),
        }
    }
}

/// A fully resolved problem: OCP description plus physical parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub problem: ProblemConfig,
    pub params: CartPoleParams,
    pub initial: InitialState,
}

impl LoadedConfig {
    /// N = 3, M = 2, T = 150, 1.15 degree tilt on every pendulum.
    pub fn validation_default() -> Self {
        Self::from_parts(3, Actuation::Count(2), 150, InitialState::UprightPerturbed { degrees: 1.15 })
    }

    /// N = 5, M = 2, T = 50, hanging start.
    pub fn swingup_default() -> Self {
        Self::from_parts(5, Actuation::Count(2), 50, InitialState::Hanging)
    }

    fn from_parts(n: usize, actuation: Actuation, horizon: usize, initial: InitialState) -> Self {
        let mut problem = ProblemConfig::new(n, actuation, horizon);
        problem.x0 = initial.resolve(n).expect("presets always resolve");
        Self {
            problem,
            params: CartPoleParams::default(),
            initial,
        }
    }

    pub fn from_json_str(base: Self, json: &str) -> Result<Self> {
        let file: ConfigFile = serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))?;
        file.apply(base)
    }

    pub fn from_path(base: Self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(base, &text)
    }

    /// Re-resolves the initial state, e.g. after changing `n`.
    pub fn with_n(mut self, n: usize, actuation: Actuation) -> Result<Self> {
        self.problem.n = n;
        self.problem.actuation = actuation;
        self.problem.x0 = self.initial.resolve(n)?;
        Ok(self)
    }
}

impl ConfigFile {
    pub fn apply(self, base: LoadedConfig) -> Result<LoadedConfig> {
        let LoadedConfig {
            mut problem,
            mut params,
            mut initial,
        } = base;
        if let Some(n) = self.n {
            problem.n = n;
        }
        if let Some(h) = self.horizon {
            problem.horizon = h;
        }
        if let Some(a) = self.actuation {
            problem.actuation = match (a.m, a.rho, a.indices) {
                (Some(m), None, None) => Actuation::Count(m),
                (None, Some(r), None) => Actuation::Ratio(r),
                (None, None, Some(idx)) => Actuation::Explicit(idx),
                _ => return Err(Error::Config("actuation needs exactly one of m, rho, indices".into())),
            };
        }
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut params.dt, self.dt);
        set(&mut params.length, self.length);
        set(&mut params.spring, self.spring);
        set(&mut params.damping, self.damping);
        set(&mut params.gravity, self.gravity);
        if let Some(m) = self.masses {
            set(&mut params.cart_mass, m.cart);
            set(&mut params.pendulum_mass, m.pendulum);
        }
        if let Some(w) = self.weights {
            let CostWeights {
                qx,
                qtheta,
                qu,
                qxf,
                qthetaf,
            } = &mut problem.weights;
            set(qx, w.qx);
            set(qtheta, w.qtheta);
            set(qu, w.qu);
            set(qxf, w.qxf);
            set(qthetaf, w.qthetaf);
        }
        match (self.x0, self.preset) {
            (Some(_), Some(_)) => return Err(Error::Config("give either x0 or preset, not both".into())),
            (Some(x), None) => initial = InitialState::Explicit(x),
            (None, Some(Preset::UprightPerturbed(d))) => initial = InitialState::UprightPerturbed { degrees: d },
            (None, Some(Preset::Hanging)) => initial = InitialState::Hanging,
            (None, None) => {}
        }
        problem.x0 = initial.resolve(problem.n)?;
        params.validate()?;
        problem.validate()?;
        Ok(LoadedConfig {
            problem,
            params,
            initial,
        })
    }
}
