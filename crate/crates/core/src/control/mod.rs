//! Controllers on the lifted linear model: an LQR nominal policy and
//! sequential action control built on top of it.

pub mod lqr;
pub mod sac;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::edmd::KoopmanModel;
use crate::error::{Error, Result};

pub use lqr::{lqr_nominal, solve_dare, DareSolution, Policy};
pub use sac::{
    closed_form_action, mode_insertion_gradient, objective_value, sac_action, sac_adjoint, simulate_nominal, Insertion,
    Rollout, SacOutcome, TrackingObjective,
};

/// Weights and timing for the LQR nominal policy and the quadratic tracking
/// objective. Raw position entries of the lift get `weight_pos`, raw velocity
/// entries `weight_vel`, every other lifted entry `weight_obs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqrConfig {
    pub weight_pos: f64,
    pub weight_vel: f64,
    pub weight_obs: f64,
    pub weight_u: f64,
    pub weight_terminal: f64,
    pub horizon: f64,
    pub dt: f64,
}

impl Default for LqrConfig {
    fn default() -> Self {
        Self {
            weight_pos: 200.0,
            weight_vel: 30.0,
            weight_obs: 1.0,
            weight_u: 0.001,
            weight_terminal: 0.0,
            horizon: 0.16,
            dt: 0.01,
        }
    }
}

impl LqrConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("weight_pos", self.weight_pos),
            ("weight_vel", self.weight_vel),
            ("weight_obs", self.weight_obs),
            ("weight_terminal", self.weight_terminal),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.weight_u > 0.0) || !self.weight_u.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "weight_u must be positive, got {}",
                self.weight_u
            )));
        }
        if !(self.dt > 0.0) || !(self.horizon >= self.dt) {
            return Err(Error::InvalidParameter(format!(
                "need horizon >= dt > 0, got horizon {} and dt {}",
                self.horizon, self.dt
            )));
        }
        Ok(())
    }
}

/// Sequential action control settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub horizon: f64,
    pub dt: f64,
    pub rbar: Vec<f64>,
    pub nominal: LqrConfig,
}

impl SacConfig {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.nominal.validate()?;
        if self.rbar.is_empty() || self.rbar.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidParameter("all rbar entries must be positive".into()));
        }
        let ratio = self.horizon / self.dt;
        if !(self.dt > 0.0) || ratio.round() < 1.0 || (ratio - ratio.round()).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "horizon {} must be a positive integer multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        Ok(())
    }
}

/// Which raw-state entries of the lift are positions and velocities, and
/// which lifted entries are identically constant.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LiftLayout {
    pub n_pos: usize,
    pub n_vel: usize,
    pub constant: Vec<usize>,
}

/// Diagonal quadratic weights: running state `q`, running control `r`,
/// terminal state `qt`. Indices in `skip` are excluded from the Riccati
/// solve (their gain columns are zero).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub q: DVector<f64>,
    pub r: DVector<f64>,
    pub qt: DVector<f64>,
    pub skip: Vec<usize>,
}

impl QuadraticCost {
    pub fn from_config(cfg: &LqrConfig, n_z: usize, n_u: usize, layout: &LiftLayout) -> Self {
        let q = DVector::from_fn(n_z, |i, _| {
            if layout.constant.contains(&i) {
                0.0
            } else if i < layout.n_pos {
                cfg.weight_pos
            } else if i < layout.n_pos + layout.n_vel {
                cfg.weight_vel
            } else {
                cfg.weight_obs
            }
        });
        Self {
            q,
            r: DVector::from_element(n_u, cfg.weight_u),
            qt: DVector::from_element(n_z, cfg.weight_terminal),
            skip: layout.constant.clone(),
        }
    }
}

/// Continuous-time lifted model `zdot = A z + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousKoopman {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl ContinuousKoopman {
    pub fn n_z(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    /// `A z + B u`.
    pub fn derivative(&self, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.a * z;
        out.gemv(1.0, &self.b, u, 1.0);
        out
    }
}

/// First-order conversion of the discrete model: `A = (K_z - I)/dt`,
/// `B = K_g/dt`. This inverts a forward-Euler discretization and is only an
/// approximation of the matrix logarithm.
pub fn to_continuous(m: &KoopmanModel) -> ContinuousKoopman {
    let n = m.n_z;
    let mut a = m.k_z();
    for i in 0..n {
        a[(i, i)] -= 1.0;
    }
    a /= m.dt;
    let b = m.k_g() / m.dt;
    ContinuousKoopman { a, b }
}
