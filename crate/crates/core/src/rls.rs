//! Recursive least-squares updates of a lifted linear model.
//!
//! Each new snapshot pair `(alpha, beta)` is folded in with a Sherman-Morrison
//! rank-one update of the inverse covariance:
//!
//! ```text
//! gamma = 1 / (1 + alpha^T P alpha)
//! K'    = K + gamma (beta - K alpha) alpha^T P
//! P'    = P - gamma P alpha alpha^T P
//! ```
//!
//! The result is identical (up to rounding) to refitting on the full data,
//! at `O(n^2)` per update regardless of how many samples came before.

use std::sync::{Arc, RwLock};

use nalgebra::DVector;

use crate::edmd::{symmetrize, KoopmanModel};
use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::observables::Basis;

/// Sherman-Morrison gain `1 / (1 + alpha^T P alpha)`.
pub fn gain_gamma(p: &nalgebra::DMatrix<f64>, alpha: &DVector<f64>) -> Result<f64> {
    ensure_len("gain regressor", p.nrows(), alpha.len())?;
    let denominator = 1.0 + alpha.dot(&(p * alpha));
    if !(denominator > 0.0) || !denominator.is_finite() {
        return Err(Error::NotPositiveDefinite { denominator });
    }
    Ok(1.0 / denominator)
}

/// Model plus the bookkeeping needed to keep updating it.
#[derive(Debug, Clone)]
pub struct RlsState {
    pub model: KoopmanModel,
    pub update_count: usize,
    basis_x: Basis,
    basis_u: Basis,
    p_alpha: DVector<f64>,
    residual: DVector<f64>,
    alpha: DVector<f64>,
    beta: DVector<f64>,
}

impl RlsState {
    pub fn new(model: KoopmanModel) -> Result<Self> {
        let basis_x = Basis::new(model.basis_state.clone())?;
        let basis_u = Basis::new(model.basis_control.clone())?;
        ensure_len("model state dimension vs basis", model.n_z, basis_x.n_z())?;
        ensure_len("model input dimension vs basis", model.n_g, basis_u.n_z())?;
        let n = model.dim();
        ensure_len("K rows", n, model.k.nrows())?;
        ensure_len("P rows", n, model.p.nrows())?;
        Ok(Self {
            model,
            update_count: 0,
            basis_x,
            basis_u,
            p_alpha: DVector::zeros(n),
            residual: DVector::zeros(n),
            alpha: DVector::zeros(n),
            beta: DVector::zeros(n),
        })
    }

    pub fn basis_state(&self) -> &Basis {
        &self.basis_x
    }

    pub fn basis_control(&self) -> &Basis {
        &self.basis_u
    }

    /// Lifts a raw transition and folds it into the model.
    pub fn update(&mut self, x: &[f64], u: &[f64], x_next: &[f64]) -> Result<()> {
        let n_z = self.model.n_z;
        let mut alpha = std::mem::take(&mut self.alpha);
        let mut beta = std::mem::take(&mut self.beta);
        let lifted = (|| {
            self.basis_x.lift_into(x, &mut alpha.as_mut_slice()[..n_z])?;
            self.basis_u.lift_into(u, &mut alpha.as_mut_slice()[n_z..])?;
            self.basis_x.lift_into(x_next, &mut beta.as_mut_slice()[..n_z])?;
            beta.as_mut_slice()[n_z..].copy_from_slice(&alpha.as_slice()[n_z..]);
            Ok::<(), Error>(())
        })();
        let result = lifted.and_then(|_| self.update_lifted(&alpha, &beta));
        self.alpha = alpha;
        self.beta = beta;
        result
    }

    /// Folds an already lifted pair into the model. On error the state is
    /// left untouched.
    pub fn update_lifted(&mut self, alpha: &DVector<f64>, beta: &DVector<f64>) -> Result<()> {
        let n = self.model.dim();
        ensure_len("regressor alpha", n, alpha.len())?;
        ensure_len("target beta", n, beta.len())?;
        ensure_finite(alpha.as_slice(), "regressor alpha")?;
        ensure_finite(beta.as_slice(), "target beta")?;

        let m = &mut self.model;
        self.p_alpha.gemv(1.0, &m.p, alpha, 0.0);
        let denominator = 1.0 + alpha.dot(&self.p_alpha);
        if !(denominator > 0.0) || !denominator.is_finite() {
            return Err(Error::NotPositiveDefinite { denominator });
        }
        let gamma = 1.0 / denominator;

        self.residual.copy_from(beta);
        self.residual.gemv(-1.0, &m.k, alpha, 1.0);
        m.k.ger(gamma, &self.residual, &self.p_alpha, 1.0);
        m.p.ger(-gamma, &self.p_alpha, &self.p_alpha, 1.0);
        symmetrize(&mut m.p);

        m.sample_count += 1;
        self.update_count += 1;
        Ok(())
    }
}

/// Functional form of [`RlsState::update`].
pub fn rls_update(mut state: RlsState, x: &[f64], u: &[f64], x_next: &[f64]) -> Result<RlsState> {
    state.update(x, u, x_next)?;
    Ok(state)
}

/// Shared slot through which an updater publishes immutable model snapshots
/// to readers. Readers always see a complete model.
#[derive(Debug, Clone)]
pub struct ModelHandle {
    slot: Arc<RwLock<Arc<KoopmanModel>>>,
}

impl ModelHandle {
    pub fn new(model: KoopmanModel) -> Self {
        Self {
            slot: Arc::new(RwLock::new(Arc::new(model))),
        }
    }

    pub fn publish(&self, model: KoopmanModel) {
        let fresh = Arc::new(model);
        *self.slot.write().unwrap_or_else(|e| e.into_inner()) = fresh;
    }

    pub fn snapshot(&self) -> Arc<KoopmanModel> {
        self.slot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}
