//! Linear-Gaussian Markov chains `x' = A x + w`, `w ~ N(0, W)`.
//!
//! A stable `A` with positive definite `W` gives an ergodic chain whose
//! invariant measure is `N(0, S)` with `S = A S A^T + W`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::SnapshotDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub a: DMatrix<f64>,
    pub noise_cov: DMatrix<f64>,
    pub seed: u64,
}

impl ChainSpec {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if n == 0 || self.a.ncols() != n || self.noise_cov.shape() != (n, n) {
            return Err(Error::InvalidParameter(
                "chain matrices must be square and of equal size".into(),
            ));
        }
        let rho = spectral_radius(&self.a);
        if !(rho < 1.0 - 1e-6) {
            return Err(Error::InvalidParameter(format!(
                "chain is not stable (spectral radius {rho})"
            )));
        }
        if (&self.noise_cov - self.noise_cov.transpose()).amax() > 1e-12 * self.noise_cov.amax().max(1.0)
            || nalgebra::linalg::Cholesky::new(self.noise_cov.clone()).is_none()
        {
            return Err(Error::InvalidParameter(
                "noise covariance must be symmetric positive definite".into(),
            ));
        }
        Ok(())
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Stateful sampler for a chain, starting at the origin.
pub struct ChainSampler {
    a: DMatrix<f64>,
    noise_chol: DMatrix<f64>,
    rng: ChaCha8Rng,
    pub state: DVector<f64>,
    scratch: DVector<f64>,
}

impl ChainSampler {
    pub fn new(spec: &ChainSpec) -> Result<Self> {
        spec.validate()?;
        let chol = nalgebra::linalg::Cholesky::new(spec.noise_cov.clone())
            .ok_or_else(|| Error::InvalidParameter("noise covariance must be positive definite".into()))?;
        let n = spec.n();
        Ok(Self {
            a: spec.a.clone(),
            noise_chol: chol.l(),
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            state: DVector::zeros(n),
            scratch: DVector::zeros(n),
        })
    }

    /// Advances one step and returns the new state.
    pub fn advance(&mut self) -> &DVector<f64> {
        for v in self.scratch.iter_mut() {
            *v = StandardNormal.sample(&mut self.rng);
        }
        let mut next = &self.a * &self.state;
        next.gemv(1.0, &self.noise_chol, &self.scratch, 1.0);
        self.state = next;
        &self.state
    }
}

/// Samples `n_samples` consecutive transitions of the chain. The dataset has
/// an empty control channel and unit time step.
pub fn chain_sample(spec: &ChainSpec, n_samples: usize) -> Result<SnapshotDataset> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("chain sample count must be at least 1".into()));
    }
    let mut sampler = ChainSampler::new(spec)?;
    let mut ds = SnapshotDataset::new(1.0, spec.n(), 0)?;
    ds.records.reserve(n_samples);
    for _ in 0..n_samples {
        let x = sampler.state.as_slice().to_vec();
        let x_next = sampler.advance().as_slice().to_vec();
        ds.push_transition(0, &x, &[], &x_next)?;
    }
    Ok(ds)
}

/// Stationary covariance solving `S = A S A^T + W` by fixed-point iteration.
pub fn stationary_covariance(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut s = w.clone();
    for _ in 0..100_000 {
        let next = a * &s * a.transpose() + w;
        let delta = (&next - &s).amax();
        s = next;
        if delta <= 1e-14 * s.amax() {
            return Ok(s);
        }
    }
    Err(Error::Degenerate("Lyapunov iteration did not converge".into()))
}
