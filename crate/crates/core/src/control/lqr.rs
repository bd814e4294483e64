//! Infinite-horizon discrete LQR by Riccati value iteration.

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, DVector};

use super::{ContinuousKoopman, QuadraticCost};
use crate::error::{ensure_len, Error, Result};

pub const RICCATI_TOLERANCE: f64 = 1e-10;
pub const RICCATI_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub iterations: usize,
    /// Relative change of `P` over the last iteration.
    pub residual: f64,
}

/// Warm-started value iterations tried before falling back to doubling.
const WARM_BUDGET: usize = 200;
const MAX_DOUBLINGS: usize = 64;

fn finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Value iteration `P <- Q + A'PA - A'PB (R + B'PB)^{-1} B'PA` from `p`
/// for at most `budget` steps. Returns the last iterate, the number of
/// steps and the final relative change.
fn value_iterate(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    mut p: DMatrix<f64>,
    tolerance: f64,
    budget: usize,
) -> Result<(DMatrix<f64>, usize, f64)> {
    let at = a.transpose();
    let bt = b.transpose();
    let mut residual = f64::INFINITY;
    for it in 1..=budget {
        let pa = &p * a;
        let pb = &p * b;
        let s = r + &bt * &pb;
        let chol = Cholesky::new(s).ok_or(Error::RiccatiDiverged {
            iterations: it,
            residual,
        })?;
        let gain = chol.solve(&(&bt * &pa));
        let mut next = q + &at * &pa - (&at * &pb) * &gain;
        crate::edmd::symmetrize(&mut next);
        if !finite(&next) {
            return Err(Error::RiccatiDiverged {
                iterations: it,
                residual,
            });
        }
        residual = (&next - &p).amax() / next.amax().max(1.0);
        p = next;
        if residual <= tolerance {
            return Ok((p, it, residual));
        }
    }
    Ok((p, budget, residual))
}

/// Structure-preserving doubling: each step doubles the horizon of the
/// underlying value iteration, so convergence is quadratic.
fn doubling(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tolerance: f64,
) -> Result<(DMatrix<f64>, usize)> {
    let n = a.nrows();
    let r_inv = Cholesky::new(r.clone())
        .ok_or_else(|| Error::InvalidParameter("control weight must be positive definite".into()))?
        .inverse();
    let mut ak = a.clone();
    let mut g = b * r_inv * b.transpose();
    let mut h = q.clone();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut residual = f64::INFINITY;
    for it in 1..=MAX_DOUBLINGS {
        let w = &eye + &g * &h;
        let lu = w.lu();
        let wa = lu.solve(&ak).ok_or(Error::RiccatiDiverged {
            iterations: it,
            residual,
        })?;
        let wg = lu.solve(&g).ok_or(Error::RiccatiDiverged {
            iterations: it,
            residual,
        })?;
        let mut h_next = &h + ak.transpose() * &h * &wa;
        let mut g_next = &g + &ak * wg * ak.transpose();
        ak = &ak * &wa;
        crate::edmd::symmetrize(&mut h_next);
        crate::edmd::symmetrize(&mut g_next);
        if !finite(&h_next) || !finite(&g_next) || !finite(&ak) {
            return Err(Error::RiccatiDiverged {
                iterations: it,
                residual,
            });
        }
        residual = (&h_next - &h).amax() / h_next.amax().max(1.0);
        h = h_next;
        g = g_next;
        if residual <= tolerance {
            return Ok((h, it));
        }
    }
    Err(Error::RiccatiDiverged {
        iterations: MAX_DOUBLINGS,
        residual,
    })
}

/// Solves the discrete algebraic Riccati equation
/// `P = Q + A'PA - A'PB (R + B'PB)^{-1} B'PA` to a relative fixed-point
/// residual of `tolerance`. A valid `warm` start is refined by value
/// iteration; otherwise (or if that stalls) doubling provides the starting
/// point, which value iteration then polishes. Returns `P` and the gain
/// `G = (R + B'PB)^{-1} B'PA`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    warm: Option<&DMatrix<f64>>,
    tolerance: f64,
    max_iterations: usize,
) -> Result<DareSolution> {
    let n = a.nrows();
    ensure_len("DARE B rows", n, b.nrows())?;
    ensure_len("DARE Q size", n, q.nrows())?;
    ensure_len("DARE R size", b.ncols(), r.nrows())?;
    let mut used = 0;
    let mut solved = None;
    if let Some(w) = warm.filter(|w| w.shape() == (n, n) && finite(w)) {
        if let Ok((p, it, res)) = value_iterate(a, b, q, r, w.clone(), tolerance, WARM_BUDGET.min(max_iterations)) {
            used = it;
            if res <= tolerance {
                solved = Some((p, res));
            }
        }
    }
    let (p, residual) = match solved {
        Some(s) => s,
        None => {
            let (start, doublings) = doubling(a, b, q, r, tolerance)?;
            used += doublings;
            let (p, it, res) = value_iterate(a, b, q, r, start, tolerance, max_iterations.saturating_sub(used).max(1))?;
            used += it;
            if res > tolerance {
                return Err(Error::RiccatiDiverged {
                    iterations: used,
                    residual: res,
                });
            }
            (p, res)
        }
    };
    let bt = b.transpose();
    let chol = Cholesky::new(r + &bt * &p * b).ok_or(Error::RiccatiDiverged {
        iterations: used,
        residual,
    })?;
    let gain = chol.solve(&(&bt * &p * a));
    Ok(DareSolution {
        p,
        gain,
        iterations: used,
        residual,
    })
}

/// Affine feedback `mu(z) = u_ref - G (z - z_ref)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub gain: DMatrix<f64>,
    pub z_ref: DVector<f64>,
    pub u_ref: DVector<f64>,
    /// Riccati solution on the non-skipped coordinates (warm start for the
    /// next solve).
    pub riccati: Option<DMatrix<f64>>,
    pub iterations: usize,
}

impl Policy {
    pub fn from_gain(gain: DMatrix<f64>, z_ref: DVector<f64>, u_ref: DVector<f64>) -> Self {
        Self {
            gain,
            z_ref,
            u_ref,
            riccati: None,
            iterations: 0,
        }
    }

    /// The policy `mu(z) = u_ref`.
    pub fn constant(u_ref: DVector<f64>, n_z: usize) -> Self {
        let n_u = u_ref.len();
        Self::from_gain(DMatrix::zeros(n_u, n_z), DVector::zeros(n_z), u_ref)
    }

    pub fn eval(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut u = self.u_ref.clone();
        u.gemv(-1.0, &self.gain, &(z - &self.z_ref), 1.0);
        u
    }

    /// Jacobian `d mu / d z = -G`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        -&self.gain
    }
}

/// LQR nominal policy for the continuous model discretized at `dt`
/// (`A_d = I + A dt`, `B_d = B dt`, weights scaled by `dt`).
pub fn lqr_nominal(
    cont: &ContinuousKoopman,
    cost: &QuadraticCost,
    dt: f64,
    z_ref: &DVector<f64>,
    u_ref: &DVector<f64>,
    warm: Option<&DMatrix<f64>>,
) -> Result<Policy> {
    let n_z = cont.n_z();
    let n_u = cont.n_u();
    ensure_len("state weights", n_z, cost.q.len())?;
    ensure_len("control weights", n_u, cost.r.len())?;
    ensure_len("reference state", n_z, z_ref.len())?;
    ensure_len("reference control", n_u, u_ref.len())?;
    let active: Vec<usize> = (0..n_z).filter(|i| !cost.skip.contains(i)).collect();
    let m = active.len();
    let a_d = DMatrix::from_fn(m, m, |i, j| {
        let v = cont.a[(active[i], active[j])] * dt;
        if i == j {
            1.0 + v
        } else {
            v
        }
    });
    let b_d = DMatrix::from_fn(m, n_u, |i, j| cont.b[(active[i], j)] * dt);
    let q_d = DMatrix::from_diagonal(&DVector::from_fn(m, |i, _| cost.q[active[i]] * dt));
    let r_d = DMatrix::from_diagonal(&(&cost.r * dt));
    let sol = solve_dare(&a_d, &b_d, &q_d, &r_d, warm, RICCATI_TOLERANCE, RICCATI_MAX_ITERATIONS)?;
    let mut gain = DMatrix::zeros(n_u, n_z);
    for (col, &i) in active.iter().enumerate() {
        gain.set_column(i, &sol.gain.column(col));
    }
    Ok(Policy {
        gain,
        z_ref: z_ref.clone(),
        u_ref: u_ref.clone(),
        riccati: Some(sol.p),
        iterations: sol.iterations,
    })
}
