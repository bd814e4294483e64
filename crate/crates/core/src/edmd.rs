//! Batch least-squares fitting of lifted linear models.
//!
//! Snapshot pairs are lifted into `alpha = [phi(x); psi(u)]` and
//! `beta = [phi(x'); psi(u)]`, stacked as columns of `Y` and `Ybar`, and the
//! model solves `min_K ||K Y - Ybar||_F` through the normal equations
//! `K = (Ybar Y^T)(Y Y^T + ridge I)^{-1}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset::SnapshotDataset;
use crate::error::{ensure_len, Error, Result};
use crate::observables::{Basis, BasisSpec};

/// Relative singular-value cutoff used for numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Number of snapshot columns per block when forming Gram products. Fixed so
/// that summation order, and therefore the result, does not depend on the
/// number of threads.
const GRAM_BLOCK: usize = 2048;

/// A lifted linear model `[z'; g'] = K [z; g]` with its inverse data
/// covariance `P = (Y Y^T + ridge I)^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub n_z: usize,
    pub n_g: usize,
    pub basis_state: BasisSpec,
    pub basis_control: BasisSpec,
    pub dt: f64,
    pub sample_count: usize,
}

impl KoopmanModel {
    /// Lifts `ds` with the given bases and fits by least squares.
    pub fn fit(ds: &SnapshotDataset, basis_x: &Basis, basis_u: &Basis, ridge: f64) -> Result<Self> {
        let (y, ybar) = assemble_snapshots(ds, basis_x, basis_u)?;
        let fit = fit_edmd(&y, &ybar, ridge)?;
        Ok(Self::from_fit(fit, basis_x, basis_u, ds.dt))
    }

    pub fn from_fit(fit: LinearFit, basis_x: &Basis, basis_u: &Basis, dt: f64) -> Self {
        Self {
            k: fit.k,
            p: fit.p,
            n_z: basis_x.n_z(),
            n_g: basis_u.n_z(),
            basis_state: basis_x.spec().clone(),
            basis_control: basis_u.spec().clone(),
            dt,
            sample_count: fit.sample_count,
        }
    }

    pub fn dim(&self) -> usize {
        self.n_z + self.n_g
    }

    /// State block `K_z` (top-left `n_z x n_z`).
    pub fn k_z(&self) -> DMatrix<f64> {
        self.k.view((0, 0), (self.n_z, self.n_z)).into_owned()
    }

    /// Input block `K_g` (top-right `n_z x n_g`).
    pub fn k_g(&self) -> DMatrix<f64> {
        self.k.view((0, self.n_z), (self.n_z, self.n_g)).into_owned()
    }

    /// One-step prediction of the lifted state.
    pub fn predict(&self, z: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        self.k.view((0, 0), (self.n_z, self.n_z)) * z + self.k.view((0, self.n_z), (self.n_z, self.n_g)) * g
    }

    /// Largest absolute asymmetry of `P`.
    pub fn symmetry_residual(&self) -> f64 {
        let n = self.p.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.p[(i, j)] - self.p[(j, i)]).abs());
            }
        }
        worst
    }
}

/// Raw output of a least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub sample_count: usize,
}

/// Rank and conditioning of `Y Y^T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wellposedness {
    pub rank: usize,
    pub dim: usize,
    pub condition_number: f64,
    pub full_rank: bool,
}

/// Stacks lifted snapshot pairs column-wise into `(Y, Ybar)`.
pub fn assemble_snapshots(
    ds: &SnapshotDataset,
    basis_x: &Basis,
    basis_u: &Basis,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if ds.is_empty() {
        return Err(Error::Empty("snapshot dataset"));
    }
    ensure_len("dataset state dimension vs basis", basis_x.n_x(), ds.n_x)?;
    ensure_len("dataset control dimension vs basis", basis_u.n_x(), ds.n_u)?;
    let (n_z, n_g) = (basis_x.n_z(), basis_u.n_z());
    let n = n_z + n_g;
    let mut y = DMatrix::zeros(n, ds.len());
    let mut ybar = DMatrix::zeros(n, ds.len());
    let mut col = vec![0.0; n];
    for (j, r) in ds.records.iter().enumerate() {
        basis_x.lift_into(&r.x, &mut col[..n_z])?;
        basis_u.lift_into(&r.u, &mut col[n_z..])?;
        y.column_mut(j).copy_from_slice(&col);
        basis_x.lift_into(&r.x_next, &mut col[..n_z])?;
        ybar.column_mut(j).copy_from_slice(&col);
    }
    Ok((y, ybar))
}

/// Lifts one snapshot pair into `(alpha, beta)`.
pub fn lift_pair(
    basis_x: &Basis,
    basis_u: &Basis,
    x: &[f64],
    u: &[f64],
    x_next: &[f64],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n_z, n_g) = (basis_x.n_z(), basis_u.n_z());
    let mut alpha = DVector::zeros(n_z + n_g);
    let mut beta = DVector::zeros(n_z + n_g);
    basis_x.lift_into(x, &mut alpha.as_mut_slice()[..n_z])?;
    basis_u.lift_into(u, &mut alpha.as_mut_slice()[n_z..])?;
    basis_x.lift_into(x_next, &mut beta.as_mut_slice()[..n_z])?;
    beta.as_mut_slice()[n_z..].copy_from_slice(&alpha.as_slice()[n_z..]);
    Ok((alpha, beta))
}

/// `(Y Y^T, Ybar Y^T)` accumulated over fixed-size column blocks. Blocks are
/// processed in parallel when `parallel` is set and the feature is enabled;
/// partial sums are always added in block order.
pub fn gram_products(y: &DMatrix<f64>, ybar: &DMatrix<f64>, parallel: bool) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = y.nrows();
    let cols = y.ncols();
    if cols <= GRAM_BLOCK {
        return (y * y.transpose(), ybar * y.transpose());
    }
    let starts: Vec<usize> = (0..cols).step_by(GRAM_BLOCK).collect();
    let block = |&s: &usize| {
        let w = GRAM_BLOCK.min(cols - s);
        let yb = y.columns(s, w);
        let ybb = ybar.columns(s, w);
        (yb * yb.transpose(), ybb * yb.transpose())
    };
    let parts = if parallel {
        crate::par::map(&starts, block)
    } else {
        crate::par::map_sequential(&starts, block)
    };
    let mut g = DMatrix::zeros(n, n);
    let mut q = DMatrix::zeros(n, n);
    for (gp, qp) in parts {
        g += gp;
        q += qp;
    }
    (g, q)
}

/// Fits `K = (Ybar Y^T)(Y Y^T + ridge I)^{-1}`.
///
/// With `ridge == 0` the Gram matrix must have full numerical rank; the
/// error carries the measured rank and condition number.
pub fn fit_edmd(y: &DMatrix<f64>, ybar: &DMatrix<f64>, ridge: f64) -> Result<LinearFit> {
    fit_edmd_with(y, ybar, ridge, true)
}

/// [`fit_edmd`] with explicit control over block parallelism.
pub fn fit_edmd_with(y: &DMatrix<f64>, ybar: &DMatrix<f64>, ridge: f64, parallel: bool) -> Result<LinearFit> {
    if y.shape() != ybar.shape() {
        return Err(Error::DimensionMismatch {
            context: "Y and Ybar columns",
            expected: y.ncols(),
            got: ybar.ncols(),
        });
    }
    if y.ncols() == 0 || y.nrows() == 0 {
        return Err(Error::Empty("snapshot matrices"));
    }
    let (g, q) = gram_products(y, ybar, parallel);
    solve_normal_equations(g, &q, ridge, y.ncols())
}

pub(crate) fn solve_normal_equations(
    mut g: DMatrix<f64>,
    q: &DMatrix<f64>,
    ridge: f64,
    sample_count: usize,
) -> Result<LinearFit> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "ridge must be non-negative, got {ridge}"
        )));
    }
    if ridge == 0.0 {
        let report = gram_wellposedness(&g);
        if !report.full_rank {
            return Err(Error::RankDeficient {
                rank: report.rank,
                dim: report.dim,
                condition_number: report.condition_number,
            });
        }
    } else {
        for i in 0..g.nrows() {
            g[(i, i)] += ridge;
        }
    }
    let p = spd_inverse(&g)?;
    let k = q * &p;
    Ok(LinearFit { k, p, sample_count })
}

pub(crate) fn spd_inverse(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let report = || gram_wellposedness(g);
    let chol = nalgebra::linalg::Cholesky::new(g.clone()).ok_or_else(|| {
        let r = report();
        Error::RankDeficient {
            rank: r.rank,
            dim: r.dim,
            condition_number: r.condition_number,
        }
    })?;
    let mut p = chol.inverse();
    symmetrize(&mut p);
    Ok(p)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Numerical rank and condition number of `Y Y^T`. Never fails.
pub fn wellposedness_report(y: &DMatrix<f64>) -> Wellposedness {
    let g = y * y.transpose();
    gram_wellposedness(&g)
}

/// Same as [`wellposedness_report`] for an already formed Gram matrix.
pub fn gram_wellposedness(g: &DMatrix<f64>) -> Wellposedness {
    let dim = g.nrows();
    if dim == 0 {
        return Wellposedness {
            rank: 0,
            dim,
            condition_number: f64::INFINITY,
            full_rank: false,
        };
    }
    let eig = SymmetricEigen::new(g.clone());
    let sv: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !max.is_finite() {
        return Wellposedness {
            rank: 0,
            dim,
            condition_number: f64::INFINITY,
            full_rank: false,
        };
    }
    let rank = sv.iter().filter(|&&s| s > max * RANK_TOLERANCE).count();
    let condition_number = if min > 0.0 { max / min } else { f64::INFINITY };
    Wellposedness {
        rank,
        dim,
        condition_number,
        full_rank: rank == dim && max > 0.0,
    }
}

/// Running sums `sum alpha alpha^T` and `sum beta alpha^T`, i.e. the normal
/// equations of the batch fit, grown one snapshot at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub gram: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub count: usize,
}

impl NormalEquations {
    pub fn new(dim: usize) -> Self {
        Self {
            gram: DMatrix::zeros(dim, dim),
            cross: DMatrix::zeros(dim, dim),
            count: 0,
        }
    }

    pub fn add(&mut self, alpha: &DVector<f64>, beta: &DVector<f64>) {
        self.gram.ger(1.0, alpha, alpha, 1.0);
        self.cross.ger(1.0, beta, alpha, 1.0);
        self.count += 1;
    }

    pub fn solve(&self, ridge: f64) -> Result<LinearFit> {
        if self.count == 0 {
            return Err(Error::Empty("normal equations"));
        }
        solve_normal_equations(self.gram.clone(), &self.cross, ridge, self.count)
    }

    pub fn wellposedness(&self) -> Wellposedness {
        gram_wellposedness(&self.gram)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn assemble_single_record() {
        let mut ds = SnapshotDataset::new(0.1, 1, 1).unwrap();
        ds.push_transition(0, &[1.0], &[2.0], &[3.0]).unwrap();
        let (y, ybar) = assemble_snapshots(&ds, &Basis::identity(1), &Basis::identity(1)).unwrap();
        assert_eq!(y, DMatrix::from_column_slice(2, 1, &[1.0, 2.0]));
        assert_eq!(ybar, DMatrix::from_column_slice(2, 1, &[3.0, 2.0]));
    }

    #[test]
    fn assemble_shapes_and_errors() {
        let mut ds = SnapshotDataset::new(0.01, 4, 2).unwrap();
        let basis = Basis::new(BasisSpec::Arm17).unwrap();
        let bu = Basis::identity(2);
        assert!(matches!(assemble_snapshots(&ds, &basis, &bu), Err(Error::Empty(_))));
        for k in 0..5 {
            let x = [k as f64 * 0.1, 0.2, 0.0, 0.1];
            ds.push_transition(0, &x, &[0.1, -0.1], &[x[0] + 0.1, 0.2, 0.0, 0.1])
                .unwrap();
        }
        let (y, ybar) = assemble_snapshots(&ds, &basis, &bu).unwrap();
        assert_eq!(y.shape(), (19, 5));
        assert_eq!(ybar.shape(), (19, 5));
        assert!(assemble_snapshots(&ds, &Basis::identity(3), &bu).is_err());
    }

    #[test]
    fn identity_dynamics_gives_identity() {
        let y = random_matrix(3, 10, 1);
        let fit = fit_edmd(&y, &y, 0.0).unwrap();
        assert!((fit.k - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn recovers_linear_map() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.8]);
        let y = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 2.0]);
        let ybar = &a * &y;
        let fit = fit_edmd(&y, &ybar, 0.0).unwrap();
        // Oracle: least squares through a QR solve of Y^T K^T = Ybar^T.
        let qr = y.transpose().qr();
        let kt = qr.r().try_inverse().unwrap() * qr.q().transpose() * ybar.transpose();
        assert!((&fit.k - kt.transpose()).norm() < 1e-12);
        assert!((&fit.k - &a).norm() <= 1e-10);
    }

    #[test]
    fn single_column_with_ridge() {
        let y = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let ybar = DMatrix::from_column_slice(2, 1, &[0.5, 2.0]);
        let ridge = 1e-6;
        let fit = fit_edmd(&y, &ybar, ridge).unwrap();
        // Closed form: G = diag(1 + r, r), Q = [[0.5, 0], [2, 0]].
        let expected = DMatrix::from_row_slice(2, 2, &[0.5 / (1.0 + ridge), 0.0, 2.0 / (1.0 + ridge), 0.0]);
        assert!((&fit.k - &expected).norm() < 1e-15);
        assert!((&fit.k * &y - &ybar).norm() < 1e-5);
        assert!(fit_edmd(&y, &ybar, 0.0).is_err());
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let mut y = random_matrix(3, 20, 2);
        let row = y.row(0).into_owned();
        y.set_row(2, &row);
        match fit_edmd(&y, &y, 0.0) {
            Err(Error::RankDeficient {
                rank,
                dim,
                condition_number,
            }) => {
                assert_eq!((rank, dim), (2, 3));
                assert!(condition_number > 1e10);
            }
            other => panic!("expected rank error, got {other:?}"),
        }
        assert!(!wellposedness_report(&y).full_rank);
    }

    #[test]
    fn wellposedness_of_identity_and_random() {
        let r = wellposedness_report(&DMatrix::identity(4, 4));
        assert!(r.full_rank);
        assert_eq!(r.condition_number, 1.0);
        let y = random_matrix(19, 500, 3);
        let r = wellposedness_report(&y);
        assert!(r.full_rank);
        // SVD oracle on Y itself.
        let sv = y.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let rank = sv.iter().filter(|&&s| s * s > smax * smax * RANK_TOLERANCE).count();
        assert_eq!(rank, r.rank);
    }

    #[test]
    fn p_is_inverse_of_regularized_gram() {
        let y = random_matrix(5, 40, 4);
        let ybar = random_matrix(5, 40, 5);
        for ridge in [0.0, 0.3] {
            let fit = fit_edmd(&y, &ybar, ridge).unwrap();
            let g = &y * y.transpose() + DMatrix::identity(5, 5) * ridge;
            assert!((&fit.p * g - DMatrix::identity(5, 5)).amax() < 1e-8);
        }
    }

    #[test]
    fn least_squares_optimality() {
        let y = random_matrix(4, 30, 6);
        let ybar = random_matrix(4, 30, 7);
        let fit = fit_edmd(&y, &ybar, 0.0).unwrap();
        let best = (&fit.k * &y - &ybar).norm();
        for s in 0..50 {
            let dk = random_matrix(4, 4, 100 + s) * 1e-3;
            assert!(((&fit.k + dk) * &y - &ybar).norm() >= best);
        }
    }

    #[test]
    fn blocked_gram_matches_direct_product() {
        let y = random_matrix(6, 5000, 8);
        let ybar = random_matrix(6, 5000, 9);
        let (g_par, q_par) = gram_products(&y, &ybar, true);
        let (g_seq, q_seq) = gram_products(&y, &ybar, false);
        assert_eq!(g_par, g_seq);
        assert_eq!(q_par, q_seq);
        assert!((g_par - &y * y.transpose()).amax() < 1e-9);
    }

    #[test]
    fn normal_equations_match_batch() {
        let y = random_matrix(3, 25, 10);
        let ybar = random_matrix(3, 25, 11);
        let mut ne = NormalEquations::new(3);
        for j in 0..25 {
            ne.add(&y.column(j).into_owned(), &ybar.column(j).into_owned());
        }
        let a = ne.solve(0.0).unwrap();
        let b = fit_edmd(&y, &ybar, 0.0).unwrap();
        assert!((a.k - b.k).amax() < 1e-12);
        assert_eq!(a.sample_count, 25);
    }
}
