//! Convergence of the fitted operator on an ergodic chain, and the cost of
//! recursive updates versus batch refits.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{BenchConfig, ConvergeConfig};
use crate::edmd::{fit_edmd_with, spd_inverse, KoopmanModel, NormalEquations};
use crate::env::chain::{stationary_covariance, ChainSampler, ChainSpec};
use crate::error::{Error, Result};
use crate::observables::{Basis, BasisSpec};
use crate::rls::RlsState;

/// Independent chains the Monte Carlo reference is split into.
const ORACLE_CHUNKS: usize = 8;
/// Steps discarded at the start of every oracle chain.
const ORACLE_BURN_IN: usize = 1_000;
/// Ridge used at a checkpoint whose Gram matrix is rank deficient, relative
/// to the mean diagonal entry.
const FALLBACK_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Closed form from the stationary covariance.
    Lyapunov,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankEvent {
    pub seed: u64,
    pub samples: usize,
    pub rank: usize,
    pub dim: usize,
    pub condition_number: f64,
    pub ridge_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub basis: String,
    pub oracle: OracleKind,
    pub oracle_samples: usize,
    pub k_star: Vec<Vec<f64>>,
    pub checkpoints: Vec<usize>,
    pub seeds: Vec<u64>,
    /// `errors[s][c]` is `||K_N - K*||_F` for seed `s` at checkpoint `c`.
    pub errors: Vec<Vec<f64>>,
    pub medians: Vec<f64>,
    pub rank_events: Vec<RankEvent>,
}

impl ConvergenceReport {
    pub fn is_monotone(&self) -> bool {
        self.medians.windows(2).all(|w| w[1] <= w[0])
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Best linear predictor of the lifted next state on the invariant measure,
/// `K* = E[phi(x') phi(x)^T] E[phi(x) phi(x)^T]^{-1}`.
///
/// For the identity lift it follows from the stationary covariance `S`:
/// `E[x' x^T] = A S`, so `K* = A S S^{-1}`. Other lifts are estimated from
/// `samples` chain steps split over independent seeded chains.
pub fn reference_operator(cfg: &ConvergeConfig) -> Result<(DMatrix<f64>, OracleKind, usize)> {
    let spec = cfg.chain(cfg.oracle_seed);
    spec.validate()?;
    let basis = Basis::new(cfg.basis.clone())?;
    if basis.n_x() != spec.n() {
        return Err(Error::DimensionMismatch {
            context: "convergence basis vs chain dimension",
            expected: spec.n(),
            got: basis.n_x(),
        });
    }
    if matches!(cfg.basis, BasisSpec::Identity { .. }) {
        let s = stationary_covariance(&cfg.a, &cfg.noise_cov)?;
        let k = (&cfg.a * &s) * spd_inverse(&s)?;
        return Ok((k, OracleKind::Lyapunov, 0));
    }
    if cfg.oracle_samples < ORACLE_CHUNKS {
        return Err(Error::InvalidParameter(format!(
            "oracle_samples must be at least {ORACLE_CHUNKS}, got {}",
            cfg.oracle_samples
        )));
    }
    let per_chunk = cfg.oracle_samples / ORACLE_CHUNKS;
    let chunks: Vec<u64> = (0..ORACLE_CHUNKS as u64).collect();
    let parts = crate::par::map(&chunks, |&c| {
        let chain = ChainSpec {
            seed: cfg.oracle_seed.wrapping_mul(0x9e37_79b9).wrapping_add(c),
            ..spec.clone()
        };
        accumulate(&chain, &basis, ORACLE_BURN_IN, per_chunk, &[])
    });
    let mut total = NormalEquations::new(basis.n_z());
    for part in parts {
        let (eq, _) = part?;
        total.gram += eq.gram;
        total.cross += eq.cross;
        total.count += eq.count;
    }
    let fit = total.solve(0.0)?;
    Ok((fit.k, OracleKind::MonteCarlo, total.count))
}

/// Runs `samples` transitions after discarding `burn_in`, snapshotting the
/// normal equations at each requested count.
fn accumulate(
    chain: &ChainSpec,
    basis: &Basis,
    burn_in: usize,
    samples: usize,
    snapshots_at: &[usize],
) -> Result<(NormalEquations, Vec<NormalEquations>)> {
    let mut sampler = ChainSampler::new(chain)?;
    for _ in 0..burn_in {
        sampler.advance();
    }
    let n = basis.n_z();
    let mut eq = NormalEquations::new(n);
    let mut alpha = DVector::zeros(n);
    let mut beta = DVector::zeros(n);
    let mut snaps = Vec::with_capacity(snapshots_at.len());
    let mut next_snap = snapshots_at.iter().peekable();
    basis.lift_into(sampler.state.as_slice(), alpha.as_mut_slice())?;
    for i in 1..=samples {
        let x_next = sampler.advance();
        basis.lift_into(x_next.as_slice(), beta.as_mut_slice())?;
        eq.add(&alpha, &beta);
        std::mem::swap(&mut alpha, &mut beta);
        while next_snap.peek().is_some_and(|&&c| c == i) {
            snaps.push(eq.clone());
            next_snap.next();
        }
    }
    Ok((eq, snaps))
}

/// Error curve `||K_N - K*||_F` at each checkpoint, for every seed.
///
/// Each seed runs one chain from the origin; the operator at checkpoint `N`
/// is the least-squares fit on its first `N` transitions. A rank-deficient
/// checkpoint is recorded and refit with a small ridge.
pub fn convergence_experiment(cfg: &ConvergeConfig) -> Result<ConvergenceReport> {
    if cfg.checkpoints.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one checkpoint and one seed".into(),
        ));
    }
    if cfg.checkpoints.windows(2).any(|w| w[1] <= w[0]) || cfg.checkpoints[0] == 0 {
        return Err(Error::InvalidParameter(
            "checkpoints must be positive and strictly increasing".into(),
        ));
    }
    let (k_star, oracle, oracle_samples) = reference_operator(cfg)?;
    let basis = Basis::new(cfg.basis.clone())?;
    let last = *cfg.checkpoints.last().expect("checked non-empty");

    let per_seed = crate::par::map(&cfg.seeds, |&seed| -> Result<(Vec<f64>, Vec<RankEvent>)> {
        let (_, snaps) = accumulate(&cfg.chain(seed), &basis, 0, last, &cfg.checkpoints)?;
        let mut errors = Vec::with_capacity(snaps.len());
        let mut events = Vec::new();
        for eq in &snaps {
            let fit = match eq.solve(cfg.ridge) {
                Ok(fit) => fit,
                Err(Error::RankDeficient {
                    rank,
                    dim,
                    condition_number,
                }) => {
                    let ridge = FALLBACK_RIDGE * (eq.gram.trace() / dim as f64).max(1.0);
                    events.push(RankEvent {
                        seed,
                        samples: eq.count,
                        rank,
                        dim,
                        condition_number,
                        ridge_used: ridge,
                    });
                    eq.solve(ridge)?
                }
                Err(e) => return Err(e),
            };
            let err = (&fit.k - &k_star).norm();
            if !err.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("operator error at N={} for seed {seed}", eq.count),
                });
            }
            errors.push(err);
        }
        Ok((errors, events))
    });

    let mut errors = Vec::with_capacity(cfg.seeds.len());
    let mut rank_events = Vec::new();
    for r in per_seed {
        let (e, ev) = r?;
        errors.push(e);
        rank_events.extend(ev);
    }
    let medians = (0..cfg.checkpoints.len())
        .map(|c| median(&errors.iter().map(|e| e[c]).collect::<Vec<_>>()))
        .collect();
    Ok(ConvergenceReport {
        basis: cfg.basis.to_string(),
        oracle,
        oracle_samples,
        k_star: rows(&k_star),
        checkpoints: cfg.checkpoints.clone(),
        seeds: cfg.seeds.clone(),
        errors,
        medians,
        rank_events,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub dim: usize,
    pub samples: usize,
    /// Median over repeats of the mean wall time of one recursive update.
    pub rls_update_secs: f64,
    /// Median over repeats of one full batch refit on `samples` snapshots.
    pub edmd_fit_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRatio {
    pub dim: usize,
    pub from_samples: usize,
    pub to_samples: usize,
    pub rls: f64,
    pub edmd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimRatio {
    pub samples: usize,
    pub from_dim: usize,
    pub to_dim: usize,
    pub rls: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub updates: usize,
    pub repeats: usize,
    pub rows: Vec<TimingRow>,
    /// Growth with dataset size at fixed dimension, relative to the smallest size.
    pub size_ratios: Vec<TimingRatio>,
    /// Growth of the update cost with dimension, relative to the smallest dimension.
    pub dim_ratios: Vec<DimRatio>,
}

impl TimingReport {
    pub fn row(&self, dim: usize, samples: usize) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.dim == dim && r.samples == samples)
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Times recursive updates and batch refits on synthetic snapshot data.
///
/// Runs sequentially regardless of the `parallel` feature so timings are
/// not confounded by thread scheduling. The dimension is the full regressor
/// size `n_z + n_u` with two inputs.
pub fn timing_experiment(cfg: &BenchConfig) -> Result<TimingReport> {
    if cfg.dims.is_empty() || cfg.sizes.is_empty() || cfg.updates == 0 || cfg.repeats == 0 {
        return Err(Error::InvalidParameter(
            "bench needs dims, sizes, updates and repeats".into(),
        ));
    }
    if let Some(&d) = cfg.dims.iter().find(|&&d| d < 3) {
        return Err(Error::InvalidParameter(format!(
            "bench dimension must be at least 3, got {d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows_out = Vec::new();
    for &dim in &cfg.dims {
        let stream: Vec<(DVector<f64>, DVector<f64>)> = (0..cfg.updates)
            .map(|_| {
                let a = random_matrix(dim, 1, &mut rng).column(0).into_owned();
                let b = random_matrix(dim, 1, &mut rng).column(0).into_owned();
                (a, b)
            })
            .collect();
        for &samples in &cfg.sizes {
            if samples < dim {
                return Err(Error::InvalidParameter(format!(
                    "bench size {samples} is smaller than dimension {dim}"
                )));
            }
            let y = random_matrix(dim, samples, &mut rng);
            let ybar = random_matrix(dim, samples, &mut rng);

            let mut fit_times = Vec::with_capacity(cfg.repeats);
            let mut fit = None;
            for _ in 0..cfg.repeats {
                let start = Instant::now();
                let f = fit_edmd_with(&y, &ybar, 0.0, false)?;
                fit_times.push(start.elapsed().as_secs_f64());
                fit = Some(f);
            }
            let fit = fit.expect("repeats >= 1");
            let model = KoopmanModel {
                k: fit.k,
                p: fit.p,
                n_z: dim - 2,
                n_g: 2,
                basis_state: BasisSpec::Identity { n_x: dim - 2 },
                basis_control: BasisSpec::Identity { n_x: 2 },
                dt: 1.0,
                sample_count: fit.sample_count,
            };
            let base = RlsState::new(model)?;
            let mut update_times = Vec::with_capacity(cfg.repeats);
            for _ in 0..cfg.repeats {
                let mut state = base.clone();
                let start = Instant::now();
                for (a, b) in &stream {
                    state.update_lifted(a, b)?;
                }
                update_times.push(start.elapsed().as_secs_f64() / cfg.updates as f64);
                std::hint::black_box(&state.model.k);
            }
            rows_out.push(TimingRow {
                dim,
                samples,
                rls_update_secs: median(&update_times),
                edmd_fit_secs: median(&fit_times),
            });
        }
    }

    let smallest_size = *cfg.sizes.iter().min().expect("non-empty");
    let smallest_dim = *cfg.dims.iter().min().expect("non-empty");
    let find = |d: usize, n: usize| {
        rows_out
            .iter()
            .find(|r| r.dim == d && r.samples == n)
            .expect("measured")
    };
    let mut size_ratios = Vec::new();
    for &dim in &cfg.dims {
        let base = find(dim, smallest_size);
        for &samples in cfg.sizes.iter().filter(|&&n| n != smallest_size) {
            let r = find(dim, samples);
            size_ratios.push(TimingRatio {
                dim,
                from_samples: smallest_size,
                to_samples: samples,
                rls: r.rls_update_secs / base.rls_update_secs,
                edmd: r.edmd_fit_secs / base.edmd_fit_secs,
            });
        }
    }
    let mut dim_ratios = Vec::new();
    for &samples in &cfg.sizes {
        let base = find(smallest_dim, samples);
        for &dim in cfg.dims.iter().filter(|&&d| d != smallest_dim) {
            dim_ratios.push(DimRatio {
                samples,
                from_dim: smallest_dim,
                to_dim: dim,
                rls: find(dim, samples).rls_update_secs / base.rls_update_secs,
            });
        }
    }
    Ok(TimingReport {
        updates: cfg.updates,
        repeats: cfg.repeats,
        rows: rows_out,
        size_ratios,
        dim_ratios,
    })
}
