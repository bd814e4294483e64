//! Trajectory comparison metrics.

use crate::error::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn check_dims<P: AsRef<[f64]>>(a: &[P], b: &[P]) -> Result<usize> {
    let d = a.first().or(b.first()).map_or(0, |p| p.as_ref().len());
    if a.iter().chain(b).any(|p| p.as_ref().len() != d) {
        return Err(Error::InvalidParameter(
            "trajectory points must share one dimension".into(),
        ));
    }
    Ok(d)
}

/// Root mean squared Euclidean error between two equally long trajectories.
pub fn rmse<P: AsRef<[f64]>>(actual: &[P], reference: &[P]) -> Result<f64> {
    if actual.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            context: "rmse trajectory length",
            expected: reference.len(),
            got: actual.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::Empty("rmse trajectories"));
    }
    check_dims(actual, reference)?;
    let total: f64 = actual
        .iter()
        .zip(reference)
        .map(|(a, r)| sq_dist(a.as_ref(), r.as_ref()))
        .sum();
    Ok((total / actual.len() as f64).sqrt())
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Shift (seconds) by which `actual` trails `reference`: the integer shift
/// within a quarter of the length that maximizes the mean per-coordinate
/// Pearson correlation of the overlapping parts. Ties go to the smaller
/// absolute shift. A positive value means `actual` is late.
pub fn time_lag<P: AsRef<[f64]>>(actual: &[P], reference: &[P], dt: f64) -> Result<f64> {
    let n = actual.len();
    if n != reference.len() {
        return Err(Error::DimensionMismatch {
            context: "time lag trajectory length",
            expected: reference.len(),
            got: n,
        });
    }
    if n < 16 {
        return Err(Error::InvalidParameter(format!(
            "time lag needs at least 16 samples, got {n}"
        )));
    }
    let d = check_dims(actual, reference)?;
    let column = |p: &[P], i: usize| -> Vec<f64> { p.iter().map(|v| v.as_ref()[i]).collect() };
    let act: Vec<Vec<f64>> = (0..d).map(|i| column(actual, i)).collect();
    let refs: Vec<Vec<f64>> = (0..d).map(|i| column(reference, i)).collect();
    for s in act.iter().chain(&refs) {
        if s.iter().all(|v| *v == s[0]) {
            return Err(Error::Degenerate("time lag of a constant series".into()));
        }
    }
    let max_shift = (n / 4) as i64;
    let score = |tau: i64| -> f64 {
        let (a0, r0, len) = if tau >= 0 {
            (tau as usize, 0, n - tau as usize)
        } else {
            (0, (-tau) as usize, n - (-tau) as usize)
        };
        (0..d)
            .map(|i| pearson(&act[i][a0..a0 + len], &refs[i][r0..r0 + len]))
            .sum::<f64>()
            / d as f64
    };
    let mut best = (0i64, score(0));
    for k in 1..=max_shift {
        for tau in [k, -k] {
            let s = score(tau);
            if s > best.1 {
                best = (tau, s);
            }
        }
    }
    Ok(best.0 as f64 * dt)
}

/// Discrete Fréchet distance by dynamic programming over monotone couplings.
pub fn frechet_distance<P: AsRef<[f64]>>(a: &[P], b: &[P]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("Fréchet trajectories"));
    }
    check_dims(a, b)?;
    let m = b.len();
    let mut prev = vec![0.0; m];
    let mut cur = vec![0.0; m];
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let d = sq_dist(p.as_ref(), q.as_ref());
            let reach = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]),
            };
            cur[j] = reach.max(d);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1].sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(v: &[(f64, f64)]) -> Vec<[f64; 2]> {
        v.iter().map(|&(x, y)| [x, y]).collect()
    }

    fn figure8(n: usize, shift: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|k| {
                let t = k.saturating_sub(shift) as f64 * 0.01;
                [
                    0.05 * (4.0 * std::f64::consts::PI * t / 5.0).sin() + 0.1,
                    0.1 * (2.0 * std::f64::consts::PI * t / 5.0).cos(),
                ]
            })
            .collect()
    }

    #[test]
    fn rmse_examples() {
        let a = pts(&[(0.0, 0.0), (1.0, 2.0)]);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = pts(&[(0.3, 0.4), (1.3, 2.4)]);
        assert!((rmse(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(rmse(&pts(&[(0.0, 0.0)]), &pts(&[(3.0, 4.0)])).unwrap(), 5.0);
        assert!(rmse(&a, &b[..1]).is_err());
    }

    #[test]
    fn lag_examples() {
        let r = figure8(500, 0);
        assert_eq!(time_lag(&r, &r, 0.01).unwrap(), 0.0);
        for k in [1, 7, 30] {
            let shifted = figure8(500, k);
            assert!((time_lag(&shifted, &r, 0.01).unwrap() - k as f64 * 0.01).abs() < 1e-12);
        }
        let flat = vec![[1.0, 2.0]; 100];
        assert!(matches!(time_lag(&flat, &flat, 0.01), Err(Error::Degenerate(_))));
        assert!(time_lag(&r[..10], &r[..10], 0.01).is_err());
    }

    #[test]
    fn anti_phase_sinusoid_lags_half_a_period() {
        let period = 100usize;
        let w = 2.0 * std::f64::consts::PI / period as f64;
        let r: Vec<[f64; 1]> = (0..400).map(|k| [(w * k as f64).sin()]).collect();
        let a: Vec<[f64; 1]> = (0..400).map(|k| [-(w * k as f64).sin()]).collect();
        let lag = time_lag(&a, &r, 0.01).unwrap();
        assert!((lag.abs() - 0.5).abs() < 1e-12, "{lag}");
    }

    #[test]
    fn frechet_examples() {
        let a = pts(&[(0.0, 0.0), (1.0, 0.0)]);
        let b = pts(&[(0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(frechet_distance(&pts(&[(0.0, 0.0)]), &pts(&[(3.0, 4.0)])).unwrap(), 5.0);
        assert_eq!(frechet_distance(&a, &b).unwrap(), 1.0);
        assert!(frechet_distance(&a, &[]).is_err());
    }

    proptest! {
        #[test]
        fn constant_offset_metrics(
            base in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..30),
            dx in -1.0f64..1.0,
            dy in -1.0f64..1.0,
        ) {
            let a = pts(&base);
            let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
            let d = (dx * dx + dy * dy).sqrt();
            prop_assert!((rmse(&a, &b).unwrap() - d).abs() < 1e-12);
            prop_assert!((rmse(&b, &a).unwrap() - rmse(&a, &b).unwrap()).abs() == 0.0);
            prop_assert!(frechet_distance(&a, &b).unwrap() <= d + 1e-12);
            prop_assert_eq!(frechet_distance(&a, &b).unwrap(), frechet_distance(&b, &a).unwrap());
        }

        #[test]
        fn frechet_zero_only_for_identical(
            a in prop::collection::vec((0u8..3, 0u8..3), 1..6),
            b in prop::collection::vec((0u8..3, 0u8..3), 1..6),
        ) {
            let pa: Vec<[f64; 2]> = a.iter().map(|&(x, y)| [x as f64, y as f64]).collect();
            let pb: Vec<[f64; 2]> = b.iter().map(|&(x, y)| [x as f64, y as f64]).collect();
            let d = frechet_distance(&pa, &pb).unwrap();
            let dedup = |v: &[[f64; 2]]| {
                let mut out: Vec<[f64; 2]> = Vec::new();
                for p in v {
                    if out.last() != Some(p) {
                        out.push(*p);
                    }
                }
                out
            };
            // Zero exactly when the sequences agree up to repeated points.
            prop_assert_eq!(d == 0.0, dedup(&pa) == dedup(&pb));
        }
    }
}
