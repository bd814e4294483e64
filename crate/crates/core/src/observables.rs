//! Observable bases that lift a raw state into the feature space of the
//! linear model.
//!
//! Every basis keeps the raw state as its leading block, so a lifted vector
//! can always be truncated back to the state it came from.
//!
//! Polynomial monomials beyond the linear block are enumerated by total
//! degree, and within one degree in lexicographic order of their sorted
//! index tuples (`x0^2, x0 x1, x1^2, ...`). This ordering is a convention of
//! this crate; serialized models carry the [`BasisSpec`] so two orderings are
//! never mixed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, Error, Result};

/// Dimension of the two-link arm lift.
pub const ARM17_DIM: usize = 17;

/// Index of the constant feature inside the arm lift.
pub const ARM17_CONSTANT_INDEX: usize = 4;

/// Declarative description of a basis. This is what configs and checkpoint
/// headers store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BasisSpec {
    Identity { n_x: usize },
    Polynomial { n_x: usize, degree: usize },
    Arm17,
    GaussianRbf { centers: Vec<Vec<f64>>, epsilon: f64 },
}

impl BasisSpec {
    pub fn n_x(&self) -> usize {
        match self {
            BasisSpec::Identity { n_x } | BasisSpec::Polynomial { n_x, .. } => *n_x,
            BasisSpec::Arm17 => 4,
            BasisSpec::GaussianRbf { centers, .. } => centers.first().map_or(0, Vec::len),
        }
    }
}

impl fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisSpec::Identity { n_x } => write!(f, "identity({n_x})"),
            BasisSpec::Polynomial { n_x, degree } => write!(f, "polynomial({n_x},{degree})"),
            BasisSpec::Arm17 => write!(f, "arm17"),
            BasisSpec::GaussianRbf { centers, epsilon } => {
                write!(f, "rbf({epsilon};")?;
                for (i, c) in centers.iter().enumerate() {
                    if i > 0 {
                        write!(f, "|")?;
                    }
                    for (j, v) in c.iter().enumerate() {
                        if j > 0 {
                            write!(f, ",")?;
                        }
                        write!(f, "{v}")?;
                    }
                }
                write!(f, ")")
            }
        }
    }
}

impl FromStr for BasisSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "arm17" {
            return Ok(BasisSpec::Arm17);
        }
        let open = s
            .find('(')
            .ok_or_else(|| Error::Parse(format!("basis spec `{s}` has no argument list")))?;
        if !s.ends_with(')') {
            return Err(Error::Parse(format!("basis spec `{s}` is not closed")));
        }
        let name = &s[..open];
        let args = &s[open + 1..s.len() - 1];
        let int = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("basis spec `{s}`: {e}")))
        };
        let float = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("basis spec `{s}`: {e}")))
        };
        match name {
            "identity" => Ok(BasisSpec::Identity { n_x: int(args)? }),
            "polynomial" => {
                let (n, d) = args
                    .split_once(',')
                    .ok_or_else(|| Error::Parse(format!("basis spec `{s}` needs n_x,degree")))?;
                Ok(BasisSpec::Polynomial {
                    n_x: int(n)?,
                    degree: int(d)?,
                })
            }
            "rbf" => {
                let (eps, centers) = args
                    .split_once(';')
                    .ok_or_else(|| Error::Parse(format!("basis spec `{s}` needs eps;centers")))?;
                let centers = centers
                    .split('|')
                    .map(|c| c.split(',').map(float).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                Ok(BasisSpec::GaussianRbf {
                    centers,
                    epsilon: float(eps)?,
                })
            }
            other => Err(Error::Parse(format!("unknown basis kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Identity,
    Polynomial { monomials: Vec<Vec<usize>> },
    Arm17,
    GaussianRbf { centers: Vec<Vec<f64>>, epsilon: f64 },
}

/// A constructed, immutable basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    spec: BasisSpec,
    kind: Kind,
    n_x: usize,
    n_z: usize,
}

/// Builds a basis from its spec, validating parameters.
pub fn make_basis(spec: &BasisSpec) -> Result<Basis> {
    Basis::new(spec.clone())
}

impl Basis {
    pub fn new(spec: BasisSpec) -> Result<Self> {
        let (kind, n_x, n_z) = match &spec {
            BasisSpec::Identity { n_x } => (Kind::Identity, *n_x, *n_x),
            BasisSpec::Polynomial { n_x, degree } => {
                if *degree == 0 {
                    return Err(Error::InvalidParameter("polynomial degree must be at least 1".into()));
                }
                let monomials = graded_monomials(*n_x, *degree);
                let n_z = n_x + monomials.len();
                (Kind::Polynomial { monomials }, *n_x, n_z)
            }
            BasisSpec::Arm17 => (Kind::Arm17, 4, ARM17_DIM),
            BasisSpec::GaussianRbf { centers, epsilon } => {
                if centers.is_empty() {
                    return Err(Error::Empty("RBF centers"));
                }
                if !(*epsilon > 0.0) || !epsilon.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "RBF epsilon must be positive, got {epsilon}"
                    )));
                }
                let n_x = centers[0].len();
                for c in centers {
                    ensure_len("RBF center", n_x, c.len())?;
                    ensure_finite(c, "RBF center")?;
                }
                (
                    Kind::GaussianRbf {
                        centers: centers.clone(),
                        epsilon: *epsilon,
                    },
                    n_x,
                    n_x + centers.len(),
                )
            }
        };
        Ok(Basis { spec, kind, n_x, n_z })
    }

    pub fn identity(n_x: usize) -> Self {
        Basis::new(BasisSpec::Identity { n_x }).expect("identity basis is always valid")
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    /// Indices of features that are identically constant.
    pub fn constant_features(&self) -> Vec<usize> {
        match self.kind {
            Kind::Arm17 => vec![ARM17_CONSTANT_INDEX],
            _ => Vec::new(),
        }
    }

    /// Lifts `x` into a freshly allocated vector.
    pub fn lift(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_z];
        self.lift_into(x, &mut out)?;
        Ok(out)
    }

    /// Lifts `x` into `out`, which must have length `n_z`.
    pub fn lift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        ensure_len("lift input", self.n_x, x.len())?;
        ensure_len("lift output", self.n_z, out.len())?;
        ensure_finite(x, "lift input")?;
        match &self.kind {
            Kind::Identity => out.copy_from_slice(x),
            Kind::Polynomial { monomials } => {
                out[..self.n_x].copy_from_slice(x);
                for (slot, mono) in out[self.n_x..].iter_mut().zip(monomials) {
                    *slot = mono.iter().map(|&i| x[i]).product();
                }
            }
            Kind::Arm17 => arm17_into(x, out),
            Kind::GaussianRbf { centers, epsilon } => {
                out[..self.n_x].copy_from_slice(x);
                for (slot, c) in out[self.n_x..].iter_mut().zip(centers) {
                    let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    *slot = (-epsilon * d2).exp();
                }
            }
        }
        ensure_finite(out, "lifted vector")
    }
}

/// Monomials of total degree 2..=degree as sorted index tuples.
fn graded_monomials(n_x: usize, degree: usize) -> Vec<Vec<usize>> {
    fn extend(start: usize, n_x: usize, remaining: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..n_x {
            cur.push(i);
            extend(i, n_x, remaining - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for d in 2..=degree {
        extend(0, n_x, d, &mut Vec::with_capacity(d), &mut out);
    }
    out
}

fn arm17_into(x: &[f64], out: &mut [f64]) {
    let (q1, q2, w1, w2) = (x[0], x[1], x[2], x[3]);
    let s = q1 + q2;
    let features = [
        q1,
        q2,
        w1,
        w2,
        1.0,
        q1 * q1,
        q1 * q2,
        q2 * q2,
        w1 * w1,
        w1 * w2,
        w2 * w2,
        q1.sin(),
        q2.sin(),
        s.sin(),
        q1.cos(),
        q2.cos(),
        s.cos(),
    ];
    out.copy_from_slice(&features);
}

/// The 17-dimensional two-link arm observable:
/// `[q; qdot; 1; quadratic monomials; sin/cos of q1, q2, q1+q2]`.
pub fn lift_arm17(x: &[f64]) -> Result<[f64; ARM17_DIM]> {
    ensure_len("arm17 input", 4, x.len())?;
    ensure_finite(x, "arm17 input")?;
    let mut out = [0.0; ARM17_DIM];
    arm17_into(x, &mut out);
    Ok(out)
}

/// Uniform tensor grid of RBF centers; `counts[i]` points span
/// `[lower[i], upper[i]]` inclusive (a single point sits at the midpoint).
pub fn rbf_grid_centers(lower: &[f64], upper: &[f64], counts: &[usize]) -> Result<Vec<Vec<f64>>> {
    ensure_len("grid upper bounds", lower.len(), upper.len())?;
    ensure_len("grid counts", lower.len(), counts.len())?;
    if counts.contains(&0) {
        return Err(Error::InvalidParameter("grid counts must be positive".into()));
    }
    let axes: Vec<Vec<f64>> = lower
        .iter()
        .zip(upper)
        .zip(counts)
        .map(|((&lo, &hi), &n)| {
            if n == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            }
        })
        .collect();
    let mut centers = vec![Vec::new()];
    for axis in &axes {
        centers = centers
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut c = prefix.clone();
                    c.push(v);
                    c
                })
            })
            .collect();
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn binomial(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn dimensions() {
        assert_eq!(Basis::identity(6).n_z(), 6);
        assert_eq!(Basis::new(BasisSpec::Arm17).unwrap().n_z(), 17);
        let centers = vec![vec![0.0; 4]; 117];
        let rbf = Basis::new(BasisSpec::GaussianRbf { centers, epsilon: 1.0 }).unwrap();
        assert_eq!(rbf.n_z(), 121);
    }

    #[test]
    fn polynomial_dimension_matches_graded_count() {
        // sum over degrees 1..=d of C(n+k-1, k)
        for n in 1..6 {
            for d in 1..5 {
                let b = Basis::new(BasisSpec::Polynomial { n_x: n, degree: d }).unwrap();
                let expected: usize = (1..=d).map(|k| binomial(n + k - 1, k)).sum();
                assert_eq!(b.n_z(), expected, "n={n} d={d}");
            }
        }
        let cubic = Basis::new(BasisSpec::Polynomial { n_x: 4, degree: 3 }).unwrap();
        assert_eq!(cubic.n_z(), 34);
    }

    #[test]
    fn polynomial_ordering() {
        let b = Basis::new(BasisSpec::Polynomial { n_x: 2, degree: 2 }).unwrap();
        assert_eq!(b.lift(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0, 1.0, 2.0, 4.0]);
        let b3 = Basis::new(BasisSpec::Polynomial { n_x: 2, degree: 3 }).unwrap();
        // x0^3, x0^2 x1, x0 x1^2, x1^3
        assert_eq!(
            b3.lift(&[2.0, 3.0]).unwrap(),
            vec![2.0, 3.0, 4.0, 6.0, 9.0, 8.0, 12.0, 18.0, 27.0]
        );
    }

    #[test]
    fn identity_lift() {
        assert_eq!(Basis::identity(2).lift(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn rbf_at_center_is_one() {
        let x = vec![0.3, -1.2];
        let b = Basis::new(BasisSpec::GaussianRbf {
            centers: vec![x.clone()],
            epsilon: 7.5,
        })
        .unwrap();
        assert_eq!(*b.lift(&x).unwrap().last().unwrap(), 1.0);
    }

    #[test]
    fn construction_errors() {
        assert!(Basis::new(BasisSpec::Polynomial { n_x: 2, degree: 0 }).is_err());
        assert!(Basis::new(BasisSpec::GaussianRbf {
            centers: vec![vec![0.0, 0.0], vec![0.0]],
            epsilon: 1.0
        })
        .is_err());
        assert!(Basis::new(BasisSpec::GaussianRbf {
            centers: vec![vec![0.0]],
            epsilon: 0.0
        })
        .is_err());
        assert!(Basis::new(BasisSpec::GaussianRbf {
            centers: vec![],
            epsilon: 1.0
        })
        .is_err());
    }

    #[test]
    fn lift_rejects_non_finite_and_wrong_length() {
        let b = Basis::identity(2);
        assert!(matches!(b.lift(&[f64::NAN, 0.0]), Err(Error::NonFinite { .. })));
        assert!(matches!(b.lift(&[0.0]), Err(Error::DimensionMismatch { .. })));
        assert!(lift_arm17(&[0.0; 3]).is_err());
    }

    #[test]
    fn arm17_values() {
        let z = lift_arm17(&[0.0; 4]).unwrap();
        let mut expected = [0.0; 17];
        expected[4] = 1.0;
        expected[14] = 1.0;
        expected[15] = 1.0;
        expected[16] = 1.0;
        assert_eq!(z, expected);

        let z = lift_arm17(&[FRAC_PI_2, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(z[11], 1.0);
        assert!(z[14].abs() < 1e-15);
        assert_eq!(z[13], 1.0);

        let z = lift_arm17(&[1.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(&z[5..11], &[1.0, 1.0, 1.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn spec_text_round_trip() {
        let specs = [
            BasisSpec::Identity { n_x: 3 },
            BasisSpec::Polynomial { n_x: 4, degree: 3 },
            BasisSpec::Arm17,
            BasisSpec::GaussianRbf {
                centers: vec![vec![0.1, -2.5e-3], vec![1.0 / 3.0, 7.0]],
                epsilon: 0.25,
            },
        ];
        for s in specs {
            assert_eq!(s.to_string().parse::<BasisSpec>().unwrap(), s);
        }
        assert!("cubic(3)".parse::<BasisSpec>().is_err());
    }

    #[test]
    fn grid_centers() {
        let c = rbf_grid_centers(&[0.0, -1.0], &[1.0, 1.0], &[2, 3]).unwrap();
        assert_eq!(c.len(), 6);
        assert_eq!(c[0], vec![0.0, -1.0]);
        assert_eq!(c[5], vec![1.0, 1.0]);
        assert_eq!(rbf_grid_centers(&[0.0], &[2.0], &[1]).unwrap(), vec![vec![1.0]]);
    }

    fn any_basis() -> impl Strategy<Value = Basis> {
        prop_oneof![
            (1usize..6).prop_map(Basis::identity),
            (1usize..5, 1usize..4).prop_map(|(n, d)| Basis::new(BasisSpec::Polynomial { n_x: n, degree: d }).unwrap()),
            Just(Basis::new(BasisSpec::Arm17).unwrap()),
            (1usize..5, 1usize..4, 0.1f64..5.0).prop_map(|(n, k, eps)| {
                let centers = (0..k).map(|i| vec![i as f64 * 0.5; n]).collect();
                Basis::new(BasisSpec::GaussianRbf { centers, epsilon: eps }).unwrap()
            }),
        ]
    }

    proptest! {
        #[test]
        fn lift_contract(basis in any_basis(), seed in proptest::collection::vec(-3.0f64..3.0, 6)) {
            let x = &seed[..basis.n_x()];
            let z = basis.lift(x).unwrap();
            prop_assert_eq!(z.len(), basis.n_z());
            prop_assert!(basis.n_z() >= basis.n_x());
            prop_assert_eq!(&z[..basis.n_x()], x);
            prop_assert_eq!(basis.lift(x).unwrap(), z.clone());
            if let BasisSpec::GaussianRbf { .. } = basis.spec() {
                for v in &z[basis.n_x()..] {
                    prop_assert!(*v > 0.0 && *v <= 1.0);
                }
            }
        }
    }
}
