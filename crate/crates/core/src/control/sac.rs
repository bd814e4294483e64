//! Sequential action control: roll out the nominal policy, integrate the
//! costate backward and apply the closed-form single-insertion action.

use nalgebra::{DMatrix, DVector};

use super::lqr::Policy;
use super::{ContinuousKoopman, QuadraticCost};
use crate::error::{ensure_len, Error, Result};

/// Quadratic tracking objective over `H` intervals. Interval `j` tracks
/// `running_ref[j]`; the terminal cost tracks `terminal_ref`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingObjective {
    pub q: DVector<f64>,
    pub r: DVector<f64>,
    pub qt: DVector<f64>,
    pub running_ref: Vec<DVector<f64>>,
    pub terminal_ref: DVector<f64>,
    pub u_ref: DVector<f64>,
}

impl TrackingObjective {
    pub fn new(
        cost: &QuadraticCost,
        running_ref: Vec<DVector<f64>>,
        terminal_ref: DVector<f64>,
        u_ref: DVector<f64>,
    ) -> Result<Self> {
        if running_ref.is_empty() {
            return Err(Error::InvalidParameter("objective needs at least one interval".into()));
        }
        let n_z = cost.q.len();
        for r in running_ref.iter().chain(std::iter::once(&terminal_ref)) {
            ensure_len("objective reference", n_z, r.len())?;
        }
        ensure_len("objective control reference", cost.r.len(), u_ref.len())?;
        ensure_len("terminal weights", n_z, cost.qt.len())?;
        Ok(Self {
            q: cost.q.clone(),
            r: cost.r.clone(),
            qt: cost.qt.clone(),
            running_ref,
            terminal_ref,
            u_ref,
        })
    }

    /// Same reference on every interval and at the end.
    pub fn constant(cost: &QuadraticCost, z_ref: DVector<f64>, u_ref: DVector<f64>, steps: usize) -> Result<Self> {
        Self::new(cost, vec![z_ref.clone(); steps.max(1)], z_ref, u_ref)
    }

    pub fn steps(&self) -> usize {
        self.running_ref.len()
    }

    pub fn running_cost(&self, j: usize, z: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let dz = z - &self.running_ref[j];
        let du = u - &self.u_ref;
        dz.component_mul(&dz).dot(&self.q) + du.component_mul(&du).dot(&self.r)
    }

    pub fn terminal_cost(&self, z: &DVector<f64>) -> f64 {
        let dz = z - &self.terminal_ref;
        dz.component_mul(&dz).dot(&self.qt)
    }

    fn running_grad_z(&self, j: usize, z: &DVector<f64>) -> DVector<f64> {
        (z - &self.running_ref[j]).component_mul(&self.q) * 2.0
    }

    fn running_grad_u(&self, u: &DVector<f64>) -> DVector<f64> {
        (u - &self.u_ref).component_mul(&self.r) * 2.0
    }

    fn terminal_grad(&self, z: &DVector<f64>) -> DVector<f64> {
        (z - &self.terminal_ref).component_mul(&self.qt) * 2.0
    }
}

/// Nominal closed-loop trajectory at the nodes `t_0 .. t_H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub z: Vec<DVector<f64>>,
    /// Closed-loop derivative at each node.
    pub zdot: Vec<DVector<f64>>,
    /// Nominal control at nodes `0 .. H-1`.
    pub u: Vec<DVector<f64>>,
    pub dt: f64,
}

impl Rollout {
    pub fn steps(&self) -> usize {
        self.u.len()
    }

    /// Cubic Hermite value halfway between nodes `j` and `j+1`.
    fn midpoint(&self, j: usize) -> DVector<f64> {
        (&self.z[j] + &self.z[j + 1]) * 0.5 + (&self.zdot[j] - &self.zdot[j + 1]) * (self.dt / 8.0)
    }
}

/// `zdot = A_cl z + c` for the closed loop `A z + B mu(z)`.
struct ClosedLoop {
    a_cl: DMatrix<f64>,
    offset: DVector<f64>,
}

impl ClosedLoop {
    fn new(cont: &ContinuousKoopman, policy: &Policy) -> Self {
        let a_cl = &cont.a - &cont.b * &policy.gain;
        let offset = &cont.b * (&policy.u_ref + &policy.gain * &policy.z_ref);
        Self { a_cl, offset }
    }

    fn eval(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = self.offset.clone();
        out.gemv(1.0, &self.a_cl, z, 1.0);
        out
    }
}

fn rk4_step(f: impl Fn(&DVector<f64>) -> DVector<f64>, y: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = f(y);
    let k2 = f(&(y + &k1 * (h / 2.0)));
    let k3 = f(&(y + &k2 * (h / 2.0)));
    let k4 = f(&(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn check_policy(cont: &ContinuousKoopman, policy: &Policy) -> Result<()> {
    ensure_len("policy gain rows", cont.n_u(), policy.gain.nrows())?;
    ensure_len("policy gain columns", cont.n_z(), policy.gain.ncols())?;
    ensure_len("policy state reference", cont.n_z(), policy.z_ref.len())?;
    ensure_len("policy control reference", cont.n_u(), policy.u_ref.len())
}

/// Integrates `zdot = A z + B mu(z)` with RK4 for `steps` steps.
pub fn simulate_nominal(
    cont: &ContinuousKoopman,
    policy: &Policy,
    z0: &DVector<f64>,
    steps: usize,
    dt: f64,
) -> Result<Rollout> {
    if steps == 0 || !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rollout needs steps >= 1 and dt > 0, got {steps} and {dt}"
        )));
    }
    check_policy(cont, policy)?;
    ensure_len("initial lifted state", cont.n_z(), z0.len())?;
    if !all_finite(z0) {
        return Err(Error::Divergence {
            stage: "rollout",
            step: 0,
        });
    }
    let cl = ClosedLoop::new(cont, policy);
    let mut z = Vec::with_capacity(steps + 1);
    let mut zdot = Vec::with_capacity(steps + 1);
    let mut u = Vec::with_capacity(steps);
    z.push(z0.clone());
    for j in 0..steps {
        u.push(policy.eval(&z[j]));
        zdot.push(cl.eval(&z[j]));
        let next = rk4_step(|y| cl.eval(y), &z[j], dt);
        if !all_finite(&next) {
            return Err(Error::Divergence {
                stage: "rollout",
                step: j + 1,
            });
        }
        z.push(next);
    }
    zdot.push(cl.eval(&z[steps]));
    Ok(Rollout { z, zdot, u, dt })
}

/// Integrates the costate backward from `rho(T) = dm/dz` with
/// `rhodot = -(dl/dz + (dmu/dz)^T dl/du) - (A + B dmu/dz)^T rho`.
/// Returns `rho` at every node.
pub fn sac_adjoint(
    rollout: &Rollout,
    cont: &ContinuousKoopman,
    policy: &Policy,
    objective: &TrackingObjective,
) -> Result<Vec<DVector<f64>>> {
    let steps = rollout.steps();
    ensure_len("objective intervals", steps, objective.steps())?;
    check_policy(cont, policy)?;
    ensure_len("objective weights", cont.n_z(), objective.q.len())?;
    let dmu = policy.jacobian();
    let a_cl_t = (&cont.a + &cont.b * &dmu).transpose();
    let dmu_t = dmu.transpose();
    let dt = rollout.dt;
    let rhs = |j: usize, z: &DVector<f64>, rho: &DVector<f64>| -> DVector<f64> {
        let u = policy.eval(z);
        let mut out = objective.running_grad_z(j, z);
        out.gemv(1.0, &dmu_t, &objective.running_grad_u(&u), 1.0);
        out.gemv(1.0, &a_cl_t, rho, 1.0);
        -out
    };
    let mut rho = vec![DVector::zeros(cont.n_z()); steps + 1];
    rho[steps] = objective.terminal_grad(&rollout.z[steps]);
    if !all_finite(&rho[steps]) {
        return Err(Error::Divergence {
            stage: "adjoint",
            step: steps,
        });
    }
    for j in (0..steps).rev() {
        let z_end = &rollout.z[j + 1];
        let z_mid = rollout.midpoint(j);
        let z_start = &rollout.z[j];
        let r = &rho[j + 1];
        let k1 = rhs(j, z_end, r);
        let k2 = rhs(j, &z_mid, &(r - &k1 * (dt / 2.0)));
        let k3 = rhs(j, &z_mid, &(r - &k2 * (dt / 2.0)));
        let k4 = rhs(j, z_start, &(r - &k3 * dt));
        let prev = r - (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if !all_finite(&prev) {
            return Err(Error::Divergence {
                stage: "adjoint",
                step: j,
            });
        }
        rho[j] = prev;
    }
    Ok(rho)
}

/// `rho^T (f2 - f1)`: first-order change of the objective from switching
/// the dynamics `f1` to `f2` for an infinitesimal duration.
pub fn mode_insertion_gradient(rho: &DVector<f64>, f1: &DVector<f64>, f2: &DVector<f64>) -> f64 {
    debug_assert!(rho.len() == f1.len() && f1.len() == f2.len());
    rho.dot(&(f2 - f1))
}

/// Control applied on the first interval of an objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Insertion {
    Nominal,
    FirstStep(DVector<f64>),
}

/// Rolled-out objective: integral of the running cost (augmented RK4) plus
/// the terminal cost, under the nominal policy with an optional constant
/// action held over the first interval.
pub fn objective_value(
    cont: &ContinuousKoopman,
    policy: &Policy,
    objective: &TrackingObjective,
    z0: &DVector<f64>,
    dt: f64,
    insertion: &Insertion,
) -> Result<f64> {
    check_policy(cont, policy)?;
    ensure_len("initial lifted state", cont.n_z(), z0.len())?;
    if let Insertion::FirstStep(u) = insertion {
        ensure_len("inserted action", cont.n_u(), u.len())?;
    }
    let n = cont.n_z();
    let mut z = z0.clone();
    let mut total = 0.0;
    for j in 0..objective.steps() {
        let fixed = match insertion {
            Insertion::FirstStep(u) if j == 0 => Some(u),
            _ => None,
        };
        let f = |y: &DVector<f64>| -> DVector<f64> {
            let zs = y.rows(0, n).into_owned();
            let u = fixed.cloned().unwrap_or_else(|| policy.eval(&zs));
            let dz = cont.derivative(&zs, &u);
            let mut out = DVector::zeros(n + 1);
            out.rows_mut(0, n).copy_from(&dz);
            out[n] = objective.running_cost(j, &zs, &u);
            out
        };
        let mut aug = DVector::zeros(n + 1);
        aug.rows_mut(0, n).copy_from(&z);
        let next = rk4_step(f, &aug, dt);
        if !all_finite(&next) {
            return Err(Error::Divergence {
                stage: "objective",
                step: j + 1,
            });
        }
        total += next[n];
        z = next.rows(0, n).into_owned();
    }
    Ok(total + objective.terminal_cost(&z))
}

/// `mu(z) - Rbar^{-1} B^T rho(0)`.
pub fn closed_form_action(
    b: &DMatrix<f64>,
    rbar: &[f64],
    rho0: &DVector<f64>,
    nominal: &DVector<f64>,
) -> Result<DVector<f64>> {
    ensure_len("rbar", b.ncols(), rbar.len())?;
    let mut u = nominal.clone();
    let btr = b.transpose() * rho0;
    for i in 0..u.len() {
        u[i] -= btr[i] / rbar[i];
    }
    Ok(u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacOutcome {
    /// Closed-form action before saturation.
    pub raw: DVector<f64>,
    /// Action after clamping to the actuator bounds.
    pub action: DVector<f64>,
    /// Nominal policy value at the current state.
    pub nominal: DVector<f64>,
    pub rho0: DVector<f64>,
    pub saturated: bool,
}

/// One SAC decision at lifted state `z0`: nominal rollout over the
/// objective horizon, backward costate pass, closed-form action and
/// clamping to `|u_i| <= u_max[i]` (no clamping when `u_max` is empty).
pub fn sac_action(
    cont: &ContinuousKoopman,
    policy: &Policy,
    objective: &TrackingObjective,
    z0: &DVector<f64>,
    rbar: &[f64],
    dt: f64,
    u_max: &[f64],
) -> Result<SacOutcome> {
    if !all_finite(z0) {
        return Err(Error::NonFinite {
            context: "SAC lifted state".into(),
        });
    }
    let rollout = simulate_nominal(cont, policy, z0, objective.steps(), dt)?;
    let rho = sac_adjoint(&rollout, cont, policy, objective)?;
    let rho0 = rho.into_iter().next().expect("costate has at least two nodes");
    let nominal = policy.eval(z0);
    let raw = closed_form_action(&cont.b, rbar, &rho0, &nominal)?;
    let mut action = raw.clone();
    let mut saturated = false;
    if !u_max.is_empty() {
        ensure_len("actuator bounds", action.len(), u_max.len())?;
        for (a, &m) in action.iter_mut().zip(u_max) {
            let c = a.clamp(-m, m);
            if c != *a {
                saturated = true;
                *a = c;
            }
        }
    }
    Ok(SacOutcome {
        raw,
        action,
        nominal,
        rho0,
        saturated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::lqr::lqr_nominal;
    use crate::env::spectral_radius;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cost(n: usize, m: usize, q: f64, r: f64, qt: f64) -> QuadraticCost {
        QuadraticCost {
            q: DVector::from_element(n, q),
            r: DVector::from_element(m, r),
            qt: DVector::from_element(n, qt),
            skip: vec![],
        }
    }

    fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize) -> ContinuousKoopman {
        loop {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)) - DMatrix::identity(n, n) * 1.5;
            let e = (DMatrix::identity(n, n) + &a * 0.01).clone();
            if spectral_radius(&e) < 1.0 {
                return ContinuousKoopman {
                    a,
                    b: DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0)),
                };
            }
        }
    }

    #[test]
    fn static_model_keeps_state() {
        let cont = ContinuousKoopman {
            a: DMatrix::zeros(2, 2),
            b: DMatrix::zeros(2, 1),
        };
        let pol = Policy::constant(DVector::from_element(1, 0.3), 2);
        let z0 = DVector::from_vec(vec![1.0, -2.0]);
        let roll = simulate_nominal(&cont, &pol, &z0, 10, 0.1).unwrap();
        assert!(roll.z.iter().all(|z| *z == z0));
        assert_eq!(roll.u.len(), 10);
    }

    #[test]
    fn exponential_decay() {
        let cont = ContinuousKoopman {
            a: DMatrix::from_element(1, 1, -1.0),
            b: DMatrix::zeros(1, 1),
        };
        let pol = Policy::constant(DVector::zeros(1), 1);
        let roll = simulate_nominal(&cont, &pol, &DVector::from_element(1, 1.0), 100, 0.01).unwrap();
        assert!((roll.z[100][0] - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn rollout_overflow_is_reported() {
        let cont = ContinuousKoopman {
            a: DMatrix::from_element(1, 1, 1e6),
            b: DMatrix::zeros(1, 1),
        };
        let pol = Policy::constant(DVector::zeros(1), 1);
        let err = simulate_nominal(&cont, &pol, &DVector::from_element(1, 1.0), 1000, 1.0).unwrap_err();
        assert!(matches!(err, Error::Divergence { stage: "rollout", .. }));
    }

    #[test]
    fn lqr_rollout_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let cont = random_system(&mut rng, 3, 2);
            let z_ref = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let pol = lqr_nominal(
                &cont,
                &cost(3, 2, 10.0, 0.1, 0.0),
                0.01,
                &z_ref,
                &DVector::zeros(2),
                None,
            )
            .unwrap();
            // Shift the setpoint to an equilibrium of the closed loop.
            let cl = ClosedLoop::new(&cont, &pol);
            let eq = -cl.a_cl.clone().lu().solve(&cl.offset).unwrap();
            let z0 = &eq + DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let roll = simulate_nominal(&cont, &pol, &z0, 200, 0.01).unwrap();
            assert!((&roll.z[200] - &eq).norm() < (&z0 - &eq).norm());
        }
    }

    #[test]
    fn zero_objective_gives_zero_costate() {
        let cont = ContinuousKoopman {
            a: DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        };
        let pol = Policy::constant(DVector::zeros(1), 2);
        let obj =
            TrackingObjective::constant(&cost(2, 1, 0.0, 0.0, 0.0), DVector::zeros(2), DVector::zeros(1), 5).unwrap();
        let z0 = DVector::from_vec(vec![1.0, 1.0]);
        let roll = simulate_nominal(&cont, &pol, &z0, 5, 0.1).unwrap();
        let rho = sac_adjoint(&roll, &cont, &pol, &obj).unwrap();
        assert!(rho.iter().all(|r| r.iter().all(|v| *v == 0.0)));
        let out = sac_action(&cont, &pol, &obj, &z0, &[1.0], 0.1, &[]).unwrap();
        assert_eq!(out.raw, out.nominal);
    }

    #[test]
    fn terminal_only_costate_is_constant() {
        let cont = ContinuousKoopman {
            a: DMatrix::zeros(2, 2),
            b: DMatrix::zeros(2, 1),
        };
        let pol = Policy::constant(DVector::zeros(1), 2);
        let obj =
            TrackingObjective::constant(&cost(2, 1, 0.0, 0.0, 1.0), DVector::zeros(2), DVector::zeros(1), 8).unwrap();
        let z0 = DVector::from_vec(vec![0.3, -0.7]);
        let roll = simulate_nominal(&cont, &pol, &z0, 8, 0.05).unwrap();
        let rho = sac_adjoint(&roll, &cont, &pol, &obj).unwrap();
        for r in &rho {
            assert!((r - &z0 * 2.0).amax() < 1e-15);
        }
    }

    fn fd_gradient(
        cont: &ContinuousKoopman,
        pol: &Policy,
        obj: &TrackingObjective,
        z0: &DVector<f64>,
        dt: f64,
    ) -> DVector<f64> {
        let h = 1e-6;
        DVector::from_fn(z0.len(), |i, _| {
            let mut zp = z0.clone();
            let mut zm = z0.clone();
            zp[i] += h;
            zm[i] -= h;
            let jp = objective_value(cont, pol, obj, &zp, dt, &Insertion::Nominal).unwrap();
            let jm = objective_value(cont, pol, obj, &zm, dt, &Insertion::Nominal).unwrap();
            (jp - jm) / (2.0 * h)
        })
    }

    #[test]
    fn scalar_costate_matches_finite_differences() {
        let cont = ContinuousKoopman {
            a: DMatrix::from_element(1, 1, -0.5),
            b: DMatrix::from_element(1, 1, 1.0),
        };
        let c = cost(1, 1, 2.0, 0.5, 1.0);
        let pol = lqr_nominal(
            &cont,
            &c,
            0.01,
            &DVector::from_element(1, 0.2),
            &DVector::zeros(1),
            None,
        )
        .unwrap();
        let obj = TrackingObjective::constant(&c, DVector::from_element(1, 0.2), DVector::zeros(1), 40).unwrap();
        let z0 = DVector::from_element(1, 1.3);
        let roll = simulate_nominal(&cont, &pol, &z0, 40, 0.01).unwrap();
        let rho = sac_adjoint(&roll, &cont, &pol, &obj).unwrap();
        let g = fd_gradient(&cont, &pol, &obj, &z0, 0.01);
        assert!(
            (rho[0][0] - g[0]).abs() <= 1e-3 * g[0].abs(),
            "{} vs {}",
            rho[0][0],
            g[0]
        );
    }

    #[test]
    fn costate_matches_finite_differences_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..15 {
            let n = rng.random_range(2..5);
            let m = rng.random_range(1..3);
            let cont = random_system(&mut rng, n, m);
            let c = QuadraticCost {
                q: DVector::from_fn(n, |_, _| rng.random_range(0.1..5.0)),
                r: DVector::from_fn(m, |_, _| rng.random_range(0.1..1.0)),
                qt: DVector::from_fn(n, |_, _| rng.random_range(0.0..2.0)),
                skip: vec![],
            };
            let z_ref = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let pol = lqr_nominal(&cont, &c, 0.01, &z_ref, &DVector::zeros(m), None).unwrap();
            let steps = 30;
            let refs: Vec<_> = (0..steps).map(|j| z_ref.map(|v| v + 0.01 * j as f64)).collect();
            let obj = TrackingObjective::new(&c, refs, z_ref.clone(), DVector::zeros(m)).unwrap();
            let z0 = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let roll = simulate_nominal(&cont, &pol, &z0, steps, 0.01).unwrap();
            let rho = sac_adjoint(&roll, &cont, &pol, &obj).unwrap();
            let g = fd_gradient(&cont, &pol, &obj, &z0, 0.01);
            assert!((&rho[0] - &g).norm() <= 1e-3 * g.norm(), "{} vs {}", rho[0], g);
        }
    }

    #[test]
    fn insertion_gradient_examples() {
        let v = |s: &[f64]| DVector::from_column_slice(s);
        assert_eq!(
            mode_insertion_gradient(&v(&[1.0, 1.0]), &v(&[0.0, 0.0]), &v(&[1.0, 2.0])),
            3.0
        );
        assert_eq!(
            mode_insertion_gradient(&v(&[4.0, -1.0]), &v(&[2.0, 3.0]), &v(&[2.0, 3.0])),
            0.0
        );
        assert_eq!(
            mode_insertion_gradient(&v(&[1.0, 2.0]), &v(&[0.0, 0.0]), &v(&[2.0, -1.0])),
            0.0
        );
    }

    #[test]
    fn closed_form_direct() {
        let u = closed_form_action(
            &DMatrix::identity(2, 2),
            &[1.0, 1.0],
            &DVector::from_vec(vec![1.0, -1.0]),
            &DVector::zeros(2),
        )
        .unwrap();
        assert_eq!(u.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn action_descends_and_clamps_only_at_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let n = 3;
            let cont = random_system(&mut rng, n, 2);
            let c = cost(n, 2, 5.0, 0.1, 1.0);
            let pol = lqr_nominal(&cont, &c, 0.01, &DVector::zeros(n), &DVector::zeros(2), None).unwrap();
            let refs: Vec<_> = (0..16)
                .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let obj = TrackingObjective::new(&c, refs, DVector::zeros(n), DVector::zeros(2)).unwrap();
            let z0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let rbar = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
            let out = sac_action(&cont, &pol, &obj, &z0, &rbar, 0.01, &[]).unwrap();
            let drive = cont.b.transpose() * &out.rho0;
            if drive.norm() > 1e-6 {
                let f1 = cont.derivative(&z0, &out.nominal);
                let f2 = cont.derivative(&z0, &out.raw);
                assert!(mode_insertion_gradient(&out.rho0, &f1, &f2) < 0.0);
            }
            let wide = [out.raw[0].abs() + 1.0, out.raw[1].abs() + 1.0];
            let inside = sac_action(&cont, &pol, &obj, &z0, &rbar, 0.01, &wide).unwrap();
            assert_eq!(inside.action, out.raw);
            assert!(!inside.saturated);
            let tight = [out.raw[0].abs() / 2.0, out.raw[1].abs() / 2.0];
            let clipped = sac_action(&cont, &pol, &obj, &z0, &rbar, 0.01, &tight).unwrap();
            for (i, &bound) in tight.iter().enumerate() {
                assert_eq!(clipped.action[i].abs(), bound);
                assert_eq!(clipped.action[i].signum(), out.raw[i].signum());
            }
        }
    }
}
