use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rkl::control::{
    lqr_nominal, mode_insertion_gradient, sac_action, ContinuousKoopman, QuadraticCost, TrackingObjective,
};
use rkl::edmd::{fit_edmd, KoopmanModel};
use rkl::env::{arm_step, kinetic_energy, ArmParams, ArmState};
use rkl::observables::BasisSpec;
use rkl::pipeline::{frechet_distance, rmse};
use rkl::rls::RlsState;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

struct Problem {
    cont: ContinuousKoopman,
    objective: TrackingObjective,
    policy: rkl::control::Policy,
    z0: DVector<f64>,
    rbar: Vec<f64>,
}

fn random_problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=5);
    let m = rng.random_range(1..=2);
    let cont = ContinuousKoopman {
        a: random_matrix(&mut rng, n, n) - DMatrix::identity(n, n),
        b: random_matrix(&mut rng, n, m),
    };
    let cost = QuadraticCost {
        q: DVector::from_fn(n, |_, _| rng.random_range(0.1..5.0)),
        r: DVector::from_fn(m, |_, _| rng.random_range(0.05..1.0)),
        qt: DVector::from_fn(n, |_, _| rng.random_range(0.0..2.0)),
        skip: vec![],
    };
    let z_ref = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let u_ref = DVector::zeros(m);
    let policy = lqr_nominal(&cont, &cost, 0.02, &z_ref, &u_ref, None).unwrap();
    let objective = TrackingObjective::constant(&cost, z_ref, u_ref, 10).unwrap();
    Problem {
        cont,
        objective,
        policy,
        z0: DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)),
        rbar: (0..m).map(|_| rng.random_range(0.1..10.0)).collect(),
    }
}

fn trajectory(rng: &mut ChaCha8Rng, len: usize) -> Vec<[f64; 2]> {
    (0..len)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn streamed_updates_equal_batch_fit(seed in any::<u64>(), dim in 3usize..9, extra in 20usize..60, streamed in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial = dim + extra;
        let y = random_matrix(&mut rng, dim, initial + streamed);
        let ybar = random_matrix(&mut rng, dim, initial + streamed);
        let fit = fit_edmd(&y.columns(0, initial).into_owned(), &ybar.columns(0, initial).into_owned(), 0.0).unwrap();
        let mut state = RlsState::new(KoopmanModel {
            k: fit.k,
            p: fit.p,
            n_z: dim - 1,
            n_g: 1,
            basis_state: BasisSpec::Identity { n_x: dim - 1 },
            basis_control: BasisSpec::Identity { n_x: 1 },
            dt: 1.0,
            sample_count: initial,
        })
        .unwrap();
        for j in initial..initial + streamed {
            state.update_lifted(&y.column(j).into_owned(), &ybar.column(j).into_owned()).unwrap();
        }
        let batch = fit_edmd(&y, &ybar, 0.0).unwrap();
        prop_assert!((&state.model.k - &batch.k).norm() <= 1e-8 * batch.k.norm());
        prop_assert!((&state.model.p - &batch.p).norm() <= 1e-8 * batch.p.norm());
    }

    #[test]
    fn closed_form_action_descends(seed in any::<u64>()) {
        let pb = random_problem(seed);
        let out = sac_action(&pb.cont, &pb.policy, &pb.objective, &pb.z0, &pb.rbar, 0.02, &[]).unwrap();
        let drive = (pb.cont.b.transpose() * &out.rho0).norm();
        prop_assume!(drive > 1e-6);
        let f_nominal = pb.cont.derivative(&pb.z0, &out.nominal);
        let f_action = pb.cont.derivative(&pb.z0, &out.raw);
        prop_assert!(mode_insertion_gradient(&out.rho0, &f_nominal, &f_action) < 0.0);
    }

    #[test]
    fn clamping_touches_only_saturated_components(seed in any::<u64>(), bound in 0.05f64..3.0) {
        let pb = random_problem(seed);
        let u_max = vec![bound; pb.rbar.len()];
        let out = sac_action(&pb.cont, &pb.policy, &pb.objective, &pb.z0, &pb.rbar, 0.02, &u_max).unwrap();
        for i in 0..out.raw.len() {
            if out.raw[i].abs() <= bound {
                prop_assert_eq!(out.action[i], out.raw[i]);
            } else {
                prop_assert_eq!(out.action[i], bound.copysign(out.raw[i]));
            }
        }
        prop_assert_eq!(out.saturated, out.raw.iter().any(|v| v.abs() > bound));
    }

    #[test]
    fn arm_is_deterministic_and_passive(q in prop::array::uniform2(-3.0f64..3.0), qdot in prop::array::uniform2(-5.0f64..5.0)) {
        let p = ArmParams::default();
        let mut s = ArmState::new(q, qdot);
        for _ in 0..200 {
            let next = arm_step(&s, [0.0, 0.0], &p).unwrap();
            prop_assert_eq!(next, arm_step(&s, [0.0, 0.0], &p).unwrap());
            prop_assert!(kinetic_energy(&next, &p) <= kinetic_energy(&s, &p));
            s = next;
        }
    }

    #[test]
    fn frechet_is_bracketed_and_symmetric(seed in any::<u64>(), la in 1usize..12, lb in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = trajectory(&mut rng, la);
        let b = trajectory(&mut rng, lb);
        let d = frechet_distance(&a, &b).unwrap();
        prop_assert_eq!(d, frechet_distance(&b, &a).unwrap());
        prop_assert!(d >= dist(a[0], b[0]).max(dist(a[la - 1], b[lb - 1])));
        if la == lb {
            let lockstep = a.iter().zip(&b).map(|(x, y)| dist(*x, *y)).fold(0.0, f64::max);
            prop_assert!(d <= lockstep);
            prop_assert!(rmse(&a, &b).unwrap() <= lockstep);
        }
        prop_assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
    }
}
