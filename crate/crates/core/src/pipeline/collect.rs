//! Initial datasets for the arm: uniformly random torques or a PD
//! demonstration along the figure-8.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DemoConfig, InitialDataset};
use crate::dataset::SnapshotDataset;
use crate::env::{reference_joint_traj, ArmEnv, ArmParams, ArmState, JointReference};
use crate::error::Result;

/// Training start state: joints uniform in `[-0.1, 0.1]` rad, velocities
/// uniform in `[-0.005, 0.005]` rad/s.
pub fn sample_training_start(rng: &mut impl Rng) -> ArmState {
    ArmState::new(
        [rng.random_range(-0.1..=0.1), rng.random_range(-0.1..=0.1)],
        [rng.random_range(-0.005..=0.005), rng.random_range(-0.005..=0.005)],
    )
}

/// PD torque toward a joint reference, clamped to the actuator box.
pub fn pd_action(state: &ArmState, target: &JointReference, gains: &DemoConfig, p: &ArmParams) -> [f64; 2] {
    let u = [
        gains.kp * (target.q[0] - state.q[0]) + gains.kd * (target.qdot[0] - state.qdot[0]),
        gains.kp * (target.q[1] - state.q[1]) + gains.kd * (target.qdot[1] - state.qdot[1]),
    ];
    p.clamp_action(u)
}

/// Builds the initial dataset for one seed. Demonstrations follow the
/// figure-8 joint reference periodically.
pub fn collect_initial(
    arm: &ArmParams,
    initial: &InitialDataset,
    demo: &DemoConfig,
    period: f64,
    seed: u64,
) -> Result<SnapshotDataset> {
    arm.validate()?;
    let steps = match initial {
        InitialDataset::File(path) => {
            let ds = SnapshotDataset::load_csv(path, Some(arm.dt))?;
            crate::error::ensure_len("initial dataset state size", 4, ds.n_x)?;
            crate::error::ensure_len("initial dataset control size", 2, ds.n_u)?;
            return Ok(ds);
        }
        InitialDataset::Demo(n) | InitialDataset::Random(n) => *n,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = ArmEnv::new(*arm, sample_training_start(&mut rng));
    let mut ds = SnapshotDataset::new(arm.dt, 4, 2)?;
    ds.records.reserve(steps);
    let reference = match initial {
        InitialDataset::Demo(_) => reference_joint_traj(period, arm.dt, arm)?,
        _ => Vec::new(),
    };
    for k in 0..steps {
        let x = env.state.to_array();
        let u = if reference.is_empty() {
            [
                rng.random_range(-arm.u_max..=arm.u_max),
                rng.random_range(-arm.u_max..=arm.u_max),
            ]
        } else {
            pd_action(&env.state, &reference[k % reference.len()], demo, arm)
        };
        let applied = env.step(u)?;
        ds.push_transition(0, &x, &applied, &env.state.to_array())?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::forward_kinematics;
    use crate::pipeline::metrics::rmse;

    fn tracking_rmse(ds: &SnapshotDataset, arm: &ArmParams) -> f64 {
        let reference = reference_joint_traj(5.0, arm.dt, arm).unwrap();
        let actual: Vec<[f64; 2]> = ds
            .records
            .iter()
            .map(|r| forward_kinematics([r.x_next[0], r.x_next[1]], arm))
            .collect();
        let target: Vec<[f64; 2]> = (0..ds.len())
            .map(|k| forward_kinematics(reference[(k + 1) % reference.len()].q, arm))
            .collect();
        rmse(&actual, &target).unwrap()
    }

    #[test]
    fn random_dataset_is_reproducible_and_bounded() {
        let arm = ArmParams::default();
        let demo = DemoConfig { kp: 1.0, kd: 0.1 };
        let a = collect_initial(&arm, &InitialDataset::Random(500), &demo, 5.0, 3).unwrap();
        let b = collect_initial(&arm, &InitialDataset::Random(500), &demo, 5.0, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
        assert!(a.validate().is_ok());
        assert!(a.records.iter().all(|r| r.u.iter().all(|u| u.abs() <= arm.u_max)));
        assert_ne!(
            a,
            collect_initial(&arm, &InitialDataset::Random(500), &demo, 5.0, 4).unwrap()
        );
    }

    #[test]
    fn demonstration_tracks_better_than_random() {
        let arm = ArmParams::default();
        let demo = DemoConfig { kp: 1.0, kd: 0.1 };
        let d = collect_initial(&arm, &InitialDataset::Demo(500), &demo, 5.0, 1).unwrap();
        let r = collect_initial(&arm, &InitialDataset::Random(500), &demo, 5.0, 1).unwrap();
        assert!(d.records.iter().all(|s| s.u.iter().all(|u| u.abs() <= arm.u_max)));
        assert!(tracking_rmse(&d, &arm) < tracking_rmse(&r, &arm));
    }

    #[test]
    fn file_dataset_round_trips() {
        let arm = ArmParams::default();
        let demo = DemoConfig { kp: 1.0, kd: 0.1 };
        let a = collect_initial(&arm, &InitialDataset::Random(50), &demo, 5.0, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("init.csv");
        a.save_csv(&path).unwrap();
        let b = collect_initial(&arm, &InitialDataset::File(path), &demo, 5.0, 0).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.x, y.x);
            assert_eq!(x.u, y.u);
            assert_eq!(x.x_next, y.x_next);
        }
    }
}
