//! Simulated environments: the two-link arm and linear-Gaussian chains.

pub mod arm;
pub mod chain;

pub use arm::{
    arm_ik, arm_reward, arm_step, figure8_reference, forward_kinematics, kinetic_energy, reference_joint_traj, ArmEnv,
    ArmParams, ArmState, Elbow, JointReference, FIGURE8_PERIOD,
};
pub use chain::{chain_sample, spectral_radius, stationary_covariance, ChainSampler, ChainSpec};
