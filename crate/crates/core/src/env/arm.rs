//! Planar, gravity-free two-link arm with uniform-rod links and viscous joint
//! damping, integrated with classical RK4.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Period of the figure-8 reference, seconds.
pub const FIGURE8_PERIOD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    pub l1: f64,
    pub l2: f64,
    pub m1: f64,
    pub m2: f64,
    pub damping: f64,
    /// Rotor inertia added to each joint.
    pub armature: f64,
    pub u_max: f64,
    pub dt: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        Self {
            l1: 0.1,
            l2: 0.1,
            m1: 0.05,
            m2: 0.05,
            damping: 0.05,
            armature: 0.01,
            u_max: 0.5,
            dt: 0.01,
        }
    }
}

impl ArmParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("l1", self.l1),
            ("l2", self.l2),
            ("m1", self.m1),
            ("m2", self.m2),
            ("u_max", self.u_max),
            ("dt", self.dt),
        ];
        for (name, v) in named {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("arm {name} must be positive, got {v}")));
            }
        }
        if !(self.armature >= 0.0) || !self.armature.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "arm armature must be non-negative, got {}",
                self.armature
            )));
        }
        if !(self.damping >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "arm damping must be non-negative, got {}",
                self.damping
            )));
        }
        Ok(())
    }

    /// Joint-space mass matrix `M(q)` as `[[m11, m12], [m12, m22]]`.
    pub fn mass_matrix(&self, q2: f64) -> [[f64; 2]; 2] {
        let (lc1, lc2) = (0.5 * self.l1, 0.5 * self.l2);
        let i1 = self.m1 * self.l1 * self.l1 / 12.0;
        let i2 = self.m2 * self.l2 * self.l2 / 12.0;
        let c2 = q2.cos();
        let m22 = i2 + self.m2 * lc2 * lc2;
        let m12 = m22 + self.m2 * self.l1 * lc2 * c2;
        let m11 = i1 + self.m1 * lc1 * lc1 + i2 + self.m2 * (self.l1 * self.l1 + lc2 * lc2 + 2.0 * self.l1 * lc2 * c2);
        [[m11 + self.armature, m12], [m12, m22 + self.armature]]
    }

    pub fn clamp_action(&self, u: [f64; 2]) -> [f64; 2] {
        [u[0].clamp(-self.u_max, self.u_max), u[1].clamp(-self.u_max, self.u_max)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub q: [f64; 2],
    pub qdot: [f64; 2],
}

impl ArmState {
    pub fn new(q: [f64; 2], qdot: [f64; 2]) -> Self {
        Self { q, qdot }
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        crate::error::ensure_len("arm state", 4, x.len())?;
        Ok(Self::new([x[0], x[1]], [x[2], x[3]]))
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.q[0], self.q[1], self.qdot[0], self.qdot[1]]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Joint accelerations `M^{-1} (u - c(q, qdot) - D qdot)`.
pub fn joint_acceleration(s: &ArmState, u: [f64; 2], p: &ArmParams) -> [f64; 2] {
    let [[m11, m12], [_, m22]] = p.mass_matrix(s.q[1]);
    let h = p.m2 * p.l1 * 0.5 * p.l2 * s.q[1].sin();
    let [w1, w2] = s.qdot;
    let c1 = -h * (2.0 * w1 * w2 + w2 * w2);
    let c2 = h * w1 * w1;
    let r1 = u[0] - c1 - p.damping * w1;
    let r2 = u[1] - c2 - p.damping * w2;
    let det = m11 * m22 - m12 * m12;
    [(m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det]
}

fn derivative(x: [f64; 4], u: [f64; 2], p: &ArmParams) -> [f64; 4] {
    let s = ArmState::new([x[0], x[1]], [x[2], x[3]]);
    let a = joint_acceleration(&s, u, p);
    [x[2], x[3], a[0], a[1]]
}

/// Advances the arm by one step of `p.dt` under constant torque `u`.
pub fn arm_step(s: &ArmState, u: [f64; 2], p: &ArmParams) -> Result<ArmState> {
    let h = p.dt;
    let x = s.to_array();
    let add = |a: [f64; 4], b: [f64; 4], k: f64| [a[0] + k * b[0], a[1] + k * b[1], a[2] + k * b[2], a[3] + k * b[3]];
    let k1 = derivative(x, u, p);
    let k2 = derivative(add(x, k1, 0.5 * h), u, p);
    let k3 = derivative(add(x, k2, 0.5 * h), u, p);
    let k4 = derivative(add(x, k3, h), u, p);
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let next = ArmState::new([out[0], out[1]], [out[2], out[3]]);
    if !next.is_finite() {
        return Err(Error::NonFinite {
            context: format!("arm step from {:?} with torque {:?}", s.to_array(), u),
        });
    }
    Ok(next)
}

/// Kinetic energy `0.5 qdot^T M(q) qdot`.
pub fn kinetic_energy(s: &ArmState, p: &ArmParams) -> f64 {
    let [[m11, m12], [_, m22]] = p.mass_matrix(s.q[1]);
    let [w1, w2] = s.qdot;
    0.5 * (m11 * w1 * w1 + 2.0 * m12 * w1 * w2 + m22 * w2 * w2)
}

/// Tracking reward `-100 |q_d - q| - 10 |qdot_d - qdot| - u1^2 - u2^2`.
pub fn arm_reward(s: &ArmState, u: [f64; 2], q_d: [f64; 2], qdot_d: [f64; 2]) -> f64 {
    let pos = (q_d[0] - s.q[0]).hypot(q_d[1] - s.q[1]);
    let vel = (qdot_d[0] - s.qdot[0]).hypot(qdot_d[1] - s.qdot[1]);
    -100.0 * pos - 10.0 * vel - u[0] * u[0] - u[1] * u[1]
}

/// Tip position for joint angles `q`.
pub fn forward_kinematics(q: [f64; 2], p: &ArmParams) -> [f64; 2] {
    [
        p.l1 * q[0].cos() + p.l2 * (q[0] + q[1]).cos(),
        p.l1 * q[0].sin() + p.l2 * (q[0] + q[1]).sin(),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Elbow {
    /// Positive elbow angle.
    Down,
    /// Negative elbow angle.
    Up,
}

/// Closed-form inverse kinematics.
pub fn arm_ik(tip: [f64; 2], p: &ArmParams, elbow: Elbow) -> Result<[f64; 2]> {
    let r2 = tip[0] * tip[0] + tip[1] * tip[1];
    let r = r2.sqrt();
    let tol = 1e-12 * (p.l1 + p.l2);
    if !r.is_finite() || r > p.l1 + p.l2 + tol || r < (p.l1 - p.l2).abs() - tol {
        return Err(Error::Unreachable { x: tip[0], y: tip[1] });
    }
    let c2 = ((r2 - p.l1 * p.l1 - p.l2 * p.l2) / (2.0 * p.l1 * p.l2)).clamp(-1.0, 1.0);
    let mut q2 = c2.acos();
    if elbow == Elbow::Up {
        q2 = -q2;
    }
    let q1 = tip[1].atan2(tip[0]) - (p.l2 * q2.sin()).atan2(p.l1 + p.l2 * q2.cos());
    Ok([q1, q2])
}

/// Figure-8 tip reference at time `t` for period `period`.
pub fn figure8_reference(t: f64, period: f64) -> [f64; 2] {
    [
        0.05 * (4.0 * PI * t / period).sin() + 0.1,
        0.1 * (2.0 * PI * t / period).cos(),
    ]
}

/// One sample of a joint-space reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointReference {
    pub q: [f64; 2],
    pub qdot: [f64; 2],
}

impl JointReference {
    pub fn state(&self) -> [f64; 4] {
        [self.q[0], self.q[1], self.qdot[0], self.qdot[1]]
    }
}

/// Joint reference for the figure-8 over `period` seconds sampled every
/// `dt`: inverse kinematics per sample, velocities by central differences
/// (one-sided at the ends).
pub fn reference_joint_traj(period: f64, dt: f64, p: &ArmParams) -> Result<Vec<JointReference>> {
    if !(period > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter("period and dt must be positive".into()));
    }
    let n = (period / dt).round().max(1.0) as usize;
    let q: Vec<[f64; 2]> = (0..n)
        .map(|k| arm_ik(figure8_reference(k as f64 * dt, period), p, Elbow::Down))
        .collect::<Result<_>>()?;
    let qdot = |k: usize| -> [f64; 2] {
        if n == 1 {
            return [0.0, 0.0];
        }
        let (a, b, span) = if k == 0 {
            (0, 1, dt)
        } else if k == n - 1 {
            (n - 2, n - 1, dt)
        } else {
            (k - 1, k + 1, 2.0 * dt)
        };
        [(q[b][0] - q[a][0]) / span, (q[b][1] - q[a][1]) / span]
    };
    Ok((0..n).map(|k| JointReference { q: q[k], qdot: qdot(k) }).collect())
}

/// Simple stateful wrapper used by the pipeline.
#[derive(Debug, Clone)]
pub struct ArmEnv {
    pub params: ArmParams,
    pub state: ArmState,
}

impl ArmEnv {
    pub fn new(params: ArmParams, state: ArmState) -> Self {
        Self { params, state }
    }

    /// Clamps `u` to the actuator box, steps, and returns the applied torque.
    pub fn step(&mut self, u: [f64; 2]) -> Result<[f64; 2]> {
        let applied = self.params.clamp_action(u);
        self.state = arm_step(&self.state, applied, &self.params)?;
        Ok(applied)
    }

    pub fn tip(&self) -> [f64; 2] {
        forward_kinematics(self.state.q, &self.params)
    }
}
