//! Closed-loop figure-8 tracking episodes on the arm: fit on the initial
//! dataset, then act and (in recursive mode) update after every step.

use std::sync::mpsc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::collect::collect_initial;
use super::metrics::{frechet_distance, rmse, time_lag};
use crate::config::{ControllerKind, RunConfig, Schedule, UpdateMode};
use crate::control::{
    lqr_nominal, sac_action, to_continuous, LiftLayout, LqrConfig, Policy, QuadraticCost, TrackingObjective,
};
use crate::edmd::{gram_wellposedness, spd_inverse, KoopmanModel, Wellposedness};
use crate::env::{forward_kinematics, reference_joint_traj, ArmEnv, ArmState};
use crate::error::{Error, Result};
use crate::observables::Basis;
use crate::rls::{ModelHandle, RlsState};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Steps between well-posedness diagnostics during an episode.
const DIAGNOSTIC_EVERY: usize = 50;

/// Wall-clock seconds per stage. Not reproducible, kept apart from the
/// rest of the report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTiming {
    pub collect: f64,
    pub fit: f64,
    pub control: f64,
    pub update: f64,
    pub env: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticPoint {
    pub step: usize,
    pub samples: usize,
    pub wellposedness: Wellposedness,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub crate_version: &'static str,
    pub seed: u64,
    pub controller: ControllerKind,
    pub update_mode: UpdateMode,
    pub schedule: Schedule,
    pub initial: String,
    pub steps: usize,
    pub rmse: f64,
    pub time_lag: f64,
    pub frechet: f64,
    pub saturation_rate: f64,
    /// Steps where the Riccati solve failed and the previous gain was reused.
    pub riccati_fallbacks: usize,
    pub initial_samples: usize,
    /// Recursive updates folded into the model used at each step.
    pub model_updates: Vec<usize>,
    pub diagnostics: Vec<DiagnosticPoint>,
    pub tip: Vec<[f64; 2]>,
    pub reference_tip: Vec<[f64; 2]>,
    pub joints: Vec<[f64; 4]>,
    pub actions: Vec<[f64; 2]>,
    pub config: String,
    pub timing: StageTiming,
}

impl EvalReport {
    /// JSON text; wall-clock fields are included only on request.
    pub fn to_json(&self, with_timing: bool) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if !with_timing {
            if let Some(map) = v.as_object_mut() {
                map.remove("timing");
            }
        }
        serde_json::to_string_pretty(&v).expect("report serializes")
    }

    /// Per-step CSV: tip, reference tip, joint state and applied torque.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("step,tip_x,tip_y,ref_x,ref_y,q1,q2,qdot1,qdot2,u1,u2,model_updates\n");
        for k in 0..self.steps {
            let t = self.tip[k];
            let r = self.reference_tip[k];
            let j = self.joints[k];
            let u = self.actions[k];
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}\n",
                k, t[0], t[1], r[0], r[1], j[0], j[1], j[2], j[3], u[0], u[1], self.model_updates[k]
            ));
        }
        out
    }
}

/// Lifted figure-8 reference with the per-step targets used by the
/// controllers.
pub struct LiftedReference {
    pub states: Vec<[f64; 4]>,
    pub lifted: Vec<DVector<f64>>,
}

impl LiftedReference {
    pub fn new(cfg: &RunConfig, basis: &Basis) -> Result<Self> {
        let joints = reference_joint_traj(cfg.period, cfg.arm.dt, &cfg.arm)?;
        let states: Vec<[f64; 4]> = joints.iter().map(|j| j.state()).collect();
        let lifted = states
            .iter()
            .map(|s| basis.lift(s).map(DVector::from_vec))
            .collect::<Result<_>>()?;
        Ok(Self { states, lifted })
    }

    /// Reference index `i`, held at the last sample.
    pub fn index(&self, i: usize) -> usize {
        i.min(self.states.len() - 1)
    }
}

/// Lift layout of the arm state basis: two positions, two velocities, and
/// whatever constant features the basis has.
pub fn arm_layout(basis: &Basis) -> LiftLayout {
    LiftLayout {
        n_pos: 2,
        n_vel: 2,
        constant: basis.constant_features(),
    }
}

pub struct Decision {
    pub action: [f64; 2],
    pub saturated: bool,
}

/// Controller state carried across steps: Riccati warm start and the last
/// good policy.
pub struct ArmController {
    kind: ControllerKind,
    sac_weights: QuadraticCost,
    lqr_weights: QuadraticCost,
    rbar: Vec<f64>,
    sac_steps: usize,
    sac_dt: f64,
    dt: f64,
    u_max: [f64; 2],
    warm: Option<DMatrix<f64>>,
    last_gain: Option<DMatrix<f64>>,
    pub riccati_fallbacks: usize,
}

impl ArmController {
    pub fn new(cfg: &RunConfig, basis: &Basis, n_u: usize) -> Self {
        let layout = arm_layout(basis);
        let weights = |c: &LqrConfig| QuadraticCost::from_config(c, basis.n_z(), n_u, &layout);
        Self {
            kind: cfg.controller,
            sac_weights: weights(&cfg.sac.nominal),
            lqr_weights: weights(&cfg.lqr),
            rbar: cfg.sac.rbar.clone(),
            sac_steps: cfg.sac.steps(),
            sac_dt: cfg.sac.dt,
            dt: cfg.arm.dt,
            u_max: [cfg.arm.u_max; 2],
            warm: None,
            last_gain: None,
            riccati_fallbacks: 0,
        }
    }

    fn policy(
        &mut self,
        cont: &crate::control::ContinuousKoopman,
        weights: &QuadraticCost,
        z_ref: &DVector<f64>,
    ) -> Result<Policy> {
        let u_ref = DVector::zeros(cont.n_u());
        match lqr_nominal(cont, weights, self.dt, z_ref, &u_ref, self.warm.as_ref()) {
            Ok(p) => {
                self.warm = p.riccati.clone();
                self.last_gain = Some(p.gain.clone());
                Ok(p)
            }
            Err(e @ Error::RiccatiDiverged { .. }) => match &self.last_gain {
                Some(g) => {
                    self.riccati_fallbacks += 1;
                    Ok(Policy::from_gain(g.clone(), z_ref.clone(), u_ref))
                }
                None => Err(e),
            },
            Err(e) => Err(e),
        }
    }

    /// Action at lifted state `z` on step `k` of the reference.
    pub fn act(
        &mut self,
        model: &KoopmanModel,
        z: &DVector<f64>,
        k: usize,
        reference: &LiftedReference,
    ) -> Result<Decision> {
        let cont = to_continuous(model);
        let setpoint = &reference.lifted[reference.index(k + 1)];
        match self.kind {
            ControllerKind::Lqr => {
                let weights = self.lqr_weights.clone();
                let policy = self.policy(&cont, &weights, setpoint)?;
                let u = policy.eval(z);
                if !u.iter().all(|v| v.is_finite()) {
                    return Err(Error::Divergence {
                        stage: "lqr action",
                        step: k,
                    });
                }
                let clamped = [
                    u[0].clamp(-self.u_max[0], self.u_max[0]),
                    u[1].clamp(-self.u_max[1], self.u_max[1]),
                ];
                Ok(Decision {
                    saturated: clamped[0] != u[0] || clamped[1] != u[1],
                    action: clamped,
                })
            }
            ControllerKind::Sac => {
                let weights = self.sac_weights.clone();
                let policy = self.policy(&cont, &weights, setpoint)?;
                let running = (0..self.sac_steps)
                    .map(|j| reference.lifted[reference.index(k + 1 + j)].clone())
                    .collect();
                let terminal = reference.lifted[reference.index(k + self.sac_steps)].clone();
                let objective = TrackingObjective::new(&weights, running, terminal, DVector::zeros(cont.n_u()))?;
                let out = sac_action(&cont, &policy, &objective, z, &self.rbar, self.sac_dt, &self.u_max)?;
                Ok(Decision {
                    action: [out.action[0], out.action[1]],
                    saturated: out.saturated,
                })
            }
        }
    }
}

fn diagnostic(step: usize, model: &KoopmanModel) -> DiagnosticPoint {
    let wellposedness = match spd_inverse(&model.p) {
        Ok(gram) => gram_wellposedness(&gram),
        Err(_) => Wellposedness {
            rank: 0,
            dim: model.dim(),
            condition_number: f64::INFINITY,
            full_rank: false,
        },
    };
    DiagnosticPoint {
        step,
        samples: model.sample_count,
        wellposedness,
    }
}

struct Trace {
    tip: Vec<[f64; 2]>,
    reference_tip: Vec<[f64; 2]>,
    joints: Vec<[f64; 4]>,
    actions: Vec<[f64; 2]>,
    model_updates: Vec<usize>,
    saturated: usize,
    diagnostics: Vec<DiagnosticPoint>,
}

impl Trace {
    fn new(n: usize) -> Self {
        Self {
            tip: Vec::with_capacity(n),
            reference_tip: Vec::with_capacity(n),
            joints: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            model_updates: Vec::with_capacity(n),
            saturated: 0,
            diagnostics: Vec::new(),
        }
    }
}

/// Runs one tracking episode for `seed`.
pub fn run_episode(cfg: &RunConfig, seed: u64) -> Result<EvalReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut timing = StageTiming::default();

    let t = Instant::now();
    let ds = collect_initial(&cfg.arm, &cfg.initial, &cfg.demo, cfg.period, seed)?;
    timing.collect = t.elapsed().as_secs_f64();

    let basis_x = Basis::new(cfg.basis_state.clone())?;
    let basis_u = Basis::new(cfg.basis_control.clone())?;
    let t = Instant::now();
    let model = KoopmanModel::fit(&ds, &basis_x, &basis_u, cfg.ridge)?;
    timing.fit = t.elapsed().as_secs_f64();

    let reference = LiftedReference::new(cfg, &basis_x)?;
    let mut controller = ArmController::new(cfg, &basis_x, 2);
    let mut env = ArmEnv::new(cfg.arm, ArmState::from_slice(&reference.states[0])?);
    let mut trace = Trace::new(cfg.episode_length);
    trace.diagnostics.push(diagnostic(0, &model));

    match (cfg.update_mode, cfg.schedule) {
        (UpdateMode::Rkl, Schedule::Concurrent) => run_concurrent(
            cfg,
            model,
            &basis_x,
            &reference,
            &mut controller,
            &mut env,
            &mut trace,
            &mut timing,
        )?,
        _ => run_lockstep(
            cfg,
            model,
            &basis_x,
            &reference,
            &mut controller,
            &mut env,
            &mut trace,
            &mut timing,
        )?,
    }

    let steps = trace.tip.len();
    let report = EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION"),
        seed,
        controller: cfg.controller,
        update_mode: cfg.update_mode,
        schedule: cfg.schedule,
        initial: cfg.initial.to_string(),
        steps,
        rmse: rmse(&trace.tip, &trace.reference_tip)?,
        time_lag: if steps >= 16 {
            time_lag(&trace.tip, &trace.reference_tip, cfg.arm.dt).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        },
        frechet: frechet_distance(&trace.tip, &trace.reference_tip)?,
        saturation_rate: trace.saturated as f64 / steps as f64,
        riccati_fallbacks: controller.riccati_fallbacks,
        initial_samples: ds.len(),
        model_updates: trace.model_updates,
        diagnostics: trace.diagnostics,
        tip: trace.tip,
        reference_tip: trace.reference_tip,
        joints: trace.joints,
        actions: trace.actions,
        config: cfg.to_text(),
        timing: StageTiming {
            total: started.elapsed().as_secs_f64(),
            ..timing
        },
    };
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn record(
    trace: &mut Trace,
    env: &ArmEnv,
    cfg: &RunConfig,
    reference: &LiftedReference,
    k: usize,
    action: [f64; 2],
    saturated: bool,
    updates: usize,
) {
    let target = reference.states[reference.index(k + 1)];
    trace.tip.push(env.tip());
    trace
        .reference_tip
        .push(forward_kinematics([target[0], target[1]], &cfg.arm));
    trace.joints.push(env.state.to_array());
    trace.actions.push(action);
    trace.model_updates.push(updates);
    if saturated {
        trace.saturated += 1;
    }
}

#[allow(clippy::too_many_arguments)]
fn run_lockstep(
    cfg: &RunConfig,
    model: KoopmanModel,
    basis_x: &Basis,
    reference: &LiftedReference,
    controller: &mut ArmController,
    env: &mut ArmEnv,
    trace: &mut Trace,
    timing: &mut StageTiming,
) -> Result<()> {
    let mut rls = RlsState::new(model)?;
    for k in 0..cfg.episode_length {
        let x = env.state.to_array();
        let z = DVector::from_vec(basis_x.lift(&x)?);
        let t = Instant::now();
        let decision = controller.act(&rls.model, &z, k, reference)?;
        timing.control += t.elapsed().as_secs_f64();
        let updates = rls.update_count;
        let t = Instant::now();
        let applied = env
            .step(decision.action)
            .map_err(|_| Error::Divergence { stage: "arm", step: k })?;
        timing.env += t.elapsed().as_secs_f64();
        record(trace, env, cfg, reference, k, applied, decision.saturated, updates);
        if cfg.update_mode == UpdateMode::Rkl {
            let t = Instant::now();
            rls.update(&x, &applied, &env.state.to_array())?;
            timing.update += t.elapsed().as_secs_f64();
        }
        if (k + 1) % DIAGNOSTIC_EVERY == 0 {
            trace.diagnostics.push(diagnostic(k + 1, &rls.model));
        }
    }
    Ok(())
}

/// Updates run on a separate thread that publishes whole model snapshots;
/// the controller always acts on the latest published model.
#[allow(clippy::too_many_arguments)]
fn run_concurrent(
    cfg: &RunConfig,
    model: KoopmanModel,
    basis_x: &Basis,
    reference: &LiftedReference,
    controller: &mut ArmController,
    env: &mut ArmEnv,
    trace: &mut Trace,
    timing: &mut StageTiming,
) -> Result<()> {
    let handle = ModelHandle::new(model.clone());
    let base_samples = model.sample_count;
    let (tx, rx) = mpsc::channel::<([f64; 4], [f64; 2], [f64; 4])>();
    std::thread::scope(|scope| -> Result<()> {
        let publisher = handle.clone();
        let updater = scope.spawn(move || -> Result<f64> {
            let mut rls = RlsState::new(model)?;
            let mut busy = 0.0;
            for (x, u, x_next) in rx {
                let t = Instant::now();
                rls.update(&x, &u, &x_next)?;
                publisher.publish(rls.model.clone());
                busy += t.elapsed().as_secs_f64();
            }
            Ok(busy)
        });
        let mut outcome = Ok(());
        for k in 0..cfg.episode_length {
            let snapshot = handle.snapshot();
            let x = env.state.to_array();
            let step = (|| -> Result<()> {
                let z = DVector::from_vec(basis_x.lift(&x)?);
                let t = Instant::now();
                let decision = controller.act(&snapshot, &z, k, reference)?;
                timing.control += t.elapsed().as_secs_f64();
                let t = Instant::now();
                let applied = env
                    .step(decision.action)
                    .map_err(|_| Error::Divergence { stage: "arm", step: k })?;
                timing.env += t.elapsed().as_secs_f64();
                record(
                    trace,
                    env,
                    cfg,
                    reference,
                    k,
                    applied,
                    decision.saturated,
                    snapshot.sample_count - base_samples,
                );
                // A closed channel means the updater failed; its error is
                // reported after the join below.
                let _ = tx.send((x, applied, env.state.to_array()));
                if (k + 1) % DIAGNOSTIC_EVERY == 0 {
                    trace.diagnostics.push(diagnostic(k + 1, &snapshot));
                }
                Ok(())
            })();
            if step.is_err() {
                outcome = step;
                break;
            }
        }
        drop(tx);
        let busy = updater
            .join()
            .map_err(|_| Error::Degenerate("model updater panicked".into()))??;
        timing.update = busy;
        outcome
    })
}

/// Mean and standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub rmse: Stat,
    pub time_lag: Stat,
    pub frechet: Stat,
    pub saturation_rate: Stat,
}

impl Summary {
    pub fn of(reports: &[EvalReport]) -> Self {
        let pick = |f: fn(&EvalReport) -> f64| Stat::of(&reports.iter().map(f).collect::<Vec<_>>());
        Self {
            seeds: reports.iter().map(|r| r.seed).collect(),
            rmse: pick(|r| r.rmse),
            time_lag: pick(|r| r.time_lag),
            frechet: pick(|r| r.frechet),
            saturation_rate: pick(|r| r.saturation_rate),
        }
    }
}

/// Runs every configured seed, in parallel when the feature is enabled.
pub fn run_seeds(cfg: &RunConfig) -> Result<Vec<EvalReport>> {
    crate::par::map(&cfg.seeds, |&seed| run_episode(cfg, seed))
        .into_iter()
        .collect()
}
