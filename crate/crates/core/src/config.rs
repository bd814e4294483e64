//! Run configuration in a flat sectioned `key = value` text format.
//!
//! ```text
//! # comment
//! [run]
//! controller = sac
//! seeds = 1,2,3
//! ```
//!
//! Every key has a default, so a file only lists what it changes. Overrides
//! of the form `section.key=value` are applied after the file. A bare
//! `key=value` names the `[run]` key of that name if there is one, and
//! otherwise must be unique across sections.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::control::{LqrConfig, SacConfig};
use crate::env::{ArmParams, ChainSpec, FIGURE8_PERIOD};
use crate::error::{Error, Result};
use crate::observables::BasisSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Sac,
    Lqr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// Recursive update after every step.
    Rkl,
    /// Model fixed after the initial fit.
    Kl,
}

/// How control and model updates interleave inside an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    LockStep,
    Concurrent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialDataset {
    Demo(usize),
    Random(usize),
    File(PathBuf),
}

macro_rules! text_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($name => Ok($variant),)+
                    other => Err(Error::Parse(format!(concat!("unknown ", $what, " '{}'"), other))),
                }
            }
        }
    };
}

text_enum!(ControllerKind, "controller", ControllerKind::Sac => "sac", ControllerKind::Lqr => "lqr");
text_enum!(UpdateMode, "update mode", UpdateMode::Rkl => "rkl", UpdateMode::Kl => "kl");
text_enum!(Schedule, "schedule", Schedule::LockStep => "lockstep", Schedule::Concurrent => "concurrent");

impl fmt::Display for InitialDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialDataset::Demo(n) => write!(f, "demo:{n}"),
            InitialDataset::Random(n) => write!(f, "random:{n}"),
            InitialDataset::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for InitialDataset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.trim().split_once(':').ok_or_else(|| {
            Error::Parse(format!(
                "initial dataset '{s}' must look like demo:N, random:N or file:PATH"
            ))
        })?;
        match kind.trim() {
            "demo" => Ok(InitialDataset::Demo(parse_value(arg)?)),
            "random" => Ok(InitialDataset::Random(parse_value(arg)?)),
            "file" if !arg.trim().is_empty() => Ok(InitialDataset::File(PathBuf::from(arg.trim()))),
            _ => Err(Error::Parse(format!("unknown initial dataset '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DemoConfig {
    pub kp: f64,
    pub kd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeConfig {
    pub a: DMatrix<f64>,
    pub noise_cov: DMatrix<f64>,
    pub basis: BasisSpec,
    pub checkpoints: Vec<usize>,
    pub seeds: Vec<u64>,
    pub ridge: f64,
    /// Sample count of the Monte Carlo reference for non-identity bases.
    pub oracle_samples: usize,
    pub oracle_seed: u64,
}

impl ConvergeConfig {
    pub fn chain(&self, seed: u64) -> ChainSpec {
        ChainSpec {
            a: self.a.clone(),
            noise_cov: self.noise_cov.clone(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub dims: Vec<usize>,
    pub sizes: Vec<usize>,
    /// Timed RLS updates per measurement.
    pub updates: usize,
    /// EDMD refits per measurement.
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub arm: ArmParams,
    pub basis_state: BasisSpec,
    pub basis_control: BasisSpec,
    pub controller: ControllerKind,
    pub update_mode: UpdateMode,
    pub initial: InitialDataset,
    pub episode_length: usize,
    pub seeds: Vec<u64>,
    pub ridge: f64,
    pub schedule: Schedule,
    pub period: f64,
    pub demo: DemoConfig,
    pub sac: SacConfig,
    pub lqr: LqrConfig,
    pub converge: ConvergeConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arm = ArmParams::default();
        Self {
            arm,
            basis_state: BasisSpec::Arm17,
            basis_control: BasisSpec::Identity { n_x: 2 },
            controller: ControllerKind::Sac,
            update_mode: UpdateMode::Rkl,
            initial: InitialDataset::Random(500),
            episode_length: 500,
            seeds: (0..10).collect(),
            ridge: 3.0,
            schedule: Schedule::LockStep,
            period: FIGURE8_PERIOD,
            demo: DemoConfig { kp: 1.0, kd: 0.1 },
            sac: SacConfig {
                horizon: 0.16,
                dt: arm.dt,
                rbar: vec![100.0, 100.0],
                nominal: LqrConfig {
                    weight_vel: 5.0,
                    ..LqrConfig::default()
                },
            },
            lqr: LqrConfig {
                weight_vel: 5.0,
                horizon: 0.5,
                ..LqrConfig::default()
            },
            converge: ConvergeConfig {
                a: DMatrix::from_row_slice(2, 2, &[0.8, 0.2, -0.1, 0.6]),
                noise_cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
                basis: BasisSpec::Identity { n_x: 2 },
                checkpoints: vec![1_000, 10_000, 100_000],
                seeds: (0..10).collect(),
                ridge: 0.0,
                oracle_samples: 10_000_000,
                oracle_seed: 999,
            },
            bench: BenchConfig {
                dims: vec![15, 30],
                sizes: vec![1_000, 100_000],
                updates: 2_000,
                repeats: 3,
                seed: 7,
            },
        }
    }
}

fn parse_value<T: FromStr>(s: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    s.trim()
        .parse()
        .map_err(|e| Error::Parse(format!("cannot parse '{}': {e}", s.trim())))
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    s.split(',').filter(|p| !p.trim().is_empty()).map(parse_value).collect()
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn float(v: f64) -> String {
    format!("{v:?}")
}

/// Matrix text: rows separated by `;`, entries by `,`.
fn parse_matrix(s: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = s.split(';').map(parse_list).collect::<Result<_>>()?;
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Parse(format!("matrix '{s}' has ragged or empty rows")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn render_matrix(a: &DMatrix<f64>) -> String {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| float(a[(i, j)])).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

fn render_lqr(section: &'static str, c: &LqrConfig, out: &mut Vec<(&'static str, &'static str, String)>) {
    out.push((section, "weight_pos", float(c.weight_pos)));
    out.push((section, "weight_vel", float(c.weight_vel)));
    out.push((section, "weight_obs", float(c.weight_obs)));
    out.push((section, "weight_u", float(c.weight_u)));
    out.push((section, "weight_terminal", float(c.weight_terminal)));
}

fn set_lqr(c: &mut LqrConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "weight_pos" => c.weight_pos = parse_value(value)?,
        "weight_vel" => c.weight_vel = parse_value(value)?,
        "weight_obs" => c.weight_obs = parse_value(value)?,
        "weight_u" => c.weight_u = parse_value(value)?,
        "weight_terminal" => c.weight_terminal = parse_value(value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl RunConfig {
    /// Every `(section, key, value)` of the resolved configuration.
    pub fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
        let mut out = vec![
            ("run", "controller", self.controller.to_string()),
            ("run", "update_mode", self.update_mode.to_string()),
            ("run", "initial", self.initial.to_string()),
            ("run", "episode_length", self.episode_length.to_string()),
            ("run", "seeds", join(&self.seeds)),
            ("run", "ridge", float(self.ridge)),
            ("run", "schedule", self.schedule.to_string()),
            ("run", "period", float(self.period)),
            ("arm", "l1", float(self.arm.l1)),
            ("arm", "l2", float(self.arm.l2)),
            ("arm", "m1", float(self.arm.m1)),
            ("arm", "m2", float(self.arm.m2)),
            ("arm", "damping", float(self.arm.damping)),
            ("arm", "armature", float(self.arm.armature)),
            ("arm", "u_max", float(self.arm.u_max)),
            ("arm", "dt", float(self.arm.dt)),
            ("basis", "state", self.basis_state.to_string()),
            ("basis", "control", self.basis_control.to_string()),
            ("demo", "kp", float(self.demo.kp)),
            ("demo", "kd", float(self.demo.kd)),
            ("sac", "horizon", float(self.sac.horizon)),
            ("sac", "dt", float(self.sac.dt)),
            (
                "sac",
                "rbar",
                self.sac.rbar.iter().map(|v| float(*v)).collect::<Vec<_>>().join(","),
            ),
        ];
        render_lqr("sac", &self.sac.nominal, &mut out);
        out.push(("lqr", "horizon", float(self.lqr.horizon)));
        render_lqr("lqr", &self.lqr, &mut out);
        let c = &self.converge;
        out.extend([
            ("converge", "a", render_matrix(&c.a)),
            ("converge", "noise_cov", render_matrix(&c.noise_cov)),
            ("converge", "basis", c.basis.to_string()),
            ("converge", "checkpoints", join(&c.checkpoints)),
            ("converge", "seeds", join(&c.seeds)),
            ("converge", "ridge", float(c.ridge)),
            ("converge", "oracle_samples", c.oracle_samples.to_string()),
            ("converge", "oracle_seed", c.oracle_seed.to_string()),
        ]);
        let b = &self.bench;
        out.extend([
            ("bench", "dims", join(&b.dims)),
            ("bench", "sizes", join(&b.sizes)),
            ("bench", "updates", b.updates.to_string()),
            ("bench", "repeats", b.repeats.to_string()),
            ("bench", "seed", b.seed.to_string()),
        ]);
        out
    }

    /// Canonical text of the resolved configuration; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (s, k, v) in self.entries() {
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{s}]\n"));
                section = s;
            }
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let known = match section {
            "run" => {
                match key {
                    "controller" => self.controller = value.parse()?,
                    "update_mode" => self.update_mode = value.parse()?,
                    "initial" => self.initial = value.parse()?,
                    "episode_length" => self.episode_length = parse_value(value)?,
                    "seeds" => self.seeds = parse_list(value)?,
                    "ridge" => self.ridge = parse_value(value)?,
                    "schedule" => self.schedule = value.parse()?,
                    "period" => self.period = parse_value(value)?,
                    _ => return Err(unknown(section, key)),
                }
                true
            }
            "arm" => {
                let a = &mut self.arm;
                match key {
                    "l1" => a.l1 = parse_value(value)?,
                    "l2" => a.l2 = parse_value(value)?,
                    "m1" => a.m1 = parse_value(value)?,
                    "m2" => a.m2 = parse_value(value)?,
                    "damping" => a.damping = parse_value(value)?,
                    "armature" => a.armature = parse_value(value)?,
                    "u_max" => a.u_max = parse_value(value)?,
                    "dt" => a.dt = parse_value(value)?,
                    _ => return Err(unknown(section, key)),
                }
                true
            }
            "basis" => {
                match key {
                    "state" => self.basis_state = value.parse()?,
                    "control" => self.basis_control = value.parse()?,
                    _ => return Err(unknown(section, key)),
                }
                true
            }
            "demo" => {
                match key {
                    "kp" => self.demo.kp = parse_value(value)?,
                    "kd" => self.demo.kd = parse_value(value)?,
                    _ => return Err(unknown(section, key)),
                }
                true
            }
            "sac" => match key {
                "horizon" => {
                    self.sac.horizon = parse_value(value)?;
                    self.sac.nominal.horizon = self.sac.horizon;
                    true
                }
                "dt" => {
                    self.sac.dt = parse_value(value)?;
                    self.sac.nominal.dt = self.sac.dt;
                    true
                }
                "rbar" => {
                    self.sac.rbar = parse_list(value)?;
                    true
                }
                _ => set_lqr(&mut self.sac.nominal, key, value)?,
            },
            "lqr" => match key {
                "horizon" => {
                    self.lqr.horizon = parse_value(value)?;
                    true
                }
                _ => set_lqr(&mut self.lqr, key, value)?,
            },
            "converge" => {
                let c = &mut self.converge;
                match key {
                    "a" => c.a = parse_matrix(value)?,
                    "noise_cov" => c.noise_cov = parse_matrix(value)?,
                    "basis" => c.basis = value.parse()?,
                    "checkpoints" => c.checkpoints = parse_list(value)?,
                    "seeds" => c.seeds = parse_list(value)?,
                    "ridge" => c.ridge = parse_value(value)?,
                    "oracle_samples" => c.oracle_samples = parse_value(value)?,
                    "oracle_seed" => c.oracle_seed = parse_value(value)?,
                    _ => return Err(unknown(section, key)),
                }
                true
            }
            "bench" => {
                let b = &mut self.bench;
                match key {
                    "dims" => b.dims = parse_list(value)?,
                    "sizes" => b.sizes = parse_list(value)?,
                    "updates" => b.updates = parse_value(value)?,
                    "repeats" => b.repeats = parse_value(value)?,
                    "seed" => b.seed = parse_value(value)?,
                    _ => return Err(unknown(section, key)),
                }
                true
            }
            _ => return Err(Error::Parse(format!("unknown section [{section}]"))),
        };
        if known {
            Ok(())
        } else {
            Err(unknown(section, key))
        }
    }

    /// Applies one `section.key=value` or `key=value` override.
    pub fn apply_override(&mut self, text: &str) -> Result<()> {
        let (lhs, value) = text
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("override '{text}' must look like key=value")))?;
        let lhs = lhs.trim();
        if lhs.is_empty() {
            return Err(Error::Parse(format!("override '{text}' has an empty key")));
        }
        if let Some((section, key)) = lhs.split_once('.') {
            return self.set(section.trim(), key.trim(), value);
        }
        let sections: Vec<&'static str> = self
            .entries()
            .into_iter()
            .filter(|(_, k, _)| *k == lhs)
            .map(|(s, _, _)| s)
            .collect();
        if sections.contains(&"run") {
            return self.set("run", lhs, value);
        }
        match sections.as_slice() {
            [section] => self.set(section, lhs, value),
            [] => Err(Error::Parse(format!("unknown key '{lhs}'"))),
            many => Err(Error::Parse(format!(
                "key '{lhs}' is ambiguous, qualify it with one of: {}",
                many.iter().map(|s| format!("{s}.{lhs}")).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// Parses config text on top of the defaults, then applies overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Parse(format!("line {}: unterminated section header", lineno + 1)))?;
                section = Some(name.trim().to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            let sec = section
                .as_deref()
                .ok_or_else(|| Error::Parse(format!("line {}: key outside of any section", lineno + 1)))?;
            cfg.set(sec, key.trim(), value.trim())
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        }
        for o in overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.arm.validate()?;
        if self.basis_state.n_x() != 4 {
            return Err(Error::InvalidParameter(format!(
                "arm state basis must take 4 inputs, got {}",
                self.basis_state
            )));
        }
        if self.basis_control.n_x() != 2 {
            return Err(Error::InvalidParameter(format!(
                "arm control basis must take 2 inputs, got {}",
                self.basis_control
            )));
        }
        if self.episode_length == 0 {
            return Err(Error::InvalidParameter("episode_length must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("seeds must not be empty".into()));
        }
        if !(self.ridge >= 0.0) || !(self.converge.ridge >= 0.0) {
            return Err(Error::InvalidParameter("ridge must be non-negative".into()));
        }
        if !(self.period > 0.0) {
            return Err(Error::InvalidParameter("period must be positive".into()));
        }
        match self.initial {
            InitialDataset::Demo(0) | InitialDataset::Random(0) => {
                return Err(Error::InvalidParameter(
                    "initial dataset needs at least one step".into(),
                ))
            }
            _ => {}
        }
        self.sac.validate()?;
        if self.sac.rbar.len() != 2 {
            return Err(Error::InvalidParameter(format!(
                "rbar needs one entry per arm joint, got {}",
                self.sac.rbar.len()
            )));
        }
        self.lqr.validate()?;
        if self.converge.checkpoints.is_empty() || self.converge.checkpoints.contains(&0) {
            return Err(Error::InvalidParameter("converge checkpoints must be positive".into()));
        }
        if self.converge.seeds.is_empty() {
            return Err(Error::InvalidParameter("converge seeds must not be empty".into()));
        }
        if self.converge.basis.n_x() != self.converge.a.nrows() {
            return Err(Error::InvalidParameter(
                "converge basis input size must match the chain".into(),
            ));
        }
        self.converge.chain(0).validate()?;
        if self.bench.dims.is_empty() || self.bench.sizes.is_empty() || self.bench.updates == 0 {
            return Err(Error::InvalidParameter(
                "bench needs dims, sizes and at least one update".into(),
            ));
        }
        Ok(())
    }
}

fn unknown(section: &str, key: &str) -> Error {
    Error::Parse(format!("unknown key '{key}' in section [{section}]"))
}
