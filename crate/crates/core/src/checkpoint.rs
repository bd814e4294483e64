//! Plain-text model checkpoints.
//!
//! Layout (one item per line, `\n` separated):
//!
//! ```text
//! rkl-checkpoint 1
//! basis_state <basis spec>
//! basis_control <basis spec>
//! n_z <int>
//! n_g <int>
//! dt <float>
//! sample_count <int>
//! update_count <int>
//! config_lines <m>
//! <m lines of embedded run config, verbatim>
//! K
//! <n rows of n space-separated floats>
//! P
//! <n rows of n space-separated floats>
//! ```
//!
//! with `n = n_z + n_g`. Floats use Rust's shortest round-trip formatting, so
//! reading a checkpoint back reproduces every value bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::edmd::KoopmanModel;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "rkl-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: KoopmanModel,
    pub update_count: usize,
    pub config: String,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(s, "basis_state {}", m.basis_state);
        let _ = writeln!(s, "basis_control {}", m.basis_control);
        let _ = writeln!(s, "n_z {}", m.n_z);
        let _ = writeln!(s, "n_g {}", m.n_g);
        let _ = writeln!(s, "dt {:?}", m.dt);
        let _ = writeln!(s, "sample_count {}", m.sample_count);
        let _ = writeln!(s, "update_count {}", self.update_count);
        let config_lines: Vec<&str> = if self.config.is_empty() {
            Vec::new()
        } else {
            self.config.lines().collect()
        };
        let _ = writeln!(s, "config_lines {}", config_lines.len());
        for line in config_lines {
            let _ = writeln!(s, "{line}");
        }
        write_matrix(&mut s, "K", &m.k);
        write_matrix(&mut s, "P", &m.p);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("checkpoint truncated before {what}")))
        };

        let header = next("header")?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| Error::Parse("not a checkpoint file".into()))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
        }
        let basis_state = field(next("basis_state")?, "basis_state")?.parse()?;
        let basis_control = field(next("basis_control")?, "basis_control")?.parse()?;
        let n_z: usize = parse_num(field(next("n_z")?, "n_z")?)?;
        let n_g: usize = parse_num(field(next("n_g")?, "n_g")?)?;
        let dt: f64 = parse_num(field(next("dt")?, "dt")?)?;
        let sample_count: usize = parse_num(field(next("sample_count")?, "sample_count")?)?;
        let update_count: usize = parse_num(field(next("update_count")?, "update_count")?)?;
        let config_lines: usize = parse_num(field(next("config_lines")?, "config_lines")?)?;
        let mut config = String::new();
        for _ in 0..config_lines {
            config.push_str(next("config")?);
            config.push('\n');
        }
        let n = n_z + n_g;
        let k = read_matrix(&mut next, "K", n)?;
        let p = read_matrix(&mut next, "P", n)?;
        Ok(Self {
            model: KoopmanModel {
                k,
                p,
                n_z,
                n_g,
                basis_state,
                basis_control,
                dt,
                sample_count,
            },
            update_count,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn field<'a>(line: &'a str, name: &str) -> Result<&'a str> {
    line.strip_prefix(name)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::Parse(format!("expected `{name}`, found `{line}`")))
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e| Error::Parse(format!("`{s}`: {e}")))
}

fn write_matrix(s: &mut String, tag: &str, m: &DMatrix<f64>) {
    let _ = writeln!(s, "{tag}");
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
}

fn read_matrix<'a>(next: &mut impl FnMut(&str) -> Result<&'a str>, tag: &str, n: usize) -> Result<DMatrix<f64>> {
    let line = next(tag)?;
    if line.trim() != tag {
        return Err(Error::Parse(format!("expected `{tag}`, found `{line}`")));
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let row: Vec<f64> = next(tag)?.split_whitespace().map(parse_num).collect::<Result<_>>()?;
        if row.len() != n {
            return Err(Error::DimensionMismatch {
                context: "checkpoint matrix row",
                expected: n,
                got: row.len(),
            });
        }
        for (j, v) in row.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}
