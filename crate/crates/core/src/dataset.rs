//! Snapshot datasets and their CSV representation.
//!
//! A CSV file holds one or more trajectories as rows `t, x0.., u0..` sampled
//! at a uniform step. Snapshot `k` pairs row `k` (state and control) with the
//! state of row `k + 1`. A row whose time does not increase over the previous
//! row starts a new trajectory; the control on the last row of a trajectory is
//! not used.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub x_next: Vec<f64>,
    pub trajectory: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDataset {
    pub dt: f64,
    pub n_x: usize,
    pub n_u: usize,
    pub records: Vec<Snapshot>,
}

impl SnapshotDataset {
    pub fn new(dt: f64, n_x: usize, n_u: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            dt,
            n_x,
            n_u,
            records: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: Snapshot) -> Result<()> {
        ensure_len("snapshot state", self.n_x, record.x.len())?;
        ensure_len("snapshot control", self.n_u, record.u.len())?;
        ensure_len("snapshot next state", self.n_x, record.x_next.len())?;
        ensure_finite(&record.x, "snapshot state")?;
        ensure_finite(&record.u, "snapshot control")?;
        ensure_finite(&record.x_next, "snapshot next state")?;
        self.records.push(record);
        Ok(())
    }

    /// Appends a transition belonging to trajectory `id`.
    pub fn push_transition(&mut self, id: u32, x: &[f64], u: &[f64], x_next: &[f64]) -> Result<()> {
        self.push(Snapshot {
            x: x.to_vec(),
            u: u.to_vec(),
            x_next: x_next.to_vec(),
            trajectory: Some(id),
        })
    }

    /// Checks dimensions and, for records tagged with the same trajectory,
    /// that consecutive records chain (`x_next[k] == x[k + 1]`).
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        for r in &self.records {
            ensure_len("snapshot state", self.n_x, r.x.len())?;
            ensure_len("snapshot control", self.n_u, r.u.len())?;
            ensure_len("snapshot next state", self.n_x, r.x_next.len())?;
        }
        for (k, pair) in self.records.windows(2).enumerate() {
            if let (Some(a), Some(b)) = (pair[0].trajectory, pair[1].trajectory) {
                if a == b && pair[0].x_next != pair[1].x {
                    return Err(Error::InvalidParameter(format!(
                        "records {k} and {} of trajectory {a} do not chain",
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn extend(&mut self, other: &SnapshotDataset) -> Result<()> {
        ensure_len("dataset state dimension", self.n_x, other.n_x)?;
        ensure_len("dataset control dimension", self.n_u, other.n_u)?;
        self.records.extend(other.records.iter().cloned());
        Ok(())
    }

    /// Writes the dataset as CSV rows `t, x.., u..`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.n_x).map(|i| format!("x{i}")));
        header.extend((0..self.n_u).map(|i| format!("u{i}")));
        w.write_record(&header)?;

        let row = |t: f64, x: &[f64], u: &[f64]| -> Vec<String> {
            std::iter::once(t)
                .chain(x.iter().copied())
                .chain(u.iter().copied())
                .map(|v| v.to_string())
                .collect()
        };
        let mut step = 0usize;
        for (k, r) in self.records.iter().enumerate() {
            w.write_record(row(step as f64 * self.dt, &r.x, &r.u))?;
            step += 1;
            let ends_segment = match self.records.get(k + 1) {
                None => true,
                Some(next) => next.trajectory != r.trajectory || next.x != r.x_next,
            };
            if ends_segment {
                w.write_record(row(step as f64 * self.dt, &r.x_next, &r.u))?;
                step = 0;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a CSV dataset. `dt` fixes the step; irregularly spaced rows are
    /// linearly resampled onto that step first. With `dt = None` the rows
    /// must already be uniformly spaced and the step is inferred.
    pub fn read_csv<R: Read>(reader: R, dt: Option<f64>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.get(0) != Some("t") {
            return Err(Error::Parse("dataset header must start with `t`".into()));
        }
        let n_x = headers.iter().filter(|h| h.starts_with('x')).count();
        let n_u = headers.iter().filter(|h| h.starts_with('u')).count();
        ensure_len("dataset columns", 1 + n_x + n_u, headers.len())?;
        for (i, h) in headers.iter().skip(1).enumerate() {
            let expected = if i < n_x {
                format!("x{i}")
            } else {
                format!("u{}", i - n_x)
            };
            if h != expected {
                return Err(Error::Parse(format!("unexpected column `{h}`, wanted `{expected}`")));
            }
        }

        let mut segments: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut last_t = f64::NEG_INFINITY;
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("`{v}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            ensure_finite(&row, "dataset row")?;
            if row[0] <= last_t || segments.is_empty() {
                segments.push(Vec::new());
            }
            last_t = row[0];
            segments.last_mut().expect("segment pushed above").push(row);
        }
        if segments.is_empty() {
            return Err(Error::Empty("dataset file"));
        }

        let dt = match dt {
            Some(dt) => dt,
            None => infer_uniform_step(&segments)?,
        };
        let mut ds = SnapshotDataset::new(dt, n_x, n_u)?;
        for (id, seg) in segments.iter().enumerate() {
            let rows = resample_uniform(seg, dt)?;
            for pair in rows.windows(2) {
                ds.push_transition(
                    id as u32,
                    &pair[0][1..1 + n_x],
                    &pair[0][1 + n_x..],
                    &pair[1][1..1 + n_x],
                )?;
            }
        }
        if ds.is_empty() {
            return Err(Error::Empty("dataset has no consecutive row pairs"));
        }
        Ok(ds)
    }

    pub fn load_csv(path: &Path, dt: Option<f64>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, dt)
    }
}

fn infer_uniform_step(segments: &[Vec<Vec<f64>>]) -> Result<f64> {
    let steps: Vec<f64> = segments
        .iter()
        .flat_map(|s| s.windows(2).map(|w| w[1][0] - w[0][0]))
        .collect();
    let first = *steps
        .first()
        .ok_or(Error::Empty("dataset needs two rows to infer its step"))?;
    let tol = 1e-9 * first.abs().max(1.0);
    if steps.iter().any(|s| (s - first).abs() > tol) {
        return Err(Error::InvalidParameter(
            "rows are irregularly spaced; pass an explicit dt to resample".into(),
        ));
    }
    Ok(first)
}

/// Linearly interpolates rows (`t` in column 0) onto a uniform grid starting
/// at the first timestamp. Rows already on the grid are returned unchanged.
pub fn resample_uniform(rows: &[Vec<f64>], dt: f64) -> Result<Vec<Vec<f64>>> {
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let t0 = rows[0][0];
    let t_end = rows[rows.len() - 1][0];
    let tol = 1e-9 * dt;
    let on_grid = rows
        .iter()
        .enumerate()
        .all(|(k, r)| (r[0] - (t0 + k as f64 * dt)).abs() <= tol);
    if on_grid {
        return Ok(rows.to_vec());
    }
    let n = ((t_end - t0) / dt + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let t = t0 + k as f64 * dt;
        while j + 1 < rows.len() - 1 && rows[j + 1][0] < t {
            j += 1;
        }
        let (a, b) = if rows.len() == 1 {
            (&rows[0], &rows[0])
        } else {
            (&rows[j], &rows[j + 1])
        };
        let span = b[0] - a[0];
        let w = if span > 0.0 {
            ((t - a[0]) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let mut row: Vec<f64> = a.iter().zip(b).map(|(p, q)| p + w * (q - p)).collect();
        row[0] = t;
        out.push(row);
    }
    Ok(out)
}
