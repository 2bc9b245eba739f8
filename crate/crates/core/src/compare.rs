//! Snapshot-by-snapshot comparison of two run directories.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::diagnostics::{profile_error, read_profile_csv, DiagnosticsError, FieldSample};
use crate::experiment::{io_err, RunError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    MaxAbs,
    L2,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max_abs" => Ok(Metric::MaxAbs),
            "l2" => Ok(Metric::L2),
            _ => Err(format!("unknown metric '{s}', expected max_abs or l2")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::MaxAbs => "max_abs",
            Metric::L2 => "l2",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub snapshot: usize,
    pub file: String,
    /// Error in MPa under the chosen metric.
    pub error_mpa: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub metric: Metric,
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("snapshot,file,{}_error_MPa\n", self.metric);
        for r in &self.rows {
            s.push_str(&format!("{},{},{:.9e}\n", r.snapshot, r.file, r.error_mpa));
        }
        s
    }

    pub fn max_error(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.error_mpa))
    }
}

fn profiles(dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("profile_") && n.ends_with(".csv"))
        })
        .collect();
    v.sort();
    Ok(v)
}

fn load(path: &Path) -> Result<FieldSample, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    read_profile_csv(&text).map_err(|e| RunError::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

/// Piecewise-linear resampling of a 1D profile onto new abscissae.
pub fn resample_1d(sample: &FieldSample, points: &[[f64; 2]]) -> Result<FieldSample, DiagnosticsError> {
    let xs: Vec<f64> = sample.points.iter().map(|p| p[0]).collect();
    if xs.len() < 2 || sample.points.iter().any(|p| p[1] != 0.0) {
        return Err(DiagnosticsError::GridMismatch(sample.points.len(), points.len()));
    }
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    let mut values = Vec::with_capacity(points.len());
    for p in points {
        let x = p[0];
        if p[1] != 0.0 || x < lo - 1e-12 || x > hi + 1e-12 {
            return Err(DiagnosticsError::GridMismatch(sample.points.len(), points.len()));
        }
        let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
        let s = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
        values.push(sample.values[i - 1] * (1.0 - s) + sample.values[i] * s);
    }
    Ok(FieldSample {
        t: sample.t,
        points: points.to_vec(),
        values,
    })
}

/// Compares `profile_*.csv` files pairwise. With `resample`, 1D profiles of
/// `b` are interpolated onto the points of `a` when the grids differ.
pub fn compare_runs(a: &Path, b: &Path, metric: Metric, resample: bool) -> Result<CompareReport, RunError> {
    let (pa, pb) = (profiles(a)?, profiles(b)?);
    if pa.is_empty() || pa.len() != pb.len() {
        return Err(DiagnosticsError::GridMismatch(pa.len(), pb.len()).into());
    }
    let mut rows = Vec::new();
    for (k, (fa, fb)) in pa.iter().zip(&pb).enumerate() {
        let sa = load(fa)?;
        let mut sb = load(fb)?;
        if resample && sa.points != sb.points {
            sb = resample_1d(&sb, &sa.points)?;
        }
        let (max, l2) = profile_error(&sa, &sb)?;
        rows.push(CompareRow {
            snapshot: k,
            file: fa.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string(),
            error_mpa: match metric {
                Metric::MaxAbs => max,
                Metric::L2 => l2,
            } * 1e-6,
        });
    }
    Ok(CompareReport { metric, rows })
}
