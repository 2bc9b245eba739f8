//! Runs one configuration and writes its CSV files, log and manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::config::{ConfigError, GeometryName, SimulationConfig};
use crate::diagnostics::{
    default_decay_window, fit_decay_rate, line_points, write_energy_csv, write_profile_csv, DiagnosticsError,
    EnergyEvaluator, EnergyTrace, FieldSample, Sampler,
};
use crate::mesh::{GeometryError, Patch};
use crate::timestepper::{State, StepError, StepReport};

#[derive(Error, Debug)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("run '{name}' stopped at step {step}: {source}")]
    Diverged {
        name: String,
        step: usize,
        #[source]
        source: StepError,
        partial: Box<RunSummary>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),

    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Largest absolute pressure seen over the sampling points.
#[derive(Clone, Debug, PartialEq)]
pub struct PeakRecord {
    pub value: f64,
    pub at: [f64; 2],
    pub t: f64,
}

/// Pressure histories at fixed points.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeTrace {
    pub points: Vec<[f64; 2]>,
    pub times: Vec<f64>,
    /// `values[k][i]`: probe `i` at `times[k]` (Pa).
    pub values: Vec<Vec<f64>>,
}

impl ProbeTrace {
    /// Largest absolute value of probe `i` at or after `from`.
    pub fn max_abs_from(&self, i: usize, from: f64) -> f64 {
        self.times
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| **t >= from)
            .fold(0.0, |m, (_, v)| m.max(v[i].abs()))
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub name: String,
    pub config: SimulationConfig,
    pub steps_done: usize,
    pub iterations: Vec<usize>,
    pub wall_time: Duration,
    /// Pressure profiles (Pa) at the snapshot times.
    pub snapshots: Vec<FieldSample>,
    /// Pressure along `output.line` at the snapshot times.
    pub line_snapshots: Vec<FieldSample>,
    pub energy: Option<EnergyTrace>,
    pub peak: Option<PeakRecord>,
    pub probes: ProbeTrace,
    pub min_speed_factor: f64,
    pub final_state: State,
    pub status: String,
}

impl RunSummary {
    pub fn mean_iterations(&self) -> f64 {
        if self.iterations.is_empty() {
            0.0
        } else {
            self.iterations.iter().sum::<usize>() as f64 / self.iterations.len() as f64
        }
    }

    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }

    pub fn final_snapshot(&self) -> Option<&FieldSample> {
        self.snapshots.last()
    }
}

/// Sampling points of the profile output.
pub fn profile_points(cfg: &SimulationConfig, patch: &Patch) -> Result<Vec<[f64; 2]>, GeometryError> {
    match cfg.mesh.geometry {
        GeometryName::Interval => Ok(line_points(
            [0.0, 0.0],
            [cfg.mesh.length.unwrap_or(0.0), 0.0],
            cfg.output.sample_points,
        )),
        GeometryName::Hifu => {
            let [nx, ny] = cfg.output.sample_grid;
            let mut pts = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    pts.push(patch.point([i as f64 / (nx - 1) as f64, j as f64 / (ny - 1) as f64])?);
                }
            }
            Ok(pts)
        }
    }
}

struct Outputs {
    dir: Option<PathBuf>,
    log: Option<BufWriter<File>>,
}

impl Outputs {
    fn new(dir: Option<&Path>, cfg: &SimulationConfig) -> Result<Self, RunError> {
        let Some(dir) = dir else {
            return Ok(Outputs { dir: None, log: None });
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let cfg_path = dir.join("config.toml");
        fs::write(&cfg_path, cfg.to_toml()).map_err(io_err(&cfg_path))?;
        let log = if cfg.output.log {
            let p = dir.join("run.log");
            let mut w = BufWriter::new(File::create(&p).map_err(io_err(&p))?);
            writeln!(w, "# step t iterations residual min_speed_factor").map_err(io_err(&p))?;
            Some(w)
        } else {
            None
        };
        Ok(Outputs {
            dir: Some(dir.to_path_buf()),
            log,
        })
    }

    fn log(&mut self, r: &StepReport) -> Result<(), RunError> {
        if let (Some(w), Some(dir)) = (&mut self.log, &self.dir) {
            writeln!(
                w,
                "{} {:.9e} {} {:.3e} {:.9}",
                r.step, r.t, r.iterations, r.residual, r.min_speed_factor
            )
            .map_err(io_err(&dir.join("run.log")))?;
        }
        Ok(())
    }
}

/// Runs `cfg`, writing outputs below `out` when given.
pub fn run_config(cfg: &SimulationConfig, out: Option<&Path>) -> Result<RunSummary, RunError> {
    let start = Instant::now();
    let sim = cfg.build()?;
    let mut outputs = Outputs::new(out, cfg)?;
    let dim = cfg.dim();
    let rho = cfg.model.rho;
    let problem = &sim.problem;
    let dofs = problem.dofs();

    let profile = Sampler::new(&sim.patch, profile_points(cfg, &sim.patch)?)?;
    let line = match &cfg.output.line {
        Some(l) => Some(Sampler::new(&sim.patch, line_points(l.from, l.to, l.points))?),
        None => None,
    };
    let probes = Sampler::new(&sim.patch, cfg.output.probes.clone())?;
    let energy_eval = if cfg.output.energy {
        Some(EnergyEvaluator::new(&sim.patch, cfg.mesh.quadrature)?)
    } else {
        None
    };
    let snapshot_steps = cfg.snapshot_steps();

    let mut summary = RunSummary {
        name: cfg.name.clone(),
        config: cfg.clone(),
        steps_done: 0,
        iterations: Vec::with_capacity(sim.steps),
        wall_time: Duration::ZERO,
        snapshots: Vec::new(),
        line_snapshots: Vec::new(),
        energy: energy_eval.as_ref().map(|_| EnergyTrace::default()),
        peak: None,
        probes: ProbeTrace {
            points: cfg.output.probes.clone(),
            ..ProbeTrace::default()
        },
        min_speed_factor: f64::INFINITY,
        final_state: sim.initial.clone(),
        status: "ok".into(),
    };

    let observe = |s: &State, summary: &mut RunSummary| {
        let need_full = snapshot_steps.contains(&s.step)
            || !probes.is_empty()
            || cfg.output.peak_from.is_some_and(|t0| s.t >= t0 - 1e-12 * cfg.time.t_end);
        let psi_dot_full = if need_full || energy_eval.is_some() {
            Some(dofs.extend(&s.psi_dot))
        } else {
            None
        };
        if let (Some(ev), Some(pd)) = (&energy_eval, &psi_dot_full) {
            if s.step.is_multiple_of(cfg.output.energy_stride) || s.step == sim.steps {
                let e = ev.laplacian_energy(&dofs.extend(&s.psi), pd);
                if let Some(tr) = summary.energy.as_mut() {
                    tr.push(s.t, e);
                }
            }
        }
        let Some(pd) = psi_dot_full else { return };
        let mut current = None;
        if cfg.output.peak_from.is_some_and(|t0| s.t >= t0 - 1e-12 * cfg.time.t_end) {
            let u = profile.sample(&pd, rho, s.t);
            for (v, p) in u.values.iter().zip(&u.points) {
                if summary.peak.as_ref().is_none_or(|pk| v.abs() > pk.value) {
                    summary.peak = Some(PeakRecord { value: v.abs(), at: *p, t: s.t });
                }
            }
            current = Some(u);
        }
        for _ in snapshot_steps.iter().filter(|&&k| k == s.step) {
            let u = current.clone().unwrap_or_else(|| profile.sample(&pd, rho, s.t));
            summary.snapshots.push(u);
            if let Some(l) = &line {
                summary.line_snapshots.push(l.sample(&pd, rho, s.t));
            }
        }
        if !probes.is_empty() {
            summary.probes.times.push(s.t);
            summary.probes.values.push(probes.eval(&pd, rho));
        }
    };

    let mut state = sim.initial.clone();
    observe(&state, &mut summary);
    let mut failure = None;
    for _ in 0..sim.steps {
        match problem.step(&state) {
            Ok((next, report)) => {
                outputs.log(&report)?;
                summary.iterations.push(report.iterations);
                summary.min_speed_factor = summary.min_speed_factor.min(report.min_speed_factor);
                state = next;
                summary.steps_done = state.step;
                observe(&state, &mut summary);
            }
            Err(e) => {
                failure = Some((state.step + 1, e));
                break;
            }
        }
    }
    summary.final_state = state;
    summary.wall_time = start.elapsed();
    if let Some((step, _)) = &failure {
        summary.status = format!("diverged at step {step}");
    }
    if let Some(dir) = &outputs.dir {
        if let Some(w) = outputs.log.as_mut() {
            w.flush().map_err(io_err(&dir.join("run.log")))?;
        }
        write_outputs(dir, dim, &summary)?;
    }
    match failure {
        None => Ok(summary),
        Some((step, source)) => Err(RunError::Diverged {
            name: cfg.name.clone(),
            step,
            source,
            partial: Box::new(summary),
        }),
    }
}

fn write_outputs(dir: &Path, dim: usize, s: &RunSummary) -> Result<(), RunError> {
    let create = |name: &str| -> Result<(PathBuf, BufWriter<File>), RunError> {
        let p = dir.join(name);
        let f = File::create(&p).map_err(io_err(&p))?;
        Ok((p, BufWriter::new(f)))
    };
    for (k, snap) in s.snapshots.iter().enumerate() {
        let (p, w) = create(&format!("profile_{k:02}.csv"))?;
        write_profile_csv(w, snap, dim).map_err(io_err(&p))?;
    }
    for (k, snap) in s.line_snapshots.iter().enumerate() {
        let (p, w) = create(&format!("line_{k:02}.csv"))?;
        write_profile_csv(w, snap, 2).map_err(io_err(&p))?;
    }
    if let Some(tr) = &s.energy {
        let (p, w) = create("energy.csv")?;
        write_energy_csv(w, tr).map_err(io_err(&p))?;
    }
    if !s.probes.points.is_empty() {
        let (p, mut w) = create("probes.csv")?;
        let mut header = String::from("t");
        for i in 0..s.probes.points.len() {
            header.push_str(&format!(",p{i}_pressure_MPa"));
        }
        writeln!(w, "{header}").map_err(io_err(&p))?;
        for (t, v) in s.probes.times.iter().zip(&s.probes.values) {
            let row: Vec<String> = v.iter().map(|x| format!("{:.9e}", x * 1e-6)).collect();
            writeln!(w, "{t:.9e},{}", row.join(",")).map_err(io_err(&p))?;
        }
    }
    let p = dir.join("manifest.txt");
    fs::write(&p, manifest(s)).map_err(io_err(&p))?;
    Ok(())
}

/// `key = value` lines describing a run, including every configuration key.
pub fn manifest(s: &RunSummary) -> String {
    let mut m = String::new();
    let mut kv = |k: &str, v: String| m.push_str(&format!("{k} = {v}\n"));
    kv("name", format!("{:?}", s.name));
    kv("code_version", format!("\"{}\"", env!("CARGO_PKG_VERSION")));
    kv("status", format!("{:?}", s.status));
    kv("wall_time_s", format!("{:.3}", s.wall_time.as_secs_f64()));
    kv("steps_done", s.steps_done.to_string());
    kv("mean_iterations", format!("{:.4}", s.mean_iterations()));
    kv("max_iterations", s.max_iterations().to_string());
    kv("min_speed_factor", format!("{:.9}", s.min_speed_factor));
    for (k, snap) in s.snapshots.iter().enumerate() {
        kv(&format!("snapshot_{k:02}_t"), format!("{:.9e}", snap.t));
    }
    if let Some(pk) = &s.peak {
        kv("peak_pressure_MPa", format!("{:.6}", pk.value * 1e-6));
        kv("peak_x", format!("{:.6}", pk.at[0]));
        kv("peak_y", format!("{:.6}", pk.at[1]));
        kv("peak_t", format!("{:.9e}", pk.t));
    }
    if let Some(tr) = &s.energy {
        if let Ok((w, r2)) = fit_decay_rate(tr, default_decay_window(tr)) {
            kv("energy_decay_rate", format!("{w:.6e}"));
            kv("energy_decay_r2", format!("{r2:.6}"));
        }
    }
    let value: toml::Value = toml::Value::try_from(&s.config).expect("configuration serializes");
    flatten("config", &value, &mut m);
    m
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut String) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                flatten(&format!("{prefix}.{k}"), v, out);
            }
        }
        other => out.push_str(&format!("{prefix} = {other}\n")),
    }
}

/// Reads a `key = value` manifest into pairs, values kept as text.
pub fn read_manifest(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().trim_matches('"').to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimulationConfig {
        SimulationConfig::from_toml(
            r#"
name = "small"
[model]
kind = "blackstock"
[mesh]
geometry = "interval"
length = 0.4
degree = 2
dofs = [101]
[time]
t_end = 2e-5
steps = 40
[initial.psi1]
kind = "gaussian"
amplitude = 3e4
mu = [0.2]
sigma2 = 1e-4
[boundary.left]
condition = "dirichlet"
[boundary.right]
condition = "dirichlet"
[output]
sample_points = 51
snapshots = [1e-5, 2e-5]
energy = true
probes = [[0.2, 0.0]]
"#,
        )
        .unwrap()
    }

    #[test]
    fn writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_config(&small(), Some(dir.path())).unwrap();
        assert_eq!(s.steps_done, 40);
        assert_eq!(s.snapshots.len(), 2);
        assert_eq!(s.energy.as_ref().unwrap().times.len(), 41);
        for f in ["profile_00.csv", "profile_01.csv", "energy.csv", "probes.csv", "run.log", "manifest.txt", "config.toml"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let log = fs::read_to_string(dir.path().join("run.log")).unwrap();
        assert_eq!(log.lines().count(), 41);
        let man = read_manifest(&fs::read_to_string(dir.path().join("manifest.txt")).unwrap());
        assert!(man.iter().any(|(k, v)| k == "config.model.kind" && v == "blackstock"));
        assert!(man.iter().any(|(k, v)| k == "status" && v == "ok"));
        let back = SimulationConfig::load(&dir.path().join("config.toml")).unwrap();
        assert_eq!(back, small());
    }

    #[test]
    fn divergence_keeps_partial_outputs() {
        let mut cfg = small();
        cfg.time.max_iters = 1;
        let dir = tempfile::tempdir().unwrap();
        match run_config(&cfg, Some(dir.path())) {
            Err(RunError::Diverged { step, partial, .. }) => {
                assert_eq!(step, 1);
                assert!(partial.status.starts_with("diverged"));
            }
            other => panic!("expected divergence, got {:?}", other.map(|s| s.steps_done)),
        }
        let man = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(man.contains("diverged at step 1"));
    }

    #[test]
    fn deterministic() {
        let a = run_config(&small(), None).unwrap();
        let b = run_config(&small(), None).unwrap();
        assert_eq!(a.final_state.psi, b.final_state.psi);
        assert_eq!(a.iterations, b.iterations);
    }
}
