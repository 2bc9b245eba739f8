use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use blackstock_core::config::{ConfigError, SimulationConfig};
use blackstock_core::diagnostics::{self, EnergyEvaluator, EnergyTrace};
use blackstock_core::experiment::{self, RunError};
use blackstock_core::presets::{self, PresetId, Scale};
use blackstock_core::quadrature::gauss_rule;
use blackstock_core::splines::KnotVector;
use blackstock_core::timestepper::State;

fn config_err(e: ConfigError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn run_err(e: RunError) -> PyErr {
    match e {
        RunError::Config(c) => config_err(c),
        RunError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A validated run configuration.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: SimulationConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: SimulationConfig::from_toml(text).map_err(config_err)?,
        })
    }

    /// Member configurations of a catalogued experiment.
    #[staticmethod]
    #[pyo3(signature = (id, scale = "desk"))]
    fn preset(id: &str, scale: &str) -> PyResult<Vec<PyConfig>> {
        let id: PresetId = id.parse().map_err(PyValueError::new_err)?;
        let scale: Scale = scale.parse().map_err(PyValueError::new_err)?;
        Ok(presets::expand(id, scale).into_iter().map(|inner| PyConfig { inner }).collect())
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    /// Nonlinearity coefficient `B/A / c^2`.
    #[getter]
    fn k(&self) -> f64 {
        self.inner.model_params().k()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    fn __repr__(&self) -> String {
        format!("Config(name={:?}, model={:?})", self.inner.name, self.inner.model.kind)
    }
}

/// An assembled problem advanced one step at a time.
#[pyclass(name = "Simulation", unsendable)]
struct PySimulation {
    config: SimulationConfig,
    sim: blackstock_core::config::Simulation,
    state: State,
    energy: Option<EnergyEvaluator>,
}

#[pymethods]
impl PySimulation {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        let sim = config.inner.build().map_err(config_err)?;
        let energy = EnergyEvaluator::new(&sim.patch, config.inner.mesh.quadrature).ok();
        Ok(PySimulation {
            config: config.inner.clone(),
            state: sim.initial.clone(),
            sim,
            energy,
        })
    }

    #[getter]
    fn time(&self) -> f64 {
        self.state.t
    }

    #[getter]
    fn step_index(&self) -> usize {
        self.state.step
    }

    #[getter]
    fn num_dofs(&self) -> usize {
        self.sim.problem.dim()
    }

    /// Advances one step and returns its report.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let (next, r) = self.sim.problem.step(&self.state).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        self.state = next;
        let d = PyDict::new(py);
        d.set_item("step", r.step)?;
        d.set_item("t", r.t)?;
        d.set_item("iterations", r.iterations)?;
        d.set_item("residual", r.residual)?;
        d.set_item("min_speed_factor", r.min_speed_factor)?;
        Ok(d)
    }

    /// Advances `steps` steps; returns the iteration count of each.
    fn run(&mut self, steps: usize) -> PyResult<Vec<usize>> {
        let mut its = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (next, r) = self.sim.problem.step(&self.state).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
            self.state = next;
            its.push(r.iterations);
        }
        Ok(its)
    }

    /// Acoustic pressure (Pa) at physical points `[(x, y), ...]`.
    fn pressure(&self, points: Vec<(f64, f64)>) -> PyResult<Vec<f64>> {
        let pts: Vec<[f64; 2]> = points.into_iter().map(|(x, y)| [x, y]).collect();
        let full = self.sim.problem.dofs().extend(&self.state.psi_dot);
        diagnostics::pressure(&self.sim.patch, &full, self.config.model.rho, &pts).map_err(value_err)
    }

    /// `|lap psi|^2 + |grad psi_t|^2`; needs a C^1 basis of degree >= 2.
    fn energy(&self) -> PyResult<f64> {
        let ev = self
            .energy
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("energy needs a C^1 basis of degree >= 2"))?;
        let dofs = self.sim.problem.dofs();
        Ok(ev.laplacian_energy(&dofs.extend(&self.state.psi), &dofs.extend(&self.state.psi_dot)))
    }

    /// Coefficients of `psi` in full numbering.
    fn psi(&self) -> Vec<f64> {
        self.sim.problem.dofs().extend(&self.state.psi)
    }

    /// Coefficients of `psi_t` in full numbering.
    fn psi_dot(&self) -> Vec<f64> {
        self.sim.problem.dofs().extend(&self.state.psi_dot)
    }
}

fn summary_dict<'py>(py: Python<'py>, s: &experiment::RunSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("name", &s.name)?;
    d.set_item("status", &s.status)?;
    d.set_item("steps", s.steps_done)?;
    d.set_item("mean_iterations", s.mean_iterations())?;
    d.set_item("iterations", s.iterations.clone())?;
    d.set_item("wall_time", s.wall_time.as_secs_f64())?;
    let snaps: Vec<(f64, Vec<(f64, f64)>, Vec<f64>)> = s
        .snapshots
        .iter()
        .map(|f| (f.t, f.points.iter().map(|p| (p[0], p[1])).collect(), f.values.clone()))
        .collect();
    d.set_item("snapshots", snaps)?;
    if let Some(tr) = &s.energy {
        d.set_item("energy", (tr.times.clone(), tr.values.clone()))?;
    }
    if let Some(pk) = &s.peak {
        d.set_item("peak", (pk.value, (pk.at[0], pk.at[1]), pk.t))?;
    }
    Ok(d)
}

/// Runs a configuration; outputs are written below `out` when given.
#[pyfunction]
#[pyo3(signature = (config, out = None))]
fn run_config<'py>(py: Python<'py>, config: &PyConfig, out: Option<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
    let s = experiment::run_config(&config.inner, out.as_deref()).map_err(run_err)?;
    summary_dict(py, &s)
}

/// Runs a catalogued experiment and returns its metrics.
#[pyfunction]
#[pyo3(signature = (id, scale = "desk", out = None, threads = None))]
fn run_preset<'py>(
    py: Python<'py>,
    id: &str,
    scale: &str,
    out: Option<PathBuf>,
    threads: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let id: PresetId = id.parse().map_err(PyValueError::new_err)?;
    let scale: Scale = scale.parse().map_err(PyValueError::new_err)?;
    let r = presets::run_preset(id, scale, out.as_deref(), threads).map_err(run_err)?;
    let d = PyDict::new(py);
    for (k, v) in &r.metrics {
        d.set_item(k, v)?;
    }
    Ok(d)
}

/// Nonzero B-spline values at `x`: `(first_index, values)`.
#[pyfunction]
fn bspline_basis(knots: Vec<f64>, degree: usize, x: f64) -> PyResult<(usize, Vec<f64>)> {
    let kv = KnotVector::new(knots, degree).map_err(value_err)?;
    let b = kv.eval_basis(x).map_err(value_err)?;
    Ok((b.first, b.values))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[pyfunction]
fn gauss_legendre(n: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let r = gauss_rule(n).map_err(value_err)?;
    Ok((r.nodes.iter().map(|p| p[0]).collect(), r.weights))
}

/// Least-squares rate `omega` of `E ~ exp(-omega t)` and the fit's `r^2`.
#[pyfunction]
#[pyo3(signature = (times, values, window = None))]
fn fit_decay_rate(times: Vec<f64>, values: Vec<f64>, window: Option<(f64, f64)>) -> PyResult<(f64, f64)> {
    if times.len() != values.len() {
        return Err(PyValueError::new_err("times and values differ in length"));
    }
    let tr = EnergyTrace { times, values };
    let w = window.unwrap_or_else(|| diagnostics::default_decay_window(&tr));
    diagnostics::fit_decay_rate(&tr, w).map_err(value_err)
}

#[pymodule]
fn blackstock(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_preset, m)?)?;
    m.add_function(wrap_pyfunction!(bspline_basis, m)?)?;
    m.add_function(wrap_pyfunction!(gauss_legendre, m)?)?;
    m.add_function(wrap_pyfunction!(fit_decay_rate, m)?)?;
    m.add("PRESETS", PresetId::ALL.iter().map(|p| p.name()).collect::<Vec<_>>())?;
    Ok(())
}
