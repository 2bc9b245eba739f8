//! TOML run configuration.
//!
//! ```toml
//! name = "channel"
//!
//! [model]
//! kind = "blackstock"      # blackstock | kuznetsov | westervelt | linear | linearized
//! c = 1500.0
//! b = 6e-9
//! ba = 5.0
//! rho = 1000.0
//!
//! [mesh]
//! geometry = "interval"    # interval | hifu
//! length = 0.4
//! degree = 3
//! dofs = [801]
//!
//! [time]
//! t_end = 1e-4
//! steps = 800
//! scheme = "paper"         # paper | average_acceleration | chung_hulbert | custom
//!
//! [initial.psi1]
//! kind = "gaussian"        # zero | gaussian | expression
//! amplitude = 3e5
//! mu = [0.2]
//! sigma2 = 1e-4
//!
//! [boundary.left]
//! condition = "dirichlet"
//! [boundary.right]
//! condition = "dirichlet"
//!
//! [output]
//! snapshots = [2.5e-5, 5e-5, 7.5e-5, 1e-4]
//! ```
//!
//! Sides without a `[boundary.*]` table carry homogeneous Neumann data.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expr;
use crate::mesh::{
    elements_for_dofs_with_continuity, make_hifu_patch, make_interval_patch_with_continuity, BoundaryKind,
    GeometryError, HifuGeometry, Patch, Side,
};
use crate::models::{BoundarySource, LinearizedCoefficients, Model, ModelKind, ModelParams};
use crate::timestepper::{IntegratorParams, Problem, State, StepError};

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("cannot parse configuration: {0}")]
    Parse(String),

    #[error("{key}: {reason}")]
    Invalid { key: String, reason: String },

    #[error(transparent)]
    Geometry(#[from] GeometryError),

    #[error(transparent)]
    Setup(#[from] StepError),

    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid<T>(key: &str, reason: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub model: ModelSection,
    pub mesh: MeshSection,
    pub time: TimeSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub boundary: BoundarySection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_name() -> String {
    "run".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Blackstock,
    Kuznetsov,
    Westervelt,
    Linear,
    Linearized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelName,
    #[serde(default = "water_c")]
    pub c: f64,
    #[serde(default = "water_b")]
    pub b: f64,
    #[serde(default = "water_ba")]
    pub ba: f64,
    #[serde(default = "water_rho")]
    pub rho: f64,
    /// Linearized model coefficients, expressions in `x`, `y`, `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
}

fn water_c() -> f64 {
    ModelParams::water().c
}
fn water_b() -> f64 {
    ModelParams::water().b
}
fn water_ba() -> f64 {
    ModelParams::water().ba
}
fn water_rho() -> f64 {
    ModelParams::water().rho
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryName {
    Interval,
    Hifu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub geometry: GeometryName,
    pub degree: usize,
    /// Basis functions per parametric direction.
    pub dofs: Vec<usize>,
    /// Interval only; defaults to `degree - 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Gauss points per direction; defaults to `degree + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Paper,
    AverageAcceleration,
    ChungHulbert,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: f64,
    pub steps: usize,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_inf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_f: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_scheme() -> SchemeName {
    SchemeName::Paper
}
fn default_tol() -> f64 {
    IntegratorParams::DEFAULT_TOL
}
fn default_max_iters() -> usize {
    IntegratorParams::DEFAULT_MAX_ITERS
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    #[default]
    Zero,
    Gaussian,
    Expression,
}

/// `amplitude exp(-|x - mu|^2 / (2 sigma2))` or an expression in `x`, `y`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialField {
    #[serde(default)]
    pub kind: InitialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub psi0: InitialField,
    #[serde(default)]
    pub psi1: InitialField,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionName {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceName {
    #[default]
    Zero,
    Sine,
    Modulated,
    Expression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideSection {
    pub condition: ConditionName,
    #[serde(default)]
    pub source: SourceName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_dot: Option<String>,
}

impl SideSection {
    pub fn dirichlet() -> Self {
        SideSection {
            condition: ConditionName::Dirichlet,
            source: SourceName::Zero,
            amplitude: None,
            frequency: None,
            g: None,
            g_dot: None,
        }
    }

    pub fn neumann(source: SourceName, amplitude: f64, frequency: f64) -> Self {
        SideSection {
            condition: ConditionName::Neumann,
            source,
            amplitude: Some(amplitude),
            frequency: Some(frequency),
            g: None,
            g_dot: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<SideSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<SideSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bottom: Option<SideSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top: Option<SideSection>,
}

/// Straight sampling line for 2D runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSection {
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Profile sample count along an interval.
    #[serde(default = "default_sample_points")]
    pub sample_points: usize,
    /// Parametric sampling grid of a 2D patch.
    #[serde(default = "default_sample_grid")]
    pub sample_grid: [usize; 2],
    /// Snapshot times; each is rounded to the nearest step. Empty means `t_end`.
    #[serde(default)]
    pub snapshots: Vec<f64>,
    #[serde(default)]
    pub energy: bool,
    #[serde(default = "one")]
    pub energy_stride: usize,
    /// Track the largest pressure over the sampling points from this time on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_from: Option<f64>,
    /// Points whose pressure history is recorded.
    #[serde(default)]
    pub probes: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<LineSection>,
    #[serde(default = "yes")]
    pub log: bool,
}

fn default_sample_points() -> usize {
    401
}
fn default_sample_grid() -> [usize; 2] {
    [41, 61]
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            sample_points: default_sample_points(),
            sample_grid: default_sample_grid(),
            snapshots: Vec::new(),
            energy: false,
            energy_stride: 1,
            peak_from: None,
            probes: Vec::new(),
            line: None,
            log: true,
        }
    }
}

/// Everything needed to run: geometry, assembled problem and initial state.
pub struct Simulation {
    pub patch: Patch,
    pub problem: Problem,
    pub initial: State,
    pub steps: usize,
}

impl SimulationConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimulationConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn dim(&self) -> usize {
        match self.mesh.geometry {
            GeometryName::Interval => 1,
            GeometryName::Hifu => 2,
        }
    }

    pub fn dt(&self) -> f64 {
        self.time.t_end / self.time.steps as f64
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            c: self.model.c,
            b: self.model.b,
            ba: self.model.ba,
            rho: self.model.rho,
        }
    }

    /// Step indices of the requested snapshots.
    pub fn snapshot_steps(&self) -> Vec<usize> {
        if self.output.snapshots.is_empty() {
            return vec![self.time.steps];
        }
        let dt = self.dt();
        self.output
            .snapshots
            .iter()
            .map(|t| ((t / dt).round() as usize).min(self.time.steps))
            .collect()
    }

    /// Checks every value that does not need assembly.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        let positive = |key: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { invalid(key, format!("must be positive, got {v}")) };
        positive("model.c", m.c)?;
        if !(m.b >= 0.0 && m.b.is_finite()) {
            return invalid("model.b", format!("must be non-negative, got {}", m.b));
        }
        if !m.ba.is_finite() {
            return invalid("model.ba", "must be finite");
        }
        positive("model.rho", m.rho)?;
        let lin_keys = m.alpha.is_some() || m.beta.is_some() || m.f.is_some();
        if m.kind == ModelName::Linearized {
            self.linearized_coefficients()?;
        } else if lin_keys {
            return invalid("model.alpha", "alpha, beta and f apply only to kind = \"linearized\"");
        }

        let mesh = &self.mesh;
        let dim = self.dim();
        if mesh.dofs.len() != dim {
            return invalid("mesh.dofs", format!("expected {dim} entries, got {}", mesh.dofs.len()));
        }
        if mesh.degree == 0 {
            return invalid("mesh.degree", "must be at least 1");
        }
        if let Some(q) = mesh.quadrature {
            if q == 0 {
                return invalid("mesh.quadrature", "must be at least 1");
            }
        }
        match mesh.geometry {
            GeometryName::Interval => {
                positive("mesh.length", mesh.length.ok_or(()).or_else(|_| invalid("mesh.length", "required for an interval"))?)?;
                for key in ["width", "height", "center", "radius"] {
                    let set = match key {
                        "width" => mesh.width.is_some(),
                        "height" => mesh.height.is_some(),
                        "center" => mesh.center.is_some(),
                        _ => mesh.radius.is_some(),
                    };
                    if set {
                        return invalid(&format!("mesh.{key}"), "applies only to geometry = \"hifu\"");
                    }
                }
                let cont = mesh.continuity.unwrap_or(mesh.degree - 1);
                if cont >= mesh.degree {
                    return invalid("mesh.continuity", format!("must be below the degree {}", mesh.degree));
                }
                if let Err(e) = elements_for_dofs_with_continuity(mesh.dofs[0], mesh.degree, cont) {
                    return invalid("mesh.dofs", e.to_string());
                }
            }
            GeometryName::Hifu => {
                if mesh.length.is_some() {
                    return invalid("mesh.length", "applies only to geometry = \"interval\"");
                }
                if mesh.continuity.is_some_and(|c| c + 1 != mesh.degree) {
                    return invalid("mesh.continuity", "the HIFU patch uses maximal continuity");
                }
                let g = self.hifu_geometry();
                positive("mesh.width", g.width)?;
                positive("mesh.height", g.height)?;
                positive("mesh.radius", g.radius)?;
                for (d, &n) in mesh.dofs.iter().enumerate() {
                    if n <= mesh.degree {
                        return invalid("mesh.dofs", format!("direction {d}: {n} functions are too few for degree {}", mesh.degree));
                    }
                }
            }
        }

        let t = &self.time;
        if !(t.t_end >= 0.0 && t.t_end.is_finite()) {
            return invalid("time.t_end", format!("must be non-negative, got {}", t.t_end));
        }
        if t.steps == 0 {
            return invalid("time.steps", "must be at least 1");
        }
        if t.t_end == 0.0 {
            return invalid("time.t_end", "must be positive to define a time step");
        }
        if t.max_iters == 0 {
            return invalid("time.max_iters", "must be at least 1");
        }
        positive("time.tol", t.tol)?;
        match t.scheme {
            SchemeName::ChungHulbert => {
                let r = t.rho_inf.ok_or(()).or_else(|_| invalid("time.rho_inf", "required for chung_hulbert"))?;
                if !(0.0..=1.0).contains(&r) {
                    return invalid("time.rho_inf", format!("must lie in [0, 1], got {r}"));
                }
            }
            SchemeName::Custom => {
                for (key, v) in [("time.beta", t.beta), ("time.gamma", t.gamma), ("time.alpha_m", t.alpha_m), ("time.alpha_f", t.alpha_f)] {
                    if v.is_none() {
                        return invalid(key, "required for scheme = \"custom\"");
                    }
                }
            }
            _ => {}
        }
        if let Err(e) = self.integrator().validate() {
            return invalid("time", e.to_string());
        }

        for (key, f) in [("initial.psi0", &self.initial.psi0), ("initial.psi1", &self.initial.psi1)] {
            f.check(key, dim)?;
        }

        for (side, s) in self.sides() {
            let key = format!("boundary.{}", side_name(side));
            if dim == 1 && matches!(side, Side::Bottom | Side::Top) {
                return invalid(&key, "a 1D interval has only left and right ends");
            }
            if s.condition == ConditionName::Dirichlet && s.source != SourceName::Zero {
                return invalid(&format!("{key}.source"), "only homogeneous Dirichlet data is supported");
            }
            self.source_for(&key, s)?;
        }

        let o = &self.output;
        if dim == 1 && o.sample_points < 2 {
            return invalid("output.sample_points", "need at least 2 points");
        }
        if dim == 2 && o.sample_grid.iter().any(|&n| n < 2) {
            return invalid("output.sample_grid", "need at least 2 points per direction");
        }
        if o.energy_stride == 0 {
            return invalid("output.energy_stride", "must be at least 1");
        }
        for &s in &o.snapshots {
            if !(0.0..=t.t_end * (1.0 + 1e-12)).contains(&s) {
                return invalid("output.snapshots", format!("time {s} lies outside [0, t_end]"));
            }
        }
        if let Some(p) = o.peak_from {
            if !(0.0..=t.t_end).contains(&p) {
                return invalid("output.peak_from", format!("time {p} lies outside [0, t_end]"));
            }
        }
        if let Some(l) = &o.line {
            if l.points < 2 {
                return invalid("output.line.points", "need at least 2 points");
            }
        }
        Ok(())
    }

    pub fn hifu_geometry(&self) -> HifuGeometry {
        HifuGeometry {
            width: self.mesh.width.unwrap_or(0.08),
            height: self.mesh.height.unwrap_or(0.12),
            center: self.mesh.center.unwrap_or([0.04, 0.03]),
            radius: self.mesh.radius.unwrap_or(0.05),
        }
    }

    pub fn integrator(&self) -> IntegratorParams {
        let t = &self.time;
        let dt = self.dt();
        let mut ip = match t.scheme {
            SchemeName::Paper => IntegratorParams::paper(dt),
            SchemeName::AverageAcceleration => IntegratorParams::average_acceleration(dt),
            SchemeName::ChungHulbert => IntegratorParams::chung_hulbert(t.rho_inf.unwrap_or(1.0), dt),
            SchemeName::Custom => IntegratorParams {
                beta: t.beta.unwrap_or(f64::NAN),
                gamma: t.gamma.unwrap_or(f64::NAN),
                alpha_m: t.alpha_m.unwrap_or(f64::NAN),
                alpha_f: t.alpha_f.unwrap_or(f64::NAN),
                ..IntegratorParams::paper(dt)
            },
        };
        ip.tol = t.tol;
        ip.max_iters = t.max_iters;
        ip
    }

    fn linearized_coefficients(&self) -> Result<LinearizedCoefficients, ConfigError> {
        let m = &self.model;
        let alpha = m.alpha.as_deref().ok_or(()).or_else(|_| invalid("model.alpha", "required for kind = \"linearized\""))?;
        let zero = ["0".to_string(), "0".to_string()];
        let beta = m.beta.as_ref().unwrap_or(&zero);
        let f = m.f.as_deref().unwrap_or("0");
        let parse = |key: &str, s: &str| s.parse::<Expr>().or_else(|e| invalid(key, e.to_string()));
        Ok(LinearizedCoefficients::new(
            parse("model.alpha", alpha)?,
            [parse("model.beta", &beta[0])?, parse("model.beta", &beta[1])?],
            parse("model.f", f)?,
        ))
    }

    pub fn model(&self) -> Result<Model, ConfigError> {
        let kind = match self.model.kind {
            ModelName::Blackstock => ModelKind::Blackstock,
            ModelName::Kuznetsov => ModelKind::Kuznetsov,
            ModelName::Westervelt => ModelKind::Westervelt,
            ModelName::Linear => ModelKind::Linear,
            ModelName::Linearized => ModelKind::Linearized(Box::new(self.linearized_coefficients()?)),
        };
        Model::new(kind, self.model_params()).or_else(|e| invalid("model", e.to_string()))
    }

    fn sides(&self) -> Vec<(Side, &SideSection)> {
        let b = &self.boundary;
        [(Side::Left, &b.left), (Side::Right, &b.right), (Side::Bottom, &b.bottom), (Side::Top, &b.top)]
            .into_iter()
            .filter_map(|(s, v)| v.as_ref().map(|v| (s, v)))
            .collect()
    }

    fn source_for(&self, key: &str, s: &SideSection) -> Result<BoundarySource, ConfigError> {
        let need = |name: &str, v: Option<f64>| {
            v.ok_or(()).or_else(|_| invalid(&format!("{key}.{name}"), format!("required for source = {:?}", s.source)))
        };
        let src = match s.source {
            SourceName::Zero => BoundarySource::Zero,
            SourceName::Sine => BoundarySource::Sine {
                amplitude: need("amplitude", s.amplitude)?,
                frequency: need("frequency", s.frequency)?,
            },
            SourceName::Modulated => BoundarySource::Modulated {
                amplitude: need("amplitude", s.amplitude)?,
                frequency: need("frequency", s.frequency)?,
            },
            SourceName::Expression => {
                let g = s.g.as_deref().ok_or(()).or_else(|_| invalid(&format!("{key}.g"), "required for source = expression"))?;
                let g = g.parse::<Expr>().or_else(|e| invalid(&format!("{key}.g"), e.to_string()))?;
                let g_dot = match &s.g_dot {
                    Some(text) => Some(text.parse::<Expr>().or_else(|e| invalid(&format!("{key}.g_dot"), e.to_string()))?),
                    None => None,
                };
                BoundarySource::Expression { g, g_dot }
            }
        };
        if let Err(e) = src.check(self.model.b) {
            return invalid(key, e.to_string());
        }
        Ok(src)
    }

    pub fn boundary_conditions(&self) -> Result<Vec<(Side, BoundaryKind, BoundarySource)>, ConfigError> {
        self.sides()
            .into_iter()
            .map(|(side, s)| {
                let key = format!("boundary.{}", side_name(side));
                let kind = match s.condition {
                    ConditionName::Dirichlet => BoundaryKind::Dirichlet,
                    ConditionName::Neumann => BoundaryKind::Neumann,
                };
                Ok((side, kind, self.source_for(&key, s)?))
            })
            .collect()
    }

    pub fn patch(&self) -> Result<Patch, ConfigError> {
        let mesh = &self.mesh;
        let p = mesh.degree;
        Ok(match mesh.geometry {
            GeometryName::Interval => {
                let cont = mesh.continuity.unwrap_or(p - 1);
                let ne = elements_for_dofs_with_continuity(mesh.dofs[0], p, cont)?;
                make_interval_patch_with_continuity(mesh.length.unwrap_or(f64::NAN), p, cont, ne)?
            }
            GeometryName::Hifu => make_hifu_patch(&self.hifu_geometry(), [p, p], [mesh.dofs[0] - p, mesh.dofs[1] - p])?,
        })
    }

    /// Builds geometry, assembles the problem and interpolates the initial data.
    pub fn build(&self) -> Result<Simulation, ConfigError> {
        self.validate()?;
        let patch = self.patch()?;
        let bcs = self.boundary_conditions()?;
        let problem = Problem::new(&patch, self.model()?, &bcs, self.integrator(), self.mesh.quadrature)?;
        let zero_sides: Vec<Side> = bcs
            .iter()
            .filter(|(_, k, _)| *k == BoundaryKind::Dirichlet)
            .map(|(s, _, _)| *s)
            .collect();
        let field = |key: &str, f: &InitialField| -> Result<Vec<f64>, ConfigError> {
            let full = match f.kind {
                InitialKind::Zero => vec![0.0; patch.num_basis()],
                _ => {
                    let func = f.function(key)?;
                    patch.interpolate(func, &zero_sides)?
                }
            };
            Ok(problem.dofs().restrict(&full))
        };
        let psi0 = field("initial.psi0", &self.initial.psi0)?;
        let psi1 = field("initial.psi1", &self.initial.psi1)?;
        let initial = problem.initial_state(psi0, psi1)?;
        Ok(Simulation {
            patch,
            problem,
            initial,
            steps: self.time.steps,
        })
    }
}

type FieldFn = Box<dyn Fn([f64; 2]) -> f64>;

impl InitialField {
    pub fn gaussian(amplitude: f64, mu: Vec<f64>, sigma2: f64) -> Self {
        InitialField {
            kind: InitialKind::Gaussian,
            amplitude: Some(amplitude),
            mu: Some(mu),
            sigma2: Some(sigma2),
            expr: None,
        }
    }

    fn check(&self, key: &str, dim: usize) -> Result<(), ConfigError> {
        let stray = |name: &str, set: bool| if set { invalid(&format!("{key}.{name}"), format!("not used by kind = {:?}", self.kind)) } else { Ok(()) };
        match self.kind {
            InitialKind::Zero => {
                stray("amplitude", self.amplitude.is_some())?;
                stray("mu", self.mu.is_some())?;
                stray("sigma2", self.sigma2.is_some())?;
                stray("expr", self.expr.is_some())?;
            }
            InitialKind::Gaussian => {
                stray("expr", self.expr.is_some())?;
                if self.amplitude.is_none_or(|a| !a.is_finite()) {
                    return invalid(&format!("{key}.amplitude"), "required finite value for a gaussian");
                }
                match &self.mu {
                    Some(mu) if mu.len() == dim => {}
                    _ => return invalid(&format!("{key}.mu"), format!("needs {dim} coordinates")),
                }
                if self.sigma2.is_none_or(|s| !(s > 0.0)) {
                    return invalid(&format!("{key}.sigma2"), "required positive value for a gaussian");
                }
            }
            InitialKind::Expression => {
                stray("amplitude", self.amplitude.is_some())?;
                stray("mu", self.mu.is_some())?;
                stray("sigma2", self.sigma2.is_some())?;
                let e = self.expr.as_deref().ok_or(()).or_else(|_| invalid(&format!("{key}.expr"), "required for kind = expression"))?;
                let e = e.parse::<Expr>().or_else(|err| invalid(&format!("{key}.expr"), err.to_string()))?;
                if e.depends_on(crate::expr::Var::T) {
                    return invalid(&format!("{key}.expr"), "initial data cannot depend on t");
                }
            }
        }
        Ok(())
    }

    fn function(&self, key: &str) -> Result<FieldFn, ConfigError> {
        Ok(match self.kind {
            InitialKind::Zero => Box::new(|_| 0.0),
            InitialKind::Gaussian => {
                let a = self.amplitude.unwrap_or(0.0);
                let mu = self.mu.clone().unwrap_or_default();
                let two_s2 = 2.0 * self.sigma2.unwrap_or(1.0);
                Box::new(move |x| {
                    let r2: f64 = mu.iter().enumerate().map(|(d, m)| (x[d] - m).powi(2)).sum();
                    a * (-r2 / two_s2).exp()
                })
            }
            InitialKind::Expression => {
                let e: Expr = self
                    .expr
                    .as_deref()
                    .unwrap_or("0")
                    .parse()
                    .or_else(|err: crate::expr::ExprError| invalid(&format!("{key}.expr"), err.to_string()))?;
                Box::new(move |x| e.eval(x[0], x[1], 0.0))
            }
        })
    }
}

pub fn side_name(side: Side) -> &'static str {
    match side {
        Side::Left => "left",
        Side::Right => "right",
        Side::Bottom => "bottom",
        Side::Top => "top",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
kind = "blackstock"

[mesh]
geometry = "interval"
length = 0.4
degree = 2
dofs = [41]

[time]
t_end = 1e-5
steps = 10
"#;

    #[test]
    fn minimal_config_uses_water() {
        let cfg = SimulationConfig::from_toml(MINIMAL).unwrap();
        let k = cfg.model_params().k();
        assert!((k - 5.0 / 1500.0f64.powi(2)).abs() < 1e-18);
        assert!((k - 2.222e-6).abs() < 1e-9);
        assert_eq!(cfg.output.sample_points, 401);
        assert_eq!(cfg.snapshot_steps(), vec![10]);
        let sim = cfg.build().unwrap();
        assert_eq!(sim.problem.dim(), 41);
    }

    #[test]
    fn negative_damping_names_key() {
        let text = MINIMAL.replace("kind = \"blackstock\"", "kind = \"blackstock\"\nb = -1.0");
        match SimulationConfig::from_toml(&text) {
            Err(ConfigError::Invalid { key, .. }) => assert_eq!(key, "model.b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_and_missing_keys_rejected() {
        let typo = MINIMAL.replace("length = 0.4", "lenght = 0.4");
        let err = SimulationConfig::from_toml(&typo).unwrap_err().to_string();
        assert!(err.contains("lenght"), "{err}");
        let missing = MINIMAL.replace("steps = 10", "");
        let err = SimulationConfig::from_toml(&missing).unwrap_err().to_string();
        assert!(err.contains("steps"), "{err}");
        let no_length = MINIMAL.replace("length = 0.4", "");
        assert!(matches!(
            SimulationConfig::from_toml(&no_length),
            Err(ConfigError::Invalid { key, .. }) if key == "mesh.length"
        ));
    }

    #[test]
    fn round_trip() {
        let text = format!(
            "{MINIMAL}\n[initial.psi1]\nkind = \"gaussian\"\namplitude = 3e5\nmu = [0.2]\nsigma2 = 1e-4\n\n[boundary.left]\ncondition = \"dirichlet\"\n\n[boundary.right]\ncondition = \"neumann\"\nsource = \"modulated\"\namplitude = 62.8\nfrequency = 7e4\n\n[output]\nsnapshots = [5e-6, 1e-5]\nenergy = true\n"
        );
        let cfg = SimulationConfig::from_toml(&text).unwrap();
        let again = SimulationConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.snapshot_steps(), vec![5, 10]);
    }

    #[test]
    fn inconsistent_sections_rejected() {
        let neumann_missing = format!("{MINIMAL}\n[boundary.left]\ncondition = \"neumann\"\nsource = \"sine\"\namplitude = 1.0\n");
        assert!(matches!(
            SimulationConfig::from_toml(&neumann_missing),
            Err(ConfigError::Invalid { key, .. }) if key == "boundary.left.frequency"
        ));
        let top_in_1d = format!("{MINIMAL}\n[boundary.top]\ncondition = \"dirichlet\"\n");
        assert!(SimulationConfig::from_toml(&top_in_1d).is_err());
        let gauss_2d_mu = format!("{MINIMAL}\n[initial.psi1]\nkind = \"gaussian\"\namplitude = 1.0\nmu = [0.2, 0.1]\nsigma2 = 1e-4\n");
        assert!(matches!(
            SimulationConfig::from_toml(&gauss_2d_mu),
            Err(ConfigError::Invalid { key, .. }) if key == "initial.psi1.mu"
        ));
        let ch = MINIMAL.replace("steps = 10", "steps = 10\nscheme = \"chung_hulbert\"");
        assert!(matches!(
            SimulationConfig::from_toml(&ch),
            Err(ConfigError::Invalid { key, .. }) if key == "time.rho_inf"
        ));
        let lin = MINIMAL.replace("kind = \"blackstock\"", "kind = \"linearized\"\nalpha = \"2250000 *\"");
        assert!(matches!(
            SimulationConfig::from_toml(&lin),
            Err(ConfigError::Invalid { key, .. }) if key == "model.alpha"
        ));
    }

    #[test]
    fn hifu_defaults() {
        let text = r#"
[model]
kind = "westervelt"
[mesh]
geometry = "hifu"
degree = 2
dofs = [12, 16]
[time]
t_end = 1e-6
steps = 2
[boundary.bottom]
condition = "neumann"
source = "modulated"
amplitude = 20.0
frequency = 1e5
"#;
        let cfg = SimulationConfig::from_toml(text).unwrap();
        assert_eq!(cfg.hifu_geometry().center, [0.04, 0.03]);
        let sim = cfg.build().unwrap();
        assert_eq!(sim.problem.dim(), 12 * 16);
    }
}
