//! Equation variants and their state-dependent right-hand sides.
//!
//! Every model is advanced with the same effective mass matrix built from the
//! linear damped wave operator. What differs is the lagged right-hand side:
//!
//! * Blackstock: `-T(w) u + N(w) u`.
//! * Kuznetsov: `(1 - k psi_t) psi_tt` moves `k int R_p R_q w_h` to the right
//!   side as a mass correction, plus `2 int R_p grad u . grad w`.
//! * Westervelt: mass correction with factor `(B/A + 2) / c^2`.
//! * Linear: no state-dependent terms.
//! * Linearized: variable wave speed `alpha`, advection `beta . grad psi_t`
//!   and a source `f`, all given as expressions over `(x, y, t)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{AssemblyError, NonlinearTerms};
use crate::expr::{Expr, ExprError, Var};
use crate::linalg::{CsrMatrix, LinalgError, LuFactorization};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("coefficient '{name}': {source}")]
    Coefficient {
        name: String,
        #[source]
        source: ExprError,
    },

    #[error("boundary source needs g_dot because the diffusivity b is non-zero")]
    MissingFluxDerivative,

    #[error(transparent)]
    Assembly(#[from] AssemblyError),

    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Physical constants of the medium (SI units).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Speed of sound (m/s).
    pub c: f64,
    /// Sound diffusivity (m^2/s).
    pub b: f64,
    /// Parameter of nonlinearity B/A.
    pub ba: f64,
    /// Mass density (kg/m^3).
    pub rho: f64,
}

impl ModelParams {
    pub fn water() -> Self {
        ModelParams {
            c: 1500.0,
            b: 6e-9,
            ba: 5.0,
            rho: 1000.0,
        }
    }

    /// `k = (B/A) / c^2` in s^2/m^2.
    pub fn k(&self) -> f64 {
        self.ba / (self.c * self.c)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |name, value, reason| Err(ModelError::InvalidParameter { name, value, reason });
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("c", self.c, "must be positive");
        }
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return bad("b", self.b, "must be non-negative");
        }
        if !self.ba.is_finite() {
            return bad("ba", self.ba, "must be finite");
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho", self.rho, "must be positive");
        }
        Ok(())
    }
}

/// Coefficients of `psi_tt - alpha lap psi - b lap psi_t = beta . grad psi_t + f`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedCoefficients {
    pub alpha: Expr,
    pub beta: [Expr; 2],
    pub f: Expr,
    grad_alpha: [Expr; 2],
}

impl LinearizedCoefficients {
    pub fn new(alpha: Expr, beta: [Expr; 2], f: Expr) -> Self {
        let grad_alpha = [alpha.derivative(Var::X), alpha.derivative(Var::Y)];
        LinearizedCoefficients {
            alpha,
            beta,
            f,
            grad_alpha,
        }
    }

    pub fn parse(alpha: &str, beta: [&str; 2], f: &str) -> Result<Self, ModelError> {
        let p = |name: &str, s: &str| {
            Expr::parse(s).map_err(|source| ModelError::Coefficient {
                name: name.to_string(),
                source,
            })
        };
        Ok(Self::new(
            p("alpha", alpha)?,
            [p("beta_x", beta[0])?, p("beta_y", beta[1])?],
            p("f", f)?,
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    Blackstock,
    Kuznetsov,
    Westervelt,
    /// Strongly damped linear wave equation.
    Linear,
    Linearized(Box<LinearizedCoefficients>),
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Blackstock => "blackstock",
            ModelKind::Kuznetsov => "kuznetsov",
            ModelKind::Westervelt => "westervelt",
            ModelKind::Linear => "linear",
            ModelKind::Linearized(_) => "linearized",
        }
    }

    /// Whether the right-hand side depends on the state.
    pub fn is_nonlinear(&self) -> bool {
        matches!(self, ModelKind::Blackstock | ModelKind::Kuznetsov | ModelKind::Westervelt)
    }

    /// Factor of the mass correction `factor int R_p R_q psi_t`.
    pub fn mass_factor(&self, params: &ModelParams) -> Option<f64> {
        let c2 = params.c * params.c;
        match self {
            ModelKind::Kuznetsov => Some(params.ba / c2),
            ModelKind::Westervelt => Some((params.ba + 2.0) / c2),
            _ => None,
        }
    }

    /// Whether the Neumann flux couples to `psi_t` through `c^2 k g psi_t`.
    pub fn has_boundary_nonlinearity(&self) -> bool {
        matches!(self, ModelKind::Blackstock)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub params: ModelParams,
}

impl Model {
    pub fn new(kind: ModelKind, params: ModelParams) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(Model { kind, params })
    }
}

/// State-dependent part of the semi-discrete system, in constrained numbering.
#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearRhs {
    pub rhs: Vec<f64>,
    /// Matrix whose product with the current acceleration is added to the
    /// right-hand side.
    pub mass_correction: Option<CsrMatrix>,
}

/// Right-hand side contributions for the given displacement, velocity and time.
pub fn nonlinear_rhs(
    model: &Model,
    ctx: &NonlinearTerms,
    psi: &[f64],
    psi_dot: &[f64],
    t: f64,
) -> Result<NonlinearRhs, ModelError> {
    let n = ctx.dim();
    let mass_correction = match model.kind.mass_factor(&model.params) {
        Some(f) if f != 0.0 => Some(ctx.weighted_mass(f, psi_dot)?),
        _ => None,
    };
    let rhs = match &model.kind {
        ModelKind::Blackstock => ctx.blackstock_rhs(psi_dot, psi, 1.0)?,
        ModelKind::Kuznetsov => ctx.gradient_product(psi_dot, psi)?,
        ModelKind::Westervelt | ModelKind::Linear => {
            if psi.len() != n || psi_dot.len() != n {
                return Err(AssemblyError::DimensionMismatch {
                    expected: n,
                    found: psi.len().min(psi_dot.len()),
                }
                .into());
            }
            vec![0.0; n]
        }
        ModelKind::Linearized(co) => linearized_rhs(co, model.params.c, ctx, psi, psi_dot, t)?,
    };
    Ok(NonlinearRhs { rhs, mass_correction })
}

/// Weak form relative to the constant-coefficient operator:
/// `-int (alpha - c^2) grad R_p . grad psi - int R_p grad alpha . grad psi
///  + int R_p beta . grad psi_t + int R_p f`.
fn linearized_rhs(
    co: &LinearizedCoefficients,
    c: f64,
    ctx: &NonlinearTerms,
    psi: &[f64],
    psi_dot: &[f64],
    t: f64,
) -> Result<Vec<f64>, ModelError> {
    let n = ctx.dim();
    for v in [psi, psi_dot] {
        if v.len() != n {
            return Err(AssemblyError::DimensionMismatch { expected: n, found: v.len() }.into());
        }
    }
    let u = ctx.dofs.extend(psi);
    let w = ctx.dofs.extend(psi_dot);
    let c2 = c * c;
    let y = ctx.cache.integrate(|qp| {
        let [x, yy] = qp.x;
        let gu = qp.grad(&u);
        let gw = qp.grad(&w);
        let alpha = co.alpha.eval(x, yy, t);
        let ga = [co.grad_alpha[0].eval(x, yy, t), co.grad_alpha[1].eval(x, yy, t)];
        let beta = [co.beta[0].eval(x, yy, t), co.beta[1].eval(x, yy, t)];
        let s = -(ga[0] * gu[0] + ga[1] * gu[1]) + beta[0] * gw[0] + beta[1] * gw[1] + co.f.eval(x, yy, t);
        let d = -(alpha - c2);
        (s, [d * gu[0], d * gu[1]])
    });
    Ok(ctx.dofs.restrict(&y))
}

/// Consistent initial acceleration:
/// `(M - M_corr) a = -C psi1 - K psi0 + rhs(psi0, psi1, 0) + forcing`.
pub fn initial_acceleration(
    model: &Model,
    m: &CsrMatrix,
    k: &CsrMatrix,
    c: &CsrMatrix,
    ctx: &NonlinearTerms,
    psi0: &[f64],
    psi1: &[f64],
    forcing: Option<&[f64]>,
) -> Result<Vec<f64>, ModelError> {
    let nl = nonlinear_rhs(model, ctx, psi0, psi1, 0.0)?;
    let mut rhs = nl.rhs;
    k.matvec_add(-1.0, psi0, &mut rhs)?;
    c.matvec_add(-1.0, psi1, &mut rhs)?;
    if let Some(f) = forcing {
        for (r, v) in rhs.iter_mut().zip(f) {
            *r += v;
        }
    }
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(rhs);
    }
    let lhs = match &nl.mass_correction {
        Some(mc) => CsrMatrix::linear_combination(&[(1.0, m), (-1.0, mc)])?,
        None => m.clone(),
    };
    Ok(LuFactorization::new(&lhs)?.solve(&rhs)?)
}

/// Time-dependent Neumann flux `g(x, t)`.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundarySource {
    Zero,
    /// `g0 sin(2 pi f t)`.
    Sine { amplitude: f64, frequency: f64 },
    /// `g0 sin(w t)` for one period, then `g0 sin(w t) (1 + sin(w t / 4))`.
    Modulated { amplitude: f64, frequency: f64 },
    Expression { g: Expr, g_dot: Option<Expr> },
}

impl BoundarySource {
    pub fn g(&self, x: [f64; 2], t: f64) -> f64 {
        match self {
            BoundarySource::Zero => 0.0,
            BoundarySource::Sine { amplitude, frequency } => {
                amplitude * (2.0 * std::f64::consts::PI * frequency * t).sin()
            }
            BoundarySource::Modulated { amplitude, frequency } => {
                let w = 2.0 * std::f64::consts::PI * frequency;
                let s = (w * t).sin();
                if t > 2.0 * std::f64::consts::PI / w {
                    amplitude * s * (1.0 + (w * t / 4.0).sin())
                } else {
                    amplitude * s
                }
            }
            BoundarySource::Expression { g, .. } => g.eval(x[0], x[1], t),
        }
    }

    pub fn g_dot(&self, x: [f64; 2], t: f64) -> Result<f64, ModelError> {
        Ok(match self {
            BoundarySource::Zero => 0.0,
            BoundarySource::Sine { amplitude, frequency } => {
                let w = 2.0 * std::f64::consts::PI * frequency;
                amplitude * w * (w * t).cos()
            }
            BoundarySource::Modulated { amplitude, frequency } => {
                let w = 2.0 * std::f64::consts::PI * frequency;
                let (s, co) = (w * t).sin_cos();
                if t > 2.0 * std::f64::consts::PI / w {
                    let (sq, cq) = (w * t / 4.0).sin_cos();
                    amplitude * (w * co * (1.0 + sq) + s * 0.25 * w * cq)
                } else {
                    amplitude * w * co
                }
            }
            BoundarySource::Expression { g_dot, .. } => match g_dot {
                Some(e) => e.eval(x[0], x[1], t),
                None => return Err(ModelError::MissingFluxDerivative),
            },
        })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, BoundarySource::Zero)
    }

    /// Fails when `g_dot` is needed (`b != 0`) but not available.
    pub fn check(&self, b: f64) -> Result<(), ModelError> {
        if b != 0.0 {
            if let BoundarySource::Expression { g_dot: None, .. } = self {
                return Err(ModelError::MissingFluxDerivative);
            }
        }
        Ok(())
    }
}
