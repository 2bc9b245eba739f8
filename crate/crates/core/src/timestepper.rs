//! Generalized-alpha time integration with a fixed-point corrector on the
//! acceleration.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{
    assemble_constant_matrices, assemble_neumann_rhs, AssemblyError, BoundaryCache, DofMap, NeumannValues,
    NonlinearTerms, QuadCache, SystemMatrices,
};
use crate::linalg::{norm2, CsrMatrix, LinalgError};
use crate::mesh::{BoundaryKind, Patch, Side};
use crate::models::{initial_acceleration, nonlinear_rhs, BoundarySource, Model, ModelError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum StepError {
    #[error("invalid integrator parameters: {0}")]
    InvalidParams(String),

    #[error("fixed-point iteration did not converge in step {step} after {} iterations (last change {:e})", history.len(), history.last().copied().unwrap_or(f64::NAN))]
    Diverged { step: usize, history: Vec<f64> },

    #[error("non-finite acceleration in step {step}")]
    NonFinite { step: usize },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<StepError>,
    },

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Assembly(#[from] AssemblyError),

    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorParams {
    pub beta: f64,
    pub gamma: f64,
    pub alpha_m: f64,
    pub alpha_f: f64,
    /// Time step (s).
    pub dt: f64,
    /// Relative tolerance on the change of the acceleration iterate.
    pub tol: f64,
    pub max_iters: usize,
}

impl IntegratorParams {
    pub const DEFAULT_TOL: f64 = 1e-8;
    pub const DEFAULT_MAX_ITERS: usize = 100;

    /// `(beta, gamma) = (0.45, 0.75)`, `(alpha_m, alpha_f) = (1/2, 1/3)`.
    pub fn paper(dt: f64) -> Self {
        IntegratorParams {
            beta: 0.45,
            gamma: 0.75,
            alpha_m: 0.5,
            alpha_f: 1.0 / 3.0,
            dt,
            tol: Self::DEFAULT_TOL,
            max_iters: Self::DEFAULT_MAX_ITERS,
        }
    }

    /// Trapezoidal Newmark rule.
    pub fn average_acceleration(dt: f64) -> Self {
        IntegratorParams {
            beta: 0.25,
            gamma: 0.5,
            alpha_m: 0.0,
            alpha_f: 0.0,
            ..Self::paper(dt)
        }
    }

    /// Second-order parameters with spectral radius `rho_inf` at infinite
    /// frequency (Chung and Hulbert).
    pub fn chung_hulbert(rho_inf: f64, dt: f64) -> Self {
        let alpha_m = (2.0 * rho_inf - 1.0) / (rho_inf + 1.0);
        let alpha_f = rho_inf / (rho_inf + 1.0);
        let gamma = 0.5 - alpha_m + alpha_f;
        IntegratorParams {
            beta: 0.25 * (1.0 - alpha_m + alpha_f).powi(2),
            gamma,
            alpha_m,
            alpha_f,
            ..Self::paper(dt)
        }
    }

    pub fn validate(&self) -> Result<(), StepError> {
        let fail = |m: String| Err(StepError::InvalidParams(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.tol > 0.0) {
            return fail(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.beta > 0.0 && self.gamma > 0.0) {
            return fail("beta and gamma must be positive".into());
        }
        for (name, a) in [("alpha_m", self.alpha_m), ("alpha_f", self.alpha_f)] {
            if !(0.0..1.0).contains(&a) {
                return fail(format!("{name} must lie in [0, 1), got {a}"));
            }
        }
        if self.max_iters == 0 {
            return fail("max_iters must be at least 1".into());
        }
        Ok(())
    }
}

/// Coefficient vectors at one time level (constrained numbering).
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub psi: Vec<f64>,
    pub psi_dot: Vec<f64>,
    pub psi_ddot: Vec<f64>,
    pub t: f64,
    pub step: usize,
}

impl State {
    pub fn zeros(n: usize) -> Self {
        State {
            psi: vec![0.0; n],
            psi_dot: vec![0.0; n],
            psi_ddot: vec![0.0; n],
            t: 0.0,
            step: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.psi.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub t: f64,
    /// Number of linear solves with the effective mass matrix.
    pub iterations: usize,
    pub residual: f64,
    /// Smallest `1 + k psi_t` over the quadrature points of the new state.
    pub min_speed_factor: f64,
    pub wall_time: Duration,
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Newmark predictors for displacement and velocity.
pub fn predict(state: &State, ip: &IntegratorParams) -> (Vec<f64>, Vec<f64>) {
    let dt = ip.dt;
    let c2 = 0.5 * dt * dt * (1.0 - 2.0 * ip.beta);
    let cv = (1.0 - ip.gamma) * dt;
    let mut psi = state.psi.clone();
    let mut psi_dot = state.psi_dot.clone();
    for i in 0..psi.len() {
        psi[i] += dt * state.psi_dot[i] + c2 * state.psi_ddot[i];
        psi_dot[i] += cv * state.psi_ddot[i];
    }
    (psi, psi_dot)
}

fn blend(w_new: f64, new: &[f64], old: &[f64]) -> Vec<f64> {
    new.iter().zip(old).map(|(a, b)| w_new * a + (1.0 - w_new) * b).collect()
}

/// `P = -a_m M acc_n - K((1-a_f) psi_pred + a_f psi_n) - C((1-a_f) vel_pred + a_f vel_n)`.
pub fn build_alpha_rhs(
    state: &State,
    psi_pred: &[f64],
    psi_dot_pred: &[f64],
    m: &CsrMatrix,
    k: &CsrMatrix,
    c: &CsrMatrix,
    ip: &IntegratorParams,
) -> Result<Vec<f64>, StepError> {
    let n = m.dim();
    for v in [psi_pred, psi_dot_pred, &state.psi, &state.psi_dot, &state.psi_ddot] {
        if v.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                found: v.len(),
            }
            .into());
        }
    }
    let wf = 1.0 - ip.alpha_f;
    let mut p = vec![0.0; n];
    m.matvec_add(-ip.alpha_m, &state.psi_ddot, &mut p)?;
    k.matvec_add(-1.0, &blend(wf, psi_pred, &state.psi), &mut p)?;
    c.matvec_add(-1.0, &blend(wf, psi_dot_pred, &state.psi_dot), &mut p)?;
    Ok(p)
}

/// Neumann flux on one side of the patch.
#[derive(Clone, Debug)]
pub struct NeumannTerm {
    pub boundary: BoundaryCache,
    pub source: BoundarySource,
}

/// Everything needed to advance a discretized problem in time.
#[derive(Clone, Debug)]
pub struct Problem {
    pub model: Model,
    pub sys: SystemMatrices,
    pub ctx: NonlinearTerms,
    pub neumann: Vec<NeumannTerm>,
    pub ip: IntegratorParams,
}

impl Problem {
    /// Assemble the system on `patch`. Sides not listed are homogeneous Neumann.
    pub fn new(
        patch: &Patch,
        model: Model,
        boundary: &[(Side, BoundaryKind, BoundarySource)],
        ip: IntegratorParams,
        quad_nodes: Option<usize>,
    ) -> Result<Self, StepError> {
        ip.validate()?;
        model.params.validate()?;
        let nodes = quad_nodes.unwrap_or(patch.max_degree() + 1);
        let cache = QuadCache::new(patch, nodes, 1)?;
        let kinds: Vec<(Side, BoundaryKind)> = boundary.iter().map(|(s, k, _)| (*s, *k)).collect();
        let dofs = DofMap::from_regions(patch, &kinds)?;
        let cm = assemble_constant_matrices(&cache, model.params.c, model.params.b)?;
        let sys = SystemMatrices::new(&cm, dofs.clone(), &ip)?;
        let mut neumann = Vec::new();
        for (side, kind, source) in boundary {
            if *kind == BoundaryKind::Neumann && !source.is_zero() {
                source.check(model.params.b)?;
                neumann.push(NeumannTerm {
                    boundary: BoundaryCache::new(patch, *side, nodes)?,
                    source: source.clone(),
                });
            }
        }
        let ctx = NonlinearTerms::new(cache, dofs, model.params.c, model.params.k());
        Ok(Problem {
            model,
            sys,
            ctx,
            neumann,
            ip,
        })
    }

    pub fn dim(&self) -> usize {
        self.sys.dim()
    }

    pub fn dofs(&self) -> &DofMap {
        &self.sys.dofs
    }

    /// Boundary forcing `F + B(psi_dot)` at time `t`; `None` without Neumann data.
    pub fn forcing(&self, t: f64, psi_dot: &[f64]) -> Result<Option<Vec<f64>>, StepError> {
        if self.neumann.is_empty() {
            return Ok(None);
        }
        let p = &self.model.params;
        let coupled = self.model.kind.has_boundary_nonlinearity();
        let mut total = vec![0.0; self.dim()];
        for term in &self.neumann {
            // surface the missing-derivative error before evaluating
            term.source.g_dot([0.0; 2], t).or_else(|e| if p.b == 0.0 { Ok(0.0) } else { Err(e) })?;
            let g = |x: [f64; 2]| term.source.g(x, t);
            let g_dot = |x: [f64; 2]| term.source.g_dot(x, t).unwrap_or(0.0);
            let v = assemble_neumann_rhs(
                &term.boundary,
                self.dofs(),
                p.c,
                p.b,
                p.k(),
                &NeumannValues { g: &g, g_dot: &g_dot },
                coupled.then_some(psi_dot),
            )?;
            axpy(1.0, &v, &mut total);
        }
        Ok(Some(total))
    }

    /// Initial state with the consistent acceleration.
    pub fn initial_state(&self, psi0: Vec<f64>, psi1: Vec<f64>) -> Result<State, StepError> {
        let forcing = self.forcing(0.0, &psi1)?;
        let acc = initial_acceleration(
            &self.model,
            &self.sys.m,
            &self.sys.k,
            &self.sys.c,
            &self.ctx,
            &psi0,
            &psi1,
            forcing.as_deref(),
        )?;
        Ok(State {
            psi: psi0,
            psi_dot: psi1,
            psi_ddot: acc,
            t: 0.0,
            step: 0,
        })
    }

    pub fn step(&self, state: &State) -> Result<(State, StepReport), StepError> {
        fixed_point_step(state, self)
    }

    /// Advance `steps` times, calling `observer` with the initial state and
    /// after every step.
    pub fn run<F>(&self, initial: State, steps: usize, mut observer: F) -> Result<State, StepError>
    where
        F: FnMut(&State, Option<&StepReport>),
    {
        observer(&initial, None);
        let mut state = initial;
        for _ in 0..steps {
            let (next, report) = self.step(&state).map_err(|e| match e {
                e @ StepError::Diverged { .. } => e,
                other => StepError::AtStep {
                    step: state.step + 1,
                    source: Box::new(other),
                },
            })?;
            observer(&next, Some(&report));
            state = next;
        }
        Ok(state)
    }
}

/// One predictor/multi-corrector step.
pub fn fixed_point_step(state: &State, problem: &Problem) -> Result<(State, StepReport), StepError> {
    let start = Instant::now();
    let ip = &problem.ip;
    let sys = &problem.sys;
    let step = state.step + 1;
    let dt = ip.dt;
    let (psi_pred, psi_dot_pred) = predict(state, ip);
    let p = build_alpha_rhs(state, &psi_pred, &psi_dot_pred, &sys.m, &sys.k, &sys.c, ip)?;
    let t_mid = state.t + (1.0 - ip.alpha_f) * dt;
    let wf = 1.0 - ip.alpha_f;
    let wm = 1.0 - ip.alpha_m;

    let mut acc = state.psi_ddot.clone();
    let mut psi = psi_pred.clone();
    let mut psi_dot = psi_dot_pred.clone();
    let mut history = Vec::new();
    loop {
        let psi_mid = blend(wf, &psi, &state.psi);
        let psi_dot_mid = blend(wf, &psi_dot, &state.psi_dot);
        let nl = nonlinear_rhs(&problem.model, &problem.ctx, &psi_mid, &psi_dot_mid, t_mid)?;
        let mut rhs = p.clone();
        axpy(1.0, &nl.rhs, &mut rhs);
        if let Some(mc) = &nl.mass_correction {
            mc.matvec_add(1.0, &blend(wm, &acc, &state.psi_ddot), &mut rhs)?;
        }
        if let Some(f) = problem.forcing(t_mid, &psi_dot_mid)? {
            axpy(1.0, &f, &mut rhs);
        }
        let next = sys.m_bar_lu.solve(&rhs)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(StepError::NonFinite { step });
        }
        let diff: Vec<f64> = next.iter().zip(&acc).map(|(a, b)| a - b).collect();
        let dn = norm2(&diff);
        let nn = norm2(&next);
        let res = if nn < 1e-30 { dn } else { dn / nn };
        history.push(res);
        acc = next;
        psi = psi_pred.clone();
        axpy(ip.beta * dt * dt, &acc, &mut psi);
        psi_dot = psi_dot_pred.clone();
        axpy(ip.gamma * dt, &acc, &mut psi_dot);
        if res <= ip.tol {
            break;
        }
        if history.len() >= ip.max_iters {
            return Err(StepError::Diverged { step, history });
        }
    }
    let min_speed_factor = problem.ctx.min_wave_speed_factor(&psi_dot)?;
    let report = StepReport {
        step,
        t: step as f64 * dt,
        iterations: history.len(),
        residual: *history.last().unwrap_or(&0.0),
        min_speed_factor,
        wall_time: start.elapsed(),
    };
    Ok((
        State {
            psi,
            psi_dot,
            psi_ddot: acc,
            t: step as f64 * dt,
            step,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictor_examples() {
        let ip = IntegratorParams::paper(0.1);
        let s = State {
            psi: vec![0.0],
            psi_dot: vec![0.0],
            psi_ddot: vec![1.0],
            t: 0.0,
            step: 0,
        };
        let (p, v) = predict(&s, &ip);
        assert!((p[0] - 0.0005).abs() < 1e-15);
        assert!((v[0] - 0.025).abs() < 1e-15);

        let s = State {
            psi: vec![1.0, -2.0],
            psi_dot: vec![3.0, 0.5],
            psi_ddot: vec![0.0, 0.0],
            t: 0.0,
            step: 0,
        };
        let (p, v) = predict(&s, &ip);
        assert_eq!(p, vec![1.3, -1.95]);
        assert_eq!(v, s.psi_dot);
    }

    #[test]
    fn predictor_is_linear() {
        let ip = IntegratorParams::paper(0.03);
        let s = State {
            psi: vec![0.2, -1.0],
            psi_dot: vec![1.5, 0.1],
            psi_ddot: vec![-4.0, 2.0],
            t: 0.0,
            step: 0,
        };
        let a = 2.5;
        let scaled = State {
            psi: s.psi.iter().map(|v| a * v).collect(),
            psi_dot: s.psi_dot.iter().map(|v| a * v).collect(),
            psi_ddot: s.psi_ddot.iter().map(|v| a * v).collect(),
            ..s.clone()
        };
        let (p1, v1) = predict(&s, &ip);
        let (p2, v2) = predict(&scaled, &ip);
        for i in 0..2 {
            assert!((a * p1[i] - p2[i]).abs() < 1e-14);
            assert!((a * v1[i] - v2[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn alpha_rhs_scalar_oracle() {
        let one = CsrMatrix::identity(1);
        let ip = IntegratorParams::paper(0.1);
        let s = State {
            psi: vec![1.0],
            psi_dot: vec![1.0],
            psi_ddot: vec![1.0],
            t: 0.0,
            step: 0,
        };
        let (pp, vp) = predict(&s, &ip);
        // psi_pred = 1 + 0.1 + 0.005 * 0.1 = 1.1005, vel_pred = 1 + 0.025 = 1.025
        assert!((pp[0] - 1.1005).abs() < 1e-15);
        assert!((vp[0] - 1.025).abs() < 1e-15);
        let p = build_alpha_rhs(&s, &pp, &vp, &one, &one, &one, &ip).unwrap();
        // -0.5 - (2/3 * 1.1005 + 1/3) - (2/3 * 1.025 + 1/3)
        let want = -0.5 - (2.0 / 3.0 * 1.1005 + 1.0 / 3.0) - (2.0 / 3.0 * 1.025 + 1.0 / 3.0);
        assert!((p[0] - want).abs() < 1e-14);
        assert!((p[0] - (-2.583667)).abs() < 1e-6);
    }

    #[test]
    fn alpha_rhs_newmark_limit_and_zero() {
        let m = CsrMatrix::from_triplets(2, &[(0, 0, 2.0), (1, 1, 3.0)]).unwrap();
        let k = CsrMatrix::from_triplets(2, &[(0, 0, 5.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 4.0)]).unwrap();
        let c = CsrMatrix::from_triplets(2, &[(0, 0, 0.5), (1, 1, 0.25)]).unwrap();
        let ip = IntegratorParams::average_acceleration(0.01);
        let s = State {
            psi: vec![1.0, 2.0],
            psi_dot: vec![-1.0, 0.5],
            psi_ddot: vec![3.0, -2.0],
            t: 0.0,
            step: 0,
        };
        let (pp, vp) = predict(&s, &ip);
        let p = build_alpha_rhs(&s, &pp, &vp, &m, &k, &c, &ip).unwrap();
        let kp = k.matvec(&pp).unwrap();
        let cv = c.matvec(&vp).unwrap();
        for i in 0..2 {
            assert!((p[i] + kp[i] + cv[i]).abs() < 1e-14);
        }
        let z = State::zeros(2);
        let p = build_alpha_rhs(&z, &[0.0; 2], &[0.0; 2], &m, &k, &c, &IntegratorParams::paper(0.1)).unwrap();
        assert_eq!(p, vec![0.0, 0.0]);
        assert!(build_alpha_rhs(&z, &[0.0; 3], &[0.0; 2], &m, &k, &c, &ip).is_err());
    }

    #[test]
    fn parameter_sets() {
        let ch = IntegratorParams::chung_hulbert(1.0, 0.1);
        assert!((ch.alpha_m - 0.5).abs() < 1e-15 && (ch.alpha_f - 0.5).abs() < 1e-15);
        assert!((ch.beta - 0.25).abs() < 1e-15 && (ch.gamma - 0.5).abs() < 1e-15);
        assert!(IntegratorParams::paper(0.0).validate().is_err());
        let mut ip = IntegratorParams::paper(1.0);
        ip.alpha_f = 1.0;
        assert!(ip.validate().is_err());
        assert!(IntegratorParams::paper(1e-7).validate().is_ok());
    }
}
