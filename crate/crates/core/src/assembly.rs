//! Element-loop assembly of the constant matrices and matrix-free evaluation
//! of the state-dependent terms.
//!
//! All element loops compute local vectors in parallel and scatter them
//! sequentially in element order, so results do not depend on the thread count.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{CsrMatrix, LinalgError, LuFactorization};
use crate::mesh::{BoundaryKind, GeometryError, Patch, Side};
use crate::quadrature::{element_rule, gauss_rule};
use crate::timestepper::IntegratorParams;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("every degree of freedom is constrained; nothing to solve")]
    EmptyInterior,

    #[error("vector has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("side {0:?} does not exist on this patch")]
    NoSuchSide(Side),

    #[error("diagnostic needs basis degree >= 2, patch has degree {0}")]
    DegreeTooLow(usize),

    #[error(transparent)]
    Geometry(#[from] GeometryError),

    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn check_len(v: &[f64], n: usize) -> Result<(), AssemblyError> {
    if v.len() == n {
        Ok(())
    } else {
        Err(AssemblyError::DimensionMismatch {
            expected: n,
            found: v.len(),
        })
    }
}

/// View of one quadrature point: the active basis functions with physical
/// derivatives and the quadrature weight times the Jacobian determinant.
pub struct Qp<'a> {
    pub element: usize,
    pub x: [f64; 2],
    pub jxw: f64,
    pub dofs: &'a [usize],
    pub values: &'a [f64],
    pub grads: &'a [[f64; 2]],
    pub hessians: Option<&'a [[f64; 3]]>,
}

impl Qp<'_> {
    /// Field value for coefficients in full numbering.
    pub fn value(&self, coef: &[f64]) -> f64 {
        self.dofs.iter().zip(self.values).map(|(&i, v)| coef[i] * v).sum()
    }

    pub fn grad(&self, coef: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (&i, d) in self.dofs.iter().zip(self.grads) {
            g[0] += coef[i] * d[0];
            g[1] += coef[i] * d[1];
        }
        g
    }

    /// Laplacian; zero when the cache was built without second derivatives.
    pub fn laplacian(&self, coef: &[f64]) -> f64 {
        self.hessians.map_or(0.0, |h| {
            self.dofs.iter().zip(h).map(|(&i, d)| coef[i] * (d[0] + d[2])).sum()
        })
    }
}

/// Precomputed basis data at every element quadrature point.
#[derive(Clone, Debug)]
pub struct QuadCache {
    dim: usize,
    n_dofs: usize,
    nloc: usize,
    nq: usize,
    dofs: Vec<usize>,
    jxw: Vec<f64>,
    points: Vec<[f64; 2]>,
    values: Vec<f64>,
    grads: Vec<[f64; 2]>,
    hessians: Option<Vec<[f64; 3]>>,
}

impl QuadCache {
    /// `nodes` Gauss points per direction; `order` 2 also stores Hessians.
    pub fn new(patch: &Patch, nodes: usize, order: usize) -> Result<Self, AssemblyError> {
        let dim = patch.dim();
        let rule = element_rule(nodes, dim).map_err(GeometryError::from)?;
        let elements = patch.elements();
        let nloc = elements.first().map_or(0, |e| e.active.len());
        let nq = rule.len();
        let per_element: Vec<_> = elements
            .par_iter()
            .map(|e| {
                let pm = e.param_measure(dim);
                let mut out = Vec::with_capacity(nq);
                for (node, w) in rule.nodes.iter().zip(&rule.weights) {
                    let (m, pb) = patch.physical_basis(e, e.param_point(node), order)?;
                    out.push((m.x, w * pm * m.det, pb));
                }
                Ok::<_, GeometryError>(out)
            })
            .collect::<Result<_, _>>()?;
        let total = elements.len() * nq;
        let mut cache = QuadCache {
            dim,
            n_dofs: patch.num_basis(),
            nloc,
            nq,
            dofs: elements.iter().flat_map(|e| e.active.iter().copied()).collect(),
            jxw: Vec::with_capacity(total),
            points: Vec::with_capacity(total),
            values: Vec::with_capacity(total * nloc),
            grads: Vec::with_capacity(total * nloc),
            hessians: (order >= 2).then(|| Vec::with_capacity(total * nloc)),
        };
        for elem in per_element {
            for (x, jxw, pb) in elem {
                cache.points.push(x);
                cache.jxw.push(jxw);
                cache.values.extend_from_slice(&pb.values);
                cache.grads.extend_from_slice(&pb.grads);
                if let Some(h) = cache.hessians.as_mut() {
                    h.extend_from_slice(&pb.hessians);
                }
            }
        }
        Ok(cache)
    }

    /// Default rule: `p + 1` Gauss points per direction.
    pub fn for_patch(patch: &Patch) -> Result<Self, AssemblyError> {
        Self::new(patch, patch.max_degree() + 1, 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_elements(&self) -> usize {
        self.jxw.len() / self.nq.max(1)
    }

    pub fn points_per_element(&self) -> usize {
        self.nq
    }

    pub fn has_hessians(&self) -> bool {
        self.hessians.is_some()
    }

    pub fn element_dofs(&self, e: usize) -> &[usize] {
        &self.dofs[e * self.nloc..(e + 1) * self.nloc]
    }

    pub fn qp(&self, e: usize, q: usize) -> Qp<'_> {
        let k = e * self.nq + q;
        let r = k * self.nloc..(k + 1) * self.nloc;
        Qp {
            element: e,
            x: self.points[k],
            jxw: self.jxw[k],
            dofs: self.element_dofs(e),
            values: &self.values[r.clone()],
            grads: &self.grads[r.clone()],
            hessians: self.hessians.as_ref().map(|h| &h[r]),
        }
    }

    /// `y_p = sum_qp jxw (s R_p + g . grad R_p)` with `(s, g) = f(qp)`, in
    /// full numbering.
    pub fn integrate<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&Qp) -> (f64, [f64; 2]) + Sync,
    {
        let nloc = self.nloc;
        let mut local = vec![0.0; self.n_elements() * nloc];
        local
            .par_chunks_mut(nloc)
            .with_min_len(64)
            .enumerate()
            .for_each(|(e, loc)| {
                for q in 0..self.nq {
                    let qp = self.qp(e, q);
                    let (s, g) = f(&qp);
                    if s == 0.0 && g == [0.0, 0.0] {
                        continue;
                    }
                    for a in 0..nloc {
                        loc[a] += qp.jxw * (s * qp.values[a] + g[0] * qp.grads[a][0] + g[1] * qp.grads[a][1]);
                    }
                }
            });
        let mut out = vec![0.0; self.n_dofs];
        for (&i, v) in self.dofs.iter().zip(&local) {
            out[i] += v;
        }
        out
    }

    /// `sum_qp jxw f(qp)`, summed per element then in element order.
    pub fn integrate_scalar<F>(&self, f: F) -> f64
    where
        F: Fn(&Qp) -> f64 + Sync,
    {
        let per: Vec<f64> = (0..self.n_elements())
            .into_par_iter()
            .with_min_len(64)
            .map(|e| (0..self.nq).map(|q| {
                let qp = self.qp(e, q);
                qp.jxw * f(&qp)
            }).sum())
            .collect();
        per.iter().sum()
    }

    /// Matrix with entries `sum_qp jxw f(qp, a, b)` for local indices `a`, `b`.
    pub fn assemble_matrix<F>(&self, f: F) -> Result<CsrMatrix, AssemblyError>
    where
        F: Fn(&Qp, usize, usize) -> f64 + Sync,
    {
        let nloc = self.nloc;
        let mut local = vec![0.0; self.n_elements() * nloc * nloc];
        local
            .par_chunks_mut(nloc * nloc)
            .with_min_len(16)
            .enumerate()
            .for_each(|(e, loc)| {
                for q in 0..self.nq {
                    let qp = self.qp(e, q);
                    for a in 0..nloc {
                        for b in 0..nloc {
                            loc[a * nloc + b] += qp.jxw * f(&qp, a, b);
                        }
                    }
                }
            });
        let mut trip = Vec::with_capacity(local.len());
        for e in 0..self.n_elements() {
            let dofs = self.element_dofs(e);
            for a in 0..nloc {
                for b in 0..nloc {
                    trip.push((dofs[a], dofs[b], local[(e * nloc + a) * nloc + b]));
                }
            }
        }
        Ok(CsrMatrix::from_triplets(self.n_dofs, &trip)?)
    }
}

/// Basis data at the quadrature points of one side of the patch.
#[derive(Clone, Debug)]
pub struct BoundaryCache {
    pub side: Side,
    nloc: usize,
    dofs: Vec<usize>,
    /// Quadrature weight times the arc-length element (1 in 1D).
    jxw: Vec<f64>,
    points: Vec<[f64; 2]>,
    values: Vec<f64>,
}

impl BoundaryCache {
    pub fn new(patch: &Patch, side: Side, nodes: usize) -> Result<Self, AssemblyError> {
        if !Side::all(patch.dim()).contains(&side) {
            return Err(AssemblyError::NoSuchSide(side));
        }
        let (axis, at) = patch.side_param(side);
        let elements = patch.boundary_elements(side);
        let nloc = patch.elements()[0].active.len();
        let mut cache = BoundaryCache {
            side,
            nloc,
            dofs: Vec::new(),
            jxw: Vec::new(),
            points: Vec::new(),
            values: Vec::new(),
        };
        let rule = gauss_rule(nodes).map_err(GeometryError::from)?;
        for id in elements {
            let e = &patch.elements()[id];
            if patch.dim() == 1 {
                let (m, pb) = patch.physical_basis(e, [at, 0.0], 1)?;
                cache.push(&e.active, 1.0, m.x, &pb.values);
                continue;
            }
            let tang = 1 - axis;
            let [lo, hi] = e.bounds[tang];
            for (node, w) in rule.nodes.iter().zip(&rule.weights) {
                let mut xi = [0.0; 2];
                xi[axis] = at;
                xi[tang] = lo + 0.5 * (node[0] + 1.0) * (hi - lo);
                let (m, pb) = patch.physical_basis(e, xi, 1)?;
                let ds = (m.jac[0][tang].powi(2) + m.jac[1][tang].powi(2)).sqrt();
                cache.push(&e.active, w * 0.5 * (hi - lo) * ds, m.x, &pb.values);
            }
        }
        Ok(cache)
    }

    fn push(&mut self, dofs: &[usize], jxw: f64, x: [f64; 2], values: &[f64]) {
        self.dofs.extend_from_slice(dofs);
        self.jxw.push(jxw);
        self.points.push(x);
        self.values.extend_from_slice(values);
    }

    pub fn len(&self) -> usize {
        self.jxw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jxw.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Length of the side; in 1D the point carries unit weight.
    pub fn measure(&self) -> f64 {
        self.jxw.iter().sum()
    }

    /// `y_p = sum_qp jxw f(x, u_h) R_p` where `u_h` is the field `coef`
    /// (full numbering) evaluated at the point, or zero when absent.
    pub fn integrate<F>(&self, n_dofs: usize, coef: Option<&[f64]>, f: F) -> Vec<f64>
    where
        F: Fn([f64; 2], f64) -> f64,
    {
        let mut out = vec![0.0; n_dofs];
        for q in 0..self.len() {
            let r = q * self.nloc..(q + 1) * self.nloc;
            let dofs = &self.dofs[r.clone()];
            let vals = &self.values[r];
            let u = coef.map_or(0.0, |c| dofs.iter().zip(vals).map(|(&i, v)| c[i] * v).sum());
            let s = f(self.points[q], u) * self.jxw[q];
            if s != 0.0 {
                for (&i, v) in dofs.iter().zip(vals) {
                    out[i] += s * v;
                }
            }
        }
        out
    }
}

/// Map between the full basis numbering and the unconstrained degrees of
/// freedom.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    n_full: usize,
    free: Vec<usize>,
    full_to_free: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(n_full: usize, constrained: &[usize]) -> Result<Self, AssemblyError> {
        let mut fixed = vec![false; n_full];
        for &i in constrained {
            fixed[i] = true;
        }
        let free: Vec<usize> = (0..n_full).filter(|&i| !fixed[i]).collect();
        if free.is_empty() {
            return Err(AssemblyError::EmptyInterior);
        }
        let mut full_to_free = vec![None; n_full];
        for (k, &i) in free.iter().enumerate() {
            full_to_free[i] = Some(k);
        }
        Ok(DofMap {
            n_full,
            free,
            full_to_free,
        })
    }

    /// Dirichlet degrees of freedom of every side marked as such.
    pub fn from_regions(patch: &Patch, kinds: &[(Side, BoundaryKind)]) -> Result<Self, AssemblyError> {
        let constrained: Vec<usize> = kinds
            .iter()
            .filter(|(_, k)| *k == BoundaryKind::Dirichlet)
            .flat_map(|(s, _)| patch.boundary_dofs(*s))
            .collect();
        Self::new(patch.num_basis(), &constrained)
    }

    pub fn n_full(&self) -> usize {
        self.n_full
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn free_index(&self, full: usize) -> Option<usize> {
        self.full_to_free[full]
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| full[i]).collect()
    }

    /// Zero-extension to the full numbering.
    pub fn extend(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_full];
        for (&i, v) in self.free.iter().zip(free) {
            out[i] = *v;
        }
        out
    }

    pub fn restrict_matrix(&self, a: &CsrMatrix) -> CsrMatrix {
        a.restrict(&self.free)
    }
}

/// Unconstrained mass, stiffness and damping matrices.
#[derive(Clone, Debug)]
pub struct ConstantMatrices {
    pub m: CsrMatrix,
    pub k: CsrMatrix,
    pub c: CsrMatrix,
}

/// `m = int R_p R_q`, `k = c^2 int grad R_p . grad R_q`, `c = b int grad R_p . grad R_q`.
pub fn assemble_constant_matrices(cache: &QuadCache, c: f64, b: f64) -> Result<ConstantMatrices, AssemblyError> {
    let m = cache.assemble_matrix(|qp, a, bb| qp.values[a] * qp.values[bb])?;
    let s = cache.assemble_matrix(|qp, a, bb| {
        qp.grads[a][0] * qp.grads[bb][0] + qp.grads[a][1] * qp.grads[bb][1]
    })?;
    Ok(ConstantMatrices {
        m,
        k: s.scaled(c * c),
        c: s.scaled(b),
    })
}

/// Constrained matrices, the effective mass matrix and its factorization.
#[derive(Clone, Debug)]
pub struct SystemMatrices {
    pub dofs: DofMap,
    pub m: CsrMatrix,
    pub k: CsrMatrix,
    pub c: CsrMatrix,
    pub m_bar: CsrMatrix,
    pub m_bar_lu: LuFactorization,
}

impl SystemMatrices {
    pub fn new(full: &ConstantMatrices, dofs: DofMap, ip: &IntegratorParams) -> Result<Self, AssemblyError> {
        let m = dofs.restrict_matrix(&full.m);
        let k = dofs.restrict_matrix(&full.k);
        let c = dofs.restrict_matrix(&full.c);
        let m_bar = effective_mass(&m, &k, &c, ip)?;
        let m_bar_lu = LuFactorization::new(&m_bar)?;
        Ok(SystemMatrices {
            dofs,
            m,
            k,
            c,
            m_bar,
            m_bar_lu,
        })
    }

    pub fn dim(&self) -> usize {
        self.dofs.n_free()
    }
}

/// `(1 - a_m) M + gamma (1 - a_f) dt C + beta (1 - a_f) dt^2 K`.
pub fn effective_mass(
    m: &CsrMatrix,
    k: &CsrMatrix,
    c: &CsrMatrix,
    ip: &IntegratorParams,
) -> Result<CsrMatrix, AssemblyError> {
    let af = 1.0 - ip.alpha_f;
    Ok(CsrMatrix::linear_combination(&[
        (1.0 - ip.alpha_m, m),
        (ip.gamma * af * ip.dt, c),
        (ip.beta * af * ip.dt * ip.dt, k),
    ])?)
}

/// Restriction of the Dirichlet-constrained system: both ends/sides given.
pub fn apply_dirichlet(
    full: &ConstantMatrices,
    dofs: DofMap,
    ip: &IntegratorParams,
) -> Result<SystemMatrices, AssemblyError> {
    SystemMatrices::new(full, dofs, ip)
}

/// Evaluation context for the state-dependent terms. Vectors passed in and
/// returned use the constrained numbering of `dofs`.
#[derive(Clone, Debug)]
pub struct NonlinearTerms {
    pub cache: QuadCache,
    pub dofs: DofMap,
    pub c: f64,
    pub k: f64,
}

impl NonlinearTerms {
    pub fn new(cache: QuadCache, dofs: DofMap, c: f64, k: f64) -> Self {
        NonlinearTerms { cache, dofs, c, k }
    }

    pub fn dim(&self) -> usize {
        self.dofs.n_free()
    }

    fn lift(&self, v: &[f64]) -> Result<Vec<f64>, AssemblyError> {
        check_len(v, self.dofs.n_free())?;
        Ok(self.dofs.extend(v))
    }

    /// `(T(w) u)_p = c^2 k int w_h grad R_p . grad u_h`.
    pub fn tensor_t_action(&self, psi_dot: &[f64], psi: &[f64]) -> Result<Vec<f64>, AssemblyError> {
        let (w, u) = (self.lift(psi_dot)?, self.lift(psi)?);
        let s = self.c * self.c * self.k;
        if s == 0.0 {
            return Ok(vec![0.0; self.dim()]);
        }
        let y = self.cache.integrate(|qp| {
            let f = s * qp.value(&w);
            let g = qp.grad(&u);
            (0.0, [f * g[0], f * g[1]])
        });
        Ok(self.dofs.restrict(&y))
    }

    /// `(N(w) u)_p = (2 - c^2 k) int R_p grad u_h . grad w_h`.
    pub fn tensor_n_action(&self, psi_dot: &[f64], psi: &[f64]) -> Result<Vec<f64>, AssemblyError> {
        let (w, u) = (self.lift(psi_dot)?, self.lift(psi)?);
        let s = 2.0 - self.c * self.c * self.k;
        if s == 0.0 {
            return Ok(vec![0.0; self.dim()]);
        }
        let y = self.cache.integrate(|qp| {
            let gu = qp.grad(&u);
            let gw = qp.grad(&w);
            (s * (gu[0] * gw[0] + gu[1] * gw[1]), [0.0; 2])
        });
        Ok(self.dofs.restrict(&y))
    }

    /// `-T(w) u + n_scale N(w) u` in a single element pass.
    pub fn blackstock_rhs(&self, psi_dot: &[f64], psi: &[f64], n_scale: f64) -> Result<Vec<f64>, AssemblyError> {
        let (w, u) = (self.lift(psi_dot)?, self.lift(psi)?);
        let t = self.c * self.c * self.k;
        let n = n_scale * (2.0 - t);
        let y = self.cache.integrate(|qp| {
            let wv = qp.value(&w);
            let gu = qp.grad(&u);
            let gw = qp.grad(&w);
            (n * (gu[0] * gw[0] + gu[1] * gw[1]), [-t * wv * gu[0], -t * wv * gu[1]])
        });
        Ok(self.dofs.restrict(&y))
    }

    /// `2 int R_p grad u_h . grad w_h`.
    pub fn gradient_product(&self, psi_dot: &[f64], psi: &[f64]) -> Result<Vec<f64>, AssemblyError> {
        let (w, u) = (self.lift(psi_dot)?, self.lift(psi)?);
        let y = self.cache.integrate(|qp| {
            let gu = qp.grad(&u);
            let gw = qp.grad(&w);
            (2.0 * (gu[0] * gw[0] + gu[1] * gw[1]), [0.0; 2])
        });
        Ok(self.dofs.restrict(&y))
    }

    /// Constrained matrix `factor int R_p R_q w_h`.
    pub fn weighted_mass(&self, factor: f64, psi_dot: &[f64]) -> Result<CsrMatrix, AssemblyError> {
        let w = self.lift(psi_dot)?;
        let full = self
            .cache
            .assemble_matrix(|qp, a, b| factor * qp.value(&w) * qp.values[a] * qp.values[b])?;
        Ok(self.dofs.restrict_matrix(&full))
    }

    /// Smallest value of `1 + k w_h` over the quadrature points.
    pub fn min_wave_speed_factor(&self, psi_dot: &[f64]) -> Result<f64, AssemblyError> {
        let w = self.lift(psi_dot)?;
        let per: Vec<f64> = (0..self.cache.n_elements())
            .into_par_iter()
            .with_min_len(64)
            .map(|e| {
                (0..self.cache.points_per_element())
                    .map(|q| 1.0 + self.k * self.cache.qp(e, q).value(&w))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        Ok(per.into_iter().fold(f64::INFINITY, f64::min))
    }
}

/// Boundary flux `g` and its time derivative at a point of a side, at time `t`.
pub struct NeumannValues<'a> {
    pub g: &'a dyn Fn([f64; 2]) -> f64,
    pub g_dot: &'a dyn Fn([f64; 2]) -> f64,
}

/// `F_p = int_side (c^2 g + b g_dot) R_p` plus, when `psi_dot` is given,
/// `B_p = c^2 k int_side g R_p w_h`. Constrained numbering.
pub fn assemble_neumann_rhs(
    boundary: &BoundaryCache,
    dofs: &DofMap,
    c: f64,
    b: f64,
    k: f64,
    data: &NeumannValues,
    psi_dot: Option<&[f64]>,
) -> Result<Vec<f64>, AssemblyError> {
    let w = match psi_dot {
        Some(v) => {
            check_len(v, dofs.n_free())?;
            Some(dofs.extend(v))
        }
        None => None,
    };
    let c2 = c * c;
    let with_b = w.is_some() && k != 0.0;
    let y = boundary.integrate(dofs.n_full(), w.as_deref(), |x, wv| {
        let g = (data.g)(x);
        let mut v = c2 * g;
        if b != 0.0 {
            v += b * (data.g_dot)(x);
        }
        if with_b {
            v += c2 * k * g * wv;
        }
        v
    });
    Ok(dofs.restrict(&y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::make_interval_patch;
    use approx::assert_abs_diff_eq;

    fn channel(deg: usize, ne: usize, len: f64) -> (Patch, QuadCache) {
        let p = make_interval_patch(len, deg, ne).unwrap();
        let q = QuadCache::for_patch(&p).unwrap();
        (p, q)
    }

    #[test]
    fn linear_mass_and_stiffness_rows() {
        let (len, ne) = (2.0, 8);
        let h = len / ne as f64;
        let (_, q) = channel(1, ne, len);
        let cm = assemble_constant_matrices(&q, 1.0, 0.0).unwrap();
        for (j, w) in [(3, 1.0), (4, 4.0), (5, 1.0)] {
            assert_abs_diff_eq!(cm.m.get(4, j), h / 6.0 * w, epsilon = 1e-15);
        }
        let c = 3.0;
        let cm = assemble_constant_matrices(&q, c, 0.0).unwrap();
        for (j, w) in [(3, -1.0), (4, 2.0), (5, -1.0)] {
            assert_abs_diff_eq!(cm.k.get(4, j), c * c / h * w, epsilon = 1e-13);
        }
    }

    #[test]
    fn stiffness_rows_sum_to_zero_and_damping_scales() {
        let (_, q) = channel(3, 12, 0.4);
        let (c, b) = (1500.0, 6e-9);
        let cm = assemble_constant_matrices(&q, c, b).unwrap();
        let ones = vec![1.0; cm.k.dim()];
        let r = cm.k.matvec(&ones).unwrap();
        let scale = cm.k.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(r.iter().all(|v| v.abs() < 1e-12 * scale));
        assert!(cm.c.same_pattern(&cm.k));
        for (x, y) in cm.c.values().iter().zip(cm.k.values()) {
            assert!((x - b / (c * c) * y).abs() <= 1e-15 * (b / (c * c) * y).abs().max(1e-300));
        }
        assert!(cm.m.asymmetry() < 1e-15);
        assert!(cm.k.asymmetry() < 1e-15 * scale);
    }

    #[test]
    fn mass_sums_to_length() {
        let (_, q) = channel(2, 9, 0.4);
        let cm = assemble_constant_matrices(&q, 1.0, 1.0).unwrap();
        let total: f64 = cm.m.values().iter().sum();
        assert_abs_diff_eq!(total, 0.4, epsilon = 1e-14);
    }

    #[test]
    fn dirichlet_restriction() {
        let (p, q) = channel(2, 6, 1.0);
        let kinds = [(Side::Left, BoundaryKind::Dirichlet), (Side::Right, BoundaryKind::Dirichlet)];
        let dofs = DofMap::from_regions(&p, &kinds).unwrap();
        assert_eq!(dofs.n_free(), p.num_basis() - 2);
        let x: Vec<f64> = (0..dofs.n_free()).map(|i| i as f64 + 0.5).collect();
        assert_eq!(dofs.restrict(&dofs.extend(&x)), x);
        let cm = assemble_constant_matrices(&q, 1.0, 0.0).unwrap();
        let ip = IntegratorParams::paper(1e-3);
        let sys = apply_dirichlet(&cm, dofs, &ip).unwrap();
        assert_eq!(sys.m.dim(), p.num_basis() - 2);
        assert!(DofMap::new(2, &[0, 1]).is_err());
    }

    #[test]
    fn effective_mass_entrywise() {
        let (_, q) = channel(2, 7, 1.0);
        let cm = assemble_constant_matrices(&q, 2.0, 0.3).unwrap();
        let ip = IntegratorParams::paper(0.01);
        let mb = effective_mass(&cm.m, &cm.k, &cm.c, &ip).unwrap();
        for i in 0..mb.dim() {
            for j in 0..mb.dim() {
                let want = 0.5 * cm.m.get(i, j) + 0.75 * (2.0 / 3.0) * 0.01 * cm.c.get(i, j)
                    + 0.45 * (2.0 / 3.0) * 1e-4 * cm.k.get(i, j);
                assert!((mb.get(i, j) - want).abs() <= 1e-14 * want.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn tensor_actions_trivial_cases() {
        let (p, q) = channel(2, 10, 1.0);
        let dofs = DofMap::new(p.num_basis(), &[0]).unwrap();
        let n = dofs.n_free();
        let psi: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let zero = vec![0.0; n];
        let ctx = NonlinearTerms::new(q.clone(), dofs.clone(), 2.0, 0.3);
        assert!(ctx.tensor_t_action(&zero, &psi).unwrap().iter().all(|&v| v == 0.0));
        assert!(ctx.tensor_n_action(&zero, &psi).unwrap().iter().all(|&v| v == 0.0));
        let no_k = NonlinearTerms::new(q.clone(), dofs.clone(), 2.0, 0.0);
        assert!(no_k.tensor_t_action(&psi, &psi).unwrap().iter().all(|&v| v == 0.0));
        // c^2 k = 2 removes the convective term
        let two = NonlinearTerms::new(q, dofs, 2.0, 0.5);
        assert!(two.tensor_n_action(&psi, &psi).unwrap().iter().all(|&v| v == 0.0));
        assert!(ctx.tensor_t_action(&psi[1..], &psi).is_err());
    }

    #[test]
    fn fused_rhs_matches_separate_actions() {
        let (p, q) = channel(3, 9, 1.0);
        let dofs = DofMap::new(p.num_basis(), &[0, p.num_basis() - 1]).unwrap();
        let n = dofs.n_free();
        let u: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
        let w: Vec<f64> = (0..n).map(|i| (i as f64 * 1.1).sin()).collect();
        let ctx = NonlinearTerms::new(q, dofs, 1.3, 0.4);
        let t = ctx.tensor_t_action(&w, &u).unwrap();
        let nn = ctx.tensor_n_action(&w, &u).unwrap();
        let fused = ctx.blackstock_rhs(&w, &u, 1.0).unwrap();
        for i in 0..n {
            assert!((fused[i] - (nn[i] - t[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn neumann_point_value_in_1d() {
        let (p, _) = channel(3, 6, 1.0);
        let dofs = DofMap::new(p.num_basis(), &[]).unwrap();
        let bc = BoundaryCache::new(&p, Side::Left, 4).unwrap();
        let one = |_: [f64; 2]| 1.0;
        let zero = |_: [f64; 2]| 0.0;
        let c = 7.0;
        let v = assemble_neumann_rhs(&bc, &dofs, c, 0.0, 0.0, &NeumannValues { g: &one, g_dot: &zero }, None).unwrap();
        assert_abs_diff_eq!(v[0], c * c, epsilon = 1e-12);
        assert!(v[1..].iter().all(|&x| x == 0.0));
        let v = assemble_neumann_rhs(&bc, &dofs, c, 1.0, 0.0, &NeumannValues { g: &zero, g_dot: &zero }, None).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }
}
