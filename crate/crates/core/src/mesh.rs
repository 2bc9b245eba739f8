//! Single-patch geometries: the 1D channel and the 2D focused-transducer
//! domain whose lower boundary is a circular arc.
//!
//! Patches may carry rational weights. The field basis is then the NURBS basis
//! `R_i = w_i N_i / sum_j w_j N_j`, so geometry and fields share one space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{CsrMatrix, LinalgError, LuFactorization};
use crate::quadrature::{element_rule, QuadratureError};
use crate::splines::{BasisSpec, KnotVector, SplineError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid geometry input: {0}")]
    InvalidInput(String),

    #[error("circle (radius {radius}) does not reach the side wall at x = {x}")]
    ArcMissesWall { x: f64, radius: f64 },

    #[error("non-positive Jacobian determinant {det:e} in element {element}")]
    SingularJacobian { element: usize, det: f64 },

    #[error("point ({x}, {y}) lies outside the patch")]
    OutsidePatch { x: f64, y: f64 },

    #[error(transparent)]
    Spline(#[from] SplineError),

    #[error(transparent)]
    Quadrature(#[from] QuadratureError),

    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `xi = start` (the 1D left end).
    Left,
    /// `xi = end` (the 1D right end).
    Right,
    /// `eta = start`, 2D only.
    Bottom,
    /// `eta = end`, 2D only.
    Top,
}

impl Side {
    pub fn all(dim: usize) -> &'static [Side] {
        if dim == 1 {
            &[Side::Left, Side::Right]
        } else {
            &[Side::Left, Side::Right, Side::Bottom, Side::Top]
        }
    }

    /// Parametric direction normal to the side and whether it sits at the end.
    fn axis(self) -> (usize, bool) {
        match self {
            Side::Left => (0, false),
            Side::Right => (0, true),
            Side::Bottom => (1, false),
            Side::Top => (1, true),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

/// A side of the patch with its boundary condition type and adjacent elements.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryRegion {
    pub side: Side,
    pub kind: BoundaryKind,
    pub elements: Vec<usize>,
}

/// A non-empty knot span (1D) or product of spans (2D).
#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub id: usize,
    pub spans: [usize; 2],
    /// `[lo, hi]` per parametric direction; unused directions are `[0, 1]`.
    pub bounds: [[f64; 2]; 2],
    pub active: Vec<usize>,
}

impl Element {
    /// Parametric point for reference coordinates in `[-1, 1]^d`.
    pub fn param_point(&self, reference: &[f64]) -> [f64; 2] {
        let mut xi = [0.0; 2];
        for (d, r) in reference.iter().enumerate() {
            let [lo, hi] = self.bounds[d];
            xi[d] = lo + 0.5 * (r + 1.0) * (hi - lo);
        }
        xi
    }

    /// Jacobian of the reference-to-parametric affine map.
    pub fn param_measure(&self, dim: usize) -> f64 {
        (0..dim)
            .map(|d| 0.5 * (self.bounds[d][1] - self.bounds[d][0]))
            .product()
    }
}

/// Basis functions active at a point, with parametric or physical derivatives.
/// Hessians are stored as `[xx, xy, yy]`.
#[derive(Clone, Debug, Default)]
pub struct PointBasis {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
    pub hessians: Vec<[f64; 3]>,
}

/// Geometry map evaluated at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MappedPoint {
    pub x: [f64; 2],
    /// `jac[a][b] = d x_a / d xi_b`; in 1D `jac[1][1] = 1`.
    pub jac: [[f64; 2]; 2],
    pub det: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    basis: BasisSpec,
    control_points: Vec<[f64; 2]>,
    weights: Option<Vec<f64>>,
    elements: Vec<Element>,
    element_grid: [usize; 2],
    /// Largest deviation of the curved boundary from its target curve, when
    /// the boundary had to be approximated.
    pub boundary_error: f64,
}

fn inv2(j: &[[f64; 2]; 2]) -> ([[f64; 2]; 2], f64) {
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    (
        [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]],
        det,
    )
}

impl Patch {
    pub fn new(
        basis: BasisSpec,
        control_points: Vec<[f64; 2]>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self, GeometryError> {
        let dim = basis.dim();
        if !(1..=2).contains(&dim) {
            return Err(GeometryError::InvalidInput(format!("unsupported dimension {dim}")));
        }
        let n = basis.num_basis();
        if control_points.len() != n {
            return Err(GeometryError::InvalidInput(format!(
                "{} control points for {n} basis functions",
                control_points.len()
            )));
        }
        if let Some(w) = &weights {
            if w.len() != n || w.iter().any(|&v| !(v > 0.0)) {
                return Err(GeometryError::InvalidInput(
                    "weights must be positive, one per control point".into(),
                ));
            }
        }
        let spans: Vec<Vec<usize>> = basis.directions.iter().map(KnotVector::nonzero_spans).collect();
        let counts = basis.counts();
        let ny_el = if dim == 2 { spans[1].len() } else { 1 };
        let nx_el = spans[0].len();
        let mut elements = Vec::with_capacity(nx_el * ny_el);
        for ey in 0..ny_el {
            for ex in 0..nx_el {
                let sx = spans[0][ex];
                let kx = basis.directions[0].knots();
                let px = basis.directions[0].degree();
                let mut bounds = [[kx[sx], kx[sx + 1]], [0.0, 1.0]];
                let mut span_pair = [sx, 0];
                let mut active = Vec::new();
                if dim == 2 {
                    let sy = spans[1][ey];
                    let ky = basis.directions[1].knots();
                    let py = basis.directions[1].degree();
                    bounds[1] = [ky[sy], ky[sy + 1]];
                    span_pair[1] = sy;
                    for j in sy - py..=sy {
                        for i in sx - px..=sx {
                            active.push(i + counts[0] * j);
                        }
                    }
                } else {
                    active.extend(sx - px..=sx);
                }
                elements.push(Element {
                    id: elements.len(),
                    spans: span_pair,
                    bounds,
                    active,
                });
            }
        }
        let patch = Patch {
            basis,
            control_points,
            weights,
            elements,
            element_grid: [nx_el, ny_el],
            boundary_error: 0.0,
        };
        patch.check_jacobians()?;
        Ok(patch)
    }

    fn check_jacobians(&self) -> Result<(), GeometryError> {
        let rule = element_rule(self.max_degree() + 2, self.dim())?;
        for e in &self.elements {
            for node in &rule.nodes {
                let m = self.map_to_physical(e, e.param_point(node))?;
                if !(m.det > 0.0) {
                    return Err(GeometryError::SingularJacobian {
                        element: e.id,
                        det: m.det,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn max_degree(&self) -> usize {
        self.basis.directions.iter().map(KnotVector::degree).max().unwrap_or(0)
    }

    pub fn num_basis(&self) -> usize {
        self.control_points.len()
    }

    pub fn control_points(&self) -> &[[f64; 2]] {
        &self.control_points
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element_grid(&self) -> [usize; 2] {
        self.element_grid
    }

    /// Parametric domain `[start, end]` per direction.
    pub fn param_bounds(&self) -> Vec<[f64; 2]> {
        self.basis
            .directions
            .iter()
            .map(|kv| [kv.start(), kv.end()])
            .collect()
    }

    /// Element containing a parametric point.
    pub fn locate(&self, xi: [f64; 2]) -> Result<&Element, GeometryError> {
        let mut idx = [0usize; 2];
        for (d, kv) in self.basis.directions.iter().enumerate() {
            let span = kv.find_span(xi[d])?;
            let spans = kv.nonzero_spans();
            idx[d] = spans.binary_search(&span).unwrap_or_else(|p| p.saturating_sub(1));
        }
        Ok(&self.elements[idx[0] + self.element_grid[0] * idx[1]])
    }

    /// Parametric-space basis values and derivatives (up to `order` <= 2) of
    /// the functions active on `element`, rational weights applied.
    pub fn param_basis(&self, element: &Element, xi: [f64; 2], order: usize) -> PointBasis {
        let mut out = self.poly_basis(element, xi, order);
        if let Some(w) = &self.weights {
            rationalize(&mut out, w, order);
        }
        out
    }

    /// Weight function `W = sum_i w_i N_i` (1 without weights).
    fn weight_function(&self, element: &Element, xi: [f64; 2]) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| {
            let pb = self.poly_basis(element, xi, 0);
            pb.indices.iter().zip(&pb.values).map(|(&i, v)| w[i] * v).sum()
        })
    }

    fn poly_basis(&self, element: &Element, xi: [f64; 2], order: usize) -> PointBasis {
        let dim = self.dim();
        let dirs = &self.basis.directions;
        let ux = dirs[0].derivs_in_span(element.spans[0], xi[0], order);
        let uy = if dim == 2 {
            dirs[1].derivs_in_span(element.spans[1], xi[1], order)
        } else {
            // constant function in the dummy direction
            let mut r = vec![vec![1.0]];
            r.extend((0..order).map(|_| vec![0.0]));
            r
        };
        let nloc = element.active.len();
        let mut out = PointBasis {
            indices: element.active.clone(),
            values: Vec::with_capacity(nloc),
            grads: Vec::with_capacity(nloc),
            hessians: Vec::with_capacity(if order >= 2 { nloc } else { 0 }),
        };
        let d = |rows: &Vec<Vec<f64>>, k: usize, i: usize| rows.get(k).map_or(0.0, |r| r[i]);
        for b in 0..uy[0].len() {
            for a in 0..ux[0].len() {
                out.values.push(ux[0][a] * uy[0][b]);
                out.grads.push([d(&ux, 1, a) * uy[0][b], ux[0][a] * d(&uy, 1, b)]);
                if order >= 2 {
                    out.hessians.push([
                        d(&ux, 2, a) * uy[0][b],
                        d(&ux, 1, a) * d(&uy, 1, b),
                        ux[0][a] * d(&uy, 2, b),
                    ]);
                }
            }
        }
        out
    }

    fn map_from_basis(&self, pb: &PointBasis) -> MappedPoint {
        let mut x = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        for (k, &i) in pb.indices.iter().enumerate() {
            let cp = self.control_points[i];
            for a in 0..2 {
                x[a] += pb.values[k] * cp[a];
                for b in 0..2 {
                    jac[a][b] += pb.grads[k][b] * cp[a];
                }
            }
        }
        if self.dim() == 1 {
            x[1] = 0.0;
            jac[0][1] = 0.0;
            jac[1] = [0.0, 1.0];
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        MappedPoint { x, jac, det }
    }

    pub fn map_to_physical(&self, element: &Element, xi: [f64; 2]) -> Result<MappedPoint, GeometryError> {
        let pb = self.param_basis(element, xi, 1);
        let m = self.map_from_basis(&pb);
        if !(m.det.abs() > 0.0) || !m.det.is_finite() {
            return Err(GeometryError::SingularJacobian {
                element: element.id,
                det: m.det,
            });
        }
        Ok(m)
    }

    /// Basis functions at a parametric point with physical derivatives.
    pub fn physical_basis(
        &self,
        element: &Element,
        xi: [f64; 2],
        order: usize,
    ) -> Result<(MappedPoint, PointBasis), GeometryError> {
        // the Jacobian needs first derivatives even when only values are requested
        let mut pb = self.param_basis(element, xi, order.max(1));
        let m = self.map_from_basis(&pb);
        if !(m.det > 0.0) {
            return Err(GeometryError::SingularJacobian {
                element: element.id,
                det: m.det,
            });
        }
        let (jinv, _) = inv2(&m.jac);
        // d/dx_a = sum_b (J^{-1})_{b a} d/dxi_b
        let to_phys = |g: [f64; 2]| {
            [
                jinv[0][0] * g[0] + jinv[1][0] * g[1],
                jinv[0][1] * g[0] + jinv[1][1] * g[1],
            ]
        };
        let param_grads = pb.grads.clone();
        for g in pb.grads.iter_mut() {
            *g = to_phys(*g);
        }
        if order >= 2 {
            // Hessians of the geometry components in parametric space.
            let mut hx = [[0.0; 3]; 2];
            for (k, &i) in pb.indices.iter().enumerate() {
                let cp = self.control_points[i];
                for a in 0..self.dim() {
                    for c in 0..3 {
                        hx[a][c] += pb.hessians[k][c] * cp[a];
                    }
                }
            }
            for k in 0..pb.values.len() {
                let gphys = pb.grads[k];
                let mut h = pb.hessians[k];
                for a in 0..self.dim() {
                    for c in 0..3 {
                        h[c] -= gphys[a] * hx[a][c];
                    }
                }
                // J^{-T} H J^{-1}
                let hm = [[h[0], h[1]], [h[1], h[2]]];
                let mut tmp = [[0.0; 2]; 2];
                for a in 0..2 {
                    for b in 0..2 {
                        tmp[a][b] = (0..2).map(|c| hm[a][c] * jinv[c][b]).sum();
                    }
                }
                let mut out = [[0.0; 2]; 2];
                for a in 0..2 {
                    for b in 0..2 {
                        out[a][b] = (0..2).map(|c| jinv[c][a] * tmp[c][b]).sum();
                    }
                }
                pb.hessians[k] = [out[0][0], out[0][1], out[1][1]];
            }
        }
        let _ = param_grads;
        Ok((m, pb))
    }

    /// Physical point of a parametric point anywhere in the patch.
    pub fn point(&self, xi: [f64; 2]) -> Result<[f64; 2], GeometryError> {
        let e = self.locate(xi)?;
        Ok(self.map_from_basis(&self.param_basis(e, xi, 1)).x)
    }

    /// Newton inversion of the geometry map.
    pub fn inverse_map(&self, x: [f64; 2]) -> Result<[f64; 2], GeometryError> {
        let bounds = self.param_bounds();
        let dim = self.dim();
        let scale = self
            .control_points
            .iter()
            .fold(0.0f64, |m, p| m.max(p[0].abs()).max(p[1].abs()))
            .max(1e-300);
        let clamp = |xi: &mut [f64; 2]| {
            for d in 0..dim {
                xi[d] = xi[d].clamp(bounds[d][0], bounds[d][1]);
            }
        };
        let guesses = [0.5, 0.25, 0.75, 0.1, 0.9];
        for &gy in if dim == 2 { &guesses[..] } else { &guesses[..1] } {
            for &gx in &guesses {
                let mut xi = [0.0; 2];
                xi[0] = bounds[0][0] + gx * (bounds[0][1] - bounds[0][0]);
                if dim == 2 {
                    xi[1] = bounds[1][0] + gy * (bounds[1][1] - bounds[1][0]);
                }
                for _ in 0..60 {
                    let e = self.locate(xi)?;
                    let m = self.map_from_basis(&self.param_basis(e, xi, 1));
                    let r = [m.x[0] - x[0], if dim == 2 { m.x[1] - x[1] } else { 0.0 }];
                    if r[0].abs().max(r[1].abs()) <= 1e-14 * scale {
                        return Ok(xi);
                    }
                    let (jinv, det) = inv2(&m.jac);
                    if !det.is_finite() || det == 0.0 {
                        break;
                    }
                    let prev = xi;
                    for d in 0..dim {
                        xi[d] -= jinv[d][0] * r[0] + jinv[d][1] * r[1];
                    }
                    clamp(&mut xi);
                    if (xi[0] - prev[0]).abs().max((xi[1] - prev[1]).abs()) < 1e-15 {
                        // stalled on the boundary: accept only if the point is there
                        let e = self.locate(xi)?;
                        let m = self.map_from_basis(&self.param_basis(e, xi, 1));
                        let rr = (m.x[0] - x[0]).abs().max(if dim == 2 { (m.x[1] - x[1]).abs() } else { 0.0 });
                        if rr <= 1e-10 * scale {
                            return Ok(xi);
                        }
                        break;
                    }
                }
            }
        }
        Err(GeometryError::OutsidePatch { x: x[0], y: x[1] })
    }

    /// Total physical measure (length or area) by Gauss quadrature.
    pub fn measure(&self, nodes: usize) -> Result<f64, GeometryError> {
        let rule = element_rule(nodes, self.dim())?;
        let mut total = 0.0;
        for e in &self.elements {
            let pm = e.param_measure(self.dim());
            for (node, w) in rule.nodes.iter().zip(&rule.weights) {
                total += w * pm * self.map_to_physical(e, e.param_point(node))?.det;
            }
        }
        Ok(total)
    }

    /// Basis indices that do not vanish on the given side.
    pub fn boundary_dofs(&self, side: Side) -> Vec<usize> {
        let counts = self.basis.counts();
        let (axis, at_end) = side.axis();
        if self.dim() == 1 {
            return if axis != 0 {
                Vec::new()
            } else if at_end {
                vec![counts[0] - 1]
            } else {
                vec![0]
            };
        }
        let fixed = if at_end { counts[axis] - 1 } else { 0 };
        if axis == 0 {
            (0..counts[1]).map(|j| fixed + counts[0] * j).collect()
        } else {
            (0..counts[0]).map(|i| i + counts[0] * fixed).collect()
        }
    }

    /// Elements with a face on the given side.
    pub fn boundary_elements(&self, side: Side) -> Vec<usize> {
        let [nx, ny] = self.element_grid;
        let (axis, at_end) = side.axis();
        if axis >= self.dim() {
            return Vec::new();
        }
        if axis == 0 {
            let ex = if at_end { nx - 1 } else { 0 };
            (0..ny).map(|ey| ex + nx * ey).collect()
        } else {
            let ey = if at_end { ny - 1 } else { 0 };
            (0..nx).map(|ex| ex + nx * ey).collect()
        }
    }

    pub fn boundary_region(&self, side: Side, kind: BoundaryKind) -> BoundaryRegion {
        BoundaryRegion {
            side,
            kind,
            elements: self.boundary_elements(side),
        }
    }

    /// Parametric coordinate of a side (`None` for the tangential direction).
    pub fn side_param(&self, side: Side) -> (usize, f64) {
        let (axis, at_end) = side.axis();
        let b = self.param_bounds()[axis];
        (axis, if at_end { b[1] } else { b[0] })
    }

    /// Coefficients (full numbering) of the interpolant of `f` at the
    /// Greville points. Functions attached to `zero_sides` get zero
    /// coefficients and their Greville points are skipped.
    pub fn interpolate<F: Fn([f64; 2]) -> f64>(&self, f: F, zero_sides: &[Side]) -> Result<Vec<f64>, GeometryError> {
        let dim = self.dim();
        let counts = self.basis.counts();
        let mut ranges = Vec::with_capacity(dim);
        let mut solvers = Vec::with_capacity(dim);
        let mut abscissae = Vec::with_capacity(dim);
        for (d, kv) in self.basis.directions.iter().enumerate() {
            let lo = zero_sides.iter().any(|s| s.axis() == (d, false)) as usize;
            let hi = counts[d] - zero_sides.iter().any(|s| s.axis() == (d, true)) as usize;
            if lo >= hi {
                return Err(GeometryError::InvalidInput("no free functions to interpolate with".into()));
            }
            let g = kv.greville_points();
            let mut trip = Vec::new();
            for i in lo..hi {
                for (j, v) in kv.eval_basis(g[i])?.indexed() {
                    if (lo..hi).contains(&j) && v != 0.0 {
                        trip.push((i - lo, j - lo, v));
                    }
                }
            }
            solvers.push(LuFactorization::new(&CsrMatrix::from_triplets(hi - lo, &trip)?)?);
            abscissae.push(g);
            ranges.push(lo..hi);
        }
        let ry = if dim == 2 { ranges[1].clone() } else { 0..1 };
        let nx = ranges[0].len();
        // values times the weight function, row-major in (j, i)
        let mut vals = Vec::with_capacity(nx * ry.len());
        for j in ry.clone() {
            for i in ranges[0].clone() {
                let xi = [abscissae[0][i], if dim == 2 { abscissae[1][j] } else { 0.0 }];
                let e = self.locate(xi)?;
                let pb = self.param_basis(e, xi, 0);
                let x = self.map_from_basis(&pb).x;
                vals.push(f(x) * self.weight_function(e, xi));
            }
        }
        for row in vals.chunks_mut(nx) {
            let sol = solvers[0].solve(row)?;
            row.copy_from_slice(&sol);
        }
        if dim == 2 {
            let ny = ry.len();
            for i in 0..nx {
                let col: Vec<f64> = (0..ny).map(|j| vals[i + nx * j]).collect();
                let sol = solvers[1].solve(&col)?;
                for j in 0..ny {
                    vals[i + nx * j] = sol[j];
                }
            }
        }
        let mut out = vec![0.0; self.num_basis()];
        for (jj, j) in ry.enumerate() {
            for (ii, i) in ranges[0].clone().enumerate() {
                let idx = i + counts[0] * j;
                let w = self.weights.as_ref().map_or(1.0, |w| w[idx]);
                out[idx] = vals[ii + nx * jj] / w;
            }
        }
        Ok(out)
    }

    /// Value of the field with full-numbering coefficients `coef` at a
    /// physical point.
    pub fn evaluate(&self, coef: &[f64], x: [f64; 2]) -> Result<f64, GeometryError> {
        let xi = self.inverse_map(x)?;
        let e = self.locate(xi)?;
        let pb = self.param_basis(e, xi, 0);
        Ok(pb.indices.iter().zip(&pb.values).map(|(&i, v)| coef[i] * v).sum())
    }
}

fn rationalize(pb: &mut PointBasis, w: &[f64], order: usize) {
    let n = pb.values.len();
    let mut wsum = 0.0;
    let mut wg = [0.0; 2];
    let mut wh = [0.0; 3];
    for k in 0..n {
        let wi = w[pb.indices[k]];
        wsum += wi * pb.values[k];
        for a in 0..2 {
            wg[a] += wi * pb.grads[k][a];
        }
        if order >= 2 {
            for c in 0..3 {
                wh[c] += wi * pb.hessians[k][c];
            }
        }
    }
    for k in 0..n {
        let wi = w[pb.indices[k]];
        let r = wi * pb.values[k] / wsum;
        let g = [
            (wi * pb.grads[k][0] - r * wg[0]) / wsum,
            (wi * pb.grads[k][1] - r * wg[1]) / wsum,
        ];
        if order >= 2 {
            let h = pb.hessians[k];
            // second derivatives of w N / W
            pb.hessians[k] = [
                (wi * h[0] - 2.0 * g[0] * wg[0] - r * wh[0]) / wsum,
                (wi * h[1] - g[0] * wg[1] - g[1] * wg[0] - r * wh[1]) / wsum,
                (wi * h[2] - 2.0 * g[1] * wg[1] - r * wh[2]) / wsum,
            ];
        }
        pb.values[k] = r;
        pb.grads[k] = g;
    }
}

/// Uniform open-knot interval `[0, length]` with `n_elements` elements of unit
/// parametric length, so `dx/dxi = length / n_elements`.
pub fn make_interval_patch(length: f64, degree: usize, n_elements: usize) -> Result<Patch, GeometryError> {
    make_interval_patch_with_continuity(length, degree, degree.saturating_sub(1), n_elements)
}

/// Interval patch with `C^continuity` joins between elements.
pub fn make_interval_patch_with_continuity(
    length: f64,
    degree: usize,
    continuity: usize,
    n_elements: usize,
) -> Result<Patch, GeometryError> {
    if !(length > 0.0) || !length.is_finite() {
        return Err(GeometryError::InvalidInput(format!("length must be positive, got {length}")));
    }
    if n_elements == 0 {
        return Err(GeometryError::InvalidInput("need at least one element".into()));
    }
    if degree == 0 || continuity >= degree {
        return Err(GeometryError::InvalidInput(format!(
            "continuity {continuity} is not available for degree {degree}"
        )));
    }
    let kv = KnotVector::uniform_with_multiplicity(degree, n_elements, 0.0, n_elements as f64, degree - continuity)?;
    let h = length / n_elements as f64;
    // Greville abscissae reproduce linear functions exactly.
    let cps = kv.greville_points().into_iter().map(|g| [g * h, 0.0]).collect();
    Patch::new(BasisSpec::new(vec![kv]), cps, None)
}

/// Number of elements giving `dofs` basis functions on an open uniform knot
/// vector of the given degree.
pub fn elements_for_dofs(dofs: usize, degree: usize) -> Result<usize, GeometryError> {
    elements_for_dofs_with_continuity(dofs, degree, degree.saturating_sub(1))
}

/// As [`elements_for_dofs`] for interior knots of multiplicity
/// `degree - continuity`.
pub fn elements_for_dofs_with_continuity(dofs: usize, degree: usize, continuity: usize) -> Result<usize, GeometryError> {
    if dofs <= degree || continuity >= degree.max(1) {
        return Err(GeometryError::InvalidInput(format!(
            "{dofs} degrees of freedom with continuity {continuity} do not fit degree {degree}"
        )));
    }
    let m = degree - continuity;
    let interior = dofs - degree - 1;
    if interior % m != 0 {
        return Err(GeometryError::InvalidInput(format!(
            "{dofs} degrees of freedom cannot be split into elements with knot multiplicity {m}"
        )));
    }
    Ok(interior / m + 1)
}

/// Geometry of the focused-transducer domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HifuGeometry {
    pub width: f64,
    pub height: f64,
    pub center: [f64; 2],
    pub radius: f64,
}

/// Exact quadratic rational Bezier form of the lower arc between the side
/// walls: control points and weights.
pub fn lower_arc_bezier(g: &HifuGeometry) -> Result<([[f64; 2]; 3], [f64; 3]), GeometryError> {
    let [cx, cy] = g.center;
    let r = g.radius;
    if !(g.width > 0.0 && g.height > 0.0 && r > 0.0) {
        return Err(GeometryError::InvalidInput("width, height and radius must be positive".into()));
    }
    for wall in [0.0, g.width] {
        if r <= (wall - cx).abs() {
            return Err(GeometryError::ArcMissesWall { x: wall, radius: r });
        }
    }
    let y0 = cy - (r * r - cx * cx).sqrt();
    let y2 = cy - (r * r - (g.width - cx).powi(2)).sqrt();
    if y0 >= g.height || y2 >= g.height {
        return Err(GeometryError::InvalidInput("arc endpoints lie above the top edge".into()));
    }
    let th0 = (y0 - cy).atan2(-cx);
    let th2 = (y2 - cy).atan2(g.width - cx);
    let sweep = th2 - th0;
    if !(sweep > 0.0 && sweep < std::f64::consts::PI) {
        return Err(GeometryError::InvalidInput(format!(
            "arc sweep {sweep} rad must lie strictly between 0 and pi"
        )));
    }
    let half = 0.5 * sweep;
    let mid = 0.5 * (th0 + th2);
    let reach = r / half.cos();
    let p1 = [cx + reach * mid.cos(), cy + reach * mid.sin()];
    Ok(([[0.0, y0], p1, [g.width, y2]], [1.0, half.cos(), 1.0]))
}

/// Collocation at Greville abscissae: coefficients `c` with
/// `sum_j c_j N_j(g_i) = values[i]`.
pub(crate) fn greville_interpolate(kv: &KnotVector, values: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, GeometryError> {
    let g = kv.greville_points();
    let mut trip = Vec::new();
    for (i, &x) in g.iter().enumerate() {
        let b = kv.eval_basis(x)?;
        for (j, v) in b.indexed() {
            if v != 0.0 {
                trip.push((i, j, v));
            }
        }
    }
    let lu = LuFactorization::new(&CsrMatrix::from_triplets(g.len(), &trip)?)?;
    values.iter().map(|v| lu.solve(v).map_err(Into::into)).collect()
}

/// Tensor-product patch on `[0,1]^2` whose bottom side is the lower circular
/// arc and whose top side is the line `y = height`. Columns of constant `xi`
/// are vertical segments; rows are linear blends of bottom and top.
///
/// For degree >= 2 in `xi` the arc is represented exactly with rational
/// weights. Linear bases interpolate the arc at Greville abscissae and the
/// deviation is recorded in `boundary_error`.
pub fn make_hifu_patch(
    geometry: &HifuGeometry,
    degrees: [usize; 2],
    n_elements: [usize; 2],
) -> Result<Patch, GeometryError> {
    let (bez, bw) = lower_arc_bezier(geometry)?;
    let kx = KnotVector::uniform(degrees[0], n_elements[0], 0.0, 1.0)?;
    let ky = KnotVector::uniform(degrees[1], n_elements[1], 0.0, 1.0)?;
    let bern = |t: f64| [(1.0 - t) * (1.0 - t), 2.0 * t * (1.0 - t), t * t];
    let arc = |t: f64| {
        let b = bern(t);
        let w: f64 = (0..3).map(|i| b[i] * bw[i]).sum();
        let x: f64 = (0..3).map(|i| b[i] * bw[i] * bez[i][0]).sum::<f64>() / w;
        let y: f64 = (0..3).map(|i| b[i] * bw[i] * bez[i][1]).sum::<f64>() / w;
        (w, [x, y])
    };
    let gx = kx.greville_points();
    let nx = kx.num_basis();
    let (bottom, weights): (Vec<[f64; 2]>, Option<Vec<f64>>) = if degrees[0] >= 2 {
        // the homogeneous numerator and denominator are quadratics, hence in the space
        let mut hw = Vec::with_capacity(nx);
        let mut hx = Vec::with_capacity(nx);
        let mut hy = Vec::with_capacity(nx);
        for &t in &gx {
            let (w, p) = arc(t);
            hw.push(w);
            hx.push(w * p[0]);
            hy.push(w * p[1]);
        }
        let sol = greville_interpolate(&kx, &[hw, hx, hy])?;
        let pts = (0..nx).map(|i| [sol[1][i] / sol[0][i], sol[2][i] / sol[0][i]]).collect();
        (pts, Some(sol[0].clone()))
    } else {
        (gx.iter().map(|&t| arc(t).1).collect(), None)
    };
    let gy = ky.greville_points();
    let ny = ky.num_basis();
    let mut cps = Vec::with_capacity(nx * ny);
    let mut ws = weights.as_ref().map(|_| Vec::with_capacity(nx * ny));
    for &s in &gy {
        for (i, b) in bottom.iter().enumerate() {
            cps.push([b[0], (1.0 - s) * b[1] + s * geometry.height]);
            if let (Some(ws), Some(w)) = (ws.as_mut(), weights.as_ref()) {
                ws.push(w[i]);
            }
        }
    }
    let mut patch = Patch::new(BasisSpec::new(vec![kx, ky]), cps, ws)?;
    // measure how well the bottom side follows the circle
    let mut err = 0.0f64;
    for k in 0..=400 {
        let t = k as f64 / 400.0;
        let p = patch.point([t, 0.0])?;
        let dist = ((p[0] - geometry.center[0]).powi(2) + (p[1] - geometry.center[1]).powi(2)).sqrt();
        err = err.max((dist - geometry.radius).abs());
    }
    patch.boundary_error = err;
    Ok(patch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn paper_geometry() -> HifuGeometry {
        HifuGeometry {
            width: 0.08,
            height: 0.12,
            center: [0.04, 0.03],
            radius: 0.05,
        }
    }

    #[test]
    fn channel_dof_count() {
        let ne = elements_for_dofs(801, 3).unwrap();
        assert_eq!(ne, 798);
        let p = make_interval_patch(0.4, 3, ne).unwrap();
        assert_eq!(p.num_basis(), 801);
        assert_eq!(p.elements().len(), 798);
    }

    #[test]
    fn unit_linear_interval() {
        let p = make_interval_patch(1.0, 1, 1).unwrap();
        assert_eq!(p.control_points(), &[[0.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn interval_endpoints_and_affine_jacobian() {
        for (len, deg, ne) in [(0.4, 3, 10), (2.5, 2, 7), (1.0, 1, 3)] {
            let p = make_interval_patch(len, deg, ne).unwrap();
            assert_abs_diff_eq!(p.point([0.0, 0.0]).unwrap()[0], 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(p.point([ne as f64, 0.0]).unwrap()[0], len, epsilon = 1e-13);
            let e = &p.elements()[ne / 2];
            let m = p.map_to_physical(e, e.param_point(&[0.3])).unwrap();
            assert_abs_diff_eq!(m.jac[0][0], len / ne as f64, epsilon = 1e-14);
        }
        let p = make_interval_patch(0.4, 2, 4).unwrap();
        let x = p.point([0.25, 0.0]).unwrap()[0];
        assert_abs_diff_eq!(x, 0.25 * 0.4 / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn interval_rejects_bad_input() {
        assert!(make_interval_patch(0.0, 2, 4).is_err());
        assert!(make_interval_patch(-1.0, 2, 4).is_err());
        assert!(make_interval_patch(1.0, 2, 0).is_err());
    }

    #[test]
    fn interval_measure() {
        let p = make_interval_patch(0.4, 3, 17).unwrap();
        assert!((p.measure(4).unwrap() - 0.4).abs() <= 1e-10 * 0.4);
    }

    #[test]
    fn hifu_bottom_midpoint() {
        let p = make_hifu_patch(&paper_geometry(), [2, 2], [8, 12]).unwrap();
        let mid = p.point([0.5, 0.0]).unwrap();
        assert_abs_diff_eq!(mid[0], 0.04, epsilon = 1e-12);
        assert_abs_diff_eq!(mid[1], -0.02, epsilon = 1e-12);
        let top = p.point([0.3, 1.0]).unwrap();
        assert_abs_diff_eq!(top[1], 0.12, epsilon = 1e-14);
    }

    #[test]
    fn hifu_bottom_on_circle() {
        let g = paper_geometry();
        let p = make_hifu_patch(&g, [2, 2], [20, 30]).unwrap();
        assert!(p.boundary_error <= 1e-6 * g.radius, "{}", p.boundary_error);
        // the rational representation is exact up to round-off
        assert!(p.boundary_error < 1e-13);
        let p1 = make_hifu_patch(&g, [1, 1], [64, 8]).unwrap();
        assert!(p1.boundary_error > 0.0);
    }

    #[test]
    fn hifu_area_matches_circular_segment() {
        let g = paper_geometry();
        let p = make_hifu_patch(&g, [2, 2], [10, 10]).unwrap();
        // rectangle plus the circular segment below y = 0
        let sweep = 2.0 * (0.04f64 / 0.05).asin();
        let segment = 0.5 * g.radius * g.radius * (sweep - sweep.sin());
        let exact = g.width * g.height + segment;
        let area = p.measure(6).unwrap();
        assert!((area - exact).abs() <= 1e-6 * exact, "{area} vs {exact}");
    }

    #[test]
    fn nearly_flat_arc_is_rectangle() {
        let r = 1e6;
        let g = HifuGeometry {
            width: 0.08,
            height: 0.12,
            center: [0.04, (r * r - 0.04f64 * 0.04).sqrt()],
            radius: r,
        };
        let p = make_hifu_patch(&g, [2, 2], [4, 4]).unwrap();
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let b = p.point([t, 0.0]).unwrap();
            assert!(b[1].abs() < 1e-6);
            assert!((b[0] - 0.08 * b[0] / 0.08).abs() < 1e-6);
        }
        assert!((p.measure(4).unwrap() - 0.08 * 0.12).abs() < 1e-6);
    }

    #[test]
    fn arc_must_reach_walls() {
        let g = HifuGeometry {
            width: 0.08,
            height: 0.12,
            center: [0.04, 0.03],
            radius: 0.03,
        };
        assert!(matches!(
            make_hifu_patch(&g, [2, 2], [4, 4]),
            Err(GeometryError::ArcMissesWall { .. })
        ));
    }

    #[test]
    fn jacobian_positive_on_paper_grid() {
        // construction itself checks every quadrature point
        let p = make_hifu_patch(&paper_geometry(), [2, 2], [70, 112]).unwrap();
        assert_eq!(p.num_basis(), 72 * 114);
    }

    #[test]
    fn inverse_map_round_trip() {
        let p = make_hifu_patch(&paper_geometry(), [2, 2], [9, 13]).unwrap();
        let mut s = 12345u64;
        for _ in 0..50 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            let a = (s >> 11) as f64 / (1u64 << 53) as f64;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            let b = (s >> 11) as f64 / (1u64 << 53) as f64;
            let x = p.point([a, b]).unwrap();
            let xi = p.inverse_map(x).unwrap();
            assert!((xi[0] - a).abs() < 1e-10 && (xi[1] - b).abs() < 1e-10);
        }
        assert!(p.inverse_map([0.04, 0.2]).is_err());

        let q = make_interval_patch(0.4, 3, 20).unwrap();
        let xi = q.inverse_map([0.123, 0.0]).unwrap();
        assert_abs_diff_eq!(q.point(xi).unwrap()[0], 0.123, epsilon = 1e-14);
        assert!(q.inverse_map([0.5, 0.0]).is_err());
    }

    #[test]
    fn rational_basis_partition_and_derivatives() {
        let p = make_hifu_patch(&paper_geometry(), [2, 2], [5, 5]).unwrap();
        let xi = [0.37, 0.61];
        let e = p.locate(xi).unwrap();
        let pb = p.param_basis(e, xi, 2);
        assert_abs_diff_eq!(pb.values.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        let h = 1e-5;
        for dir in 0..2 {
            let mut a = xi;
            let mut b = xi;
            a[dir] += h;
            b[dir] -= h;
            let pa = p.param_basis(e, a, 2);
            let pm = p.param_basis(e, b, 2);
            for k in 0..pb.values.len() {
                let fd = (pa.values[k] - pm.values[k]) / (2.0 * h);
                assert!((fd - pb.grads[k][dir]).abs() < 1e-6);
                let fd2 = (pa.grads[k][dir] - pm.grads[k][dir]) / (2.0 * h);
                let hidx = if dir == 0 { 0 } else { 2 };
                assert!((fd2 - pb.hessians[k][hidx]).abs() < 1e-5 * pb.hessians[k][hidx].abs().max(1.0));
            }
        }
    }

    #[test]
    fn physical_hessian_matches_finite_difference() {
        let p = make_hifu_patch(&paper_geometry(), [2, 2], [5, 5]).unwrap();
        let xi = [0.41, 0.33];
        let e = p.locate(xi).unwrap();
        let (m, pb) = p.physical_basis(e, xi, 2).unwrap();
        // differentiate the physical gradient along x using the inverse map
        let h = 1e-6;
        for (dir, hidx) in [(0usize, 0usize), (1, 2)] {
            let mut xp = m.x;
            let mut xm = m.x;
            xp[dir] += h;
            xm[dir] -= h;
            let (_, bp) = p.physical_basis(e, p.inverse_map(xp).unwrap(), 1).unwrap();
            let (_, bm) = p.physical_basis(e, p.inverse_map(xm).unwrap(), 1).unwrap();
            for k in 0..pb.values.len() {
                let fd = (bp.grads[k][dir] - bm.grads[k][dir]) / (2.0 * h);
                let scale = pb.hessians[k][hidx].abs().max(1.0);
                assert!((fd - pb.hessians[k][hidx]).abs() < 1e-4 * scale, "{fd} vs {}", pb.hessians[k][hidx]);
            }
        }
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let p = make_interval_patch(2.0, 3, 7).unwrap();
        let f = |x: [f64; 2]| 1.0 + x[0] - 0.5 * x[0].powi(3);
        let c = p.interpolate(f, &[]).unwrap();
        for x in [0.0, 0.3, 1.1, 2.0] {
            assert!((p.evaluate(&c, [x, 0.0]).unwrap() - f([x, 0.0])).abs() < 1e-12);
        }
        // pinned ends: still exact when the function vanishes there
        let g = |x: [f64; 2]| x[0] * (2.0 - x[0]);
        let c = p.interpolate(g, &[Side::Left, Side::Right]).unwrap();
        assert_eq!((c[0], c[c.len() - 1]), (0.0, 0.0));
        assert!((p.evaluate(&c, [0.7, 0.0]).unwrap() - g([0.7, 0.0])).abs() < 1e-12);

        let h = make_hifu_patch(&paper_geometry(), [2, 2], [6, 8]).unwrap();
        let q = |x: [f64; 2]| 2.0 - x[0] + 3.0 * x[1] * x[0];
        let c = h.interpolate(q, &[]).unwrap();
        for pt in [[0.04, 0.05], [0.01, 0.1], [0.07, 0.0]] {
            // products of the coordinates are not in the rational space
            let err = (h.evaluate(&c, pt).unwrap() - q(pt)).abs();
            assert!(err < 1e-4, "{err}");
        }
        let one = h.interpolate(|_| 1.0, &[]).unwrap();
        assert!((h.evaluate(&one, [0.03, 0.02]).unwrap() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn boundary_regions_cover_sides_once() {
        let p = make_hifu_patch(&paper_geometry(), [2, 2], [4, 6]).unwrap();
        let mut count = vec![0usize; p.elements().len()];
        for &s in Side::all(2) {
            for e in p.boundary_elements(s) {
                count[e] += 1;
            }
        }
        // corner elements touch two sides, edge elements one, interior none
        let [nx, ny] = p.element_grid();
        for ey in 0..ny {
            for ex in 0..nx {
                let expected = (ex == 0) as usize + (ex == nx - 1) as usize + (ey == 0) as usize + (ey == ny - 1) as usize;
                assert_eq!(count[ex + nx * ey], expected);
            }
        }
        assert_eq!(p.boundary_dofs(Side::Bottom).len(), 6);
        assert_eq!(p.boundary_dofs(Side::Left).len(), 8);
        let q = make_interval_patch(1.0, 2, 5).unwrap();
        assert_eq!(q.boundary_dofs(Side::Left), vec![0]);
        assert_eq!(q.boundary_dofs(Side::Right), vec![6]);
    }

    #[test]
    fn values_only_mapping_keeps_jacobian() {
        let g = HifuGeometry { width: 0.08, height: 0.12, center: [0.04, 0.03], radius: 0.05 };
        let p = make_hifu_patch(&g, [2, 2], [6, 9]).unwrap();
        let e = &p.elements()[7];
        let xi = e.param_point(&[0.3, 0.6]);
        let (m0, b0) = p.physical_basis(e, xi, 0).unwrap();
        let (m1, b1) = p.physical_basis(e, xi, 1).unwrap();
        assert_eq!(m0.det, m1.det);
        assert_eq!(b0.values, b1.values);
    }

    #[test]
    fn reduced_continuity_interval() {
        assert_eq!(elements_for_dofs_with_continuity(9, 2, 0).unwrap(), 4);
        assert!(elements_for_dofs_with_continuity(10, 2, 0).is_err());
        let p = make_interval_patch_with_continuity(2.0, 2, 0, 4).unwrap();
        assert_eq!(p.num_basis(), 9);
        assert_eq!(p.basis().continuity(), 0);
        let u = p.interpolate(|x| x[0] * x[0], &[]).unwrap();
        assert!((p.evaluate(&u, [1.3, 0.0]).unwrap() - 1.69).abs() < 1e-12);
    }
}
