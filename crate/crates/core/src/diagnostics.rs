//! Post-processing: pressure sampling, energy functionals, profile errors and
//! exponential decay fits.

use std::io::Write;

use thiserror::Error;

use crate::assembly::{AssemblyError, QuadCache};
use crate::mesh::{GeometryError, Patch};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("energy needs basis degree >= 2, got {0}")]
    DegreeTooLow(usize),

    #[error("energy needs a C^1 basis, got continuity {0}")]
    NotSmooth(i64),

    #[error("sample grids differ ({0} vs {1} points or different coordinates)")]
    GridMismatch(usize, usize),

    #[error("energy is not positive at t = {t} inside the fit window")]
    NonPositiveEnergy { t: f64 },

    #[error("fit window contains {0} samples, need at least 2")]
    TooFewSamples(usize),

    #[error(transparent)]
    Geometry(#[from] GeometryError),

    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

/// Values of a field at physical points.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub t: f64,
    pub points: Vec<[f64; 2]>,
    pub values: Vec<f64>,
}

/// `n` uniformly spaced points along `[a, b]` (endpoints included).
pub fn line_points(a: [f64; 2], b: [f64; 2], n: usize) -> Vec<[f64; 2]> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
        })
        .collect()
}

/// Field with full-numbering coefficients evaluated at physical points.
pub fn sample_field(patch: &Patch, coef: &[f64], points: &[[f64; 2]]) -> Result<Vec<f64>, GeometryError> {
    points.iter().map(|&x| patch.evaluate(coef, x)).collect()
}

/// Acoustic pressure `rho psi_t` (Pa) at physical points.
pub fn pressure(patch: &Patch, psi_dot: &[f64], rho: f64, points: &[[f64; 2]]) -> Result<Vec<f64>, GeometryError> {
    Ok(sample_field(patch, psi_dot, points)?.into_iter().map(|v| rho * v).collect())
}

/// Basis values cached at fixed physical points for repeated evaluation.
#[derive(Clone, Debug)]
pub struct Sampler {
    points: Vec<[f64; 2]>,
    basis: Vec<(Vec<usize>, Vec<f64>)>,
}

impl Sampler {
    pub fn new(patch: &Patch, points: Vec<[f64; 2]>) -> Result<Self, GeometryError> {
        let basis = points
            .iter()
            .map(|&x| {
                let xi = patch.inverse_map(x)?;
                let pb = patch.param_basis(patch.locate(xi)?, xi, 0);
                Ok((pb.indices, pb.values))
            })
            .collect::<Result<_, GeometryError>>()?;
        Ok(Sampler { points, basis })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Field values for full-numbering coefficients, scaled by `factor`.
    pub fn eval(&self, coef: &[f64], factor: f64) -> Vec<f64> {
        self.basis
            .iter()
            .map(|(idx, val)| factor * idx.iter().zip(val).map(|(&i, v)| coef[i] * v).sum::<f64>())
            .collect()
    }

    pub fn sample(&self, coef: &[f64], factor: f64, t: f64) -> FieldSample {
        FieldSample {
            t,
            points: self.points.clone(),
            values: self.eval(coef, factor),
        }
    }
}

/// Energy functionals evaluated by element quadrature with second derivatives.
#[derive(Clone, Debug)]
pub struct EnergyEvaluator {
    cache: QuadCache,
}

impl EnergyEvaluator {
    /// Uses `p + 1` points per direction unless `nodes` is given.
    pub fn new(patch: &Patch, nodes: Option<usize>) -> Result<Self, DiagnosticsError> {
        let p = patch
            .basis()
            .directions
            .iter()
            .map(|kv| kv.degree())
            .min()
            .unwrap_or(0);
        if p < 2 {
            return Err(DiagnosticsError::DegreeTooLow(p));
        }
        let k = patch.basis().continuity();
        if k < 1 {
            return Err(DiagnosticsError::NotSmooth(k));
        }
        let cache = QuadCache::new(patch, nodes.unwrap_or(patch.max_degree() + 1), 2)?;
        Ok(EnergyEvaluator { cache })
    }

    /// `|lap psi|^2 + |grad psi_t|^2` in `L^2`, full-numbering coefficients.
    pub fn laplacian_energy(&self, psi: &[f64], psi_dot: &[f64]) -> f64 {
        self.cache.integrate_scalar(|qp| {
            let l = qp.laplacian(psi);
            let g = qp.grad(psi_dot);
            l * l + g[0] * g[0] + g[1] * g[1]
        })
    }

    /// `||psi||_{H^2}^2 + ||psi_t||_{H^1}^2`.
    pub fn h2_h1_energy(&self, psi: &[f64], psi_dot: &[f64]) -> f64 {
        self.cache.integrate_scalar(|qp| {
            let u = qp.value(psi);
            let gu = qp.grad(psi);
            let h = qp.hessians.map_or([0.0; 3], |hs| {
                let mut acc = [0.0; 3];
                for (&i, d) in qp.dofs.iter().zip(hs) {
                    for c in 0..3 {
                        acc[c] += psi[i] * d[c];
                    }
                }
                acc
            });
            let w = qp.value(psi_dot);
            let gw = qp.grad(psi_dot);
            u * u + gu[0] * gu[0] + gu[1] * gu[1] + h[0] * h[0] + 2.0 * h[1] * h[1] + h[2] * h[2]
                + w * w + gw[0] * gw[0] + gw[1] * gw[1]
        })
    }
}

/// Times and energies of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl EnergyTrace {
    pub fn push(&mut self, t: f64, e: f64) {
        self.times.push(t);
        self.values.push(e);
    }

    pub fn normalized(&self) -> Vec<f64> {
        let e0 = self.values.first().copied().unwrap_or(1.0);
        self.values.iter().map(|e| if e0 != 0.0 { e / e0 } else { 0.0 }).collect()
    }

    /// Whether the trace never increases after index `from`, allowing a
    /// relative slack `rel_tol` of the current value.
    pub fn is_non_increasing_from(&self, from: usize, rel_tol: f64) -> bool {
        self.values[from.min(self.values.len())..]
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + rel_tol))
    }
}

/// Least-squares fit of `log E = a - omega t` over samples with `t` in
/// `[window.0, window.1]`. Returns `(omega, r_squared)`.
pub fn fit_decay_rate(trace: &EnergyTrace, window: (f64, f64)) -> Result<(f64, f64), DiagnosticsError> {
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (&t, &e) in trace.times.iter().zip(&trace.values) {
        if t < window.0 || t > window.1 {
            continue;
        }
        if !(e > 0.0) {
            return Err(DiagnosticsError::NonPositiveEnergy { t });
        }
        ts.push(t);
        ys.push(e.ln());
    }
    let n = ts.len();
    if n < 2 {
        return Err(DiagnosticsError::TooFewSamples(n));
    }
    let nf = n as f64;
    let tm = ts.iter().sum::<f64>() / nf;
    let ym = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = ts.iter().map(|t| (t - tm).powi(2)).sum();
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
    let syy: f64 = ys.iter().map(|y| (y - ym).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if syy <= 1e-300 * nf { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok((-slope, r2))
}

/// The decay window used by default: everything after the first 10% of the
/// trace duration.
pub fn default_decay_window(trace: &EnergyTrace) -> (f64, f64) {
    let t0 = trace.times.first().copied().unwrap_or(0.0);
    let t1 = trace.times.last().copied().unwrap_or(0.0);
    (t0 + 0.1 * (t1 - t0), t1)
}

/// Errors between two samples on the same points: `(max |a - b|, rms(a - b))`.
pub fn profile_error(sample: &FieldSample, reference: &FieldSample) -> Result<(f64, f64), DiagnosticsError> {
    if sample.points.len() != reference.points.len() || sample.points.is_empty() {
        return Err(DiagnosticsError::GridMismatch(sample.points.len(), reference.points.len()));
    }
    let scale = reference
        .points
        .iter()
        .fold(0.0f64, |m, p| m.max(p[0].abs()).max(p[1].abs()))
        .max(1.0);
    for (p, q) in sample.points.iter().zip(&reference.points) {
        if (p[0] - q[0]).abs() > 1e-9 * scale || (p[1] - q[1]).abs() > 1e-9 * scale {
            return Err(DiagnosticsError::GridMismatch(sample.points.len(), reference.points.len()));
        }
    }
    let mut max = 0.0f64;
    let mut sq = 0.0;
    for (a, b) in sample.values.iter().zip(&reference.values) {
        let e = (a - b).abs();
        max = max.max(e);
        sq += e * e;
    }
    Ok((max, (sq / sample.values.len() as f64).sqrt()))
}

/// `rms(a - b) / rms(b)` over shared points.
pub fn relative_l2_error(sample: &FieldSample, reference: &FieldSample) -> Result<f64, DiagnosticsError> {
    let (_, rms) = profile_error(sample, reference)?;
    let norm = (reference.values.iter().map(|v| v * v).sum::<f64>() / reference.values.len() as f64).sqrt();
    Ok(if norm > 0.0 { rms / norm } else { rms })
}

/// Largest absolute slope between consecutive samples along a line.
pub fn max_slope(sample: &FieldSample) -> f64 {
    sample
        .points
        .windows(2)
        .zip(sample.values.windows(2))
        .map(|(p, v)| {
            let d = ((p[1][0] - p[0][0]).powi(2) + (p[1][1] - p[0][1]).powi(2)).sqrt();
            if d > 0.0 {
                (v[1] - v[0]).abs() / d
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Largest absolute value and the point where it is attained.
pub fn peak(sample: &FieldSample) -> (f64, [f64; 2]) {
    sample
        .values
        .iter()
        .zip(&sample.points)
        .fold((0.0f64, [f64::NAN; 2]), |best, (&v, &p)| if v.abs() > best.0.abs() { (v, p) } else { best })
}

/// `x[,y],pressure_MPa` rows.
pub fn write_profile_csv<W: Write>(mut out: W, sample: &FieldSample, dim: usize) -> std::io::Result<()> {
    if dim == 1 {
        writeln!(out, "x,pressure_MPa")?;
    } else {
        writeln!(out, "x,y,pressure_MPa")?;
    }
    for (p, v) in sample.points.iter().zip(&sample.values) {
        if dim == 1 {
            writeln!(out, "{:.9e},{:.9e}", p[0], v * 1e-6)?;
        } else {
            writeln!(out, "{:.9e},{:.9e},{:.9e}", p[0], p[1], v * 1e-6)?;
        }
    }
    Ok(())
}

/// `t,E,E_over_E0` rows.
pub fn write_energy_csv<W: Write>(mut out: W, trace: &EnergyTrace) -> std::io::Result<()> {
    writeln!(out, "t,E,E_over_E0")?;
    for ((t, e), r) in trace.times.iter().zip(&trace.values).zip(trace.normalized()) {
        writeln!(out, "{t:.9e},{e:.9e},{r:.9e}")?;
    }
    Ok(())
}

/// `x,abs_error_MPa` rows for two pressure samples in Pa.
pub fn write_error_csv<W: Write>(mut out: W, sample: &FieldSample, reference: &FieldSample) -> std::io::Result<()> {
    writeln!(out, "x,abs_error_MPa")?;
    for ((p, a), b) in sample.points.iter().zip(&sample.values).zip(&reference.values) {
        writeln!(out, "{:.9e},{:.9e}", p[0], (a - b).abs() * 1e-6)?;
    }
    Ok(())
}

/// Reads a profile written by [`write_profile_csv`]; values come back in Pa.
pub fn read_profile_csv(text: &str) -> Result<FieldSample, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty profile file")?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let dim = match cols.as_slice() {
        ["x", "pressure_MPa"] => 1,
        ["x", "y", "pressure_MPa"] => 2,
        _ => return Err(format!("unexpected header '{header}'")),
    };
    let mut sample = FieldSample {
        t: f64::NAN,
        points: Vec::new(),
        values: Vec::new(),
    };
    for (no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", no + 2))?;
        if v.len() != dim + 1 {
            return Err(format!("line {}: expected {} columns", no + 2, dim + 1));
        }
        sample.points.push(if dim == 1 { [v[0], 0.0] } else { [v[0], v[1]] });
        sample.values.push(v[dim] * 1e6);
    }
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_interval_patch, Side};

    #[test]
    fn constant_velocity_pressure() {
        let p = make_interval_patch(1.0, 2, 5).unwrap();
        let two = vec![2.0; p.num_basis()];
        let pts = line_points([0.0, 0.0], [1.0, 0.0], 7);
        assert!(pressure(&p, &two, 1000.0, &pts).unwrap().iter().all(|&u| (u - 2000.0).abs() < 1e-9));
        let zero = vec![0.0; p.num_basis()];
        assert!(pressure(&p, &zero, 1000.0, &pts).unwrap().iter().all(|&u| u == 0.0));
        assert!(pressure(&p, &two, 1000.0, &[[1.5, 0.0]]).is_err());
        let s = Sampler::new(&p, pts.clone()).unwrap();
        let lin = p.interpolate(|x| 3.0 * x[0] - 1.0, &[]).unwrap();
        let direct = sample_field(&p, &lin, &pts).unwrap();
        for ((a, b), x) in s.eval(&lin, 1.0).iter().zip(&direct).zip(&pts) {
            assert!((a - b).abs() < 1e-12 && (a - (3.0 * x[0] - 1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn sine_laplacian_energy() {
        let l = 2.0;
        let p = make_interval_patch(l, 3, 64).unwrap();
        let pi = std::f64::consts::PI;
        let psi = p.interpolate(|x| (pi * x[0] / l).sin(), &[Side::Left, Side::Right]).unwrap();
        let zero = vec![0.0; psi.len()];
        let ev = EnergyEvaluator::new(&p, None).unwrap();
        let e = ev.laplacian_energy(&psi, &zero);
        let exact = (pi / l).powi(4) * l / 2.0;
        assert!((e - exact).abs() < 0.01 * exact, "{e} vs {exact}");
        assert_eq!(ev.laplacian_energy(&zero, &zero), 0.0);
        let scaled: Vec<f64> = psi.iter().map(|v| 3.0 * v).collect();
        assert!((ev.laplacian_energy(&scaled, &zero) - 9.0 * e).abs() < 1e-10 * e);
        // quadrature saturation
        let ev5 = EnergyEvaluator::new(&p, Some(6)).unwrap();
        assert!((ev5.laplacian_energy(&psi, &psi) - ev.laplacian_energy(&psi, &psi)).abs() < 1e-8 * e);
        assert!(matches!(
            EnergyEvaluator::new(&make_interval_patch(1.0, 1, 4).unwrap(), None),
            Err(DiagnosticsError::DegreeTooLow(1))
        ));
    }

    #[test]
    fn decay_fit() {
        let mut tr = EnergyTrace::default();
        for i in 0..50 {
            let t = i as f64 * 0.02;
            tr.push(t, (-3.0 * t).exp());
        }
        let (w, r2) = fit_decay_rate(&tr, (0.0, 1.0)).unwrap();
        assert!((w - 3.0).abs() < 1e-10 && (r2 - 1.0).abs() < 1e-10);
        let scaled = EnergyTrace {
            times: tr.times.clone(),
            values: tr.values.iter().map(|v| 7.5 * v).collect(),
        };
        assert!((fit_decay_rate(&scaled, (0.0, 1.0)).unwrap().0 - 3.0).abs() < 1e-10);
        let flat = EnergyTrace {
            times: tr.times.clone(),
            values: vec![2.0; 50],
        };
        assert!(fit_decay_rate(&flat, (0.0, 1.0)).unwrap().0.abs() < 1e-12);
        let mut bad = flat.clone();
        bad.values[10] = 0.0;
        assert!(fit_decay_rate(&bad, (0.0, 1.0)).is_err());
        assert!(fit_decay_rate(&flat, (5.0, 6.0)).is_err());
    }

    #[test]
    fn profile_errors() {
        let pts = line_points([0.0, 0.0], [1.0, 0.0], 5);
        let a = FieldSample { t: 0.0, points: pts.clone(), values: vec![1.0, 2.0, 3.0, 4.0, 5.0] };
        assert_eq!(profile_error(&a, &a).unwrap(), (0.0, 0.0));
        let b = FieldSample { values: a.values.iter().map(|v| v + 0.25).collect(), ..a.clone() };
        let (m, l2) = profile_error(&b, &a).unwrap();
        assert!((m - 0.25).abs() < 1e-15 && (l2 - 0.25).abs() < 1e-15);
        let c = FieldSample { points: line_points([0.0, 0.0], [2.0, 0.0], 5), ..a.clone() };
        assert!(profile_error(&c, &a).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = FieldSample {
            t: 0.0,
            points: line_points([0.0, 0.0], [0.4, 0.0], 4),
            values: vec![0.0, 1.5e6, -2.0e6, 3.25e8],
        };
        let mut buf = Vec::new();
        write_profile_csv(&mut buf, &s, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,pressure_MPa\n"));
        let back = read_profile_csv(&text).unwrap();
        for (a, b) in back.values.iter().zip(&s.values) {
            assert!((a - b).abs() < 1e-6 * b.abs().max(1.0));
        }
    }
}
