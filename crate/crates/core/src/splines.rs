//! Univariate B-spline bases on open knot vectors.
//!
//! Evaluation is span-local: for a parametric coordinate only the `p + 1`
//! functions supported there are computed, using the Cox–de Boor recursion
//! and its derivative form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SplineError {
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("coordinate {x} lies outside the knot range [{start}, {end}]")]
    OutOfDomain { x: f64, start: f64, end: f64 },

    #[error("derivative order {order} exceeds the basis degree {degree}")]
    UnsupportedOrder { order: usize, degree: usize },
}

/// Open knot vector together with its polynomial degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

/// The `p + 1` basis values active at a coordinate. Entry `k` belongs to the
/// global basis index `first + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisValues {
    pub first: usize,
    pub values: Vec<f64>,
}

impl BasisValues {
    pub fn indexed(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(k, &v)| (self.first + k, v))
    }
}

/// Values and derivatives of the active functions: `rows[d][k]` is the
/// `d`-th derivative of basis function `first + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisDerivs {
    pub first: usize,
    pub rows: Vec<Vec<f64>>,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self, SplineError> {
        let p = degree;
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(SplineError::InvalidKnots("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[0] > w[1]) {
            return Err(SplineError::InvalidKnots("knots must be non-decreasing".into()));
        }
        if knots.len() < 2 * (p + 1) {
            return Err(SplineError::InvalidKnots(format!(
                "degree {p} needs at least {} knots, got {}",
                2 * (p + 1),
                knots.len()
            )));
        }
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if first >= last {
            return Err(SplineError::InvalidKnots("knot range has zero width".into()));
        }
        let lead = knots.iter().take_while(|&&k| k == first).count();
        let trail = knots.iter().rev().take_while(|&&k| k == last).count();
        if lead != p + 1 || trail != p + 1 {
            return Err(SplineError::InvalidKnots(format!(
                "end knots must be repeated exactly {} times (found {lead} and {trail})",
                p + 1
            )));
        }
        let kv = KnotVector { knots, degree };
        // Interior multiplicity above p would break the basis apart.
        for (_, mult) in kv.interior_breaks() {
            if mult > p {
                return Err(SplineError::InvalidKnots(format!(
                    "interior knot multiplicity {mult} exceeds degree {p}"
                )));
            }
        }
        Ok(kv)
    }

    /// Uniform open knot vector with simple interior knots (maximal `C^{p-1}`
    /// regularity).
    pub fn uniform(degree: usize, n_elements: usize, start: f64, end: f64) -> Result<Self, SplineError> {
        Self::uniform_with_multiplicity(degree, n_elements, start, end, 1)
    }

    /// Uniform open knot vector whose interior breakpoints are repeated
    /// `multiplicity` times, giving `C^{p - multiplicity}` continuity.
    pub fn uniform_with_multiplicity(
        degree: usize,
        n_elements: usize,
        start: f64,
        end: f64,
        multiplicity: usize,
    ) -> Result<Self, SplineError> {
        if n_elements == 0 {
            return Err(SplineError::InvalidKnots("at least one element is required".into()));
        }
        if multiplicity == 0 || multiplicity > degree.max(1) {
            return Err(SplineError::InvalidKnots(format!(
                "interior multiplicity {multiplicity} invalid for degree {degree}"
            )));
        }
        let mut knots = vec![start; degree + 1];
        let h = (end - start) / n_elements as f64;
        for e in 1..n_elements {
            let k = start + h * e as f64;
            knots.extend(std::iter::repeat(k).take(multiplicity));
        }
        knots.extend(std::iter::repeat(end).take(degree + 1));
        Self::new(knots, degree)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Interior breakpoints with their multiplicities.
    pub fn interior_breaks(&self) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for &k in &self.knots {
            if k == self.start() || k == self.end() {
                continue;
            }
            match out.last_mut() {
                Some((v, m)) if *v == k => *m += 1,
                _ => out.push((k, 1)),
            }
        }
        out
    }

    /// Global continuity order `p - max interior multiplicity`; `p - 1` when
    /// all interior knots are simple.
    pub fn continuity(&self) -> i64 {
        let max_mult = self.interior_breaks().iter().map(|b| b.1).max().unwrap_or(1);
        self.degree as i64 - max_mult as i64
    }

    /// Knot-span indices `i` with `knots[i] < knots[i + 1]`, i.e. the elements.
    pub fn nonzero_spans(&self) -> Vec<usize> {
        (self.degree..self.num_basis())
            .filter(|&i| self.knots[i] < self.knots[i + 1])
            .collect()
    }

    /// Span index `i` with `knots[i] <= x < knots[i + 1]`; the right end of the
    /// range belongs to the last non-empty span.
    pub fn find_span(&self, x: f64) -> Result<usize, SplineError> {
        if !(x >= self.start() && x <= self.end()) {
            return Err(SplineError::OutOfDomain {
                x,
                start: self.start(),
                end: self.end(),
            });
        }
        let n = self.num_basis();
        if x >= self.knots[n] {
            return Ok(n - 1);
        }
        let (mut lo, mut hi) = (self.degree, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(lo)
    }

    pub fn eval_basis(&self, x: f64) -> Result<BasisValues, SplineError> {
        let span = self.find_span(x)?;
        let mut rows = self.derivs_in_span(span, x, 0);
        Ok(BasisValues {
            first: span - self.degree,
            values: rows.swap_remove(0),
        })
    }

    pub fn eval_basis_derivs(&self, x: f64, order: usize) -> Result<BasisDerivs, SplineError> {
        if order > self.degree {
            return Err(SplineError::UnsupportedOrder {
                order,
                degree: self.degree,
            });
        }
        let span = self.find_span(x)?;
        Ok(BasisDerivs {
            first: span - self.degree,
            rows: self.derivs_in_span(span, x, order),
        })
    }

    /// Cox–de Boor values and derivatives of the functions active in `span`.
    /// Derivative orders above the degree come back as zero rows.
    pub fn derivs_in_span(&self, span: usize, x: f64, order: usize) -> Vec<Vec<f64>> {
        let p = self.degree;
        let u = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                // lower triangle holds knot differences
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![0.0; p + 1]; order + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let top = order.min(p);
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=top {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=top {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    /// Greville abscissae: averages of `p` consecutive knots.
    pub fn greville_points(&self) -> Vec<f64> {
        let p = self.degree;
        if p == 0 {
            return (0..self.num_basis())
                .map(|i| 0.5 * (self.knots[i] + self.knots[i + 1]))
                .collect();
        }
        (0..self.num_basis())
            .map(|i| self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64)
            .collect()
    }
}

/// Per-direction knot vectors of a (tensor-product) spline space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub directions: Vec<KnotVector>,
}

impl BasisSpec {
    pub fn new(directions: Vec<KnotVector>) -> Self {
        BasisSpec { directions }
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.directions.iter().map(KnotVector::num_basis).collect()
    }

    pub fn num_basis(&self) -> usize {
        self.counts().iter().product()
    }

    pub fn continuity(&self) -> i64 {
        self.directions.iter().map(KnotVector::continuity).min().unwrap_or(0)
    }

    pub fn is_max_regular(&self) -> bool {
        self.directions
            .iter()
            .all(|kv| kv.interior_breaks().iter().all(|&(_, m)| m == 1))
    }
}
