use std::io::Write;

use super::LinalgError;

/// Compressed sparse row matrix. Column indices are sorted and unique per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix, summing duplicate `(row, col)` entries.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, LinalgError> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= n || c >= n) {
            return Err(LinalgError::IndexOutOfRange { row: r, col: c, n });
        }
        let mut counts = vec![0usize; n + 1];
        for &(r, _, _) in triplets {
            counts[r + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        // bucket by row, then sort and merge each row
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let k = next[r];
            cols[k] = c;
            vals[k] = v;
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..n {
            let (lo, hi) = (counts[r], counts[r + 1]);
            order.clear();
            order.extend(lo..hi);
            order.sort_by_key(|&k| cols[k]);
            for &k in &order {
                match col_idx.last() {
                    Some(&c) if c == cols[k] && col_idx.len() > row_ptr[r] => {
                        *values.last_mut().unwrap() += vals[k];
                    }
                    _ => {
                        col_idx.push(cols[k]);
                        values.push(vals[k]);
                    }
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    /// Same sparsity pattern with all values zero.
    pub fn zeros_like(&self) -> Self {
        CsrMatrix {
            values: vec![0.0; self.values.len()],
            ..self.clone()
        }
    }

    /// Adds `v` at `(i, j)`, which must already be part of the pattern.
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) -> Result<(), LinalgError> {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => {
                self.values[lo + k] += v;
                Ok(())
            }
            Err(_) => Err(LinalgError::NotInPattern { row: i, col: j }),
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y)?;
        Ok(y)
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) -> Result<(), LinalgError> {
        if x.len() != self.n || y.len() != self.n {
            return Err(LinalgError::DimensionMismatch {
                expected: self.n,
                found: if x.len() != self.n { x.len() } else { y.len() },
            });
        }
        for (i, yi) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            *yi = self.col_idx[lo..hi]
                .iter()
                .zip(&self.values[lo..hi])
                .map(|(&j, &a)| a * x[j])
                .sum();
        }
        Ok(())
    }

    /// `y += alpha * A x` without allocation.
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) -> Result<(), LinalgError> {
        if x.len() != self.n || y.len() != self.n {
            return Err(LinalgError::DimensionMismatch {
                expected: self.n,
                found: x.len().min(y.len()),
            });
        }
        for (i, yi) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let s: f64 = self.col_idx[lo..hi]
                .iter()
                .zip(&self.values[lo..hi])
                .map(|(&j, &a)| a * x[j])
                .sum();
            *yi += alpha * s;
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        CsrMatrix {
            values: self.values.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    /// `sum_k c_k A_k` over matrices of equal dimension. The result pattern is
    /// the union of the input patterns.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Result<Self, LinalgError> {
        let n = terms.first().map_or(0, |t| t.1.n);
        if let Some(t) = terms.iter().find(|t| t.1.n != n) {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                found: t.1.n,
            });
        }
        if terms.windows(2).all(|w| w[0].1.same_pattern(w[1].1)) {
            if let Some(&(_, first)) = terms.first() {
                let mut values = vec![0.0; first.values.len()];
                for &(c, m) in terms {
                    for (acc, v) in values.iter_mut().zip(&m.values) {
                        *acc += c * v;
                    }
                }
                return Ok(CsrMatrix {
                    values,
                    ..first.clone()
                });
            }
        }
        let mut trip = Vec::new();
        for &(c, m) in terms {
            for i in 0..m.n {
                let (cols, vals) = m.row(i);
                trip.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, c * v)));
            }
        }
        Self::from_triplets(n, &trip)
    }

    pub fn same_pattern(&self, other: &CsrMatrix) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    /// Principal submatrix on the given (sorted, unique) index set.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut row_ptr = Vec::with_capacity(keep.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for &old in keep {
            let (cols, vals) = self.row(old);
            for (&j, &v) in cols.iter().zip(vals) {
                if map[j] != usize::MAX {
                    col_idx.push(map[j]);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n: keep.len(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn is_structurally_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            let (cols, _) = self.row(i);
            cols.iter().all(|&j| self.row(j).0.binary_search(&i).is_ok())
        })
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        d
    }

    /// Writes one `row col value` line per stored entry.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(out, "{i} {j} {v:.17e}")?;
            }
        }
        Ok(())
    }

    /// Adjacency lists of the structural pattern, diagonal excluded.
    /// Symmetrised off-diagonal adjacency lists, sorted.
    pub(crate) fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for &j in self.row(i).0 {
                if j != i {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_matvec(d: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        d.iter().map(|row| dot(row, x)).collect()
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 0), 3.0);
    }

    #[test]
    fn empty_is_zero_operator() {
        let m = CsrMatrix::from_triplets(3, &[]).unwrap();
        assert_eq!(m.matvec(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_and_errors() {
        let i = CsrMatrix::identity(4);
        let x = vec![1.0, -2.0, 3.5, 0.25];
        assert_eq!(i.matvec(&x).unwrap(), x);
        assert!(matches!(
            i.matvec(&[1.0]),
            Err(LinalgError::DimensionMismatch { expected: 4, found: 1 })
        ));
        assert!(matches!(
            CsrMatrix::from_triplets(2, &[(2, 0, 1.0)]),
            Err(LinalgError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn restrict_and_combination() {
        let m = CsrMatrix::from_triplets(3, &[(0, 0, 1.0), (1, 1, 2.0), (2, 2, 3.0), (0, 2, 5.0)]).unwrap();
        let r = m.restrict(&[0, 2]);
        assert_eq!(r.to_dense(), vec![vec![1.0, 5.0], vec![0.0, 3.0]]);
        let c = CsrMatrix::linear_combination(&[(2.0, &m), (1.0, &CsrMatrix::identity(3))]).unwrap();
        assert_eq!(c.get(0, 0), 3.0);
        assert_eq!(c.get(0, 2), 10.0);
        assert_eq!(c.get(2, 2), 7.0);
    }

    #[test]
    fn triplet_dump_format() {
        let m = CsrMatrix::from_triplets(2, &[(1, 0, 0.5)]).unwrap();
        let mut buf = Vec::new();
        m.write_triplets(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let parts: Vec<&str> = s.split_whitespace().collect();
        assert_eq!(parts[0], "1");
        assert_eq!(parts[1], "0");
        assert_eq!(parts[2].parse::<f64>().unwrap(), 0.5);
    }

    proptest! {
        #[test]
        fn matvec_matches_dense(
            n in 1usize..60,
            raw in prop::collection::vec((0usize..1000, 0usize..1000, -10.0f64..10.0), 0..300),
            xs in prop::collection::vec(-5.0f64..5.0, 60),
        ) {
            let trip: Vec<_> = raw.iter().map(|&(r, c, v)| (r % n, c % n, v)).collect();
            let m = CsrMatrix::from_triplets(n, &trip).unwrap();
            let mut dense = vec![vec![0.0; n]; n];
            for &(r, c, v) in &trip {
                dense[r][c] += v;
            }
            let x = &xs[..n];
            let y = m.matvec(x).unwrap();
            let yd = dense_matvec(&dense, x);
            for (a, b) in y.iter().zip(&yd) {
                prop_assert!((a - b).abs() <= 1e-13 * (1.0 + b.abs()) * 10.0);
            }
            for i in 0..n {
                let (cols, _) = m.row(i);
                prop_assert!(cols.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
