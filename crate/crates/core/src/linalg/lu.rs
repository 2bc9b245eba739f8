use std::collections::VecDeque;

use super::{CsrMatrix, LinalgError};

/// Reverse Cuthill–McKee ordering of a structurally symmetric pattern.
/// Returns `perm` with `perm[new] = old`. Deterministic: ties are broken by
/// degree and then by index.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    let mut nbrs: Vec<usize> = Vec::new();

    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unvisited node exists");
        let start = pseudo_peripheral(adj, seed);
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(adj[v].iter().copied().filter(|&u| !visited[u]));
            nbrs.sort_by_key(|&u| (degree[u], u));
            for &u in &nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Node of (near) maximal eccentricity in the component of `seed`, found by
/// repeated level-structure sweeps.
fn pseudo_peripheral(adj: &[Vec<usize>], seed: usize) -> usize {
    let mut current = seed;
    let mut depth = 0usize;
    for _ in 0..16 {
        let (levels, last_level) = bfs_levels(adj, current);
        let candidate = last_level
            .iter()
            .copied()
            .min_by_key(|&u| (adj[u].len(), u))
            .unwrap_or(current);
        if levels <= depth {
            break;
        }
        depth = levels;
        current = candidate;
    }
    current
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> (usize, Vec<usize>) {
    let mut seen = vec![false; adj.len()];
    seen[root] = true;
    let mut frontier = vec![root];
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &v in &frontier {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    next.push(u);
                }
            }
        }
        if next.is_empty() {
            return (depth, frontier);
        }
        depth += 1;
        frontier = next;
    }
}

/// LU factorization with partial pivoting of a banded matrix obtained from a
/// sparse one by reverse Cuthill–McKee reordering.
///
/// Row `i` of the working array stores columns `i - kl ..= i + kl + ku`; the
/// extra `kl` superdiagonals hold fill created by row interchanges.
#[derive(Clone, Debug)]
pub struct LuFactorization {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    upper: Vec<f64>,
    lower: Vec<f64>,
    pivots: Vec<usize>,
    /// last column holding a nonzero of `U` in each row
    row_end: Vec<usize>,
}

impl LuFactorization {
    pub fn new(a: &CsrMatrix) -> Result<Self, LinalgError> {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(&a.adjacency());
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let (mut kl, mut ku) = (0usize, 0usize);
        for i in 0..n {
            let (cols, _) = a.row(i);
            for &j in cols {
                let (pi, pj) = (inv[i], inv[j]);
                if pi > pj {
                    kl = kl.max(pi - pj);
                } else {
                    ku = ku.max(pj - pi);
                }
            }
        }
        let width = 2 * kl + ku + 1;
        let mut upper = vec![0.0; n * width];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            let pi = inv[i];
            for (&j, &v) in cols.iter().zip(vals) {
                let pj = inv[j];
                upper[pi * width + (pj + kl - pi)] = v;
            }
        }
        let mut lu = LuFactorization {
            n,
            kl,
            ku,
            width,
            perm,
            upper,
            lower: vec![0.0; n * kl.max(1)],
            pivots: vec![0; n],
            row_end: vec![0; n],
        };
        lu.factor(a)?;
        Ok(lu)
    }

    #[inline]
    fn at(&self, row: usize, col: usize) -> usize {
        row * self.width + (col + self.kl - row)
    }

    fn factor(&mut self, a: &CsrMatrix) -> Result<(), LinalgError> {
        let (n, kl, width) = (self.n, self.kl, self.width);
        let scale = a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * f64::EPSILON * 1e-3;
        let lstride = kl.max(1);
        let mut ext: Vec<usize> = (0..n)
            .map(|i| {
                let row = &self.upper[i * width..(i + 1) * width];
                let last = row.iter().rposition(|&v| v != 0.0).unwrap_or(kl);
                (last + i).saturating_sub(kl).max(i).min(n - 1)
            })
            .collect();
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut piv = k;
            let mut best = self.upper[self.at(k, k)].abs();
            for i in k + 1..=last {
                let v = self.upper[self.at(i, k)].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best <= tiny || !best.is_finite() {
                return Err(LinalgError::Singular { pivot: k });
            }
            self.pivots[k] = piv;
            if piv != k {
                let col_end = ext[k].max(ext[piv]);
                for j in k..=col_end {
                    let (x, y) = (self.at(k, j), self.at(piv, j));
                    self.upper.swap(x, y);
                }
                ext.swap(k, piv);
            }
            let col_end = ext[k];
            let d = self.upper[self.at(k, k)];
            // row k starts at column k - kl, row i at column i - kl
            let base_k = k * width + kl - k;
            let (head, tail) = self.upper.split_at_mut((k + 1) * width);
            let pivot_row = &head[base_k + k + 1..=base_k + col_end];
            debug_assert_eq!(base_k + k, k * width + kl);
            for i in k + 1..=last {
                // position of column k in row i, relative to the start of row k + 1
                let ik = (i - k - 1) * width + kl - (i - k);
                let l = tail[ik] / d;
                tail[ik] = 0.0;
                self.lower[k * lstride + (i - k - 1)] = l;
                if l == 0.0 {
                    continue;
                }
                let target = &mut tail[ik + 1..=ik + (col_end - k)];
                for (t, &u) in target.iter_mut().zip(pivot_row) {
                    *t -= l * u;
                }
                ext[i] = ext[i].max(col_end);
            }
        }
        self.row_end = ext;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Lower and upper bandwidths after reordering.
    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    /// Solves `A x = b`. Each call uses its own workspace, so concurrent solves
    /// against one factorization are fine.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if b.len() != self.n {
            return Err(LinalgError::DimensionMismatch {
                expected: self.n,
                found: b.len(),
            });
        }
        let (n, kl) = (self.n, self.kl);
        let lstride = kl.max(1);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                y.swap(k, p);
            }
            let yk = y[k];
            if yk != 0.0 {
                let last = (k + kl).min(n - 1);
                let l = &self.lower[k * lstride..k * lstride + (last - k)];
                for (yi, &li) in y[k + 1..=last].iter_mut().zip(l) {
                    *yi -= li * yk;
                }
            }
        }
        for k in (0..n).rev() {
            let col_end = self.row_end[k];
            let base = k * self.width + kl - k;
            let row = &self.upper[base + k + 1..=base + col_end];
            let s = y[k] - dot(row, &y[k + 1..=col_end]);
            y[k] = s / self.upper[base + k];
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
