//! Sparse Cholesky factorization for the Newton system.
//!
//! The sparsity pattern is fixed for a whole solve (it follows from which
//! variables share a block), so the ordering and the symbolic factor are
//! computed once and the numeric factorization is repeated every iteration.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

/// Symbolic structure of `L` in a fill-reducing ordering.
#[derive(Debug, Clone)]
pub struct SymbolicCholesky {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `inv[old] = new`
    inv: Vec<usize>,
    /// Column starts into `rows`/values (CSC, diagonal first in each column).
    col_ptr: Vec<usize>,
    /// Row indices (permuted numbering), ascending within each column.
    rows: Vec<usize>,
}

impl SymbolicCholesky {
    /// Builds the ordering and fill pattern from the off-diagonal adjacency of
    /// an `n × n` symmetric matrix (each edge given once or twice, any order).
    pub fn analyze(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (a, b) in edges {
            if a != b {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        // minimum degree on the explicit elimination graph; ties by index
        let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
            (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
        let mut eliminated = vec![false; n];
        let mut perm = Vec::with_capacity(n);
        let mut patterns: Vec<Vec<usize>> = Vec::with_capacity(n);
        while let Some(Reverse((deg, v))) = heap.pop() {
            if eliminated[v] || deg != adj[v].len() {
                continue;
            }
            eliminated[v] = true;
            perm.push(v);
            let nbrs: Vec<usize> = adj[v].iter().copied().collect();
            for &u in &nbrs {
                adj[u].remove(&v);
            }
            for (i, &u) in nbrs.iter().enumerate() {
                for &w in &nbrs[i + 1..] {
                    adj[u].insert(w);
                    adj[w].insert(u);
                }
            }
            for &u in &nbrs {
                heap.push(Reverse((adj[u].len(), u)));
            }
            adj[v].clear();
            patterns.push(nbrs);
        }
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut rows = Vec::new();
        col_ptr.push(0);
        for (j, pat) in patterns.iter().enumerate() {
            rows.push(j);
            let mut r: Vec<usize> = pat.iter().map(|&o| inv[o]).collect();
            r.sort_unstable();
            debug_assert!(r.iter().all(|&i| i > j));
            rows.extend(r);
            col_ptr.push(rows.len());
        }
        Self {
            n,
            perm,
            inv,
            col_ptr,
            rows,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    /// `(row, col)` in original numbering for every storage slot.
    pub fn slot_coords(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.rows.len());
        for j in 0..self.n {
            for &r in &self.rows[self.col_ptr[j]..self.col_ptr[j + 1]] {
                out.push((self.perm[r], self.perm[j]));
            }
        }
        out
    }

    /// Storage slot of entry `(a, b)` in original numbering, if it is in the pattern.
    pub fn slot(&self, a: usize, b: usize) -> Option<usize> {
        let (pa, pb) = (self.inv[a], self.inv[b]);
        let (row, col) = if pa >= pb { (pa, pb) } else { (pb, pa) };
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        self.rows[range.clone()]
            .binary_search(&row)
            .ok()
            .map(|k| range.start + k)
    }

    /// Factors the matrix whose lower-triangle values are stored in `values`
    /// (layout given by [`slot`](Self::slot)); `shift` is added to the diagonal.
    /// Returns `None` when a pivot is not positive.
    pub fn factor(&self, values: &[f64], shift: f64) -> Option<NumericCholesky<'_>> {
        let mut l = values.to_vec();
        for j in 0..self.n {
            l[self.col_ptr[j]] += shift;
        }
        for j in 0..self.n {
            let start = self.col_ptr[j];
            let end = self.col_ptr[j + 1];
            let d = l[start];
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[start] = d;
            for v in &mut l[start + 1..end] {
                *v /= d;
            }
            // right-looking update of the trailing columns
            for a in start + 1..end {
                let ka = self.rows[a];
                let la = l[a];
                if la == 0.0 {
                    continue;
                }
                let kstart = self.col_ptr[ka];
                let kend = self.col_ptr[ka + 1];
                let mut pos = kstart;
                for b in a..end {
                    let row = self.rows[b];
                    // rows of column j below `a` are a subset of column ka's pattern
                    while self.rows[pos] < row {
                        pos += 1;
                    }
                    debug_assert!(pos < kend && self.rows[pos] == row);
                    l[pos] -= l[b] * la;
                }
            }
        }
        Some(NumericCholesky { sym: self, l })
    }
}

pub struct NumericCholesky<'a> {
    sym: &'a SymbolicCholesky,
    l: Vec<f64>,
}

impl NumericCholesky<'_> {
    /// Solves `A x = b` (original numbering).
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = self.sym;
        let mut x: Vec<f64> = s.perm.iter().map(|&o| b[o]).collect();
        for j in 0..s.n {
            let start = s.col_ptr[j];
            x[j] /= self.l[start];
            let xj = x[j];
            for k in start + 1..s.col_ptr[j + 1] {
                x[s.rows[k]] -= self.l[k] * xj;
            }
        }
        for j in (0..s.n).rev() {
            let start = s.col_ptr[j];
            let mut acc = x[j];
            for k in start + 1..s.col_ptr[j + 1] {
                acc -= self.l[k] * x[s.rows[k]];
            }
            x[j] = acc / self.l[start];
        }
        let mut out = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}
