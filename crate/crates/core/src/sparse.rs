//! Fixed-pattern CSR operators and a direct SPD solver.
//!
//! All global sparse operators share one storage discipline: the structure
//! (row offsets and column indices) is built once from connectivity and
//! never changes; assemblies update values only. The SPD solver mirrors
//! the analyze / factorize / refactorize / solve lifecycle of a vendor
//! direct solver: symbolic work (ordering, elimination tree, factor
//! allocation) happens exactly once per pattern, numeric refactorization
//! reuses every allocation.

use crate::error::{Error, Result};
use std::sync::Arc;

/// Immutable CSR structure shared by all value arrays assembled on it.
#[derive(Debug, PartialEq, Eq)]
pub struct CsrPattern {
    n_rows: usize,
    n_cols: usize,
    offsets: Vec<usize>,
    columns: Vec<usize>,
}

impl CsrPattern {
    /// Builds a square pattern from a stream of `(row, col)` pairs.
    ///
    /// Every pair is mirrored so the result is structurally symmetric;
    /// pairs are encoded as 64-bit keys, sorted, and deduplicated.
    pub fn build(pairs: impl IntoIterator<Item = (usize, usize)>, n_rows: usize) -> Result<Self> {
        let mut keys: Vec<u64> = Vec::new();
        for (r, c) in pairs {
            check_index(r, n_rows)?;
            check_index(c, n_rows)?;
            keys.push(encode(r, c));
            keys.push(encode(c, r));
        }
        Self::from_keys(keys, n_rows, n_rows)
    }

    /// Rectangular variant without mirroring (e.g. constraint Jacobians).
    pub fn build_rect(
        pairs: impl IntoIterator<Item = (usize, usize)>,
        n_rows: usize,
        n_cols: usize,
    ) -> Result<Self> {
        let mut keys: Vec<u64> = Vec::new();
        for (r, c) in pairs {
            check_index(r, n_rows)?;
            check_index(c, n_cols)?;
            keys.push(encode(r, c));
        }
        Self::from_keys(keys, n_rows, n_cols)
    }

    fn from_keys(mut keys: Vec<u64>, n_rows: usize, n_cols: usize) -> Result<Self> {
        keys.sort_unstable();
        keys.dedup();
        let mut offsets = vec![0usize; n_rows + 1];
        for &k in &keys {
            offsets[(k >> 32) as usize + 1] += 1;
        }
        for r in 0..n_rows {
            offsets[r + 1] += offsets[r];
        }
        let columns = keys.iter().map(|&k| (k & 0xffff_ffff) as usize).collect();
        Ok(CsrPattern {
            n_rows,
            n_cols,
            offsets,
            columns,
        })
    }

    /// Expands each coefficient pair `(I, J)` into its full 3x3 DOF block.
    pub fn lift_to_dof(&self) -> CsrPattern {
        let mut offsets = vec![0usize; 3 * self.n_rows + 1];
        let mut columns = Vec::with_capacity(9 * self.nnz());
        for i in 0..self.n_rows {
            let row_cols = self.row_cols(i);
            for d in 0..3 {
                for &j in row_cols {
                    for e in 0..3 {
                        columns.push(3 * j + e);
                    }
                }
                offsets[3 * i + d + 1] = columns.len();
            }
        }
        CsrPattern {
            n_rows: 3 * self.n_rows,
            n_cols: 3 * self.n_cols,
            offsets,
            columns,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.columns.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn row_cols(&self, r: usize) -> &[usize] {
        &self.columns[self.offsets[r]..self.offsets[r + 1]]
    }

    /// Position of `(row, col)` in the value array, if present.
    pub fn nnz_index(&self, row: usize, col: usize) -> Option<usize> {
        let lo = self.offsets[row];
        let hi = self.offsets[row + 1];
        self.columns[lo..hi]
            .binary_search(&col)
            .ok()
            .map(|k| lo + k)
    }

    pub fn has_full_diagonal(&self) -> bool {
        (0..self.n_rows.min(self.n_cols)).all(|i| self.nnz_index(i, i).is_some())
    }
}

fn encode(r: usize, c: usize) -> u64 {
    ((r as u64) << 32) | c as u64
}

fn check_index(i: usize, bound: usize) -> Result<()> {
    if i >= bound {
        return Err(Error::usage(format!("index {i} out of bounds {bound}")));
    }
    if i >= (1usize << 32) {
        return Err(Error::usage(format!("index {i} overflows the 32-bit key half")));
    }
    Ok(())
}

/// CSR matrix with an immutable shared structure and mutable values.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pattern: Arc<CsrPattern>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<CsrPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        CsrMatrix { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn n_rows(&self) -> usize {
        self.pattern.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.pattern.n_cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_zero(&mut self) {
        self.values.fill(0.0);
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern
            .nnz_index(row, col)
            .map_or(0.0, |k| self.values[k])
    }

    /// Adds into an entry that must exist in the pattern.
    pub fn add_at(&mut self, row: usize, col: usize, val: f64) -> Result<()> {
        match self.pattern.nnz_index(row, col) {
            Some(k) => {
                self.values[k] += val;
                Ok(())
            }
            None => Err(Error::Structural(format!(
                "entry ({row}, {col}) is outside the fixed pattern"
            ))),
        }
    }

    /// `y = A x`.
    pub fn spmv(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.n_cols() || y.len() != self.n_rows() {
            return Err(Error::usage(format!(
                "spmv dimension mismatch: A is {}x{}, x has {}, y has {}",
                self.n_rows(),
                self.n_cols(),
                x.len(),
                y.len()
            )));
        }
        let p = &*self.pattern;
        for r in 0..p.n_rows {
            let mut acc = 0.0;
            for k in p.offsets[r]..p.offsets[r + 1] {
                acc += self.values[k] * x[p.columns[k]];
            }
            y[r] = acc;
        }
        Ok(())
    }

    /// Row `r` dotted with `x`, useful for per-DOF gradient kernels.
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let p = &*self.pattern;
        let mut acc = 0.0;
        for k in p.offsets[r]..p.offsets[r + 1] {
            acc += self.values[k] * x[p.columns[k]];
        }
        acc
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Fill-reducing ordering strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrderingKind {
    /// Quotient-graph minimum degree (default).
    #[default]
    MinDegree,
    /// Identity permutation, kept as a debugging escape hatch.
    Natural,
}

/// Numeric backend selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveBackend {
    /// Dense Cholesky below [`DENSE_FALLBACK_DOFS`], sparse otherwise.
    #[default]
    Auto,
    Sparse,
    Dense,
}

/// Systems smaller than this take the dense path under `Auto`.
pub const DENSE_FALLBACK_DOFS: usize = 600;

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    pub ordering: OrderingKind,
    pub backend: SolveBackend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FactorState {
    Analyzed,
    Factored,
}

/// Direct SPD solver context bound to exactly one CSR pattern.
///
/// `analyze` is run once; `factorize` performs the first numeric
/// factorization; `refactorize` repeats the numeric pass reusing every
/// allocation made during analysis. `solve` applies the triangular
/// factors. The matrix is stored in full; the factorizer reads the upper
/// triangle through the permutation.
#[derive(Debug)]
pub struct SpdSolveContext {
    pattern: Arc<CsrPattern>,
    n: usize,
    state: FactorState,
    backend_dense: bool,
    // permutation: perm[k] = original index of the k-th pivot
    perm: Vec<usize>,
    iperm: Vec<usize>,
    // sparse factor L (CSC, diagonal entry first in each column)
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    parent: Vec<usize>,
    // scratch
    col_next: Vec<usize>,
    stack: Vec<usize>,
    flag: Vec<usize>,
    x: Vec<f64>,
    work: Vec<f64>,
    // dense factor (lower triangular, row-major)
    dense: Vec<f64>,
}

const NONE: usize = usize::MAX;

impl SpdSolveContext {
    /// One-time symbolic analysis of a structurally symmetric pattern
    /// with a full diagonal.
    pub fn analyze(pattern: &Arc<CsrPattern>, opts: SolveOptions) -> Result<Self> {
        let n = pattern.n_rows();
        if pattern.n_cols() != n {
            return Err(Error::Structural("analyze requires a square pattern".into()));
        }
        if !pattern.has_full_diagonal() {
            let row = (0..n)
                .find(|&i| pattern.nnz_index(i, i).is_none())
                .unwrap_or(0);
            return Err(Error::Structural(format!(
                "pattern is missing the diagonal entry at row {row}"
            )));
        }
        let dense = match opts.backend {
            SolveBackend::Dense => true,
            SolveBackend::Sparse => false,
            SolveBackend::Auto => n < DENSE_FALLBACK_DOFS,
        };
        if dense {
            return Ok(SpdSolveContext {
                pattern: Arc::clone(pattern),
                n,
                state: FactorState::Analyzed,
                backend_dense: true,
                perm: (0..n).collect(),
                iperm: (0..n).collect(),
                lp: Vec::new(),
                li: Vec::new(),
                lx: Vec::new(),
                parent: Vec::new(),
                col_next: Vec::new(),
                stack: Vec::new(),
                flag: Vec::new(),
                x: vec![0.0; n],
                work: vec![0.0; n],
                dense: vec![0.0; n * n],
            });
        }

        let perm = match opts.ordering {
            OrderingKind::Natural => (0..n).collect::<Vec<_>>(),
            OrderingKind::MinDegree => min_degree_ordering(pattern),
        };
        let mut iperm = vec![0usize; n];
        for (k, &old) in perm.iter().enumerate() {
            iperm[old] = k;
        }

        // Elimination tree of the permuted matrix (Liu's algorithm with
        // path compression through an ancestor array).
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &col in pattern.row_cols(perm[k]) {
                let mut i = iperm[col];
                while i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                        break;
                    }
                    i = next;
                }
            }
        }

        // Column counts of L via a symbolic up-looking pass.
        let mut counts = vec![1usize; n]; // diagonal
        let mut flag = vec![NONE; n];
        let stack = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for &col in pattern.row_cols(perm[k]) {
                let mut i = iperm[col];
                if i >= k {
                    continue;
                }
                while flag[i] != k {
                    flag[i] = k;
                    counts[i] += 1; // L(k, i) exists
                    i = parent[i];
                    if i == NONE {
                        break;
                    }
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for j in 0..n {
            lp[j + 1] = lp[j] + counts[j];
        }
        let nnz_l = lp[n];

        Ok(SpdSolveContext {
            pattern: Arc::clone(pattern),
            n,
            state: FactorState::Analyzed,
            backend_dense: false,
            perm,
            iperm,
            lp,
            li: vec![0usize; nnz_l],
            lx: vec![0.0; nnz_l],
            parent,
            col_next: vec![0usize; n],
            stack,
            flag: vec![NONE; n],
            x: vec![0.0; n],
            work: vec![0.0; n],
            dense: Vec::new(),
        })
    }

    pub fn analyze_default(pattern: &Arc<CsrPattern>) -> Result<Self> {
        Self::analyze(pattern, SolveOptions::default())
    }

    pub fn is_dense_backend(&self) -> bool {
        self.backend_dense
    }

    pub fn is_factored(&self) -> bool {
        self.state == FactorState::Factored
    }

    pub fn factor_nnz(&self) -> usize {
        if self.backend_dense {
            self.n * (self.n + 1) / 2
        } else {
            self.lp[self.n]
        }
    }

    fn check_matrix(&self, a: &CsrMatrix) -> Result<()> {
        if !Arc::ptr_eq(a.pattern(), &self.pattern) {
            return Err(Error::Structural(
                "matrix structure is not the analyzed pattern object".into(),
            ));
        }
        Ok(())
    }

    /// First numeric factorization.
    pub fn factorize(&mut self, a: &CsrMatrix) -> Result<()> {
        self.check_matrix(a)?;
        self.numeric(a)?;
        self.state = FactorState::Factored;
        Ok(())
    }

    /// Numeric refactorization on the same pattern. Rejected before the
    /// first `factorize`; performs no allocation.
    pub fn refactorize(&mut self, a: &CsrMatrix) -> Result<()> {
        if self.state != FactorState::Factored {
            return Err(Error::State(
                "refactorize called before the first factorize".into(),
            ));
        }
        self.check_matrix(a)?;
        self.numeric(a)
    }

    fn numeric(&mut self, a: &CsrMatrix) -> Result<()> {
        if self.backend_dense {
            return self.numeric_dense(a);
        }
        let n = self.n;
        let pat = &*self.pattern;
        let vals = a.values();
        self.col_next.copy_from_slice(&self.lp[..n]);
        self.flag.fill(NONE);
        self.x[..n].fill(0.0);
        for k in 0..n {
            // Scatter the upper-triangle part of permuted row k and build
            // the reach set (pattern of row k of L) in topological order.
            self.flag[k] = k;
            let mut top = n;
            let row = self.perm[k];
            for p in pat.offsets[row]..pat.offsets[row + 1] {
                let i0 = self.iperm[pat.columns[p]];
                if i0 > k {
                    continue;
                }
                self.x[i0] = vals[p];
                let mut len = 0;
                let mut i = i0;
                while self.flag[i] != k {
                    self.flag[i] = k;
                    self.stack[len] = i;
                    len += 1;
                    i = self.parent[i];
                    if i == NONE {
                        break;
                    }
                }
                // push the path in reverse so `stack[top..]` is ascending
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    self.stack[top] = self.stack[len];
                }
            }
            let mut d = self.x[k];
            self.x[k] = 0.0;
            while top < n {
                let i = self.stack[top];
                top += 1;
                let lii = self.lx[self.lp[i]];
                let lki = self.x[i] / lii;
                self.x[i] = 0.0;
                for p in self.lp[i] + 1..self.col_next[i] {
                    self.x[self.li[p]] -= self.lx[p] * lki;
                }
                d -= lki * lki;
                let p = self.col_next[i];
                self.col_next[i] += 1;
                self.li[p] = k;
                self.lx[p] = lki;
            }
            if d <= 0.0 || !d.is_finite() {
                self.state = FactorState::Analyzed;
                return Err(Error::NotPositiveDefinite {
                    row: self.perm[k],
                    pivot: d,
                });
            }
            let p = self.col_next[k];
            self.col_next[k] += 1;
            self.li[p] = k;
            self.lx[p] = d.sqrt();
        }
        Ok(())
    }

    fn numeric_dense(&mut self, a: &CsrMatrix) -> Result<()> {
        let n = self.n;
        self.dense.fill(0.0);
        let pat = &*self.pattern;
        let vals = a.values();
        for r in 0..n {
            for p in pat.offsets[r]..pat.offsets[r + 1] {
                let c = pat.columns[p];
                if c <= r {
                    self.dense[r * n + c] = vals[p];
                }
            }
        }
        for j in 0..n {
            let mut d = self.dense[j * n + j];
            for k in 0..j {
                let l = self.dense[j * n + k];
                d -= l * l;
            }
            if d <= 0.0 || !d.is_finite() {
                self.state = FactorState::Analyzed;
                return Err(Error::NotPositiveDefinite { row: j, pivot: d });
            }
            let djj = d.sqrt();
            self.dense[j * n + j] = djj;
            for i in j + 1..n {
                let mut s = self.dense[i * n + j];
                for k in 0..j {
                    s -= self.dense[i * n + k] * self.dense[j * n + k];
                }
                self.dense[i * n + j] = s / djj;
            }
        }
        Ok(())
    }

    /// Solves `A x = rhs` using the current factor.
    pub fn solve(&mut self, rhs: &[f64], out: &mut [f64]) -> Result<()> {
        if self.state != FactorState::Factored {
            return Err(Error::State("solve called before factorize".into()));
        }
        if rhs.len() != self.n || out.len() != self.n {
            return Err(Error::usage("solve dimension mismatch"));
        }
        let n = self.n;
        if self.backend_dense {
            let l = &self.dense;
            let y = &mut self.work;
            for i in 0..n {
                let mut s = rhs[i];
                for k in 0..i {
                    s -= l[i * n + k] * y[k];
                }
                y[i] = s / l[i * n + i];
            }
            for i in (0..n).rev() {
                let mut s = y[i];
                for k in i + 1..n {
                    s -= l[k * n + i] * y[k];
                }
                out[i] = s / l[i * n + i];
                y[i] = out[i];
            }
            return Ok(());
        }
        // permute rhs, forward solve L y = P rhs, back solve L^T z = y,
        // un-permute
        let y = &mut self.work;
        for k in 0..n {
            y[k] = rhs[self.perm[k]];
        }
        for j in 0..n {
            let yj = y[j] / self.lx[self.lp[j]];
            y[j] = yj;
            for p in self.lp[j] + 1..self.lp[j + 1] {
                y[self.li[p]] -= self.lx[p] * yj;
            }
        }
        for j in (0..n).rev() {
            let mut s = y[j];
            for p in self.lp[j] + 1..self.lp[j + 1] {
                s -= self.lx[p] * y[self.li[p]];
            }
            y[j] = s / self.lx[self.lp[j]];
        }
        for k in 0..n {
            out[self.perm[k]] = y[k];
        }
        Ok(())
    }

    /// Convenience allocating wrapper around [`SpdSolveContext::solve`].
    pub fn solve_vec(&mut self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; rhs.len()];
        self.solve(rhs, &mut out)?;
        Ok(out)
    }
}

/// Quotient-graph minimum-degree ordering with element absorption and
/// exact external degrees. Classic AMD refinements (supervariables,
/// approximate degrees) are skipped; at the problem sizes handled by the
/// sparse path this stays a small fraction of the numeric cost.
fn min_degree_ordering(pattern: &CsrPattern) -> Vec<usize> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let n = pattern.n_rows();
    let mut adj: Vec<Vec<usize>> = (0..n)
        .map(|r| {
            pattern
                .row_cols(r)
                .iter()
                .copied()
                .filter(|&c| c != r)
                .collect()
        })
        .collect();
    let mut var_elems: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut elem_vars: Vec<Vec<usize>> = Vec::new();
    let mut eliminated = vec![false; n];
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = BinaryHeap::with_capacity(2 * n);
    for v in 0..n {
        heap.push(Reverse((degree[v], v)));
    }
    let mut perm = Vec::with_capacity(n);
    let mut mark = vec![0usize; n];
    let mut stamp = 0usize;

    while perm.len() < n {
        let Reverse((d, p)) = heap.pop().expect("heap holds all uneliminated vars");
        if eliminated[p] || d != degree[p] {
            continue; // stale entry
        }
        eliminated[p] = true;
        perm.push(p);

        // Reach of p: adjacent variables plus members of p's elements.
        stamp += 1;
        let reach_stamp = stamp;
        let mut reach: Vec<usize> = Vec::new();
        mark[p] = reach_stamp;
        for &v in &adj[p] {
            if !eliminated[v] && mark[v] != reach_stamp {
                mark[v] = reach_stamp;
                reach.push(v);
            }
        }
        for e in std::mem::take(&mut var_elems[p]) {
            for &v in &elem_vars[e] {
                if !eliminated[v] && mark[v] != reach_stamp {
                    mark[v] = reach_stamp;
                    reach.push(v);
                }
            }
            elem_vars[e].clear(); // absorbed into the new element
        }
        let new_elem = elem_vars.len();
        elem_vars.push(reach.clone());

        // Update each reached variable: prune edges now covered by the new
        // element and dead elements, attach the new element, and recompute
        // its exact degree.
        for &v in &reach {
            adj[v].retain(|&u| !eliminated[u] && mark[u] != reach_stamp);
            var_elems[v].retain(|&e| !elem_vars[e].is_empty());
            var_elems[v].push(new_elem);
        }
        for &v in &reach {
            stamp += 1;
            mark[v] = stamp;
            let mut deg = 0usize;
            for &u in &adj[v] {
                if mark[u] != stamp {
                    mark[u] = stamp;
                    deg += 1;
                }
            }
            for &e in &var_elems[v] {
                for &u in &elem_vars[e] {
                    if !eliminated[u] && u != v && mark[u] != stamp {
                        mark[u] = stamp;
                        deg += 1;
                    }
                }
            }
            degree[v] = deg;
            heap.push(Reverse((deg, v)));
        }
    }
    perm
}
