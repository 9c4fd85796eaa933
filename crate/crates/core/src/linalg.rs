//! Sparse symmetric positive-definite solves.
//!
//! The reduced Laplacians that appear everywhere in this crate are sparse and
//! come from lattice regions, so a reverse Cuthill-McKee ordering followed by
//! an envelope (skyline) Cholesky factorization keeps both fill and work
//! proportional to `n * bandwidth^2`. The symbolic part is computed once and
//! reused across numeric refactorizations, which is what the MCMC samplers do
//! on every proposal.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Reverse Cuthill-McKee ordering of a symmetric pattern. Returns `perm` with
/// `perm[new] = old`.
pub fn reverse_cuthill_mckee(neighbours: &[Vec<usize>]) -> Vec<usize> {
    let n = neighbours.len();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let degree = |v: usize| neighbours[v].len();
    let bfs_last = |start: usize, seen_base: &[bool]| -> usize {
        let mut mark = seen_base.to_vec();
        let mut q = VecDeque::from([start]);
        mark[start] = true;
        let mut last = start;
        while let Some(v) = q.pop_front() {
            last = v;
            let mut nb: Vec<usize> = neighbours[v].iter().copied().filter(|&w| !mark[w]).collect();
            nb.sort_by_key(|&w| (degree(w), w));
            for w in nb {
                mark[w] = true;
                q.push_back(w);
            }
        }
        last
    };
    while order.len() < n {
        // Start from a minimum-degree unvisited vertex and walk to a
        // pseudo-peripheral one.
        let mut start = (0..n)
            .filter(|&v| !seen[v])
            .min_by_key(|&v| (degree(v), v))
            .expect("unvisited vertex");
        for _ in 0..2 {
            start = bfs_last(start, &seen);
        }
        let mut q = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = q.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = neighbours[v].iter().copied().filter(|&w| !seen[w]).collect();
            nb.sort_by_key(|&w| (degree(w), w));
            for w in nb {
                seen[w] = true;
                q.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Envelope Cholesky factorization `A = L L^T` of a symmetric positive-definite
/// matrix with a fixed sparsity pattern.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky {
    n: usize,
    perm: Vec<usize>,
    inv: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Builds the symbolic structure for an `n x n` matrix whose off-diagonal
    /// nonzeros are given by the symmetric adjacency `neighbours`.
    pub fn with_pattern(neighbours: &[Vec<usize>]) -> Self {
        let n = neighbours.len();
        let perm = reverse_cuthill_mckee(neighbours);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (old, nb) in neighbours.iter().enumerate() {
            let i = inv[old];
            for &w in nb {
                let j = inv[w];
                if j < first[i] {
                    first[i] = j;
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        let mut total = 0;
        for i in 0..n {
            offset.push(total);
            total += i - first[i] + 1;
        }
        offset.push(total);
        Self {
            n,
            perm,
            inv,
            first,
            offset,
            values: vec![0.0; total],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i]);
        self.offset[i] + (j - self.first[i])
    }

    /// Adds `v` to entry `(a, b)` (and by symmetry `(b, a)`), original indexing.
    pub fn add(&mut self, a: usize, b: usize, v: f64) {
        let (i, j) = (self.inv[a], self.inv[b]);
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let s = self.slot(i, j);
        self.values[s] += v;
    }

    /// In-place factorization. Fails on the first non-positive pivot.
    pub fn factor(&mut self) -> Result<()> {
        for i in 0..self.n {
            let fi = self.first[i];
            let oi = self.offset[i];
            for j in fi..i {
                let fj = self.first[j];
                let oj = self.offset[j];
                let k0 = fi.max(fj);
                let mut sum = self.values[oi + (j - fi)];
                for k in k0..j {
                    sum -= self.values[oi + (k - fi)] * self.values[oj + (k - fj)];
                }
                let ljj = self.values[oj + (j - fj)];
                self.values[oi + (j - fi)] = sum / ljj;
            }
            let mut d = self.values[oi + (i - fi)];
            for k in fi..i {
                let l = self.values[oi + (k - fi)];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    row: self.perm[i],
                    pivot: d,
                });
            }
            self.values[oi + (i - fi)] = d.sqrt();
        }
        Ok(())
    }

    /// `log det A` from the factored form.
    pub fn log_det(&self) -> f64 {
        (0..self.n)
            .map(|i| 2.0 * self.values[self.offset[i + 1] - 1].ln())
            .sum()
    }

    /// Solves `A x = b` (original indexing) using the factored form.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..self.n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let mut s = y[i];
            for k in fi..i {
                s -= self.values[oi + (k - fi)] * y[k];
            }
            y[i] = s / self.values[oi + (i - fi)];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            let xi = y[i] / self.values[oi + (i - fi)];
            y[i] = xi;
            for k in fi..i {
                y[k] -= self.values[oi + (k - fi)] * xi;
            }
        }
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Weighted-graph Laplacian with one vertex (the root) removed, factored by
/// [`EnvelopeCholesky`]. Vertex indices are those of the graph; the root row
/// and column are implicit zeros in solutions.
#[derive(Clone, Debug)]
pub struct ReducedLaplacian {
    graph: Graph,
    root: usize,
    reduced: Vec<usize>,
    chol: EnvelopeCholesky,
    conductance: Vec<f64>,
    factored: bool,
}

const REFINE_TOL: f64 = 1e-10;

impl ReducedLaplacian {
    pub fn new(graph: &Graph, root: usize) -> Result<Self> {
        graph.check_vertex(root)?;
        let n = graph.vertex_count();
        let mut reduced = vec![usize::MAX; n];
        let mut k = 0;
        for (v, slot) in reduced.iter_mut().enumerate() {
            if v != root {
                *slot = k;
                k += 1;
            }
        }
        let mut pattern = vec![Vec::new(); k];
        for &(i, j) in graph.edges() {
            if i != root && j != root {
                pattern[reduced[i]].push(reduced[j]);
                pattern[reduced[j]].push(reduced[i]);
            }
        }
        Ok(Self {
            graph: graph.clone(),
            root,
            reduced,
            chol: EnvelopeCholesky::with_pattern(&pattern),
            conductance: vec![0.0; graph.edge_count()],
            factored: false,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Assembles and factors the reduced Laplacian for the edge conductances
    /// `c` (indexed by edge id).
    pub fn factor(&mut self, c: &[f64]) -> Result<()> {
        assert_eq!(c.len(), self.graph.edge_count());
        self.factored = false;
        self.chol.clear();
        for (e, &(i, j)) in self.graph.edges().iter().enumerate() {
            let w = c[e];
            let (ri, rj) = (self.reduced[i], self.reduced[j]);
            if i != self.root {
                self.chol.add(ri, ri, w);
            }
            if j != self.root {
                self.chol.add(rj, rj, w);
            }
            if i != self.root && j != self.root {
                self.chol.add(ri, rj, -w);
            }
        }
        self.conductance.copy_from_slice(c);
        self.chol.factor()?;
        self.factored = true;
        Ok(())
    }

    /// Log of any diagonal minor of the full Laplacian.
    pub fn log_minor(&self) -> f64 {
        assert!(self.factored, "factor() must succeed first");
        self.chol.log_det()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (e, &(i, j)) in self.graph.edges().iter().enumerate() {
            let w = self.conductance[e];
            let xi = if i == self.root { 0.0 } else { x[i] };
            let xj = if j == self.root { 0.0 } else { x[j] };
            let flow = w * (xi - xj);
            y[i] += flow;
            y[j] -= flow;
        }
        y[self.root] = 0.0;
        y
    }

    /// Solves `L u = b` with `u(root) = 0`; `b(root)` is ignored. Applies
    /// iterative refinement while the residual exceeds `1e-10` relative to `b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert!(self.factored, "factor() must succeed first");
        let n = self.graph.vertex_count();
        assert_eq!(b.len(), n);
        let scale = b
            .iter()
            .enumerate()
            .filter(|&(v, _)| v != self.root)
            .fold(0.0f64, |m, (_, x)| m.max(x.abs()))
            .max(f64::MIN_POSITIVE);
        let mut x = self.solve_once(b);
        for _ in 0..3 {
            let ax = self.apply(&x);
            let mut r = vec![0.0; n];
            let mut rmax = 0.0f64;
            for v in 0..n {
                if v != self.root {
                    r[v] = b[v] - ax[v];
                    rmax = rmax.max(r[v].abs());
                }
            }
            if rmax <= REFINE_TOL * scale {
                break;
            }
            let dx = self.solve_once(&r);
            for v in 0..n {
                x[v] += dx[v];
            }
        }
        x
    }

    fn solve_once(&self, b: &[f64]) -> Vec<f64> {
        let rb: Vec<f64> = (0..b.len())
            .filter(|&v| v != self.root)
            .map(|v| b[v])
            .collect();
        let rx = self.chol.solve(&rb);
        let mut x = vec![0.0; b.len()];
        for v in 0..b.len() {
            if v != self.root {
                x[v] = rx[self.reduced[v]];
            }
        }
        x
    }
}

/// Dense row-major square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(crate::error::invalid("matrix", "rows must form a square matrix"));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn mul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = DenseMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a != 0.0 {
                    for j in 0..n {
                        out.data[i * n + j] += a * other.get(k, j);
                    }
                }
            }
        }
        out
    }
}

/// Factors a dense symmetric positive-definite matrix (lower triangle read).
pub fn dense_cholesky(m: &DenseMatrix) -> Result<EnvelopeCholesky> {
    let n = m.dim();
    let mut pattern = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..i {
            if m.get(i, j) != 0.0 {
                pattern[i].push(j);
                pattern[j].push(i);
            }
        }
    }
    let mut chol = EnvelopeCholesky::with_pattern(&pattern);
    for i in 0..n {
        chol.add(i, i, m.get(i, i));
        for j in 0..i {
            let v = m.get(i, j);
            if v != 0.0 {
                chol.add(i, j, v);
            }
        }
    }
    chol.factor()?;
    Ok(chol)
}
