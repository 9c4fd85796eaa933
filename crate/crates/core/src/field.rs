//! The `(u, s)` environment: the B quantity, the densities of the mixing
//! measure (the `u`-marginal for fixed conductances, the `(u, s)` law after
//! integrating Gamma conductances, and the joint `(w, u, s)` law), matrix-tree
//! minors, and Metropolis samplers for the latter two.
//!
//! All densities are evaluated in log domain. Diagonal minors come from a
//! Cholesky factorization of the root-reduced Laplacian, which is positive
//! definite on connected graphs.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::Graph;
use crate::linalg::{dense_cholesky, DenseMatrix, ReducedLaplacian};
use crate::rng::{self, Rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Pinned fields `(u, s)` with `u(root) = s(root) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    u: Vec<f64>,
    s: Vec<f64>,
    root: usize,
}

impl FieldConfig {
    pub fn zero(n: usize, root: usize) -> Self {
        assert!(root < n.max(1));
        Self {
            u: vec![0.0; n],
            s: vec![0.0; n],
            root,
        }
    }

    pub fn new(u: Vec<f64>, s: Vec<f64>, root: usize) -> Result<Self> {
        if u.len() != s.len() {
            return Err(invalid("s", "u and s must have the same length"));
        }
        if root >= u.len() {
            return Err(Error::VertexOutOfRange(root));
        }
        if u[root] != 0.0 || s[root] != 0.0 {
            return Err(invalid("root", "u and s must vanish at the root"));
        }
        if u.iter().chain(&s).any(|v| !v.is_finite()) {
            return Err(invalid("u", "fields must be finite"));
        }
        Ok(Self { u, s, root })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    /// Sets `u_i`; the root stays pinned.
    pub fn set_u(&mut self, i: usize, v: f64) {
        assert!(i != self.root, "root is pinned");
        self.u[i] = v;
    }

    pub fn set_s(&mut self, i: usize, v: f64) {
        assert!(i != self.root, "root is pinned");
        self.s[i] = v;
    }
}

/// Strictly positive per-edge weights `a_e`.
/// One vertex of a field snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub vertex: usize,
    pub u: f64,
    pub s: f64,
}

impl FieldConfig {
    pub fn snapshot(&self) -> Vec<SnapshotRecord> {
        (0..self.len())
            .map(|v| SnapshotRecord {
                vertex: v,
                u: self.u[v],
                s: self.s[v],
            })
            .collect()
    }

    /// Writes the field as a JSON array of `{vertex, u, s}` records.
    pub fn write_snapshot<W: std::io::Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, &self.snapshot())?;
        Ok(())
    }

    pub fn read_snapshot<R: std::io::Read>(r: R, root: usize) -> Result<Self> {
        let mut recs: Vec<SnapshotRecord> = serde_json::from_reader(r)?;
        recs.sort_by_key(|r| r.vertex);
        if recs.iter().enumerate().any(|(k, r)| r.vertex != k) {
            return Err(invalid("vertex", "snapshot vertices must be 0..n without gaps"));
        }
        Self::new(recs.iter().map(|r| r.u).collect(), recs.iter().map(|r| r.s).collect(), root)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeights(Vec<f64>);

impl EdgeWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((e, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
        {
            return Err(invalid("a", format!("weight of edge {e} is {v}; must be positive")));
        }
        Ok(Self(values))
    }

    pub fn uniform(graph: &Graph, a: f64) -> Result<Self> {
        Self::new(vec![a; graph.edge_count()])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, e: usize) -> f64 {
        self.0[e]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `a = inf_e a_e` (infinite for an edgeless graph).
    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `B_xy = cosh(u_x - u_y) + e^{u_x + u_y} (s_x - s_y)^2 / 2`.
#[inline]
pub fn b_quantity(cfg: &FieldConfig, x: usize, y: usize) -> f64 {
    b_value(cfg.u[x], cfg.u[y], cfg.s[x], cfg.s[y])
}

#[inline]
pub fn b_value(ux: f64, uy: f64, sx: f64, sy: f64) -> f64 {
    let ds = sx - sy;
    (ux - uy).cosh() + 0.5 * (ux + uy).exp() * ds * ds
}

/// `B_xz <= 2 B_xy B_yz`, with a relative slack of `1e-12`.
pub fn bxyz_holds(cfg: &FieldConfig, x: usize, y: usize, z: usize) -> bool {
    let lhs = b_quantity(cfg, x, z);
    let rhs = 2.0 * b_quantity(cfg, x, y) * b_quantity(cfg, y, z);
    lhs <= rhs * (1.0 + 1e-12)
}

fn check_lengths(graph: &Graph, cfg: &FieldConfig, per_edge: &[f64], what: &'static str) -> Result<()> {
    if cfg.len() != graph.vertex_count() {
        return Err(invalid("cfg", "field length differs from the vertex count"));
    }
    if per_edge.len() != graph.edge_count() {
        return Err(invalid(what, "length differs from the edge count"));
    }
    Ok(())
}

fn check_positive(values: &[f64], what: &'static str) -> Result<()> {
    match values.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        Some(e) => Err(invalid(what, format!("edge {e} has non-positive value {}", values[e]))),
        None => Ok(()),
    }
}

/// `H(w, u) = sum_{ij} w_ij (cosh(u_i - u_j) - 1)`.
pub fn h_energy(graph: &Graph, w: &[f64], cfg: &FieldConfig) -> Result<f64> {
    check_lengths(graph, cfg, w, "w")?;
    check_positive(w, "w")?;
    Ok(graph
        .edges()
        .iter()
        .zip(w)
        .map(|(&(i, j), &we)| we * ((cfg.u[i] - cfg.u[j]).cosh() - 1.0))
        .sum())
}

const ROW_SUM_TOL: f64 = 1e-9;

/// Determinant of `matrix` with row and column `removed` deleted, for a
/// symmetric Laplacian-type matrix (zero row sums, non-positive off-diagonals).
pub fn diagonal_minor(matrix: &DenseMatrix, removed: usize) -> Result<f64> {
    Ok(log_diagonal_minor(matrix, removed)?.exp())
}

pub fn log_diagonal_minor(matrix: &DenseMatrix, removed: usize) -> Result<f64> {
    let n = matrix.dim();
    if removed >= n {
        return Err(Error::VertexOutOfRange(removed));
    }
    for i in 0..n {
        let mut sum = 0.0;
        let mut scale = 0.0f64;
        for j in 0..n {
            let v = matrix.get(i, j);
            sum += v;
            scale = scale.max(v.abs());
            if i != j && v > 0.0 {
                return Err(invalid("matrix", format!("positive off-diagonal at ({i}, {j})")));
            }
            if (v - matrix.get(j, i)).abs() > ROW_SUM_TOL * scale.max(1.0) {
                return Err(invalid("matrix", format!("asymmetric at ({i}, {j})")));
            }
        }
        if sum.abs() > ROW_SUM_TOL * scale.max(1.0) {
            return Err(Error::RowSumViolation { row: i, sum });
        }
    }
    let mut reduced = DenseMatrix::zeros(n - 1);
    let keep: Vec<usize> = (0..n).filter(|&i| i != removed).collect();
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            reduced.set(a, b, matrix.get(i, j));
        }
    }
    Ok(dense_cholesky(&reduced)?.log_det())
}

/// Laplacian of the weighted graph with conductances `c` as a dense matrix.
pub fn laplacian_matrix(graph: &Graph, c: &[f64]) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(graph.vertex_count());
    for (&(i, j), &w) in graph.edges().iter().zip(c) {
        m.set(i, j, m.get(i, j) - w);
        m.set(j, i, m.get(j, i) - w);
        m.set(i, i, m.get(i, i) + w);
        m.set(j, j, m.get(j, j) + w);
    }
    m
}

/// Additive decomposition of a log density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogDensityReport {
    /// `-(N-1)/2 log 2pi` or `-(N-1) log 2pi`.
    pub log_prefactor: f64,
    /// `-sum_j u_j`.
    pub log_u_weight: f64,
    /// `-sum_e a_e log B_e` (zero for the fixed-conductance density).
    pub log_b_product: f64,
    /// `-H(w, u)` (zero for the `(u, s)` density).
    pub log_energy: f64,
    /// `(1/2) log D[m]` or `log D[M]`.
    pub log_minor: f64,
    pub total: f64,
}

impl LogDensityReport {
    fn assemble(log_prefactor: f64, log_u_weight: f64, log_b_product: f64, log_energy: f64, log_minor: f64) -> Self {
        Self {
            log_prefactor,
            log_u_weight,
            log_b_product,
            log_energy,
            log_minor,
            total: log_prefactor + log_u_weight + log_b_product + log_energy + log_minor,
        }
    }
}

fn log_minor_of(graph: &Graph, root: usize, c: &[f64]) -> Result<f64> {
    let mut lap = ReducedLaplacian::new(graph, root)?;
    lap.factor(c)?;
    Ok(lap.log_minor())
}

/// Log density of the `u`-marginal for fixed conductances `w`.
pub fn log_density_u(graph: &Graph, w: &[f64], cfg: &FieldConfig) -> Result<LogDensityReport> {
    let h = h_energy(graph, w, cfg)?;
    let n = graph.vertex_count() as f64;
    let c: Vec<f64> = graph
        .edges()
        .iter()
        .zip(w)
        .map(|(&(i, j), &we)| we * (cfg.u[i] + cfg.u[j]).exp())
        .collect();
    let log_minor = log_minor_of(graph, cfg.root, &c)?;
    Ok(LogDensityReport::assemble(
        -0.5 * (n - 1.0) * LN_2PI,
        -cfg.u.iter().sum::<f64>(),
        0.0,
        -h,
        0.5 * log_minor,
    ))
}

/// Log density of the `(u, s)` law after integrating Gamma(a_e, 1) conductances.
pub fn log_density_us(graph: &Graph, a: &EdgeWeights, cfg: &FieldConfig) -> Result<LogDensityReport> {
    check_lengths(graph, cfg, a.values(), "a")?;
    let n = graph.vertex_count() as f64;
    let mut log_b = 0.0;
    let c: Vec<f64> = graph
        .edges()
        .iter()
        .zip(a.values())
        .map(|(&(i, j), &ae)| {
            let b = b_quantity(cfg, i, j);
            log_b -= ae * b.ln();
            ae * (cfg.u[i] + cfg.u[j]).exp() / b
        })
        .collect();
    let log_minor = log_minor_of(graph, cfg.root, &c)?;
    Ok(LogDensityReport::assemble(
        -(n - 1.0) * LN_2PI,
        -cfg.u.iter().sum::<f64>(),
        log_b,
        0.0,
        log_minor,
    ))
}

#[inline]
fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Log density of the joint `(w, u, s)` law, Gamma factors included.
pub fn log_density_joint_wus(graph: &Graph, a: &EdgeWeights, w: &[f64], cfg: &FieldConfig) -> Result<f64> {
    check_lengths(graph, cfg, a.values(), "a")?;
    check_lengths(graph, cfg, w, "w")?;
    check_positive(w, "w")?;
    let n = graph.vertex_count() as f64;
    let mut total = -(n - 1.0) * LN_2PI - cfg.u.iter().sum::<f64>();
    let mut c = Vec::with_capacity(w.len());
    for ((&(i, j), &we), &ae) in graph.edges().iter().zip(w).zip(a.values()) {
        let b = b_quantity(cfg, i, j);
        total -= we * (b - 1.0);
        total += (ae - 1.0) * we.ln() - we - ln_gamma(ae);
        c.push(we * (cfg.u[i] + cfg.u[j]).exp());
    }
    Ok(total + log_minor_of(graph, cfg.root, &c)?)
}

/// Sampler settings. Step sizes are adapted during burn-in toward
/// `target_acceptance` and frozen afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcParams {
    pub burn_in: usize,
    pub sweeps: usize,
    pub thin: usize,
    pub step_u: f64,
    pub step_s: f64,
    pub step_w: f64,
    pub adapt: bool,
    pub target_acceptance: f64,
    pub adapt_interval: usize,
}

impl Default for McmcParams {
    fn default() -> Self {
        Self {
            burn_in: 100_000,
            sweeps: 100_000,
            thin: 10,
            step_u: 0.5,
            step_s: 0.5,
            step_w: 0.5,
            adapt: true,
            target_acceptance: 0.35,
            adapt_interval: 50,
        }
    }
}

impl McmcParams {
    pub fn quick(burn_in: usize, sweeps: usize, thin: usize) -> Self {
        Self {
            burn_in,
            sweeps,
            thin,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("step_u", self.step_u), ("step_s", self.step_s), ("step_w", self.step_w)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, "step sizes must be positive"));
            }
        }
        if self.thin == 0 {
            return Err(invalid("thin", "thinning must be at least 1"));
        }
        if self.adapt_interval == 0 {
            return Err(invalid("adapt_interval", "must be at least 1"));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(invalid("target_acceptance", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

const ACCEPTANCE_BAND: (f64, f64) = (0.05, 0.95);

/// One retained-sample row of a chain trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub log_density: f64,
    pub acceptance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub proposed: [u64; 3],
    pub accepted: [u64; 3],
    pub final_steps: [f64; 3],
    pub retained: usize,
    pub warnings: Vec<String>,
    pub trace: Vec<TraceRow>,
}

impl ChainReport {
    /// Post-burn-in acceptance for `u`, `s` and `w` moves (NaN if none proposed).
    pub fn acceptance(&self) -> [f64; 3] {
        let mut out = [f64::NAN; 3];
        for k in 0..3 {
            if self.proposed[k] > 0 {
                out[k] = self.accepted[k] as f64 / self.proposed[k] as f64;
            }
        }
        out
    }

    /// Writes the retained trace as CSV `iteration,log_density,acceptance`.
    pub fn write_trace_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for row in &self.trace {
            wr.serialize(row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn overall_acceptance(&self) -> f64 {
        let p: u64 = self.proposed.iter().sum();
        let a: u64 = self.accepted.iter().sum();
        if p == 0 {
            f64::NAN
        } else {
            a as f64 / p as f64
        }
    }
}

#[derive(Clone, Copy, Default)]
struct Counter {
    proposed: u64,
    accepted: u64,
}

impl Counter {
    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

const U: usize = 0;
const S: usize = 1;
const W: usize = 2;

/// Shared sweep driver: burn-in with adaptation, then thinned retained sweeps.
trait Kernel {
    fn sweep(&mut self, rng: &mut Rng, steps: &[f64; 3], counters: &mut [Counter; 3]);
    fn log_density(&self) -> f64;
    fn active_moves(&self) -> [bool; 3];
}

fn drive<K: Kernel>(
    kernel: &mut K,
    params: &McmcParams,
    rng: &mut Rng,
    mut on_sample: impl FnMut(&K),
) -> Result<ChainReport> {
    params.validate()?;
    let mut steps = [params.step_u, params.step_s, params.step_w];
    let mut window = [Counter::default(); 3];
    for sweep in 0..params.burn_in {
        kernel.sweep(rng, &steps, &mut window);
        if params.adapt && (sweep + 1) % params.adapt_interval == 0 {
            for k in 0..3 {
                let r = window[k].rate();
                if r.is_finite() {
                    steps[k] *= (2.0 * (r - params.target_acceptance)).exp();
                    steps[k] = steps[k].clamp(1e-6, 1e3);
                }
            }
            window = [Counter::default(); 3];
        }
    }
    let mut counters = [Counter::default(); 3];
    let mut report = ChainReport {
        final_steps: steps,
        ..ChainReport::default()
    };
    for sweep in 0..params.sweeps {
        kernel.sweep(rng, &steps, &mut counters);
        if (sweep + 1) % params.thin == 0 {
            on_sample(kernel);
            report.retained += 1;
            let p: u64 = counters.iter().map(|c| c.proposed).sum();
            let a: u64 = counters.iter().map(|c| c.accepted).sum();
            report.trace.push(TraceRow {
                iteration: params.burn_in + sweep + 1,
                log_density: kernel.log_density(),
                acceptance: if p == 0 { f64::NAN } else { a as f64 / p as f64 },
            });
        }
    }
    for k in 0..3 {
        report.proposed[k] = counters[k].proposed;
        report.accepted[k] = counters[k].accepted;
    }
    let names = ["u", "s", "w"];
    let active = kernel.active_moves();
    for k in 0..3 {
        let r = counters[k].rate();
        if active[k] && r.is_finite() && !(ACCEPTANCE_BAND.0..=ACCEPTANCE_BAND.1).contains(&r) {
            report.warnings.push(format!(
                "{} acceptance {:.3} outside [{}, {}]",
                names[k], r, ACCEPTANCE_BAND.0, ACCEPTANCE_BAND.1
            ));
        }
    }
    Ok(report)
}

#[inline]
fn accept(rng: &mut Rng, log_ratio: f64) -> bool {
    log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio
}

/// Random-walk Metropolis sampler for the `(u, s)` law on a finite graph.
pub struct FieldSampler {
    graph: Graph,
    a: Vec<f64>,
    cfg: FieldConfig,
    lap: ReducedLaplacian,
    cond: Vec<f64>,
    b: Vec<f64>,
    log_minor: f64,
    scratch: Vec<f64>,
}

impl FieldSampler {
    pub fn new(graph: &Graph, a: &EdgeWeights, init: FieldConfig) -> Result<Self> {
        check_lengths(graph, &init, a.values(), "a")?;
        if !graph.is_connected() {
            return Err(Error::Disconnected);
        }
        let mut lap = ReducedLaplacian::new(graph, init.root)?;
        let b: Vec<f64> = graph.edges().iter().map(|&(i, j)| b_quantity(&init, i, j)).collect();
        let cond: Vec<f64> = graph
            .edges()
            .iter()
            .enumerate()
            .map(|(e, &(i, j))| a.get(e) * (init.u[i] + init.u[j]).exp() / b[e])
            .collect();
        lap.factor(&cond)?;
        let log_minor = lap.log_minor();
        Ok(Self {
            graph: graph.clone(),
            a: a.values().to_vec(),
            cfg: init,
            lap,
            scratch: cond.clone(),
            cond,
            b,
            log_minor,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    fn local_log(&self, i: usize, ui: f64, si: f64, scratch: &mut [f64], new_b: &mut Vec<(usize, f64)>) -> f64 {
        let mut delta = -(ui - self.cfg.u[i]);
        new_b.clear();
        for &(j, e) in self.graph.neighbours(i) {
            let b = b_value(ui, self.cfg.u[j], si, self.cfg.s[j]);
            delta -= self.a[e] * (b.ln() - self.b[e].ln());
            scratch[e] = self.a[e] * (ui + self.cfg.u[j]).exp() / b;
            new_b.push((e, b));
        }
        delta
    }

    fn propose(&mut self, i: usize, ui: f64, si: f64, rng: &mut Rng) -> bool {
        let mut scratch = std::mem::take(&mut self.scratch);
        scratch.copy_from_slice(&self.cond);
        let mut new_b = Vec::with_capacity(self.graph.degree(i));
        let local = self.local_log(i, ui, si, &mut scratch, &mut new_b);
        let log_u: f64 = rng.gen::<f64>().ln();
        // Skip the factorization when even a huge minor gain cannot help.
        let accepted = match self.lap.factor(&scratch) {
            Ok(()) => {
                let lm = self.lap.log_minor();
                let ratio = local + lm - self.log_minor;
                if ratio >= 0.0 || log_u < ratio {
                    self.log_minor = lm;
                    true
                } else {
                    false
                }
            }
            Err(_) => false,
        };
        if accepted {
            self.cfg.u[i] = ui;
            self.cfg.s[i] = si;
            for (e, b) in new_b {
                self.b[e] = b;
            }
            self.cond.copy_from_slice(&scratch);
        }
        self.scratch = scratch;
        accepted
    }

    pub fn log_density(&self) -> f64 {
        let n = self.graph.vertex_count() as f64;
        -(n - 1.0) * LN_2PI - self.cfg.u.iter().sum::<f64>()
            - self.a.iter().zip(&self.b).map(|(a, b)| a * b.ln()).sum::<f64>()
            + self.log_minor
    }

    pub fn run(&mut self, params: &McmcParams, rng: &mut Rng, mut observer: impl FnMut(&FieldConfig)) -> Result<ChainReport> {
        drive(self, params, rng, |k| observer(&k.cfg))
    }
}

impl Kernel for FieldSampler {
    fn sweep(&mut self, rng: &mut Rng, steps: &[f64; 3], counters: &mut [Counter; 3]) {
        for i in 0..self.graph.vertex_count() {
            if i == self.cfg.root {
                continue;
            }
            let z: f64 = rng.sample(StandardNormal);
            let ui = self.cfg.u[i] + steps[U] * z;
            counters[U].proposed += 1;
            if self.propose(i, ui, self.cfg.s[i], rng) {
                counters[U].accepted += 1;
            }
            let z: f64 = rng.sample(StandardNormal);
            let si = self.cfg.s[i] + steps[S] * z;
            counters[S].proposed += 1;
            if self.propose(i, self.cfg.u[i], si, rng) {
                counters[S].accepted += 1;
            }
        }
    }

    fn log_density(&self) -> f64 {
        FieldSampler::log_density(self)
    }

    fn active_moves(&self) -> [bool; 3] {
        [true, true, false]
    }
}

/// Runs one `(u, s)` chain from the zero configuration rooted at `root`,
/// passing every retained state to `observer`.
pub fn sample_field_mcmc(
    graph: &Graph,
    a: &EdgeWeights,
    root: usize,
    params: &McmcParams,
    seed: u64,
    observer: impl FnMut(&FieldConfig),
) -> Result<ChainReport> {
    let mut sampler = FieldSampler::new(graph, a, FieldConfig::zero(graph.vertex_count(), root))?;
    let mut rng = rng::rng_from_seed(seed);
    sampler.run(params, &mut rng, observer)
}

/// Metropolis-within-Gibbs sampler for the joint `(w, u, s)` law.
pub struct JointSampler {
    graph: Graph,
    a: Vec<f64>,
    ln_gamma_a: Vec<f64>,
    w: Vec<f64>,
    cfg: FieldConfig,
    lap: ReducedLaplacian,
    cond: Vec<f64>,
    b: Vec<f64>,
    log_minor: f64,
    scratch: Vec<f64>,
}

impl JointSampler {
    pub fn new(graph: &Graph, a: &EdgeWeights, w: Vec<f64>, init: FieldConfig) -> Result<Self> {
        check_lengths(graph, &init, a.values(), "a")?;
        check_lengths(graph, &init, &w, "w")?;
        check_positive(&w, "w")?;
        if !graph.is_connected() {
            return Err(Error::Disconnected);
        }
        let mut lap = ReducedLaplacian::new(graph, init.root)?;
        let b: Vec<f64> = graph.edges().iter().map(|&(i, j)| b_quantity(&init, i, j)).collect();
        let cond: Vec<f64> = graph
            .edges()
            .iter()
            .zip(&w)
            .map(|(&(i, j), &we)| we * (init.u[i] + init.u[j]).exp())
            .collect();
        lap.factor(&cond)?;
        let log_minor = lap.log_minor();
        Ok(Self {
            graph: graph.clone(),
            a: a.values().to_vec(),
            ln_gamma_a: a.values().iter().map(|&x| ln_gamma(x)).collect(),
            w,
            cfg: init,
            lap,
            scratch: cond.clone(),
            cond,
            b,
            log_minor,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.cfg
    }

    pub fn conductances(&self) -> &[f64] {
        &self.w
    }

    pub fn log_density(&self) -> f64 {
        let n = self.graph.vertex_count() as f64;
        let mut t = -(n - 1.0) * LN_2PI - self.cfg.u.iter().sum::<f64>() + self.log_minor;
        for e in 0..self.w.len() {
            t += -self.w[e] * (self.b[e] - 1.0) + (self.a[e] - 1.0) * self.w[e].ln() - self.w[e]
                - self.ln_gamma_a[e];
        }
        t
    }

    fn try_factor(&mut self, local: f64, rng: &mut Rng) -> bool {
        let log_u: f64 = rng.gen::<f64>().ln();
        match self.lap.factor(&self.scratch) {
            Ok(()) => {
                let lm = self.lap.log_minor();
                let ratio = local + lm - self.log_minor;
                if ratio >= 0.0 || log_u < ratio {
                    self.log_minor = lm;
                    true
                } else {
                    false
                }
            }
            Err(_) => false,
        }
    }

    fn move_u(&mut self, i: usize, ui: f64, rng: &mut Rng) -> bool {
        self.scratch.copy_from_slice(&self.cond);
        let mut local = -(ui - self.cfg.u[i]);
        let mut new_b = Vec::with_capacity(self.graph.degree(i));
        for &(j, e) in self.graph.neighbours(i) {
            let b = b_value(ui, self.cfg.u[j], self.cfg.s[i], self.cfg.s[j]);
            local -= self.w[e] * (b - self.b[e]);
            self.scratch[e] = self.w[e] * (ui + self.cfg.u[j]).exp();
            new_b.push((e, b));
        }
        let ok = self.try_factor(local, rng);
        if ok {
            self.cfg.u[i] = ui;
            for (e, b) in new_b {
                self.b[e] = b;
            }
            self.cond.copy_from_slice(&self.scratch);
        }
        ok
    }

    fn move_s(&mut self, i: usize, si: f64, rng: &mut Rng) -> bool {
        let mut local = 0.0;
        let mut new_b = Vec::with_capacity(self.graph.degree(i));
        for &(j, e) in self.graph.neighbours(i) {
            let b = b_value(self.cfg.u[i], self.cfg.u[j], si, self.cfg.s[j]);
            local -= self.w[e] * (b - self.b[e]);
            new_b.push((e, b));
        }
        let ok = accept(rng, local);
        if ok {
            self.cfg.s[i] = si;
            for (e, b) in new_b {
                self.b[e] = b;
            }
        }
        ok
    }

    fn move_w(&mut self, e: usize, factor: f64, rng: &mut Rng) -> bool {
        let old = self.w[e];
        let new = old * factor;
        let (i, j) = self.graph.edge(e);
        // log-normal proposal: Hastings correction log(new/old)
        let local = (self.a[e] - 1.0) * (new.ln() - old.ln()) - (new - old) * self.b[e] + (new.ln() - old.ln());
        self.scratch.copy_from_slice(&self.cond);
        self.scratch[e] = new * (self.cfg.u[i] + self.cfg.u[j]).exp();
        let ok = self.try_factor(local, rng);
        if ok {
            self.w[e] = new;
            self.cond[e] = self.scratch[e];
        }
        ok
    }

    pub fn run(
        &mut self,
        params: &McmcParams,
        rng: &mut Rng,
        mut observer: impl FnMut(&[f64], &FieldConfig),
    ) -> Result<ChainReport> {
        drive(self, params, rng, |k| observer(&k.w, &k.cfg))
    }
}

impl Kernel for JointSampler {
    fn sweep(&mut self, rng: &mut Rng, steps: &[f64; 3], counters: &mut [Counter; 3]) {
        for i in 0..self.graph.vertex_count() {
            if i == self.cfg.root {
                continue;
            }
            let z: f64 = rng.sample(StandardNormal);
            counters[U].proposed += 1;
            if self.move_u(i, self.cfg.u[i] + steps[U] * z, rng) {
                counters[U].accepted += 1;
            }
            let z: f64 = rng.sample(StandardNormal);
            counters[S].proposed += 1;
            if self.move_s(i, self.cfg.s[i] + steps[S] * z, rng) {
                counters[S].accepted += 1;
            }
        }
        for e in 0..self.w.len() {
            let z: f64 = rng.sample(StandardNormal);
            counters[W].proposed += 1;
            if self.move_w(e, (steps[W] * z).exp(), rng) {
                counters[W].accepted += 1;
            }
        }
    }

    fn log_density(&self) -> f64 {
        JointSampler::log_density(self)
    }

    fn active_moves(&self) -> [bool; 3] {
        [true, true, true]
    }
}

/// Runs one joint chain. The initial conductances are `w_e = a_e`.
pub fn sample_joint_mcmc(
    graph: &Graph,
    a: &EdgeWeights,
    root: usize,
    params: &McmcParams,
    seed: u64,
    observer: impl FnMut(&[f64], &FieldConfig),
) -> Result<ChainReport> {
    let mut sampler = JointSampler::new(
        graph,
        a,
        a.values().to_vec(),
        FieldConfig::zero(graph.vertex_count(), root),
    )?;
    let mut rng = rng::rng_from_seed(seed);
    sampler.run(params, &mut rng, observer)
}

/// Runs `chains` independent jobs on seeded streams derived from `seed`,
/// returning results in chain order regardless of scheduling.
pub fn run_chains<T: Send>(chains: usize, seed: u64, job: impl Fn(usize, u64) -> T + Sync) -> Vec<T> {
    (0..chains)
        .into_par_iter()
        .map(|c| job(c, rng::stream_seed(seed, c as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg2(u1: f64, s1: f64) -> FieldConfig {
        FieldConfig::new(vec![0.0, u1], vec![0.0, s1], 0).unwrap()
    }

    #[test]
    fn snapshot_roundtrip() {
        let cfg = FieldConfig::new(vec![0.0, 0.5, -1.25], vec![0.0, 2.0, 0.125], 0).unwrap();
        let mut buf = Vec::new();
        cfg.write_snapshot(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("[{\"vertex\":0,\"u\":0.0,\"s\":0.0}"));
        assert_eq!(FieldConfig::read_snapshot(&buf[..], 0).unwrap(), cfg);
    }

    #[test]
    fn trace_csv_header() {
        let g = Graph::single_edge();
        let a = EdgeWeights::uniform(&g, 4.0).unwrap();
        let rep = sample_field_mcmc(&g, &a, 0, &McmcParams::quick(10, 20, 5), 3, |_| {}).unwrap();
        let mut buf = Vec::new();
        rep.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("iteration,log_density,acceptance"));
        assert_eq!(text.lines().count(), 1 + rep.trace.len());
    }

    #[test]
    fn b_closed_forms() {
        let c = FieldConfig::new(vec![0.0, 0.3, 0.3], vec![0.0, -1.0, -1.0], 0).unwrap();
        assert_eq!(b_quantity(&c, 1, 2), 1.0);
        assert!((b_quantity(&cfg2(2f64.ln(), 0.0), 0, 1) - 1.25).abs() < 1e-15);
        assert!((b_quantity(&cfg2(0.0, 1.0), 0, 1) - 1.5).abs() < 1e-15);
        let c = cfg2(0.7, -0.4);
        assert_eq!(b_quantity(&c, 0, 1), b_quantity(&c, 1, 0));
    }

    #[test]
    fn field_config_validation() {
        assert!(FieldConfig::new(vec![1.0, 0.0], vec![0.0, 0.0], 0).is_err());
        assert!(FieldConfig::new(vec![0.0, f64::NAN], vec![0.0, 0.0], 0).is_err());
        assert!(FieldConfig::new(vec![0.0], vec![0.0, 0.0], 0).is_err());
        assert!(EdgeWeights::new(vec![1.0, 0.0]).is_err());
        assert_eq!(EdgeWeights::new(vec![3.0, 2.0]).unwrap().min(), 2.0);
    }

    #[test]
    fn h_energy_cases() {
        let g = Graph::single_edge();
        assert_eq!(h_energy(&g, &[1.0], &FieldConfig::zero(2, 0)).unwrap(), 0.0);
        assert!((h_energy(&g, &[2.0], &cfg2(2f64.ln(), 0.0)).unwrap() - 0.5).abs() < 1e-15);
        assert!(h_energy(&g, &[0.0], &FieldConfig::zero(2, 0)).is_err());
    }

    #[test]
    fn minor_small_cases() {
        let g = Graph::single_edge();
        let m = laplacian_matrix(&g, &[2.5]);
        assert!((diagonal_minor(&m, 0).unwrap() - 2.5).abs() < 1e-14);
        let t = laplacian_matrix(&Graph::triangle(), &[1.0; 3]);
        for r in 0..3 {
            assert!((diagonal_minor(&t, r).unwrap() - 3.0).abs() < 1e-13);
        }
        let mut bad = t.clone();
        bad.set(0, 0, 5.0);
        assert!(matches!(diagonal_minor(&bad, 1), Err(Error::RowSumViolation { .. } | Error::InvalidArgument { .. })));
    }

    #[test]
    fn single_edge_density_values() {
        let g = Graph::single_edge();
        let r = log_density_u(&g, &[1.0], &FieldConfig::zero(2, 0)).unwrap();
        assert!((r.total + 0.5 * LN_2PI).abs() < 1e-14);
        let a = EdgeWeights::new(vec![3.0]).unwrap();
        let r = log_density_us(&g, &a, &FieldConfig::zero(2, 0)).unwrap();
        assert!((r.total - (-LN_2PI + 3f64.ln())).abs() < 1e-14);
        let parts = r.log_prefactor + r.log_u_weight + r.log_b_product + r.log_energy + r.log_minor;
        assert_eq!(parts, r.total);
        let a1 = EdgeWeights::new(vec![1.0]).unwrap();
        let j = log_density_joint_wus(&g, &a1, &[1.0], &FieldConfig::zero(2, 0)).unwrap();
        assert!((j - (-LN_2PI - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn single_vertex_is_trivial() {
        let g = Graph::new(1, []).unwrap();
        let a = EdgeWeights::new(vec![]).unwrap();
        let r = log_density_us(&g, &a, &FieldConfig::zero(1, 0)).unwrap();
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn zero_sweeps_only_burn_in() {
        let g = Graph::single_edge();
        let a = EdgeWeights::uniform(&g, 4.0).unwrap();
        let mut n = 0;
        let rep = sample_field_mcmc(&g, &a, 0, &McmcParams::quick(10, 0, 1), 1, |_| n += 1).unwrap();
        assert_eq!(n, 0);
        assert_eq!(rep.retained, 0);
        let bad = McmcParams {
            step_u: 0.0,
            ..McmcParams::quick(1, 1, 1)
        };
        assert!(sample_field_mcmc(&g, &a, 0, &bad, 1, |_| ()).is_err());
    }

    #[test]
    fn samplers_track_their_log_density() {
        let g = Graph::triangle();
        let a = EdgeWeights::uniform(&g, 2.0).unwrap();
        let mut last = None;
        sample_field_mcmc(&g, &a, 0, &McmcParams::quick(50, 50, 10), 3, |c| last = Some(c.clone())).unwrap();
        let c = last.unwrap();
        let mut s = FieldSampler::new(&g, &a, c.clone()).unwrap();
        let direct = log_density_us(&g, &a, &c).unwrap().total;
        assert!((s.log_density() - direct).abs() < 1e-10);
        let mut rng = rng::rng_from_seed(9);
        s.run(&McmcParams::quick(0, 5, 1), &mut rng, |_| ()).unwrap();
        let direct = log_density_us(&g, &a, s.config()).unwrap().total;
        assert!((s.log_density() - direct).abs() < 1e-9);

        let mut js = JointSampler::new(&g, &a, vec![1.0, 2.0, 0.5], FieldConfig::zero(3, 0)).unwrap();
        js.run(&McmcParams::quick(20, 20, 1), &mut rng, |_, _| ()).unwrap();
        let direct = log_density_joint_wus(&g, &a, js.conductances(), js.config()).unwrap();
        assert!((js.log_density() - direct).abs() < 1e-9);
    }
}
