//! Electrical networks: Green's matrix, effective resistances, hitting
//! probabilities, unit flows and their energies, the `c^{xy}` conductances of
//! a field configuration, Neumann resistances on diamonds, and the spread
//! flow built from staircase paths through a cross-section of a diamond.
//!
//! Energies are sums over undirected edges of `theta(e)^2 / c_e`.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{b_quantity, EdgeWeights, FieldConfig};
use crate::graph::Graph;
use crate::lattice::{euclid, to_real, Diamond, Point};
use crate::linalg::{DenseMatrix, EnvelopeCholesky, ReducedLaplacian};
use crate::rng;

/// Finite connected graph with strictly positive conductances and a root.
///
/// `labels[k]` records which vertex of a parent graph local vertex `k` came
/// from when the network was cut out of a larger one.
#[derive(Clone, Debug)]
pub struct ConductanceNetwork {
    graph: Graph,
    c: Vec<f64>,
    root: usize,
    labels: Vec<usize>,
}

impl ConductanceNetwork {
    pub fn new(graph: Graph, c: Vec<f64>, root: usize) -> Result<Self> {
        let labels = (0..graph.vertex_count()).collect();
        Self::with_labels(graph, c, root, labels)
    }

    fn with_labels(graph: Graph, c: Vec<f64>, root: usize, labels: Vec<usize>) -> Result<Self> {
        if c.len() != graph.edge_count() {
            return Err(invalid("conductance", "length differs from the edge count"));
        }
        if let Some(e) = c.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid("conductance", format!("edge {e} has non-positive value {}", c[e])));
        }
        graph.check_vertex(root)?;
        if !graph.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(Self { graph, c, root, labels })
    }

    pub fn uniform(graph: Graph, c: f64, root: usize) -> Result<Self> {
        let m = graph.edge_count();
        Self::new(graph, vec![c; m], root)
    }

    /// Builds a network from `(i, j, c)` triples.
    pub fn from_edge_list(n: usize, edges: &[(usize, usize, f64)], root: usize) -> Result<Self> {
        let graph = Graph::new(n, edges.iter().map(|&(i, j, _)| (i, j)))?;
        Self::new(graph, edges.iter().map(|e| e.2).collect(), root)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn conductances(&self) -> &[f64] {
        &self.c
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn vertex_count(&self) -> usize {
        self.graph.vertex_count()
    }

    /// Local index of parent vertex `v`, if present.
    pub fn local_index(&self, v: usize) -> Option<usize> {
        self.labels.iter().position(|&l| l == v)
    }

    pub fn with_root(&self, root: usize) -> Result<Self> {
        self.graph.check_vertex(root)?;
        Ok(Self {
            root,
            ..self.clone()
        })
    }

    /// `c_i = sum_{j ~ i} c_ij`.
    pub fn vertex_conductance(&self, i: usize) -> f64 {
        self.graph.neighbours(i).iter().map(|&(_, e)| self.c[e]).sum()
    }

    /// Same graph with every conductance multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::with_labels(
            self.graph.clone(),
            self.c.iter().map(|v| v * k).collect(),
            self.root,
            self.labels.clone(),
        )
    }

    /// Network with edge `e` deleted, if it stays connected.
    pub fn without_edge(&self, e: usize) -> Result<Self> {
        let keep: Vec<usize> = (0..self.graph.edge_count()).filter(|&k| k != e).collect();
        let graph = Graph::new(self.graph.vertex_count(), keep.iter().map(|&k| self.graph.edge(k)))?;
        Self::with_labels(graph, keep.iter().map(|&k| self.c[k]).collect(), self.root, self.labels.clone())
    }

    pub(crate) fn factored(&self) -> Result<ReducedLaplacian> {
        let mut lap = ReducedLaplacian::new(&self.graph, self.root)?;
        lap.factor(&self.c)?;
        Ok(lap)
    }

    /// Voltages driving a unit current from `x` to `y`, grounded at the root.
    pub fn unit_potential(&self, x: usize, y: usize) -> Result<Vec<f64>> {
        self.graph.check_vertex(x)?;
        self.graph.check_vertex(y)?;
        let lap = self.factored()?;
        Ok(unit_potential_with(&lap, self.vertex_count(), x, y))
    }

    pub fn write_edge_list<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["i", "j", "conductance"])?;
        for (&(i, j), c) in self.graph.edges().iter().zip(&self.c) {
            out.serialize((i, j, c))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads an `i,j,conductance` CSV; the vertex count is one more than the
    /// largest index seen.
    pub fn read_edge_list<R: Read>(r: R, root: usize) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut edges = Vec::new();
        for rec in rd.deserialize() {
            let (i, j, c): (usize, usize, f64) = rec?;
            edges.push((i, j, c));
        }
        let n = edges.iter().map(|e| e.0.max(e.1) + 1).max().unwrap_or(1).max(root + 1);
        Self::from_edge_list(n, &edges, root)
    }
}

fn unit_potential_with(lap: &ReducedLaplacian, n: usize, x: usize, y: usize) -> Vec<f64> {
    let mut b = vec![0.0; n];
    b[x] += 1.0;
    b[y] -= 1.0;
    lap.solve(&b)
}

/// `G` with zero root row and column and the inverse of the reduced
/// Laplacian elsewhere.
pub fn greens_matrix(net: &ConductanceNetwork) -> Result<DenseMatrix> {
    let n = net.vertex_count();
    let lap = net.factored()?;
    let mut g = DenseMatrix::zeros(n);
    let mut e = vec![0.0; n];
    for k in 0..n {
        if k == net.root {
            continue;
        }
        e[k] = 1.0;
        let col = lap.solve(&e);
        e[k] = 0.0;
        for (i, v) in col.into_iter().enumerate() {
            g.set(i, k, v);
        }
    }
    Ok(g)
}

/// Effective resistance between `x` and `y`.
pub fn effective_resistance(net: &ConductanceNetwork, x: usize, y: usize) -> Result<f64> {
    if x == y {
        return Err(invalid("y", "effective resistance needs distinct endpoints"));
    }
    let v = net.unit_potential(x, y)?;
    Ok(v[x] - v[y])
}

/// The network with `targets` glued into one vertex (the last one). Edges
/// inside `targets` are dropped and parallel edges merged.
pub fn glue(net: &ConductanceNetwork, targets: &[usize]) -> Result<(ConductanceNetwork, Vec<usize>)> {
    let n = net.vertex_count();
    let mut is_target = vec![false; n];
    for &t in targets {
        net.graph.check_vertex(t)?;
        is_target[t] = true;
    }
    let mut map = vec![usize::MAX; n];
    let mut k = 0;
    for v in 0..n {
        if !is_target[v] {
            map[v] = k;
            k += 1;
        }
    }
    let glued = k;
    for v in 0..n {
        if is_target[v] {
            map[v] = glued;
        }
    }
    let mut merged: HashMap<(usize, usize), f64> = HashMap::new();
    let mut order = Vec::new();
    for (&(i, j), &c) in net.graph.edges().iter().zip(&net.c) {
        let (a, b) = (map[i], map[j]);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        let slot = merged.entry(key).or_insert_with(|| {
            order.push(key);
            0.0
        });
        *slot += c;
    }
    let graph = Graph::new(glued + 1, order.iter().copied())?;
    let c = order.iter().map(|k| merged[k]).collect();
    let root = map[net.root].min(glued);
    Ok((ConductanceNetwork::new(graph, c, root)?, map))
}

/// Effective resistance between `x` and the set `targets` glued together.
pub fn resistance_to_set(net: &ConductanceNetwork, x: usize, targets: &[usize]) -> Result<f64> {
    check_targets(net, x, targets)?;
    let (g, map) = glue(net, targets)?;
    effective_resistance(&g, map[x], g.vertex_count() - 1)
}

fn check_targets(net: &ConductanceNetwork, x: usize, targets: &[usize]) -> Result<()> {
    net.graph.check_vertex(x)?;
    if targets.is_empty() {
        return Err(invalid("targets", "target set is empty"));
    }
    if targets.contains(&x) {
        return Err(invalid("targets", "start vertex lies in the target set"));
    }
    Ok(())
}

/// `P_x(H_targets < H~_x)` for the walk with `p_ij = c_ij / c_i`, from the
/// harmonic extension of `1_targets` with value 0 at `x`.
pub fn hitting_probability(net: &ConductanceNetwork, x: usize, targets: &[usize]) -> Result<f64> {
    check_targets(net, x, targets)?;
    let n = net.vertex_count();
    let mut fixed = vec![None; n];
    fixed[x] = Some(0.0);
    for &t in targets {
        fixed[t] = Some(1.0);
    }
    let dist = net.graph.bfs_distances(x);
    if targets.iter().all(|&t| dist[t] == usize::MAX) {
        return Err(invalid("targets", "no target is reachable"));
    }
    let mut local = vec![usize::MAX; n];
    let mut interior = Vec::new();
    for v in 0..n {
        if fixed[v].is_none() {
            local[v] = interior.len();
            interior.push(v);
        }
    }
    let pattern: Vec<Vec<usize>> = interior
        .iter()
        .map(|&v| {
            net.graph
                .neighbours(v)
                .iter()
                .filter(|&&(w, _)| local[w] != usize::MAX)
                .map(|&(w, _)| local[w])
                .collect()
        })
        .collect();
    let mut chol = EnvelopeCholesky::with_pattern(&pattern);
    let mut rhs = vec![0.0; interior.len()];
    for (k, &v) in interior.iter().enumerate() {
        for &(w, e) in net.graph.neighbours(v) {
            let c = net.c[e];
            chol.add(k, k, c);
            match fixed[w] {
                Some(val) => rhs[k] += c * val,
                None if w > v => chol.add(k, local[w], -c),
                None => {}
            }
        }
    }
    let phi_interior = if interior.is_empty() {
        Vec::new()
    } else {
        chol.factor()?;
        chol.solve(&rhs)
    };
    let mut p = 0.0;
    for &(w, e) in net.graph.neighbours(x) {
        let phi = match fixed[w] {
            Some(val) => val,
            None => phi_interior[local[w]],
        };
        p += net.c[e] * phi;
    }
    Ok(p / net.vertex_conductance(x))
}

/// `c^{xy}_ij = a_ij e^{u_i + u_j - u_x - u_y} B_xy / B_ij` on the subgraph
/// induced by `region` (parent indices). Local vertex `k` is `region[k]`;
/// the root is the local index of `x`.
pub fn xy_conductances(
    graph: &Graph,
    cfg: &FieldConfig,
    a: &EdgeWeights,
    x: usize,
    y: usize,
    region: &[usize],
) -> Result<ConductanceNetwork> {
    if a.len() != graph.edge_count() || cfg.len() != graph.vertex_count() {
        return Err(invalid("a", "edge weights or field do not match the graph"));
    }
    let sub = graph.induced(region)?;
    let lx = region.iter().position(|&v| v == x).ok_or_else(|| invalid("region", "x not in region"))?;
    if !region.contains(&y) {
        return Err(invalid("region", "y not in region"));
    }
    let (u, bxy) = (cfg.u(), b_quantity(cfg, x, y));
    let c = sub
        .edges()
        .iter()
        .map(|&(li, lj)| {
            let (i, j) = (region[li], region[lj]);
            let e = graph.edge_between(i, j).expect("induced edge exists");
            a.get(e) * (u[i] + u[j] - u[x] - u[y]).exp() * bxy / b_quantity(cfg, i, j)
        })
        .collect();
    ConductanceNetwork::with_labels(sub, c, lx, region.to_vec())
}

/// `c^{xy}` on the whole graph.
pub fn xy_conductances_full(
    graph: &Graph,
    cfg: &FieldConfig,
    a: &EdgeWeights,
    x: usize,
    y: usize,
) -> Result<ConductanceNetwork> {
    let all: Vec<usize> = (0..graph.vertex_count()).collect();
    xy_conductances(graph, cfg, a, x, y, &all)
}

/// Effective resistance `D_xy` of the `c^{xy}` network on the whole graph.
pub fn d_xy(graph: &Graph, cfg: &FieldConfig, a: &EdgeWeights, x: usize, y: usize) -> Result<f64> {
    let net = xy_conductances_full(graph, cfg, a, x, y)?;
    effective_resistance(&net, x, y)
}

/// Effective resistance between the apexes of `dia` using only its internal
/// edges, with conductances indexed by the edges of `dia.region().graph()`.
pub fn neumann_resistance(dia: &Diamond, c: &[f64]) -> Result<f64> {
    let g = dia.region().graph();
    if c.len() != g.edge_count() {
        return Err(Error::SupportMismatch(format!(
            "{} conductances for {} diamond edges",
            c.len(),
            g.edge_count()
        )));
    }
    let net = ConductanceNetwork::new(g.clone(), c.to_vec(), dia.x_index())?;
    effective_resistance(&net, dia.x_index(), dia.y_index())
}

/// Network of the `c^{xy}` conductances restricted to a region given as
/// parent indices, as used for Neumann resistances.
pub fn neumann_network(
    graph: &Graph,
    cfg: &FieldConfig,
    a: &EdgeWeights,
    x: usize,
    y: usize,
    region: &[usize],
) -> Result<ConductanceNetwork> {
    xy_conductances(graph, cfg, a, x, y, region)
}

/// Antisymmetric edge function, stored once per undirected edge in the
/// orientation of the graph's edge list (`edges[e].0 -> edges[e].1`).
#[derive(Clone, Debug, PartialEq)]
pub struct UnitFlow {
    graph: Graph,
    values: Vec<f64>,
    source: usize,
    sink: usize,
}

impl UnitFlow {
    pub fn new(graph: Graph, values: Vec<f64>, source: usize, sink: usize) -> Result<Self> {
        if values.len() != graph.edge_count() {
            return Err(Error::SupportMismatch("flow length differs from the edge count".into()));
        }
        graph.check_vertex(source)?;
        graph.check_vertex(sink)?;
        Ok(Self { graph, values, source, sink })
    }

    /// The unit flow along a path of adjacent vertices.
    pub fn from_path(graph: &Graph, path: &[usize]) -> Result<Self> {
        if path.len() < 2 {
            return Err(Error::InvalidPath("a path flow needs at least two vertices".into()));
        }
        let mut values = vec![0.0; graph.edge_count()];
        for w in path.windows(2) {
            let e = graph
                .edge_between(w[0], w[1])
                .ok_or_else(|| Error::InvalidPath(format!("{} and {} are not adjacent", w[0], w[1])))?;
            values[e] += if graph.edge(e).0 == w[0] { 1.0 } else { -1.0 };
        }
        Self::new(graph.clone(), values, path[0], *path.last().expect("nonempty"))
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    /// `theta(i, j)`, zero for non-adjacent pairs.
    pub fn theta(&self, i: usize, j: usize) -> f64 {
        match self.graph.edge_between(i, j) {
            Some(e) if self.graph.edge(e).0 == i => self.values[e],
            Some(e) => -self.values[e],
            None => 0.0,
        }
    }

    /// `div(theta)(i) = sum_{j ~ i} theta(i, j)`.
    pub fn divergence(&self) -> Vec<f64> {
        let mut div = vec![0.0; self.graph.vertex_count()];
        for (&(i, j), &v) in self.graph.edges().iter().zip(&self.values) {
            div[i] += v;
            div[j] -= v;
        }
        div
    }

    /// Largest deviation of the divergence from `delta_source - delta_sink`.
    pub fn divergence_error(&self) -> f64 {
        let mut div = self.divergence();
        div[self.source] -= 1.0;
        div[self.sink] += 1.0;
        div.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Directed edge-list CSV `from,to,flow` with one row per undirected edge.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["from", "to", "flow"])?;
        for (&(i, j), v) in self.graph.edges().iter().zip(&self.values) {
            out.serialize((i, j, v))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// The current flow `theta(i, j) = c_ij (v_i - v_j)` of a unit current.
pub fn min_energy_flow(net: &ConductanceNetwork, x: usize, y: usize) -> Result<UnitFlow> {
    if x == y {
        return Err(invalid("y", "flow endpoints must differ"));
    }
    let v = net.unit_potential(x, y)?;
    let values = net
        .graph
        .edges()
        .iter()
        .zip(&net.c)
        .map(|(&(i, j), c)| c * (v[i] - v[j]))
        .collect();
    UnitFlow::new(net.graph.clone(), values, x, y)
}

/// `sum_e theta(e)^2 / c_e` over undirected edges.
pub fn flow_energy(net: &ConductanceNetwork, flow: &UnitFlow) -> Result<f64> {
    if flow.graph.edges() != net.graph.edges() || flow.graph.vertex_count() != net.vertex_count() {
        return Err(Error::SupportMismatch("flow and network have different edge sets".into()));
    }
    Ok(flow.values.iter().zip(&net.c).map(|(t, c)| t * t / c).sum())
}

/// `b > 1`, `alpha in [0, 1/8]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiParams {
    b: f64,
    alpha: f64,
}

impl ChiParams {
    pub const MAX_ALPHA: f64 = 0.125;

    pub fn new(b: f64, alpha: f64) -> Result<Self> {
        if !(b > 1.0) || !b.is_finite() {
            return Err(invalid("b", format!("{b} must exceed 1")));
        }
        if !(0.0..=Self::MAX_ALPHA).contains(&alpha) {
            return Err(invalid("alpha", format!("{alpha} outside [0, 1/8]")));
        }
        Ok(Self { b, alpha })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `beta = 4 alpha`.
    pub fn beta(&self) -> f64 {
        4.0 * self.alpha
    }

    /// `c = b^-4 / 64`.
    pub fn c_const(&self) -> f64 {
        self.b.powi(-4) / 64.0
    }

    /// `chi_ij = 1{B_ij <= b |i - j|^alpha}` for the Euclidean distance `dist`.
    pub fn chi(&self, b_ij: f64, dist: f64) -> bool {
        b_ij <= self.b * dist.powf(self.alpha)
    }
}

/// `chi-bar_xy` on a diamond whose member `k` carries field index `k`.
/// Terms with `j` equal to the apex itself are trivially satisfied.
pub fn chi_bar(dia: &Diamond, cfg: &FieldConfig, chi: &ChiParams) -> bool {
    let (rx, ry) = dia.sub_regions();
    let (x, y) = (dia.x_index(), dia.y_index());
    let pts = dia.members();
    let ok = |z: usize, set: &[usize]| {
        set.iter()
            .filter(|&&j| j != z)
            .all(|&j| chi.chi(b_quantity(cfg, z, j), euclid(&pts[z], &pts[j])))
    };
    ok(x, &rx) && ok(y, &ry)
}

/// `1/gamma_ij <= 16 B_iz^2 B_jz^2` for `gamma = c^{xy}_ij / a`, `z in {x, y}`,
/// on every edge of `net`. Returns the largest ratio of left to right side.
pub fn estcond_ratio(net: &ConductanceNetwork, cfg: &FieldConfig, a_min: f64, x: usize, y: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for (&(li, lj), &c) in net.graph.edges().iter().zip(&net.c) {
        let (i, j) = (net.labels[li], net.labels[lj]);
        let inv_gamma = a_min / c;
        for z in [x, y] {
            let bound = 16.0 * (b_quantity(cfg, i, z) * b_quantity(cfg, j, z)).powi(2);
            worst = worst.max(inv_gamma / bound);
        }
    }
    worst
}

/// Smallest `h` on `0.10, 0.11, ..., 0.90` with `{r <= h} subset R^x` and
/// `{r >= h} subset R^y`.
pub fn select_h(dia: &Diamond) -> Result<f64> {
    let (rx, ry) = dia.sub_regions();
    let n = dia.len();
    let mut in_x = vec![false; n];
    let mut in_y = vec![false; n];
    rx.iter().for_each(|&k| in_x[k] = true);
    ry.iter().for_each(|&k| in_y[k] = true);
    let (xr, yr) = (to_real(dia.x()), to_real(dia.y()));
    let r: Vec<f64> = dia
        .members()
        .iter()
        .map(|p| crate::lattice::projection_coordinates(&xr, &yr, &to_real(p)).map(|v| v.0))
        .collect::<Result<_>>()?;
    for step in 10..=90 {
        let h = step as f64 / 100.0;
        let ok = (0..n).all(|k| (r[k] > h || in_x[k]) && (r[k] < h || in_y[k]));
        if ok {
            return Ok(h);
        }
    }
    Err(Error::Geometry("no h in [1/10, 9/10] embeds both half-regions".into()))
}

/// Spread flow together with diagnostics of its construction.
#[derive(Clone, Debug)]
pub struct SpreadFlow {
    pub flow: UnitFlow,
    /// Integer path counts per edge; `flow = counts / samples`.
    pub counts: Vec<i64>,
    pub samples: usize,
    pub h: f64,
    /// Largest Euclidean distance from a path vertex to its `L_u`.
    pub max_deviation: f64,
}

impl SpreadFlow {
    /// Divergence of the integer counts; exactly `K (delta_x - delta_y)`.
    pub fn count_divergence(&self) -> Vec<i64> {
        let g = self.flow.graph();
        let mut div = vec![0i64; g.vertex_count()];
        for (&(i, j), &v) in g.edges().iter().zip(&self.counts) {
            div[i] += v;
            div[j] -= v;
        }
        div
    }
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Orthonormal basis of the complement of `v`.
fn orthogonal_basis(v: &[f64]) -> Vec<Vec<f64>> {
    let d = v.len();
    let nv = crate::lattice::norm(v);
    let mut basis: Vec<Vec<f64>> = vec![v.iter().map(|a| a / nv).collect()];
    for k in 0..d {
        if basis.len() == d {
            break;
        }
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        for b in &basis {
            let p = crate::lattice::dot(&e, b);
            e.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = crate::lattice::norm(&e);
        if n > 1e-8 {
            basis.push(e.iter().map(|x| x / n).collect());
        }
    }
    basis.remove(0);
    basis
}

/// `K` quasi-uniform points of the cross-section `{r = h}` of the diamond's
/// cones (Halton sequence with a seeded Cranley-Patterson shift, rejected
/// outside the cones).
pub fn cross_section_points(dia: &Diamond, h: f64, k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let (xr, yr) = (to_real(dia.x()), to_real(dia.y()));
    let axis: Vec<f64> = yr.iter().zip(&xr).map(|(a, b)| a - b).collect();
    let centre: Vec<f64> = xr.iter().zip(&axis).map(|(a, v)| a + h * v).collect();
    let basis = orthogonal_basis(&axis);
    if basis.is_empty() {
        return Ok(vec![centre; k]);
    }
    if basis.len() > PRIMES.len() {
        return Err(invalid("dim", "cross-section sampling supports d <= 13"));
    }
    let radius = dia.length();
    let mut rng = rng::rng_from_seed(seed);
    let shift: Vec<f64> = basis.iter().map(|_| rng.gen::<f64>()).collect();
    let mut out = Vec::with_capacity(k);
    let cap = 10_000 * k as u64 + 10_000;
    let mut i = 1u64;
    while out.len() < k && i < cap {
        let mut z = centre.clone();
        for (dim, b) in basis.iter().enumerate() {
            let t = (radical_inverse(i, PRIMES[dim]) + shift[dim]).fract();
            let s = (2.0 * t - 1.0) * radius;
            z.iter_mut().zip(b).for_each(|(a, v)| *a += s * v);
        }
        if dia.in_cones(&z) {
            out.push(z);
        }
        i += 1;
    }
    if out.len() < k {
        return Err(Error::Geometry(format!("cross-section at h = {h} is empty")));
    }
    Ok(out)
}

fn segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let ap: Vec<f64> = p.iter().zip(a).map(|(x, y)| x - y).collect();
    let l2 = crate::lattice::dot(&ab, &ab);
    let t = if l2 == 0.0 {
        0.0
    } else {
        (crate::lattice::dot(&ap, &ab) / l2).clamp(0.0, 1.0)
    };
    p.iter()
        .zip(a)
        .zip(&ab)
        .map(|((p, a), v)| (p - a - t * v).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Simple member path from `x` to `y` tracking `[x, u] u [u, y]`: line staircases
/// through the lattice point nearest `u`, with non-member stretches bridged
/// by shortest paths inside the diamond, then loop-erased.
pub fn tracking_path(dia: &Diamond, u: &[f64]) -> Result<Vec<usize>> {
    let region = dia.region();
    let g = region.graph();
    let mid: Point = u.iter().map(|v| v.round() as i64).collect();
    let mut raw = crate::lattice::line_staircase(dia.x(), &mid);
    raw.extend(crate::lattice::line_staircase(&mid, dia.y()).into_iter().skip(1));
    let kept: Vec<usize> = raw.iter().filter_map(|p| region.index_of(p)).collect();
    let mut walk: Vec<usize> = vec![kept[0]];
    for &v in &kept[1..] {
        let last = *walk.last().expect("nonempty");
        if v == last {
            continue;
        }
        if g.edge_between(last, v).is_some() {
            walk.push(v);
        } else {
            let bridge = g
                .shortest_path(last, v)
                .ok_or_else(|| Error::Geometry("diamond is disconnected".into()))?;
            walk.extend_from_slice(&bridge[1..]);
        }
    }
    Ok(loop_erase(&walk))
}

/// Chronological loop erasure.
pub fn loop_erase(walk: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(walk.len());
    let mut pos: HashMap<usize, usize> = HashMap::new();
    for &v in walk {
        if let Some(&k) = pos.get(&v) {
            for w in out.drain(k + 1..) {
                pos.remove(&w);
            }
        } else {
            pos.insert(v, out.len());
            out.push(v);
        }
    }
    out
}

/// `theta = (1/K) sum_k theta_{sigma_{u_k}}` over `K` cross-section points.
pub fn spread_flow(dia: &Diamond, h: f64, k: usize, seed: u64) -> Result<SpreadFlow> {
    if k == 0 {
        return Err(invalid("K", "at least one sample point is required"));
    }
    if !(0.1 - 1e-12..=0.9 + 1e-12).contains(&h) {
        return Err(invalid("h", format!("{h} outside [1/10, 9/10]")));
    }
    let g = dia.region().graph();
    let (xr, yr) = (to_real(dia.x()), to_real(dia.y()));
    let mut counts = vec![0i64; g.edge_count()];
    let mut max_dev: f64 = 0.0;
    for u in cross_section_points(dia, h, k, seed)? {
        let path = tracking_path(dia, &u)?;
        for w in path.windows(2) {
            let e = g.edge_between(w[0], w[1]).expect("path steps are edges");
            counts[e] += if g.edge(e).0 == w[0] { 1 } else { -1 };
        }
        for &v in &path {
            let p = to_real(dia.region().point(v));
            max_dev = max_dev.max(segment_distance(&p, &xr, &u).min(segment_distance(&p, &u, &yr)));
        }
    }
    let values = counts.iter().map(|&c| c as f64 / k as f64).collect();
    Ok(SpreadFlow {
        flow: UnitFlow::new(g.clone(), values, dia.x_index(), dia.y_index())?,
        counts,
        samples: k,
        h,
        max_deviation: max_dev,
    })
}

/// Outcome of the resistance bound on one diamond.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResistanceBoundReport {
    pub chi_bar: bool,
    /// `a D^N`, the resistance of the `gamma = c^{xy}/a` network.
    pub a_times_dn: f64,
    /// Energy of the spread flow in the `gamma` network.
    pub flow_energy_bound: f64,
    pub h: f64,
    pub samples: usize,
    /// Largest `(1/gamma) / (16 B_iz^2 B_jz^2)`; at most 1.
    pub estcond_ratio: f64,
    /// Smallest `gamma_ij / (c |i - z|^-beta)` over `i, j in R^z`, `i != z`.
    pub corollary_ratio: f64,
    pub bound_holds: bool,
    pub skipped: bool,
}

/// Evaluates `chi-bar`, `a D^N` and the spread-flow energy on `dia`. The field
/// and weights live on the diamond itself: vertex `k` is member `k`, edge `e`
/// is edge `e` of `dia.region().graph()`.
pub fn resistance_bound_check(
    cfg: &FieldConfig,
    a: &EdgeWeights,
    dia: &Diamond,
    chi: &ChiParams,
    samples: usize,
    seed: u64,
) -> Result<ResistanceBoundReport> {
    let g = dia.region().graph();
    let (x, y) = (dia.x_index(), dia.y_index());
    let all: Vec<usize> = (0..g.vertex_count()).collect();
    let net = xy_conductances(g, cfg, a, x, y, &all)?;
    let a_min = a.min();
    let gamma = net.scaled(1.0 / a_min)?;
    let estcond = estcond_ratio(&net, cfg, a_min, x, y);
    let chi_ok = chi_bar(dia, cfg, chi);

    let (rx, ry) = dia.sub_regions();
    let pts = dia.members();
    let mut corollary = f64::INFINITY;
    for (z, set) in [(x, &rx), (y, &ry)] {
        let mut inside = vec![false; g.vertex_count()];
        set.iter().for_each(|&k| inside[k] = true);
        for (e, &(i, j)) in g.edges().iter().enumerate() {
            if !(inside[i] && inside[j]) {
                continue;
            }
            for v in [i, j] {
                if v != z {
                    let lower = chi.c_const() * euclid(&pts[v], &pts[z]).powf(-chi.beta());
                    corollary = corollary.min(gamma.c[e] / lower);
                }
            }
        }
    }

    let a_dn = effective_resistance(&gamma, x, y)?;
    let h = select_h(dia)?;
    let spread = spread_flow(dia, h, samples, seed)?;
    let energy = flow_energy(&gamma, &spread.flow)?;
    Ok(ResistanceBoundReport {
        chi_bar: chi_ok,
        a_times_dn: a_dn,
        flow_energy_bound: energy,
        h,
        samples,
        estcond_ratio: estcond,
        corollary_ratio: corollary,
        bound_holds: a_dn <= energy * (1.0 + 1e-10),
        skipped: !chi_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_diamond, DiamondKind};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn greens_small_cases() {
        let net = ConductanceNetwork::uniform(Graph::single_edge(), 4.0, 0).unwrap();
        assert!(close(greens_matrix(&net).unwrap().get(1, 1), 0.25, 1e-14));
        let net = ConductanceNetwork::uniform(Graph::path(3), 1.0, 0).unwrap();
        let g = greens_matrix(&net).unwrap();
        assert!(close(g.get(1, 1), 1.0, 1e-12));
        assert!(close(g.get(2, 2), 2.0, 1e-12));
        assert!(close(g.get(1, 2), 1.0, 1e-12));
        assert_eq!(g.get(0, 2), 0.0);
    }

    #[test]
    fn series_and_parallel() {
        let net = ConductanceNetwork::uniform(Graph::single_edge(), 2.0, 0).unwrap();
        assert!(close(effective_resistance(&net, 0, 1).unwrap(), 0.5, 1e-12));
        let net = ConductanceNetwork::uniform(Graph::path(3), 1.0, 1).unwrap();
        assert!(close(effective_resistance(&net, 0, 2).unwrap(), 2.0, 1e-12));
        let net = ConductanceNetwork::uniform(Graph::cycle(4), 1.0, 0).unwrap();
        assert!(close(effective_resistance(&net, 0, 2).unwrap(), 1.0, 1e-12));
        assert!(effective_resistance(&net, 1, 1).is_err());
    }

    #[test]
    fn gamblers_ruin() {
        let net = ConductanceNetwork::uniform(Graph::path(3), 1.0, 0).unwrap();
        let p = hitting_probability(&net, 0, &[2]).unwrap();
        assert!(close(p, 0.5, 1e-12));
        let r = resistance_to_set(&net, 0, &[2]).unwrap();
        assert!(close(net.vertex_conductance(0) * r * p, 1.0, 1e-12));
        let e = ConductanceNetwork::uniform(Graph::single_edge(), 3.0, 0).unwrap();
        assert!(close(hitting_probability(&e, 0, &[1]).unwrap(), 1.0, 1e-14));
        assert!(hitting_probability(&e, 0, &[]).is_err());
        assert!(hitting_probability(&e, 0, &[0]).is_err());
    }

    #[test]
    fn disconnected_rejected() {
        let g = Graph::new(3, [(0, 1)]).unwrap();
        assert!(matches!(ConductanceNetwork::uniform(g, 1.0, 0), Err(Error::Disconnected)));
        assert!(ConductanceNetwork::new(Graph::single_edge(), vec![0.0], 0).is_err());
    }

    #[test]
    fn cycle_current_splits() {
        let net = ConductanceNetwork::uniform(Graph::cycle(4), 1.0, 0).unwrap();
        let f = min_energy_flow(&net, 0, 2).unwrap();
        assert!(close(f.theta(0, 1), 0.5, 1e-12));
        assert!(close(f.theta(3, 0), -0.5, 1e-12));
        assert!(close(flow_energy(&net, &f).unwrap(), 1.0, 1e-12));
        assert!(f.divergence_error() < 1e-12);
    }

    #[test]
    fn path_flow_energy_and_scaling() {
        let net = ConductanceNetwork::uniform(Graph::path(3), 1.0, 0).unwrap();
        let f = UnitFlow::from_path(net.graph(), &[0, 1, 2]).unwrap();
        assert_eq!(flow_energy(&net, &f).unwrap(), 2.0);
        assert_eq!(flow_energy(&net.scaled(2.0).unwrap(), &f).unwrap(), 1.0);
        assert!(UnitFlow::from_path(net.graph(), &[0, 2]).is_err());
        let other = ConductanceNetwork::uniform(Graph::cycle(3), 1.0, 0).unwrap();
        assert!(flow_energy(&other, &f).is_err());
    }

    #[test]
    fn xy_conductances_trivial_cases() {
        let g = Graph::triangle();
        let a = EdgeWeights::new(vec![1.0, 2.0, 3.0]).unwrap();
        let net = xy_conductances_full(&g, &FieldConfig::zero(3, 0), &a, 0, 1).unwrap();
        assert_eq!(net.conductances(), a.values());
        let e = Graph::single_edge();
        let cfg = FieldConfig::new(vec![0.0, 1.3], vec![0.0, -0.7], 0).unwrap();
        let a1 = EdgeWeights::new(vec![2.5]).unwrap();
        let net = xy_conductances_full(&e, &cfg, &a1, 0, 1).unwrap();
        assert!(close(net.conductances()[0], 2.5, 1e-14));
        assert!(close(d_xy(&e, &cfg, &a1, 0, 1).unwrap(), 0.4, 1e-13));
    }

    #[test]
    fn chi_params_ranges() {
        assert!(ChiParams::new(1.0, 0.1).is_err());
        assert!(ChiParams::new(2.0, 0.2).is_err());
        let c = ChiParams::new(2.0, 0.125).unwrap();
        assert_eq!(c.beta(), 0.5);
        assert_eq!(c.c_const(), 1.0 / (16.0 * 64.0));
    }

    #[test]
    fn loop_erasure() {
        assert_eq!(loop_erase(&[0, 1, 2, 1, 3]), vec![0, 1, 3]);
        assert_eq!(loop_erase(&[0, 1, 0, 2]), vec![0, 2]);
    }

    #[test]
    fn halton_points_lie_in_section() {
        let dia = build_diamond(&[0, 0, 0], &[10, 0, 0], DiamondKind::Exact).unwrap();
        let pts = cross_section_points(&dia, 0.3, 50, 4).unwrap();
        assert_eq!(pts.len(), 50);
        for p in &pts {
            assert!((p[0] - 3.0).abs() < 1e-12);
            assert!(dia.in_cones(p));
        }
    }

    #[test]
    fn spread_flow_single_path_and_average() {
        let dia = build_diamond(&[0, 0, 0], &[8, 0, 0], DiamondKind::Exact).unwrap();
        let one = spread_flow(&dia, 0.5, 1, 3).unwrap();
        assert!(one.counts.iter().all(|c| c.abs() <= 1));
        for k in [1, 7, 40] {
            let s = spread_flow(&dia, 0.5, k, 11).unwrap();
            let div = s.count_divergence();
            for (v, d) in div.iter().enumerate() {
                let want = if v == dia.x_index() {
                    k as i64
                } else if v == dia.y_index() {
                    -(k as i64)
                } else {
                    0
                };
                assert_eq!(*d, want);
            }
            assert!(s.flow.divergence_error() < 1e-12);
        }
        assert!(spread_flow(&dia, 0.5, 0, 3).is_err());
        assert!(spread_flow(&dia, 0.05, 1, 3).is_err());
    }

    #[test]
    fn zero_field_bound_is_graph_resistance() {
        let dia = build_diamond(&[0, 0, 0], &[10, 0, 0], DiamondKind::Deformed { direction: vec![1.0, 0.0, 0.0] })
            .unwrap();
        let n = dia.len();
        let m = dia.region().graph().edge_count();
        let cfg = FieldConfig::zero(n, dia.x_index());
        let a = EdgeWeights::new(vec![3.0; m]).unwrap();
        let chi = ChiParams::new(2.0, 0.125).unwrap();
        let rep = resistance_bound_check(&cfg, &a, &dia, &chi, 50, 1).unwrap();
        assert!(rep.chi_bar && !rep.skipped && rep.bound_holds);
        let plain = neumann_resistance(&dia, &vec![1.0; m]).unwrap();
        assert!(close(rep.a_times_dn, plain, 1e-10));
        assert!(rep.estcond_ratio <= 1.0);
    }
}
