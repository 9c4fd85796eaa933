//! Monte Carlo checks of expectation identities and bounds under the `(u, s)`
//! law: the Ward identity `<B^m (1 - m D)> = 1`, its protected (Neumann)
//! version, the moment bound `<prod B^m> <= 2^n`, the `cosh^m` fluctuation
//! bound, the good-point decomposition, and the transience pipeline
//! `1/P <= E[1/P] = E[W_0 R]`.
//!
//! Standard errors come from batch means (50 batches pooled over chains).
//! A check passes within 3 standard errors and is suspicious beyond 4.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{
    b_quantity, bxyz_holds, run_chains, sample_joint_mcmc, ChainReport, EdgeWeights, FieldConfig, FieldSampler,
    McmcParams,
};
use crate::graph::Graph;
use crate::lattice::{euclid, subcube_tree, Diamond, LatticeBox, Point, Region, SubcubeTree};
use crate::network::{
    effective_resistance, estcond_ratio, hitting_probability, resistance_to_set, xy_conductances,
    xy_conductances_full, ChiParams, ConductanceNetwork,
};
use crate::rng;

pub const BATCHES: usize = 50;
pub const PASS_SIGMAS: f64 = 3.0;
pub const SUSPICIOUS_SIGMAS: f64 = 4.0;

/// Mean with a batch-means standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
    pub ess: f64,
}

impl McEstimate {
    /// A deterministic value.
    pub fn exact(v: f64) -> Self {
        Self {
            mean: v,
            stderr: 0.0,
            samples: 0,
            ess: 0.0,
        }
    }

    /// Independent samples.
    pub fn from_iid(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
            samples: n,
            ess: n as f64,
        }
    }

    /// Pooled batch means over several chains, about `BATCHES` batches total.
    pub fn from_chains(series: &[Vec<f64>]) -> Self {
        let n: usize = series.iter().map(Vec::len).sum();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                samples: 0,
                ess: 0.0,
            };
        }
        let mean = series.iter().flatten().sum::<f64>() / n as f64;
        let var_all = if n > 1 {
            series.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let per_chain = BATCHES.div_ceil(series.len().max(1));
        let mut batch_means = Vec::new();
        for s in series {
            let nb = per_chain.min(s.len());
            if nb == 0 {
                continue;
            }
            let size = s.len() / nb;
            for b in 0..nb {
                let chunk = &s[b * size..(b + 1) * size];
                batch_means.push(chunk.iter().sum::<f64>() / size as f64);
            }
        }
        let stderr = if batch_means.len() >= 2 {
            let bm = batch_means.iter().sum::<f64>() / batch_means.len() as f64;
            let v = batch_means.iter().map(|x| (x - bm).powi(2)).sum::<f64>() / (batch_means.len() - 1) as f64;
            (v / batch_means.len() as f64).sqrt()
        } else {
            (var_all / n as f64).sqrt()
        };
        let ess = if stderr > 0.0 {
            (var_all / (stderr * stderr)).min(n as f64)
        } else {
            n as f64
        };
        Self {
            mean,
            stderr,
            samples: n,
            ess,
        }
    }

    /// `(mean - target) / stderr`, zero when both vanish.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = self.mean - target;
        if self.stderr > 0.0 {
            diff / self.stderr
        } else if diff.abs() <= 1e-12 * target.abs().max(1.0) {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// Within 3 standard errors.
    Pass,
    /// Between 3 and 4 standard errors.
    Marginal,
    /// Beyond 4 standard errors.
    Suspicious,
}

impl Verdict {
    fn from_z(z: f64) -> Self {
        if z <= PASS_SIGMAS {
            Verdict::Pass
        } else if z <= SUSPICIOUS_SIGMAS {
            Verdict::Marginal
        } else {
            Verdict::Suspicious
        }
    }

    pub fn equal(est: &McEstimate, target: f64) -> Self {
        Self::from_z(est.z_score(target).abs())
    }

    pub fn at_most(est: &McEstimate, bound: f64) -> Self {
        Self::from_z(est.z_score(bound))
    }

    pub fn at_least(est: &McEstimate, bound: f64) -> Self {
        Self::from_z(-est.z_score(bound))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Marginal => "marginal",
            Verdict::Suspicious => "suspicious",
        }
    }

    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    Equal,
    AtMost,
    Below,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Equal => "equal",
            Relation::AtMost => "at-most",
            Relation::Below => "below",
        }
    }
}

/// JSON-ready outcome of one check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub estimate: f64,
    pub stderr: f64,
    pub target: f64,
    pub relation: Relation,
    pub verdict: Verdict,
    pub samples: usize,
    pub ess: f64,
    pub lemma_violations: usize,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, est: McEstimate, target: f64, relation: Relation) -> Self {
        let verdict = match relation {
            Relation::Equal => Verdict::equal(&est, target),
            Relation::AtMost | Relation::Below => Verdict::at_most(&est, target),
        };
        Self {
            name: name.into(),
            estimate: est.mean,
            stderr: est.stderr,
            target,
            relation,
            verdict,
            samples: est.samples,
            ess: est.ess,
            lemma_violations: 0,
            warnings: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Appends `name,estimate,stderr,target,relation,verdict,samples` to a
    /// CSV ledger, writing the header when the file is new or empty.
    pub fn append_to_ledger(&self, path: &std::path::Path) -> Result<()> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            wr.write_record(["name", "estimate", "stderr", "target", "relation", "verdict", "samples"])?;
        }
        wr.write_record([
            self.name.clone(),
            self.estimate.to_string(),
            self.stderr.to_string(),
            self.target.to_string(),
            self.relation.as_str().to_string(),
            self.verdict.as_str().to_string(),
            self.samples.to_string(),
        ])?;
        wr.flush()?;
        Ok(())
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    fn absorb(&mut self, chains: &[ChainReport], violations: usize) {
        for (k, c) in chains.iter().enumerate() {
            for w in &c.warnings {
                self.warnings.push(format!("chain {k}: {w}"));
            }
        }
        self.lemma_violations = violations;
        if violations > 0 {
            self.verdict = Verdict::Suspicious;
            self.warnings.push(format!("{violations} pointwise lemma violations"));
        }
    }
}

/// Sampler budget shared by all estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSetup {
    pub params: McmcParams,
    pub chains: usize,
    pub seed: u64,
}

impl SamplerSetup {
    pub fn new(params: McmcParams, chains: usize, seed: u64) -> Result<Self> {
        params.validate()?;
        if chains == 0 {
            return Err(invalid("chains", "at least one chain is required"));
        }
        Ok(Self { params, chains, seed })
    }
}

/// Observable values per chain (outer), per observable (middle), per sample.
struct Collected {
    series: Vec<Vec<Vec<f64>>>,
    chains: Vec<ChainReport>,
    violations: usize,
}

impl Collected {
    fn estimate(&self, k: usize) -> McEstimate {
        let per_chain: Vec<Vec<f64>> = self.series.iter().map(|c| c[k].clone()).collect();
        McEstimate::from_chains(&per_chain)
    }
}

type Observation = (Vec<f64>, usize);

fn collect_field<F>(graph: &Graph, a: &EdgeWeights, root: usize, setup: &SamplerSetup, k: usize, obs: F) -> Result<Collected>
where
    F: Fn(&FieldConfig) -> Result<Observation> + Sync,
{
    let runs = run_chains(setup.chains, setup.seed, |_, seed| -> Result<(Vec<Vec<f64>>, ChainReport, usize)> {
        let mut sampler = FieldSampler::new(graph, a, FieldConfig::zero(graph.vertex_count(), root))?;
        let mut rng = rng::rng_from_seed(seed);
        let mut series = vec![Vec::new(); k];
        let mut err = None;
        let mut violations = 0;
        let report = sampler.run(&setup.params, &mut rng, |cfg| {
            if err.is_some() {
                return;
            }
            match obs(cfg) {
                Ok((vals, v)) => {
                    violations += v;
                    for (s, x) in series.iter_mut().zip(vals) {
                        s.push(x);
                    }
                }
                Err(e) => err = Some(e),
            }
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok((series, report, violations)),
        }
    });
    let mut out = Collected {
        series: Vec::new(),
        chains: Vec::new(),
        violations: 0,
    };
    for r in runs {
        let (s, c, v) = r?;
        out.series.push(s);
        out.chains.push(c);
        out.violations += v;
    }
    Ok(out)
}

/// Pointwise checks of `B_xz <= 2 B_xy B_yz` (for `x, y` against every `z`)
/// and of `1/gamma <= 16 B_iz^2 B_jz^2` on the given `c^{xy}` network.
pub fn lemma_hook(cfg: &FieldConfig, net: &ConductanceNetwork, a_min: f64, x: usize, y: usize) -> usize {
    let mut bad = 0;
    for z in 0..cfg.len() {
        if !bxyz_holds(cfg, x, y, z) || !bxyz_holds(cfg, y, x, z) || !bxyz_holds(cfg, z, x, y) {
            bad += 1;
        }
    }
    if estcond_ratio(net, cfg, a_min, x, y) > 1.0 + 1e-12 {
        bad += 1;
    }
    bad
}

fn check_m(m: f64, limit: f64, what: &str) -> Result<()> {
    if !(m >= 0.0) || !m.is_finite() {
        return Err(invalid("m", "must be a non-negative number"));
    }
    if m > limit * (1.0 + 1e-12) {
        return Err(invalid("m", format!("{m} exceeds {what} = {limit}")));
    }
    Ok(())
}

/// Estimate of `<B_xy^m (1 - m D_xy)>` with `D_xy` the resistance of the
/// whole-graph `c^{xy}` network. Target 1; requires `m <= a/4`.
#[allow(clippy::too_many_arguments)]
pub fn ward_identity_estimate(
    graph: &Graph,
    a: &EdgeWeights,
    root: usize,
    x: usize,
    y: usize,
    m: f64,
    setup: &SamplerSetup,
) -> Result<(CheckReport, McEstimate)> {
    graph.check_vertex(x)?;
    graph.check_vertex(y)?;
    if x == y {
        return Err(invalid("y", "the pair must have distinct vertices"));
    }
    check_m(m, a.min() / 4.0, "a/4")?;
    let name = format!("ward <B^m(1-mD)> x={x} y={y} m={m}");
    if m == 0.0 {
        let r = CheckReport::new(name, McEstimate::exact(1.0), 1.0, Relation::Equal).with_note("m = 0: identically 1");
        return Ok((r, McEstimate::exact(1.0)));
    }
    let a_min = a.min();
    let col = collect_field(graph, a, root, setup, 2, |cfg| {
        let net = xy_conductances_full(graph, cfg, a, x, y)?;
        let d = effective_resistance(&net, x, y)?;
        let bm = b_quantity(cfg, x, y).powf(m);
        Ok((vec![bm * (1.0 - m * d), bm], lemma_hook(cfg, &net, a_min, x, y)))
    })?;
    let mut rep = CheckReport::new(name, col.estimate(0), 1.0, Relation::Equal);
    rep.absorb(&col.chains, col.violations);
    Ok((rep, col.estimate(1)))
}

/// A region for the protected identity: apexes, exponent, member vertices
/// (indices of the ambient region) and the two halves used by `chi-bar`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtectedRegion {
    pub x: usize,
    pub y: usize,
    pub m: f64,
    pub vertices: Vec<usize>,
    pub rx: Vec<usize>,
    pub ry: Vec<usize>,
}

impl ProtectedRegion {
    /// The region made of a single edge.
    pub fn edge(x: usize, y: usize, m: f64) -> Self {
        Self {
            x,
            y,
            m,
            vertices: vec![x, y],
            rx: vec![x, y],
            ry: vec![x, y],
        }
    }

    /// A diamond placed inside `ambient` (its members must be lattice points
    /// of `ambient`).
    pub fn from_diamond(ambient: &Region, dia: &Diamond, m: f64) -> Result<Self> {
        let vertices = ambient.locate(dia.members())?;
        let (rx, ry) = dia.sub_regions();
        Ok(Self {
            x: vertices[dia.x_index()],
            y: vertices[dia.y_index()],
            m,
            rx: rx.iter().map(|&k| vertices[k]).collect(),
            ry: ry.iter().map(|&k| vertices[k]).collect(),
            vertices,
        })
    }

    /// Members all of whose graph neighbours are members.
    pub fn interior(&self, graph: &Graph) -> Vec<usize> {
        let set: std::collections::HashSet<usize> = self.vertices.iter().copied().collect();
        self.vertices
            .iter()
            .copied()
            .filter(|&v| graph.neighbours(v).iter().all(|(w, _)| set.contains(w)))
            .collect()
    }

    fn chi_bar(&self, cfg: &FieldConfig, pts: &[Point], chi: &ChiParams) -> bool {
        let ok = |z: usize, set: &[usize]| {
            set.iter()
                .filter(|&&j| j != z)
                .all(|&j| chi.chi(b_quantity(cfg, z, j), euclid(&pts[z], &pts[j])))
        };
        ok(self.x, &self.rx) && ok(self.y, &self.ry)
    }
}

/// Rejects region families whose interiors intersect.
pub fn check_interiors_disjoint(graph: &Graph, regions: &[ProtectedRegion]) -> Result<()> {
    let interiors: Vec<Vec<usize>> = regions.iter().map(|r| r.interior(graph)).collect();
    for i in 0..regions.len() {
        for j in i + 1..regions.len() {
            if interiors[i].iter().any(|v| interiors[j].contains(v)) {
                return Err(Error::OverlappingRegions(i, j));
            }
        }
    }
    Ok(())
}

/// `<prod_i B_i^{m_i} (1 - m_i D^N_i)>` and the same with `chi-bar_i`
/// inserted, both expected to be at most 1.
pub fn protected_ward_estimate(
    region: &Region,
    a: &EdgeWeights,
    root: usize,
    regions: &[ProtectedRegion],
    chi: &ChiParams,
    setup: &SamplerSetup,
) -> Result<(CheckReport, CheckReport)> {
    let graph = region.graph();
    if regions.is_empty() {
        return Err(invalid("regions", "at least one region is required"));
    }
    for r in regions {
        check_m(r.m, a.min() / 4.0, "a/4")?;
        for &v in r.vertices.iter().chain([&r.x, &r.y]) {
            graph.check_vertex(v)?;
        }
    }
    check_interiors_disjoint(graph, regions)?;
    let pts = region.points();
    let a_min = a.min();
    let col = collect_field(graph, a, root, setup, 2, |cfg| {
        let mut plain = 1.0;
        let mut with_chi = 1.0;
        let mut bad = 0;
        for r in regions {
            let net = xy_conductances(graph, cfg, a, r.x, r.y, &r.vertices)?;
            let lx = net.local_index(r.x).expect("x in region");
            let ly = net.local_index(r.y).expect("y in region");
            let dn = effective_resistance(&net, lx, ly)?;
            let term = b_quantity(cfg, r.x, r.y).powf(r.m) * (1.0 - r.m * dn);
            plain *= term;
            with_chi *= if r.chi_bar(cfg, pts, chi) { term } else { 0.0 };
            bad += lemma_hook(cfg, &net, a_min, r.x, r.y);
        }
        Ok((vec![plain, with_chi], bad))
    })?;
    let mut a_rep = CheckReport::new("protected <prod B^m (1-mD^N)>", col.estimate(0), 1.0, Relation::AtMost);
    let mut b_rep = CheckReport::new("protected <prod B^m chi (1-mD^N)>", col.estimate(1), 1.0, Relation::AtMost);
    a_rep.absorb(&col.chains, col.violations);
    b_rep.absorb(&col.chains, col.violations);
    Ok((a_rep, b_rep))
}

/// `<B^m chi-bar> <= (1 - m C / a)^-1` for one region, where `c_emp` is an
/// empirical bound on `a D^N` under `chi-bar`.
pub fn protected_chi_moment(
    region: &Region,
    a: &EdgeWeights,
    root: usize,
    pr: &ProtectedRegion,
    chi: &ChiParams,
    c_emp: f64,
    setup: &SamplerSetup,
) -> Result<CheckReport> {
    let a_min = a.min();
    let q = 1.0 - pr.m * c_emp / a_min;
    if !(q > 0.0) {
        return Err(invalid("m", format!("m C / a = {} must be below 1", pr.m * c_emp / a_min)));
    }
    let pts = region.points();
    let graph = region.graph();
    let col = collect_field(graph, a, root, setup, 1, |cfg| {
        let v = if pr.chi_bar(cfg, pts, chi) {
            b_quantity(cfg, pr.x, pr.y).powf(pr.m)
        } else {
            0.0
        };
        Ok((vec![v], 0))
    })?;
    let mut rep = CheckReport::new("protected <B^m chi>", col.estimate(0), 1.0 / q, Relation::AtMost)
        .with_note(format!("bound (1 - m C/a)^-1 with empirical C = {c_emp}"));
    rep.absorb(&col.chains, col.violations);
    Ok(rep)
}

/// `<prod_j B_{e_j}^{m_j}>` against `2^n`; requires `m_j <= a/2`.
pub fn moment_bound_estimate(
    graph: &Graph,
    a: &EdgeWeights,
    root: usize,
    edges: &[(usize, usize)],
    ms: &[f64],
    setup: &SamplerSetup,
) -> Result<CheckReport> {
    if edges.len() != ms.len() {
        return Err(invalid("m", "one exponent per edge is required"));
    }
    for (&(i, j), &m) in edges.iter().zip(ms) {
        if graph.edge_between(i, j).is_none() {
            return Err(invalid("edges", format!("{{{i}, {j}}} is not an edge")));
        }
        check_m(m, a.min() / 2.0, "a/2")?;
    }
    let bound = 2f64.powi(edges.len() as i32);
    let name = format!("moments <prod B^m> over {} edges", edges.len());
    if edges.is_empty() {
        return Ok(CheckReport::new(name, McEstimate::exact(1.0), 1.0, Relation::AtMost).with_note("empty product"));
    }
    let col = collect_field(graph, a, root, setup, 1, |cfg| {
        let v = edges
            .iter()
            .zip(ms)
            .map(|(&(i, j), &m)| b_quantity(cfg, i, j).powf(m))
            .product();
        Ok((vec![v], 0))
    })?;
    let mut rep = CheckReport::new(name, col.estimate(0), bound, Relation::AtMost);
    rep.absorb(&col.chains, col.violations);
    Ok(rep)
}

/// `<cosh^m(U_x - U_y)>` for every pair, reported against 2.
pub fn fluctuation_estimate(
    graph: &Graph,
    a: &EdgeWeights,
    root: usize,
    m: f64,
    pairs: &[(usize, usize)],
    setup: &SamplerSetup,
) -> Result<Vec<CheckReport>> {
    if !(m > 0.0) {
        return Err(invalid("m", "must be positive"));
    }
    for &(x, y) in pairs {
        graph.check_vertex(x)?;
        graph.check_vertex(y)?;
    }
    let col = collect_field(graph, a, root, setup, pairs.len(), |cfg| {
        let u = cfg.u();
        Ok((pairs.iter().map(|&(x, y)| (u[x] - u[y]).cosh().powf(m)).collect(), 0))
    })?;
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(k, &(x, y))| {
            let est = if x == y { McEstimate::exact(1.0) } else { col.estimate(k) };
            let mut rep = CheckReport::new(format!("<cosh^{m}(U_{x}-U_{y})>"), est, 2.0, Relation::Below);
            if x != y {
                rep.absorb(&col.chains, col.violations);
            }
            rep
        })
        .collect())
}

/// Outcome of the good-point decomposition on one field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodPointReport {
    /// `chi^c_{R_n}`: no `n`-good point in the cube.
    pub no_good_point: bool,
    /// `sum_T prod_{v in L_T} S^c_v` with indicator summands.
    pub rhs_indicator: f64,
    /// The same with the summands `B^m / (b^m |x-y|^{alpha m})`.
    pub rhs_bound: f64,
    /// `rhs_bound` from the recursion `f(v) = S(v) + prod f(children)`.
    pub rhs_recursive: f64,
    pub trees: usize,
    pub holds: bool,
}

/// Precomputed geometry for repeated good-point checks on one cube.
pub struct GoodPointGeometry {
    tree: SubcubeTree,
    /// Ambient indices of each node's points.
    node_points: Vec<Vec<usize>>,
    /// Dense lookup over the bounding box of the ambient region.
    lower: Vec<i64>,
    extent: Vec<i64>,
    table: Vec<usize>,
    coords: Vec<Vec<i64>>,
    /// Offsets with `1 <= |v| <= 4^n`: coordinates and norm, sorted by norm.
    offsets: Vec<(Vec<i64>, f64)>,
    /// For depth `k`, the range of `offsets` with `4^{n-k-1} < |v| <= 4^{n-k}`.
    shells: Vec<std::ops::Range<usize>>,
    leaf_sets: Vec<Vec<usize>>,
}

const MISSING: usize = usize::MAX;

impl GoodPointGeometry {
    /// `ambient` must contain the cube `R_n(z)`.
    pub fn new(ambient: &Region, z: &[i64], n: usize, cap: u128) -> Result<Self> {
        let tree = subcube_tree(z, n)?;
        if tree.tree_count() > cap {
            return Err(Error::EnumerationCap {
                requested: tree.tree_count(),
                cap,
            });
        }
        let leaf_sets = tree.leaf_sets(cap)?;
        let node_points = tree
            .nodes()
            .iter()
            .map(|node| ambient.locate(&node.points()))
            .collect::<Result<Vec<_>>>()?;
        let d = z.len();
        let pts = ambient.points();
        let lower: Vec<i64> = (0..d).map(|c| pts.iter().map(|p| p[c]).min().unwrap_or(0)).collect();
        let upper: Vec<i64> = (0..d).map(|c| pts.iter().map(|p| p[c]).max().unwrap_or(0)).collect();
        let extent: Vec<i64> = lower.iter().zip(&upper).map(|(l, u)| u - l + 1).collect();
        let mut table = vec![MISSING; extent.iter().product::<i64>() as usize];
        let coords: Vec<Vec<i64>> = pts.iter().map(|p| p.iter().zip(&lower).map(|(a, b)| a - b).collect()).collect();
        for (k, c) in coords.iter().enumerate() {
            table[flat(c, &extent)] = k;
        }
        let reach = 4i64.pow(n as u32);
        let mut offsets = Vec::new();
        let mut cur = vec![-reach; d];
        loop {
            let r2: i64 = cur.iter().map(|v| v * v).sum();
            if r2 >= 1 && r2 <= reach * reach {
                offsets.push((cur.clone(), (r2 as f64).sqrt()));
            }
            let mut k = 0;
            while k < d {
                cur[k] += 1;
                if cur[k] <= reach {
                    break;
                }
                cur[k] = -reach;
                k += 1;
            }
            if k == d {
                break;
            }
        }
        offsets.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        let shells = (0..=n)
            .map(|k| {
                let hi = 4f64.powi((n - k) as i32);
                let lo = hi / 4.0;
                let start = offsets.partition_point(|o| o.1 <= lo);
                let end = offsets.partition_point(|o| o.1 <= hi);
                start..end
            })
            .collect();
        Ok(Self {
            tree,
            node_points,
            lower,
            extent,
            table,
            coords,
            offsets,
            shells,
            leaf_sets,
        })
    }

    pub fn tree(&self) -> &SubcubeTree {
        &self.tree
    }

    #[inline]
    fn neighbour(&self, x: usize, off: &[i64]) -> Option<usize> {
        let c = &self.coords[x];
        let mut idx = 0i64;
        let mut stride = 1i64;
        for k in 0..c.len() {
            let v = c[k] + off[k];
            if v < 0 || v >= self.extent[k] {
                return None;
            }
            idx += v * stride;
            stride *= self.extent[k];
        }
        let t = self.table[idx as usize];
        (t != MISSING).then_some(t)
    }

    pub fn lower(&self) -> &[i64] {
        &self.lower
    }
}

fn flat(c: &[i64], extent: &[i64]) -> usize {
    let mut idx = 0;
    let mut stride = 1;
    for k in 0..c.len() {
        idx += c[k] * stride;
        stride *= extent[k];
    }
    idx as usize
}

/// Evaluates both sides of `chi^c_{R_n} <= sum_T prod_{L_T} S^c` for one field
/// on `ambient`. Distances are Euclidean; the annulus of a depth-`k` node is
/// `4^{n-k-1} < |x - y| <= 4^{n-k}`.
pub fn good_point_check(
    ambient: &Region,
    geo: &GoodPointGeometry,
    cfg: &FieldConfig,
    chi: &ChiParams,
    m: f64,
) -> Result<GoodPointReport> {
    if cfg.len() != ambient.len() || geo.coords.len() != ambient.len() {
        return Err(invalid("cfg", "field length differs from the region size"));
    }
    let eu: Vec<f64> = cfg.u().iter().map(|u| u.exp()).collect();
    let s = cfg.s();
    let b_of = |i: usize, j: usize| {
        let ds = s[i] - s[j];
        0.5 * (eu[i] / eu[j] + eu[j] / eu[i]) + 0.5 * eu[i] * eu[j] * ds * ds
    };
    // A point of the root cube is n-good when all pairs within 4^n pass.
    // chi(B, r) = 1{B <= b r^alpha}; the thresholds depend only on the offset.
    let thr: Vec<f64> = geo.offsets.iter().map(|(_, r)| chi.b() * r.powf(chi.alpha())).collect();
    let any_good = geo.node_points[0].iter().any(|&x| {
        geo.offsets.iter().zip(&thr).all(|((off, _), &t)| match geo.neighbour(x, off) {
            Some(y) => b_of(x, y) <= t,
            None => true,
        })
    });
    let nodes = geo.tree.nodes();
    let mut s_ind = vec![0.0; nodes.len()];
    let mut s_bnd = vec![0.0; nodes.len()];
    for (v, node) in nodes.iter().enumerate() {
        let range = geo.shells[node.depth()].clone();
        let shell = &geo.offsets[range.clone()];
        let shell_thr = &thr[range];
        for &x in &geo.node_points[v] {
            for ((off, _), &t) in shell.iter().zip(shell_thr) {
                if let Some(y) = geo.neighbour(x, off) {
                    let ratio = b_of(x, y) / t;
                    if ratio > 1.0 {
                        s_ind[v] += 1.0;
                    }
                    s_bnd[v] += if m == 1.0 { ratio } else { ratio.powf(m) };
                }
            }
        }
    }
    let sum_over_trees = |s: &[f64]| -> f64 {
        geo.leaf_sets
            .iter()
            .map(|leaves| leaves.iter().map(|&v| s[v]).product::<f64>())
            .sum()
    };
    let rhs_indicator = sum_over_trees(&s_ind);
    let rhs_bound = sum_over_trees(&s_bnd);
    let mut f = vec![0.0; nodes.len()];
    for v in (0..nodes.len()).rev() {
        let kids = &nodes[v].children;
        f[v] = s_bnd[v] + if kids.is_empty() { 0.0 } else { kids.iter().map(|&c| f[c]).product() };
    }
    let lhs = if any_good { 0.0 } else { 1.0 };
    Ok(GoodPointReport {
        no_good_point: !any_good,
        rhs_indicator,
        rhs_bound,
        rhs_recursive: f[0],
        trees: geo.leaf_sets.len(),
        holds: lhs <= rhs_indicator && rhs_indicator <= rhs_bound * (1.0 + 1e-12),
    })
}

/// A field with `u, s` iid `N(0, sigma^2)` off the root.
pub fn gaussian_field(len: usize, root: usize, sigma: f64, seed: u64) -> Result<FieldConfig> {
    use rand::Rng as _;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid("sigma", "must be a finite non-negative number"));
    }
    let mut rng = rng::rng_from_seed(seed);
    let mut draw = |v: usize| {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        if v == root {
            0.0
        } else {
            sigma * z
        }
    };
    let u: Vec<f64> = (0..len).map(&mut draw).collect();
    let s: Vec<f64> = (0..len).map(&mut draw).collect();
    FieldConfig::new(u, s, root)
}

/// Pointwise lemma checks on random fields and random pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaSweep {
    pub evaluations: usize,
    pub violations: usize,
}

/// Runs [`lemma_hook`] on `count` Gaussian fields (spread `sigma`) with a
/// random distinct pair each time.
pub fn random_lemma_sweep(graph: &Graph, a: &EdgeWeights, count: usize, sigma: f64, seed: u64) -> Result<LemmaSweep> {
    use rand::Rng as _;
    let n = graph.vertex_count();
    if n < 2 {
        return Err(invalid("graph", "needs at least two vertices"));
    }
    let mut rng = rng::rng_from_seed(seed);
    let mut violations = 0;
    for k in 0..count {
        let cfg = gaussian_field(n, 0, sigma, rng::stream_seed(seed, k as u64))?;
        let x = rng.gen_range(0..n);
        let y = (x + rng.gen_range(1..n)) % n;
        let net = xy_conductances_full(graph, &cfg, a, x, y)?;
        violations += lemma_hook(&cfg, &net, a.min(), x, y);
    }
    Ok(LemmaSweep {
        evaluations: count,
        violations,
    })
}

/// Outcome of the transience pipeline on `V_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    /// `E[W_0^U R(0, boundary, W^U)]`.
    pub mean_w0_r: McEstimate,
    /// `E[P]` of the quenched escape probability.
    pub mean_escape: McEstimate,
    /// `R(0, boundary)` with unit conductances.
    pub unit_resistance: f64,
    /// `E[W_0 R] / R(0, boundary)`.
    pub ratio: f64,
    /// `1/E[P] <= E[1/P]` in every batch.
    pub jensen_holds: bool,
    /// Largest `|c_0 R P - 1|` over samples.
    pub max_rpe_error: f64,
    pub warnings: Vec<String>,
}

/// Samples `(W, U)` on `V_n` from the joint law and evaluates the escape
/// probability and resistance of the conductances `W_ij e^{U_i + U_j}`.
pub fn transience_pipeline_check(dim: usize, n: i64, a: f64, setup: &SamplerSetup) -> Result<PipelineReport> {
    let lbox = LatticeBox::new(dim, n)?;
    let graph = lbox.graph();
    let weights = EdgeWeights::uniform(graph, a)?;
    let origin = lbox.origin();
    let boundary = lbox.boundary();
    let unit = ConductanceNetwork::uniform(graph.clone(), 1.0, origin)?;
    let unit_resistance = resistance_to_set(&unit, origin, &boundary)?;
    let runs = run_chains(setup.chains, setup.seed, |_, seed| -> Result<(Vec<Vec<f64>>, ChainReport)> {
        let mut series = vec![Vec::new(), Vec::new(), Vec::new()];
        let mut err = None;
        let report = sample_joint_mcmc(graph, &weights, origin, &setup.params, seed, |w, cfg| {
            if err.is_some() {
                return;
            }
            let u = cfg.u();
            let c: Vec<f64> = graph
                .edges()
                .iter()
                .zip(w)
                .map(|(&(i, j), we)| we * (u[i] + u[j]).exp())
                .collect();
            let res = ConductanceNetwork::new(graph.clone(), c, origin).and_then(|net| {
                let p = hitting_probability(&net, origin, &boundary)?;
                let r = resistance_to_set(&net, origin, &boundary)?;
                Ok((p, net.vertex_conductance(origin) * r))
            });
            match res {
                Ok((p, w0r)) => {
                    series[0].push(w0r);
                    series[1].push(p);
                    series[2].push((w0r * p - 1.0).abs());
                }
                Err(e) => err = Some(e),
            }
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok((series, report)),
        }
    });
    let mut w0r = Vec::new();
    let mut esc = Vec::new();
    let mut rpe: f64 = 0.0;
    let mut warnings = Vec::new();
    for (k, r) in runs.into_iter().enumerate() {
        let (s, rep) = r?;
        rpe = s[2].iter().fold(rpe, |m, v| m.max(*v));
        w0r.push(s[0].clone());
        esc.push(s[1].clone());
        warnings.extend(rep.warnings.into_iter().map(|w| format!("chain {k}: {w}")));
    }
    let mut jensen = true;
    for (wr, p) in w0r.iter().zip(&esc) {
        let size = (wr.len() / BATCHES.max(1)).max(1);
        for (cw, cp) in wr.chunks(size).zip(p.chunks(size)) {
            let mean_inv = cw.iter().sum::<f64>() / cw.len() as f64;
            let mean_p = cp.iter().sum::<f64>() / cp.len() as f64;
            if 1.0 / mean_p > mean_inv * (1.0 + 1e-9) {
                jensen = false;
            }
        }
    }
    let mean_w0_r = McEstimate::from_chains(&w0r);
    Ok(PipelineReport {
        ratio: mean_w0_r.mean / unit_resistance,
        mean_escape: McEstimate::from_chains(&esc),
        mean_w0_r,
        unit_resistance,
        jensen_holds: jensen,
        max_rpe_error: rpe,
        warnings,
    })
}

/// `c_0 R(0, boundary)` for `U = 0` and constant `W = c`, which equals
/// `2d R(0, boundary)` for every `c`.
pub fn deterministic_pipeline_value(dim: usize, n: i64, c: f64) -> Result<f64> {
    let lbox = LatticeBox::new(dim, n)?;
    let net = ConductanceNetwork::uniform(lbox.graph().clone(), c, lbox.origin())?;
    let r = resistance_to_set(&net, lbox.origin(), &lbox.boundary())?;
    Ok(net.vertex_conductance(lbox.origin()) * r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_means_basics() {
        let e = McEstimate::from_chains(&[vec![2.0; 100]]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.stderr, 0.0);
        assert_eq!(Verdict::equal(&e, 2.0), Verdict::Pass);
        assert_eq!(Verdict::equal(&e, 2.1), Verdict::Suspicious);
        let vals: Vec<f64> = (0..1000).map(|k| (k % 7) as f64).collect();
        let e = McEstimate::from_chains(&[vals.clone(), vals]);
        assert!(e.stderr >= 0.0 && e.ess <= e.samples as f64);
    }

    #[test]
    fn ledger_appends_rows() {
        let dir = std::env::temp_dir().join(format!("errw-ledger-{}", std::process::id()));
        let _ = std::fs::remove_file(&dir);
        let r = CheckReport::new("x", McEstimate::exact(1.0), 1.0, Relation::Equal);
        r.append_to_ledger(&dir).unwrap();
        r.append_to_ledger(&dir).unwrap();
        let text = std::fs::read_to_string(&dir).unwrap();
        std::fs::remove_file(&dir).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().ends_with("equal,pass,0"));
    }

    #[test]
    fn lemmas_hold_on_random_fields() {
        let lbox = LatticeBox::new(2, 1).unwrap();
        let a = EdgeWeights::uniform(lbox.graph(), 2.0).unwrap();
        for sigma in [0.1, 1.0, 3.0] {
            let sweep = random_lemma_sweep(lbox.graph(), &a, 300, sigma, 9).unwrap();
            assert_eq!(sweep.violations, 0, "sigma {sigma}");
        }
        let f = gaussian_field(5, 2, 1.0, 4).unwrap();
        assert_eq!((f.u()[2], f.s()[2]), (0.0, 0.0));
        assert_eq!(f, gaussian_field(5, 2, 1.0, 4).unwrap());
    }

    #[test]
    fn verdict_bands() {
        let e = McEstimate {
            mean: 1.35,
            stderr: 0.1,
            samples: 10,
            ess: 10.0,
        };
        assert_eq!(Verdict::equal(&e, 1.0), Verdict::Marginal);
        assert_eq!(Verdict::at_most(&e, 1.0), Verdict::Marginal);
        assert_eq!(Verdict::at_most(&e, 2.0), Verdict::Pass);
        assert_eq!(Verdict::at_least(&e, 2.0), Verdict::Suspicious);
    }

    #[test]
    fn trivial_cases_are_exact() {
        let g = Graph::single_edge();
        let a = EdgeWeights::uniform(&g, 4.0).unwrap();
        let setup = SamplerSetup::new(McmcParams::quick(10, 10, 1), 1, 1).unwrap();
        let (r, _) = ward_identity_estimate(&g, &a, 0, 0, 1, 0.0, &setup).unwrap();
        assert_eq!((r.estimate, r.stderr), (1.0, 0.0));
        assert!(ward_identity_estimate(&g, &a, 0, 0, 1, 1.5, &setup).is_err());
        let r = moment_bound_estimate(&g, &a, 0, &[], &[], &setup).unwrap();
        assert_eq!(r.estimate, 1.0);
        assert!(moment_bound_estimate(&g, &a, 0, &[(0, 1)], &[2.5], &setup).is_err());
        let f = fluctuation_estimate(&g, &a, 0, 3.0, &[(1, 1)], &setup).unwrap();
        assert_eq!(f[0].estimate, 1.0);
    }

    #[test]
    fn overlapping_interiors_rejected() {
        let g = Graph::path(5);
        let r1 = ProtectedRegion {
            x: 0,
            y: 2,
            m: 1.0,
            vertices: vec![0, 1, 2],
            rx: vec![0, 1, 2],
            ry: vec![0, 1, 2],
        };
        let r2 = ProtectedRegion {
            x: 0,
            y: 3,
            m: 1.0,
            vertices: vec![0, 1, 2, 3],
            rx: vec![0, 1, 2, 3],
            ry: vec![0, 1, 2, 3],
        };
        assert!(matches!(check_interiors_disjoint(&g, &[r1.clone(), r2]), Err(Error::OverlappingRegions(0, 1))));
        let e = ProtectedRegion::edge(3, 4, 1.0);
        assert!(check_interiors_disjoint(&g, &[r1, e]).is_ok());
    }

    #[test]
    fn deterministic_pipeline_is_scale_free() {
        let v1 = deterministic_pipeline_value(3, 2, 1.0).unwrap();
        let v5 = deterministic_pipeline_value(3, 2, 5.0).unwrap();
        assert!((v1 - v5).abs() < 1e-10);
        let lbox = LatticeBox::new(3, 2).unwrap();
        let unit = ConductanceNetwork::uniform(lbox.graph().clone(), 1.0, 0).unwrap();
        let r = resistance_to_set(&unit, lbox.origin(), &lbox.boundary()).unwrap();
        assert!((v1 - 6.0 * r).abs() < 1e-10);
    }
}
