//! Reinforced walks: edge-reinforced random walk (ERRW), the vertex-reinforced
//! jump process (VRJP), VRJP in independent Gamma conductances, the local-time
//! time change, U-field estimation, and the escape-probability experiment.

use std::io::Write;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::EdgeWeights;
use crate::graph::Graph;
use crate::lattice::LatticeBox;
use crate::rng::{self, Rng};

/// Counters `Z(e) = a_e + crossings(e)` and the walker position.
#[derive(Clone, Debug)]
pub struct ErrwState<'g> {
    graph: &'g Graph,
    a: Vec<f64>,
    z: Vec<f64>,
    position: usize,
    steps: u64,
}

impl<'g> ErrwState<'g> {
    pub fn new(graph: &'g Graph, a: &EdgeWeights, start: usize) -> Result<Self> {
        graph.check_vertex(start)?;
        if a.len() != graph.edge_count() {
            return Err(invalid("a", "length differs from the edge count"));
        }
        Ok(Self {
            graph,
            a: a.values().to_vec(),
            z: a.values().to_vec(),
            position: start,
            steps: 0,
        })
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn counters(&self) -> &[f64] {
        &self.z
    }

    /// `sum_e (Z(e) - a_e)`, which equals the number of steps taken.
    pub fn total_crossings(&self) -> f64 {
        self.z.iter().zip(&self.a).map(|(z, a)| z - a).sum()
    }

    /// Moves to a neighbour chosen with probability proportional to `Z`.
    pub fn step(&mut self, rng: &mut Rng) -> Result<usize> {
        let nbrs = self.graph.neighbours(self.position);
        if nbrs.is_empty() {
            return Err(Error::IsolatedVertex(self.position));
        }
        let total: f64 = nbrs.iter().map(|&(_, e)| self.z[e]).sum();
        let mut t = rng.gen::<f64>() * total;
        let mut pick = nbrs[nbrs.len() - 1];
        for &(j, e) in nbrs {
            t -= self.z[e];
            if t < 0.0 {
                pick = (j, e);
                break;
            }
        }
        self.z[pick.1] += 1.0;
        self.position = pick.0;
        self.steps += 1;
        Ok(pick.0)
    }
}

pub fn errw_step(state: &mut ErrwState<'_>, rng: &mut Rng) -> Result<usize> {
    state.step(rng)
}

fn check_path(graph: &Graph, path: &[usize]) -> Result<Vec<usize>> {
    for &v in path {
        graph.check_vertex(v).map_err(|_| Error::InvalidPath(format!("vertex {v} out of range")))?;
    }
    path.windows(2)
        .map(|w| {
            graph
                .edge_between(w[0], w[1])
                .ok_or_else(|| Error::InvalidPath(format!("{} and {} are not adjacent", w[0], w[1])))
        })
        .collect()
}

/// Exact ERRW probability of following `path` (its first vertex is the start).
pub fn errw_path_probability(graph: &Graph, a: &EdgeWeights, path: &[usize]) -> Result<f64> {
    if a.len() != graph.edge_count() {
        return Err(invalid("a", "length differs from the edge count"));
    }
    let edges = check_path(graph, path)?;
    let mut z = a.values().to_vec();
    let mut p = 1.0;
    for (w, &e) in path.windows(2).zip(&edges) {
        let total: f64 = graph.neighbours(w[0]).iter().map(|&(_, f)| z[f]).sum();
        p *= z[e] / total;
        z[e] += 1.0;
    }
    Ok(p)
}

/// All walks of exactly `len` steps from `start`, in lexicographic order of
/// neighbour lists.
pub fn enumerate_paths(graph: &Graph, start: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![start];
    fn rec(g: &Graph, len: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == len + 1 {
            out.push(cur.clone());
            return;
        }
        let v = *cur.last().expect("nonempty");
        for &(w, _) in g.neighbours(v) {
            cur.push(w);
            rec(g, len, cur, out);
            cur.pop();
        }
    }
    rec(graph, len, &mut cur, &mut out);
    out
}

/// VRJP with fixed conductances: local times `L_j = 1 + time spent at j`.
#[derive(Clone, Debug)]
pub struct VrjpState<'g> {
    graph: &'g Graph,
    w: Vec<f64>,
    l: Vec<f64>,
    position: usize,
    time: f64,
}

impl<'g> VrjpState<'g> {
    pub fn new(graph: &'g Graph, w: Vec<f64>, start: usize) -> Result<Self> {
        graph.check_vertex(start)?;
        if w.len() != graph.edge_count() {
            return Err(invalid("w", "length differs from the edge count"));
        }
        if let Some(e) = w.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid("w", format!("edge {e} has non-positive conductance {}", w[e])));
        }
        Ok(Self {
            graph,
            l: vec![1.0; graph.vertex_count()],
            w,
            position: start,
            time: 0.0,
        })
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn local_times(&self) -> &[f64] {
        &self.l
    }

    pub fn conductances(&self) -> &[f64] {
        &self.w
    }

    /// Jump rate out of the current vertex, `sum_j w_ij L_j`.
    pub fn exit_rate(&self) -> f64 {
        self.graph
            .neighbours(self.position)
            .iter()
            .map(|&(j, e)| self.w[e] * self.l[j])
            .sum()
    }

    /// Sits for an exponential holding time, then jumps to `j` with
    /// probability proportional to `w_ij L_j`. Returns `(next, holding)`.
    pub fn step(&mut self, rng: &mut Rng) -> Result<(usize, f64)> {
        let i = self.position;
        let rate = self.exit_rate();
        if self.graph.degree(i) == 0 {
            return Err(Error::IsolatedVertex(i));
        }
        let e1: f64 = Exp1.sample(rng);
        let tau = e1 / rate;
        self.l[i] += tau;
        self.time += tau;
        let next = self.choose(rng, rate);
        self.position = next;
        Ok((next, tau))
    }

    fn choose(&self, rng: &mut Rng, rate: f64) -> usize {
        let nbrs = self.graph.neighbours(self.position);
        let mut t = rng.gen::<f64>() * rate;
        for &(j, e) in nbrs {
            t -= self.w[e] * self.l[j];
            if t < 0.0 {
                return j;
            }
        }
        nbrs[nbrs.len() - 1].0
    }

    /// Runs until the clock reads `horizon`, truncating the last sojourn
    /// (the holding time is memoryless, so later steps remain exact).
    pub fn advance_until(&mut self, horizon: f64, rng: &mut Rng) -> Result<u64> {
        let mut jumps = 0;
        while self.time < horizon {
            let i = self.position;
            if self.graph.degree(i) == 0 {
                self.l[i] += horizon - self.time;
                self.time = horizon;
                break;
            }
            let rate = self.exit_rate();
            let e1: f64 = Exp1.sample(rng);
            let tau = e1 / rate;
            if self.time + tau >= horizon {
                self.l[i] += horizon - self.time;
                self.time = horizon;
                break;
            }
            self.l[i] += tau;
            self.time += tau;
            self.position = self.choose(rng, rate);
            jumps += 1;
        }
        Ok(jumps)
    }
}

pub fn vrjp_step(state: &mut VrjpState<'_>, rng: &mut Rng) -> Result<(usize, f64)> {
    state.step(rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessKind {
    Errw,
    Vrjp,
    Mixture,
    TimeChanged,
}

/// Visited vertices with the holding time spent at each before jumping
/// (empty for discrete walks).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: ProcessKind,
    pub seed: u64,
    pub vertices: Vec<usize>,
    pub holding: Vec<f64>,
}

impl Trajectory {
    pub fn jumps(&self) -> usize {
        self.vertices.len().saturating_sub(1)
    }

    pub fn is_valid(&self, graph: &Graph) -> bool {
        self.vertices.windows(2).all(|w| graph.edge_between(w[0], w[1]).is_some())
    }

    /// CSV with columns `step,vertex,holding_time` (empty holding for
    /// discrete walks and for the final vertex).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "vertex", "holding_time"])?;
        for (k, v) in self.vertices.iter().enumerate() {
            let h = self.holding.get(k).map(|h| format!("{h:.17e}")).unwrap_or_default();
            out.write_record([k.to_string(), v.to_string(), h])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// ERRW trajectory of `steps` steps.
pub fn simulate_errw(graph: &Graph, a: &EdgeWeights, start: usize, steps: usize, seed: u64) -> Result<Trajectory> {
    let mut rng = rng::rng_from_seed(seed);
    let mut st = ErrwState::new(graph, a, start)?;
    let mut vertices = vec![start];
    for _ in 0..steps {
        vertices.push(st.step(&mut rng)?);
    }
    Ok(Trajectory {
        kind: ProcessKind::Errw,
        seed,
        vertices,
        holding: Vec::new(),
    })
}

/// VRJP trajectory of `steps` jumps with fixed conductances.
pub fn simulate_vrjp(graph: &Graph, w: Vec<f64>, start: usize, steps: usize, seed: u64) -> Result<Trajectory> {
    let mut rng = rng::rng_from_seed(seed);
    run_vrjp(graph, w, start, steps, &mut rng, ProcessKind::Vrjp, seed)
}

fn run_vrjp(
    graph: &Graph,
    w: Vec<f64>,
    start: usize,
    steps: usize,
    rng: &mut Rng,
    kind: ProcessKind,
    seed: u64,
) -> Result<Trajectory> {
    let mut st = VrjpState::new(graph, w, start)?;
    let mut vertices = vec![start];
    let mut holding = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (v, tau) = st.step(rng)?;
        vertices.push(v);
        holding.push(tau);
    }
    Ok(Trajectory {
        kind,
        seed,
        vertices,
        holding,
    })
}

/// Independent `Gamma(a_e, 1)` conductances.
pub fn draw_gamma_conductances(a: &EdgeWeights, rng: &mut Rng) -> Vec<f64> {
    a.values()
        .iter()
        .map(|&ae| Gamma::new(ae, 1.0).expect("positive shape").sample(rng))
        .collect()
}

/// VRJP in independent `Gamma(a_e, 1)` conductances, `steps` jumps; its jump
/// skeleton has the law of ERRW with initial weights `a`.
pub fn gamma_mixture_errw(graph: &Graph, a: &EdgeWeights, start: usize, steps: usize, seed: u64) -> Result<Trajectory> {
    let mut rng = rng::rng_from_seed(seed);
    mixture_with(graph, a, start, steps, &mut rng, seed)
}

fn mixture_with(graph: &Graph, a: &EdgeWeights, start: usize, steps: usize, rng: &mut Rng, seed: u64) -> Result<Trajectory> {
    if a.len() != graph.edge_count() {
        return Err(invalid("a", "length differs from the edge count"));
    }
    let w = draw_gamma_conductances(a, rng);
    run_vrjp(graph, w, start, steps, rng, ProcessKind::Mixture, seed)
}

/// `C = sum_i (L_i^2 - 1)`.
pub fn local_time_functional(l: &[f64]) -> f64 {
    l.iter().map(|x| x * x - 1.0).sum()
}

/// Reparametrizes a VRJP trajectory by `C(s)`: sojourn `k` at vertex `i`
/// lasts `(L_i + tau)^2 - L_i^2` in the new clock.
pub fn time_change(traj: &Trajectory, vertex_count: usize) -> Result<Trajectory> {
    if !matches!(traj.kind, ProcessKind::Vrjp | ProcessKind::Mixture) {
        return Err(invalid("traj", "time change needs a VRJP trajectory with holding times"));
    }
    let mut l = vec![1.0; vertex_count];
    let mut holding = Vec::with_capacity(traj.holding.len());
    for (&v, &tau) in traj.vertices.iter().zip(&traj.holding) {
        if v >= vertex_count {
            return Err(Error::VertexOutOfRange(v));
        }
        let before = l[v];
        l[v] += tau;
        holding.push(l[v] * l[v] - before * before);
    }
    Ok(Trajectory {
        kind: ProcessKind::TimeChanged,
        seed: traj.seed,
        vertices: traj.vertices.clone(),
        holding,
    })
}

/// `C(s)` along a VRJP trajectory at real time `s`.
pub fn time_change_at(traj: &Trajectory, vertex_count: usize, s: f64) -> Result<f64> {
    let mut l = vec![1.0; vertex_count];
    let mut t = 0.0;
    for (&v, &tau) in traj.vertices.iter().zip(&traj.holding) {
        if v >= vertex_count {
            return Err(Error::VertexOutOfRange(v));
        }
        let dt = tau.min(s - t);
        l[v] += dt.max(0.0);
        t += tau;
        if t >= s {
            break;
        }
    }
    Ok(local_time_functional(&l))
}

/// `log L_i(T) - log L_{i0}(T)` for VRJP started at `root` and run to time `horizon`.
pub fn estimate_u_field(graph: &Graph, w: &[f64], root: usize, horizon: f64, seed: u64) -> Result<Vec<f64>> {
    Ok(estimate_u_path(graph, w, root, &[horizon], seed)?.pop().expect("one horizon"))
}

/// Estimates at increasing horizons along a single trajectory.
pub fn estimate_u_path(graph: &Graph, w: &[f64], root: usize, horizons: &[f64], seed: u64) -> Result<Vec<Vec<f64>>> {
    if horizons.is_empty() || horizons.iter().any(|h| !(*h > 0.0)) {
        return Err(invalid("T", "horizons must be positive"));
    }
    if horizons.windows(2).any(|p| p[1] < p[0]) {
        return Err(invalid("T", "horizons must be non-decreasing"));
    }
    let mut rng = rng::rng_from_seed(seed);
    let mut st = VrjpState::new(graph, w.to_vec(), root)?;
    let mut out = Vec::with_capacity(horizons.len());
    for &h in horizons {
        st.advance_until(h, &mut rng)?;
        let l0 = st.l[root].ln();
        out.push(st.l.iter().map(|l| l.ln() - l0).collect());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EscapeRoute {
    /// ERRW with edge counters.
    Direct,
    /// Jump skeleton of VRJP in Gamma conductances.
    Mixture,
}

pub const DEFAULT_STEP_CAP: u64 = 10_000_000;

/// Summary of an escape-probability experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeEstimate {
    pub estimate: f64,
    pub stderr: f64,
    /// Completed runs (escaped or returned).
    pub runs: u64,
    pub escaped: u64,
    /// Runs stopped by the step cap, excluded from the estimate.
    pub censored: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RunOutcome {
    Escaped,
    Returned,
    Censored,
}

fn escape_run(
    graph: &Graph,
    is_boundary: &[bool],
    a: &EdgeWeights,
    origin: usize,
    route: EscapeRoute,
    cap: u64,
    rng: &mut Rng,
) -> Result<RunOutcome> {
    match route {
        EscapeRoute::Direct => {
            let mut st = ErrwState::new(graph, a, origin)?;
            for _ in 0..cap {
                let v = st.step(rng)?;
                if is_boundary[v] {
                    return Ok(RunOutcome::Escaped);
                }
                if v == origin {
                    return Ok(RunOutcome::Returned);
                }
            }
        }
        EscapeRoute::Mixture => {
            let w = draw_gamma_conductances(a, rng);
            let mut st = VrjpState::new(graph, w, origin)?;
            for _ in 0..cap {
                let (v, _) = st.step(rng)?;
                if is_boundary[v] {
                    return Ok(RunOutcome::Escaped);
                }
                if v == origin {
                    return Ok(RunOutcome::Returned);
                }
            }
        }
    }
    Ok(RunOutcome::Censored)
}

const ESCAPE_BLOCKS: u64 = 64;

/// Monte Carlo estimate of `P_0(H_{boundary} < H~_0)` for ERRW on the box
/// `V_n` of `Z^d`. Runs are split into a fixed number of seeded blocks so the
/// result does not depend on the thread count.
pub fn escape_probability_experiment(
    dim: usize,
    radius: i64,
    a: f64,
    runs: u64,
    route: EscapeRoute,
    step_cap: u64,
    seed: u64,
) -> Result<EscapeEstimate> {
    if radius < 1 {
        return Err(invalid("radius", "escape experiments need n >= 1"));
    }
    if runs == 0 {
        return Err(invalid("runs", "at least one run is required"));
    }
    let lbox = LatticeBox::new(dim, radius)?;
    let graph = lbox.graph();
    let weights = EdgeWeights::uniform(graph, a)?;
    let is_boundary: Vec<bool> = (0..lbox.len()).map(|i| lbox.is_boundary(i)).collect();
    let origin = lbox.origin();
    let outcomes: Vec<Result<[u64; 3]>> = (0..ESCAPE_BLOCKS)
        .into_par_iter()
        .map(|b| {
            let n = runs / ESCAPE_BLOCKS + u64::from(b < runs % ESCAPE_BLOCKS);
            let mut rng = rng::stream(seed, b);
            let mut tally = [0u64; 3];
            for _ in 0..n {
                match escape_run(graph, &is_boundary, &weights, origin, route, step_cap, &mut rng)? {
                    RunOutcome::Escaped => tally[0] += 1,
                    RunOutcome::Returned => tally[1] += 1,
                    RunOutcome::Censored => tally[2] += 1,
                }
            }
            Ok(tally)
        })
        .collect();
    let mut total = [0u64; 3];
    for t in outcomes {
        let t = t?;
        (0..3).for_each(|k| total[k] += t[k]);
    }
    let done = total[0] + total[1];
    let p = if done == 0 { f64::NAN } else { total[0] as f64 / done as f64 };
    let stderr = if done < 2 { f64::NAN } else { (p * (1.0 - p) / (done - 1) as f64).sqrt() };
    Ok(EscapeEstimate {
        estimate: p,
        stderr,
        runs: done,
        escaped: total[0],
        censored: total[2],
    })
}

/// Empirical law of `len`-step walks from `start` over `samples` runs of the
/// chosen route, indexed like [`enumerate_paths`].
pub fn empirical_path_law(
    graph: &Graph,
    a: &EdgeWeights,
    start: usize,
    len: usize,
    samples: u64,
    route: EscapeRoute,
    seed: u64,
) -> Result<Vec<f64>> {
    let paths = enumerate_paths(graph, start, len);
    let index: std::collections::HashMap<Vec<usize>, usize> =
        paths.iter().cloned().enumerate().map(|(k, p)| (p, k)).collect();
    let blocks: Vec<Result<Vec<u64>>> = (0..ESCAPE_BLOCKS)
        .into_par_iter()
        .map(|b| {
            let n = samples / ESCAPE_BLOCKS + u64::from(b < samples % ESCAPE_BLOCKS);
            let mut rng = rng::stream(seed, b);
            let mut counts = vec![0u64; paths.len()];
            for _ in 0..n {
                let traj = match route {
                    EscapeRoute::Direct => {
                        let mut st = ErrwState::new(graph, a, start)?;
                        let mut v = vec![start];
                        for _ in 0..len {
                            v.push(st.step(&mut rng)?);
                        }
                        v
                    }
                    EscapeRoute::Mixture => mixture_with(graph, a, start, len, &mut rng, seed)?.vertices,
                };
                counts[index[&traj]] += 1;
            }
            Ok(counts)
        })
        .collect();
    let mut counts = vec![0u64; paths.len()];
    for b in blocks {
        for (c, x) in counts.iter_mut().zip(b?) {
            *c += x;
        }
    }
    Ok(counts.into_iter().map(|c| c as f64 / samples as f64).collect())
}

/// Total-variation distance between two laws on the same index set.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
