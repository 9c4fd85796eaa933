use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use errw_core::field::{EdgeWeights, McmcParams};
use errw_core::graph::Graph;
use errw_core::lattice::{build_diamond, DiamondKind, LatticeBox, Region};
use errw_core::network::{resistance_bound_check, spread_flow, ChiParams};
use errw_core::rng::stream_seed;
use errw_core::walkers::{
    escape_probability_experiment, local_time_functional, simulate_errw, simulate_vrjp, EscapeRoute, Trajectory,
};
use errw_core::ward::{
    fluctuation_estimate, gaussian_field, good_point_check, moment_bound_estimate, protected_ward_estimate,
    random_lemma_sweep, transience_pipeline_check, ward_identity_estimate, CheckReport, GoodPointGeometry, McEstimate,
    ProtectedRegion, Relation, SamplerSetup, Verdict,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{GraphKind, Kind, Route, RunConfig};

pub const BUILD_ID: &str = env!("ERRW_BUILD_ID");

/// What an experiment produced before it is written out.
pub struct Outcome {
    pub checks: Vec<CheckReport>,
    pub result: Value,
    pub data: Vec<u8>,
}

#[derive(Serialize)]
struct Report<'a> {
    kind: &'static str,
    build: &'static str,
    verdict: &'static str,
    config: &'a RunConfig,
    checks: &'a [CheckReport],
    result: &'a Value,
}

/// Runs the experiment, writes `report.json`, `data.csv` and `repro.txt`
/// into the output directory, appends checks to `ledger.csv`, and returns
/// the exit code (0 pass, 2 suspicious).
pub fn run(cfg: &RunConfig) -> Result<i32> {
    let outcome = execute(cfg).with_context(|| format!("running {}", cfg.kind.name()))?;
    let suspicious = outcome.checks.iter().any(|c| c.verdict == Verdict::Suspicious);
    let out = &cfg.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let report = Report {
        kind: cfg.kind.name(),
        build: BUILD_ID,
        verdict: if suspicious { "suspicious" } else { "pass" },
        config: cfg,
        checks: &outcome.checks,
        result: &outcome.result,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write(&out.join("report.json"), text.as_bytes())?;
    write(&out.join("data.csv"), &outcome.data)?;
    write(&out.join("repro.txt"), format!("{}\n", cfg.repro_command()).as_bytes())?;
    for c in &outcome.checks {
        c.append_to_ledger(&out.join("ledger.csv"))?;
    }
    for c in &outcome.checks {
        eprintln!(
            "{:<10} {}: {:.6} +- {:.6} vs {} ({})",
            c.verdict.as_str(),
            c.name,
            c.estimate,
            c.stderr,
            c.target,
            c.relation.as_str()
        );
        for w in &c.warnings {
            eprintln!("  warning: {w}");
        }
    }
    Ok(if suspicious { 2 } else { 0 })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn execute(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.kind {
        Kind::SimulateErrw | Kind::SimulateVrjp => simulate(cfg),
        Kind::CheckWard => check_ward(cfg),
        Kind::CheckProtected => check_protected(cfg),
        Kind::CheckMoments => check_moments(cfg),
        Kind::CheckFluctuations => check_fluctuations(cfg),
        Kind::CheckGoodpoints => check_goodpoints(cfg),
        Kind::CheckResistanceBound => check_resistance_bound(cfg),
        Kind::EscapeProbability => escape(cfg),
        Kind::Pipeline => pipeline(cfg),
    }
}

struct Setting {
    graph: Graph,
    root: usize,
    lbox: Option<LatticeBox>,
    weights: EdgeWeights,
}

fn setting(cfg: &RunConfig) -> Result<Setting> {
    let (graph, root, lbox) = match cfg.graph {
        GraphKind::Box => {
            let lbox = LatticeBox::new(cfg.dim, cfg.radius)?;
            (lbox.graph().clone(), lbox.origin(), Some(lbox))
        }
        GraphKind::Edge => (Graph::single_edge(), 0, None),
        GraphKind::Triangle => (Graph::triangle(), 0, None),
    };
    let weights = match &cfg.weights {
        Some(path) => read_weights(&graph, path)?,
        None => EdgeWeights::uniform(&graph, cfg.a)?,
    };
    Ok(Setting {
        graph,
        root,
        lbox,
        weights,
    })
}

/// Reads `i,j,a` rows; every edge of the graph must appear exactly once.
fn read_weights(graph: &Graph, path: &Path) -> Result<EdgeWeights> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("opening weights {}", path.display()))?;
    let mut values = vec![f64::NAN; graph.edge_count()];
    for rec in rd.deserialize() {
        let (i, j, a): (usize, usize, f64) = rec.with_context(|| format!("parsing weights {}", path.display()))?;
        let Some(e) = graph.edge_between(i, j) else {
            bail!("weights: {{{i}, {j}}} is not an edge of the graph");
        };
        if !values[e].is_nan() {
            bail!("weights: edge {{{i}, {j}}} listed twice");
        }
        values[e] = a;
    }
    if let Some(e) = values.iter().position(|v| v.is_nan()) {
        let (i, j) = graph.edges()[e];
        bail!("weights: edge {{{i}, {j}}} is missing");
    }
    Ok(EdgeWeights::new(values)?)
}

fn sampler(cfg: &RunConfig) -> Result<SamplerSetup> {
    let params = McmcParams::quick(cfg.burnin, cfg.sweeps, cfg.thin);
    Ok(SamplerSetup::new(params, cfg.chains, cfg.seed)?)
}

fn checks_csv(checks: &[CheckReport]) -> Result<Vec<u8>> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(["name", "estimate", "stderr", "target", "relation", "verdict", "samples", "ess"])?;
    for c in checks {
        wr.write_record([
            c.name.clone(),
            c.estimate.to_string(),
            c.stderr.to_string(),
            c.target.to_string(),
            c.relation.as_str().to_string(),
            c.verdict.as_str().to_string(),
            c.samples.to_string(),
            c.ess.to_string(),
        ])?;
    }
    Ok(wr.into_inner()?)
}

fn with_checks(checks: Vec<CheckReport>, result: Value) -> Result<Outcome> {
    let data = checks_csv(&checks)?;
    Ok(Outcome { checks, result, data })
}

fn exact_check(name: &str, ok: bool) -> CheckReport {
    let v = if ok { 1.0 } else { 0.0 };
    CheckReport::new(name, McEstimate::exact(v), 1.0, Relation::Equal)
}

fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let s = setting(cfg)?;
    let traj: Trajectory = if cfg.kind == Kind::SimulateErrw {
        simulate_errw(&s.graph, &s.weights, s.root, cfg.steps, cfg.seed)?
    } else {
        simulate_vrjp(&s.graph, s.weights.values().to_vec(), s.root, cfg.steps, cfg.seed)?
    };
    let mut visits = vec![0usize; s.graph.vertex_count()];
    traj.vertices.iter().for_each(|&v| visits[v] += 1);
    let mut result = json!({
        "jumps": traj.jumps(),
        "distinct_vertices": visits.iter().filter(|&&c| c > 0).count(),
        "visits": visits,
    });
    if !traj.holding.is_empty() {
        let h = &traj.holding;
        let mut local = vec![1.0; s.graph.vertex_count()];
        for (v, t) in traj.vertices.iter().zip(h) {
            local[*v] += t;
        }
        result["total_time"] = json!(h.iter().sum::<f64>());
        result["time_change"] = json!(local_time_functional(&local));
    }
    let mut data = Vec::new();
    traj.write_csv(&mut data)?;
    let checks = vec![exact_check("trajectory follows graph edges", traj.is_valid(&s.graph))];
    Ok(Outcome { checks, result, data })
}

fn check_ward(cfg: &RunConfig) -> Result<Outcome> {
    let s = setting(cfg)?;
    let y = s.graph.neighbours(s.root)[0].0;
    let (rep, bm) = ward_identity_estimate(&s.graph, &s.weights, s.root, s.root, y, cfg.m, &sampler(cfg)?)?;
    let mut checks = vec![rep];
    let single = s.graph.vertex_count() == 2 && s.graph.edge_count() == 1;
    if single && cfg.m > 0.0 {
        let a = s.weights.get(0);
        checks.push(CheckReport::new(
            format!("single-edge <B^{}> = a/(a-m)", cfg.m),
            bm,
            a / (a - cfg.m),
            Relation::Equal,
        ));
    }
    let result = json!({ "x": s.root, "y": y, "b_moment": bm });
    with_checks(checks, result)
}

fn box_region(cfg: &RunConfig, what: &str) -> Result<(Setting, Region)> {
    let s = setting(cfg)?;
    let Some(lbox) = &s.lbox else {
        bail!("{what} needs --graph box");
    };
    let region = lbox.region().clone();
    Ok((s, region))
}

fn check_protected(cfg: &RunConfig) -> Result<Outcome> {
    let (s, region) = box_region(cfg, "check-protected")?;
    let d = cfg.dim;
    let lbox = s.lbox.as_ref().expect("box");
    let at = |p: Vec<i64>| lbox.index_of(&p).expect("point in box");
    let mut e1 = vec![0; d];
    e1[0] = 1;
    let corner = vec![-cfg.radius; d];
    let corner_next: Vec<i64> = corner.iter().zip(&e1).map(|(a, b)| a + b).collect();
    let regions = vec![
        ProtectedRegion::edge(s.root, at(e1.clone()), cfg.m),
        ProtectedRegion::edge(at(corner), at(corner_next), cfg.m),
    ];
    let chi = ChiParams::new(cfg.b, cfg.alpha)?;
    let (plain, with_chi) = protected_ward_estimate(&region, &s.weights, s.root, &regions, &chi, &sampler(cfg)?)?;
    let result = json!({ "regions": regions });
    with_checks(vec![plain, with_chi], result)
}

fn check_moments(cfg: &RunConfig) -> Result<Outcome> {
    let s = setting(cfg)?;
    let edges: Vec<(usize, usize)> = s.graph.neighbours(s.root).iter().map(|&(v, _)| (s.root, v)).collect();
    let ms = vec![cfg.m; edges.len()];
    let rep = moment_bound_estimate(&s.graph, &s.weights, s.root, &edges, &ms, &sampler(cfg)?)?;
    with_checks(vec![rep], json!({ "edges": edges }))
}

fn check_fluctuations(cfg: &RunConfig) -> Result<Outcome> {
    let s = setting(cfg)?;
    let n = s.graph.vertex_count();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|x| (x + 1..n).map(move |y| (x, y))).collect();
    let reps = fluctuation_estimate(&s.graph, &s.weights, s.root, cfg.m, &pairs, &sampler(cfg)?)?;
    let data = checks_csv(&reps)?;
    let worst = reps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.estimate.total_cmp(&b.1.estimate))
        .map(|(k, _)| k);
    let flagged: Vec<usize> = (0..reps.len()).filter(|&k| reps[k].verdict != Verdict::Pass).collect();
    let mut checks = Vec::new();
    for k in worst.into_iter().chain(flagged.iter().copied()) {
        if !checks.iter().any(|c: &CheckReport| c.name == reps[k].name) {
            checks.push(reps[k].clone());
        }
    }
    let result = json!({
        "pairs": pairs.len(),
        "max_estimate": worst.map(|k| reps[k].estimate),
        "not_passing": flagged.len(),
    });
    Ok(Outcome { checks, result, data })
}

fn check_goodpoints(cfg: &RunConfig) -> Result<Outcome> {
    let side = 4i64.pow(cfg.levels as u32);
    let z = vec![0i64; cfg.dim];
    let lower: Vec<i64> = z.iter().map(|v| v - side / 2).collect();
    let ambient = Region::cube(&lower, side)?;
    let geo = GoodPointGeometry::new(&ambient, &z, cfg.levels, errw_core::lattice::DEFAULT_TREE_CAP)?;
    let chi = ChiParams::new(cfg.b, cfg.alpha)?;
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(["field", "sigma", "no_good_point", "rhs_indicator", "rhs_bound", "rhs_recursive", "holds"])?;
    let (mut holds, mut bad_points, mut mismatch) = (0usize, 0usize, 0.0f64);
    for k in 0..cfg.fields {
        let sigma = cfg.sigma * 2f64.powi((k % 5) as i32 - 2);
        let field = gaussian_field(ambient.len(), 0, sigma, stream_seed(cfg.seed, k as u64))?;
        let r = good_point_check(&ambient, &geo, &field, &chi, cfg.m)?;
        holds += r.holds as usize;
        bad_points += r.no_good_point as usize;
        mismatch = mismatch.max((r.rhs_bound - r.rhs_recursive).abs() / r.rhs_bound.max(1e-300));
        wr.write_record([
            k.to_string(),
            sigma.to_string(),
            r.no_good_point.to_string(),
            r.rhs_indicator.to_string(),
            r.rhs_bound.to_string(),
            r.rhs_recursive.to_string(),
            r.holds.to_string(),
        ])?;
    }
    let checks = vec![
        exact_check("good-point decomposition holds on every field", holds == cfg.fields),
        exact_check("tree sum equals recursion", mismatch <= 1e-9),
    ];
    let result = json!({
        "fields": cfg.fields,
        "holds": holds,
        "fields_without_good_point": bad_points,
        "trees": geo.tree().tree_count() as u64,
        "max_recursion_mismatch": mismatch,
    });
    Ok(Outcome {
        checks,
        result,
        data: wr.into_inner()?,
    })
}

fn check_resistance_bound(cfg: &RunConfig) -> Result<Outcome> {
    let chi = ChiParams::new(cfg.b, cfg.alpha)?;
    let d = cfg.dim;
    let mut dir = vec![0.0; d];
    dir[0] = 1.0;
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(["length", "points", "a_times_dn", "flow_energy_bound", "h", "divergence_exact"])?;
    let mut values = Vec::new();
    let (mut dominated, mut exact_div) = (true, true);
    let mut lemma_graph = None;
    for &len in &cfg.lengths {
        let mut y = vec![0i64; d];
        y[0] = len;
        let dia = build_diamond(&vec![0; d], &y, DiamondKind::Deformed { direction: dir.clone() })?;
        let g = dia.region().graph();
        let a = EdgeWeights::uniform(g, cfg.a)?;
        let zero = errw_core::field::FieldConfig::zero(dia.len(), dia.x_index());
        let rep = resistance_bound_check(&zero, &a, &dia, &chi, 200, cfg.seed)?;
        let sf = spread_flow(&dia, rep.h, 200, cfg.seed)?;
        let div = sf.count_divergence();
        let k = sf.samples as i64;
        let ok_div = div.iter().enumerate().all(|(v, &q)| {
            q == if v == dia.x_index() {
                k
            } else if v == dia.y_index() {
                -k
            } else {
                0
            }
        });
        exact_div &= ok_div;
        dominated &= rep.bound_holds;
        values.push(rep.a_times_dn);
        wr.write_record([
            len.to_string(),
            dia.len().to_string(),
            rep.a_times_dn.to_string(),
            rep.flow_energy_bound.to_string(),
            rep.h.to_string(),
            ok_div.to_string(),
        ])?;
        if lemma_graph.is_none() || dia.len() > 1 {
            lemma_graph.get_or_insert_with(|| g.clone());
        }
    }
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    let plateau = max / min;
    let graph = lemma_graph.expect("non-empty lengths");
    let a = EdgeWeights::uniform(&graph, cfg.a)?;
    let sweep = random_lemma_sweep(&graph, &a, cfg.fields, cfg.sigma, cfg.seed)?;
    let checks = vec![
        CheckReport::new("plateau max/min of a D^N", McEstimate::exact(plateau), 1.5, Relation::AtMost),
        exact_check("spread-flow energy dominates a D^N", dominated),
        exact_check("spread-flow divergence exact", exact_div),
        exact_check("pointwise lemmas on random fields", sweep.violations == 0),
    ];
    let result = json!({ "a_times_dn": values, "plateau_ratio": plateau, "lemma_sweep": sweep });
    Ok(Outcome {
        checks,
        result,
        data: wr.into_inner()?,
    })
}

fn escape(cfg: &RunConfig) -> Result<Outcome> {
    let route = match cfg.route {
        Route::Direct => EscapeRoute::Direct,
        Route::Mixture => EscapeRoute::Mixture,
    };
    let e = escape_probability_experiment(cfg.dim, cfg.radius, cfg.a, cfg.runs, route, cfg.step_cap, cfg.seed)?;
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.serialize(&e)?;
    let mut checks = Vec::new();
    if e.censored > 0 {
        let mut c = exact_check("no censored walks", true);
        c.warnings.push(format!("{} walks hit the step cap", e.censored));
        checks.push(c);
    }
    Ok(Outcome {
        checks,
        result: serde_json::to_value(&e)?,
        data: wr.into_inner()?,
    })
}

fn pipeline(cfg: &RunConfig) -> Result<Outcome> {
    let rep = transience_pipeline_check(cfg.dim, cfg.radius, cfg.a, &sampler(cfg)?)?;
    let mut checks = vec![
        exact_check("1/E[P] <= E[1/P] in every batch", rep.jensen_holds),
        CheckReport::new("max |c_0 R P - 1|", McEstimate::exact(rep.max_rpe_error), 1e-8, Relation::AtMost),
    ];
    checks[0].warnings.extend(rep.warnings.iter().cloned());
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(["mean_w0_r", "stderr_w0_r", "mean_escape", "stderr_escape", "unit_resistance", "ratio"])?;
    wr.write_record([
        rep.mean_w0_r.mean.to_string(),
        rep.mean_w0_r.stderr.to_string(),
        rep.mean_escape.mean.to_string(),
        rep.mean_escape.stderr.to_string(),
        rep.unit_resistance.to_string(),
        rep.ratio.to_string(),
    ])?;
    Ok(Outcome {
        checks,
        result: serde_json::to_value(&rep)?,
        data: wr.into_inner()?,
    })
}
