use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    SimulateErrw,
    SimulateVrjp,
    CheckWard,
    CheckProtected,
    CheckMoments,
    CheckFluctuations,
    CheckGoodpoints,
    CheckResistanceBound,
    EscapeProbability,
    Pipeline,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::SimulateErrw => "simulate-errw",
            Kind::SimulateVrjp => "simulate-vrjp",
            Kind::CheckWard => "check-ward",
            Kind::CheckProtected => "check-protected",
            Kind::CheckMoments => "check-moments",
            Kind::CheckFluctuations => "check-fluctuations",
            Kind::CheckGoodpoints => "check-goodpoints",
            Kind::CheckResistanceBound => "check-resistance-bound",
            Kind::EscapeProbability => "escape-probability",
            Kind::Pipeline => "pipeline",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    /// The box `V_n = [-n, n]^d`.
    Box,
    Edge,
    Triangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    Direct,
    Mixture,
}

/// Fully resolved settings of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: Kind,
    pub graph: GraphKind,
    pub dim: usize,
    pub radius: i64,
    pub a: f64,
    /// CSV `i,j,a` overriding the uniform weight.
    pub weights: Option<PathBuf>,
    pub b: f64,
    pub alpha: f64,
    pub m: f64,
    pub seed: u64,
    pub chains: usize,
    pub sweeps: usize,
    pub burnin: usize,
    pub thin: usize,
    pub steps: usize,
    pub runs: u64,
    pub route: Route,
    pub step_cap: u64,
    pub levels: usize,
    pub fields: usize,
    pub sigma: f64,
    pub lengths: Vec<i64>,
    pub threads: Option<usize>,
    pub out: PathBuf,
}

/// The same settings with every field optional, as read from a file or flags.
#[derive(Clone, Debug, Default, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Graph to run on.
    #[arg(long, value_enum)]
    pub graph: Option<GraphKind>,
    /// Lattice dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Box radius n.
    #[arg(long)]
    pub radius: Option<i64>,
    /// Uniform initial edge weight.
    #[arg(long)]
    pub a: Option<f64>,
    /// Per-edge weights as CSV `i,j,a`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Threshold factor in B_zj <= b |z - j|^alpha.
    #[arg(long)]
    pub b: Option<f64>,
    /// Exponent in the protection threshold, at most 1/8.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Moment exponent.
    #[arg(long)]
    pub m: Option<f64>,
    /// Master seed; every chain and block derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Independent MCMC chains.
    #[arg(long)]
    pub chains: Option<usize>,
    /// Retained sweeps per chain (before thinning).
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// Burn-in sweeps per chain (step sizes adapt here).
    #[arg(long)]
    pub burnin: Option<usize>,
    /// Keep every k-th sweep.
    #[arg(long)]
    pub thin: Option<usize>,
    /// Trajectory length for the simulators.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Independent walks for the escape experiment.
    #[arg(long)]
    pub runs: Option<u64>,
    /// Sample the walk directly or through the VRJP mixture.
    #[arg(long, value_enum)]
    pub route: Option<Route>,
    /// Steps after which an escape run counts as censored.
    #[arg(long)]
    pub step_cap: Option<u64>,
    /// Depth of the good-point subcube tree.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Number of random fields for pointwise checks.
    #[arg(long)]
    pub fields: Option<usize>,
    /// Spread of the random fields.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Diamond lengths for the resistance bound.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<i64>>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Overrides {
    fn merge(self, over: Overrides) -> Overrides {
        macro_rules! pick {
            ($($f:ident),*) => { Overrides { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            graph, dim, radius, a, weights, b, alpha, m, seed, chains, sweeps, burnin, thin, steps, runs, route,
            step_cap, levels, fields, sigma, lengths, threads, out
        )
    }
}

fn defaults(kind: Kind) -> RunConfig {
    let graph = match kind {
        Kind::SimulateErrw | Kind::SimulateVrjp => GraphKind::Triangle,
        _ => GraphKind::Box,
    };
    RunConfig {
        kind,
        graph,
        dim: 3,
        radius: 1,
        a: 8.0,
        weights: None,
        b: 4.0,
        alpha: 0.0625,
        m: 1.0,
        seed: 1,
        chains: 4,
        sweeps: 10_000,
        burnin: 2_000,
        thin: 1,
        steps: 1_000,
        runs: 10_000,
        route: Route::Direct,
        step_cap: errw_core::walkers::DEFAULT_STEP_CAP,
        levels: 1,
        fields: 100,
        sigma: 1.0,
        lengths: vec![10, 20, 40],
        threads: None,
        out: PathBuf::from("errw-out"),
    }
}

/// Defaults, then the JSON file, then flags.
pub fn parse_config(kind: Kind, file: Option<&Path>, flags: Overrides) -> Result<RunConfig> {
    let from_file = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str::<Overrides>(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => Overrides::default(),
    };
    let o = from_file.merge(flags);
    let d = defaults(kind);
    let cfg = RunConfig {
        kind,
        graph: o.graph.unwrap_or(d.graph),
        dim: o.dim.unwrap_or(d.dim),
        radius: o.radius.unwrap_or(d.radius),
        a: o.a.unwrap_or(d.a),
        weights: o.weights.or(d.weights),
        b: o.b.unwrap_or(d.b),
        alpha: o.alpha.unwrap_or(d.alpha),
        m: o.m.unwrap_or(d.m),
        seed: o.seed.unwrap_or(d.seed),
        chains: o.chains.unwrap_or(d.chains),
        sweeps: o.sweeps.unwrap_or(d.sweeps),
        burnin: o.burnin.unwrap_or(d.burnin),
        thin: o.thin.unwrap_or(d.thin),
        steps: o.steps.unwrap_or(d.steps),
        runs: o.runs.unwrap_or(d.runs),
        route: o.route.unwrap_or(d.route),
        step_cap: o.step_cap.unwrap_or(d.step_cap),
        levels: o.levels.unwrap_or(d.levels),
        fields: o.fields.unwrap_or(d.fields),
        sigma: o.sigma.unwrap_or(d.sigma),
        lengths: o.lengths.unwrap_or(d.lengths),
        threads: o.threads.or(d.threads),
        out: o.out.unwrap_or(d.out),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, field: &str, why: &str| {
            if !ok {
                errs.push(format!("`{field}` {why}"));
            }
        };
        need(self.a > 0.0 && self.a.is_finite(), "a", "must be positive and finite");
        need((1..=8).contains(&self.dim), "dim", "must be in 1..=8");
        need(self.radius >= 1, "radius", "must be at least 1");
        need(self.b > 1.0 && self.b.is_finite(), "b", "must be greater than 1");
        need(self.alpha >= 0.0, "alpha", "must be non-negative");
        need(self.m >= 0.0 && self.m.is_finite(), "m", "must be non-negative and finite");
        need(self.chains >= 1, "chains", "must be at least 1");
        need(self.sweeps >= 1, "sweeps", "must be at least 1");
        need(self.thin >= 1, "thin", "must be at least 1");
        need(self.runs >= 1, "runs", "must be at least 1");
        need(self.step_cap >= 1, "step_cap", "must be at least 1");
        need(self.sigma >= 0.0 && self.sigma.is_finite(), "sigma", "must be non-negative and finite");
        need(self.threads != Some(0), "threads", "must be at least 1");
        match self.kind {
            Kind::CheckResistanceBound | Kind::CheckGoodpoints | Kind::CheckProtected => {
                need(self.alpha <= 0.125, "alpha", "must lie in [0, 1/8]");
            }
            _ => {}
        }
        match self.kind {
            Kind::CheckResistanceBound => {
                need(!self.lengths.is_empty(), "lengths", "must not be empty");
                need(self.lengths.iter().all(|&l| l >= 1), "lengths", "must all be at least 1");
                need(self.dim >= 2, "dim", "must be at least 2 for diamonds");
            }
            Kind::CheckGoodpoints => need((1..=2).contains(&self.levels), "levels", "must be 1 or 2"),
            Kind::CheckWard | Kind::CheckProtected => {
                need(self.m <= self.a / 4.0, "m", "must not exceed a/4");
            }
            Kind::CheckMoments => need(self.m <= self.a / 2.0, "m", "must not exceed a/2"),
            Kind::CheckFluctuations => need(self.m > 0.0, "m", "must be positive"),
            _ => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            bail!("invalid configuration: {}", errs.join("; "))
        }
    }

    /// A command line reproducing this run.
    pub fn repro_command(&self) -> String {
        let mut parts = vec!["errw-lab".to_string(), self.kind.name().to_string()];
        let mut flag = |k: &str, v: String| {
            parts.push(format!("--{k}"));
            parts.push(v);
        };
        flag("graph", enum_name(&self.graph));
        flag("dim", self.dim.to_string());
        flag("radius", self.radius.to_string());
        flag("a", self.a.to_string());
        if let Some(w) = &self.weights {
            flag("weights", w.display().to_string());
        }
        flag("b", self.b.to_string());
        flag("alpha", self.alpha.to_string());
        flag("m", self.m.to_string());
        flag("seed", self.seed.to_string());
        flag("chains", self.chains.to_string());
        flag("sweeps", self.sweeps.to_string());
        flag("burnin", self.burnin.to_string());
        flag("thin", self.thin.to_string());
        flag("steps", self.steps.to_string());
        flag("runs", self.runs.to_string());
        flag("route", enum_name(&self.route));
        flag("step-cap", self.step_cap.to_string());
        flag("levels", self.levels.to_string());
        flag("fields", self.fields.to_string());
        flag("sigma", self.sigma.to_string());
        flag("lengths", self.lengths.iter().map(i64::to_string).collect::<Vec<_>>().join(","));
        if let Some(t) = self.threads {
            flag("threads", t.to_string());
        }
        flag("out", self.out.display().to_string());
        parts.join(" ")
    }
}

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}
