mod common;

use common::integrate_line;
use errw_core::field::{log_density_u, EdgeWeights, FieldConfig};
use errw_core::graph::Graph;
use errw_core::walkers::{
    empirical_path_law, enumerate_paths, errw_path_probability, escape_probability_experiment, estimate_u_field,
    estimate_u_path,
    gamma_mixture_errw, simulate_errw, simulate_vrjp, time_change, time_change_at, total_variation, EscapeRoute,
    DEFAULT_STEP_CAP,
};
use proptest::prelude::*;

#[test]
fn path_law_sums_to_one() {
    for (g, a) in [(Graph::triangle(), 1.0), (Graph::star(3), 0.5), (Graph::cycle(4), 2.0)] {
        let w = EdgeWeights::uniform(&g, a).unwrap();
        for len in 1..=5 {
            let total: f64 = enumerate_paths(&g, 0, len)
                .iter()
                .map(|p| errw_path_probability(&g, &w, p).unwrap())
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "len {len}: {total}");
        }
    }
}

#[test]
fn polya_urn_on_a_path() {
    // From the middle of 0-1-2 with a = 1 the walk returns to 1 every other
    // step; its choices between the two edges form a Polya urn with 2 on
    // each side (each crossing counts twice).
    let g = Graph::path(3);
    let w = EdgeWeights::uniform(&g, 1.0).unwrap();
    let p = errw_path_probability(&g, &w, &[1, 0, 1, 0, 1]).unwrap();
    // (1/2) * ((1 + 2) / (2 + 2)) = 3/8.
    assert!((p - 3.0 / 8.0).abs() < 1e-12, "{p}");
}

#[test]
fn mixture_and_direct_match_exact_law() {
    let g = Graph::triangle();
    let a = EdgeWeights::uniform(&g, 1.0).unwrap();
    let exact: Vec<f64> = enumerate_paths(&g, 0, 3)
        .iter()
        .map(|p| errw_path_probability(&g, &a, p).unwrap())
        .collect();
    for route in [EscapeRoute::Direct, EscapeRoute::Mixture] {
        let emp = empirical_path_law(&g, &a, 0, 3, 100_000, route, 11).unwrap();
        assert!(total_variation(&exact, &emp) < 0.01, "{route:?}");
    }
}

#[test]
fn trajectories_follow_edges_and_are_seeded() {
    let g = Graph::cycle(5);
    let a = EdgeWeights::uniform(&g, 0.7).unwrap();
    let t1 = simulate_errw(&g, &a, 0, 200, 4).unwrap();
    assert!(t1.is_valid(&g));
    assert_eq!(t1, simulate_errw(&g, &a, 0, 200, 4).unwrap());
    assert_ne!(t1.vertices, simulate_errw(&g, &a, 0, 200, 5).unwrap().vertices);
    let m = gamma_mixture_errw(&g, &a, 0, 200, 4).unwrap();
    assert!(m.is_valid(&g) && m.jumps() == 200);
    let v = simulate_vrjp(&g, vec![1.5; 5], 0, 200, 4).unwrap();
    assert!(v.is_valid(&g));
    assert!(v.holding.iter().all(|&h| h > 0.0));
}

#[test]
fn time_change_is_increasing() {
    let g = Graph::triangle();
    let v = simulate_vrjp(&g, vec![1.0; 3], 0, 100, 2).unwrap();
    let tc = time_change(&v, 3).unwrap();
    assert_eq!(tc.vertices, v.vertices);
    let mut last = 0.0;
    for s in [0.1, 1.0, 5.0, 20.0] {
        let c = time_change_at(&v, 3, s).unwrap();
        assert!(c >= last);
        last = c;
    }
}

#[test]
fn u_estimates_pin_the_root() {
    let g = Graph::path(4);
    let u = estimate_u_field(&g, &[2.0; 3], 1, 50.0, 3).unwrap();
    assert_eq!(u[1], 0.0);
    assert!(u.iter().all(|v| v.is_finite()));
}

#[test]
fn u_estimate_matches_single_edge_law() {
    // Under the u-marginal with w = 4: E[cosh U] = 1 + 1/8.
    let g = Graph::single_edge();
    let n = 4000;
    let vals: Vec<f64> = (0..n).map(|k| estimate_u_field(&g, &[4.0], 0, 30.0, k).unwrap()[1].cosh()).collect();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!((mean - 1.125).abs() < 4.0 * sd / (n as f64).sqrt() + 5e-3, "{mean}");
}

fn rho4(u: f64) -> f64 {
    if u.abs() > 50.0 {
        return 0.0;
    }
    let cfg = FieldConfig::new(vec![0.0, u], vec![0.0, 0.0], 0).unwrap();
    log_density_u(&Graph::single_edge(), &[4.0], &cfg).unwrap().total.exp()
}

#[test]
fn u_estimate_distribution_matches_quadrature() {
    // One-sample Kolmogorov-Smirnov test at level 0.01 against the CDF of
    // the u-marginal, tabulated by quadrature.
    let g = Graph::single_edge();
    let n = 2000;
    let mut xs: Vec<f64> = (0..n).map(|k| estimate_u_field(&g, &[4.0], 0, 100.0, 500 + k).unwrap()[1]).collect();
    xs.sort_by(f64::total_cmp);
    let total = integrate_line(rho4, 1e-12);
    let cdf = |x: f64| {
        let tail = integrate_line(|t| if t < x { rho4(t) } else { 0.0 }, 1e-10);
        tail / total
    };
    let mut d: f64 = 0.0;
    for (k, &x) in xs.iter().enumerate().step_by(10) {
        let f = cdf(x);
        d = d.max((f - k as f64 / n as f64).abs()).max(((k + 1) as f64 / n as f64 - f).abs());
    }
    let critical = 1.628 / (n as f64).sqrt();
    assert!(d < critical, "KS distance {d} exceeds {critical}");
}

#[test]
fn u_estimates_stabilise() {
    let g = Graph::path(3);
    let horizons = [25.0, 100.0, 400.0, 1600.0];
    let mut shrink = 0;
    let seeds = 20;
    for seed in 0..seeds {
        let path = estimate_u_path(&g, &[1.5, 1.5], 0, &horizons, seed).unwrap();
        let diff = |k: usize| (0..3).map(|v| (path[k + 1][v] - path[k][v]).abs()).fold(0.0, f64::max);
        if diff(2) < diff(0) {
            shrink += 1;
        }
    }
    assert!(shrink >= seeds * 3 / 4, "only {shrink} of {seeds} paths settled");
}

#[test]
fn escape_from_unit_box_is_certain() {
    let e = escape_probability_experiment(3, 1, 2.0, 300, EscapeRoute::Direct, DEFAULT_STEP_CAP, 1).unwrap();
    assert_eq!((e.estimate, e.stderr, e.censored), (1.0, 0.0, 0));
}

#[test]
fn escape_is_thread_independent() {
    let run = || escape_probability_experiment(2, 3, 1.0, 2000, EscapeRoute::Mixture, 10_000, 8).unwrap();
    let a = run();
    let b = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn first_step_is_proportional_to_weights(w in proptest::collection::vec(0.1f64..5.0, 3)) {
        let g = Graph::star(3);
        let a = EdgeWeights::new(w.clone()).unwrap();
        let total: f64 = w.iter().sum();
        for (leaf, &we) in w.iter().enumerate() {
            let p = errw_path_probability(&g, &a, &[0, leaf + 1]).unwrap();
            prop_assert!((p - we / total).abs() < 1e-12);
        }
    }
}
