mod common;

use common::{integrate_half_line, integrate_line};
use errw_core::field::{
    log_density_joint_wus, log_density_u, log_density_us, EdgeWeights, FieldConfig,
};
use errw_core::graph::Graph;
use proptest::prelude::*;

fn edge_cfg(u: f64, s: f64) -> FieldConfig {
    FieldConfig::new(vec![0.0, u], vec![0.0, s], 0).unwrap()
}

// The densities are negligible beyond these cut-offs, where `e^u` overflows.
fn outside(u: f64, s: f64) -> bool {
    u.abs() > 50.0 || s.abs() > 1e8
}

fn rho(w: f64, u: f64) -> f64 {
    if outside(u, 0.0) {
        return 0.0;
    }
    log_density_u(&Graph::single_edge(), &[w], &edge_cfg(u, 0.0)).unwrap().total.exp()
}

fn mu(a: f64, u: f64, s: f64) -> f64 {
    if outside(u, s) {
        return 0.0;
    }
    let g = Graph::single_edge();
    log_density_us(&g, &EdgeWeights::new(vec![a]).unwrap(), &edge_cfg(u, s)).unwrap().total.exp()
}

fn joint(a: f64, w: f64, u: f64, s: f64) -> f64 {
    if outside(u, s) || w > 1e6 {
        return 0.0;
    }
    let g = Graph::single_edge();
    log_density_joint_wus(&g, &EdgeWeights::new(vec![a]).unwrap(), &[w], &edge_cfg(u, s))
        .unwrap()
        .exp()
}

#[test]
fn u_marginal_is_normalised() {
    for w in [0.3, 1.0, 4.0, 25.0] {
        let z = integrate_line(|u| rho(w, u), 1e-12);
        assert!((z - 1.0).abs() < 1e-4, "w = {w}: {z}");
    }
}

#[test]
fn u_marginal_moments() {
    // E[cosh U] = 1 + 1/(2w) on a single edge.
    for w in [1.0, 4.0] {
        let m = integrate_line(|u| rho(w, u) * u.cosh(), 1e-12);
        assert!((m - (1.0 + 0.5 / w)).abs() < 1e-6, "w = {w}: {m}");
    }
}

#[test]
fn us_law_is_normalised() {
    for a in [0.5, 1.0, 4.0] {
        let z = integrate_line(|u| integrate_line(|s| mu(a, u, s), 1e-10), 1e-9);
        assert!((z - 1.0).abs() < 1e-4, "a = {a}: {z}");
    }
}

#[test]
fn b_moments_by_quadrature() {
    // <B^m> = a / (a - m), the Ward identity on one edge (D = 1/a).
    for (a, m) in [(4.0, 1.0), (2.0, 1.0), (8.0, 4.0), (6.0, 0.5)] {
        let v = integrate_line(|u| integrate_line(|s| mu(a, u, s) * b(u, s).powf(m), 1e-10), 1e-9);
        let want = a / (a - m);
        assert!((v - want).abs() < 1e-4 * want, "a={a} m={m}: {v} vs {want}");
    }
}

fn b(u: f64, s: f64) -> f64 {
    u.cosh() + 0.5 * u.exp() * s * s
}

const POINTS: [(f64, f64); 5] = [(0.0, 0.0), (0.7, -0.3), (-1.2, 0.8), (0.25, 2.0), (-0.4, -1.5)];

#[test]
fn integrating_out_conductances_gives_us_law() {
    for a in [1.0, 3.5] {
        for (u, s) in POINTS {
            let lhs = integrate_half_line(|w| joint(a, w, u, s), 1e-14);
            let rhs = mu(a, u, s);
            assert!((lhs - rhs).abs() <= 1e-6 * rhs, "a={a} ({u}, {s}): {lhs} vs {rhs}");
        }
    }
}

#[test]
fn integrating_out_s_gives_gamma_times_u_marginal() {
    let a = 2.5;
    for (w, (u, _)) in [0.4, 1.0, 2.0, 5.0, 9.0].into_iter().zip(POINTS) {
        let lhs = integrate_line(|s| joint(a, w, u, s), 1e-14);
        let gamma = ((a - 1.0) * w.ln() - w - libm::lgamma(a)).exp();
        let rhs = gamma * rho(w, u);
        assert!((lhs - rhs).abs() <= 1e-6 * rhs, "w={w} u={u}: {lhs} vs {rhs}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn us_density_is_finite_and_root_pinned(u in -3.0f64..3.0, s in -3.0f64..3.0, a in 0.2f64..10.0) {
        let d = log_density_us(&Graph::triangle(), &EdgeWeights::new(vec![a; 3]).unwrap(),
            &FieldConfig::new(vec![0.0, u, -u], vec![0.0, s, 0.5 * s], 0).unwrap()).unwrap();
        prop_assert!(d.total.is_finite());
        let parts = d.log_prefactor + d.log_u_weight + d.log_b_product + d.log_energy + d.log_minor;
        prop_assert!((parts - d.total).abs() < 1e-12);
    }
}
