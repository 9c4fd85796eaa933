mod common;

use common::connected_graph;
use errw_core::graph::Graph;
use errw_core::network::{
    effective_resistance, flow_energy, glue, greens_matrix, hitting_probability, min_energy_flow, resistance_to_set,
    ConductanceNetwork, UnitFlow,
};
use proptest::prelude::*;

fn net(g: &Graph, c: &[f64]) -> ConductanceNetwork {
    ConductanceNetwork::new(g.clone(), c.to_vec(), 0).unwrap()
}

#[test]
fn series_and_parallel() {
    let path = ConductanceNetwork::new(Graph::path(4), vec![1.0, 2.0, 4.0], 0).unwrap();
    assert!((effective_resistance(&path, 0, 3).unwrap() - 1.75).abs() < 1e-12);
    let par = ConductanceNetwork::from_edge_list(4, &[(0, 1, 1.0), (1, 3, 1.0), (0, 2, 2.0), (2, 3, 2.0)], 0).unwrap();
    // Branches of resistance 2 and 1 in parallel.
    assert!((effective_resistance(&par, 0, 3).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let tri = ConductanceNetwork::uniform(Graph::triangle(), 1.0, 0).unwrap();
    assert!((effective_resistance(&tri, 0, 2).unwrap() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn gambler_ruin_on_a_path() {
    let n = 9;
    let p = ConductanceNetwork::uniform(Graph::path(n), 1.0, 0).unwrap();
    for x in 1..n - 1 {
        // Hitting n-1 before returning to x from x: (1/2) * 1/(n-1-x).
        let h = hitting_probability(&p, x, &[n - 1]).unwrap();
        let want = 0.5 / (n - 1 - x) as f64;
        assert!((h - want).abs() < 1e-12, "{x}: {h} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn thomson_energy_equals_resistance((g, c) in connected_graph(6)) {
        let n = net(&g, &c);
        let y = g.vertex_count() - 1;
        let r = effective_resistance(&n, 0, y).unwrap();
        let f = min_energy_flow(&n, 0, y).unwrap();
        prop_assert!(f.divergence_error() < 1e-10);
        let e = flow_energy(&n, &f).unwrap();
        prop_assert!((e - r).abs() <= 1e-8 * r);
        let green = greens_matrix(&n).unwrap();
        let gf = green.get(y, y);
        prop_assert!((gf - r).abs() <= 1e-8 * r, "root 0 Green's form {gf} vs {r}");
    }

    #[test]
    fn any_path_flow_has_more_energy((g, c) in connected_graph(6)) {
        let n = net(&g, &c);
        let y = g.vertex_count() - 1;
        let path = g.shortest_path(0, y).unwrap();
        let f = UnitFlow::from_path(&g, &path).unwrap();
        let r = effective_resistance(&n, 0, y).unwrap();
        prop_assert!(flow_energy(&n, &f).unwrap() >= r * (1.0 - 1e-12));
    }

    #[test]
    fn escape_probability_times_resistance((g, c) in connected_graph(6)) {
        let n = net(&g, &c);
        let targets: Vec<usize> = (1..g.vertex_count()).filter(|v| v % 2 == 1).collect();
        let p = hitting_probability(&n, 0, &targets).unwrap();
        let r = resistance_to_set(&n, 0, &targets).unwrap();
        prop_assert!((n.vertex_conductance(0) * r * p - 1.0).abs() < 1e-8);
    }

    #[test]
    fn resistance_is_root_independent((g, c) in connected_graph(6), root in 0usize..6) {
        let root = root % g.vertex_count();
        let y = g.vertex_count() - 1;
        let a = effective_resistance(&net(&g, &c), 0, y).unwrap();
        let b = effective_resistance(&net(&g, &c).with_root(root).unwrap(), 0, y).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a);
    }

    #[test]
    fn rayleigh_monotonicity((g, c) in connected_graph(6), e in 0usize..30, k in 1.0f64..10.0) {
        let e = e % g.edge_count();
        let y = g.vertex_count() - 1;
        let mut more = c.clone();
        more[e] *= k;
        let r0 = effective_resistance(&net(&g, &c), 0, y).unwrap();
        let r1 = effective_resistance(&net(&g, &more), 0, y).unwrap();
        prop_assert!(r1 <= r0 * (1.0 + 1e-12));
    }

    #[test]
    fn resistance_scales_inversely((g, c) in connected_graph(6), k in 0.1f64..10.0) {
        let n = net(&g, &c);
        let y = g.vertex_count() - 1;
        let r = effective_resistance(&n, 0, y).unwrap();
        let rk = effective_resistance(&n.scaled(k).unwrap(), 0, y).unwrap();
        prop_assert!((rk * k - r).abs() <= 1e-10 * r);
    }

    #[test]
    fn gluing_matches_set_resistance((g, c) in connected_graph(6)) {
        prop_assume!(g.vertex_count() >= 3);
        let n = net(&g, &c);
        let targets = vec![1, g.vertex_count() - 1];
        let (glued, map) = glue(&n, &targets).unwrap();
        let r = effective_resistance(&glued, map[0], glued.vertex_count() - 1).unwrap();
        prop_assert!((r - resistance_to_set(&n, 0, &targets).unwrap()).abs() < 1e-10 * r);
    }
}

#[test]
fn edge_list_roundtrip() {
    let n = ConductanceNetwork::from_edge_list(3, &[(0, 1, 0.5), (1, 2, 2.0)], 1).unwrap();
    let mut buf = Vec::new();
    n.write_edge_list(&mut buf).unwrap();
    let back = ConductanceNetwork::read_edge_list(&buf[..], 1).unwrap();
    assert_eq!(back.conductances(), n.conductances());
    assert_eq!(back.graph().edges(), n.graph().edges());
}
