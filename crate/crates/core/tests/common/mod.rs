#![allow(dead_code)]

use errw_core::graph::Graph;
use proptest::prelude::*;
use quadrature::double_exponential;

/// Sum over spanning trees of the product of edge weights, by brute force
/// over all `(n - 1)`-subsets of edges.
pub fn spanning_tree_sum(graph: &Graph, c: &[f64]) -> f64 {
    let n = graph.vertex_count();
    let m = graph.edge_count();
    let k = n - 1;
    let mut total = 0.0;
    let mut pick: Vec<usize> = (0..k).collect();
    if k == 0 {
        return 1.0;
    }
    if k > m {
        return 0.0;
    }
    loop {
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut acyclic = true;
        for &e in &pick {
            let (i, j) = graph.edge(e);
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri == rj {
                acyclic = false;
                break;
            }
            parent[ri] = rj;
        }
        if acyclic {
            total += pick.iter().map(|&e| c[e]).product::<f64>();
        }
        let mut t = k;
        loop {
            if t == 0 {
                return total;
            }
            t -= 1;
            if pick[t] < m - k + t {
                pick[t] += 1;
                for r in t + 1..k {
                    pick[r] = pick[r - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Connected weighted graphs on `2..=max_n` vertices: a random spanning tree
/// plus random extra edges.
pub fn connected_graph(max_n: usize) -> impl Strategy<Value = (Graph, Vec<f64>)> {
    (2..=max_n)
        .prop_flat_map(|n| {
            let parents: Vec<BoxedStrategy<usize>> = (1..n).map(|v| (0..v).boxed()).collect();
            let extra = proptest::collection::vec(proptest::bool::weighted(0.4), n * (n - 1) / 2);
            (Just(n), parents, extra)
        })
        .prop_flat_map(|(n, parents, extra)| {
            let mut edges: Vec<(usize, usize)> = parents.iter().enumerate().map(|(k, &p)| (p, k + 1)).collect();
            let mut idx = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if extra[idx] && !edges.iter().any(|&(a, b)| (a, b) == (i, j) || (a, b) == (j, i)) {
                        edges.push((i, j));
                    }
                    idx += 1;
                }
            }
            let m = edges.len();
            (Just(Graph::new(n, edges).unwrap()), proptest::collection::vec(0.1f64..5.0, m))
        })
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// `int_R f` via `x = t / (1 - t^2)` on `(-1, 1)`.
pub fn integrate_line(f: impl Fn(f64) -> f64, tol: f64) -> f64 {
    double_exponential::integrate(
        |t| {
            let d = 1.0 - t * t;
            if d <= 0.0 {
                return 0.0;
            }
            finite_or_zero(f(t / d) * (1.0 + t * t) / (d * d))
        },
        -1.0,
        1.0,
        tol,
    )
    .integral
}

/// `int_0^inf f` via `x = t / (1 - t)` on `(0, 1)`.
pub fn integrate_half_line(f: impl Fn(f64) -> f64, tol: f64) -> f64 {
    double_exponential::integrate(
        |t| {
            let d = 1.0 - t;
            if d <= 0.0 || t <= 0.0 {
                return 0.0;
            }
            finite_or_zero(f(t / d) / (d * d))
        },
        0.0,
        1.0,
        tol,
    )
    .integral
}
