use std::collections::VecDeque;

use crate::error::{invalid, Error, Result};

/// Finite simple undirected graph on vertices `0..n`.
///
/// Edges are stored once with `i < j`; the adjacency list of each vertex holds
/// `(neighbour, edge id)` pairs in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<(usize, usize)>>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        let mut list = Vec::new();
        for (i, j) in edges {
            if i >= n {
                return Err(Error::VertexOutOfRange(i));
            }
            if j >= n {
                return Err(Error::VertexOutOfRange(j));
            }
            if i == j {
                return Err(invalid("edges", format!("loop at vertex {i}")));
            }
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            if adj[a].iter().any(|&(k, _)| k == b) {
                return Err(invalid("edges", format!("duplicate edge {{{a}, {b}}}")));
            }
            let id = list.len();
            list.push((a, b));
            adj[a].push((b, id));
            adj[b].push((a, id));
        }
        Ok(Self { n, edges: list, adj })
    }

    pub fn single_edge() -> Self {
        Self::new(2, [(0, 1)]).expect("valid")
    }

    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i))).expect("valid")
    }

    pub fn cycle(n: usize) -> Self {
        assert!(n >= 3);
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n))).expect("valid")
    }

    pub fn triangle() -> Self {
        Self::cycle(3)
    }

    pub fn star(leaves: usize) -> Self {
        Self::new(leaves + 1, (1..=leaves).map(|i| (0, i))).expect("valid")
    }

    pub fn complete(n: usize) -> Self {
        let mut e = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                e.push((i, j));
            }
        }
        Self::new(n, e).expect("valid")
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> (usize, usize) {
        self.edges[id]
    }

    pub fn neighbours(&self, v: usize) -> &[(usize, usize)] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn edge_between(&self, i: usize, j: usize) -> Option<usize> {
        self.adj
            .get(i)?
            .iter()
            .find(|&&(k, _)| k == j)
            .map(|&(_, e)| e)
    }

    pub fn check_vertex(&self, v: usize) -> Result<()> {
        if v < self.n {
            Ok(())
        } else {
            Err(Error::VertexOutOfRange(v))
        }
    }

    /// Breadth-first distances from `start`; `usize::MAX` marks unreachable vertices.
    pub fn bfs_distances(&self, start: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        if start >= self.n {
            return dist;
        }
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &(w, _) in &self.adj[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.n == 0 || self.bfs_distances(0).iter().all(|&d| d != usize::MAX)
    }

    /// Connected-component label for every vertex, labels in order of first vertex.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.n];
        let mut next = 0;
        for s in 0..self.n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            let mut stack = vec![s];
            while let Some(v) = stack.pop() {
                for &(w, _) in &self.adj[v] {
                    if label[w] == usize::MAX {
                        label[w] = next;
                        stack.push(w);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// Shortest path from `from` to `to` (inclusive), if any.
    pub fn shortest_path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let mut prev = vec![usize::MAX; self.n];
        prev[from] = from;
        let mut queue = VecDeque::from([from]);
        while let Some(v) = queue.pop_front() {
            if v == to {
                break;
            }
            for &(w, _) in &self.adj[v] {
                if prev[w] == usize::MAX {
                    prev[w] = v;
                    queue.push_back(w);
                }
            }
        }
        if prev[to] == usize::MAX {
            return None;
        }
        let mut path = vec![to];
        let mut v = to;
        while v != from {
            v = prev[v];
            path.push(v);
        }
        path.reverse();
        Some(path)
    }

    /// Subgraph induced by `vertices`; vertex `k` of the result is `vertices[k]`.
    pub fn induced(&self, vertices: &[usize]) -> Result<Graph> {
        let mut local = vec![usize::MAX; self.n];
        for (k, &v) in vertices.iter().enumerate() {
            self.check_vertex(v)?;
            if local[v] != usize::MAX {
                return Err(invalid("vertices", format!("vertex {v} listed twice")));
            }
            local[v] = k;
        }
        let edges = self.edges.iter().filter_map(|&(i, j)| {
            (local[i] != usize::MAX && local[j] != usize::MAX).then(|| (local[i], local[j]))
        });
        Graph::new(vertices.len(), edges)
    }
}
