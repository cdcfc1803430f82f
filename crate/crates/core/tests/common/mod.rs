//! Fixtures and brute-force references shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use genet_core::{CsrGraph, EdgeCoefficients, Tensor};
use rand::Rng;

/// Random recursive tree on `n` nodes.
pub fn tree_edges<R: Rng>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    (1..n).map(|v| (rng.gen_range(0..v), v)).collect()
}

pub fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u != v {
            adj[u].push(v);
            adj[v].push(u);
        }
    }
    adj
}

pub fn bfs(adj: &[Vec<usize>], s: usize) -> Vec<Option<usize>> {
    let mut d = vec![None; adj.len()];
    d[s] = Some(0);
    let mut q = VecDeque::from([s]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if d[v].is_none() {
                d[v] = Some(d[u].unwrap() + 1);
                q.push_back(v);
            }
        }
    }
    d
}

/// Independent nonnegative coefficients per slot and round.
pub fn random_coefs<R: Rng>(g: &CsrGraph, rounds: usize, rng: &mut R) -> Vec<EdgeCoefficients> {
    (0..rounds)
        .map(|_| {
            let w = (0..g.num_slots()).map(|_| rng.gen_range(0.1..1.0)).collect();
            EdgeCoefficients::from_slots(g, w).unwrap()
        })
        .collect()
}

/// `m[i][j]` = weight node `i` gives node `j` (self weight on the diagonal).
pub fn dense(g: &CsrGraph, c: &EdgeCoefficients) -> Vec<Vec<f64>> {
    let n = g.num_nodes();
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            if i == j {
                *v = c.self_weight[i];
            } else if let Some(w) = c.weight(g, i, j) {
                *v = w;
            }
        }
    }
    m
}

/// Sum of `x_n` over nodes exactly `k` hops from `i` on a tree, weighted by
/// the path product in which the edge `q` steps from `n` uses round `q`.
pub fn tree_shell(g: &CsrGraph, adj: &[Vec<usize>], coefs: &[EdgeCoefficients], x: &Tensor, i: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.cols()];
    let mut stack = vec![(i, usize::MAX, vec![i])];
    while let Some((u, from, path)) = stack.pop() {
        if path.len() - 1 == k {
            let mut w = 1.0;
            for p in 1..=k {
                w *= coefs[k - p].weight(g, path[p - 1], path[p]).unwrap();
            }
            for (o, v) in out.iter_mut().zip(x.row(u)) {
                *o += w * v;
            }
            continue;
        }
        for &v in &adj[u] {
            if v != from {
                let mut next = path.clone();
                next.push(v);
                stack.push((v, u, next));
            }
        }
    }
    out
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{what}: {x} vs {y}");
    }
}
