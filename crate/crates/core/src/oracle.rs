//! Brute-force references for the engine's exactness claims.
//!
//! Everything here works on dense adjacency and coefficient matrices built
//! straight from the CSR arrays, runs its own breadth-first searches and
//! shares no propagation code with [`crate::elimination`]. Costs are
//! quadratic or worse; guards keep walk enumeration small.

use std::collections::VecDeque;

use crate::error::{GenError, Result};
use crate::graph::{CsrGraph, EdgeCoefficients};
use crate::tensor::Tensor;

pub const MAX_WALK_LEN: usize = 8;
pub const MAX_WALK_NODES: usize = 64;

/// Dense `N×N` view of one round's coefficients; the diagonal holds the
/// self weights.
pub fn dense_coefficients(g: &CsrGraph, coef: &EdgeCoefficients) -> Vec<Vec<f64>> {
    let n = g.num_nodes();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for s in g.offsets()[i]..g.offsets()[i + 1] {
            let j = g.targets()[s];
            if j != i {
                m[i][j] = coef.edge[s];
            }
        }
        m[i][i] = coef.self_weight[i];
    }
    m
}

fn dense_adjacency(g: &CsrGraph) -> Vec<Vec<bool>> {
    let n = g.num_nodes();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for s in g.offsets()[i]..g.offsets()[i + 1] {
            adj[i][g.targets()[s]] = true;
        }
    }
    adj
}

/// Distances and BFS parents from `root`, ignoring self-loops.
fn bfs_tree(adj: &[Vec<bool>], root: usize) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let n = adj.len();
    let mut dist = vec![None; n];
    let mut parent = vec![None; n];
    dist[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if v != u && adj[u][v] && dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap_or(0) + 1);
                parent[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    (dist, parent)
}

fn has_cycle(adj: &[Vec<bool>]) -> bool {
    let n = adj.len();
    let edges = (0..n)
        .map(|i| (i + 1..n).filter(|&j| adj[i][j]).count())
        .sum::<usize>();
    let mut seen = vec![false; n];
    let mut components = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        components += 1;
        let (dist, _) = bfs_tree(adj, s);
        for (v, d) in dist.iter().enumerate() {
            if d.is_some() {
                seen[v] = true;
            }
        }
    }
    edges + components != n
}

/// Path product from `i` to `n` along BFS parents. The edge `(v_{p-1}, v_p)`
/// at position `p` from `i` on a path of length `d` carries round
/// `d − p + 1`, so the edge touching `n` is weighted by round 1.
fn path_product(
    coefs: &[Vec<Vec<f64>>],
    parent: &[Option<usize>],
    i: usize,
    n: usize,
    d: usize,
) -> f64 {
    let mut path = vec![n];
    let mut v = n;
    while v != i {
        v = parent[v].expect("reachable node has a parent");
        path.push(v);
    }
    path.reverse();
    (1..=d)
        .map(|p| coefs[d - p][path[p - 1]][path[p]])
        .product()
}

/// Σ over nodes `n` at exactly `k` hops from `i` of (path product) · `X_n`.
/// Only defined on forests.
pub fn exact_khop_aggregate(
    g: &CsrGraph,
    x: &Tensor,
    coefs: &[EdgeCoefficients],
    i: usize,
    k: usize,
) -> Result<Vec<f64>> {
    let adj = dense_adjacency(g);
    if has_cycle(&adj) {
        return Err(GenError::Contract("exact k-hop aggregation needs an acyclic graph".into()));
    }
    if coefs.len() < k {
        return Err(GenError::Contract(format!("{} coefficient rounds for hop {k}", coefs.len())));
    }
    let dense: Vec<_> = coefs[..k].iter().map(|c| dense_coefficients(g, c)).collect();
    let (dist, parent) = bfs_tree(&adj, i);
    let mut out = vec![0.0; x.cols()];
    for (n, d) in dist.iter().enumerate() {
        if *d == Some(k) {
            let w = path_product(&dense, &parent, i, n, k);
            for (o, v) in out.iter_mut().zip(x.row(n)) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

/// Composite path weight `Π α` from `i` to `n` on a forest, with the same
/// round indexing as [`exact_khop_aggregate`]. `None` if `n` is unreachable.
pub fn path_weight(g: &CsrGraph, coefs: &[EdgeCoefficients], i: usize, n: usize) -> Option<(usize, f64)> {
    let adj = dense_adjacency(g);
    let (dist, parent) = bfs_tree(&adj, i);
    let d = dist[n]?;
    if d > coefs.len() {
        return None;
    }
    let dense: Vec<_> = coefs[..d].iter().map(|c| dense_coefficients(g, c)).collect();
    Some((d, path_product(&dense, &parent, i, n, d)))
}

/// All walks from a source, revisits allowed, grouped by length.
#[derive(Debug, Clone)]
pub struct WalkEnumeration {
    pub source: usize,
    /// `walks[len]` lists every walk with `len` steps.
    pub walks: Vec<Vec<Vec<usize>>>,
}

pub fn enumerate_walks(g: &CsrGraph, i: usize, max_len: usize) -> Result<WalkEnumeration> {
    if max_len > MAX_WALK_LEN || g.num_nodes() > MAX_WALK_NODES {
        return Err(GenError::Size(format!(
            "walk enumeration limited to length {MAX_WALK_LEN} on {MAX_WALK_NODES} nodes"
        )));
    }
    let adj = dense_adjacency(g);
    let n = g.num_nodes();
    let mut walks = vec![vec![vec![i]]];
    for len in 1..=max_len {
        let mut next = Vec::new();
        for w in &walks[len - 1] {
            let last = *w.last().expect("walks are non-empty");
            for v in 0..n {
                if adj[last][v] {
                    let mut ext = w.clone();
                    ext.push(v);
                    next.push(ext);
                }
            }
        }
        walks.push(next);
    }
    Ok(WalkEnumeration { source: i, walks })
}

impl WalkEnumeration {
    fn walk_weight(walk: &[usize], dense: &[Vec<Vec<f64>>]) -> f64 {
        let k = walk.len() - 1;
        (1..=k).map(|p| dense[k - p][walk[p - 1]][walk[p]]).product()
    }

    /// Value of plain (non-eliminated) propagation at the source after `k`
    /// rounds: every length-`k` walk contributes its coefficient product
    /// times the end node's features.
    pub fn predict(&self, g: &CsrGraph, coefs: &[EdgeCoefficients], x: &Tensor, k: usize) -> Vec<f64> {
        let dense: Vec<_> = coefs[..k].iter().map(|c| dense_coefficients(g, c)).collect();
        let mut out = vec![0.0; x.cols()];
        for w in &self.walks[k] {
            let c = Self::walk_weight(w, &dense);
            for (o, v) in out.iter_mut().zip(x.row(*w.last().unwrap_or(&self.source))) {
                *o += c * v;
            }
        }
        out
    }

    /// Value of eliminated propagation at the source after `k` rounds: a run
    /// of self steps at the source followed by a walk that never steps back
    /// along the edge it just used and never takes a self step.
    pub fn predict_non_backtracking(
        &self,
        g: &CsrGraph,
        coefs: &[EdgeCoefficients],
        x: &Tensor,
        k: usize,
    ) -> Vec<f64> {
        let dense: Vec<_> = coefs[..k].iter().map(|c| dense_coefficients(g, c)).collect();
        let mut out = vec![0.0; x.cols()];
        for w in &self.walks[k] {
            let lazy = w.iter().take_while(|&&v| v == self.source).count() - 1;
            let tail = &w[lazy..];
            let ok = tail.windows(2).all(|p| p[0] != p[1])
                && tail.windows(3).all(|t| t[0] != t[2]);
            if !ok {
                continue;
            }
            let c = Self::walk_weight(w, &dense);
            for (o, v) in out.iter_mut().zip(x.row(*w.last().unwrap_or(&self.source))) {
                *o += c * v;
            }
        }
        out
    }
}

/// Central-difference gradient of `f` at `theta`.
pub fn finite_diff_grad<F>(mut f: F, theta: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if step <= 0.0 {
        return Err(GenError::Contract("finite-difference step must be positive".into()));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for c in 0..theta.len() {
        probe[c] = theta[c] + step;
        let up = f(&probe);
        probe[c] = theta[c] - step;
        let down = f(&probe);
        probe[c] = theta[c];
        if !up.is_finite() || !down.is_finite() {
            return Err(GenError::Numeric(format!("objective not finite near coordinate {c}")));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// `|a − b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

/// Closed-form nonlinear GCN in which each layer receives only pure
/// hop-distance messages:
///
/// ```text
/// h_i⁽ˡ⁾ = ReLU((C_ii h_i⁽ˡ⁻¹⁾ + Σ_{d(i,j)=1} C_ij m_i(j, l−1)) W⁽ˡ⁾)
/// m_i(v, 0) = x_v
/// m_i(v, m) = ReLU((Σ_{w~v, d(i,w)=d(i,v)+1} C_vw m_i(w, m−1)) W⁽ᵐ⁾)
/// ```
///
/// On a forest this is exactly the nested non-backtracking expansion of
/// the eliminated network. On graphs with cycles it drops paths that reach
/// a node by a non-shortest route, which is where elimination and this form
/// part ways. Normalisation `C_ij = (d_i d_j)^{-1/2}` counts self-loop slots.
pub fn pure_hop_gcn(g: &CsrGraph, x: &Tensor, weights: &[Tensor]) -> Result<Vec<Tensor>> {
    let n = g.num_nodes();
    let adj = dense_adjacency(g);
    let deg: Vec<f64> = adj
        .iter()
        .map(|row| row.iter().filter(|&&b| b).count() as f64)
        .collect();
    if let Some(i) = deg.iter().position(|&d| d == 0.0) {
        return Err(GenError::DegenerateDegree(i));
    }
    let c = |i: usize, j: usize| 1.0 / (deg[i] * deg[j]).sqrt();
    let relu_mat = |v: &[f64], w: &Tensor| -> Vec<f64> {
        (0..w.cols())
            .map(|col| {
                let s: f64 = v.iter().enumerate().map(|(r, a)| a * w.get(r, col)).sum();
                s.max(0.0)
            })
            .collect()
    };
    let mut hs = vec![x.clone()];
    for l in 1..=weights.len() {
        let w = &weights[l - 1];
        let prev = &hs[l - 1];
        let mut next = Tensor::zeros(n, w.cols());
        for i in 0..n {
            let (dist, _) = bfs_tree(&adj, i);
            // messages m_i(v, m) for m = 0..l-1, computed outward-in
            fn message(
                v: usize,
                m: usize,
                adj: &[Vec<bool>],
                dist: &[Option<usize>],
                x: &Tensor,
                weights: &[Tensor],
                c: &dyn Fn(usize, usize) -> f64,
                relu_mat: &dyn Fn(&[f64], &Tensor) -> Vec<f64>,
            ) -> Vec<f64> {
                if m == 0 {
                    return x.row(v).to_vec();
                }
                let dv = dist[v].expect("message nodes are reachable");
                let width = weights[m - 1].rows();
                let mut acc = vec![0.0; width];
                for w in 0..adj.len() {
                    if w != v && adj[v][w] && dist[w] == Some(dv + 1) {
                        let sub = message(w, m - 1, adj, dist, x, weights, c, relu_mat);
                        let cw = c(v, w);
                        for (a, s) in acc.iter_mut().zip(sub) {
                            *a += cw * s;
                        }
                    }
                }
                relu_mat(&acc, &weights[m - 1])
            }
            let mut agg: Vec<f64> = prev.row(i).iter().map(|v| c(i, i) * v).collect();
            if !adj[i][i] {
                agg.iter_mut().for_each(|v| *v = 0.0);
            }
            for j in 0..n {
                if j != i && adj[i][j] {
                    let m = message(j, l - 1, &adj, &dist, x, weights, &c, &relu_mat);
                    for (a, s) in agg.iter_mut().zip(m) {
                        *a += c(i, j) * s;
                    }
                }
            }
            next.row_mut(i).copy_from_slice(&relu_mat(&agg, w));
        }
        hs.push(next);
    }
    Ok(hs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CsrGraph;

    fn chain(n: usize, loops: bool) -> CsrGraph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        CsrGraph::build(&edges, n, loops).unwrap()
    }

    #[test]
    fn khop_basics() {
        let g = chain(5, true);
        let x = Tensor::identity(5);
        let unit = vec![EdgeCoefficients::uniform(&g, 1.0); 3];
        assert_eq!(exact_khop_aggregate(&g, &x, &unit, 3, 0).unwrap(), x.row(3));
        assert_eq!(exact_khop_aggregate(&g, &x, &unit, 2, 2).unwrap(), vec![1., 0., 0., 0., 1.]);
        let star = CsrGraph::build(&[(0, 1), (0, 2), (0, 3)], 4, false).unwrap();
        let xs = Tensor::new(4, 1, vec![10., 1., 2., 3.]).unwrap();
        let c = vec![EdgeCoefficients::uniform(&star, 1.0)];
        assert_eq!(exact_khop_aggregate(&star, &xs, &c, 0, 1).unwrap(), vec![6.0]);
        let tri = CsrGraph::build(&[(0, 1), (1, 2), (2, 0)], 3, false).unwrap();
        let c = vec![EdgeCoefficients::uniform(&tri, 1.0)];
        assert!(matches!(
            exact_khop_aggregate(&tri, &Tensor::identity(3), &c, 0, 1),
            Err(GenError::Contract(_))
        ));
    }

    #[test]
    fn walks() {
        let single = CsrGraph::build(&[], 1, true).unwrap();
        let w = enumerate_walks(&single, 0, 2).unwrap();
        assert_eq!(w.walks, vec![vec![vec![0]], vec![vec![0, 0]], vec![vec![0, 0, 0]]]);
        let pair = CsrGraph::build(&[(0, 1)], 2, false).unwrap();
        assert!(enumerate_walks(&pair, 0, 2).unwrap().walks[2].contains(&vec![0, 1, 0]));
        let c3 = chain(3, false);
        assert_eq!(enumerate_walks(&c3, 0, 2).unwrap().walks[2], vec![vec![0, 1, 0], vec![0, 1, 2]]);
        assert!(matches!(enumerate_walks(&c3, 0, 9), Err(GenError::Size(_))));
    }

    #[test]
    fn finite_differences() {
        let theta = [0.3, -1.2, 2.0];
        let g = finite_diff_grad(|t| t.iter().map(|v| v * v).sum::<f64>() / 2.0, &theta, 1e-5).unwrap();
        for (a, b) in g.iter().zip(theta) {
            assert!((a - b).abs() < 1e-9);
        }
        let z = finite_diff_grad(|_| 4.0, &theta, 1e-5).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(matches!(
            finite_diff_grad(|t| 1.0 / t[0], &[0.0], 1e-5).map(|g| g[0].is_finite()),
            Ok(true) | Err(GenError::Numeric(_))
        ));
        assert!(matches!(finite_diff_grad(|t| (t[0] - 1e-5).ln(), &[1e-5], 1e-5), Err(GenError::Numeric(_))));
    }

    #[test]
    fn pure_hop_first_layer_is_plain_gcn() {
        let g = chain(3, true);
        let x = Tensor::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let w = Tensor::new(1, 1, vec![1.0]).unwrap();
        let hs = pure_hop_gcn(&g, &x, &[w]).unwrap();
        // node 0: degree 2, node 1: degree 3
        let want = 1.0 / 2.0 + 2.0 / 6f64.sqrt();
        assert!((hs[1].get(0, 0) - want).abs() < 1e-15);
    }
}
