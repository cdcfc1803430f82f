//! Immutable CSR topology, edge coefficient arrays and hop shells.
//!
//! Every CSR entry is a *slot*. Self-loops, when requested, are stored as
//! ordinary slots so per-edge coefficient arrays carry `α_ii` alongside
//! `α_ij`. The non-loop directed edges are additionally indexed as *arcs*;
//! elimination carriers live on arcs only.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use crate::error::{GenError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrGraph {
    num_nodes: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    has_self_loops: bool,
    self_slot: Vec<Option<usize>>,
    reverse_slot: Vec<usize>,
    arc_offsets: Vec<usize>,
    arc_slot: Vec<usize>,
    arc_target: Vec<usize>,
    arc_reverse: Vec<usize>,
}

impl CsrGraph {
    /// Builds a symmetric, deduplicated CSR graph. Self-loops present in
    /// `edges` are dropped unless `add_self_loops` is set, in which case
    /// every node gets exactly one.
    pub fn build(edges: &[(usize, usize)], num_nodes: usize, add_self_loops: bool) -> Result<Self> {
        for (line, &(u, v)) in edges.iter().enumerate() {
            if u >= num_nodes || v >= num_nodes {
                return Err(GenError::InputLine {
                    line: line + 1,
                    msg: format!("edge ({u},{v}) out of range for {num_nodes} nodes"),
                });
            }
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        if add_self_loops {
            for (i, list) in adj.iter_mut().enumerate() {
                list.push(i);
            }
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            targets.extend_from_slice(list);
            offsets.push(targets.len());
        }
        Ok(Self::from_parts(num_nodes, offsets, targets, add_self_loops))
    }

    fn from_parts(num_nodes: usize, offsets: Vec<usize>, targets: Vec<usize>, has_self_loops: bool) -> Self {
        let slot_of = |i: usize, j: usize| -> Option<usize> {
            let (lo, hi) = (offsets[i], offsets[i + 1]);
            targets[lo..hi].binary_search(&j).ok().map(|p| lo + p)
        };
        let mut self_slot = vec![None; num_nodes];
        let mut reverse_slot = vec![0; targets.len()];
        let mut arc_offsets = Vec::with_capacity(num_nodes + 1);
        let mut arc_slot = Vec::new();
        let mut arc_target = Vec::new();
        arc_offsets.push(0);
        for i in 0..num_nodes {
            for s in offsets[i]..offsets[i + 1] {
                let j = targets[s];
                reverse_slot[s] = slot_of(j, i).expect("adjacency is symmetric");
                if j == i {
                    self_slot[i] = Some(s);
                } else {
                    arc_slot.push(s);
                    arc_target.push(j);
                }
            }
            arc_offsets.push(arc_slot.len());
        }
        let mut arc_of_slot = vec![usize::MAX; targets.len()];
        for (a, &s) in arc_slot.iter().enumerate() {
            arc_of_slot[s] = a;
        }
        let arc_reverse = arc_slot.iter().map(|&s| arc_of_slot[reverse_slot[s]]).collect();
        Self {
            num_nodes,
            offsets,
            targets,
            has_self_loops,
            self_slot,
            reverse_slot,
            arc_offsets,
            arc_slot,
            arc_target,
            arc_reverse,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn has_self_loops(&self) -> bool {
        self.has_self_loops
    }

    /// Number of CSR entries, self-loops included.
    pub fn num_slots(&self) -> usize {
        self.targets.len()
    }

    /// Number of directed non-loop edges (twice the undirected edge count).
    pub fn num_arcs(&self) -> usize {
        self.arc_slot.len()
    }

    pub fn num_edges(&self) -> usize {
        self.num_arcs() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Degree counting a self-loop slot if present.
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
        self.targets[lo..hi].binary_search(&j).ok().map(|p| lo + p)
    }

    pub fn self_slot(&self, i: usize) -> Option<usize> {
        self.self_slot[i]
    }

    pub fn reverse_slot(&self, s: usize) -> usize {
        self.reverse_slot[s]
    }

    /// Source node of every slot.
    pub fn slot_sources(&self) -> Vec<usize> {
        let mut src = Vec::with_capacity(self.num_slots());
        for i in 0..self.num_nodes {
            src.extend(std::iter::repeat_n(i, self.degree(i)));
        }
        src
    }

    pub fn arc_offsets(&self) -> &[usize] {
        &self.arc_offsets
    }

    pub fn arc_slots(&self) -> &[usize] {
        &self.arc_slot
    }

    pub fn arc_targets(&self) -> &[usize] {
        &self.arc_target
    }

    /// For arc `(i,j)`, the arc index of `(j,i)`.
    pub fn arc_reverses(&self) -> &[usize] {
        &self.arc_reverse
    }

    /// Undirected non-loop edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for i in 0..self.num_nodes {
            for &j in self.neighbors(i) {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn with_self_loops(&self) -> Self {
        Self::build(&self.edges(), self.num_nodes, true).expect("ids already validated")
    }

    pub fn without_self_loops(&self) -> Self {
        Self::build(&self.edges(), self.num_nodes, false).expect("ids already validated")
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.num_nodes)?;
        let edges: Vec<_> = self.edges().into_iter().map(|(u, v)| (perm[u], perm[v])).collect();
        Self::build(&edges, self.num_nodes, self.has_self_loops)
    }

    /// True when the graph (ignoring self-loops) is a forest.
    pub fn is_acyclic(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.num_nodes).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (u, v) in self.edges() {
            let (a, b) = (find(&mut parent, u), find(&mut parent, v));
            if a == b {
                return false;
            }
            parent[a] = b;
        }
        true
    }

    pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
        let mut edges = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                let tok = tok.ok_or_else(|| GenError::InputLine {
                    line: n + 1,
                    msg: format!("expected two node ids, got {line:?}"),
                })?;
                tok.parse().map_err(|_| GenError::InputLine {
                    line: n + 1,
                    msg: format!("invalid node id {tok:?}"),
                })
            };
            let u = parse(parts.next())?;
            let v = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(GenError::InputLine {
                    line: n + 1,
                    msg: format!("expected two node ids, got {line:?}"),
                });
            }
            edges.push((u, v));
        }
        Ok(edges)
    }

    /// Reads a `u<TAB>v` edge list. Without `num_nodes` the node count is
    /// one past the largest id seen.
    pub fn read_edge_list(path: &Path, num_nodes: Option<usize>, add_self_loops: bool) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GenError::io(path, e))?;
        let edges = Self::parse_edge_list(&text).map_err(|e| match e {
            GenError::InputLine { line, msg } => GenError::file(path, format!("line {line}: {msg}")),
            other => other,
        })?;
        let n = num_nodes.unwrap_or_else(|| edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0));
        Self::build(&edges, n, add_self_loops).map_err(|e| match e {
            GenError::InputLine { line, msg } => GenError::file(path, format!("line {line}: {msg}")),
            other => other,
        })
    }

    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        for (u, v) in self.edges() {
            s.push_str(&format!("{u}\t{v}\n"));
        }
        s
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(GenError::Contract(format!("permutation of length {} for {n} nodes", perm.len())));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(GenError::Contract("not a permutation".into()));
        }
    }
    Ok(())
}

/// Per-slot propagation weights plus the per-node self weight used by
/// the self term of an update.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCoefficients {
    pub edge: Vec<f64>,
    pub self_weight: Vec<f64>,
}

impl EdgeCoefficients {
    /// Wraps per-slot weights; self weights are read from self-loop slots
    /// and are zero for nodes without one.
    pub fn from_slots(g: &CsrGraph, edge: Vec<f64>) -> Result<Self> {
        if edge.len() != g.num_slots() {
            return Err(GenError::Contract(format!(
                "{} coefficients for {} slots",
                edge.len(),
                g.num_slots()
            )));
        }
        if let Some(bad) = edge.iter().position(|w| !w.is_finite()) {
            return Err(GenError::Numeric(format!("coefficient at slot {bad}")));
        }
        let self_weight = (0..g.num_nodes())
            .map(|i| g.self_slot(i).map_or(0.0, |s| edge[s]))
            .collect();
        Ok(Self { edge, self_weight })
    }

    /// Every slot weighted `value`.
    pub fn uniform(g: &CsrGraph, value: f64) -> Self {
        Self::from_slots(g, vec![value; g.num_slots()]).expect("sizes match")
    }

    /// Overrides the self weights (mirrored into self-loop slots).
    pub fn with_self_weights(mut self, g: &CsrGraph, weights: Vec<f64>) -> Self {
        for (i, &w) in weights.iter().enumerate() {
            if let Some(s) = g.self_slot(i) {
                self.edge[s] = w;
            }
        }
        self.self_weight = weights;
        self
    }

    /// Weight on directed edge `(i,j)`, or the self weight when `i == j`.
    pub fn weight(&self, g: &CsrGraph, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return Some(self.self_weight[i]);
        }
        g.slot(i, j).map(|s| self.edge[s])
    }

    /// Relabels to match `g.permute(perm)` (the permuted graph).
    pub fn permute(&self, g: &CsrGraph, permuted: &CsrGraph, perm: &[usize]) -> Self {
        let mut edge = vec![0.0; permuted.num_slots()];
        let src = g.slot_sources();
        for (s, &w) in self.edge.iter().enumerate() {
            let (i, j) = (src[s], g.targets()[s]);
            let ps = permuted.slot(perm[i], perm[j]).expect("permuted graph has every edge");
            edge[ps] = w;
        }
        let mut self_weight = vec![0.0; g.num_nodes()];
        for (i, &w) in self.self_weight.iter().enumerate() {
            self_weight[perm[i]] = w;
        }
        Self { edge, self_weight }
    }
}

/// Symmetric degree normalisation `C_ij = d_i^{-1/2} d_j^{-1/2}` over every
/// slot, self-loops included.
pub fn gcn_coefficients(g: &CsrGraph) -> Result<EdgeCoefficients> {
    let inv_sqrt: Vec<f64> = (0..g.num_nodes())
        .map(|i| match g.degree(i) {
            0 => Err(GenError::DegenerateDegree(i)),
            d => Ok(1.0 / (d as f64).sqrt()),
        })
        .collect::<Result<_>>()?;
    let src = g.slot_sources();
    let edge = src
        .iter()
        .zip(g.targets())
        .map(|(&i, &j)| inv_sqrt[i] * inv_sqrt[j])
        .collect();
    EdgeCoefficients::from_slots(g, edge)
}

/// Breadth-first shells around `source`: entry `k` holds the nodes at
/// exactly `k` hops, sorted. Always returns `k_max + 1` shells.
pub fn k_hop_sets(g: &CsrGraph, source: usize, k_max: usize) -> Vec<Vec<usize>> {
    let dist = bfs_distances(g, source);
    let mut shells = vec![Vec::new(); k_max + 1];
    for (n, d) in dist.into_iter().enumerate() {
        if let Some(d) = d {
            if d <= k_max {
                shells[d].push(n);
            }
        }
    }
    shells
}

/// Hop distance from `source` to every node (`None` if unreachable).
pub fn bfs_distances(g: &CsrGraph, source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; g.num_nodes()];
    let mut queue = VecDeque::new();
    dist[source] = Some(0);
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap_or(0);
        for &v in g.neighbors(u) {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize, loops: bool) -> CsrGraph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        CsrGraph::build(&edges, n, loops).unwrap()
    }

    #[test]
    fn build_small_cases() {
        let g = CsrGraph::build(&[(0, 1)], 2, false).unwrap();
        assert_eq!(g.offsets(), &[0, 1, 2]);
        assert_eq!(g.targets(), &[1, 0]);
        let dup = CsrGraph::build(&[(0, 1), (1, 0)], 2, false).unwrap();
        assert_eq!(g, dup);
        let c = chain(5, true);
        assert_eq!(c.neighbors(2), &[1, 2, 3]);
        assert_eq!(c.num_arcs(), 8);
        assert_eq!(c.num_slots(), 13);
    }

    #[test]
    fn out_of_range_names_line() {
        let err = CsrGraph::build(&[(0, 1), (1, 7)], 3, false).unwrap_err();
        assert!(matches!(err, GenError::InputLine { line: 2, .. }));
    }

    #[test]
    fn parse_edge_list_skips_comments() {
        let text = "# header\n0\t1\n\n1\t2 # trailing\n";
        assert_eq!(CsrGraph::parse_edge_list(text).unwrap(), vec![(0, 1), (1, 2)]);
        let err = CsrGraph::parse_edge_list("0\t1\n2\tx\n").unwrap_err();
        assert!(matches!(err, GenError::InputLine { line: 2, .. }));
    }

    #[test]
    fn reverse_indices_are_involutions() {
        let g = CsrGraph::build(&[(0, 1), (1, 2), (2, 0), (2, 3)], 4, true).unwrap();
        for s in 0..g.num_slots() {
            assert_eq!(g.reverse_slot(g.reverse_slot(s)), s);
        }
        for a in 0..g.num_arcs() {
            let r = g.arc_reverses()[a];
            assert_eq!(g.arc_reverses()[r], a);
            assert_ne!(r, a);
        }
    }

    #[test]
    fn gcn_normalisation() {
        let single = CsrGraph::build(&[], 1, true).unwrap();
        assert_eq!(gcn_coefficients(&single).unwrap().edge, vec![1.0]);
        let pair = CsrGraph::build(&[(0, 1)], 2, false).unwrap();
        assert_eq!(gcn_coefficients(&pair).unwrap().edge, vec![1.0, 1.0]);
        let c = chain(3, true);
        let coef = gcn_coefficients(&c).unwrap();
        let w = coef.weight(&c, 0, 1).unwrap();
        assert!((w - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((w - 0.40825).abs() < 1e-5);
        let isolated = CsrGraph::build(&[(0, 1)], 3, false).unwrap();
        assert!(matches!(gcn_coefficients(&isolated), Err(GenError::DegenerateDegree(2))));
    }

    #[test]
    fn hop_shells() {
        let c = chain(5, true);
        assert_eq!(k_hop_sets(&c, 2, 4), vec![vec![2], vec![1, 3], vec![0, 4], vec![], vec![]]);
        let k4_edges: Vec<_> = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j))).collect();
        let k4 = CsrGraph::build(&k4_edges, 4, false).unwrap();
        assert_eq!(k_hop_sets(&k4, 0, 3), vec![vec![0], vec![1, 2, 3], vec![], vec![]]);
        let apart = CsrGraph::build(&[], 2, false).unwrap();
        assert_eq!(k_hop_sets(&apart, 0, 3), vec![vec![0], vec![], vec![], vec![]]);
    }

    #[test]
    fn acyclicity() {
        assert!(chain(6, true).is_acyclic());
        let tri = CsrGraph::build(&[(0, 1), (1, 2), (2, 0)], 3, false).unwrap();
        assert!(!tri.is_acyclic());
    }

    #[test]
    fn permutation_round_trip() {
        let g = CsrGraph::build(&[(0, 1), (1, 2), (1, 3)], 4, true).unwrap();
        let perm = [3, 0, 2, 1];
        let p = g.permute(&perm).unwrap();
        let mut inv = [0; 4];
        for (i, &q) in perm.iter().enumerate() {
            inv[q] = i;
        }
        assert_eq!(p.permute(&inv).unwrap(), g);
        assert_eq!(p.neighbors(0), &[0, 1, 2, 3]);
        assert!(g.permute(&[0, 0, 1, 2]).is_err());
    }
}
