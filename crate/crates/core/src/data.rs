//! Datasets on disk and synthetic graphs.
//!
//! A dataset directory holds four text files:
//!
//! - `edges.tsv`: one undirected edge `u<TAB>v` per line
//! - `features.csv`: header `f0,f1,…`, then one row per node
//! - `labels.csv`: header `node,label`; unlisted nodes are unlabeled
//! - `splits.csv`: header `node,split` with split in `train|val|test`

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GenError, Result};
use crate::graph::CsrGraph;
use crate::tensor::Tensor;

/// Node-classification data on one graph. The graph is stored without
/// self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: CsrGraph,
    pub features: Tensor,
    /// Class id per node, `-1` when unlabeled.
    pub labels: Vec<i64>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().map(|&l| (l + 1).max(0) as usize).max().unwrap_or(0)
    }

    /// Checks the invariants every loader and generator must uphold.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.graph.num_nodes() != n || self.labels.len() != n {
            return Err(GenError::Input(format!(
                "inconsistent counts: graph {}, features {n}, labels {}",
                self.graph.num_nodes(),
                self.labels.len()
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l < -1) {
            return Err(GenError::Input(format!("invalid label {l}")));
        }
        let mut owner = vec![None; n];
        for (name, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in ids.iter() {
                if i >= n {
                    return Err(GenError::Input(format!("{name} split node {i} out of range")));
                }
                if self.labels[i] < 0 {
                    return Err(GenError::Input(format!("{name} split node {i} has no label")));
                }
                if let Some(prev) = owner[i].replace(name) {
                    return Err(GenError::Input(format!("split overlap: node {i} in {prev} and {name}")));
                }
            }
        }
        Ok(())
    }
}

fn read(dir: &Path, name: &str) -> Result<(std::path::PathBuf, String)> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| GenError::io(&path, e))?;
    Ok((path, text))
}

/// Data lines of a CSV with the expected header, numbered from 1.
fn csv_rows<'a>(path: &Path, text: &'a str, header: Option<&str>) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| GenError::file(path, "empty file"))?;
    if let Some(want) = header {
        if head.trim() != want {
            return Err(GenError::file(path, format!("expected header {want:?}, got {:?}", head.trim())));
        }
    }
    Ok(lines
        .map(|(n, l)| (n + 1, l.split(',').map(str::trim).collect()))
        .collect())
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, tok: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| GenError::file(path, format!("line {line}: cannot parse {tok:?}")))
}

/// Reads a `features.csv` file: header `f0,…`, one row per node.
pub fn read_features(fpath: &Path) -> Result<Tensor> {
    let ftext = fs::read_to_string(fpath).map_err(|e| GenError::io(fpath, e))?;
    let rows = csv_rows(fpath, &ftext, None)?;
    let width = ftext.lines().next().map_or(0, |h| h.split(',').count());
    let mut data = Vec::with_capacity(rows.len() * width);
    for (line, fields) in &rows {
        if fields.len() != width {
            return Err(GenError::file(
                fpath,
                format!("line {line}: ragged row with {} fields, header has {width}", fields.len()),
            ));
        }
        for tok in fields {
            data.push(parse_field::<f64>(fpath, *line, tok)?);
        }
    }
    let n = rows.len();
    let features = Tensor::new(n, width, data)?;
    if !features.is_finite() {
        return Err(GenError::file(fpath, "non-finite feature value"));
    }
    Ok(features)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let features = read_features(&dir.join("features.csv"))?;
    let n = features.rows();

    let graph = CsrGraph::read_edge_list(&dir.join("edges.tsv"), Some(n), false)?;

    let (lpath, ltext) = read(dir, "labels.csv")?;
    let mut labels = vec![-1i64; n];
    for (line, fields) in csv_rows(&lpath, &ltext, Some("node,label"))? {
        if fields.len() != 2 {
            return Err(GenError::file(&lpath, format!("line {line}: expected node,label")));
        }
        let node: usize = parse_field(&lpath, line, fields[0])?;
        let label: i64 = parse_field(&lpath, line, fields[1])?;
        if node >= n {
            return Err(GenError::file(&lpath, format!("line {line}: node {node} out of range for {n} nodes")));
        }
        labels[node] = label;
    }

    let (spath, stext) = read(dir, "splits.csv")?;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (line, fields) in csv_rows(&spath, &stext, Some("node,split"))? {
        if fields.len() != 2 {
            return Err(GenError::file(&spath, format!("line {line}: expected node,split")));
        }
        let node: usize = parse_field(&spath, line, fields[0])?;
        match fields[1] {
            "train" => train.push(node),
            "val" => val.push(node),
            "test" => test.push(node),
            other => return Err(GenError::file(&spath, format!("line {line}: unknown split {other:?}"))),
        }
    }
    let ds = Dataset {
        graph,
        features,
        labels,
        train,
        val,
        test,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GenError::io(dir, e))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| GenError::io(&path, e))
    };
    write("edges.tsv", ds.graph.to_edge_list())?;
    let mut f = (0..ds.features.cols())
        .map(|c| format!("f{c}"))
        .collect::<Vec<_>>()
        .join(",");
    f.push('\n');
    for i in 0..ds.num_nodes() {
        let row: Vec<String> = ds.features.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        f.push_str(&row.join(","));
        f.push('\n');
    }
    write("features.csv", f)?;
    let mut l = String::from("node,label\n");
    for (i, &lab) in ds.labels.iter().enumerate() {
        if lab >= 0 {
            let _ = writeln!(l, "{i},{lab}");
        }
    }
    write("labels.csv", l)?;
    let mut s = String::from("node,split\n");
    for (name, ids) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        for i in ids.iter() {
            let _ = writeln!(s, "{i},{name}");
        }
    }
    write("splits.csv", s)
}

/// Synthetic graph families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Synthetic {
    Chain { n: usize },
    BalancedTree { branching: usize, depth: usize },
    Cycle { n: usize },
    ErdosRenyi { n: usize, p: f64 },
    /// Random recursive tree: node `v` attaches to a uniform earlier node.
    RandomTree { n: usize },
}

/// Builds a loop-free graph of the given family; deterministic in `seed`.
pub fn make_synthetic(kind: Synthetic, seed: u64) -> Result<CsrGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (edges, n) = match kind {
        Synthetic::Chain { n } => {
            if n == 0 {
                return Err(GenError::Input("chain needs at least one node".into()));
            }
            ((1..n).map(|v| (v - 1, v)).collect::<Vec<_>>(), n)
        }
        Synthetic::Cycle { n } => {
            if n < 3 {
                return Err(GenError::Input("cycle needs at least three nodes".into()));
            }
            let mut e: Vec<_> = (1..n).map(|v| (v - 1, v)).collect();
            e.push((n - 1, 0));
            (e, n)
        }
        Synthetic::BalancedTree { branching, depth } => {
            if branching == 0 {
                return Err(GenError::Input("branching factor must be at least 1".into()));
            }
            let mut n: usize = 1;
            let mut level: usize = 1;
            for _ in 0..depth {
                level = level
                    .checked_mul(branching)
                    .ok_or_else(|| GenError::Size("balanced tree too large".into()))?;
                n = n
                    .checked_add(level)
                    .ok_or_else(|| GenError::Size("balanced tree too large".into()))?;
            }
            ((1..n).map(|v| ((v - 1) / branching, v)).collect(), n)
        }
        Synthetic::RandomTree { n } => {
            if n == 0 {
                return Err(GenError::Input("tree needs at least one node".into()));
            }
            ((1..n).map(|v| (rng.gen_range(0..v), v)).collect(), n)
        }
        Synthetic::ErdosRenyi { n, p } => {
            if !(p > 0.0 && p < 1.0) {
                return Err(GenError::Input(format!("edge probability {p} outside (0, 1)")));
            }
            (erdos_renyi_edges(n, p, &mut rng), n)
        }
    };
    CsrGraph::build(&edges, n, false)
}

/// G(n, p) by geometric skipping over the lower triangle, `O(n + |E|)`.
fn erdos_renyi_edges(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    let log_q = (1.0 - p).ln();
    let (mut v, mut w): (usize, i64) = (1, -1);
    while v < n {
        let r: f64 = rng.gen();
        w += 1 + ((1.0 - r).ln() / log_q).floor() as i64;
        while v < n && w >= v as i64 {
            w -= v as i64;
            v += 1;
        }
        if v < n {
            edges.push((w as usize, v));
        }
    }
    edges
}

/// Random train/val/test split of the labeled nodes by fractions.
pub fn random_splits(labels: &[i64], train: f64, val: f64, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] >= 0).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ids.len() as f64 * train).round() as usize;
    let n_val = (ids.len() as f64 * val).round() as usize;
    let mut tr = ids[..n_train].to_vec();
    let mut va = ids[n_train..(n_train + n_val).min(ids.len())].to_vec();
    let mut te = ids[(n_train + n_val).min(ids.len())..].to_vec();
    tr.sort_unstable();
    va.sort_unstable();
    te.sort_unstable();
    (tr, va, te)
}

/// Long-range forest task. Each tree has a labeled root, a 4-edge spine
/// from the root to its unique node at distance 4, and random side
/// branches that stay off distance 4. Every node carries a one-hot random
/// colour; the root's label is the colour of its distance-4 node.
pub fn long_range_forest(trees: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if trees == 0 || classes < 2 {
        return Err(GenError::Input("need at least one tree and two classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    let mut depth_of = Vec::new();
    let mut roots = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..trees {
        let root = depth_of.len();
        depth_of.push(0usize);
        roots.push(root);
        let mut prev = root;
        for d in 1..=4 {
            let v = depth_of.len();
            depth_of.push(d);
            edges.push((prev, v));
            prev = v;
        }
        targets.push(prev);
        let spine: Vec<usize> = (root..root + 5).collect();
        // side branches: hang chains off spine nodes at depth < 3 without
        // reaching depth 4, plus a tail past the target
        for &anchor in &spine[..3] {
            let branches = rng.gen_range(1..=3);
            for _ in 0..branches {
                let max_len = 3 - depth_of[anchor];
                let len = rng.gen_range(1..=max_len);
                let mut at = anchor;
                for _ in 0..len {
                    let v = depth_of.len();
                    depth_of.push(depth_of[at] + 1);
                    edges.push((at, v));
                    at = v;
                }
            }
        }
        let tail = rng.gen_range(0..=2);
        let mut at = prev;
        for _ in 0..tail {
            let v = depth_of.len();
            depth_of.push(depth_of[at] + 1);
            edges.push((at, v));
            at = v;
        }
    }
    let n = depth_of.len();
    let colour: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let mut features = Tensor::zeros(n, classes);
    for (i, &c) in colour.iter().enumerate() {
        features.set(i, c, 1.0);
    }
    let mut labels = vec![-1i64; n];
    for (&r, &t) in roots.iter().zip(&targets) {
        labels[r] = colour[t] as i64;
    }
    let graph = CsrGraph::build(&edges, n, false)?;
    let (train, val, test) = random_splits(&labels, 0.6, 0.2, seed ^ 0x5eed);
    let ds = Dataset {
        graph,
        features,
        labels,
        train,
        val,
        test,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::bfs_distances;

    #[test]
    fn synthetic_shapes() {
        let c = make_synthetic(Synthetic::Chain { n: 5 }, 0).unwrap();
        assert_eq!((c.num_nodes(), c.num_edges()), (5, 4));
        let t = make_synthetic(Synthetic::BalancedTree { branching: 2, depth: 3 }, 0).unwrap();
        assert_eq!(t.num_nodes(), 15);
        assert!(t.is_acyclic());
        let t = make_synthetic(Synthetic::BalancedTree { branching: 3, depth: 2 }, 0).unwrap();
        assert_eq!(t.num_nodes(), 13);
        let cy = make_synthetic(Synthetic::Cycle { n: 6 }, 0).unwrap();
        assert_eq!(cy.num_edges(), 6);
        let r = make_synthetic(Synthetic::RandomTree { n: 30 }, 9).unwrap();
        assert!(r.is_acyclic() && r.num_edges() == 29);
        let a = make_synthetic(Synthetic::ErdosRenyi { n: 100, p: 0.05 }, 7).unwrap();
        let b = make_synthetic(Synthetic::ErdosRenyi { n: 100, p: 0.05 }, 7).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert!(matches!(
            make_synthetic(Synthetic::ErdosRenyi { n: 10, p: 1.5 }, 0),
            Err(GenError::Input(_))
        ));
    }

    #[test]
    fn erdos_renyi_density() {
        let n = 2000;
        let p = 10.0 / (n - 1) as f64;
        let g = make_synthetic(Synthetic::ErdosRenyi { n, p }, 1).unwrap();
        let mean_deg = 2.0 * g.num_edges() as f64 / n as f64;
        assert!((mean_deg - 10.0).abs() < 0.5, "{mean_deg}");
    }

    #[test]
    fn long_range_targets_are_unique() {
        let ds = long_range_forest(20, 4, 3).unwrap();
        assert!(ds.graph.is_acyclic());
        let roots: Vec<usize> = (0..ds.num_nodes()).filter(|&i| ds.labels[i] >= 0).collect();
        assert_eq!(roots.len(), 20);
        for &r in &roots {
            let d = bfs_distances(&ds.graph, r);
            let at4: Vec<usize> = (0..ds.num_nodes()).filter(|&v| d[v] == Some(4)).collect();
            assert_eq!(at4.len(), 1);
            let colour = ds.features.row(at4[0]).iter().position(|&x| x == 1.0).unwrap();
            assert_eq!(ds.labels[r], colour as i64);
        }
    }
}
