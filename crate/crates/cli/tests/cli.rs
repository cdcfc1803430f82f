use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn genet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genet"))
        .args(args)
        .output()
        .expect("spawn genet")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect()
}

/// BFS distances on an undirected edge list.
fn distances(n: usize, edges: &[(usize, usize)], s: usize) -> Vec<Option<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut d = vec![None; n];
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

#[test]
fn decompose_chain_matches_bfs_shells() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("chain5.tsv");
    fs::write(&graph, "0\t1\n1\t2\n2\t3\n3\t4\n").unwrap();
    let out = dir.path().join("hops");
    let o = genet(&["decompose", "--graph", p(&graph), "--features", "onehot", "--K", "5", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let edges = [(0, 1), (1, 2), (2, 3), (3, 4)];
    for k in 1..=5 {
        let rows = read_csv(&out.join(format!("hop_{k}.csv")));
        assert_eq!(rows.len(), 5);
        for (i, row) in rows.iter().enumerate() {
            let d = distances(5, &edges, i);
            for (n, &v) in row.iter().enumerate() {
                let want = if d[n] == Some(k) { 1.0 } else { 0.0 };
                assert_eq!(v, want, "hop {k} node {i} column {n}");
            }
        }
    }
    let hop2 = read_csv(&out.join("hop_2.csv"));
    assert_eq!(hop2[2], vec![1.0, 0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn selfloop_mode_keeps_hop_parity() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("tree.tsv");
    fs::write(&graph, "0\t1\n0\t2\n1\t3\n1\t4\n2\t5\n5\t6\n").unwrap();
    let edges = [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (5, 6)];
    let out = dir.path().join("hops");
    let o = genet(&["decompose", "--graph", p(&graph), "--features", "onehot", "--K", "4", "--mode", "selfloop", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for k in 1..=4 {
        for (i, row) in read_csv(&out.join(format!("hop_{k}.csv"))).iter().enumerate() {
            let d = distances(7, &edges, i);
            for (n, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    let dist = d[n].unwrap();
                    assert!(dist <= k && dist % 2 == k % 2, "round {k} node {i} reaches {n} at {dist}");
                }
            }
        }
    }
}

#[test]
fn plain_mode_differs_from_elimination() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("chain.tsv");
    fs::write(&graph, "0\t1\n1\t2\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (mode, out) in [("gea", &a), ("plain", &b)] {
        let o = genet(&["decompose", "--graph", p(&graph), "--features", "onehot", "--K", "2", "--mode", mode, "--out", p(out)]);
        assert!(o.status.success());
    }
    assert_ne!(fs::read(a.join("hop_2.csv")).unwrap(), fs::read(b.join("hop_2.csv")).unwrap());
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let o = genet(&["verify", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn missing_config_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    let o = genet(&["train", "--data", p(&dir.path().join("cora")), "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cfg.txt"));
}

#[test]
fn missing_dataset_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "epochs = 1\n").unwrap();
    let o = genet(&["train", "--data", p(&dir.path().join("cora")), "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("features.csv"));
}

#[test]
fn malformed_edge_list_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("bad.tsv");
    fs::write(&graph, "0\t1\n1\tx\n").unwrap();
    let o = genet(&["decompose", "--graph", p(&graph), "--features", "onehot", "--K", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn verify_suite_passes() {
    let o = genet(&["verify", "--suite", "tree-exactness"]);
    assert_eq!(o.status.code(), Some(0));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.starts_with("suite,property,result,detail"));
    assert!(table.contains("PASS") && !table.contains("FAIL"));
    assert_eq!(genet(&["verify", "--suite", "nonsense"]).status.code(), Some(1));
}

#[test]
fn gen_graph_balanced_tree_size() {
    let o = genet(&["gen-graph", "--kind", "balanced-tree", "--branching", "2", "--depth", "3"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 14);
    let o = genet(&["gen-graph", "--kind", "erdos-renyi", "--n", "10"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_then_eval_reproduces_best_accuracies() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = genet(&["gen-graph", "--kind", "long-range", "--trees", "20", "--seed", "3", "--out", p(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "layers = 1\nhidden_dim = 8\nK = 4\nepochs = 5\nlr = 0.01\n").unwrap();
    let out = dir.path().join("run");
    let o = genet(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&out), "--seed", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_loss,train_acc,val_acc,test_acc\n"));
    assert_eq!(metrics.lines().count(), 6);

    // The checkpoint holds the best-validation parameters, so eval must
    // report that epoch's accuracies.
    let rows: Vec<Vec<f64>> = metrics
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let best = rows
        .iter()
        .fold(&rows[0], |b, r| if r[3] > b[3] { r } else { b });
    fs::write(&cfg, "layers = 1\nhidden_dim = 8\nK = 4\nepochs = 5\nlr = 0.01\nseed = 2\n").unwrap();
    let o = genet(&["eval", "--data", p(&data), "--config", p(&cfg), "--checkpoint", p(&out.join("checkpoint.genc"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    let acc: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(acc[1], best[3]);
    assert_eq!(acc[2], best[4]);
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(genet(&["gen-graph", "--kind", "long-range", "--trees", "8", "--out", p(&data)]).status.success());
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "layers = 1\nhidden_dim = 4\nepochs = 1\n").unwrap();
    let out = dir.path().join("run");
    assert!(genet(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&out)]).status.success());
    fs::write(&cfg, "layers = 2\nhidden_dim = 4\nepochs = 1\n").unwrap();
    let o = genet(&["eval", "--data", p(&data), "--config", p(&cfg), "--checkpoint", p(&out.join("checkpoint.genc"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_writes_records() {
    let o = genet(&["bench", "--sizes", "200,400", "--K", "2", "--repeats", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("nodes,edges,K,L,ms_median,peak_bytes,edge_visits"));
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        let edges: u64 = f[1].parse().unwrap();
        assert_eq!(f[6].parse::<u64>().unwrap(), 2 * (2 * edges) * 2);
        assert!(f[5].parse::<u64>().unwrap() > 0, "allocator counts peak bytes");
    }
    let o = genet(&["bench", "--sizes", "400,200"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn threads_flag_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("er.tsv");
    let o = genet(&["gen-graph", "--kind", "erdos-renyi", "--n", "300", "--p", "0.03", "--seed", "5"]);
    fs::write(&g, &o.stdout).unwrap();
    let run = |threads: &str| genet(&["--threads", threads, "decompose", "--graph", p(&g), "--features", "onehot", "--K", "3", "--coef", "gcn"]).stdout;
    assert_eq!(run("1"), run("4"));
}
