mod common;

use std::fs;
use std::path::Path;

use common::{adjacency, bfs};
use genet_core::data::{load_dataset, long_range_forest, make_synthetic, write_dataset, Dataset, Synthetic};
use genet_core::{CsrGraph, GenError, Tensor};
use proptest::prelude::*;

fn toy_dir(dir: &Path) {
    fs::write(dir.join("edges.tsv"), "0\t1\n").unwrap();
    fs::write(dir.join("features.csv"), "f0,f1\n1.0,0.5\n-2,3e-3\n").unwrap();
    fs::write(dir.join("labels.csv"), "node,label\n0,0\n1,1\n").unwrap();
    fs::write(dir.join("splits.csv"), "node,split\n0,train\n1,test\n").unwrap();
}

fn error_text(dir: &Path) -> String {
    load_dataset(dir).unwrap_err().to_string()
}

#[test]
fn two_node_fixture_loads() {
    let dir = tempfile::tempdir().unwrap();
    toy_dir(dir.path());
    let ds = load_dataset(dir.path()).unwrap();
    assert_eq!(ds.num_nodes(), 2);
    assert_eq!(ds.num_classes(), 2);
    assert_eq!(ds.features.row(1), &[-2.0, 3e-3]);
    assert_eq!(ds.graph.neighbors(0), &[1]);
}

#[test]
fn overlapping_splits_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    toy_dir(dir.path());
    fs::write(dir.path().join("splits.csv"), "node,split\n0,train\n0,test\n").unwrap();
    assert!(error_text(dir.path()).contains("overlap"));
}

#[test]
fn malformed_inputs_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    toy_dir(dir.path());
    fs::write(dir.path().join("features.csv"), "f0,f1\n1.0,0.5\n-2\n").unwrap();
    let e = error_text(dir.path());
    assert!(e.contains("features.csv") && e.contains("ragged"), "{e}");

    toy_dir(dir.path());
    fs::write(dir.path().join("labels.csv"), "node,label\n5,0\n").unwrap();
    assert!(error_text(dir.path()).contains("out of range"));

    toy_dir(dir.path());
    fs::write(dir.path().join("edges.tsv"), "0\t7\n").unwrap();
    assert!(error_text(dir.path()).contains("edges.tsv"));

    toy_dir(dir.path());
    fs::remove_file(dir.path().join("splits.csv")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.is_user_error());
    assert!(err.to_string().contains("splits.csv"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn written_datasets_read_back_bit_exactly(
        values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 12),
        seed: u64,
    ) {
        let graph = make_synthetic(Synthetic::RandomTree { n: 4 }, seed).unwrap();
        let ds = Dataset {
            graph,
            features: Tensor::new(4, 3, values).unwrap(),
            labels: vec![0, 1, -1, 2],
            train: vec![0],
            val: vec![3],
            test: vec![1],
        };
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.features), bits(&ds.features));
        prop_assert_eq!(back.graph.edges(), ds.graph.edges());
        prop_assert_eq!(&back.labels, &ds.labels);
        prop_assert_eq!((&back.train, &back.val, &back.test), (&ds.train, &ds.val, &ds.test));
    }
}

#[test]
fn synthetic_families() {
    let chain = make_synthetic(Synthetic::Chain { n: 5 }, 0).unwrap();
    assert_eq!(chain.edges(), vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
    let tree = make_synthetic(Synthetic::BalancedTree { branching: 2, depth: 3 }, 0).unwrap();
    assert_eq!((tree.num_nodes(), tree.num_edges()), (15, 14));
    assert!(tree.is_acyclic());
    let cycle = make_synthetic(Synthetic::Cycle { n: 6 }, 0).unwrap();
    assert!(!cycle.is_acyclic() && cycle.num_edges() == 6);
    let er = |s| make_synthetic(Synthetic::ErdosRenyi { n: 100, p: 0.05 }, s).unwrap().edges();
    assert_eq!(er(7), er(7));
    assert_ne!(er(7), er(8));
    for bad in [Synthetic::ErdosRenyi { n: 10, p: 0.0 }, Synthetic::ErdosRenyi { n: 10, p: 1.0 }, Synthetic::Chain { n: 0 }] {
        assert!(matches!(make_synthetic(bad, 0), Err(GenError::Input(_))), "{bad:?}");
    }
}

#[test]
fn erdos_renyi_density_matches_p() {
    let g = make_synthetic(Synthetic::ErdosRenyi { n: 2000, p: 0.005 }, 3).unwrap();
    let expected: f64 = 0.005 * 2000.0 * 1999.0 / 2.0;
    let sd = expected.sqrt();
    assert!((g.num_edges() as f64 - expected).abs() < 5.0 * sd, "{} edges", g.num_edges());
}

#[test]
fn long_range_labels_come_from_four_hops_away() {
    let ds = long_range_forest(40, 4, 9).unwrap();
    ds.validate().unwrap();
    let adj = adjacency(ds.num_nodes(), &ds.graph.edges());
    let colour = |n: usize| ds.features.row(n).iter().position(|&v| v == 1.0).unwrap() as i64;
    let labelled: Vec<usize> = (0..ds.num_nodes()).filter(|&i| ds.labels[i] >= 0).collect();
    assert_eq!(labelled.len(), 40);
    for &i in &labelled {
        let d = bfs(&adj, i);
        let far: Vec<usize> = (0..ds.num_nodes()).filter(|&n| d[n] == Some(4)).collect();
        assert_eq!(far.len(), 1, "exactly one node 4 hops from {i}");
        assert_eq!(colour(far[0]), ds.labels[i]);
    }
    assert!(CsrGraph::build(&ds.graph.edges(), ds.num_nodes(), false).unwrap().is_acyclic());
}
