use genet_core::config::TrainConfig;
use genet_core::data::{long_range_forest, random_splits, Dataset};
use genet_core::train::{adam_step, decode, encode, metrics_csv, read_checkpoint, train_loop, write_checkpoint, AdamState, GenModel};
use genet_core::{CsrGraph, GenError, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two 12-node rings joined by one bridge; class = ring, features carry
/// a noisy class signal.
fn two_rings(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for ring in 0..2 {
        let base = ring * 12;
        for i in 0..12 {
            edges.push((base + i, base + (i + 1) % 12));
        }
    }
    edges.push((0, 12));
    let labels: Vec<i64> = (0..24).map(|i| (i / 12) as i64).collect();
    let mut features = Tensor::zeros(24, 3);
    for i in 0..24 {
        let s = if labels[i] == 0 { 1.0 } else { -1.0 };
        features.set(i, 0, s + rng.gen_range(-0.3..0.3));
        features.set(i, 1, rng.gen_range(-1.0..1.0));
        features.set(i, 2, rng.gen_range(-1.0..1.0));
    }
    let (train, val, test) = random_splits(&labels, 0.5, 0.25, seed);
    Dataset {
        graph: CsrGraph::build(&edges, 24, false).unwrap(),
        features,
        labels,
        train,
        val,
        test,
    }
}

fn small_config(epochs: usize, lr: f64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.layers = 1;
    cfg.model.hidden_dim = 8;
    cfg.model.k = 2;
    cfg.epochs = epochs;
    cfg.learning_rate = lr;
    cfg.weight_decay = 0.0;
    cfg
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let ds = two_rings(0);
    let cfg = small_config(1, 0.0);
    let r = train_loop(&ds, &cfg).unwrap();
    assert_eq!(r.history.len(), 1);
    let init = GenModel::init(&cfg.model, 3, 2).unwrap();
    for ((na, a), (nb, b)) in r.best.tensors().iter().zip(init.tensors()) {
        assert_eq!(na, &nb);
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn separable_toy_is_learned() {
    let ds = two_rings(1);
    let r = train_loop(&ds, &small_config(200, 0.01)).unwrap();
    assert!(r.history.iter().any(|m| m.train_acc == 1.0), "final {:?}", r.history.last());
}

#[test]
fn same_seed_same_history() {
    let ds = two_rings(2);
    let mut cfg = small_config(15, 0.01);
    cfg.model.dropout = 0.2;
    let a = train_loop(&ds, &cfg).unwrap();
    let b = train_loop(&ds, &cfg).unwrap();
    assert_eq!(metrics_csv(&a.history), metrics_csv(&b.history));
    let bits = |m: &GenModel| m.tensors().iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
    assert_eq!(bits(&a.best), bits(&b.best));
}

#[test]
fn small_steps_lower_the_loss() {
    for ds in [two_rings(3), long_range_forest(30, 3, 3).unwrap()] {
        let r = train_loop(&ds, &small_config(10, 1e-3)).unwrap();
        let rises = r.history.windows(2).filter(|w| w[1].train_loss > w[0].train_loss).count();
        assert!(rises <= 2, "{rises} increases");
    }
}

#[test]
fn best_epoch_has_the_highest_validation_accuracy() {
    let ds = two_rings(4);
    let r = train_loop(&ds, &small_config(30, 0.01)).unwrap();
    let best = r.best_metrics().val_acc;
    assert!(r.history.iter().all(|m| m.val_acc <= best));
    assert!(r.history[..r.best_epoch - 1].iter().all(|m| m.val_acc < best));
}

#[test]
fn adam_examples() {
    let mut p = Tensor::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
    let before = p.clone();
    let mut st = AdamState::new([&p]);
    adam_step(&mut [&mut p], &[Tensor::zeros(1, 3)], &mut st, 0.1, 0.0);
    assert_eq!(p, before);

    let mut p = Tensor::zeros(1, 3);
    let mut st = AdamState::new([&p]);
    let g = Tensor::from_rows(&[vec![0.3, -4.0, 1e-3]]).unwrap();
    adam_step(&mut [&mut p], &[g.clone()], &mut st, 0.01, 0.0);
    for (w, gr) in p.data().iter().zip(g.data()) {
        let want = -0.01 * gr / (gr.abs() + 1e-8);
        assert!((w - want).abs() < 1e-12, "{w} vs {want}");
    }
}

#[test]
fn checkpoints_round_trip_and_reject_garbage() {
    let cfg = small_config(1, 0.01);
    let model = GenModel::init(&cfg.model, 3, 2).unwrap();
    let bytes = encode(&model.tensors());
    assert_eq!(&bytes[..4], b"GENC");
    let back = decode(&bytes).unwrap();
    let mut reseeded = cfg.model.clone();
    reseeded.seed = 99;
    let mut other = GenModel::init(&reseeded, 3, 2).unwrap();
    assert_ne!(other.tensors(), model.tensors());
    other.load_tensors(&back).unwrap();
    assert_eq!(other.tensors(), model.tensors());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.genc");
    write_checkpoint(&path, &model.tensors()).unwrap();
    assert_eq!(read_checkpoint(&path).unwrap(), back);
    assert!(decode(b"NOPE").is_err());
    assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    std::fs::write(&path, b"GENC\x09").unwrap();
    assert!(matches!(read_checkpoint(&path), Err(GenError::File { .. })));
}

#[test]
fn config_files_round_trip() {
    let mut cfg = small_config(7, 0.02);
    cfg.model.eliminate = false;
    cfg.model.d_key = Some(4);
    let back = TrainConfig::parse(&cfg.to_text()).unwrap();
    assert_eq!(back, cfg);
    let e = TrainConfig::parse("layers = 2\nbogus = 1\n").unwrap_err();
    assert!(matches!(e, GenError::InputLine { line: 2, .. }), "{e}");
    assert!(TrainConfig::parse("eliminate = maybe\n").is_err());
    let mut bad = cfg.clone();
    bad.epochs = 0;
    assert!(bad.validate().is_err());
}
