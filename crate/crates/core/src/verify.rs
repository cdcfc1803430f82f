//! Engine-versus-oracle checks behind the `verify` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::{make_synthetic, Synthetic};
use crate::elimination::{
    gcn_forward_eliminated, hop_decompose, propagate_eliminated, propagate_self_loop_eliminated,
};
use crate::error::{GenError, Result};
use crate::graph::{bfs_distances, CsrGraph, EdgeCoefficients};
use crate::layer::{self, composite_kernel, GenLayerParams, LayerConfig};
use crate::oracle;
use crate::tensor::{Tape, Tensor};
use crate::train::{cross_entropy, GenModel};

pub const SUITES: [&str; 7] = ["tree-exactness", "fig1", "walks", "gcn", "kernel", "parity", "gradients"];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub suite: &'static str,
    pub property: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckRow {
    fn new(suite: &'static str, property: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            suite,
            property: property.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn table(rows: &[CheckRow]) -> String {
    let mut s = String::from("suite,property,result,detail\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.suite,
            r.property,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        ));
    }
    s
}

/// Runs one suite by name, or every suite for `"all"`.
pub fn run_suite(name: &str, seed: u64) -> Result<Vec<CheckRow>> {
    match name {
        "all" => {
            let mut rows = Vec::new();
            for s in SUITES {
                rows.extend(run_suite(s, seed)?);
            }
            Ok(rows)
        }
        "tree-exactness" => tree_exactness(50, seed),
        "fig1" => fig1(),
        "walks" => walks(seed),
        "gcn" => gcn(seed),
        "kernel" => kernel(20, seed),
        "parity" => parity(seed),
        "gradients" => gradients(seed),
        other => Err(GenError::Input(format!(
            "unknown suite {other:?}; expected one of all, {}",
            SUITES.join(", ")
        ))),
    }
}

pub fn random_tree(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Result<CsrGraph> {
    let n = rng.gen_range(min..=max);
    make_synthetic(Synthetic::RandomTree { n }, rng.gen())
}

/// Independent nonnegative coefficients per slot.
pub fn random_coefficients(g: &CsrGraph, rounds: usize, rng: &mut ChaCha8Rng) -> Result<Vec<EdgeCoefficients>> {
    (0..rounds)
        .map(|_| {
            let edge = (0..g.num_slots()).map(|_| rng.gen_range(0.0..1.0)).collect();
            EdgeCoefficients::from_slots(g, edge)
        })
        .collect()
}

fn fmt_err(e: f64) -> String {
    format!("max_err={e:.3e}")
}

fn tree_exactness(trees: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trees {
        let g = random_tree(&mut rng, 8, 64)?.with_self_loops();
        let k = rng.gen_range(1..=6);
        let coefs = random_coefficients(&g, k, &mut rng)?;
        let x = Tensor::identity(g.num_nodes());
        let trace = propagate_eliminated(&g, &x, &coefs, k, true)?;
        let inc = hop_decompose(&trace);
        for i in 0..g.num_nodes() {
            for hop in 1..=k {
                let want = oracle::exact_khop_aggregate(&g, &x, &coefs, i, hop)?;
                for (a, b) in inc[hop - 1].row(i).iter().zip(&want) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    Ok(vec![CheckRow::new(
        "tree-exactness",
        format!("{trees} random trees: increments equal k-hop oracle"),
        worst <= 1e-9,
        fmt_err(worst),
    )])
}

fn fig1() -> Result<Vec<CheckRow>> {
    let g = make_synthetic(Synthetic::Chain { n: 5 }, 0)?.with_self_loops();
    let x = Tensor::identity(5);
    let coefs = vec![EdgeCoefficients::uniform(&g, 1.0); 5];
    let inc = hop_decompose(&propagate_eliminated(&g, &x, &coefs, 5, true)?);
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        for hop in 1..=5 {
            let want = oracle::exact_khop_aggregate(&g, &x, &coefs, i, hop)?;
            for (a, b) in inc[hop - 1].row(i).iter().zip(&want) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let node2 = [
        vec![0.0, 1.0, 0.0, 1.0, 0.0],
        vec![1.0, 0.0, 0.0, 0.0, 1.0],
        vec![0.0; 5],
    ];
    let exact = (0..3).all(|h| inc[h].row(2) == node2[h].as_slice());
    Ok(vec![
        CheckRow::new("fig1", "chain(5) increments equal BFS shells", worst == 0.0, fmt_err(worst)),
        CheckRow::new("fig1", "node 2 hops 1-3 are e1+e3 / e0+e4 / 0", exact, ""),
    ])
}

fn walks(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3a1c);
    let (mut plain, mut nb): (f64, f64) = (0.0, 0.0);
    for t in 0..10 {
        let n = rng.gen_range(4..=8);
        let base = make_synthetic(Synthetic::ErdosRenyi { n, p: 0.45 }, rng.gen())?;
        let g = if t % 2 == 0 { base.with_self_loops() } else { base };
        let k = 4;
        let coefs = random_coefficients(&g, k, &mut rng)?;
        let x = Tensor::uniform(n, 2, 1.0, &mut rng);
        let p = propagate_eliminated(&g, &x, &coefs, k, false)?;
        let e = propagate_eliminated(&g, &x, &coefs, k, true)?;
        for i in 0..n {
            let w = oracle::enumerate_walks(&g, i, k)?;
            for r in 1..=k {
                let want = w.predict(&g, &coefs, &x, r);
                let want_nb = w.predict_non_backtracking(&g, &coefs, &x, r);
                for c in 0..2 {
                    plain = plain.max(oracle::relative_error(p.h[r].get(i, c), want[c]));
                    nb = nb.max(oracle::relative_error(e.h[r].get(i, c), want_nb[c]));
                }
            }
        }
    }
    Ok(vec![
        CheckRow::new("walks", "plain propagation equals walk enumeration", plain <= 1e-9, fmt_err(plain)),
        CheckRow::new(
            "walks",
            "eliminated propagation equals non-backtracking walks",
            nb <= 1e-9,
            fmt_err(nb),
        ),
    ])
}

/// Sign-coherent weights: every column single-signed.
pub fn coherent_weights(dims: &[usize], rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    dims.windows(2)
        .map(|d| {
            let mut w = Tensor::zeros(d[0], d[1]);
            for c in 0..d[1] {
                let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                for r in 0..d[0] {
                    w.set(r, c, s * rng.gen_range(0.05..1.0));
                }
            }
            w
        })
        .collect()
}

fn gcn(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let g = random_tree(&mut rng, 3, 16)?.with_self_loops();
        let x = Tensor::uniform(g.num_nodes(), 3, 1.0, &mut rng).map(f64::abs);
        let w = coherent_weights(&[3, 4, 4, 2], &mut rng);
        let got = gcn_forward_eliminated(&g, &x, &w, true, true)?;
        let want = oracle::pure_hop_gcn(&g, &x, &w)?;
        worst = worst.max(got[3].max_abs_diff(&want[3]));
    }
    let tri = CsrGraph::build(&[(0, 1), (1, 2), (2, 0)], 3, true)?;
    let x = Tensor::new(3, 1, vec![1.0, 2.0, 3.0])?;
    let w = vec![Tensor::new(1, 1, vec![1.0])?; 3];
    let got = gcn_forward_eliminated(&tri, &x, &w, true, true)?;
    let want = oracle::pure_hop_gcn(&tri, &x, &w)?;
    let gap = got[3].max_abs_diff(&want[3]);
    Ok(vec![
        CheckRow::new("gcn", "20 trees: eliminated GCN equals pure-hop form", worst <= 1e-8, fmt_err(worst)),
        CheckRow::new("gcn", "triangle: elimination departs from pure-hop form", gap >= 1e-3, format!("gap={gap:.3e}")),
    ])
}

/// Layer set up so the attended output is linear in one-hot inputs.
pub fn linearised_layer(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<GenLayerParams> {
    let mut cfg = LayerConfig::new(n, k);
    cfg.gamma = 0.0;
    cfg.decompose_inputs = true;
    cfg.d_key = 4;
    let mut p = GenLayerParams::init(cfg, rng)?;
    p.w_v = Tensor::identity(n);
    for a in &mut p.a {
        *a = Tensor::uniform(1, 2 * n, 1.0, rng);
    }
    Ok(p)
}

fn kernel(trees: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4b);
    let k = 4;
    let mut worst: f64 = 0.0;
    let mut decay_ok = true;
    for _ in 0..trees {
        let g = random_tree(&mut rng, 5, 24)?.with_self_loops();
        let n = g.num_nodes();
        let p = linearised_layer(n, k, &mut rng)?;
        let ev = layer::evaluate(&g, &Tensor::identity(n), &p)?;
        let beta = &ev.beta[0];
        for i in 0..n {
            let dist = bfs_distances(&g, i);
            for m in 0..n {
                let probe = ev.attended.get(i, m);
                let want = match dist[m] {
                    Some(d) if d >= 1 && d <= k => {
                        let kv = composite_kernel(&g, &ev.alphas, beta, i, m)?;
                        decay_ok &= kv <= beta.get(i, d - 1) + 1e-15;
                        kv
                    }
                    _ => 0.0,
                };
                worst = worst.max((probe - want).abs());
            }
        }
    }
    Ok(vec![
        CheckRow::new("kernel", format!("{trees} trees: probed coefficients equal composite kernel"), worst <= 1e-9, fmt_err(worst)),
        CheckRow::new("kernel", "kernel never exceeds its hop weight", decay_ok, ""),
    ])
}

fn parity(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9a);
    let mut ok = true;
    for _ in 0..10 {
        let g = random_tree(&mut rng, 6, 30)?;
        let n = g.num_nodes();
        let coefs = random_coefficients(&g, 5, &mut rng)?;
        let trace = propagate_self_loop_eliminated(&g, &Tensor::identity(n), &coefs, 5)?;
        for i in 0..n {
            let dist = bfs_distances(&g, i);
            for k in 1..=5 {
                for m in 0..n {
                    if trace.h[k].get(i, m) != 0.0 {
                        ok &= matches!(dist[m], Some(d) if d <= k && d % 2 == k % 2);
                    }
                }
            }
        }
    }
    Ok(vec![CheckRow::new("parity", "round-k support has hop parity of k", ok, "")])
}

/// Largest relative error between tape gradients and central differences
/// for a small two-layer model. Test points whose (leaky) ReLU inputs sit
/// within `KINK_CLEARANCE` of zero are redrawn: a finite-difference step
/// straddling a kink measures the wrong one-sided slope.
pub fn model_gradient_error(seed: u64) -> Result<f64> {
    const KINK_CLEARANCE: f64 = 1e-4;
    const ATTEMPTS: u64 = 32;
    for attempt in 0..ATTEMPTS {
        let sub = seed.wrapping_mul(ATTEMPTS).wrapping_add(attempt);
        if let Some(err) = gradient_error_at(sub, KINK_CLEARANCE)? {
            return Ok(err);
        }
    }
    Err(GenError::Numeric(format!(
        "no test point clear of activation kinks after {ATTEMPTS} draws"
    )))
}

fn gradient_error_at(seed: u64, clearance: f64) -> Result<Option<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = make_synthetic(Synthetic::ErdosRenyi { n: 9, p: 0.35 }, seed)?.with_self_loops();
    let n = g.num_nodes();
    let x = Tensor::uniform(n, 3, 1.0, &mut rng);
    let labels: Vec<i64> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let mask: Vec<usize> = (0..n).collect();
    let cfg = ModelConfig {
        layers: 2,
        hidden_dim: 4,
        k: 3,
        d_key: Some(4),
        seed,
        ..ModelConfig::default()
    };
    let mut model = GenModel::init(&cfg, 3, 3)?;
    for p in &mut model.layers {
        for a in &mut p.a {
            *a = Tensor::uniform(1, a.cols(), 0.5, &mut rng);
        }
        p.b1 = Tensor::uniform(1, p.b1.cols(), 0.1, &mut rng);
    }
    let graph = std::rc::Rc::new(g);
    let loss_of = |m: &GenModel| -> Result<(f64, Vec<Tensor>, f64)> {
        let tape = Tape::new();
        let fwd = m.forward(&tape, &graph, &x, true, None)?;
        let loss = cross_entropy(fwd.logits, &labels, &mask)?;
        let grads = tape.backward(loss)?;
        let grads = fwd.params.iter().map(|&p| grads.get(p)).collect();
        Ok((loss.value().item(), grads, tape.kink_margin()))
    };
    let (_, analytic, margin) = loss_of(&model)?;
    if margin < clearance {
        return Ok(None);
    }
    let flat: Vec<f64> = model.tensors().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
    let analytic: Vec<f64> = analytic.iter().flat_map(|t| t.data().to_vec()).collect();
    let mut probe = model.clone();
    let numeric = oracle::finite_diff_grad(
        |theta| {
            let mut it = theta.iter();
            for (_, t) in probe.tensors_mut() {
                for v in t.data_mut() {
                    *v = *it.next().expect("parameter count");
                }
            }
            loss_of(&probe).map_or(f64::NAN, |(l, _, _)| l)
        },
        &flat,
        1e-5,
    )?;
    Ok(Some(oracle::max_relative_error(&analytic, &numeric)))
}

fn gradients(seed: u64) -> Result<Vec<CheckRow>> {
    let mut worst: f64 = 0.0;
    for s in 0..5 {
        worst = worst.max(model_gradient_error(seed.wrapping_add(s))?);
    }
    Ok(vec![CheckRow::new(
        "gradients",
        "2-layer model: tape gradients equal finite differences over 5 seeds",
        worst < 1e-4,
        format!("max_rel_err={worst:.3e}"),
    )])
}
