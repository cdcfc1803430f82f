//! One GEN layer.
//!
//! Per round `k = 1..K` the layer computes edge attention `α⁽ᵏ⁾` from
//! `h⁽ᵏ⁻¹⁾`, propagates with redundancy elimination, and keeps `h⁽ᵏ⁾`. The
//! `K` round outputs are norm-compressed into a per-node hop matrix, a
//! query from the layer input attends over those rows, and the result
//! passes through a residual projection and a two-layer ReLU FFN:
//!
//! ```text
//! Z = FFN(z W_res + β V),   β_i = softmax(q_i K_iᵀ / √d),   V_i = H_i W_V
//! ```

mod ops;

use std::collections::VecDeque;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use ops::{edge_scores, segment_softmax};

use crate::config::ModelConfig;
use crate::elimination::{self, PropagationTrace};
use crate::error::{GenError, Result};
use crate::graph::{gcn_coefficients, CsrGraph, EdgeCoefficients};
use crate::tensor::{concat_cols, Tape, Tensor, Var};

/// Shape and behaviour of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerConfig {
    pub width: usize,
    pub k: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub heads: usize,
    pub d_key: usize,
    pub slope: f64,
    pub ffn_expansion: usize,
    pub dropout: f64,
    pub eliminate: bool,
    pub edge_attn: bool,
    pub decompose_inputs: bool,
    pub static_alpha: bool,
}

impl LayerConfig {
    /// Defaults for width `f` and `k` rounds.
    pub fn new(width: usize, k: usize) -> Self {
        let m = ModelConfig {
            hidden_dim: width,
            k,
            ..ModelConfig::default()
        };
        Self::from_model(&m)
    }

    pub fn from_model(m: &ModelConfig) -> Self {
        Self {
            width: m.hidden_dim,
            k: m.k,
            gamma: m.gamma,
            epsilon: m.epsilon,
            heads: m.heads,
            d_key: m.d_key(),
            slope: m.leaky_slope,
            ffn_expansion: m.ffn_expansion,
            dropout: m.dropout,
            eliminate: m.eliminate,
            edge_attn: m.edge_attn,
            decompose_inputs: m.decompose_inputs,
            static_alpha: m.static_alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) || !(self.epsilon > 0.0) {
            return Err(GenError::Input(format!(
                "need 0 ≤ gamma ≤ 1 and epsilon > 0, got {} and {}",
                self.gamma, self.epsilon
            )));
        }
        if self.k == 0 || self.width == 0 || self.heads == 0 || self.d_key % self.heads != 0 {
            return Err(GenError::Input(format!(
                "invalid layer shape: width {} K {} heads {} d_key {}",
                self.width, self.k, self.heads, self.d_key
            )));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.d_key / self.heads
    }
}

/// Learnable tensors of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GenLayerParams {
    pub cfg: LayerConfig,
    /// One `1 × 2F` edge-attention vector per round.
    pub a: Vec<Tensor>,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_res: Tensor,
    /// Head output projection, present only with more than one head.
    pub w_o: Option<Tensor>,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl GenLayerParams {
    /// Glorot-uniform matrices, zero attention vectors and biases.
    pub fn init(cfg: LayerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (f, d, h) = (cfg.width, cfg.d_key, cfg.ffn_expansion * cfg.width);
        Ok(Self {
            a: vec![Tensor::zeros(1, 2 * f); cfg.k],
            w_q: Tensor::glorot(f, d, rng),
            w_k: Tensor::glorot(f, d, rng),
            w_v: Tensor::glorot(f, f, rng),
            w_res: Tensor::glorot(f, f, rng),
            w_o: (cfg.heads > 1).then(|| Tensor::glorot(cfg.heads * f, f, rng)),
            w1: Tensor::glorot(f, h, rng),
            b1: Tensor::zeros(1, h),
            w2: Tensor::glorot(h, f, rng),
            b2: Tensor::zeros(1, f),
            cfg,
        })
    }

    /// Named tensors in a fixed order shared with [`LayerVars::list`].
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .a
            .iter()
            .enumerate()
            .map(|(k, t)| (format!("a{}", k + 1), t))
            .collect();
        out.push(("w_q".into(), &self.w_q));
        out.push(("w_k".into(), &self.w_k));
        out.push(("w_v".into(), &self.w_v));
        out.push(("w_res".into(), &self.w_res));
        if let Some(w) = &self.w_o {
            out.push(("w_o".into(), w));
        }
        out.push(("ffn.w1".into(), &self.w1));
        out.push(("ffn.b1".into(), &self.b1));
        out.push(("ffn.w2".into(), &self.w2));
        out.push(("ffn.b2".into(), &self.b2));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = self
            .a
            .iter_mut()
            .enumerate()
            .map(|(k, t)| (format!("a{}", k + 1), t))
            .collect();
        out.push(("w_q".into(), &mut self.w_q));
        out.push(("w_k".into(), &mut self.w_k));
        out.push(("w_v".into(), &mut self.w_v));
        out.push(("w_res".into(), &mut self.w_res));
        if let Some(w) = &mut self.w_o {
            out.push(("w_o".into(), w));
        }
        out.push(("ffn.w1".into(), &mut self.w1));
        out.push(("ffn.b1".into(), &mut self.b1));
        out.push(("ffn.w2".into(), &mut self.w2));
        out.push(("ffn.b2".into(), &mut self.b2));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every tensor on `tape`, as parameters when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> LayerVars<'t> {
        let put = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        LayerVars {
            a: self.a.iter().map(put).collect(),
            w_q: put(&self.w_q),
            w_k: put(&self.w_k),
            w_v: put(&self.w_v),
            w_res: put(&self.w_res),
            w_o: self.w_o.as_ref().map(put),
            w1: put(&self.w1),
            b1: put(&self.b1),
            w2: put(&self.w2),
            b2: put(&self.b2),
        }
    }
}

/// [`GenLayerParams`] recorded on a tape.
#[derive(Debug, Clone)]
pub struct LayerVars<'t> {
    pub a: Vec<Var<'t>>,
    pub w_q: Var<'t>,
    pub w_k: Var<'t>,
    pub w_v: Var<'t>,
    pub w_res: Var<'t>,
    pub w_o: Option<Var<'t>>,
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
}

impl<'t> LayerVars<'t> {
    /// Same order as [`GenLayerParams::tensors`].
    pub fn list(&self) -> Vec<Var<'t>> {
        let mut out = self.a.clone();
        out.extend([self.w_q, self.w_k, self.w_v, self.w_res]);
        out.extend(self.w_o);
        out.extend([self.w1, self.b1, self.w2, self.b2]);
        out
    }
}

/// Everything a layer forward produces, still on the tape.
#[derive(Debug, Clone)]
pub struct LayerOutput<'t> {
    pub z: Var<'t>,
    /// `β V` (after the head projection when there are several heads).
    pub attended: Var<'t>,
    /// Per head, `N × K` hop weights.
    pub beta: Vec<Var<'t>>,
    /// Per round, `slots × 1` propagation coefficients.
    pub alphas: Vec<Var<'t>>,
    /// Per round, the raw propagated features `h⁽ᵏ⁾` (index 0 is the input).
    pub h: Vec<Var<'t>>,
    /// Per round, the compressed hop rows fed to attention.
    pub hops: Vec<Var<'t>>,
    pub edge_visits: u64,
}

fn dropout<'t>(x: Var<'t>, rate: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Var<'t>> {
    let Some(rng) = rng.as_deref_mut() else {
        return Ok(x);
    };
    if rate <= 0.0 {
        return Ok(x);
    }
    let (r, c) = x.shape();
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..r * c)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    x.mul(x.tape().constant(Tensor::new(r, c, mask)?))
}

fn gcn_column(g: &CsrGraph) -> Result<Tensor> {
    let c = gcn_coefficients(g)?;
    Ok(Tensor::column(c.edge))
}

/// `h / (‖h‖ + ε)^γ` row by row, on the tape.
pub fn norm_compress_var<'t>(h: Var<'t>, gamma: f64, epsilon: f64) -> Result<Var<'t>> {
    if gamma == 0.0 {
        return Ok(h);
    }
    h.mul_col(h.row_norm().add_scalar(epsilon).powf(-gamma))
}

/// Edge attention for one round: segment softmax of
/// `LeakyReLU(a·[h_i ‖ h_j])` over each node's slots.
pub fn edge_attention_var<'t>(graph: &Rc<CsrGraph>, h: Var<'t>, a: Var<'t>, slope: f64) -> Result<Var<'t>> {
    let scores = edge_scores(graph, h, a)?.leaky_relu(slope);
    segment_softmax(graph, scores)
}

/// Hop-wise attention on the tape. Returns per-head `β` and the attended
/// output.
pub fn hop_attention_var<'t>(
    z: Var<'t>,
    hops: &[Var<'t>],
    p: &LayerVars<'t>,
    cfg: &LayerConfig,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<(Vec<Var<'t>>, Var<'t>)> {
    let q = z.matmul(p.w_q)?;
    let keys = hops.iter().map(|h| h.matmul(p.w_k)).collect::<Result<Vec<_>>>()?;
    let values = hops.iter().map(|h| h.matmul(p.w_v)).collect::<Result<Vec<_>>>()?;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut betas = Vec::with_capacity(cfg.heads);
    let mut outs = Vec::with_capacity(cfg.heads);
    for head in 0..cfg.heads {
        let cut = |v: Var<'t>| {
            if cfg.heads == 1 {
                Ok(v)
            } else {
                v.slice_cols(head * dh, (head + 1) * dh)
            }
        };
        let qh = cut(q)?;
        let logits = keys
            .iter()
            .map(|&kk| Ok(qh.row_dot(cut(kk)?)?.scale(scale)))
            .collect::<Result<Vec<_>>>()?;
        let beta = concat_cols(&logits)?.row_softmax();
        betas.push(beta);
        let used = dropout(beta, cfg.dropout, rng)?;
        let mut out: Option<Var<'t>> = None;
        for (k, &v) in values.iter().enumerate() {
            let term = v.mul_col(used.slice_cols(k, k + 1)?)?;
            out = Some(match out {
                Some(acc) => acc.add(term)?,
                None => term,
            });
        }
        outs.push(out.expect("at least one hop"));
    }
    let attended = match p.w_o {
        Some(w_o) => concat_cols(&outs)?.matmul(w_o)?,
        None => outs[0],
    };
    Ok((betas, attended))
}

/// Full layer forward on the tape. Passing `rng` enables dropout.
pub fn forward<'t>(
    graph: &Rc<CsrGraph>,
    z: Var<'t>,
    p: &LayerVars<'t>,
    cfg: &LayerConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<LayerOutput<'t>> {
    let g = &**graph;
    if !g.has_self_loops() {
        return Err(GenError::Contract("GEN layers run on graphs with self-loops".into()));
    }
    if z.shape() != (g.num_nodes(), cfg.width) {
        return Err(GenError::Dimension {
            op: "layer input",
            left: z.shape(),
            right: (g.num_nodes(), cfg.width),
        });
    }
    if p.a.len() != cfg.k {
        return Err(GenError::Contract(format!("{} attention vectors for K={}", p.a.len(), cfg.k)));
    }
    let tape = z.tape();
    let fixed = if cfg.edge_attn {
        None
    } else {
        Some(tape.constant(gcn_column(g)?))
    };
    let self_slots: Rc<Vec<usize>> = Rc::new(
        (0..g.num_nodes())
            .map(|i| g.self_slot(i).expect("self-loops checked"))
            .collect(),
    );
    let mut h = vec![z];
    let mut alphas: Vec<Var<'t>> = Vec::with_capacity(cfg.k);
    let mut f_prev: Option<Var<'t>> = None;
    let mut visits = 0;
    for k in 1..=cfg.k {
        let alpha = match fixed {
            Some(c) => c,
            None if cfg.static_alpha && k > 1 => alphas[0],
            None => edge_attention_var(graph, h[k - 1], p.a[k - 1], cfg.slope)?,
        };
        let carriers = if cfg.eliminate {
            if k == 1 {
                // f⁽⁰⁾ = 0: the carrier sweep writes zeros to every arc.
                visits += g.num_arcs() as u64;
                None
            } else {
                let f_old = match f_prev {
                    Some(f) => f,
                    None => tape.constant(Tensor::zeros(g.num_arcs(), cfg.width)),
                };
                let (f, v) = elimination::ops::carriers(graph, h[k - 2], alpha, alphas[k - 2], f_old)?;
                visits += v;
                f_prev = Some(f);
                Some(f)
            }
        } else {
            None
        };
        let (next, v) = elimination::ops::aggregate(graph, h[k - 1], alpha, carriers)?;
        visits += v;
        alphas.push(alpha);
        h.push(next);
    }
    let hops = (1..=cfg.k)
        .map(|k| {
            let row = if cfg.decompose_inputs {
                let self_w = alphas[k - 1].gather_rows(Rc::clone(&self_slots))?;
                h[k].sub(h[k - 1].mul_col(self_w)?)?
            } else {
                h[k]
            };
            norm_compress_var(row, cfg.gamma, cfg.epsilon)
        })
        .collect::<Result<Vec<_>>>()?;
    let (beta, attended) = hop_attention_var(z, &hops, p, cfg, &mut rng)?;
    let u = z.matmul(p.w_res)?.add(attended)?;
    let hidden = u.matmul(p.w1)?.add_row(p.b1)?.relu();
    let hidden = dropout(hidden, cfg.dropout, &mut rng)?;
    let out = hidden.matmul(p.w2)?.add_row(p.b2)?;
    Ok(LayerOutput {
        z: out,
        attended,
        beta,
        alphas,
        h,
        hops,
        edge_visits: visits,
    })
}

/// Plain-tensor results of one layer evaluation.
#[derive(Debug, Clone)]
pub struct LayerEval {
    pub z: Tensor,
    pub attended: Tensor,
    pub beta: Vec<Tensor>,
    pub alphas: Vec<EdgeCoefficients>,
    pub hops: HopTensor,
    pub edge_visits: u64,
}

/// Inference-mode forward returning every intermediate of interest.
pub fn evaluate(g: &CsrGraph, z: &Tensor, params: &GenLayerParams) -> Result<LayerEval> {
    let graph = Rc::new(g.clone());
    let tape = Tape::new();
    let vars = params.bind(&tape, false);
    let out = forward(&graph, tape.constant(z.clone()), &vars, &params.cfg, None)?;
    let alphas = out
        .alphas
        .iter()
        .map(|a| EdgeCoefficients::from_slots(g, a.value().data().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerEval {
        z: (*out.z.value()).clone(),
        attended: (*out.attended.value()).clone(),
        beta: out.beta.iter().map(|b| (*b.value()).clone()).collect(),
        alphas,
        hops: HopTensor {
            rows: out.hops.iter().map(|h| (*h.value()).clone()).collect(),
        },
        edge_visits: out.edge_visits,
    })
}

/// Layer output with explicit elimination and edge-attention switches;
/// other behaviour follows `params.cfg`.
pub fn layer_forward(
    g: &CsrGraph,
    z: &Tensor,
    params: &GenLayerParams,
    eliminate: bool,
    edge_attn: bool,
) -> Result<Tensor> {
    let mut p = params.clone();
    p.cfg.eliminate = eliminate;
    p.cfg.edge_attn = edge_attn;
    Ok(evaluate(g, z, &p)?.z)
}

/// One round of edge attention as coefficients. `a_k` is `1 × 2F`.
pub fn edge_attention(g: &CsrGraph, h: &Tensor, a_k: &Tensor, slope: f64) -> Result<EdgeCoefficients> {
    let graph = Rc::new(g.clone());
    let tape = Tape::new();
    let alpha = edge_attention_var(&graph, tape.constant(h.clone()), tape.constant(a_k.clone()), slope)?;
    EdgeCoefficients::from_slots(g, alpha.value().data().to_vec())
}

/// `h_i / (‖h_i‖₂ + ε)^γ` for every row.
pub fn norm_compress(h: &Tensor, gamma: f64, epsilon: f64) -> Tensor {
    let mut out = h.clone();
    if gamma == 0.0 {
        return out;
    }
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = (norm + epsilon).powf(-gamma);
        row.iter_mut().for_each(|v| *v *= s);
    }
    out
}

/// Per-node stack of the `K` compressed hop representations, stored as
/// `K` matrices of shape `N × F`.
#[derive(Debug, Clone, PartialEq)]
pub struct HopTensor {
    pub rows: Vec<Tensor>,
}

impl HopTensor {
    pub fn k(&self) -> usize {
        self.rows.len()
    }

    /// The `K × F` hop matrix of node `i`.
    pub fn node(&self, i: usize) -> Tensor {
        let f = self.rows.first().map_or(0, |t| t.cols());
        let data = self.rows.iter().flat_map(|t| t.row(i).iter().copied()).collect();
        Tensor::new(self.rows.len(), f, data).expect("consistent hop widths")
    }
}

/// Compressed hop rows from a propagation trace: raw `h⁽ᵏ⁾`, or the
/// per-hop increments when `cfg.decompose_inputs` is set.
pub fn hop_stack(trace: &PropagationTrace, cfg: &LayerConfig) -> HopTensor {
    let raw: Vec<Tensor> = if cfg.decompose_inputs {
        elimination::hop_decompose(trace)
    } else {
        trace.h[1..].to_vec()
    };
    HopTensor {
        rows: raw.iter().map(|h| norm_compress(h, cfg.gamma, cfg.epsilon)).collect(),
    }
}

/// Hop-wise attention on plain tensors: per-head `β` (`N × K`) and the
/// attended output.
pub fn hop_attention(z: &Tensor, hops: &HopTensor, params: &GenLayerParams) -> Result<(Vec<Tensor>, Tensor)> {
    let tape = Tape::new();
    let vars = params.bind(&tape, false);
    let rows: Vec<Var<'_>> = hops.rows.iter().map(|h| tape.constant(h.clone())).collect();
    let (beta, out) = hop_attention_var(tape.constant(z.clone()), &rows, &vars, &params.cfg, &mut None)?;
    Ok((beta.iter().map(|b| (*b.value()).clone()).collect(), (*out.value()).clone()))
}

/// Effective coefficient of `h_n⁽⁰⁾` in node `i`'s attended output on a
/// forest: `β_{i,d} · Π α` along the unique path, where `d = d(i, n)` and
/// the edge at position `q` counted from `n` uses round `q`'s coefficients.
pub fn composite_kernel(
    g: &CsrGraph,
    coefs: &[EdgeCoefficients],
    beta: &Tensor,
    i: usize,
    n: usize,
) -> Result<f64> {
    if !g.is_acyclic() {
        return Err(GenError::Contract("composite kernel needs an acyclic graph".into()));
    }
    let k_max = coefs.len().min(beta.cols());
    let out_of_field = GenError::OutOfField { origin: i, node: n, k_max };
    if i >= g.num_nodes() || n >= g.num_nodes() || n == i {
        return Err(out_of_field);
    }
    let mut parent = vec![usize::MAX; g.num_nodes()];
    let mut depth = vec![usize::MAX; g.num_nodes()];
    depth[i] = 0;
    let mut queue = VecDeque::from([i]);
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                parent[v] = u;
                queue.push_back(v);
            }
        }
    }
    let d = depth[n];
    if d == usize::MAX || d > k_max {
        return Err(out_of_field);
    }
    let mut w = beta.get(i, d - 1);
    let (mut v, mut q) = (n, 1);
    while v != i {
        let u = parent[v];
        w *= coefs[q - 1].weight(g, u, v).expect("path edges exist");
        v = u;
        q += 1;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn chain(n: usize) -> CsrGraph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        CsrGraph::build(&edges, n, true).unwrap()
    }

    #[test]
    fn attention_uniform_cases() {
        let g = chain(4);
        let h = Tensor::filled(4, 3, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::uniform(1, 6, 1.0, &mut rng);
        let c = edge_attention(&g, &h, &a, 0.2).unwrap();
        assert!((c.weight(&g, 1, 0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((c.self_weight[0] - 0.5).abs() < 1e-15);
        let h = Tensor::uniform(4, 3, 1.0, &mut rng);
        let c = edge_attention(&g, &h, &Tensor::zeros(1, 6), 0.2).unwrap();
        assert!((c.weight(&g, 2, 3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let lone = CsrGraph::build(&[], 1, true).unwrap();
        let c = edge_attention(&lone, &Tensor::filled(1, 3, 2.0), &a, 0.2).unwrap();
        assert_eq!(c.self_weight, vec![1.0]);
    }

    #[test]
    fn compress_examples() {
        let h = Tensor::new(2, 2, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        assert_eq!(norm_compress(&h, 0.0, 1e-6), h);
        let c = norm_compress(&h, 0.5, 1e-6);
        let s = (5.0f64 + 1e-6).sqrt();
        assert!((c.get(0, 0) - 3.0 / s).abs() < 1e-15 && (c.get(0, 1) - 4.0 / s).abs() < 1e-15);
        assert!((c.get(0, 0) - 1.34164).abs() < 1e-5 && (c.get(0, 1) - 1.78885).abs() < 1e-5);
        assert_eq!(c.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn kernel_examples() {
        let g = chain(3);
        let unit = vec![EdgeCoefficients::uniform(&g, 1.0); 2];
        let beta = Tensor::new(3, 2, vec![0.3, 0.7, 0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!((composite_kernel(&g, &unit, &beta, 0, 2).unwrap() - 0.7).abs() < 1e-15);
        assert!(matches!(
            composite_kernel(&g, &unit, &beta, 1, 1),
            Err(GenError::OutOfField { .. })
        ));
        let pair = CsrGraph::build(&[(0, 1)], 2, true).unwrap();
        let mut c = EdgeCoefficients::uniform(&pair, 0.5);
        c.edge[pair.slot(0, 1).unwrap()] = 0.25;
        let beta = Tensor::new(2, 1, vec![0.4, 1.0]).unwrap();
        assert!((composite_kernel(&pair, &[c], &beta, 0, 1).unwrap() - 0.1).abs() < 1e-15);
        let far = chain(4);
        let one = vec![EdgeCoefficients::uniform(&far, 1.0)];
        let beta = Tensor::filled(4, 1, 1.0);
        assert!(matches!(composite_kernel(&far, &one, &beta, 0, 2), Err(GenError::OutOfField { .. })));
    }

    #[test]
    fn param_count_grows_only_with_attention_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = 8;
        let counts: Vec<usize> = (1..=4)
            .map(|k| GenLayerParams::init(LayerConfig::new(f, k), &mut rng).unwrap().num_params())
            .collect();
        for w in counts.windows(2) {
            assert_eq!(w[1] - w[0], 2 * f);
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let g = chain(5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GenLayerParams::init(LayerConfig::new(4, 3), &mut rng).unwrap();
        let z = layer_forward(&g, &Tensor::zeros(5, 4), &p, true, true).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn beta_on_simplex_and_single_hop() {
        let g = chain(5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = GenLayerParams::init(LayerConfig::new(4, 3), &mut rng).unwrap();
        let x = Tensor::uniform(5, 4, 1.0, &mut rng);
        let ev = evaluate(&g, &x, &p).unwrap();
        for i in 0..5 {
            let row = ev.beta[0].row(i);
            assert!(row.iter().all(|&b| b >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let p1 = GenLayerParams::init(LayerConfig::new(4, 1), &mut rng).unwrap();
        let ev = evaluate(&g, &x, &p1).unwrap();
        assert!(ev.beta[0].data().iter().all(|&b| b == 1.0));
        let want = ev.hops.rows[0].matmul(&p1.w_v);
        assert!(ev.attended.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn missing_self_loops_rejected() {
        let g = CsrGraph::build(&[(0, 1)], 2, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = GenLayerParams::init(LayerConfig::new(2, 2), &mut rng).unwrap();
        assert!(matches!(
            layer_forward(&g, &Tensor::zeros(2, 2), &p, true, true),
            Err(GenError::Contract(_))
        ));
    }
}
