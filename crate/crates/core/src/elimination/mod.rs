//! Hop-disentangled propagation.
//!
//! Plain multi-round propagation `h⁽ᵏ⁾ = α_ii h⁽ᵏ⁻¹⁾ + Σ α_ij h_j⁽ᵏ⁻¹⁾`
//! re-aggregates features that earlier rounds already delivered (every
//! walk that steps back along an edge). The elimination recursion keeps a
//! carrier `f_ij` per directed edge holding exactly what node `j` would send
//! back to `i`, and each round subtracts the carriers' sum `r_i`:
//!
//! ```text
//! f⁽ᵏ⁻¹⁾_ij = α⁽ᵏ⁾_ij (α⁽ᵏ⁻¹⁾_jj h_j⁽ᵏ⁻²⁾ + α⁽ᵏ⁻¹⁾_ji h_i⁽ᵏ⁻²⁾ − f⁽ᵏ⁻²⁾_ji),   f⁽⁰⁾ = 0
//! h_i⁽ᵏ⁾    = α⁽ᵏ⁾_ii h_i⁽ᵏ⁻¹⁾ − Σ_j f⁽ᵏ⁻¹⁾_ij + Σ_j α⁽ᵏ⁾_ij h_j⁽ᵏ⁻¹⁾
//! ```
//!
//! What survives is the sum over non-backtracking walks. On a forest that
//! is the sum over shortest paths, so `h⁽ᵏ⁾ − α⁽ᵏ⁾_ii h⁽ᵏ⁻¹⁾` is exactly the
//! k-hop shell weighted by path products. Cycles break this: a walk around
//! a cycle never backtracks yet revisits nodes.

mod kernels;
pub mod ops;

use crate::error::{GenError, Result};
use crate::graph::{gcn_coefficients, CsrGraph, EdgeCoefficients};
use crate::tensor::Tensor;

/// Per-arc carriers for two consecutive rounds.
#[derive(Debug, Clone)]
pub struct EliminationState {
    width: usize,
    f_prev: Vec<f64>,
    f_next: Vec<f64>,
    round: usize,
    edge_visits: u64,
}

impl EliminationState {
    pub fn new(g: &CsrGraph, width: usize) -> Self {
        Self {
            width,
            f_prev: vec![0.0; g.num_arcs() * width],
            f_next: vec![0.0; g.num_arcs() * width],
            round: 1,
            edge_visits: 0,
        }
    }

    /// The round the next [`gea_round`] call must be for.
    pub fn round(&self) -> usize {
        self.round
    }

    /// Carriers written by the most recent round, `arcs × width` row-major.
    pub fn carriers(&self) -> &[f64] {
        &self.f_prev
    }

    /// Carrier of arc `a` from the most recent round.
    pub fn carrier(&self, a: usize) -> &[f64] {
        &self.f_prev[a * self.width..(a + 1) * self.width]
    }

    /// Carrier of the reverse of arc `a`, i.e. `f_ji` for `a = (i,j)`.
    pub fn reversed(&self, g: &CsrGraph, a: usize) -> &[f64] {
        self.carrier(g.arc_reverses()[a])
    }

    /// Floats held by the state.
    pub fn footprint(&self) -> usize {
        self.f_prev.len() + self.f_next.len()
    }

    pub fn edge_visits(&self) -> u64 {
        self.edge_visits
    }
}

/// Redundancy for round `k = state.round()`. Round 1 has none and only
/// initialises `f⁽⁰⁾ = 0`; from round 2 on `h_prev2 = h⁽ᵏ⁻²⁾`,
/// `coef_k = α⁽ᵏ⁾` and `coef_km1 = α⁽ᵏ⁻¹⁾` are required.
pub fn gea_round(
    g: &CsrGraph,
    h_prev2: &Tensor,
    coef_k: &EdgeCoefficients,
    coef_km1: Option<&EdgeCoefficients>,
    state: &mut EliminationState,
) -> Result<Tensor> {
    if h_prev2.shape() != (g.num_nodes(), state.width) {
        return Err(GenError::Dimension {
            op: "gea_round",
            left: h_prev2.shape(),
            right: (g.num_nodes(), state.width),
        });
    }
    if state.f_prev.len() != g.num_arcs() * state.width {
        return Err(GenError::Contract("elimination state belongs to another graph".into()));
    }
    for c in std::iter::once(coef_k).chain(coef_km1) {
        if c.edge.len() != g.num_slots() || c.self_weight.len() != g.num_nodes() {
            return Err(GenError::Contract("coefficients do not match graph".into()));
        }
    }
    if state.round == 1 {
        state.f_prev.iter_mut().for_each(|x| *x = 0.0);
        state.edge_visits += g.num_arcs() as u64;
        state.round = 2;
        return Ok(Tensor::zeros(g.num_nodes(), state.width));
    }
    let coef_km1 = coef_km1.ok_or_else(|| {
        GenError::Contract(format!("round {} needs the previous round's coefficients", state.round))
    })?;
    state.edge_visits += kernels::carriers(
        g,
        h_prev2,
        &coef_k.edge,
        &coef_km1.edge,
        &coef_km1.self_weight,
        &state.f_prev,
        &mut state.f_next,
    );
    std::mem::swap(&mut state.f_prev, &mut state.f_next);
    state.round += 1;
    Ok(kernels::redundancy(g, &state.f_prev, state.width))
}

/// Per-round node features of one propagation.
#[derive(Debug, Clone)]
pub struct PropagationTrace {
    /// `h[0]` is the input, `h[k]` the output of round `k`.
    pub h: Vec<Tensor>,
    /// Coefficients used per round (`coefs[k-1]` for round `k`).
    pub coefs: Vec<EdgeCoefficients>,
    pub edge_visits: u64,
}

impl PropagationTrace {
    pub fn rounds(&self) -> usize {
        self.h.len() - 1
    }
}

fn check_rounds(g: &CsrGraph, h0: &Tensor, coefs: &[EdgeCoefficients], rounds: usize) -> Result<()> {
    if rounds == 0 {
        return Err(GenError::Contract("propagation needs at least one round".into()));
    }
    if coefs.len() < rounds {
        return Err(GenError::Contract(format!(
            "{} coefficient sets for {rounds} rounds",
            coefs.len()
        )));
    }
    if h0.rows() != g.num_nodes() {
        return Err(GenError::Dimension {
            op: "propagate",
            left: h0.shape(),
            right: (g.num_nodes(), h0.cols()),
        });
    }
    for c in &coefs[..rounds] {
        if c.edge.len() != g.num_slots() || c.self_weight.len() != g.num_nodes() {
            return Err(GenError::Contract("coefficients do not match graph".into()));
        }
    }
    Ok(())
}

/// Runs `rounds` propagation rounds, subtracting redundancy when
/// `eliminate` is set.
pub fn propagate_eliminated(
    g: &CsrGraph,
    h0: &Tensor,
    coefs: &[EdgeCoefficients],
    rounds: usize,
    eliminate: bool,
) -> Result<PropagationTrace> {
    check_rounds(g, h0, coefs, rounds)?;
    let width = h0.cols();
    let mut h = vec![h0.clone()];
    let mut state = EliminationState::new(g, width);
    let mut visits = 0;
    for k in 1..=rounds {
        let coef = &coefs[k - 1];
        let carriers = if eliminate {
            let h_prev2 = if k >= 2 { &h[k - 2] } else { &h[0] };
            let prev = (k >= 2).then(|| &coefs[k - 2]);
            gea_round(g, h_prev2, coef, prev, &mut state)?;
            Some(state.carriers())
        } else {
            None
        };
        let (next, v) = kernels::aggregate(g, &h[k - 1], &coef.self_weight, &coef.edge, carriers);
        visits += v;
        h.push(next);
    }
    Ok(PropagationTrace {
        h,
        coefs: coefs[..rounds].to_vec(),
        edge_visits: visits + state.edge_visits(),
    })
}

/// Per-hop increments `h⁽ᵏ⁾ − α⁽ᵏ⁾_ii h⁽ᵏ⁻¹⁾` for `k = 1..=K`. With unit self
/// weights this is the plain difference of successive rounds.
pub fn hop_decompose(trace: &PropagationTrace) -> Vec<Tensor> {
    (1..trace.h.len())
        .map(|k| {
            let (cur, prev) = (&trace.h[k], &trace.h[k - 1]);
            let self_w = &trace.coefs[k - 1].self_weight;
            let mut inc = cur.clone();
            for i in 0..inc.rows() {
                let w = self_w[i];
                for (o, x) in inc.row_mut(i).iter_mut().zip(prev.row(i)) {
                    *o -= w * x;
                }
            }
            inc
        })
        .collect()
}

/// Plain propagation on a loop-free graph: odd rounds reach only odd hop
/// distances and even rounds only even ones (on forests). Self weights in
/// `coefs` are ignored.
pub fn propagate_self_loop_eliminated(
    g: &CsrGraph,
    h0: &Tensor,
    coefs: &[EdgeCoefficients],
    rounds: usize,
) -> Result<PropagationTrace> {
    if g.has_self_loops() {
        return Err(GenError::Contract("self-loop elimination needs a graph without self-loops".into()));
    }
    check_rounds(g, h0, coefs, rounds)?;
    let zeros = vec![0.0; g.num_nodes()];
    let mut h = vec![h0.clone()];
    let mut visits = 0;
    for k in 1..=rounds {
        let (next, v) = kernels::aggregate(g, &h[k - 1], &zeros, &coefs[k - 1].edge, None);
        visits += v;
        h.push(next);
    }
    let coefs = coefs[..rounds]
        .iter()
        .map(|c| EdgeCoefficients {
            edge: c.edge.clone(),
            self_weight: zeros.clone(),
        })
        .collect();
    Ok(PropagationTrace {
        h,
        coefs,
        edge_visits: visits,
    })
}

/// Checks the sign conditions under which ReLU splits over sums: all input
/// features share one sign and each weight column shares one sign.
pub fn check_sign_coherence(x: &Tensor, weights: &[Tensor]) -> Result<()> {
    let pos = x.data().iter().any(|&v| v > 0.0);
    let neg = x.data().iter().any(|&v| v < 0.0);
    if pos && neg {
        return Err(GenError::Precondition("input features have mixed signs".into()));
    }
    let mut bad = Vec::new();
    for (l, w) in weights.iter().enumerate() {
        for c in 0..w.cols() {
            let col = (0..w.rows()).map(|r| w.get(r, c));
            let (p, n) = col.fold((false, false), |(p, n), v| (p || v > 0.0, n || v < 0.0));
            if p && n {
                bad.push(format!("layer {} column {c}", l + 1));
            }
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(GenError::Precondition(format!(
            "weight columns with mixed signs: {}",
            bad.join(", ")
        )))
    }
}

fn relu_in_place(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Full nonlinear GCN, `h⁽ˡ⁾ = ReLU(aggregate(h⁽ˡ⁻¹⁾) · W⁽ˡ⁾)`, with the
/// carriers pushed through each layer's transform when `eliminate` is set:
///
/// ```text
/// f⁽ˡ⁾_ij = C_ij ReLU((C_jj h_j⁽ˡ⁻¹⁾ + C_ji h_i⁽ˡ⁻¹⁾ − f⁽ˡ⁻¹⁾_ji) W⁽ˡ⁾)
/// ```
///
/// Returns `[X, h⁽¹⁾, …, h⁽ᴸ⁾]`. With `verify` the ReLU sign conditions are
/// checked first. `g` should carry self-loops.
pub fn gcn_forward_eliminated(
    g: &CsrGraph,
    x: &Tensor,
    weights: &[Tensor],
    eliminate: bool,
    verify: bool,
) -> Result<Vec<Tensor>> {
    if verify {
        check_sign_coherence(x, weights)?;
    }
    let coef = gcn_coefficients(g)?;
    let ones = vec![1.0; g.num_slots()];
    let mut hs = vec![x.clone()];
    let mut carriers: Vec<f64> = vec![0.0; g.num_arcs() * x.cols()];
    for (l, w) in weights.iter().enumerate() {
        let h = &hs[l];
        if h.cols() != w.rows() {
            return Err(GenError::Dimension {
                op: "gcn layer",
                left: h.shape(),
                right: w.shape(),
            });
        }
        let (agg, _) = kernels::aggregate(g, h, &coef.self_weight, &coef.edge, eliminate.then_some(&carriers[..]));
        let mut next = agg.matmul(w);
        relu_in_place(&mut next);
        if eliminate && l + 1 < weights.len() {
            // inner_a = C_jj h_j + C_ji h_i − f_ji, then C_ij ReLU(inner_a W)
            let mut inner = vec![0.0; g.num_arcs() * h.cols()];
            kernels::carriers(g, h, &ones, &coef.edge, &coef.self_weight, &carriers, &mut inner);
            let inner = Tensor::new(g.num_arcs(), h.cols(), inner)?;
            let mut t = inner.matmul(w);
            relu_in_place(&mut t);
            for (a, &s) in g.arc_slots().iter().enumerate() {
                let c = coef.edge[s];
                t.row_mut(a).iter_mut().for_each(|v| *v *= c);
            }
            carriers = t.into_data();
        }
        hs.push(next);
    }
    Ok(hs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize, loops: bool) -> CsrGraph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        CsrGraph::build(&edges, n, loops).unwrap()
    }

    fn unit_coefs(g: &CsrGraph, k: usize) -> Vec<EdgeCoefficients> {
        vec![EdgeCoefficients::uniform(g, 1.0); k]
    }

    fn onehot(n: usize) -> Tensor {
        Tensor::identity(n)
    }

    #[test]
    fn round_one_has_no_redundancy() {
        let g = chain(4, true);
        let mut st = EliminationState::new(&g, 4);
        let c = EdgeCoefficients::uniform(&g, 0.7);
        let r = gea_round(&g, &onehot(4), &c, None, &mut st).unwrap();
        assert_eq!(r, Tensor::zeros(4, 4));
        assert_eq!(st.round(), 2);
        assert_eq!(st.footprint(), 2 * g.num_arcs() * 4);
    }

    #[test]
    fn round_two_on_three_chain() {
        let g = chain(3, true);
        let c = EdgeCoefficients::uniform(&g, 1.0);
        let x = onehot(3);
        let mut st = EliminationState::new(&g, 3);
        gea_round(&g, &x, &c, None, &mut st).unwrap();
        let r = gea_round(&g, &x, &c, Some(&c), &mut st).unwrap();
        // e0 + e1 from node 0, e2 + e1 from node 2
        assert_eq!(r.row(1), &[1.0, 2.0, 1.0]);
        let a = g.arc_offsets()[1];
        assert_eq!(st.reversed(&g, a), st.carrier(g.arc_reverses()[a]));
    }

    #[test]
    fn round_two_single_edge_uniform_alpha() {
        let g = CsrGraph::build(&[(0, 1)], 2, true).unwrap();
        let alpha = 0.5;
        let c = EdgeCoefficients::uniform(&g, alpha);
        let x = Tensor::new(2, 2, vec![1.0, 2.0, -3.0, 0.25]).unwrap();
        let mut st = EliminationState::new(&g, 2);
        gea_round(&g, &x, &c, None, &mut st).unwrap();
        let r = gea_round(&g, &x, &c, Some(&c), &mut st).unwrap();
        for f in 0..2 {
            let want = alpha * (alpha * x.get(1, f) + alpha * x.get(0, f));
            assert_eq!(r.get(0, f), want);
        }
    }

    #[test]
    fn round_mismatch_is_contract_error() {
        let g = chain(3, true);
        let c = EdgeCoefficients::uniform(&g, 1.0);
        let mut st = EliminationState::new(&g, 3);
        gea_round(&g, &onehot(3), &c, None, &mut st).unwrap();
        assert!(matches!(
            gea_round(&g, &onehot(3), &c, None, &mut st),
            Err(GenError::Contract(_))
        ));
    }

    #[test]
    fn fig1_chain_increments() {
        let g = chain(5, true);
        let trace = propagate_eliminated(&g, &onehot(5), &unit_coefs(&g, 5), 5, true).unwrap();
        let inc = hop_decompose(&trace);
        assert_eq!(inc[0].row(2), &[0., 1., 0., 1., 0.]);
        assert_eq!(inc[1].row(2), &[1., 0., 0., 0., 1.]);
        assert_eq!(inc[2].row(2), &[0.; 5]);
        let node0: Vec<Vec<f64>> = inc.iter().map(|t| t.row(0).to_vec()).collect();
        assert_eq!(
            node0,
            vec![
                vec![0., 1., 0., 0., 0.],
                vec![0., 0., 1., 0., 0.],
                vec![0., 0., 0., 1., 0.],
                vec![0., 0., 0., 0., 1.],
                vec![0.; 5],
            ]
        );
    }

    #[test]
    fn without_elimination_walks_revisit() {
        let g = chain(5, true);
        let trace = propagate_eliminated(&g, &onehot(5), &unit_coefs(&g, 2), 2, false).unwrap();
        let inc = hop_decompose(&trace);
        assert_ne!(inc[1].row(2), &[1., 0., 0., 0., 1.]);
    }

    #[test]
    fn single_round_ignores_elimination_flag() {
        let g = chain(6, true);
        let x = Tensor::new(6, 2, (0..12).map(|v| f64::from(v) * 0.3 - 1.0).collect()).unwrap();
        let c = vec![EdgeCoefficients::uniform(&g, 0.4)];
        let on = propagate_eliminated(&g, &x, &c, 1, true).unwrap();
        let off = propagate_eliminated(&g, &x, &c, 1, false).unwrap();
        assert_eq!(on.h, off.h);
    }

    #[test]
    fn isolated_node_increments_vanish() {
        let g = CsrGraph::build(&[(0, 1)], 3, true).unwrap();
        let trace = propagate_eliminated(&g, &onehot(3), &unit_coefs(&g, 3), 3, true).unwrap();
        for inc in hop_decompose(&trace) {
            assert_eq!(inc.row(2), &[0.0; 3]);
        }
    }

    #[test]
    fn edge_visits_are_two_sweeps_per_round() {
        let g = chain(7, true);
        let t = propagate_eliminated(&g, &onehot(7), &unit_coefs(&g, 4), 4, true).unwrap();
        assert_eq!(t.edge_visits, 2 * g.num_arcs() as u64 * 4);
        let t = propagate_eliminated(&g, &onehot(7), &unit_coefs(&g, 4), 4, false).unwrap();
        assert_eq!(t.edge_visits, g.num_arcs() as u64 * 4);
    }

    #[test]
    fn self_loop_mode_rejects_loops() {
        let g = chain(3, true);
        assert!(matches!(
            propagate_self_loop_eliminated(&g, &onehot(3), &unit_coefs(&g, 1), 1),
            Err(GenError::Contract(_))
        ));
        let g = chain(3, false);
        let t = propagate_self_loop_eliminated(&g, &onehot(3), &unit_coefs(&g, 1), 1).unwrap();
        assert_eq!(t.h[1].row(1), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn sign_check_names_column() {
        let x = Tensor::filled(2, 2, 1.0);
        let w = Tensor::new(2, 2, vec![1.0, -1.0, 2.0, 1.0]).unwrap();
        let err = check_sign_coherence(&x, &[w]).unwrap_err();
        assert!(err.to_string().contains("layer 1 column 1"), "{err}");
        let mixed = Tensor::new(1, 2, vec![1.0, -1.0]).unwrap();
        assert!(check_sign_coherence(&mixed, &[]).is_err());
    }

    #[test]
    fn single_gcn_layer_is_plain() {
        let g = CsrGraph::build(&[(0, 1), (1, 2), (2, 0)], 3, true).unwrap();
        let x = Tensor::new(3, 2, vec![1.0, 0.5, 0.0, 2.0, 3.0, 1.0]).unwrap();
        let w = Tensor::new(2, 2, vec![0.5, -1.0, 0.25, -0.5]).unwrap();
        let on = gcn_forward_eliminated(&g, &x, &[w.clone()], true, true).unwrap();
        let off = gcn_forward_eliminated(&g, &x, &[w], false, false).unwrap();
        assert_eq!(on, off);
    }
}
