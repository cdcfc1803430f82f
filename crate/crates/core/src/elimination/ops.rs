//! Differentiable propagation sweeps.
//!
//! Coefficients enter as `slots × 1` columns aligned with the graph's CSR
//! entries; a node's self weight is the value at its self-loop slot (zero
//! when it has none).

use std::rc::Rc;

use super::kernels;
use crate::error::{GenError, Result};
use crate::graph::CsrGraph;
use crate::tensor::{CustomOp, Tensor, Var};

fn self_weights(g: &CsrGraph, coef: &Tensor) -> Vec<f64> {
    (0..g.num_nodes())
        .map(|i| g.self_slot(i).map_or(0.0, |s| coef.data()[s]))
        .collect()
}

fn check_coef(g: &CsrGraph, coef: &Var<'_>) -> Result<()> {
    if coef.shape() != (g.num_slots(), 1) {
        return Err(GenError::Dimension {
            op: "edge coefficients",
            left: coef.shape(),
            right: (g.num_slots(), 1),
        });
    }
    Ok(())
}

struct AggregateOp {
    graph: Rc<CsrGraph>,
}

impl CustomOp for AggregateOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let g = &*self.graph;
        let (h, coef) = (inputs[0], inputs[1]);
        let width = h.cols();
        let mut gh = Tensor::zeros(h.rows(), width);
        let mut gc = Tensor::zeros(coef.rows(), 1);
        let (off, tgt) = (g.offsets(), g.targets());
        for i in 0..g.num_nodes() {
            let gi = grad.row(i);
            for s in off[i]..off[i + 1] {
                let j = tgt[s];
                let c = coef.data()[s];
                gc.data_mut()[s] = gi.iter().zip(h.row(j)).map(|(a, b)| a * b).sum();
                for (o, &x) in gh.row_mut(j).iter_mut().zip(gi) {
                    *o += c * x;
                }
            }
        }
        let mut out = vec![Some(gh), Some(gc)];
        if inputs.len() == 3 {
            let mut gf = Tensor::zeros(g.num_arcs(), width);
            let arc_off = g.arc_offsets();
            for i in 0..g.num_nodes() {
                for a in arc_off[i]..arc_off[i + 1] {
                    for (o, &x) in gf.row_mut(a).iter_mut().zip(grad.row(i)) {
                        *o = -x;
                    }
                }
            }
            out.push(Some(gf));
        }
        out
    }
}

/// `h_out_i = Σ_{slots (i,j)} coef·h_j − Σ_{arcs (i,·)} carriers`. Returns the
/// output and the number of arcs visited.
pub fn aggregate<'t>(
    graph: &Rc<CsrGraph>,
    h: Var<'t>,
    coef: Var<'t>,
    carriers: Option<Var<'t>>,
) -> Result<(Var<'t>, u64)> {
    check_coef(graph, &coef)?;
    let hv = h.value();
    let cv = coef.value();
    let fv = carriers.map(|f| f.value());
    if let Some(f) = &fv {
        if f.shape() != (graph.num_arcs(), hv.cols()) {
            return Err(GenError::Dimension {
                op: "aggregate carriers",
                left: f.shape(),
                right: (graph.num_arcs(), hv.cols()),
            });
        }
    }
    let (out, visits) = kernels::aggregate(
        graph,
        &hv,
        &self_weights(graph, &cv),
        cv.data(),
        fv.as_ref().map(|f| f.data()),
    );
    let mut inputs = vec![h, coef];
    inputs.extend(carriers);
    let op = AggregateOp {
        graph: Rc::clone(graph),
    };
    Ok((h.tape().custom(op, &inputs, out), visits))
}

struct CarrierOp {
    graph: Rc<CsrGraph>,
}

impl CustomOp for CarrierOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let g = &*self.graph;
        let (h, ck, ckm1, f_old) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let width = h.cols();
        let mut gh = Tensor::zeros(h.rows(), width);
        let mut gck = Tensor::zeros(ck.rows(), 1);
        let mut gckm1 = Tensor::zeros(ckm1.rows(), 1);
        let mut gf = Tensor::zeros(f_old.rows(), width);
        let self_km1 = self_weights(g, ckm1);
        let (arc_off, arc_slot, arc_tgt, arc_rev) =
            (g.arc_offsets(), g.arc_slots(), g.arc_targets(), g.arc_reverses());
        let mut inner = vec![0.0; width];
        let mut d_inner = vec![0.0; width];
        for i in 0..g.num_nodes() {
            for a in arc_off[i]..arc_off[i + 1] {
                let j = arc_tgt[a];
                let s = arc_slot[a];
                let t = g.reverse_slot(s);
                let ra = arc_rev[a];
                let (sj, back, c) = (self_km1[j], ckm1.data()[t], ck.data()[s]);
                let ga = grad.row(a);
                for (q, x) in inner.iter_mut().enumerate() {
                    *x = sj * h.get(j, q) + back * h.get(i, q) - f_old.get(ra, q);
                }
                gck.data_mut()[s] += ga.iter().zip(&inner).map(|(x, y)| x * y).sum::<f64>();
                for (d, &x) in d_inner.iter_mut().zip(ga) {
                    *d = c * x;
                }
                if let Some(js) = g.self_slot(j) {
                    gckm1.data_mut()[js] += d_inner.iter().zip(h.row(j)).map(|(x, y)| x * y).sum::<f64>();
                }
                gckm1.data_mut()[t] += d_inner.iter().zip(h.row(i)).map(|(x, y)| x * y).sum::<f64>();
                for (o, &d) in gh.row_mut(j).iter_mut().zip(&d_inner) {
                    *o += sj * d;
                }
                for (o, &d) in gh.row_mut(i).iter_mut().zip(&d_inner) {
                    *o += back * d;
                }
                for (o, &d) in gf.row_mut(ra).iter_mut().zip(&d_inner) {
                    *o -= d;
                }
            }
        }
        vec![Some(gh), Some(gck), Some(gckm1), Some(gf)]
    }
}

/// Carriers `f⁽ᵏ⁻¹⁾` (`arcs × F`) from `h⁽ᵏ⁻²⁾`, `α⁽ᵏ⁾`, `α⁽ᵏ⁻¹⁾` and `f⁽ᵏ⁻²⁾`.
pub fn carriers<'t>(
    graph: &Rc<CsrGraph>,
    h_km2: Var<'t>,
    coef_k: Var<'t>,
    coef_km1: Var<'t>,
    f_km2: Var<'t>,
) -> Result<(Var<'t>, u64)> {
    check_coef(graph, &coef_k)?;
    check_coef(graph, &coef_km1)?;
    let hv = h_km2.value();
    let fv = f_km2.value();
    if fv.shape() != (graph.num_arcs(), hv.cols()) {
        return Err(GenError::Dimension {
            op: "carriers",
            left: fv.shape(),
            right: (graph.num_arcs(), hv.cols()),
        });
    }
    let (ck, ckm1) = (coef_k.value(), coef_km1.value());
    let mut out = vec![0.0; graph.num_arcs() * hv.cols()];
    let visits = kernels::carriers(
        graph,
        &hv,
        ck.data(),
        ckm1.data(),
        &self_weights(graph, &ckm1),
        fv.data(),
        &mut out,
    );
    let out = Tensor::new(graph.num_arcs(), hv.cols(), out)?;
    let op = CarrierOp {
        graph: Rc::clone(graph),
    };
    Ok((h_km2.tape().custom(op, &[h_km2, coef_k, coef_km1, f_km2], out), visits))
}
