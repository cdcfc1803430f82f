//! Tape operations for edge-wise attention.

use std::rc::Rc;

use crate::error::{GenError, Result};
use crate::graph::CsrGraph;
use crate::par;
use crate::tensor::{CustomOp, Tensor, Var};

struct EdgeScoreOp {
    graph: Rc<CsrGraph>,
}

impl CustomOp for EdgeScoreOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let g = &*self.graph;
        let (h, a) = (inputs[0], inputs[1]);
        let f = h.cols();
        let (left, right) = a.data().split_at(f);
        let mut gh = Tensor::zeros(h.rows(), f);
        let mut ga = Tensor::zeros(1, 2 * f);
        let (off, tgt) = (g.offsets(), g.targets());
        for i in 0..g.num_nodes() {
            let mut gs = 0.0;
            for s in off[i]..off[i + 1] {
                let j = tgt[s];
                let d = grad.data()[s];
                gs += d;
                for (o, &r) in gh.row_mut(j).iter_mut().zip(right) {
                    *o += d * r;
                }
                for (o, &x) in ga.data_mut()[f..].iter_mut().zip(h.row(j)) {
                    *o += d * x;
                }
            }
            for (o, &l) in gh.row_mut(i).iter_mut().zip(left) {
                *o += gs * l;
            }
            for (o, &x) in ga.data_mut()[..f].iter_mut().zip(h.row(i)) {
                *o += gs * x;
            }
        }
        vec![Some(gh), Some(ga)]
    }
}

/// Raw edge logits `a·[h_i ‖ h_j]` for every CSR slot, as a `slots × 1`
/// column. `a` is `1 × 2F`.
pub fn edge_scores<'t>(graph: &Rc<CsrGraph>, h: Var<'t>, a: Var<'t>) -> Result<Var<'t>> {
    let hv = h.value();
    let av = a.value();
    let f = hv.cols();
    if av.shape() != (1, 2 * f) {
        return Err(GenError::Dimension {
            op: "edge attention vector",
            left: av.shape(),
            right: (1, 2 * f),
        });
    }
    if hv.rows() != graph.num_nodes() {
        return Err(GenError::Dimension {
            op: "edge attention features",
            left: hv.shape(),
            right: (graph.num_nodes(), f),
        });
    }
    let (left, right) = av.data().split_at(f);
    let dot = |x: &[f64], w: &[f64]| x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    let s: Vec<f64> = (0..hv.rows()).map(|i| dot(hv.row(i), left)).collect();
    let t: Vec<f64> = (0..hv.rows()).map(|i| dot(hv.row(i), right)).collect();
    let mut out = vec![0.0; graph.num_slots()];
    let (off, tgt) = (graph.offsets(), graph.targets());
    for i in 0..graph.num_nodes() {
        for slot in off[i]..off[i + 1] {
            out[slot] = s[i] + t[tgt[slot]];
        }
    }
    let op = EdgeScoreOp {
        graph: Rc::clone(graph),
    };
    Ok(h.tape().custom(op, &[h, a], Tensor::column(out)))
}

struct SegmentSoftmaxOp {
    offsets: Rc<Vec<usize>>,
}

impl CustomOp for SegmentSoftmaxOp {
    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let mut gx = Tensor::zeros(output.rows(), 1);
        let (y, gy, off) = (output.data(), grad.data(), self.offsets.as_slice());
        par::map_segments(gx.data_mut(), off, 1, |i, seg| {
            let r = off[i]..off[i + 1];
            let dot: f64 = y[r.clone()].iter().zip(&gy[r.clone()]).map(|(a, b)| a * b).sum();
            for (o, s) in seg.iter_mut().zip(r) {
                *o = y[s] * (gy[s] - dot);
            }
            0
        });
        vec![Some(gx)]
    }
}

/// Softmax of a `slots × 1` column within each node's CSR row.
pub fn segment_softmax<'t>(graph: &CsrGraph, scores: Var<'t>) -> Result<Var<'t>> {
    let v = scores.value();
    if v.shape() != (graph.num_slots(), 1) {
        return Err(GenError::Dimension {
            op: "segment softmax",
            left: v.shape(),
            right: (graph.num_slots(), 1),
        });
    }
    let offsets = Rc::new(graph.offsets().to_vec());
    let mut out = Tensor::zeros(v.rows(), 1);
    let (x, off) = (v.data(), offsets.as_slice());
    par::map_segments(out.data_mut(), off, 1, |i, seg| {
        crate::tensor::softmax_into(&x[off[i]..off[i + 1]], seg);
        0
    });
    Ok(scores.tape().custom(SegmentSoftmaxOp { offsets }, &[scores], out))
}
