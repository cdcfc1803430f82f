//! Sparse sweeps shared by the direct engine and the tape operations.
//! Each returns the number of arcs it visited.

use crate::graph::CsrGraph;
use crate::par;
use crate::tensor::Tensor;

/// `out_i = self_w[i]·h_i + Σ_{a=(i,j)} edge[slot(a)]·h_j − Σ_{a=(i,·)} carriers[a]`.
pub(crate) fn aggregate(
    g: &CsrGraph,
    h: &Tensor,
    self_w: &[f64],
    edge: &[f64],
    carriers: Option<&[f64]>,
) -> (Tensor, u64) {
    let width = h.cols();
    let mut out = Tensor::zeros(g.num_nodes(), width);
    let (arc_off, arc_slot, arc_tgt) = (g.arc_offsets(), g.arc_slots(), g.arc_targets());
    let visits = par::map_rows(out.data_mut(), width, |i, row| {
        let w = self_w[i];
        for (o, x) in row.iter_mut().zip(h.row(i)) {
            *o = w * x;
        }
        for a in arc_off[i]..arc_off[i + 1] {
            let c = edge[arc_slot[a]];
            for (o, x) in row.iter_mut().zip(h.row(arc_tgt[a])) {
                *o += c * x;
            }
        }
        if let Some(f) = carriers {
            for a in arc_off[i]..arc_off[i + 1] {
                for (o, x) in row.iter_mut().zip(&f[a * width..(a + 1) * width]) {
                    *o -= x;
                }
            }
        }
        (arc_off[i + 1] - arc_off[i]) as u64
    });
    (out, visits)
}

/// Carrier update for every arc `a = (i,j)`:
/// `f_new[a] = edge_k[(i,j)] · (self_km1[j]·h_j + edge_km1[(j,i)]·h_i − f_old[(j,i)])`.
pub(crate) fn carriers(
    g: &CsrGraph,
    h_km2: &Tensor,
    edge_k: &[f64],
    edge_km1: &[f64],
    self_km1: &[f64],
    f_old: &[f64],
    f_new: &mut [f64],
) -> u64 {
    let width = h_km2.cols();
    let (arc_off, arc_slot, arc_tgt, arc_rev) =
        (g.arc_offsets(), g.arc_slots(), g.arc_targets(), g.arc_reverses());
    par::map_segments(f_new, arc_off, width, |i, seg| {
        let base = arc_off[i];
        let hi = h_km2.row(i);
        for (local, out) in seg.chunks_mut(width).enumerate() {
            let a = base + local;
            let j = arc_tgt[a];
            let s = arc_slot[a];
            let back = edge_km1[g.reverse_slot(s)];
            let sj = self_km1[j];
            let ck = edge_k[s];
            let fr = &f_old[arc_rev[a] * width..(arc_rev[a] + 1) * width];
            for (((o, &xj), &xi), &r) in out.iter_mut().zip(h_km2.row(j)).zip(hi).zip(fr) {
                *o = ck * (sj * xj + back * xi - r);
            }
        }
        (arc_off[i + 1] - base) as u64
    })
}

/// Per-node sums of arc carriers.
pub(crate) fn redundancy(g: &CsrGraph, carriers: &[f64], width: usize) -> Tensor {
    let mut r = Tensor::zeros(g.num_nodes(), width);
    let arc_off = g.arc_offsets();
    par::map_rows(r.data_mut(), width, |i, row| {
        for a in arc_off[i]..arc_off[i + 1] {
            for (o, x) in row.iter_mut().zip(&carriers[a * width..(a + 1) * width]) {
                *o += x;
            }
        }
        0
    });
    r
}
