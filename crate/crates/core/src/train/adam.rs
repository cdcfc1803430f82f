//! Adam with decoupled weight decay.

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One update: `p ← p − lr·(m̂/(√v̂ + ε) + wd·p)`.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64, weight_decay: f64) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.m.len(), "optimizer state matches parameters");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        assert_eq!(p.shape(), g.shape(), "gradient shape");
        let iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((w, &gr), (mi, vi)) in iter {
            *mi = b1 * *mi + (1.0 - b1) * gr;
            *vi = b2 * *vi + (1.0 - b2) * gr * gr;
            let step = (*mi / c1) / ((*vi / c2).sqrt() + eps);
            *w -= lr * (step + weight_decay * *w);
        }
    }
}
