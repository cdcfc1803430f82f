//! Masked softmax cross-entropy.

use std::rc::Rc;

use crate::error::{GenError, Result};
use crate::tensor::{softmax_into, CustomOp, Tensor, Var};

struct CrossEntropyOp {
    labels: Rc<Vec<(usize, usize)>>,
}

impl CustomOp for CrossEntropyOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let logits = inputs[0];
        let scale = grad.item() / self.labels.len() as f64;
        let mut g = Tensor::zeros(logits.rows(), logits.cols());
        for &(node, label) in self.labels.iter() {
            let row = g.row_mut(node);
            softmax_into(logits.row(node), row);
            row[label] -= 1.0;
            row.iter_mut().for_each(|v| *v *= scale);
        }
        vec![Some(g)]
    }
}

/// Mean over `mask` of `−log softmax(logits_i)[label_i]`.
pub fn cross_entropy<'t>(logits: Var<'t>, labels: &[i64], mask: &[usize]) -> Result<Var<'t>> {
    if mask.is_empty() {
        return Err(GenError::Contract("cross-entropy over an empty mask".into()));
    }
    let lv = logits.value();
    let pairs = mask
        .iter()
        .map(|&i| match labels.get(i) {
            Some(&l) if l >= 0 && (l as usize) < lv.cols() && i < lv.rows() => Ok((i, l as usize)),
            _ => Err(GenError::Contract(format!("node {i} has no valid label"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for &(i, l) in &pairs {
        let row = lv.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[l];
    }
    let loss = Tensor::scalar(total / pairs.len() as f64);
    let op = CrossEntropyOp {
        labels: Rc::new(pairs),
    };
    Ok(logits.tape().custom(op, &[logits], loss))
}

/// Fraction of `mask` whose arg-max logit equals the label.
pub fn accuracy(logits: &Tensor, labels: &[i64], mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let hits = mask
        .iter()
        .filter(|&&i| {
            let row = logits.row(i);
            let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            labels[i] == best as i64
        })
        .count();
    hits as f64 / mask.len() as f64
}
