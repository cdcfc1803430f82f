//! Full-batch node classification with stacked GEN layers.

mod adam;
mod checkpoint;
mod loss;

use std::fmt::Write as _;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{decode, encode, read_checkpoint, write_checkpoint};
pub use loss::{accuracy, cross_entropy};

use crate::config::{ModelConfig, TrainConfig};
use crate::data::Dataset;
use crate::error::{GenError, Result};
use crate::graph::CsrGraph;
use crate::layer::{self, GenLayerParams, LayerConfig};
use crate::tensor::{Tape, Tensor, Var};

/// Input projection, `L` GEN layers and a linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct GenModel {
    pub cfg: ModelConfig,
    pub w_in: Tensor,
    pub b_in: Tensor,
    pub layers: Vec<GenLayerParams>,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

/// A forward pass recorded on a tape.
pub struct ModelForward<'t> {
    pub logits: Var<'t>,
    /// Parameter handles in [`GenModel::tensors`] order.
    pub params: Vec<Var<'t>>,
    pub layer_outputs: Vec<layer::LayerOutput<'t>>,
    pub edge_visits: u64,
}

impl GenModel {
    /// Initialises from `cfg.seed`.
    pub fn init(cfg: &ModelConfig, in_dim: usize, classes: usize) -> Result<Self> {
        cfg.validate()?;
        if in_dim == 0 || classes == 0 {
            return Err(GenError::Input("model needs at least one feature and one class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let f = cfg.hidden_dim;
        let w_in = Tensor::glorot(in_dim, f, &mut rng);
        let layers = (0..cfg.layers)
            .map(|_| GenLayerParams::init(LayerConfig::from_model(cfg), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            w_in,
            b_in: Tensor::zeros(1, f),
            layers,
            w_out: Tensor::glorot(f, classes, &mut rng),
            b_out: Tensor::zeros(1, classes),
        })
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("input.w".to_string(), &self.w_in), ("input.b".to_string(), &self.b_in)];
        for (l, p) in self.layers.iter().enumerate() {
            out.extend(p.tensors().into_iter().map(|(n, t)| (format!("layer{l}.{n}"), t)));
        }
        out.push(("head.w".into(), &self.w_out));
        out.push(("head.b".into(), &self.b_out));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("input.w".to_string(), &mut self.w_in),
            ("input.b".to_string(), &mut self.b_in),
        ];
        for (l, p) in self.layers.iter_mut().enumerate() {
            out.extend(p.tensors_mut().into_iter().map(|(n, t)| (format!("layer{l}.{n}"), t)));
        }
        out.push(("head.w".into(), &mut self.w_out));
        out.push(("head.b".into(), &mut self.b_out));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Copies values from named tensors; names and shapes must match exactly.
    pub fn load_tensors(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        let mut slots = self.tensors_mut();
        if slots.len() != named.len() {
            return Err(GenError::Input(format!(
                "checkpoint has {} tensors, model expects {}",
                named.len(),
                slots.len()
            )));
        }
        for ((name, dst), (src_name, src)) in slots.iter_mut().zip(named) {
            if name != src_name || dst.shape() != src.shape() {
                return Err(GenError::Input(format!(
                    "checkpoint tensor {src_name} {:?} does not match model tensor {name} {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            **dst = src.clone();
        }
        Ok(())
    }

    /// Records a forward pass. `graph` must carry self-loops; `rng` enables
    /// dropout.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        graph: &Rc<CsrGraph>,
        x: &Tensor,
        trainable: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ModelForward<'t>> {
        let put = |t: &Tensor| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        let (w_in, b_in) = (put(&self.w_in), put(&self.b_in));
        let mut params = vec![w_in, b_in];
        let mut z = tape.constant(x.clone()).matmul(w_in)?.add_row(b_in)?;
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut visits = 0;
        for p in &self.layers {
            let vars = p.bind(tape, trainable);
            params.extend(vars.list());
            let out = layer::forward(graph, z, &vars, &p.cfg, rng.as_deref_mut())?;
            visits += out.edge_visits;
            z = out.z;
            outputs.push(out);
        }
        let (w_out, b_out) = (put(&self.w_out), put(&self.b_out));
        params.extend([w_out, b_out]);
        let logits = z.matmul(w_out)?.add_row(b_out)?;
        Ok(ModelForward {
            logits,
            params,
            layer_outputs: outputs,
            edge_visits: visits,
        })
    }

    /// Inference logits on a loop-free or looped graph.
    pub fn predict(&self, g: &CsrGraph, x: &Tensor) -> Result<Tensor> {
        let graph = Rc::new(if g.has_self_loops() { g.clone() } else { g.with_self_loops() });
        let tape = Tape::new();
        let out = self.forward(&tape, &graph, x, false, None)?;
        let logits = (*out.logits.value()).clone();
        Ok(logits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,train_loss,train_acc,val_acc,test_acc\n");
    for m in history {
        let _ = writeln!(
            s,
            "{},{:.6},{:.4},{:.4},{:.4}",
            m.epoch, m.train_loss, m.train_acc, m.val_acc, m.test_acc
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Parameters after the epoch with the best validation accuracy
    /// (earliest on ties).
    pub best: GenModel,
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
}

impl TrainResult {
    pub fn best_metrics(&self) -> &EpochMetrics {
        &self.history[self.best_epoch - 1]
    }
}

/// Accuracy of `model` on the three splits.
pub fn evaluate_splits(model: &GenModel, ds: &Dataset) -> Result<(f64, f64, f64)> {
    let logits = model.predict(&ds.graph, &ds.features)?;
    Ok((
        accuracy(&logits, &ds.labels, &ds.train),
        accuracy(&logits, &ds.labels, &ds.val),
        accuracy(&logits, &ds.labels, &ds.test),
    ))
}

/// Trains for `cfg.epochs` full-batch steps, logging through `log`.
pub fn train_loop_with(ds: &Dataset, cfg: &TrainConfig, mut log: impl FnMut(&EpochMetrics)) -> Result<TrainResult> {
    cfg.validate()?;
    ds.validate()?;
    let classes = ds.num_classes();
    let mut model = GenModel::init(&cfg.model, ds.features.cols(), classes)?;
    let graph = Rc::new(ds.graph.with_self_loops());
    let mut state = AdamState::new(model.tensors().into_iter().map(|(_, t)| t));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.model.seed.wrapping_add(1));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    for epoch in 1..=cfg.epochs {
        let tape = Tape::new();
        let rng = (cfg.model.dropout > 0.0).then_some(&mut drop_rng);
        let fwd = model.forward(&tape, &graph, &ds.features, true, rng)?;
        let loss = cross_entropy(fwd.logits, &ds.labels, &ds.train)?;
        let loss_value = loss.value().item();
        if !loss_value.is_finite() {
            return Err(GenError::Diverged { epoch, loss: loss_value });
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = fwd.params.iter().map(|&p| grads.get(p)).collect();
        {
            let mut slots: Vec<&mut Tensor> = model.tensors_mut().into_iter().map(|(_, t)| t).collect();
            adam_step(&mut slots, &g, &mut state, cfg.learning_rate, cfg.weight_decay);
        }
        let (train_acc, val_acc, test_acc) = evaluate_splits(&model, ds)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_value,
            train_acc,
            val_acc,
            test_acc,
        };
        log(&m);
        history.push(m);
        if val_acc > best.2 {
            best = (model.clone(), epoch, val_acc);
        }
    }
    Ok(TrainResult {
        best: best.0,
        best_epoch: best.1,
        history,
    })
}

pub fn train_loop(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    train_loop_with(ds, cfg, |_| {})
}
