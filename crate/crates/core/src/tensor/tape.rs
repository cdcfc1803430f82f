//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in creation
//! order, which is a topological order by construction. [`Tape::backward`]
//! walks the records once in reverse and accumulates adjoints.
//!
//! Operations that are not dense arithmetic (sparse propagation, segment
//! softmax, fused losses) plug in through [`CustomOp`]: the caller computes
//! the forward value and the op supplies the vector-Jacobian product.

use std::cell::RefCell;
use std::rc::Rc;

use super::dense::{softmax_into, Tensor};
use crate::error::{GenError, Result};

/// Backward rule for an operation defined outside this module.
pub trait CustomOp {
    /// Given the input values, the forward output and the adjoint of the
    /// output, returns one adjoint per input (`None` for inputs that are
    /// not differentiable through this op).
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Powf(usize, f64),
    RowSoftmax(usize),
    LeakyRelu(usize, f64),
    Sum(usize),
    Mean(usize),
    RowDot(usize, usize),
    RowNorm(usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    GatherRows(usize, Rc<Vec<usize>>),
    Custom(Box<dyn CustomOp>, Vec<usize>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only operation record. One training step owns one tape.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` did not
    /// influence the loss.
    pub fn get(&self, v: Var<'_>) -> Tensor {
        self.get_id(v.id)
    }

    fn get_id(&self, id: usize) -> Tensor {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[id];
                Tensor::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Differentiable input.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Constant input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Records an externally computed value whose backward rule is `op`.
    pub fn custom<'t>(&'t self, op: impl CustomOp + 'static, inputs: &[Var<'t>], output: Tensor) -> Var<'t> {
        let rg = inputs.iter().any(|v| v.requires_grad());
        let ids = inputs.iter().map(|v| v.id).collect();
        self.push(output, Op::Custom(Box::new(op), ids), rg)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Smallest `|x|` fed to any (leaky) ReLU so far: how far the recorded
    /// computation sits from its nearest non-differentiable point.
    pub fn kink_margin(&self) -> f64 {
        let nodes = self.nodes.borrow();
        nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu(i, slope) if slope != 1.0 => Some(&nodes[i].value),
                _ => None,
            })
            .flat_map(|v| v.data().iter().map(|x| x.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shapes: Vec<_> = nodes.iter().map(|n| n.value.shape()).collect();
        if shapes[loss.id] != (1, 1) {
            return Err(GenError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                shapes[loss.id]
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |i: usize| &*nodes[i].value;
            let wants = |i: usize| nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        acc(&mut grads, *a, g.matmul_t(val(*b)));
                    }
                    if wants(*b) {
                        acc(&mut grads, *b, val(*a).t_matmul(&g));
                    }
                }
                Op::Add(a, b) => {
                    if wants(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if wants(*b) {
                        acc(&mut grads, *b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if wants(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if wants(*b) {
                        acc(&mut grads, *b, g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        acc(&mut grads, *a, g.zip_map(val(*b), |x, y| x * y));
                    }
                    if wants(*b) {
                        acc(&mut grads, *b, g.zip_map(val(*a), |x, y| x * y));
                    }
                }
                Op::AddRow(a, bias) => {
                    if wants(*bias) {
                        let mut gb = Tensor::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for (o, x) in gb.data_mut().iter_mut().zip(g.row(i)) {
                                *o += x;
                            }
                        }
                        acc(&mut grads, *bias, gb);
                    }
                    if wants(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::MulCol(a, s) => {
                    let (av, sv) = (val(*a), val(*s));
                    if wants(*s) {
                        let gs = (0..g.rows())
                            .map(|i| g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum())
                            .collect();
                        acc(&mut grads, *s, Tensor::column(gs));
                    }
                    if wants(*a) {
                        let mut ga = g;
                        for i in 0..ga.rows() {
                            let c = sv.data()[i];
                            ga.row_mut(i).iter_mut().for_each(|x| *x *= c);
                        }
                        acc(&mut grads, *a, ga);
                    }
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.map(|x| x * c)),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Powf(a, p) => {
                    let ga = g.zip_map(val(*a), |gx, x| gx * p * x.powf(p - 1.0));
                    acc(&mut grads, *a, ga);
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (o, (p, q)) in ga.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = p * (q - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let ga = g.zip_map(val(*a), |gx, x| if x > 0.0 { gx } else { gx * slope });
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    acc(&mut grads, *a, Tensor::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = val(*a).shape();
                    let n = (r * c).max(1) as f64;
                    acc(&mut grads, *a, Tensor::filled(r, c, g.item() / n));
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if wants(*a) {
                        let mut ga = bv.clone();
                        for i in 0..ga.rows() {
                            let c = g.data()[i];
                            ga.row_mut(i).iter_mut().for_each(|x| *x *= c);
                        }
                        acc(&mut grads, *a, ga);
                    }
                    if wants(*b) {
                        let mut gb = av.clone();
                        for i in 0..gb.rows() {
                            let c = g.data()[i];
                            gb.row_mut(i).iter_mut().for_each(|x| *x *= c);
                        }
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::RowNorm(a) => {
                    let av = val(*a);
                    let norms = &node.value;
                    let mut ga = av.clone();
                    for i in 0..ga.rows() {
                        let n = norms.data()[i];
                        let c = if n > 0.0 { g.data()[i] / n } else { 0.0 };
                        ga.row_mut(i).iter_mut().for_each(|x| *x *= c);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        if wants(p) {
                            acc(&mut grads, p, slice_cols(&g, start, start + w));
                        }
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = val(*a);
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    let w = g.cols();
                    for i in 0..g.rows() {
                        ga.row_mut(i)[*start..*start + w].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let av = val(*a);
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    for (r, &src) in idx.iter().enumerate() {
                        for (o, x) in ga.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Custom(op, inputs) => {
                    let ins: Vec<&Tensor> = inputs.iter().map(|&i| val(i)).collect();
                    let outs = op.backward(&ins, &node.value, &g);
                    debug_assert_eq!(outs.len(), inputs.len());
                    for (&i, o) in inputs.iter().zip(outs) {
                        if let (true, Some(o)) = (wants(i), o) {
                            debug_assert_eq!(o.shape(), val(i).shape());
                            acc(&mut grads, i, o);
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn slice_cols(t: &Tensor, start: usize, end: usize) -> Tensor {
    let mut out = Tensor::zeros(t.rows(), end - start);
    for i in 0..t.rows() {
        out.row_mut(i).copy_from_slice(&t.row(i)[start..end]);
    }
    out
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn same_shape(self, other: Var<'t>, op: &'static str) -> Result<()> {
        let (l, r) = (self.shape(), other.shape());
        if l != r {
            return Err(GenError::Dimension { op, left: l, right: r });
        }
        Ok(())
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().try_matmul(&other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "add")?;
        let v = self.value().zip_map(&other.value(), |a, b| a + b);
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "sub")?;
        let v = self.value().zip_map(&other.value(), |a, b| a - b);
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "mul")?;
        let v = self.value().zip_map(&other.value(), |a, b| a * b);
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    /// Adds a `1×n` row to every row.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if bias.shape() != (1, c) {
            return Err(GenError::Dimension {
                op: "add_row",
                left: (r, c),
                right: bias.shape(),
            });
        }
        let b = bias.value();
        let mut v = (*self.value()).clone();
        for i in 0..r {
            for (x, y) in v.row_mut(i).iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        Ok(self.binary(bias, v, Op::AddRow(self.id, bias.id)))
    }

    /// Scales row `i` by entry `i` of the `m×1` column `s`.
    pub fn mul_col(self, s: Var<'t>) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if s.shape() != (r, 1) {
            return Err(GenError::Dimension {
                op: "mul_col",
                left: (r, c),
                right: s.shape(),
            });
        }
        let sv = s.value();
        let mut v = (*self.value()).clone();
        for i in 0..r {
            let k = sv.data()[i];
            v.row_mut(i).iter_mut().for_each(|x| *x *= k);
        }
        Ok(self.binary(s, v, Op::MulCol(self.id, s.id)))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x * c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        self.unary(v, Op::AddScalar(self.id))
    }

    /// Elementwise power. Inputs must be positive where `p` is not an integer.
    pub fn powf(self, p: f64) -> Var<'t> {
        let v = self.value().map(|x| x.powf(p));
        self.unary(v, Op::Powf(self.id, p))
    }

    /// Softmax of every row with per-row max subtraction.
    pub fn row_softmax(self) -> Var<'t> {
        let v = row_softmax(&self.value());
        self.unary(v, Op::RowSoftmax(self.id))
    }

    /// `max(x, slope·x)`; the derivative at 0 is taken as `slope`.
    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let v = self.value().map(|x| leaky_relu(x, slope));
        self.unary(v, Op::LeakyRelu(self.id, slope))
    }

    pub fn relu(self) -> Var<'t> {
        self.leaky_relu(0.0)
    }

    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let val = self.value();
        let v = Tensor::scalar(val.sum() / (val.len().max(1) as f64));
        self.unary(v, Op::Mean(self.id))
    }

    /// Per-row dot product, returns `m×1`.
    pub fn row_dot(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "row_dot")?;
        let (a, b) = (self.value(), other.value());
        let v = (0..a.rows())
            .map(|i| a.row(i).iter().zip(b.row(i)).map(|(x, y)| x * y).sum())
            .collect();
        Ok(self.binary(other, Tensor::column(v), Op::RowDot(self.id, other.id)))
    }

    /// Per-row Euclidean norm, returns `m×1`. The subgradient at a zero
    /// row is zero.
    pub fn row_norm(self) -> Var<'t> {
        let a = self.value();
        let v = (0..a.rows())
            .map(|i| a.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        self.unary(Tensor::column(v), Op::RowNorm(self.id))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if start > end || end > c {
            return Err(GenError::Dimension {
                op: "slice_cols",
                left: (r, c),
                right: (start, end),
            });
        }
        let v = slice_cols(&self.value(), start, end);
        Ok(self.unary(v, Op::SliceCols(self.id, start)))
    }

    /// Output row `r` is input row `idx[r]`.
    pub fn gather_rows(self, idx: Rc<Vec<usize>>) -> Result<Var<'t>> {
        let a = self.value();
        if let Some(&bad) = idx.iter().find(|&&i| i >= a.rows()) {
            return Err(GenError::Contract(format!(
                "gather index {bad} out of range for {} rows",
                a.rows()
            )));
        }
        let mut v = Tensor::zeros(idx.len(), a.cols());
        for (r, &src) in idx.iter().enumerate() {
            v.row_mut(r).copy_from_slice(a.row(src));
        }
        Ok(self.unary(v, Op::GatherRows(self.id, idx)))
    }
}

/// Horizontal concatenation of same-height tensors.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| GenError::Contract("concat of zero tensors".into()))?;
    let rows = first.shape().0;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    for v in &values {
        if v.rows() != rows {
            return Err(GenError::Dimension {
                op: "concat_cols",
                left: (rows, first.shape().1),
                right: v.shape(),
            });
        }
    }
    let cols: usize = values.iter().map(|v| v.cols()).sum();
    let mut out = Tensor::zeros(rows, cols);
    for i in 0..rows {
        let mut start = 0;
        for v in &values {
            out.row_mut(i)[start..start + v.cols()].copy_from_slice(v.row(i));
            start += v.cols();
        }
    }
    let rg = parts.iter().any(|p| p.requires_grad());
    let ids = parts.iter().map(|p| p.id).collect();
    Ok(first.tape.push(out, Op::ConcatCols(ids), rg))
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Row-wise softmax of a plain tensor. An empty row stays empty.
pub fn row_softmax(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        softmax_into(x.row(i), out.row_mut(i));
    }
    out
}
