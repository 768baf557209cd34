use super::ops::{self, ConvDims};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv1d {
        input: usize,
        kernel: usize,
        bias: usize,
        dims: ConvDims,
    },
    Relu {
        input: usize,
    },
    LayerNorm {
        input: usize,
        gain: usize,
        shift: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    AvgPool {
        input: usize,
    },
    Dense {
        input: usize,
        weight: usize,
        bias: usize,
    },
    SoftmaxCe {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    ConcatCols {
        inputs: Vec<usize>,
    },
    Sum {
        input: usize,
    },
    Add {
        lhs: usize,
        rhs: usize,
    },
    Scale {
        input: usize,
        factor: f64,
    },
    /// Scalar function of several inputs with precomputed partial derivatives.
    Scalar {
        inputs: Vec<usize>,
        partials: Vec<Tensor>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

/// Linear record of forward operations, replayed backwards once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when `var` did not participate.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    /// Moves the gradient out, leaving nothing behind.
    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::Config(format!("{op}: {detail}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_live(&self) -> Result<()> {
        if self.consumed {
            Err(Error::Usage("tape already consumed by backward".into()))
        } else {
            Ok(())
        }
    }

    /// Records a leaf; gradients are tracked only when `trainable` is set.
    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: trainable,
            trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Valid, stride-1 cross-correlation of `input[N×T×C_in]` with `kernel[K×C_in×C_out]`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        self.check_live()?;
        let (xs, ks, bs) = (
            self.value(input).shape(),
            self.value(kernel).shape(),
            self.value(bias).shape(),
        );
        if xs.len() != 3 || ks.len() != 3 || bs.len() != 1 {
            return Err(shape_err(
                "conv1d",
                format!("expected input N×T×C, kernel K×C_in×C_out, bias C_out; got {xs:?}, {ks:?}, {bs:?}"),
            ));
        }
        if xs[2] != ks[1] || ks[2] != bs[0] {
            return Err(shape_err(
                "conv1d",
                format!("channel mismatch: input {xs:?}, kernel {ks:?}, bias {bs:?}"),
            ));
        }
        if xs[1] < ks[0] {
            return Err(shape_err(
                "conv1d",
                format!("input length {} shorter than kernel {}", xs[1], ks[0]),
            ));
        }
        let dims = ConvDims {
            batch: xs[0],
            t_in: xs[1],
            c_in: xs[2],
            taps: ks[0],
            c_out: ks[2],
        };
        let out = ops::conv1d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            dims,
        );
        let value = Tensor::new(vec![dims.batch, dims.t_out(), dims.c_out], out)?;
        let (i, k, b) = (input.0, kernel.0, bias.0);
        Ok(self.push(
            value,
            Op::Conv1d {
                input: i,
                kernel: k,
                bias: b,
                dims,
            },
            &[i, k, b],
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.check_live()?;
        let x = self.value(input);
        let data = x.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Relu { input: input.0 }, &[input.0]))
    }

    /// Normalizes over the last axis, then applies per-channel gain and shift.
    pub fn layer_norm(&mut self, input: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        self.check_live()?;
        if !(eps > 0.0) {
            return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let xs = self.value(input).shape().to_vec();
        let width = *xs.last().unwrap();
        if self.value(gain).shape() != [width] || self.value(shift).shape() != [width] {
            return Err(shape_err(
                "layer_norm",
                format!(
                    "gain {:?} / shift {:?} do not match channel width {width}",
                    self.value(gain).shape(),
                    self.value(shift).shape()
                ),
            ));
        }
        let (out, xhat, inv_std) = ops::layer_norm_forward(
            self.value(input).data(),
            self.value(gain).data(),
            self.value(shift).data(),
            width,
            eps,
        );
        let value = Tensor::new(xs, out)?;
        let (i, g, s) = (input.0, gain.0, shift.0);
        Ok(self.push(
            value,
            Op::LayerNorm {
                input: i,
                gain: g,
                shift: s,
                xhat,
                inv_std,
            },
            &[i, g, s],
        ))
    }

    /// Mean over the time axis: `N×T×C → N×C`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        self.check_live()?;
        let xs = self.value(input).shape().to_vec();
        if xs.len() != 3 {
            return Err(shape_err("global_avg_pool", format!("expected N×T×C, got {xs:?}")));
        }
        let out = ops::avg_pool_forward(self.value(input).data(), xs[0], xs[1], xs[2]);
        let value = Tensor::new(vec![xs[0], xs[2]], out)?;
        Ok(self.push(value, Op::AvgPool { input: input.0 }, &[input.0]))
    }

    /// Affine map `input[N×d_in] · weight[d_in×d_out] + bias[d_out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        self.check_live()?;
        let (xs, ws, bs) = (
            self.value(input).shape(),
            self.value(weight).shape(),
            self.value(bias).shape(),
        );
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(shape_err(
                "dense",
                format!("input {xs:?}, weight {ws:?}, bias {bs:?} do not agree"),
            ));
        }
        let (rows, d_in, d_out) = (xs[0], ws[0], ws[1]);
        let out = ops::dense_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            d_in,
            d_out,
        );
        let value = Tensor::new(vec![rows, d_out], out)?;
        let (i, w, b) = (input.0, weight.0, bias.0);
        Ok(self.push(
            value,
            Op::Dense {
                input: i,
                weight: w,
                bias: b,
            },
            &[i, w, b],
        ))
    }

    /// Mean cross-entropy of row-wise softmax against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check_live()?;
        let ls = self.value(logits).shape();
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("logits {ls:?} vs {} labels", labels.len()),
            ));
        }
        let classes = ls[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let (loss, probs) = ops::softmax_ce_forward(self.value(logits).data(), labels, classes);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
            &[logits.0],
        ))
    }

    /// Concatenates `N×d_i` matrices along columns in the given order.
    pub fn concat_cols(&mut self, inputs: &[Var]) -> Result<Var> {
        self.check_live()?;
        let first = inputs
            .first()
            .ok_or_else(|| Error::Config("concat_cols needs at least one input".into()))?;
        let rows = self.value(*first).rows();
        for v in inputs {
            let s = self.value(*v).shape();
            if s.len() != 2 || s[0] != rows {
                return Err(shape_err("concat_cols", format!("row mismatch: {s:?} vs {rows} rows")));
            }
        }
        let width: usize = inputs.iter().map(|v| self.value(*v).cols()).sum();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for v in inputs {
                data.extend_from_slice(self.value(*v).row(r));
            }
        }
        let value = Tensor::new(vec![rows, width], data)?;
        let idx: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(value, Op::ConcatCols { inputs: idx.clone() }, &idx))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.check_live()?;
        let value = Tensor::scalar(self.value(input).sum());
        Ok(self.push(value, Op::Sum { input: input.0 }, &[input.0]))
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.check_live()?;
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let mut value = a.clone();
        value.add_assign(b);
        Ok(self.push(
            value,
            Op::Add {
                lhs: lhs.0,
                rhs: rhs.0,
            },
            &[lhs.0, rhs.0],
        ))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        self.check_live()?;
        let value = self.value(input).scaled(factor);
        Ok(self.push(
            value,
            Op::Scale {
                input: input.0,
                factor,
            },
            &[input.0],
        ))
    }

    /// Records a scalar computed outside the tape, given its partial
    /// derivatives with respect to each input.
    pub fn scalar_fn(&mut self, inputs: &[Var], value: f64, partials: Vec<Tensor>) -> Result<Var> {
        self.check_live()?;
        if inputs.len() != partials.len() {
            return Err(Error::Usage(format!(
                "{} inputs but {} partials",
                inputs.len(),
                partials.len()
            )));
        }
        for (v, p) in inputs.iter().zip(&partials) {
            if self.value(*v).shape() != p.shape() {
                return Err(shape_err(
                    "scalar_fn",
                    format!("partial {:?} vs input {:?}", p.shape(), self.value(*v).shape()),
                ));
            }
        }
        let idx: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(
            Tensor::scalar(value),
            Op::Scalar {
                inputs: idx.clone(),
                partials,
            },
            &idx,
        ))
    }

    /// Propagates adjoints from the scalar `loss` back to every trainable leaf.
    ///
    /// The tape is consumed: recorded values are released and further use is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.check_live()?;
        if !self.value(loss).is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let nodes = std::mem::take(&mut self.nodes);
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::filled(&shapes[loss.0], 1.0));
        }

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            propagate(&nodes, node, &g, &mut grads, &shapes);
            // keep the adjoint of interior nodes available for inspection
            grads[idx] = Some(g);
        }

        for (i, node) in nodes.iter().enumerate() {
            if !node.trainable {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn slot<'a>(
    grads: &'a mut [Option<Tensor>],
    nodes: &[Node],
    shapes: &[Vec<usize>],
    idx: usize,
) -> Option<&'a mut [f64]> {
    if !nodes[idx].requires_grad {
        return None;
    }
    Some(
        grads[idx]
            .get_or_insert_with(|| Tensor::zeros(&shapes[idx]))
            .data_mut(),
    )
}

/// Three distinct mutable gradient slots (inputs of an op are distinct nodes).
fn slots3<'a>(
    grads: &'a mut [Option<Tensor>],
    nodes: &[Node],
    shapes: &[Vec<usize>],
    a: usize,
    b: usize,
    c: usize,
) -> (Option<&'a mut [f64]>, Option<&'a mut [f64]>, Option<&'a mut [f64]>) {
    for &i in &[a, b, c] {
        if nodes[i].requires_grad && grads[i].is_none() {
            grads[i] = Some(Tensor::zeros(&shapes[i]));
        }
    }
    assert!(a != b && b != c && a != c, "operands must be distinct nodes");
    let mut ra = None;
    let mut rb = None;
    let mut rc = None;
    for (i, g) in grads.iter_mut().enumerate() {
        if i == a && nodes[a].requires_grad {
            ra = g.as_mut().map(|t| t.data_mut());
        } else if i == b && nodes[b].requires_grad {
            rb = g.as_mut().map(|t| t.data_mut());
        } else if i == c && nodes[c].requires_grad {
            rc = g.as_mut().map(|t| t.data_mut());
        }
    }
    (ra, rb, rc)
}

fn propagate(
    nodes: &[Node],
    node: &Node,
    g: &Tensor,
    grads: &mut [Option<Tensor>],
    shapes: &[Vec<usize>],
) {
    match &node.op {
        Op::Leaf => {}
        Op::Conv1d {
            input,
            kernel,
            bias,
            dims,
        } => {
            let x = nodes[*input].value.data();
            let w = nodes[*kernel].value.data();
            let (dx, dw, db) = slots3(grads, nodes, shapes, *input, *kernel, *bias);
            ops::conv1d_backward(x, w, g.data(), *dims, dx, dw, db);
        }
        Op::Relu { input } => {
            let out = node.value.data();
            if let Some(dx) = slot(grads, nodes, shapes, *input) {
                for ((acc, &gv), &o) in dx.iter_mut().zip(g.data()).zip(out) {
                    if o > 0.0 {
                        *acc += gv;
                    }
                }
            }
        }
        Op::LayerNorm {
            input,
            gain,
            shift,
            xhat,
            inv_std,
        } => {
            let gain_v = nodes[*gain].value.data();
            let width = gain_v.len();
            let (dx, dg, ds) = slots3(grads, nodes, shapes, *input, *gain, *shift);
            ops::layer_norm_backward(g.data(), xhat, inv_std, gain_v, width, dx, dg, ds);
        }
        Op::AvgPool { input } => {
            let s = &shapes[*input];
            let (n, t, c) = (s[0], s[1], s[2]);
            let scale = 1.0 / t as f64;
            if let Some(dx) = slot(grads, nodes, shapes, *input) {
                for b in 0..n {
                    let grow = g.row(b);
                    for step in 0..t {
                        let off = (b * t + step) * c;
                        for (acc, &gv) in dx[off..off + c].iter_mut().zip(grow) {
                            *acc += gv * scale;
                        }
                    }
                }
            }
        }
        Op::Dense {
            input,
            weight,
            bias,
        } => {
            let ws = &shapes[*weight];
            let (d_in, d_out) = (ws[0], ws[1]);
            let x = nodes[*input].value.data();
            let w = nodes[*weight].value.data();
            let (dx, dw, db) = slots3(grads, nodes, shapes, *input, *weight, *bias);
            ops::dense_backward(x, w, g.data(), d_in, d_out, dx, dw, db);
        }
        Op::SoftmaxCe {
            logits,
            labels,
            probs,
        } => {
            let classes = shapes[*logits][1];
            let scale = g.item() / labels.len() as f64;
            if let Some(dl) = slot(grads, nodes, shapes, *logits) {
                for (r, &label) in labels.iter().enumerate() {
                    for c in 0..classes {
                        let target = if c == label { 1.0 } else { 0.0 };
                        dl[r * classes + c] += scale * (probs[r * classes + c] - target);
                    }
                }
            }
        }
        Op::ConcatCols { inputs } => {
            let rows = g.rows();
            let mut col = 0;
            for &i in inputs {
                let w = shapes[i][1];
                if let Some(dx) = slot(grads, nodes, shapes, i) {
                    for r in 0..rows {
                        let grow = &g.row(r)[col..col + w];
                        for (acc, &gv) in dx[r * w..(r + 1) * w].iter_mut().zip(grow) {
                            *acc += gv;
                        }
                    }
                }
                col += w;
            }
        }
        Op::Sum { input } => {
            let gv = g.item();
            if let Some(dx) = slot(grads, nodes, shapes, *input) {
                dx.iter_mut().for_each(|acc| *acc += gv);
            }
        }
        Op::Add { lhs, rhs } => {
            for &i in &[*lhs, *rhs] {
                if let Some(dx) = slot(grads, nodes, shapes, i) {
                    for (acc, &gv) in dx.iter_mut().zip(g.data()) {
                        *acc += gv;
                    }
                }
            }
        }
        Op::Scale { input, factor } => {
            if let Some(dx) = slot(grads, nodes, shapes, *input) {
                for (acc, &gv) in dx.iter_mut().zip(g.data()) {
                    *acc += gv * factor;
                }
            }
        }
        Op::Scalar { inputs, partials } => {
            let gv = g.item();
            for (&i, p) in inputs.iter().zip(partials) {
                if let Some(dx) = slot(grads, nodes, shapes, i) {
                    for (acc, &pv) in dx.iter_mut().zip(p.data()) {
                        *acc += gv * pv;
                    }
                }
            }
        }
    }
}
