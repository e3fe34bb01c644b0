//! Batched forward and reverse passes over a fixed layer stack.
//!
//! A [`Network`] is an ordered list of layers whose parameters live in a
//! [`ParamSet`] under the names each layer carries. The stack always ends in
//! a softmax + cross-entropy head. Convolutions run as im2col plus one matrix
//! product per batch; dense layers are plain matrix products. The reverse
//! pass replays the cached activations and yields exact gradients with
//! respect to every parameter and to the network input.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};
use crate::nn::ops::{softmax_row, LOG_EPS};
use crate::nn::tensor::{GradResult, ParamSet, Tensor};
use crate::Real;

/// One layer of the classifier stack. Parameterized layers name their
/// tensors in the [`ParamSet`].
#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d { kernel: String, bias: String },
    Dense { weight: String, bias: String },
    Relu,
    Flatten,
}

/// An ordered layer stack ending in an implicit softmax + cross-entropy head.
#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Loss reduction over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Mean over samples; gradients are batch-size independent.
    Mean,
    /// Plain sum; per-sample input gradients come out unscaled.
    Sum,
}

/// Cached im2col matrix of one convolution layer.
#[derive(Debug)]
struct ColCache {
    data: Vec<Real>,
    rows: usize,
    cols: usize,
}

/// A completed forward pass: every layer input plus the softmax output.
#[derive(Debug)]
pub struct Trace {
    batch: usize,
    /// `activations[i]` is the input to layer `i`; the last entry holds the
    /// logits feeding the softmax head.
    activations: Vec<Tensor>,
    cols: Vec<Option<ColCache>>,
    probs: Tensor,
}

impl Trace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Softmax outputs, shaped `[batch, classes]`.
    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn classes(&self) -> usize {
        self.probs.shape()[1]
    }

    /// Per-sample cross-entropy losses against integer class labels.
    pub fn losses(&self, labels: &[usize]) -> Result<Vec<Real>> {
        let classes = self.classes();
        if labels.len() != self.batch {
            return Err(Error::input(format!(
                "{} labels for a batch of {}",
                labels.len(),
                self.batch
            )));
        }
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                if label >= classes {
                    return Err(Error::input(format!(
                        "label {label} out of range for {classes} classes"
                    )));
                }
                Ok(-self.probs.data()[i * classes + label].max(LOG_EPS).ln())
            })
            .collect()
    }

    /// Reduced loss over the batch.
    pub fn loss(&self, labels: &[usize], reduction: Reduction) -> Result<Real> {
        let losses = self.losses(labels)?;
        let sum: Real = losses.iter().sum();
        Ok(match reduction {
            Reduction::Mean => sum / self.batch as Real,
            Reduction::Sum => sum,
        })
    }
}

/// Runs the batched forward pass. The input is `[batch, ...]`; convolution
/// layers expect `[batch, channels, height, width]`, dense layers
/// `[batch, features]`.
pub fn forward(net: &Network, params: &ParamSet, input: &Tensor) -> Result<Trace> {
    if input.shape().len() < 2 {
        return Err(Error::config(format!(
            "network input must carry a batch dimension, got shape {:?}",
            input.shape()
        )));
    }
    let batch = input.shape()[0];
    let mut activations = Vec::with_capacity(net.layers.len() + 1);
    let mut cols = Vec::with_capacity(net.layers.len());
    activations.push(input.clone());

    for layer in &net.layers {
        let current = activations.last().expect("nonempty");
        let (next, col) = match layer {
            Layer::Conv2d { kernel, bias } => {
                let k = require(params, kernel)?;
                let b = require(params, bias)?;
                let (out, col) = conv_forward_batch(current, k, b)?;
                (out, Some(col))
            }
            Layer::Dense { weight, bias } => {
                let w = require(params, weight)?;
                let b = require(params, bias)?;
                (dense_forward_batch(current, w, b)?, None)
            }
            Layer::Relu => {
                let data = current.data().iter().map(|&v| v.max(0.0)).collect();
                (Tensor::new(current.shape().to_vec(), data)?, None)
            }
            Layer::Flatten => {
                let features: usize = current.shape()[1..].iter().product();
                (current.reshaped(vec![batch, features])?, None)
            }
        };
        activations.push(next);
        cols.push(col);
    }

    let logits = activations.last().expect("nonempty");
    let classes = match logits.shape() {
        [b, c] if *b == batch && *c >= 2 => *c,
        other => {
            return Err(Error::config(format!(
                "network must end in a dense layer over >= 2 classes, got output shape {other:?}"
            )))
        }
    };

    let mut probs = logits.data().to_vec();
    for row in probs.chunks_exact_mut(classes) {
        softmax_row(row);
    }
    let probs = Tensor::new(vec![batch, classes], probs)?;
    probs.check_finite("softmax")?;

    Ok(Trace {
        batch,
        activations,
        cols,
        probs,
    })
}

/// Reverse pass over a completed trace: exact gradients of the reduced
/// cross-entropy loss with respect to every parameter and the input.
pub fn backward(
    net: &Network,
    params: &ParamSet,
    trace: &Trace,
    labels: &[usize],
    reduction: Reduction,
) -> Result<GradResult> {
    let batch = trace.batch;
    let classes = trace.classes();
    let loss = trace.loss(labels, reduction)?;
    let scale = match reduction {
        Reduction::Mean => 1.0 / batch as Real,
        Reduction::Sum => 1.0,
    };

    // Softmax + clamped cross-entropy head: d loss / d logits = p - y per
    // sample, zero where the label probability sits below the log clamp
    // (the loss is flat there).
    let mut delta = vec![0.0; batch * classes];
    let p = trace.probs.data();
    for (i, &label) in labels.iter().enumerate() {
        let row = &mut delta[i * classes..(i + 1) * classes];
        if p[i * classes + label] >= LOG_EPS {
            for (j, d) in row.iter_mut().enumerate() {
                *d = scale * (p[i * classes + j] - if j == label { 1.0 } else { 0.0 });
            }
        }
    }
    let mut delta = Tensor::new(vec![batch, classes], delta)?;

    let mut param_grads = params.zeros_like();
    for (i, layer) in net.layers.iter().enumerate().rev() {
        let layer_input = &trace.activations[i];
        delta = match layer {
            Layer::Conv2d { kernel, bias } => {
                let k = require(params, kernel)?;
                let col = trace.cols[i].as_ref().expect("conv layer caches im2col");
                let (dk, db, dx) = conv_backward_batch(layer_input, k, col, &delta)?;
                accumulate(&mut param_grads, kernel, &dk)?;
                accumulate(&mut param_grads, bias, &db)?;
                dx
            }
            Layer::Dense { weight, bias } => {
                let w = require(params, weight)?;
                let (dw, db, dx) = dense_backward_batch(layer_input, w, &delta)?;
                accumulate(&mut param_grads, weight, &dw)?;
                accumulate(&mut param_grads, bias, &db)?;
                dx
            }
            Layer::Relu => {
                let mut dx = delta.into_data();
                for (d, &pre) in dx.iter_mut().zip(layer_input.data()) {
                    if pre <= 0.0 {
                        *d = 0.0;
                    }
                }
                Tensor::new(layer_input.shape().to_vec(), dx)?
            }
            Layer::Flatten => delta.reshaped(layer_input.shape().to_vec())?,
        };
    }

    for (i, layer) in net.layers.iter().enumerate() {
        if let Layer::Conv2d { kernel, bias } | Layer::Dense { weight: kernel, bias } = layer {
            param_grads
                .get(kernel)
                .expect("gradient present")
                .check_finite(&format!("backward layer {i} ({kernel})"))?;
            param_grads
                .get(bias)
                .expect("gradient present")
                .check_finite(&format!("backward layer {i} ({bias})"))?;
        }
    }
    delta.check_finite("backward input gradient")?;

    Ok(GradResult {
        param_grads,
        input_grad: delta,
        loss,
    })
}

fn require<'p>(params: &'p ParamSet, name: &str) -> Result<&'p Tensor> {
    params
        .get(name)
        .ok_or_else(|| Error::config(format!("missing parameter {name:?}")))
}

fn accumulate(grads: &mut ParamSet, name: &str, add: &Tensor) -> Result<()> {
    let slot = grads
        .get_mut(name)
        .ok_or_else(|| Error::config(format!("missing gradient slot {name:?}")))?;
    if slot.shape() != add.shape() {
        return Err(Error::config(format!(
            "gradient for {name:?} has shape {:?}, expected {:?}",
            add.shape(),
            slot.shape()
        )));
    }
    for (s, a) in slot.data_mut().iter_mut().zip(add.data()) {
        *s += a;
    }
    Ok(())
}

fn view2(data: &[Real], rows: usize, cols: usize) -> ArrayView2<'_, Real> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix view")
}

fn view2_mut(data: &mut [Real], rows: usize, cols: usize) -> ArrayViewMut2<'_, Real> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("matrix view")
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        other => Err(Error::config(format!(
            "{what} must be 4-D, got shape {other:?}"
        ))),
    }
}

fn conv_forward_batch(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<(Tensor, ColCache)> {
    let [batch, cin, h, w] = dims4(x, "conv input")?;
    let [cout, kcin, kh, kw] = dims4(kernel, "conv kernel")?;
    if kcin != cin {
        return Err(Error::config(format!(
            "conv channel mismatch: input has {cin}, kernel expects {kcin}"
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::config(format!(
            "conv bias shape {:?} does not match {cout} maps",
            bias.shape()
        )));
    }
    if kh > h || kw > w {
        return Err(Error::config(format!(
            "conv kernel {kh}x{kw} exceeds input {h}x{w}"
        )));
    }
    let (h_out, w_out) = (h - kh + 1, w - kw + 1);
    let rows = cin * kh * kw;
    let ncols = batch * h_out * w_out;

    // im2col: row r = (ci, dy, dx), column c = (sample, oy, ox).
    let mut col = vec![0.0; rows * ncols];
    let xd = x.data();
    for ci in 0..cin {
        for dy in 0..kh {
            for dx in 0..kw {
                let r = (ci * kh + dy) * kw + dx;
                let dst = &mut col[r * ncols..(r + 1) * ncols];
                let mut c = 0;
                for b in 0..batch {
                    let plane = ((b * cin + ci) * h) * w;
                    for oy in 0..h_out {
                        let src = plane + (oy + dy) * w + dx;
                        dst[c..c + w_out].copy_from_slice(&xd[src..src + w_out]);
                        c += w_out;
                    }
                }
            }
        }
    }

    // out_mat [cout, ncols] = kernel [cout, rows] x col [rows, ncols]
    let mut out_mat = vec![0.0; cout * ncols];
    general_mat_mul(
        1.0,
        &view2(kernel.data(), cout, rows),
        &view2(&col, rows, ncols),
        0.0,
        &mut view2_mut(&mut out_mat, cout, ncols),
    );

    // Scatter back to [batch, cout, h_out, w_out], adding the bias.
    let mut out = Tensor::zeros(vec![batch, cout, h_out, w_out]);
    let od = out.data_mut();
    for co in 0..cout {
        let bval = bias.data()[co];
        for b in 0..batch {
            for oy in 0..h_out {
                let src = co * ncols + (b * h_out + oy) * w_out;
                let dst = ((b * cout + co) * h_out + oy) * w_out;
                for ox in 0..w_out {
                    od[dst + ox] = out_mat[src + ox] + bval;
                }
            }
        }
    }

    Ok((
        out,
        ColCache {
            data: col,
            rows,
            cols: ncols,
        },
    ))
}

fn conv_backward_batch(
    x: &Tensor,
    kernel: &Tensor,
    col: &ColCache,
    dout: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [batch, cin, h, w] = dims4(x, "conv input")?;
    let [cout, _, kh, kw] = dims4(kernel, "conv kernel")?;
    let [dbatch, dcout, h_out, w_out] = dims4(dout, "conv output gradient")?;
    if dbatch != batch || dcout != cout {
        return Err(Error::config(format!(
            "conv gradient shape {:?} does not match forward pass",
            dout.shape()
        )));
    }
    let rows = col.rows;
    let ncols = col.cols;

    // Gather dout into [cout, ncols] matching the forward scatter.
    let mut dout_mat = vec![0.0; cout * ncols];
    let dd = dout.data();
    for co in 0..cout {
        for b in 0..batch {
            for oy in 0..h_out {
                let dst = co * ncols + (b * h_out + oy) * w_out;
                let src = ((b * cout + co) * h_out + oy) * w_out;
                dout_mat[dst..dst + w_out].copy_from_slice(&dd[src..src + w_out]);
            }
        }
    }

    let mut dbias = Tensor::zeros(vec![cout]);
    for co in 0..cout {
        dbias.data_mut()[co] = dout_mat[co * ncols..(co + 1) * ncols].iter().sum();
    }

    // dK [cout, rows] = dout_mat [cout, ncols] x col^T [ncols, rows]
    let mut dk = Tensor::zeros(kernel.shape().to_vec());
    general_mat_mul(
        1.0,
        &view2(&dout_mat, cout, ncols),
        &view2(&col.data, rows, ncols).t(),
        0.0,
        &mut view2_mut(dk.data_mut(), cout, rows),
    );

    // dcol [rows, ncols] = kernel^T [rows, cout] x dout_mat [cout, ncols]
    let mut dcol = vec![0.0; rows * ncols];
    general_mat_mul(
        1.0,
        &view2(kernel.data(), cout, rows).t(),
        &view2(&dout_mat, cout, ncols),
        0.0,
        &mut view2_mut(&mut dcol, rows, ncols),
    );

    // col2im: scatter-add dcol back onto the input layout.
    let mut dx = Tensor::zeros(vec![batch, cin, h, w]);
    let dxd = dx.data_mut();
    for ci in 0..cin {
        for dy in 0..kh {
            for dx_off in 0..kw {
                let r = (ci * kh + dy) * kw + dx_off;
                let src_row = &dcol[r * ncols..(r + 1) * ncols];
                let mut c = 0;
                for b in 0..batch {
                    let plane = ((b * cin + ci) * h) * w;
                    for oy in 0..h_out {
                        let dst = plane + (oy + dy) * w + dx_off;
                        for ox in 0..w_out {
                            dxd[dst + ox] += src_row[c + ox];
                        }
                        c += w_out;
                    }
                }
            }
        }
    }

    Ok((dk, dbias, dx))
}

fn dense_forward_batch(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, n) = match x.shape() {
        [b, n] => (*b, *n),
        other => {
            return Err(Error::config(format!(
                "dense input must be [batch, features], got {other:?}"
            )))
        }
    };
    let (m, wn) = match weight.shape() {
        [m, wn] => (*m, *wn),
        other => {
            return Err(Error::config(format!(
                "dense weight must be 2-D, got {other:?}"
            )))
        }
    };
    if wn != n {
        return Err(Error::config(format!(
            "dense dimension mismatch: weight is {m}x{wn}, input features {n}"
        )));
    }
    if bias.shape() != [m] {
        return Err(Error::config(format!(
            "dense bias shape {:?} does not match {m} outputs",
            bias.shape()
        )));
    }

    let mut out = Tensor::zeros(vec![batch, m]);
    general_mat_mul(
        1.0,
        &view2(x.data(), batch, n),
        &view2(weight.data(), m, n).t(),
        0.0,
        &mut view2_mut(out.data_mut(), batch, m),
    );
    let od = out.data_mut();
    for row in od.chunks_exact_mut(m) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(out)
}

fn dense_backward_batch(
    x: &Tensor,
    weight: &Tensor,
    dout: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, n) = (x.shape()[0], x.shape()[1]);
    let (m, _) = (weight.shape()[0], weight.shape()[1]);
    if dout.shape() != [batch, m] {
        return Err(Error::config(format!(
            "dense gradient shape {:?} does not match [{batch}, {m}]",
            dout.shape()
        )));
    }

    // dW [m, n] = dout^T [m, batch] x X [batch, n]
    let mut dw = Tensor::zeros(vec![m, n]);
    general_mat_mul(
        1.0,
        &view2(dout.data(), batch, m).t(),
        &view2(x.data(), batch, n),
        0.0,
        &mut view2_mut(dw.data_mut(), m, n),
    );

    let mut dbias = Tensor::zeros(vec![m]);
    let db = dbias.data_mut();
    for row in dout.data().chunks_exact(m) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }

    // dX [batch, n] = dout [batch, m] x W [m, n]
    let mut dx = Tensor::zeros(vec![batch, n]);
    general_mat_mul(
        1.0,
        &view2(dout.data(), batch, m),
        &view2(weight.data(), m, n),
        0.0,
        &mut view2_mut(dx.data_mut(), batch, n),
    );

    Ok((dw, dbias, dx))
}
