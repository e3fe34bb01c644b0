//! Single-sample layer operations.
//!
//! These are straightforward loop implementations. The batched training path
//! in [`crate::nn::net`] goes through im2col and matrix products instead; the
//! two routes are cross-checked in tests.

use crate::error::{Error, Result};
use crate::nn::tensor::{ParamSet, Tensor};
use crate::Real;

/// Log clamp floor for cross-entropy on saturated predictions.
pub const LOG_EPS: Real = 1e-12;

/// Valid (no padding) stride-1 2D convolution of a `[Cin, H, W]` input with a
/// `[Cout, Cin, kh, kw]` kernel and `[Cout]` bias.
pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [cin, h, w] = dims3(input, "conv2d input")?;
    let [cout, kcin, kh, kw] = dims4(kernel, "conv2d kernel")?;
    if kcin != cin {
        return Err(Error::config(format!(
            "conv2d channel mismatch: input has {cin}, kernel expects {kcin}"
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::config(format!(
            "conv2d bias shape {:?} does not match {cout} output maps",
            bias.shape()
        )));
    }
    if kh > h || kw > w {
        return Err(Error::config(format!(
            "conv2d kernel {kh}x{kw} exceeds input {h}x{w}"
        )));
    }
    let (h_out, w_out) = (h - kh + 1, w - kw + 1);
    let mut out = Tensor::zeros(vec![cout, h_out, w_out]);
    let x = input.data();
    let k = kernel.data();
    let o = out.data_mut();
    for co in 0..cout {
        let b = bias.data()[co];
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut acc = b;
                for ci in 0..cin {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let xv = x[(ci * h + oy + dy) * w + ox + dx];
                            let kv = k[((co * cin + ci) * kh + dy) * kw + dx];
                            acc += xv * kv;
                        }
                    }
                }
                o[(co * h_out + oy) * w_out + ox] = acc;
            }
        }
    }
    Ok(out)
}

/// Affine map `weight · input + bias` for an `[n]` input, `[m, n]` weight,
/// and `[m]` bias.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n = match input.shape() {
        [n] => *n,
        other => {
            return Err(Error::config(format!(
                "dense input must be a vector, got shape {other:?}"
            )))
        }
    };
    let [m, wn] = dims2(weight, "dense weight")?;
    if wn != n {
        return Err(Error::config(format!(
            "dense dimension mismatch: weight is {m}x{wn}, input has {n}"
        )));
    }
    if bias.shape() != [m] {
        return Err(Error::config(format!(
            "dense bias shape {:?} does not match {m} outputs",
            bias.shape()
        )));
    }
    let mut out = vec![0.0; m];
    for (row, o) in out.iter_mut().enumerate() {
        let wrow = &weight.data()[row * n..(row + 1) * n];
        let mut acc = bias.data()[row];
        for (wv, xv) in wrow.iter().zip(input.data()) {
            acc += wv * xv;
        }
        *o = acc;
    }
    Tensor::new(vec![m], out)
}

/// Elementwise `max(0, x)`.
pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("relu preserves shape")
}

/// Numerically stable softmax over a logit vector.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.data().to_vec();
    softmax_row(&mut out);
    Tensor::new(logits.shape().to_vec(), out).expect("softmax preserves shape")
}

/// In-place stable softmax of one row.
pub(crate) fn softmax_row(row: &mut [Real]) {
    let max = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Negative log-likelihood `-Σ_j y_j log(max(ŷ_j, ε))` of a probability
/// vector against a one-hot label.
pub fn cross_entropy(pred: &Tensor, label: &Tensor) -> Result<Real> {
    if pred.shape() != label.shape() {
        return Err(Error::input(format!(
            "prediction shape {:?} does not match label shape {:?}",
            pred.shape(),
            label.shape()
        )));
    }
    let hot = one_hot_index(label)?;
    Ok(-pred.data()[hot].max(LOG_EPS).ln())
}

/// Index of the single 1.0 in a one-hot vector.
pub fn one_hot_index(label: &Tensor) -> Result<usize> {
    let mut hot = None;
    for (j, &v) in label.data().iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return Err(Error::input("label has more than one active class"));
            }
            hot = Some(j);
        } else if v != 0.0 {
            return Err(Error::input(format!(
                "label entry {v} at index {j} is neither 0 nor 1"
            )));
        }
    }
    hot.ok_or_else(|| Error::input("label has no active class"))
}

/// One plain SGD step: `params - lr * grads`, leaving the inputs untouched.
pub fn sgd_step(params: &ParamSet, grads: &ParamSet, lr: Real) -> Result<ParamSet> {
    let mut next = params.clone();
    next.add_scaled(grads, -lr)?;
    Ok(next)
}

fn dims2(t: &Tensor, what: &str) -> Result<[usize; 2]> {
    match t.shape() {
        [a, b] => Ok([*a, *b]),
        other => Err(Error::config(format!(
            "{what} must be 2-D, got shape {other:?}"
        ))),
    }
}

fn dims3(t: &Tensor, what: &str) -> Result<[usize; 3]> {
    match t.shape() {
        [a, b, c] => Ok([*a, *b, *c]),
        other => Err(Error::config(format!(
            "{what} must be 3-D, got shape {other:?}"
        ))),
    }
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        other => Err(Error::config(format!(
            "{what} must be 4-D, got shape {other:?}"
        ))),
    }
}
