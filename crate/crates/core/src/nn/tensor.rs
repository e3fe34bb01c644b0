//! Dense row-major tensors and named parameter sets.

use crate::error::{Error, Result};
use crate::Real;

/// Dense tensor with row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    /// Builds a tensor, checking that the shape matches the data length.
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::config(format!(
                "tensor shape {shape:?} has a zero dimension"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::config(format!(
                "tensor shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(value: Real) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    /// Same storage reinterpreted under a new shape of equal element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn l2_norm(&self) -> Real {
        self.data.iter().map(|v| v * v).sum::<Real>().sqrt()
    }

    /// Errors if any element is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(
                context,
                format!("non-finite value {} at flat index {pos}", self.data[pos]),
            ));
        }
        Ok(())
    }
}

/// Named, ordered parameter tensors of the classifier.
///
/// Iteration order is the insertion order and never changes afterwards, so
/// elementwise aggregation across devices walks identical layouts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::config(format!("duplicate parameter name {name:?}")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// A parameter set of zeros with identical names and shapes.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
                .collect(),
        }
    }

    /// Checks that `other` mirrors this set's names and shapes exactly.
    pub fn check_same_layout(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::config(format!(
                "parameter sets differ in length: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((an, at), (bn, bt)) in self.entries.iter().zip(other.entries.iter()) {
            if an != bn {
                return Err(Error::config(format!(
                    "parameter name mismatch: {an:?} vs {bn:?}"
                )));
            }
            if at.shape() != bt.shape() {
                return Err(Error::config(format!(
                    "parameter {an:?} shape mismatch: {:?} vs {:?}",
                    at.shape(),
                    bt.shape()
                )));
            }
        }
        Ok(())
    }

    /// In-place `self += coef * other`, used by aggregation and SGD.
    pub fn add_scaled(&mut self, other: &ParamSet, coef: Real) -> Result<()> {
        self.check_same_layout(other)?;
        for ((_, t), (_, o)) in self.entries.iter_mut().zip(other.entries.iter()) {
            for (v, w) in t.data.iter_mut().zip(o.data.iter()) {
                *v += coef * w;
            }
        }
        Ok(())
    }

    /// Mutable access to a tensor's values. Shapes stay fixed because
    /// [`Tensor`] exposes no way to change its shape in place.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        for (name, t) in self.iter() {
            t.check_finite(&format!("{context}/{name}"))?;
        }
        Ok(())
    }
}

/// Gradients of the scalar loss with respect to parameters and network input.
#[derive(Debug, Clone)]
pub struct GradResult {
    /// Gradient tensors mirroring the parameter set's names and shapes.
    pub param_grads: ParamSet,
    /// Gradient with respect to the network input, shaped like the input.
    pub input_grad: Tensor,
    /// The scalar loss the gradients differentiate.
    pub loss: Real,
}
