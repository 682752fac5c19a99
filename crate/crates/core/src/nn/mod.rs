//! A small reverse-mode network engine with exactly the layers the decoder
//! needs. Activations flow as `batch × time × channels` or `batch × units`.

mod adam;
mod init;
mod layers;

pub use adam::AdamState;
pub use init::{he_bound, he_uniform};
pub use layers::{Activation, Cam, Conv1d, Dense, Dropout, DwsConv1d, Flatten, Layer, MaxPool1d};

use ndarray::{ArrayD, Ix2};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("input of {got} samples is shorter than kernel width {kernel}")]
    WindowTooShort { got: usize, kernel: usize },
    #[error("shape mismatch in {layer}: {msg}")]
    ShapeMismatch { layer: &'static str, msg: String },
    #[error("backward called on {0} without a recorded forward pass")]
    NoGraph(&'static str),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("invalid layer configuration: {0}")]
    BadLayer(String),
}

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    /// Weight-decay factor; the penalty is `l2 · Σ w²`.
    pub l2: f64,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f64>, l2: f64) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { name: name.into(), value, grad, l2 }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        if self.grad.shape() != self.value.shape() {
            self.grad = ArrayD::zeros(self.value.raw_dim());
        } else {
            self.grad.fill(0.0);
        }
    }
}

/// Layers applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&mut self, x: ArrayD<f64>, train: bool) -> Result<ArrayD<f64>, NnError> {
        self.layers.iter_mut().try_fold(x, |h, l| l.forward(h, train))
    }

    /// Backpropagates `dy` and accumulates parameter gradients; returns the
    /// gradient with respect to the network input.
    pub fn backward(&mut self, dy: ArrayD<f64>) -> Result<ArrayD<f64>, NnError> {
        self.layers.iter_mut().rev().try_fold(dy, |g, l| l.backward(g))
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// `Σ l2 · ‖w‖²` over all parameters.
    pub fn l2_penalty(&self) -> f64 {
        self.params().iter().map(|p| p.l2 * p.value.iter().map(|w| w * w).sum::<f64>()).sum()
    }

    /// Adds the penalty's gradient `2 · l2 · w` to each parameter.
    pub fn add_l2_grad(&mut self) {
        for p in self.params_mut() {
            if p.l2 != 0.0 {
                let l2 = p.l2;
                p.grad.zip_mut_with(&p.value, |g, w| *g += 2.0 * l2 * w);
            }
        }
    }

    /// Output shape for an input of `input` (batch dimension included).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        self.layers.iter().try_fold(input.to_vec(), |s, l| l.output_shape(&s))
    }

    /// Shapes after each layer, starting with the input.
    pub fn shape_trace(&self, input: &[usize]) -> Result<Vec<Vec<usize>>, NnError> {
        let mut out = vec![input.to_vec()];
        for l in &self.layers {
            let next = l.output_shape(out.last().unwrap())?;
            out.push(next);
        }
        Ok(out)
    }
}

/// Mean squared error over every element, with its gradient.
pub fn mse_loss(pred: &ArrayD<f64>, target: &ArrayD<f64>) -> Result<(f64, ArrayD<f64>), NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::ShapeMismatch {
            layer: "loss",
            msg: format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
        });
    }
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

pub(crate) fn as2(x: ArrayD<f64>, layer: &'static str) -> Result<ndarray::Array2<f64>, NnError> {
    let shape = x.shape().to_vec();
    x.into_dimensionality::<Ix2>()
        .map_err(|_| NnError::ShapeMismatch { layer, msg: format!("expected rank 2, got {shape:?}") })
}

pub(crate) fn as3(x: ArrayD<f64>, layer: &'static str) -> Result<ndarray::Array3<f64>, NnError> {
    let shape = x.shape().to_vec();
    x.into_dimensionality::<ndarray::Ix3>()
        .map_err(|_| NnError::ShapeMismatch { layer, msg: format!("expected rank 3, got {shape:?}") })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn mse_zero_gradient_at_minimum() {
        let a = ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (l, g) = mse_loss(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
        let b = ArrayD::zeros(IxDyn(&[2, 2]));
        assert!(mse_loss(&a, &b).is_err());
    }

    #[test]
    fn l2_gradient_closed_form() {
        let w = Param::new("w", ArrayD::from_elem(IxDyn(&[1, 1]), 0.7), 0.001);
        let mut net = Sequential::new(vec![Layer::Dense(Dense::from_params(w, Param::new("b", ArrayD::zeros(IxDyn(&[1])), 0.0), Activation::Linear))]);
        net.zero_grad();
        net.add_l2_grad();
        assert!((net.params()[0].grad[[0, 0]] - 2.0 * 0.001 * 0.7).abs() < 1e-15);
        assert!((net.l2_penalty() - 0.001 * 0.49).abs() < 1e-15);
    }
}
