//! Named-parameter traversal shared by models, the optimizer and checkpoints.

use rand::Rng;

use crate::error::Result;
use crate::tensor::Tensor;

/// A container of named parameter tensors.
///
/// A parameter is trainable exactly when its tensor requires a gradient;
/// freezing swaps the tensor for a constant leaf with identical values.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }

    fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    fn trainable_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| {
            if t.requires_grad() {
                out.push(n.to_string())
            }
        });
        out
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.visit_mut("", &mut |_, t| {
            if t.requires_grad() != trainable {
                *t = if trainable { t.to_param() } else { t.detach() };
            }
        });
    }

    fn zero_grad(&self) {
        self.visit("", &mut |_, t| t.zero_grad());
    }
}

/// Joins a dotted parameter path.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map `x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Trainable, `N(0, std²)` weights and zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, std: f64, rng: &mut R) -> Self {
        Self {
            weight: Tensor::randn(&[input, output], std, rng).to_param(),
            bias: Tensor::zeros(&[output]).to_param(),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]).to_param(),
            bias: Tensor::zeros(&[output]).to_param(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Applies to `[.., in]`, flattening leading axes.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape();
        let inner = *shape.last().unwrap_or(&0);
        let rows = x.numel() / inner.max(1);
        let y = x.reshape(&[rows, inner])?.linear(&self.weight, Some(&self.bias))?;
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().expect("non-empty shape") = self.output_dim();
        y.reshape(&out_shape)
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freezing_keeps_values() {
        let mut l = Linear::zeros(2, 3);
        assert_eq!(l.trainable_names(), vec!["weight", "bias"]);
        l.set_trainable(false);
        assert!(l.trainable_names().is_empty());
        assert_eq!(l.parameter_count(), 9);
        assert_eq!(l.named_parameters()[0].1.shape(), &[2, 3]);
    }

    #[test]
    fn forward_flattens_leading_axes() {
        let l = Linear {
            weight: Tensor::new(vec![1.0, 0.0, 0.0, 2.0], &[2, 2]).unwrap(),
            bias: Tensor::new(vec![0.5, 0.0], &[2]).unwrap(),
        };
        let x = Tensor::new((0..8).map(|v| v as f64).collect(), &[2, 2, 2]).unwrap();
        let y = l.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        assert_eq!(y.data(), &[0.5, 2.0, 2.5, 6.0, 4.5, 10.0, 6.5, 14.0]);
    }
}
