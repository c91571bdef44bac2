use std::collections::HashMap;

use crate::module::Module;
use crate::tensor::Tensor;

/// Gradient descent with bias-corrected first and second moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every trainable parameter that holds a gradient, replacing
    /// it with a fresh trainable leaf. Frozen parameters are not touched.
    pub fn step<M: Module + ?Sized>(&mut self, model: &mut M) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let moments = &mut self.moments;
        model.visit_mut("", &mut |name, param| {
            if !param.requires_grad() {
                return;
            }
            let Some(g) = param.grad() else {
                return;
            };
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let mut data = param.to_vec();
            for i in 0..data.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            *param = Tensor::param(data, param.shape()).expect("shape preserved");
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::module::Linear;

    #[test]
    fn minimizes_a_quadratic() {
        let mut l = Linear::zeros(1, 1);
        l.bias = Tensor::new(vec![5.0], &[1]).unwrap(); // frozen
        let mut opt = Adam::new(0.1);
        for _ in 0..300 {
            l.zero_grad();
            let w = &l.weight;
            let loss = w.add_scalar(-2.0).square().sum_all();
            loss.backward().unwrap();
            opt.step(&mut l);
        }
        assert!((l.weight.data()[0] - 2.0).abs() < 1e-3);
        assert_eq!(l.bias.data(), &[5.0]);
        assert_eq!(opt.steps(), 300);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut l = Linear::zeros(1, 1);
        l.weight = Tensor::param(vec![1.0], &[1, 1]).unwrap();
        l.bias = Tensor::new(vec![0.0], &[1]).unwrap();
        l.weight.scale(3.0).sum_all().backward().unwrap();
        let mut opt = Adam::new(0.01);
        opt.step(&mut l);
        assert!((l.weight.data()[0] - 0.99).abs() < 1e-9);
    }
}
