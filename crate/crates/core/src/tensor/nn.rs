use super::Tensor;
use crate::error::{Error, Result};

fn last_dim(op: &'static str, t: &Tensor) -> Result<usize> {
    t.shape()
        .last()
        .copied()
        .ok_or_else(|| Error::shape(op, "rank-0 input"))
}

impl Tensor {
    /// Softmax over the last axis.
    pub fn softmax_lastdim(&self) -> Result<Tensor> {
        let n = last_dim("softmax_lastdim", self)?;
        let mut out = self.to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let saved = out.clone();
        Ok(Tensor::from_op(
            "softmax_lastdim",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), xr) in g.chunks(n).zip(saved.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in xr.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Layer normalization over the last axis followed by an affine map
    /// with per-feature `gain` and `shift`.
    pub fn layernorm(&self, gain: &Tensor, shift: &Tensor, eps: f64) -> Result<Tensor> {
        let n = last_dim("layernorm", self)?;
        if gain.shape() != [n] || shift.shape() != [n] {
            return Err(Error::mismatch("layernorm", self.shape(), gain.shape()));
        }
        let rows = self.numel() / n;
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        for (r, (xr, hr)) in self.data().chunks(n).zip(xhat.chunks_mut(n)).enumerate() {
            let mean = xr.iter().sum::<f64>() / n as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (h, x) in hr.iter_mut().zip(xr) {
                *h = (x - mean) * is;
            }
        }
        let (gd, sd) = (gain.data(), shift.data());
        let out = xhat
            .chunks(n)
            .flat_map(|hr| hr.iter().zip(gd).zip(sd).map(|((h, g), s)| h * g + s))
            .collect();
        Ok(Tensor::from_op(
            "layernorm",
            out,
            self.shape().to_vec(),
            vec![self.clone(), gain.clone(), shift.clone()],
            Box::new(move |g, p| {
                let gd = p[1].data();
                let gx = p[0].requires_grad().then(|| {
                    let mut gx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let gh: Vec<f64> = gr.iter().zip(gd).map(|(a, b)| a * b).collect();
                        let m1 = gh.iter().sum::<f64>() / n as f64;
                        let m2 = gh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            gx[r * n + j] = inv_std[r] * (gh[j] - m1 - hr[j] * m2);
                        }
                    }
                    gx
                });
                let ggain = p[1].requires_grad().then(|| {
                    let mut acc = vec![0.0; n];
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            acc[j] += gr[j] * hr[j];
                        }
                    }
                    acc
                });
                let gshift = p[2].requires_grad().then(|| {
                    let mut acc = vec![0.0; n];
                    for gr in g.chunks(n) {
                        acc.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                    }
                    acc
                });
                vec![gx, ggain, gshift]
            }),
        ))
    }

    /// Mean softmax cross-entropy of `[batch × classes]` logits against
    /// integer labels, computed through a shifted log-sum-exp.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        let (b, k) = match self.shape() {
            [b, k] => (*b, *k),
            s => return Err(Error::shape("cross_entropy", format!("expected [batch, classes], got {s:?}"))),
        };
        if labels.len() != b || labels.iter().any(|&l| l >= k) {
            return Err(Error::InvalidArgument(format!(
                "cross_entropy: {} labels for batch {b} with {k} classes",
                labels.len()
            )));
        }
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for (i, row) in self.data().chunks(k).enumerate() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[labels[i]];
            for j in 0..k {
                probs[i * k + j] = (row[j] - lse).exp();
            }
        }
        let labels = labels.to_vec();
        Ok(Tensor::from_op(
            "cross_entropy",
            vec![loss / b as f64],
            vec![],
            vec![self.clone()],
            Box::new(move |g, _| {
                let s = g[0] / b as f64;
                let mut gx: Vec<f64> = probs.iter().map(|p| p * s).collect();
                for (i, &l) in labels.iter().enumerate() {
                    gx[i * k + l] -= s;
                }
                vec![Some(gx)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_symmetric() {
        let y = Tensor::zeros(&[2]).softmax_lastdim().unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[8, 8], 3.0, &mut rng);
        let y = x.softmax_lastdim().unwrap();
        for row in y.data().chunks(8) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn layernorm_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(&[4, 16], 2.0, &mut rng).add_scalar(3.0);
        let y = x.layernorm(&Tensor::ones(&[16]), &Tensor::zeros(&[16]), 1e-12).unwrap();
        for row in y.data().chunks(16) {
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_at_even_odds_is_ln2() {
        let x = Tensor::zeros(&[3, 2]);
        for labels in [[0, 0, 0], [1, 0, 1]] {
            let l = x.cross_entropy(&labels).unwrap().item().unwrap();
            assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_vanishes_for_confident_logits() {
        let x = Tensor::new(vec![-40.0, 40.0, 40.0, -40.0], &[2, 2]).unwrap();
        let l = x.cross_entropy(&[1, 0]).unwrap().item().unwrap();
        assert!(l < 1e-30);
        let x = Tensor::new(vec![800.0, -800.0], &[1, 2]).unwrap();
        assert!(x.cross_entropy(&[1]).unwrap().item().unwrap().is_finite());
    }
}
