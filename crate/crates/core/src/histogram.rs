//! Differentiable soft token histogram.
//!
//! Each channel carries one soft bin with centre `μ_c` and inverse width
//! `γ_c`. The response at `(c, h, w)` is the mean of `exp(−U²)` over the
//! zero-padded 3×3 window, `U = γ_c·(z − μ_c)`. `U` is produced by two
//! pixel-wise convolutions: the first has its weight fixed at 1 and bias
//! `−μ`, the second has weight `γ` and its bias fixed at 0.

use crate::error::{Error, Result};
use crate::geometry::TokenGrid;
use crate::tensor::Tensor;

/// Window side `J = K`.
pub const WINDOW: usize = 3;
/// Zero padding per side, keeps `H, W` unchanged.
pub const PADDING: usize = 1;

#[derive(Clone, Debug)]
pub struct SoftHistogram {
    /// Bin centres `[C]`.
    pub mu: Tensor,
    /// Inverse bin widths `[C]`.
    pub gamma: Tensor,
    unit_weight: Tensor,
    zero_bias: Tensor,
}

impl SoftHistogram {
    pub fn new(mu: Tensor, gamma: Tensor) -> Result<Self> {
        let c = match mu.shape() {
            [c] if gamma.shape() == [*c] => *c,
            _ => return Err(Error::mismatch("soft_histogram", mu.shape(), gamma.shape())),
        };
        Ok(Self {
            mu,
            gamma,
            unit_weight: Tensor::ones(&[c]),
            zero_bias: Tensor::zeros(&[c]),
        })
    }

    /// Trainable `μ = 0`, `γ = 1`.
    pub fn init(channels: usize) -> Self {
        Self::new(
            Tensor::zeros(&[channels]).to_param(),
            Tensor::ones(&[channels]).to_param(),
        )
        .expect("matching shapes")
    }

    pub fn channels(&self) -> usize {
        self.mu.numel()
    }

    /// The frozen weight of the centring convolution (always ones).
    pub fn centring_weight(&self) -> &Tensor {
        &self.unit_weight
    }

    /// The frozen bias of the scaling convolution (always zeros).
    pub fn scaling_bias(&self) -> &Tensor {
        &self.zero_bias
    }

    /// Two-convolution realization on `[C,H,W]` or `[B,C,H,W]`.
    pub fn forward_tensor(&self, z: &Tensor) -> Result<Tensor> {
        let padded = z.pad2d(PADDING)?;
        let centred = padded.channel_affine(&self.unit_weight, &self.mu.neg())?;
        let u = centred.channel_affine(&self.gamma, &self.zero_bias)?;
        u.square().neg().exp().box_mean(WINDOW)
    }

    pub fn forward(&self, z: &TokenGrid) -> Result<TokenGrid> {
        Ok(TokenGrid {
            grid: self.forward_tensor(&z.grid)?,
            class_token: z.class_token.clone(),
        })
    }

    /// Direct windowed evaluation of the histogram response, without the
    /// graph. Same layout in and out as [`Self::forward_tensor`].
    pub fn evaluate_direct(&self, z: &Tensor) -> Result<Vec<f64>> {
        let (batch, c, h, w, _) = crate::tensor::image_dims("soft_histogram", z.shape())?;
        if c != self.channels() {
            return Err(Error::mismatch("soft_histogram", z.shape(), self.mu.shape()));
        }
        let (mu, gamma) = (self.mu.data(), self.gamma.data());
        let zd = z.data();
        let norm = 1.0 / (WINDOW * WINDOW) as f64;
        let mut out = vec![0.0; zd.len()];
        for b in 0..batch {
            for ch in 0..c {
                let plane = (b * c + ch) * h * w;
                for y in 0..h {
                    for x in 0..w {
                        let mut s = 0.0;
                        for j in 0..WINDOW {
                            for k in 0..WINDOW {
                                let (py, px) = ((y + j) as isize - PADDING as isize, (x + k) as isize - PADDING as isize);
                                let inside = py >= 0 && px >= 0 && (py as usize) < h && (px as usize) < w;
                                let v = if inside { zd[plane + py as usize * w + px as usize] } else { 0.0 };
                                let u = gamma[ch] * (v - mu[ch]);
                                s += (-u * u).exp();
                            }
                        }
                        out[plane + y * w + x] = s * norm;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn parameter_count(&self) -> usize {
        self.mu.numel() + self.gamma.numel()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn residual_free_interior_is_one() {
        let mut h = SoftHistogram::init(2);
        h.mu = Tensor::new(vec![0.4, -1.0], &[2]).unwrap().to_param();
        let mut data = vec![0.4; 16];
        data.extend(vec![3.0; 16]);
        let z = Tensor::new(data, &[2, 4, 4]).unwrap();
        let y = h.forward_tensor(&z).unwrap();
        for y_ in 1..3 {
            for x_ in 1..3 {
                assert!((y.data()[y_ * 4 + x_] - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_gamma_gives_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut h = SoftHistogram::init(3);
        h.gamma = Tensor::zeros(&[3]).to_param();
        let z = Tensor::randn(&[3, 4, 4], 2.0, &mut rng);
        let y = h.forward_tensor(&z).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn hand_case_center() {
        let h = SoftHistogram::init(1);
        let mut d = vec![0.0; 9];
        d[4] = 1.0;
        let z = Tensor::new(d, &[1, 3, 3]).unwrap();
        let y = h.forward_tensor(&z).unwrap();
        let expected = (8.0 + (-1.0f64).exp()) / 9.0;
        assert!((y.data()[4] - expected).abs() < 1e-12);
    }

    #[test]
    fn frozen_convolution_constants() {
        let h = SoftHistogram::init(4);
        assert!(h.centring_weight().data().iter().all(|&v| v == 1.0));
        assert!(h.scaling_bias().data().iter().all(|&v| v == 0.0));
        assert!(!h.centring_weight().requires_grad());
        assert!(!h.scaling_bias().requires_grad());
    }

    #[test]
    fn shape_preserving() {
        let h = SoftHistogram::init(8);
        let y = h.forward_tensor(&Tensor::zeros(&[2, 8, 4, 4])).unwrap();
        assert_eq!(y.shape(), &[2, 8, 4, 4]);
    }
}
