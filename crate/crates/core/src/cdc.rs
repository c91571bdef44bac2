//! Token map extraction: a learnable 3×3 convolution blended with its
//! central-difference counterpart.
//!
//! With kernel `ω`, the vanilla term is `Z = conv(x, ω) + b` and the
//! difference term at position `n` is
//! `Zᵍₙ = Σ_ci Σ_{p ∈ N(n)} ω(p)·(x_p − x_n)` where `N(n)` is the set of
//! in-image 3×3 neighbours of `n`. The output is `(1−θ)·Z + θ·Zᵍ`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::TokenGrid;
use crate::tensor::Tensor;

/// Blend ratio used unless configured otherwise.
pub const DEFAULT_THETA: f64 = 0.7;

#[derive(Clone, Debug)]
pub struct CdcConv {
    /// `[C_out, C_in, 3, 3]`
    pub kernel: Tensor,
    /// `[C_out]`
    pub bias: Tensor,
    theta: f64,
}

impl CdcConv {
    pub fn new(kernel: Tensor, bias: Tensor, theta: f64) -> Result<Self> {
        check_theta(theta)?;
        match kernel.shape() {
            [cout, _, 3, 3] if bias.shape() == [*cout] => {}
            _ => return Err(Error::mismatch("cdc_conv", kernel.shape(), bias.shape())),
        }
        Ok(Self { kernel, bias, theta })
    }

    /// Trainable kernel with `N(0, 1/(9·C_in))` entries and zero bias.
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, theta: f64, rng: &mut R) -> Result<Self> {
        let std = 1.0 / ((9 * c_in) as f64).sqrt();
        let kernel = Tensor::randn(&[c_out, c_in, 3, 3], std, rng).to_param();
        let bias = Tensor::zeros(&[c_out]).to_param();
        Self::new(kernel, bias, theta)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn set_theta(&mut self, theta: f64) -> Result<()> {
        check_theta(theta)?;
        self.theta = theta;
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    /// Blended token map `Z*` on a raw `[C,H,W]` or `[B,C,H,W]` tensor.
    pub fn forward_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let z = x.conv2d(&self.kernel, Some(&self.bias), 1, 1)?;
        if self.theta == 0.0 {
            return Ok(z);
        }
        let zg = central_difference(x, &self.kernel)?;
        z.scale(1.0 - self.theta).add(&zg.scale(self.theta))
    }

    pub fn forward(&self, x: &TokenGrid) -> Result<TokenGrid> {
        Ok(TokenGrid {
            grid: self.forward_tensor(&x.grid)?,
            class_token: x.class_token.clone(),
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.kernel.numel() + self.bias.numel()
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("theta must lie in [0, 1], got {theta}")))
    }
}

/// Difference term `Zᵍ` for a 3×3 kernel `[C_out, C_in, 3, 3]` over the
/// in-image neighbourhood of each position (stride 1, shape-preserving).
pub fn central_difference(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (batch, cin, h, w, batched) = crate::tensor::image_dims("central_difference", x.shape())?;
    let cout = match kernel.shape() {
        [co, ci, 3, 3] if *ci == cin => *co,
        s => return Err(Error::mismatch("central_difference", x.shape(), s)),
    };
    let xd = x.data();
    let kd = kernel.data();
    let mut out = vec![0.0; batch * cout * h * w];
    for_each_tap(batch, cin, cout, h, w, |oi, xi_p, xi_n, ki| {
        out[oi] += kd[ki] * (xd[xi_p] - xd[xi_n]);
    });
    let shape = if batched { vec![batch, cout, h, w] } else { vec![cout, h, w] };
    Ok(Tensor::from_op(
        "central_difference",
        out,
        shape,
        vec![x.clone(), kernel.clone()],
        Box::new(move |g, p| {
            let (xd, kd) = (p[0].data(), p[1].data());
            let need_x = p[0].requires_grad();
            let need_k = p[1].requires_grad();
            let mut gx = vec![0.0; if need_x { xd.len() } else { 0 }];
            let mut gk = vec![0.0; if need_k { kd.len() } else { 0 }];
            for_each_tap(batch, cin, cout, h, w, |oi, xi_p, xi_n, ki| {
                let gv = g[oi];
                if need_x {
                    gx[xi_p] += gv * kd[ki];
                    gx[xi_n] -= gv * kd[ki];
                }
                if need_k {
                    gk[ki] += gv * (xd[xi_p] - xd[xi_n]);
                }
            });
            vec![need_x.then_some(gx), need_k.then_some(gk)]
        }),
    ))
}

/// Visits `(output index, neighbour input index, centre input index,
/// kernel index)` for every in-image tap.
#[inline]
fn for_each_tap(
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    mut f: impl FnMut(usize, usize, usize, usize),
) {
    for b in 0..batch {
        for o in 0..cout {
            for y in 0..h {
                for x in 0..w {
                    let oi = ((b * cout + o) * h + y) * w + x;
                    for c in 0..cin {
                        let plane = (b * cin + c) * h * w;
                        let kbase = (o * cin + c) * 9;
                        for ki in 0..3 {
                            let Some(py) = (y + ki).checked_sub(1).filter(|&v| v < h) else {
                                continue;
                            };
                            for kj in 0..3 {
                                let Some(px) = (x + kj).checked_sub(1).filter(|&v| v < w) else {
                                    continue;
                                };
                                f(oi, plane + py * w + px, plane + y * w + x, kbase + ki * 3 + kj);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(t: Tensor) -> TokenGrid {
        TokenGrid {
            grid: t,
            class_token: None,
        }
    }

    #[test]
    fn theta_out_of_range_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(CdcConv::init(2, 2, 1.5, &mut rng).is_err());
        assert!(CdcConv::init(2, 2, -0.1, &mut rng).is_err());
        let mut c = CdcConv::init(2, 2, 1.0, &mut rng).unwrap();
        assert!(c.set_theta(2.0).is_err());
    }

    #[test]
    fn theta_zero_is_plain_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = CdcConv::init(3, 2, 0.0, &mut rng).unwrap();
        let x = Tensor::randn(&[3, 5, 5], 1.0, &mut rng);
        let y = c.forward(&grid(x.clone())).unwrap();
        let plain = x.conv2d(&c.kernel, Some(&c.bias), 1, 1).unwrap();
        assert_eq!(y.grid.data(), plain.data());
    }

    #[test]
    fn constant_input_has_zero_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = Tensor::randn(&[2, 3, 3, 3], 1.0, &mut rng);
        let x = Tensor::full(&[3, 4, 6], 2.5);
        let zg = central_difference(&x, &k).unwrap();
        assert!(zg.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn class_token_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = CdcConv::init(2, 2, 0.7, &mut rng).unwrap();
        let cls = Tensor::new(vec![1.0, -1.0], &[2]).unwrap();
        let out = c
            .forward(&TokenGrid {
                grid: Tensor::randn(&[2, 3, 3], 1.0, &mut rng),
                class_token: Some(cls.clone()),
            })
            .unwrap();
        assert!(out.class_token.unwrap().same_storage(&cls));
        assert_eq!(out.grid.shape(), &[2, 3, 3]);
    }
}
