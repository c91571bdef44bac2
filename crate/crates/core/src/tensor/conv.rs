use super::Tensor;
use crate::error::{Error, Result};

/// Geometry of a 2D cross-correlation over a batch of images.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

/// Splits a `[C,H,W]` or `[B,C,H,W]` shape into `(batch, C, H, W, batched)`.
pub(crate) fn image_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    match shape {
        [c, h, w] => Ok((1, *c, *h, *w, false)),
        [b, c, h, w] => Ok((*b, *c, *h, *w, true)),
        s => Err(Error::shape(op, format!("expected [C,H,W] or [B,C,H,W], got {s:?}"))),
    }
}

fn image_shape(batched: bool, b: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if batched {
        vec![b, c, h, w]
    } else {
        vec![c, h, w]
    }
}

impl ConvGeom {
    /// Input offset of output `(oh, ow)` under tap `(ki, kj)`, if inside the image.
    #[inline]
    fn tap(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ki).checked_sub(self.pad)?;
        let ix = (ox * self.stride + kj).checked_sub(self.pad)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }
}

impl Tensor {
    /// 2D cross-correlation (no kernel flip) with zero padding.
    ///
    /// `self` is `[Cin,H,W]` or `[B,Cin,H,W]`, `kernel` is
    /// `[Cout,Cin,kh,kw]` with odd spatial extents, `bias` is `[Cout]`.
    pub fn conv2d(&self, kernel: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
        let (batch, cin, h, w, batched) = image_dims("conv2d", self.shape())?;
        let (cout, kcin, kh, kw) = match kernel.shape() {
            [a, b, c, d] => (*a, *b, *c, *d),
            s => return Err(Error::shape("conv2d", format!("kernel must be rank 4, got {s:?}"))),
        };
        if kcin != cin {
            return Err(Error::mismatch("conv2d", self.shape(), kernel.shape()));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel extents {kh}x{kw} must be odd")));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d: stride must be positive".into()));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::mismatch("conv2d", &[cout], b.shape()));
            }
        }
        let (hp, wp) = (h + 2 * padding, w + 2 * padding);
        if hp < kh || wp < kw {
            return Err(Error::shape(
                "conv2d",
                format!("non-positive output extent for input {h}x{w}, kernel {kh}x{kw}, pad {padding}"),
            ));
        }
        let g = ConvGeom {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad: padding,
            oh: (hp - kh) / stride + 1,
            ow: (wp - kw) / stride + 1,
        };
        let x = self.data();
        let k = kernel.data();
        let mut out = vec![0.0; g.batch * g.cout * g.oh * g.ow];
        for b in 0..g.batch {
            for o in 0..g.cout {
                let bias_v = bias.map(|t| t.data()[o]).unwrap_or(0.0);
                let obase = (b * g.cout + o) * g.oh * g.ow;
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = bias_v;
                        for c in 0..g.cin {
                            let xbase = (b * g.cin + c) * g.h * g.w;
                            let kbase = (o * g.cin + c) * g.kh * g.kw;
                            for ki in 0..g.kh {
                                for kj in 0..g.kw {
                                    if let Some((iy, ix)) = g.tap(oy, ox, ki, kj) {
                                        acc += k[kbase + ki * g.kw + kj] * x[xbase + iy * g.w + ix];
                                    }
                                }
                            }
                        }
                        out[obase + oy * g.ow + ox] = acc;
                    }
                }
            }
        }
        let mut parents = vec![self.clone(), kernel.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            "conv2d",
            out,
            image_shape(batched, g.batch, g.cout, g.oh, g.ow),
            parents,
            Box::new(move |grad, p| {
                let x = p[0].data();
                let k = p[1].data();
                let need_x = p[0].requires_grad();
                let need_k = p[1].requires_grad();
                let mut gx = vec![0.0; if need_x { x.len() } else { 0 }];
                let mut gk = vec![0.0; if need_k { k.len() } else { 0 }];
                for b in 0..g.batch {
                    for o in 0..g.cout {
                        let obase = (b * g.cout + o) * g.oh * g.ow;
                        for oy in 0..g.oh {
                            for ox in 0..g.ow {
                                let gv = grad[obase + oy * g.ow + ox];
                                if gv == 0.0 {
                                    continue;
                                }
                                for c in 0..g.cin {
                                    let xbase = (b * g.cin + c) * g.h * g.w;
                                    let kbase = (o * g.cin + c) * g.kh * g.kw;
                                    for ki in 0..g.kh {
                                        for kj in 0..g.kw {
                                            if let Some((iy, ix)) = g.tap(oy, ox, ki, kj) {
                                                let xi = xbase + iy * g.w + ix;
                                                let ki_ = kbase + ki * g.kw + kj;
                                                if need_x {
                                                    gx[xi] += gv * k[ki_];
                                                }
                                                if need_k {
                                                    gk[ki_] += gv * x[xi];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                let mut grads = vec![need_x.then_some(gx), need_k.then_some(gk)];
                if p.len() == 3 {
                    grads.push(p[2].requires_grad().then(|| {
                        let mut gb = vec![0.0; g.cout];
                        for b in 0..g.batch {
                            for (o, acc) in gb.iter_mut().enumerate() {
                                let base = (b * g.cout + o) * g.oh * g.ow;
                                *acc += grad[base..base + g.oh * g.ow].iter().sum::<f64>();
                            }
                        }
                        gb
                    }));
                }
                grads
            }),
        ))
    }

    /// Per-channel affine map `y[c] = weight[c]·x[c] + bias[c]`, i.e. a
    /// depthwise 1×1 convolution, on `[C,H,W]` or `[B,C,H,W]` input.
    pub fn channel_affine(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (batch, c, h, w, _) = image_dims("channel_affine", self.shape())?;
        if weight.shape() != [c] || bias.shape() != [c] {
            return Err(Error::mismatch("channel_affine", self.shape(), weight.shape()));
        }
        let plane = h * w;
        let (wd, bd) = (weight.data(), bias.data());
        let mut out = self.to_vec();
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                out[base..base + plane]
                    .iter_mut()
                    .for_each(|v| *v = wd[ch] * *v + bd[ch]);
            }
        }
        Ok(Tensor::from_op(
            "channel_affine",
            out,
            self.shape().to_vec(),
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g, p| {
                let x = p[0].data();
                let wd = p[1].data();
                let gx = p[0].requires_grad().then(|| {
                    let mut gx = g.to_vec();
                    for b in 0..batch {
                        for ch in 0..c {
                            let base = (b * c + ch) * plane;
                            gx[base..base + plane].iter_mut().for_each(|v| *v *= wd[ch]);
                        }
                    }
                    gx
                });
                let mut gw = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for b in 0..batch {
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        for i in base..base + plane {
                            gw[ch] += g[i] * x[i];
                            gb[ch] += g[i];
                        }
                    }
                }
                vec![gx, p[1].requires_grad().then_some(gw), p[2].requires_grad().then_some(gb)]
            }),
        ))
    }

    /// Mean over every `k×k` window at stride 1 with no padding; each output
    /// is the window sum divided by `k²`.
    pub fn box_mean(&self, k: usize) -> Result<Tensor> {
        let (batch, c, h, w, batched) = image_dims("box_mean", self.shape())?;
        if k == 0 || k > h || k > w {
            return Err(Error::shape("box_mean", format!("window {k} does not fit {h}x{w}")));
        }
        let (oh, ow) = (h - k + 1, w - k + 1);
        let inv = 1.0 / (k * k) as f64;
        let x = self.data();
        let planes = batch * c;
        let mut out = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for i in 0..k {
                        let row = p * h * w + (oy + i) * w + ox;
                        s += x[row..row + k].iter().sum::<f64>();
                    }
                    out[p * oh * ow + oy * ow + ox] = s * inv;
                }
            }
        }
        Ok(Tensor::from_op(
            "box_mean",
            out,
            image_shape(batched, batch, c, oh, ow),
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; planes * h * w];
                for p in 0..planes {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g[p * oh * ow + oy * ow + ox] * inv;
                            for i in 0..k {
                                let row = p * h * w + (oy + i) * w + ox;
                                gx[row..row + k].iter_mut().for_each(|v| *v += gv);
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 2, 2]).unwrap();
        let k = Tensor::ones(&[1, 1, 1, 1]);
        let b = Tensor::zeros(&[1]);
        let y = x.conv2d(&k, Some(&b), 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::ones(&[1, 3, 3]);
        let k = Tensor::ones(&[1, 1, 3, 3]);
        let y = x.conv2d(&k, None, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn output_extent_formula() {
        let x = Tensor::zeros(&[2, 7, 9]);
        let k = Tensor::zeros(&[3, 2, 3, 5]);
        let y = x.conv2d(&k, None, 2, 1).unwrap();
        // (7 + 2 - 3)/2 + 1 = 4, (9 + 2 - 5)/2 + 1 = 4
        assert_eq!(y.shape(), &[3, 4, 4]);
    }

    #[test]
    fn rejects_bad_kernels() {
        let x = Tensor::zeros(&[1, 2, 2]);
        assert!(x.conv2d(&Tensor::zeros(&[1, 1, 2, 2]), None, 1, 0).is_err());
        assert!(x.conv2d(&Tensor::zeros(&[1, 1, 5, 5]), None, 1, 0).is_err());
        assert!(x.conv2d(&Tensor::zeros(&[1, 2, 1, 1]), None, 1, 0).is_err());
    }

    #[test]
    fn batched_conv_matches_per_image() {
        let x = Tensor::new((0..2 * 2 * 4 * 4).map(|v| (v as f64).sin()).collect(), &[2, 2, 4, 4]).unwrap();
        let k = Tensor::new((0..3 * 2 * 9).map(|v| (v as f64 * 0.3).cos()).collect(), &[3, 2, 3, 3]).unwrap();
        let y = x.conv2d(&k, None, 1, 1).unwrap();
        for b in 0..2 {
            let xi = x.narrow(0, b, 1).unwrap().reshape(&[2, 4, 4]).unwrap();
            let yi = xi.conv2d(&k, None, 1, 1).unwrap();
            assert_eq!(&y.data()[b * 48..(b + 1) * 48], yi.data());
        }
    }

    #[test]
    fn box_mean_of_ones() {
        let y = Tensor::ones(&[2, 5, 5]).box_mean(3).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3]);
        assert!(y.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn channel_affine_values() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 1, 2]).unwrap();
        let w = Tensor::new(vec![2.0, -1.0], &[2]).unwrap();
        let b = Tensor::new(vec![0.5, 1.0], &[2]).unwrap();
        let y = x.channel_affine(&w, &b).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, -2.0, -3.0]);
    }
}
