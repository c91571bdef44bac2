use super::{numel_of, Tensor};
use crate::error::{Error, Result};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Source offset for every output position of a permutation, in output order.
fn permute_map(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let src_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let step: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let n = numel_of(shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            off += step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= step[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    map
}

impl Tensor {
    /// Reinterprets the row-major data with a new shape of equal size.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::mismatch("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            "reshape",
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} is not a permutation of rank {r}")));
        }
        let map = permute_map(self.shape(), perm);
        let src = self.data();
        let out = map.iter().map(|&o| src[o]).collect();
        let out_shape = perm.iter().map(|&p| self.shape()[p]).collect();
        let n = self.numel();
        Ok(Tensor::from_op(
            "permute",
            out,
            out_shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; n];
                for (gi, &o) in g.iter().zip(&map) {
                    gx[o] = *gi;
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "narrow",
                format!("axis {axis} range {start}+{len} out of {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let src = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let n = self.numel();
        Ok(Tensor::from_op(
            "narrow",
            out,
            out_shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; n];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let shape = first.shape();
        if axis >= shape.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of rank {}", shape.len())));
        }
        for p in parts {
            let ps = p.shape();
            if ps.len() != shape.len()
                || ps.iter().zip(shape).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::mismatch("concat", shape, ps));
            }
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = total / inner;
        Ok(Tensor::from_op(
            "concat",
            out,
            out_shape,
            parts.to_vec(),
            Box::new(move |g, ps| {
                let mut offset = 0;
                let mut grads = Vec::with_capacity(ps.len());
                for (p, &w) in ps.iter().zip(&widths) {
                    grads.push(p.requires_grad().then(|| {
                        let mut gp = Vec::with_capacity(outer * w);
                        for o in 0..outer {
                            let base = o * total + offset;
                            gp.extend_from_slice(&g[base..base + w]);
                        }
                        gp
                    }));
                    offset += w;
                }
                grads
            }),
        ))
    }

    /// Gathers entries of the leading axis; gradient scatter-adds back.
    pub fn index_select(&self, indices: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        if shape.is_empty() || indices.is_empty() || indices.iter().any(|&i| i >= shape[0]) {
            return Err(Error::shape(
                "index_select",
                format!("indices {indices:?} out of leading extent of {shape:?}"),
            ));
        }
        let inner: usize = shape[1..].iter().product();
        let src = self.data();
        let mut out = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            out.extend_from_slice(&src[i * inner..(i + 1) * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[0] = indices.len();
        let idx = indices.to_vec();
        let n = self.numel();
        Ok(Tensor::from_op(
            "index_select",
            out,
            out_shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; n];
                for (k, &i) in idx.iter().enumerate() {
                    gx[i * inner..(i + 1) * inner]
                        .iter_mut()
                        .zip(&g[k * inner..(k + 1) * inner])
                        .for_each(|(a, b)| *a += b);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Stacks `n` copies along a new leading axis.
    pub fn expand_leading(&self, n: usize) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::shape("expand_leading", "zero copies"));
        }
        let block = self.numel();
        let mut out = Vec::with_capacity(n * block);
        for _ in 0..n {
            out.extend_from_slice(self.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(self.shape());
        Ok(Tensor::from_op(
            "expand_leading",
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; block];
                for c in g.chunks(block) {
                    gx.iter_mut().zip(c).for_each(|(a, b)| *a += b);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Zero-fills `pad` positions on each side of the last two axes.
    pub fn pad2d(&self, pad: usize) -> Result<Tensor> {
        let shape = self.shape();
        let r = shape.len();
        if r < 2 {
            return Err(Error::shape("pad2d", "rank < 2"));
        }
        if pad == 0 {
            return Ok(self.clone());
        }
        let (h, w) = (shape[r - 2], shape[r - 1]);
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let planes: usize = shape[..r - 2].iter().product();
        let src = self.data();
        let mut out = vec![0.0; planes * ph * pw];
        for p in 0..planes {
            for i in 0..h {
                let dst = p * ph * pw + (i + pad) * pw + pad;
                out[dst..dst + w].copy_from_slice(&src[p * h * w + i * w..p * h * w + (i + 1) * w]);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[r - 2] = ph;
        out_shape[r - 1] = pw;
        Ok(Tensor::from_op(
            "pad2d",
            out,
            out_shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; planes * h * w];
                for p in 0..planes {
                    for i in 0..h {
                        let s = p * ph * pw + (i + pad) * pw + pad;
                        gx[p * h * w + i * w..p * h * w + (i + 1) * w].copy_from_slice(&g[s..s + w]);
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

    fn iota(shape: &[usize]) -> Tensor {
        Tensor::param((0..numel_of(shape)).map(|v| v as f64).collect(), shape).unwrap()
    }

    #[test]
    fn permute_2d_is_transpose() {
        let x = iota(&[2, 3]);
        let y = x.permute(&[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(x.permute(&[0, 0]).is_err());
    }

    #[test]
    fn permute_3d_index() {
        let x = iota(&[2, 3, 4]);
        let y = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        // y[d, a, b] = x[a, b, d]
        for a in 0..2 {
            for b in 0..3 {
                for d in 0..4 {
                    assert_eq!(y.data()[d * 6 + a * 3 + b], x.data()[a * 12 + b * 4 + d]);
                }
            }
        }
    }

    #[test]
    fn narrow_concat_roundtrip() {
        let x = iota(&[2, 5, 3]);
        let a = x.narrow(1, 0, 2).unwrap();
        let b = x.narrow(1, 2, 3).unwrap();
        let y = Tensor::concat(&[a, b], 1).unwrap();
        assert_eq!(y.data(), x.data());
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 30]);
    }

    #[test]
    fn index_select_scatters_only_selected_rows() {
        let x = iota(&[4, 2]);
        let y = x.index_select(&[2, 0, 2]).unwrap();
        assert_eq!(y.data(), &[4.0, 5.0, 0.0, 1.0, 4.0, 5.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0]);
        assert!(x.index_select(&[4]).is_err());
    }

    #[test]
    fn pad_adds_zero_border() {
        let x = iota(&[1, 2, 2]);
        let y = x.pad2d(1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4]);
        assert_eq!(&y.data()[4..8], &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(y.data().iter().sum::<f64>(), 6.0);
    }

    #[test]
    fn expand_leading_sums_grad() {
        let x = iota(&[2]);
        let y = x.expand_leading(3).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0, 3.0]);
    }
}
