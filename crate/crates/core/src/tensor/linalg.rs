use super::Tensor;
use crate::error::{Error, Result};

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            row.iter_mut().zip(brow).for_each(|(o, bv)| *o += av * bv);
        }
    }
}

/// `out[m×k] += g[m×n] · bᵀ` where `b` is `k×n`.
fn gemm_nt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×n] += aᵀ · g` where `a` is `m×k` and `g` is `m×n`.
fn gemm_tn(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            orow.iter_mut().zip(grow).for_each(|(o, gv)| *o += av * gv);
        }
    }
}

impl Tensor {
    /// Matrix product of `[m×k]·[k×n]`, or a batched product of
    /// `[g×m×k]·[g×k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (batch, m, k, n) = match (self.shape(), other.shape()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([g, m, k], [g2, k2, n]) if g == g2 && k == k2 => (*g, *m, *k, *n),
            (a, b) => return Err(Error::mismatch("matmul", a, b)),
        };
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            gemm_nn(
                &self.data()[bi * m * k..(bi + 1) * m * k],
                &other.data()[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let shape = if self.rank() == 2 { vec![m, n] } else { vec![batch, m, n] };
        Ok(Tensor::from_op(
            "matmul",
            out,
            shape,
            vec![self.clone(), other.clone()],
            Box::new(move |g, p| {
                let (a, b) = (p[0].data(), p[1].data());
                let ga = p[0].requires_grad().then(|| {
                    let mut ga = vec![0.0; batch * m * k];
                    for bi in 0..batch {
                        gemm_nt(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &b[bi * k * n..(bi + 1) * k * n],
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                    ga
                });
                let gb = p[1].requires_grad().then(|| {
                    let mut gb = vec![0.0; batch * k * n];
                    for bi in 0..batch {
                        gemm_tn(
                            &a[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut gb[bi * k * n..(bi + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::shape("transpose", "rank < 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    /// `x·w + b` for `x[m×k]`, `w[k×n]`, `b[n]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let y = self.matmul(weight)?;
        match bias {
            Some(b) => y.add_trailing(b),
            None => Ok(y),
        }
    }
}
