use super::Tensor;
use crate::error::{Error, Result};

type Binary = fn(f64, f64) -> f64;
type Unary = fn(f64) -> f64;

/// Which operand, if any, is a broadcast scalar.
#[derive(Clone, Copy)]
enum Broadcast {
    None,
    Lhs,
    Rhs,
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        Ok(Broadcast::None)
    } else if b.numel() == 1 {
        Ok(Broadcast::Rhs)
    } else if a.numel() == 1 {
        Ok(Broadcast::Lhs)
    } else {
        Err(Error::mismatch(op, a.shape(), b.shape()))
    }
}

/// Elementwise binary op with scalar-vs-tensor broadcasting. `da` and `db`
/// are the partial derivatives with respect to each operand.
fn binary(op: &'static str, a: &Tensor, b: &Tensor, f: Binary, da: Binary, db: Binary) -> Result<Tensor> {
    let kind = broadcast_kind(op, a, b)?;
    let (shape, n) = match kind {
        Broadcast::Lhs => (b.shape().to_vec(), b.numel()),
        _ => (a.shape().to_vec(), a.numel()),
    };
    let ad = a.data();
    let bd = b.data();
    let pick = move |i: usize| -> (f64, f64) {
        match kind {
            Broadcast::None => (ad[i], bd[i]),
            Broadcast::Lhs => (ad[0], bd[i]),
            Broadcast::Rhs => (ad[i], bd[0]),
        }
    };
    let data = (0..n).map(|i| {
        let (x, y) = pick(i);
        f(x, y)
    });
    let data: Vec<f64> = data.collect();
    Ok(Tensor::from_op(
        op,
        data,
        shape,
        vec![a.clone(), b.clone()],
        Box::new(move |g, p| {
            let (ad, bd) = (p[0].data(), p[1].data());
            let at = |i: usize| match kind {
                Broadcast::None => (ad[i], bd[i]),
                Broadcast::Lhs => (ad[0], bd[i]),
                Broadcast::Rhs => (ad[i], bd[0]),
            };
            let ga = p[0].requires_grad().then(|| {
                let full = g.iter().enumerate().map(|(i, gi)| {
                    let (x, y) = at(i);
                    gi * da(x, y)
                });
                match kind {
                    Broadcast::Lhs => vec![full.sum()],
                    _ => full.collect(),
                }
            });
            let gb = p[1].requires_grad().then(|| {
                let full = g.iter().enumerate().map(|(i, gi)| {
                    let (x, y) = at(i);
                    gi * db(x, y)
                });
                match kind {
                    Broadcast::Rhs => vec![full.sum()],
                    _ => full.collect(),
                }
            });
            vec![ga, gb]
        }),
    ))
}

/// Elementwise unary op; `df(x, y)` is the derivative given input and output.
fn unary(op: &'static str, x: &Tensor, f: Unary, df: Binary) -> Tensor {
    let out: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    let saved = out.clone();
    Tensor::from_op(
        op,
        out,
        x.shape().to_vec(),
        vec![x.clone()],
        Box::new(move |g, p| {
            let xd = p[0].data();
            let gx = g
                .iter()
                .zip(xd)
                .zip(&saved)
                .map(|((gi, &xv), &yv)| gi * df(xv, yv))
                .collect();
            vec![Some(gx)]
        }),
    )
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64, _y: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary("add", self, other, |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary("sub", self, other, |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary("mul", self, other, |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let out = self.data().iter().map(|v| v * s).collect();
        Tensor::from_op(
            "scale",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.iter().map(|v| v * s).collect())]),
        )
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let out = self.data().iter().map(|v| v + s).collect();
        Tensor::from_op(
            "add_scalar",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Tensor {
        unary("square", self, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn exp(&self) -> Tensor {
        unary("exp", self, f64::exp, |_, y| y)
    }

    /// GELU, tanh approximation (smooth, zero-preserving).
    pub fn gelu(&self) -> Tensor {
        unary("gelu", self, gelu, gelu_grad)
    }

    pub fn sum_all(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum_all",
            vec![s],
            vec![],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.data().iter().sum();
        let inv = 1.0 / n as f64;
        Tensor::from_op(
            "mean_all",
            vec![s * inv],
            vec![],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0] * inv; n])]),
        )
    }

    /// Squared Frobenius norm, the sum of squared entries.
    pub fn frobenius_sq(&self) -> Tensor {
        let s = self.data().iter().map(|v| v * v).sum();
        Tensor::from_op(
            "frobenius_sq",
            vec![s],
            vec![],
            vec![self.clone()],
            Box::new(|g, p| vec![Some(p[0].data().iter().map(|v| 2.0 * v * g[0]).collect())]),
        )
    }

    /// Adds `other` to every trailing block of `self`; `other.shape()` must
    /// equal the trailing dimensions of `self.shape()` (bias and positional
    /// embedding addition).
    pub fn add_trailing(&self, other: &Tensor) -> Result<Tensor> {
        let os = other.shape();
        let ss = self.shape();
        if os.len() > ss.len() || ss[ss.len() - os.len()..] != *os {
            return Err(Error::mismatch("add_trailing", ss, os));
        }
        let block = other.numel();
        let od = other.data();
        let out = self
            .data()
            .chunks(block)
            .flat_map(|c| c.iter().zip(od).map(|(a, b)| a + b))
            .collect();
        Ok(Tensor::from_op(
            "add_trailing",
            out,
            ss.to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(move |g, p| {
                let gx = p[0].requires_grad().then(|| g.to_vec());
                let gb = p[1].requires_grad().then(|| {
                    let mut acc = vec![0.0; block];
                    for c in g.chunks(block) {
                        acc.iter_mut().zip(c).for_each(|(a, b)| *a += b);
                    }
                    acc
                });
                vec![gx, gb]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::param(v.to_vec(), &[v.len()]).unwrap()
    }

    #[test]
    fn add_values() {
        let y = t(&[1.0, 2.0]).add(&t(&[3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let err = t(&[1.0, 2.0]).add(&t(&[1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { op: "add", .. }));
    }

    #[test]
    fn scale_by_zero_annihilates() {
        let x = t(&[1.5, -2.0]);
        let y = x.scale(0.0);
        assert_eq!(y.data(), &[0.0, 0.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn square_rule() {
        let x = t(&[3.0]);
        x.mul(&x).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn scalar_broadcast_sums_grad() {
        let x = t(&[1.0, 2.0, 3.0]);
        let s = Tensor::param(vec![2.0], &[1]).unwrap();
        let y = x.mul(&s).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(s.grad().unwrap(), vec![6.0]);
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0, 2.0]);
        let z = s.sub(&x).unwrap();
        assert_eq!(z.data(), &[1.0, 0.0, -1.0]);
    }

    #[test]
    fn frobenius_of_zeros() {
        assert_eq!(Tensor::zeros(&[3, 3]).frobenius_sq().item().unwrap(), 0.0);
    }

    #[test]
    fn gelu_is_zero_preserving() {
        let y = Tensor::zeros(&[2]).gelu();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn add_trailing_broadcasts_rows() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = t(&[10.0, 20.0]);
        let y = x.add_trailing(&b).unwrap();
        assert_eq!(y.data(), &[11.0, 22.0, 13.0, 24.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0]);
        assert!(x.add_trailing(&t(&[1.0, 2.0, 3.0])).is_err());
    }
}
