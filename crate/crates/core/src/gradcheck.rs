//! Central finite-difference oracle for reverse-mode gradients.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{no_grad, Tensor};

/// Default perturbation for 64-bit checks.
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_relative_error: f64,
    pub element_count: usize,
    pub tolerance: f64,
    pub pass: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<32} {:>6} elems  max rel err {:.3e}  tol {:.0e}  {}",
            self.op_name,
            self.element_count,
            self.max_relative_error,
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares the reverse-mode gradient of scalar `f` at `x` with central
/// differences `(f(x+eps·eᵢ) − f(x−eps·eᵢ)) / 2eps` for every element.
pub fn finite_difference_check<F>(op_name: &str, f: F, x: &Tensor, eps: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("gradcheck eps must be positive, got {eps}")));
    }
    let probe = Tensor::param(x.to_vec(), x.shape())?;
    let out = f(&probe)?;
    if out.numel() != 1 {
        return Err(Error::shape(
            "finite_difference_check",
            format!("function output must be scalar, got {:?}", out.shape()),
        ));
    }
    out.backward()?;
    let analytic = probe.grad().unwrap_or_else(|| vec![0.0; probe.numel()]);

    let eval = |data: Vec<f64>| -> Result<f64> {
        let t = Tensor::new(data, x.shape())?;
        no_grad(|| f(&t))?.item()
    };
    let base = x.to_vec();
    let mut max_rel: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        max_rel = max_rel.max(relative_error(a, numeric));
    }
    Ok(GradCheckReport {
        op_name: op_name.to_string(),
        max_relative_error: max_rel,
        element_count: base.len(),
        tolerance,
        pass: max_rel < tolerance,
    })
}
