//! Finite-difference checks for every differentiable op and for the
//! composed adapter.
//!
//! Each case reduces the op output to a scalar with a fixed random weight
//! tensor, so every output element contributes to the checked gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::{AdapterConfig, AdapterVariant, Fusion, SAdapter};
use crate::cdc::{central_difference, CdcConv};
use crate::error::Result;
use crate::geometry::{TokenGrid, TokenSequence};
use crate::gradcheck::{finite_difference_check, GradCheckReport, DEFAULT_EPS};
use crate::histogram::SoftHistogram;
use crate::module::{Linear, Module};
use crate::objective::{gram_tensor, total_loss, tsr_average, tsr_pair, TsrMode};
use crate::tensor::{no_grad, Tensor};
use crate::vit::Attention;

pub const OP_TOLERANCE: f64 = 1e-5;
pub const COMPOSED_TOLERANCE: f64 = 1e-4;

struct Suite {
    rng: ChaCha8Rng,
    reports: Vec<GradCheckReport>,
}

impl Suite {
    fn randn(&mut self, shape: &[usize]) -> Tensor {
        Tensor::randn(shape, 1.0, &mut self.rng)
    }

    fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        Tensor::uniform(shape, lo, hi, &mut self.rng)
    }

    fn check<F>(&mut self, name: &str, x: &Tensor, tol: f64, f: F) -> Result<()>
    where
        F: Fn(&Tensor) -> Result<Tensor>,
    {
        let probe = no_grad(|| f(x))?;
        let weights = Tensor::randn(probe.shape(), 1.0, &mut self.rng);
        let objective = |t: &Tensor| Ok(f(t)?.mul(&weights)?.sum_all());
        let report = finite_difference_check(name, objective, x, DEFAULT_EPS, tol)?;
        self.reports.push(report);
        Ok(())
    }
}

fn elementwise(s: &mut Suite) -> Result<()> {
    let a = s.randn(&[3, 4]);
    let b = s.randn(&[3, 4]);
    let (b1, b2) = (b.clone(), b.clone());
    s.check("add", &a, OP_TOLERANCE, move |x| x.add(&b1))?;
    s.check("sub", &a, OP_TOLERANCE, move |x| b2.sub(x))?;
    let b3 = b.clone();
    s.check("mul", &a, OP_TOLERANCE, move |x| x.mul(&b3))?;
    s.check("mul_self", &a, OP_TOLERANCE, |x| x.mul(x))?;
    let sc = Tensor::scalar(1.7);
    s.check("mul_scalar_broadcast", &a, OP_TOLERANCE, move |x| x.mul(&sc))?;
    let m = a.clone();
    let scalar = s.randn(&[]);
    s.check("scalar_times_tensor", &scalar, OP_TOLERANCE, move |k| m.mul(k))?;
    s.check("scale", &a, OP_TOLERANCE, |x| Ok(x.scale(-0.3)))?;
    s.check("add_scalar", &a, OP_TOLERANCE, |x| Ok(x.add_scalar(2.0)))?;
    s.check("neg", &a, OP_TOLERANCE, |x| Ok(x.neg()))?;
    s.check("square", &a, OP_TOLERANCE, |x| Ok(x.square()))?;
    s.check("exp", &a, OP_TOLERANCE, |x| Ok(x.exp()))?;
    s.check("gelu", &a, OP_TOLERANCE, |x| Ok(x.gelu()))?;
    s.check("sum_all", &a, OP_TOLERANCE, |x| Ok(x.sum_all()))?;
    s.check("mean_all", &a, OP_TOLERANCE, |x| Ok(x.mean_all()))?;
    s.check("frobenius_sq", &a, OP_TOLERANCE, |x| Ok(x.frobenius_sq()))?;
    let x3 = s.randn(&[2, 3, 4]);
    let row = s.randn(&[3, 4]);
    let bias = row.clone();
    s.check("add_trailing", &x3, OP_TOLERANCE, move |x| x.add_trailing(&bias))?;
    s.check("add_trailing_rhs", &row, OP_TOLERANCE, move |r| x3.add_trailing(r))
}

fn linalg(s: &mut Suite) -> Result<()> {
    let a = s.randn(&[3, 4]);
    let b = s.randn(&[4, 5]);
    let (bb, aa) = (b.clone(), a.clone());
    s.check("matmul_lhs", &a, OP_TOLERANCE, move |x| x.matmul(&bb))?;
    s.check("matmul_rhs", &b, OP_TOLERANCE, move |x| aa.matmul(x))?;
    let a3 = s.randn(&[2, 3, 4]);
    let b3 = s.randn(&[2, 4, 2]);
    let (bb3, aa3) = (b3.clone(), a3.clone());
    s.check("matmul_batched_lhs", &a3, OP_TOLERANCE, move |x| x.matmul(&bb3))?;
    s.check("matmul_batched_rhs", &b3, OP_TOLERANCE, move |x| aa3.matmul(x))?;
    s.check("transpose", &a3, OP_TOLERANCE, |x| x.transpose())?;
    let w = s.randn(&[4, 3]);
    let bias = s.randn(&[3]);
    let (w1, b1) = (w.clone(), bias.clone());
    s.check("linear_input", &a, OP_TOLERANCE, move |x| x.linear(&w1, Some(&b1)))?;
    let (a1, b2) = (a.clone(), bias.clone());
    s.check("linear_weight", &w, OP_TOLERANCE, move |x| a1.linear(x, Some(&b2)))?;
    let (a2, w2) = (a.clone(), w.clone());
    s.check("linear_bias", &bias, OP_TOLERANCE, move |x| a2.linear(&w2, Some(x)))
}

fn shape_ops(s: &mut Suite) -> Result<()> {
    let a = s.randn(&[2, 3, 4]);
    s.check("reshape", &a, OP_TOLERANCE, |x| x.reshape(&[6, 4]))?;
    s.check("permute", &a, OP_TOLERANCE, |x| x.permute(&[2, 0, 1]))?;
    s.check("narrow", &a, OP_TOLERANCE, |x| x.narrow(2, 1, 2))?;
    let other = s.randn(&[2, 2, 4]);
    s.check("concat", &a, OP_TOLERANCE, move |x| Tensor::concat(&[other.clone(), x.clone()], 1))?;
    s.check("index_select", &a, OP_TOLERANCE, |x| x.index_select(&[1, 1, 0]))?;
    let row = s.randn(&[3, 4]);
    s.check("expand_leading", &row, OP_TOLERANCE, |x| x.expand_leading(3))?;
    let img = s.randn(&[2, 3, 3]);
    s.check("pad2d", &img, OP_TOLERANCE, |x| x.pad2d(1))
}

fn nn_ops(s: &mut Suite) -> Result<()> {
    let a = s.randn(&[3, 5]);
    s.check("softmax_lastdim", &a, OP_TOLERANCE, |x| x.softmax_lastdim())?;
    let gain = s.uniform(&[5], 0.5, 1.5);
    let shift = s.randn(&[5]);
    let (g1, s1) = (gain.clone(), shift.clone());
    s.check("layernorm_input", &a, OP_TOLERANCE, move |x| x.layernorm(&g1, &s1, 1e-6))?;
    let (a1, s2) = (a.clone(), shift.clone());
    s.check("layernorm_gain", &gain, OP_TOLERANCE, move |g| a1.layernorm(g, &s2, 1e-6))?;
    let (a2, g2) = (a.clone(), gain.clone());
    s.check("layernorm_shift", &shift, OP_TOLERANCE, move |b| a2.layernorm(&g2, b, 1e-6))?;
    let logits = s.randn(&[4, 2]);
    s.check("cross_entropy", &logits, OP_TOLERANCE, |x| x.cross_entropy(&[0, 1, 1, 0]))?;
    let x = s.randn(&[2, 5, 8]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let attn = Attention::init(8, 2, &mut rng);
    s.check("attention", &x, OP_TOLERANCE, move |t| attn.forward(t))
}

fn conv_ops(s: &mut Suite) -> Result<()> {
    let x = s.randn(&[2, 5, 5]);
    let k = s.randn(&[3, 2, 3, 3]);
    let bias = s.randn(&[3]);
    let (k1, b1) = (k.clone(), bias.clone());
    s.check("conv2d_input", &x, OP_TOLERANCE, move |t| t.conv2d(&k1, Some(&b1), 1, 1))?;
    let (x1, b2) = (x.clone(), bias.clone());
    s.check("conv2d_kernel", &k, OP_TOLERANCE, move |t| x1.conv2d(t, Some(&b2), 1, 1))?;
    let (x2, k2) = (x.clone(), k.clone());
    s.check("conv2d_bias", &bias, OP_TOLERANCE, move |t| x2.conv2d(&k2, Some(t), 1, 1))?;
    let xb = s.randn(&[2, 2, 4, 4]);
    let k3 = k.clone();
    s.check("conv2d_batched_stride2", &xb, OP_TOLERANCE, move |t| t.conv2d(&k3, None, 2, 1))?;
    let k4 = k.clone();
    s.check("central_difference_input", &x, OP_TOLERANCE, move |t| central_difference(t, &k4))?;
    let x3 = x.clone();
    s.check("central_difference_kernel", &k, OP_TOLERANCE, move |t| central_difference(&x3, t))?;
    let w = s.uniform(&[2], 0.5, 1.5);
    let b = s.randn(&[2]);
    let (w1, bb1) = (w.clone(), b.clone());
    s.check("channel_affine_input", &x, OP_TOLERANCE, move |t| t.channel_affine(&w1, &bb1))?;
    let (x4, bb2) = (x.clone(), b.clone());
    s.check("channel_affine_weight", &w, OP_TOLERANCE, move |t| x4.channel_affine(t, &bb2))?;
    let (x5, w2) = (x.clone(), w.clone());
    s.check("channel_affine_bias", &b, OP_TOLERANCE, move |t| x5.channel_affine(&w2, t))?;
    s.check("box_mean", &x, OP_TOLERANCE, |t| t.box_mean(3))
}

fn method_ops(s: &mut Suite) -> Result<()> {
    let x = s.randn(&[2, 4, 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cdc = CdcConv::init(2, 3, 0.7, &mut rng)?;
    let c1 = cdc.clone();
    s.check("cdc_input", &x, OP_TOLERANCE, move |t| c1.forward_tensor(t))?;
    let c2 = cdc.clone();
    let x1 = x.clone();
    s.check("cdc_kernel", &cdc.kernel, OP_TOLERANCE, move |k| {
        CdcConv::new(k.clone(), c2.bias.clone(), c2.theta())?.forward_tensor(&x1)
    })?;

    let mu = s.uniform(&[2], -0.5, 0.5);
    let gamma = s.uniform(&[2], 0.5, 1.5);
    let h = SoftHistogram::new(mu.clone(), gamma.clone())?;
    s.check("soft_histogram_input", &x, OP_TOLERANCE, move |t| h.forward_tensor(t))?;
    let (x2, g2) = (x.clone(), gamma.clone());
    s.check("soft_histogram_mu", &mu, OP_TOLERANCE, move |m| {
        SoftHistogram::new(m.clone(), g2.clone())?.forward_tensor(&x2)
    })?;
    let (x3, m3) = (x.clone(), mu.clone());
    s.check("soft_histogram_gamma", &gamma, OP_TOLERANCE, move |g| {
        SoftHistogram::new(m3.clone(), g.clone())?.forward_tensor(&x3)
    })?;

    s.check("gram", &x, OP_TOLERANCE, |t| Ok(gram_tensor(t)?.0))?;
    let z2 = s.randn(&[2, 4, 4]);
    s.check("tsr_pair", &x, OP_TOLERANCE, move |t| {
        tsr_pair(
            &TokenGrid {
                grid: t.clone(),
                class_token: None,
            },
            &TokenGrid {
                grid: z2.clone(),
                class_token: None,
            },
        )
    })?;
    let maps = s.randn(&[6, 2, 3, 3]);
    let labels = [0u8, 1, 0, 0, 1, 0];
    let domains = [0usize, 0, 1, 1, 2, 2];
    for mode in [TsrMode::Aggregate, TsrMode::PerExample] {
        s.check(&format!("tsr_average_{mode}"), &maps, OP_TOLERANCE, move |t| {
            Ok(tsr_average(t, &labels, &domains, mode)?.loss)
        })?;
    }
    let logits = s.randn(&[6, 2]);
    let tsr = s.uniform(&[], 0.1, 1.0);
    let t1 = tsr.clone();
    s.check("total_loss_logits", &logits, OP_TOLERANCE, move |l| total_loss(l, &labels, &t1, 0.1))?;
    s.check("total_loss_tsr", &tsr, OP_TOLERANCE, move |t| total_loss(&logits, &labels, t, 0.1))
}

/// Adapter with random (nonzero) up projection so that every parameter
/// influences the output.
fn live_adapter(width: usize, variant: AdapterVariant, fusion: Fusion, rng: &mut ChaCha8Rng) -> Result<SAdapter> {
    let cfg = AdapterConfig {
        bottleneck: 4,
        variant,
        fusion,
        theta: 0.7,
    };
    let mut a = SAdapter::init(width, &cfg, rng)?;
    a.dim_up = Linear::init(4, width, 0.5, rng);
    if let Some(h) = &mut a.hist {
        h.mu = Tensor::uniform(&[4], -0.3, 0.3, rng).to_param();
        h.gamma = Tensor::uniform(&[4], 0.6, 1.4, rng).to_param();
    }
    if let Some(f) = &mut a.fuse {
        f.weight = Tensor::randn(f.weight.shape(), 0.3, rng).to_param();
    }
    Ok(a)
}

fn with_param(a: &SAdapter, name: &str, value: &Tensor) -> SAdapter {
    let mut a = a.clone();
    a.visit_mut("", &mut |n, t| {
        if n == name {
            *t = value.clone();
        }
    });
    a
}

fn composed(s: &mut Suite) -> Result<()> {
    let width = 6;
    let (gh, gw) = (3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(s.rng_seed());
    for variant in [AdapterVariant::Full, AdapterVariant::VanillaLinear, AdapterVariant::LinearPlusCdcHist] {
        for fusion in [Fusion::Sum, Fusion::Concat] {
            let adapter = live_adapter(width, variant, fusion, &mut rng)?;
            let tokens = s.randn(&[1 + gh * gw, width]);
            let a1 = adapter.clone();
            s.check(&format!("adapter_{variant}_{fusion}_tokens"), &tokens, COMPOSED_TOLERANCE, move |t| {
                Ok(a1.apply(&TokenSequence::new(t.clone(), true, gh, gw)?)?.tokens.tokens)
            })?;
            for (name, value) in adapter.named_parameters() {
                let a2 = adapter.clone();
                let tk = tokens.clone();
                let n2 = name.clone();
                s.check(&format!("adapter_{variant}_{fusion}_{name}"), &value, COMPOSED_TOLERANCE, move |p| {
                    let a = with_param(&a2, &n2, p);
                    Ok(a.apply(&TokenSequence::new(tk.clone(), true, gh, gw)?)?.tokens.tokens)
                })?;
            }
        }
    }
    let adapter = live_adapter(width, AdapterVariant::Full, Fusion::Sum, &mut rng)?;
    let tokens = s.randn(&[1 + gh * gw, width]);
    s.check("adapter_full_mean", &tokens, COMPOSED_TOLERANCE, move |t| {
        Ok(adapter.apply(&TokenSequence::new(t.clone(), true, gh, gw)?)?.tokens.tokens.mean_all())
    })
}

impl Suite {
    fn rng_seed(&mut self) -> u64 {
        use rand::Rng;
        self.rng.random()
    }
}

/// Runs every check with inputs drawn from `seed`.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        reports: Vec::new(),
    };
    elementwise(&mut s)?;
    linalg(&mut s)?;
    shape_ops(&mut s)?;
    nn_ops(&mut s)?;
    conv_ops(&mut s)?;
    method_ops(&mut s)?;
    composed(&mut s)?;
    Ok(s.reports)
}

pub fn all_pass(reports: &[GradCheckReport]) -> bool {
    reports.iter().all(|r| r.pass)
}
