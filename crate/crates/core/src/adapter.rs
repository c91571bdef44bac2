//! The statistical adapter block and its ablation variants.
//!
//! Patch tokens go through a bottleneck: a down projection to `C_a`
//! channels, a reshape to the spatial token grid, central-difference
//! token-map extraction, the soft histogram, the inverse reshape and an up
//! projection back to the model width. The result is fused with the input
//! tokens, by summation unless configured otherwise. The class token is
//! carried through untouched.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::cdc::{CdcConv, DEFAULT_THETA};
use crate::error::{Error, Result};
use crate::geometry::{grid_to_seq, seq_to_grid, TokenGrid, TokenSequence};
use crate::histogram::SoftHistogram;
use crate::module::{join, Linear, Module};
use crate::tensor::Tensor;

/// Default bottleneck width `C_a`.
pub const DEFAULT_BOTTLENECK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AdapterVariant {
    /// CDC token map followed by the soft histogram.
    Full,
    /// CDC token map only.
    NoHist,
    /// Plain 3×3 convolution (θ forced to 0), no histogram.
    NoHistNoCdc,
    /// Down projection, GELU, up projection.
    VanillaLinear,
    /// Vanilla bottleneck with CDC appended after the activation.
    LinearPlusCdc,
    /// Vanilla bottleneck with CDC and the histogram appended.
    LinearPlusCdcHist,
}

impl AdapterVariant {
    pub const ALL: [AdapterVariant; 6] = [
        AdapterVariant::Full,
        AdapterVariant::NoHist,
        AdapterVariant::NoHistNoCdc,
        AdapterVariant::VanillaLinear,
        AdapterVariant::LinearPlusCdc,
        AdapterVariant::LinearPlusCdcHist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdapterVariant::Full => "full",
            AdapterVariant::NoHist => "no_hist",
            AdapterVariant::NoHistNoCdc => "no_hist_no_cdc",
            AdapterVariant::VanillaLinear => "vanilla_linear",
            AdapterVariant::LinearPlusCdc => "linear_plus_cdc",
            AdapterVariant::LinearPlusCdcHist => "linear_plus_cdc_hist",
        }
    }

    fn has_conv(self) -> bool {
        !matches!(self, AdapterVariant::VanillaLinear)
    }

    fn has_hist(self) -> bool {
        matches!(self, AdapterVariant::Full | AdapterVariant::LinearPlusCdcHist)
    }

    fn has_activation(self) -> bool {
        matches!(
            self,
            AdapterVariant::VanillaLinear | AdapterVariant::LinearPlusCdc | AdapterVariant::LinearPlusCdcHist
        )
    }
}

impl fmt::Display for AdapterVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdapterVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AdapterVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown adapter variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fusion {
    /// `x + A(x)`
    Sum,
    /// `[x, A(x)]·W_fuse + b_fuse`, with `W_fuse` starting at `[I; 0]`.
    Concat,
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::Sum => "sum",
            Fusion::Concat => "concat",
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fusion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Fusion::Sum),
            "concat" => Ok(Fusion::Concat),
            _ => Err(Error::Config(format!("unknown fusion `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdapterConfig {
    pub bottleneck: usize,
    pub variant: AdapterVariant,
    pub fusion: Fusion,
    pub theta: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            bottleneck: DEFAULT_BOTTLENECK,
            variant: AdapterVariant::Full,
            fusion: Fusion::Sum,
            theta: DEFAULT_THETA,
        }
    }
}

/// Adapter output: fused tokens plus the token map used for style
/// regularization (`Z*` for convolutional variants, the activated
/// bottleneck grid otherwise).
#[derive(Clone, Debug)]
pub struct AdapterOutput {
    pub tokens: TokenSequence,
    pub token_map: Tensor,
}

#[derive(Clone, Debug)]
pub struct SAdapter {
    pub dim_down: Linear,
    pub cdc: Option<CdcConv>,
    pub hist: Option<SoftHistogram>,
    pub dim_up: Linear,
    pub fuse: Option<Linear>,
    variant: AdapterVariant,
    fusion: Fusion,
}

impl SAdapter {
    /// Small random down projection, zero up projection, so the adapted
    /// function starts out identical to the host.
    pub fn init<R: Rng + ?Sized>(model_width: usize, cfg: &AdapterConfig, rng: &mut R) -> Result<Self> {
        if cfg.bottleneck == 0 || model_width == 0 {
            return Err(Error::InvalidArgument("adapter widths must be positive".into()));
        }
        let ca = cfg.bottleneck;
        let dim_down = Linear::init(model_width, ca, 1.0 / (model_width as f64).sqrt(), rng);
        let cdc = if cfg.variant.has_conv() {
            let theta = if cfg.variant == AdapterVariant::NoHistNoCdc { 0.0 } else { cfg.theta };
            Some(CdcConv::init(ca, ca, theta, rng)?)
        } else {
            None
        };
        let hist = cfg.variant.has_hist().then(|| SoftHistogram::init(ca));
        let dim_up = Linear::zeros(ca, model_width);
        let fuse = match cfg.fusion {
            Fusion::Sum => None,
            Fusion::Concat => {
                let mut w = vec![0.0; 2 * model_width * model_width];
                for i in 0..model_width {
                    w[i * model_width + i] = 1.0;
                }
                Some(Linear {
                    weight: Tensor::param(w, &[2 * model_width, model_width])?,
                    bias: Tensor::zeros(&[model_width]).to_param(),
                })
            }
        };
        Ok(Self {
            dim_down,
            cdc,
            hist,
            dim_up,
            fuse,
            variant: cfg.variant,
            fusion: cfg.fusion,
        })
    }

    pub fn variant(&self) -> AdapterVariant {
        self.variant
    }

    pub fn fusion(&self) -> Fusion {
        self.fusion
    }

    pub fn model_width(&self) -> usize {
        self.dim_down.input_dim()
    }

    pub fn bottleneck(&self) -> usize {
        self.dim_down.output_dim()
    }

    /// Adapts the patch tokens of `x` and fuses them back in.
    pub fn apply(&self, x: &TokenSequence) -> Result<AdapterOutput> {
        if x.width() != self.model_width() {
            return Err(Error::shape(
                "adapter",
                format!("token width {} does not match model width {}", x.width(), self.model_width()),
            ));
        }
        let patches = x.patches()?;
        let mut down = self.dim_down.forward(&patches)?;
        if self.variant.has_activation() {
            down = down.gelu();
        }
        let bottleneck = TokenSequence::new(down, false, x.grid_h, x.grid_w)?;
        let mut grid = seq_to_grid(&bottleneck)?;
        if let Some(cdc) = &self.cdc {
            grid = cdc.forward(&grid)?;
        }
        let token_map = grid.grid.clone();
        if let Some(hist) = &self.hist {
            grid = hist.forward(&grid)?;
        }
        let branch = if self.cdc.is_some() {
            grid_to_seq(&TokenGrid {
                grid: grid.grid,
                class_token: None,
            })?
            .tokens
        } else {
            bottleneck.tokens
        };
        let up = self.dim_up.forward(&branch)?;
        let fused = match (&self.fuse, self.fusion) {
            (Some(fuse), Fusion::Concat) => {
                let axis = patches.rank() - 1;
                fuse.forward(&Tensor::concat(&[patches, up], axis)?)?
            }
            _ => patches.add(&up)?,
        };
        Ok(AdapterOutput {
            tokens: x.with_patches(fused)?,
            token_map,
        })
    }
}

impl Module for SAdapter {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.dim_down.visit(&join(prefix, "dim_down"), f);
        if let Some(cdc) = &self.cdc {
            f(&join(prefix, "cdc.kernel"), &cdc.kernel);
            f(&join(prefix, "cdc.bias"), &cdc.bias);
        }
        if let Some(hist) = &self.hist {
            f(&join(prefix, "hist.mu"), &hist.mu);
            f(&join(prefix, "hist.gamma"), &hist.gamma);
        }
        self.dim_up.visit(&join(prefix, "dim_up"), f);
        if let Some(fuse) = &self.fuse {
            fuse.visit(&join(prefix, "fuse"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.dim_down.visit_mut(&join(prefix, "dim_down"), f);
        if let Some(cdc) = &mut self.cdc {
            f(&join(prefix, "cdc.kernel"), &mut cdc.kernel);
            f(&join(prefix, "cdc.bias"), &mut cdc.bias);
        }
        if let Some(hist) = &mut self.hist {
            f(&join(prefix, "hist.mu"), &mut hist.mu);
            f(&join(prefix, "hist.gamma"), &mut hist.gamma);
        }
        self.dim_up.visit_mut(&join(prefix, "dim_up"), f);
        if let Some(fuse) = &mut self.fuse {
            fuse.visit_mut(&join(prefix, "fuse"), f);
        }
    }
}
