//! Analytic parameter and multiply-accumulate accounting.
//!
//! Convolutions count one MAC per kernel tap per output element, matrix
//! products `m·k·n`. Elementwise work (activations, exponentials, norms)
//! is not counted.

use std::fmt;

use crate::adapter::{AdapterConfig, AdapterVariant, Fusion};
use crate::histogram::WINDOW;
use crate::vit::ViTConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Cost {
    pub params: u64,
    pub macs: u64,
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost {
            params: self.params + o.params,
            macs: self.macs + o.macs,
        }
    }
}

fn linear(tokens: u64, input: u64, output: u64) -> Cost {
    Cost {
        params: input * output + output,
        macs: tokens * input * output,
    }
}

/// Backbone cost for one image.
pub fn backbone_cost(cfg: &ViTConfig) -> Cost {
    let w = cfg.width as u64;
    let t = cfg.token_count() as u64;
    let p = cfg.patch_count() as u64;
    let h = cfg.hidden() as u64;
    let norm = Cost { params: 2 * w, macs: 0 };
    let mut c = linear(p, cfg.patch_dim() as u64, w)
        + Cost {
            params: w + t * w,
            macs: 0,
        };
    let attention = Cost {
        params: 0,
        macs: 2 * t * t * w,
    };
    let block = norm
        + linear(t, w, w)
        + linear(t, w, w)
        + linear(t, w, w)
        + linear(t, w, w)
        + attention
        + norm
        + linear(t, w, h)
        + linear(t, h, w);
    for _ in 0..cfg.depth {
        c = c + block;
    }
    c + norm + linear(1, w, cfg.classes as u64)
}

/// Cost of one adapter applied to the patch tokens of one image.
pub fn adapter_cost(vit: &ViTConfig, a: &AdapterConfig) -> Cost {
    let w = vit.width as u64;
    let p = vit.patch_count() as u64;
    let ca = a.bottleneck as u64;
    let taps = (WINDOW * WINDOW) as u64;
    let mut c = linear(p, w, ca) + linear(p, ca, w);
    let conv = !matches!(a.variant, AdapterVariant::VanillaLinear);
    let hist = matches!(a.variant, AdapterVariant::Full | AdapterVariant::LinearPlusCdcHist);
    if conv {
        // Plain taps plus the centre term of the difference operator.
        c = c + Cost {
            params: taps * ca * ca + ca,
            macs: taps * ca * ca * p + ca * ca * p,
        };
    }
    if hist {
        let g = vit.grid_side() as u64 + 2;
        c = c + Cost {
            params: 2 * ca,
            macs: 2 * ca * g * g + taps * ca * p,
        };
    }
    if a.fusion == Fusion::Concat {
        c = c + linear(p, 2 * w, w);
    }
    c
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub preset: String,
    pub backbone: Cost,
    /// Two adapters per block.
    pub adapters: Cost,
}

impl ParamReport {
    pub fn new(preset: &str, vit: &ViTConfig, a: &AdapterConfig) -> Self {
        let one = adapter_cost(vit, a);
        let n = 2 * vit.depth as u64;
        Self {
            preset: preset.to_string(),
            backbone: backbone_cost(vit),
            adapters: Cost {
                params: one.params * n,
                macs: one.macs * n,
            },
        }
    }

    pub fn param_ratio(&self) -> f64 {
        self.adapters.params as f64 / self.backbone.params as f64
    }

    pub fn mac_ratio(&self) -> f64 {
        self.adapters.macs as f64 / self.backbone.macs as f64
    }

    pub const CSV_HEADER: &'static str =
        "preset,backbone_params,adapter_params,param_increment_pct,backbone_macs,adapter_macs,mac_increment_pct";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.4},{},{},{:.4}",
            self.preset,
            self.backbone.params,
            self.adapters.params,
            100.0 * self.param_ratio(),
            self.backbone.macs,
            self.adapters.macs,
            100.0 * self.mac_ratio()
        )
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "preset {}", self.preset)?;
        writeln!(f, "{:<10} {:>14} {:>16}", "", "params", "MACs")?;
        writeln!(f, "{:<10} {:>14} {:>16}", "backbone", self.backbone.params, self.backbone.macs)?;
        writeln!(f, "{:<10} {:>14} {:>16}", "adapters", self.adapters.params, self.adapters.macs)?;
        write!(
            f,
            "{:<10} {:>13.3}% {:>15.3}%",
            "increment",
            100.0 * self.param_ratio(),
            100.0 * self.mac_ratio()
        )
    }
}
