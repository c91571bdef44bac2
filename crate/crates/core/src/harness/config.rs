//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors.
//! Command-line overrides use the same keys and are applied afterwards.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::adapter::{AdapterConfig, AdapterVariant, Fusion, DEFAULT_BOTTLENECK};
use crate::cdc::DEFAULT_THETA;
use crate::error::{Error, Result};
use crate::objective::{TsrMode, DEFAULT_LAMBDA};
use crate::synth::{SplitSizes, SynthProtocol};
use crate::vit::ViTConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub variant: AdapterVariant,
    pub fusion: Fusion,
    pub bottleneck: usize,
    pub theta: f64,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub n_domains: usize,
    pub held_out: usize,
    pub few_shot_k: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub tsr_mode: TsrMode,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: "toy".into(),
            variant: AdapterVariant::Full,
            fusion: Fusion::Sum,
            bottleneck: DEFAULT_BOTTLENECK,
            theta: DEFAULT_THETA,
            lambda: DEFAULT_LAMBDA,
            lr: 1e-4,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            n_domains: 4,
            held_out: 0,
            few_shot_k: 0,
            train_per_class: 48,
            val_per_class: 16,
            test_per_class: 64,
            tsr_mode: TsrMode::Aggregate,
            out: PathBuf::from("runs/default"),
        }
    }
}

pub const KEYS: [&str; 18] = [
    "preset",
    "variant",
    "fusion",
    "bottleneck",
    "theta",
    "lambda",
    "lr",
    "epochs",
    "batch_size",
    "seed",
    "n_domains",
    "held_out",
    "few_shot_k",
    "train_per_class",
    "val_per_class",
    "test_per_class",
    "tsr_mode",
    "out",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "preset" => self.preset = v.to_string(),
            "variant" => self.variant = v.parse()?,
            "fusion" => self.fusion = v.parse()?,
            "bottleneck" => self.bottleneck = num(key, v)?,
            "theta" => self.theta = num(key, v)?,
            "lambda" => self.lambda = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "n_domains" => self.n_domains = num(key, v)?,
            "held_out" => self.held_out = num(key, v)?,
            "few_shot_k" => self.few_shot_k = num(key, v)?,
            "train_per_class" => self.train_per_class = num(key, v)?,
            "val_per_class" => self.val_per_class = num(key, v)?,
            "test_per_class" => self.test_per_class = num(key, v)?,
            "tsr_mode" => self.tsr_mode = v.parse()?,
            "out" => self.out = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!("theta must be in [0, 1], got {}", self.theta)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.bottleneck == 0 {
            return Err(Error::Config("epochs, batch_size and bottleneck must be positive".into()));
        }
        if self.train_per_class == 0 || self.val_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config("split sizes must be positive".into()));
        }
        ViTConfig::preset(&self.preset)?;
        self.protocol()?;
        Ok(())
    }

    pub fn vit(&self) -> Result<ViTConfig> {
        ViTConfig::preset(&self.preset)
    }

    pub fn adapter(&self) -> AdapterConfig {
        AdapterConfig {
            bottleneck: self.bottleneck,
            variant: self.variant,
            fusion: self.fusion,
            theta: self.theta,
        }
    }

    /// Preset domain styles, reseeded per run seed.
    pub fn protocol(&self) -> Result<SynthProtocol> {
        let mut p = SynthProtocol::leave_one_out(self.n_domains, self.held_out, self.few_shot_k)?;
        for d in &mut p.domains {
            d.seed = d.seed.wrapping_add(self.seed.wrapping_mul(0x9e37_79b9));
        }
        Ok(p)
    }

    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.train_per_class,
            val: self.val_per_class,
            test: self.test_per_class,
        }
    }

    fn value(&self, key: &str) -> String {
        match key {
            "preset" => self.preset.clone(),
            "variant" => self.variant.to_string(),
            "fusion" => self.fusion.to_string(),
            "bottleneck" => self.bottleneck.to_string(),
            "theta" => self.theta.to_string(),
            "lambda" => self.lambda.to_string(),
            "lr" => self.lr.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "seed" => self.seed.to_string(),
            "n_domains" => self.n_domains.to_string(),
            "held_out" => self.held_out.to_string(),
            "few_shot_k" => self.few_shot_k.to_string(),
            "train_per_class" => self.train_per_class.to_string(),
            "val_per_class" => self.val_per_class.to_string(),
            "test_per_class" => self.test_per_class.to_string(),
            "tsr_mode" => self.tsr_mode.to_string(),
            "out" => self.out.display().to_string(),
            _ => unreachable!("key list is fixed"),
        }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in KEYS {
            writeln!(f, "{k} = {}", self.value(k))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.lr, c.theta, c.lambda, c.batch_size, c.epochs), (1e-4, 0.7, 0.1, 32, 20));
        c.validate().unwrap();
    }

    #[test]
    fn display_parses_back() {
        let mut c = RunConfig::default();
        c.apply_overrides(&["variant=no_hist".into(), "lambda=0".into(), "fusion=concat".into()])
            .unwrap();
        assert_eq!(RunConfig::parse(&c.to_string()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("theta 0.3").is_err());
        assert!(RunConfig::parse("nope = 1").is_err());
        assert!(RunConfig::parse("epochs = x").is_err());
        let c = RunConfig::parse("theta = 1.5").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::parse("lambda = -1").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::parse("held_out = 9").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# toy run\n\nseed = 7  # trailing\nlr=0.001\n").unwrap();
        assert_eq!((c.seed, c.lr), (7, 1e-3));
    }
}
