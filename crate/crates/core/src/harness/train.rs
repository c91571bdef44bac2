use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::metrics::{eer_point, evaluate, roc, MetricReport, ScoreSet};
use crate::module::Module;
use crate::objective::{bce_loss, total_loss, tsr_average, DomainBatch};
use crate::optim::Adam;
use crate::synth::{split_protocol, ProtocolSplit};
use crate::tensor::Tensor;
use crate::vit::VisionTransformer;

const ADAPTER_STREAM: u64 = 0xada9_7e55;
const SHUFFLE_STREAM: u64 = 0x5bf1_e000;
const EVAL_CHUNK: usize = 64;

pub const LOG_HEADER: &str = "epoch,bce,tsr,total";
pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.sadp";
pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";

/// Mean losses over the mini-batches of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub bce: f64,
    pub tsr: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub bce: f64,
    pub tsr: f64,
    pub total: f64,
}

pub struct TrainOutcome {
    pub model: VisionTransformer,
    pub log: Vec<EpochLog>,
}

/// Frozen random backbone with fresh adapters, both derived from the seed.
pub fn build_model(cfg: &RunConfig) -> Result<VisionTransformer> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = VisionTransformer::new(cfg.vit()?, &mut rng)?;
    let mut arng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ADAPTER_STREAM);
    model.attach_adapters(&cfg.adapter(), &mut arng)?;
    Ok(model)
}

pub fn build_split(cfg: &RunConfig) -> Result<ProtocolSplit> {
    let vit = cfg.vit()?;
    split_protocol(&cfg.protocol()?, cfg.sizes(), vit.image, cfg.lambda > 0.0)
}

/// One optimizer step on `batch`. With `lambda == 0` the regularizer is
/// not evaluated and reported as 0.
pub fn train_step(model: &mut VisionTransformer, opt: &mut Adam, batch: &DomainBatch, cfg: &RunConfig) -> Result<StepLosses> {
    model.zero_grad();
    let out = model.forward(&batch.images)?;
    let bce = bce_loss(&out.logits, &batch.labels)?;
    let tsr = if cfg.lambda > 0.0 {
        let map = out
            .token_map
            .as_ref()
            .ok_or_else(|| Error::Config("style regularization needs adapters".into()))?;
        tsr_average(map, &batch.labels, &batch.domain_ids, cfg.tsr_mode)?.loss
    } else {
        Tensor::scalar(0.0)
    };
    let total = total_loss(&out.logits, &batch.labels, &tsr, cfg.lambda)?;
    total.backward()?;
    opt.step(model);
    Ok(StepLosses {
        bce: bce.item()?,
        tsr: tsr.item()?,
        total: total.item()?,
    })
}

pub fn train(cfg: &RunConfig, split: &ProtocolSplit) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = build_model(cfg)?;
    let mut opt = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let n = split.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut bce, mut tsr, mut total, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = split.train.select(chunk)?;
            let l = train_step(&mut model, &mut opt, &batch, cfg)?;
            bce += l.bce;
            tsr += l.tsr;
            total += l.total;
            steps += 1;
        }
        let k = steps as f64;
        log.push(EpochLog {
            epoch,
            bce: bce / k,
            tsr: tsr / k,
            total: total / k,
        });
    }
    Ok(TrainOutcome { model, log })
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for e in log {
        writeln!(s, "{},{:.12e},{:.12e},{:.12e}", e.epoch, e.bce, e.tsr, e.total).expect("string write");
    }
    s
}

pub fn scores(model: &VisionTransformer, batch: &DomainBatch) -> Result<ScoreSet> {
    ScoreSet::new(model.attack_scores(&batch.images, EVAL_CHUNK)?, batch.labels.clone())
}

/// Held-out metrics, with the HTER threshold fixed at the EER operating
/// point of the source-domain validation split.
pub fn evaluate_split(model: &VisionTransformer, split: &ProtocolSplit) -> Result<MetricReport> {
    let val = scores(model, &split.val)?;
    let threshold = eer_point(&roc(&val)?).threshold;
    evaluate(&scores(model, &split.test)?, Some(threshold))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))
}

pub struct TrainArtifacts {
    pub outcome: TrainOutcome,
    pub log_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

/// Trains, then writes the resolved config, the epoch log and a checkpoint
/// into `cfg.out`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    let split = build_split(cfg)?;
    let outcome = train(cfg, &split)?;
    fs::write(cfg.out.join(CONFIG_FILE), cfg.to_string())?;
    let log_path = cfg.out.join(LOG_FILE);
    fs::write(&log_path, log_csv(&outcome.log))?;
    let checkpoint_path = cfg.out.join(CHECKPOINT_FILE);
    checkpoint::save(&outcome.model, &checkpoint_path)?;
    Ok(TrainArtifacts {
        outcome,
        log_path,
        checkpoint_path,
    })
}

pub fn metrics_csv(cfg: &RunConfig, r: &MetricReport) -> String {
    format!(
        "protocol,seed,variant,fusion,lambda,theta,{}\n{},{},{},{},{},{},{}\n",
        MetricReport::CSV_HEADER,
        protocol_name(cfg),
        cfg.seed,
        cfg.variant,
        cfg.fusion,
        cfg.lambda,
        cfg.theta,
        r.csv_fields()
    )
}

pub fn protocol_name(cfg: &RunConfig) -> String {
    if cfg.few_shot_k > 0 {
        format!("loo{}_d{}_k{}", cfg.n_domains, cfg.held_out, cfg.few_shot_k)
    } else {
        format!("loo{}_d{}", cfg.n_domains, cfg.held_out)
    }
}

/// Loads `checkpoint` into a model built from `cfg`, evaluates it on the
/// configured protocol and writes `metrics.csv` into `cfg.out`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint_path: &Path) -> Result<MetricReport> {
    cfg.validate()?;
    let mut model = build_model(cfg)?;
    checkpoint::load(&mut model, checkpoint_path)?;
    let report = evaluate_split(&model, &build_split(cfg)?)?;
    ensure_dir(&cfg.out)?;
    fs::write(cfg.out.join(METRICS_FILE), metrics_csv(cfg, &report))?;
    Ok(report)
}
