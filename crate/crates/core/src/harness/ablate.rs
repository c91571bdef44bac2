use std::fmt::Write as _;

use super::config::RunConfig;
use super::train::{build_split, evaluate_split, protocol_name, train};
use crate::adapter::{AdapterVariant, Fusion};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

/// One point in the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub variant: AdapterVariant,
    pub fusion: Fusion,
    pub theta: f64,
    pub lambda: f64,
}

impl Cell {
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        RunConfig {
            variant: self.variant,
            fusion: self.fusion,
            theta: self.theta,
            lambda: self.lambda,
            ..base.clone()
        }
    }
}

/// Cartesian product of the four axes.
pub fn grid(variants: &[AdapterVariant], thetas: &[f64], lambdas: &[f64], fusions: &[Fusion]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &variant in variants {
        for &theta in thetas {
            for &lambda in lambdas {
                for &fusion in fusions {
                    cells.push(Cell {
                        variant,
                        fusion,
                        theta,
                        lambda,
                    });
                }
            }
        }
    }
    cells
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub cell: Cell,
    pub seed: u64,
    pub held_out: usize,
    pub report: MetricReport,
}

/// Config for one (cell, seed) run. The held-out domain rotates with the
/// seed so that different seeds exercise different target domains.
pub fn run_config(base: &RunConfig, cell: &Cell, seed: u64) -> RunConfig {
    let mut cfg = cell.apply(base);
    cfg.seed = seed;
    cfg.held_out = (seed % base.n_domains as u64) as usize;
    cfg
}

pub fn run_cell(base: &RunConfig, cell: &Cell, seed: u64) -> Result<RunResult> {
    let cfg = run_config(base, cell, seed);
    let split = build_split(&cfg)?;
    let outcome = train(&cfg, &split)?;
    let report = evaluate_split(&outcome.model, &split)?;
    Ok(RunResult {
        cell: *cell,
        seed,
        held_out: cfg.held_out,
        report,
    })
}

/// Runs every cell for every seed, calling `progress` after each run.
pub fn run_grid(
    base: &RunConfig,
    cells: &[Cell],
    seeds: &[u64],
    mut progress: impl FnMut(&RunResult),
) -> Result<Vec<RunResult>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut out = Vec::with_capacity(cells.len() * seeds.len());
    for cell in cells {
        for &seed in seeds {
            let r = run_cell(base, cell, seed)?;
            progress(&r);
            out.push(r);
        }
    }
    Ok(out)
}

pub const RUNS_HEADER: &str = "protocol,seed,variant,fusion,lambda,theta";

pub fn runs_csv(base: &RunConfig, results: &[RunResult]) -> String {
    let mut s = format!("{RUNS_HEADER},{}\n", MetricReport::CSV_HEADER);
    for r in results {
        let cfg = run_config(base, &r.cell, r.seed);
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            protocol_name(&cfg),
            r.seed,
            r.cell.variant,
            r.cell.fusion,
            r.cell.lambda,
            r.cell.theta,
            r.report.csv_fields()
        )
        .expect("string write");
    }
    s
}

/// Mean over seeds for one cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub runs: usize,
    pub hter: f64,
    pub hter_std: f64,
    pub auc: f64,
    pub eer: f64,
    pub tpr_at_fpr1: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn summarize(results: &[RunResult]) -> Vec<CellSummary> {
    let mut cells: Vec<Cell> = Vec::new();
    for r in results {
        if !cells.contains(&r.cell) {
            cells.push(r.cell);
        }
    }
    cells
        .into_iter()
        .map(|cell| {
            let rs: Vec<&RunResult> = results.iter().filter(|r| r.cell == cell).collect();
            let pick = |f: fn(&MetricReport) -> f64| rs.iter().map(|r| f(&r.report)).collect::<Vec<_>>();
            let hters = pick(|m| m.hter);
            let h = mean(&hters);
            let var = hters.iter().map(|x| (x - h).powi(2)).sum::<f64>() / hters.len() as f64;
            CellSummary {
                cell,
                runs: rs.len(),
                hter: h,
                hter_std: var.sqrt(),
                auc: mean(&pick(|m| m.auc)),
                eer: mean(&pick(|m| m.eer)),
                tpr_at_fpr1: mean(&pick(|m| m.tpr_at_fpr1)),
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "variant,fusion,lambda,theta,runs,hter_mean,hter_std,auc_mean,eer_mean,tpr_at_fpr1_mean";

pub fn summary_csv(summaries: &[CellSummary]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for c in summaries {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            c.cell.variant,
            c.cell.fusion,
            c.cell.lambda,
            c.cell.theta,
            c.runs,
            c.hter,
            c.hter_std,
            c.auc,
            c.eer,
            c.tpr_at_fpr1
        )
        .expect("string write");
    }
    s
}
