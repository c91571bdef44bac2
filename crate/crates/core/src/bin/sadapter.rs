use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sadapter::adapter::{AdapterVariant, Fusion};
use sadapter::harness::{ablate, gradcheck, params::ParamReport, train, RunConfig};
use sadapter::synth::{dump, split_protocol};
use sadapter::vit::ViTConfig;
use sadapter::Result;

#[derive(Parser)]
#[command(name = "sadapter", about = "Statistical adapters for face anti-spoofing on a toy vision transformer")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat key = value run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train adapters and head; writes config.txt, train_log.csv and checkpoint.sadp.
    Train,
    /// Evaluate a checkpoint on the held-out domain; writes metrics.csv.
    Eval {
        /// Defaults to `<out>/checkpoint.sadp`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference check of every op and the composed adapter.
    Gradcheck,
    /// Sweep variant × θ × λ × fusion over several seeds.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "full,vanilla_linear")]
        variants: Vec<AdapterVariant>,
        #[arg(long, value_delimiter = ',', default_value = "0.7")]
        thetas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.1")]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "sum")]
        fusions: Vec<Fusion>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Parameter and multiply-accumulate overhead of the adapters.
    Params {
        #[arg(long, default_value = "base")]
        preset: String,
    },
    /// Write the configured protocol's images as PPM files plus manifest.csv.
    SynthDump,
}

fn config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&c.overrides)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = config(&cli.common)?;
    match cli.cmd {
        Cmd::Train => {
            let a = train::cmd_train(&cfg)?;
            print!("{}", train::log_csv(&a.outcome.log));
            eprintln!("wrote {} and {}", a.log_path.display(), a.checkpoint_path.display());
        }
        Cmd::Eval { checkpoint } => {
            let path = checkpoint.unwrap_or_else(|| cfg.out.join(train::CHECKPOINT_FILE));
            let report = train::cmd_eval(&cfg, &path)?;
            print!("{}", train::metrics_csv(&cfg, &report));
        }
        Cmd::Gradcheck => {
            let reports = gradcheck::run_suite(cfg.seed)?;
            for r in &reports {
                println!("{r}");
            }
            let failed = reports.iter().filter(|r| !r.pass).count();
            println!("{} checks, {failed} failed", reports.len());
            return Ok(failed == 0);
        }
        Cmd::Ablate {
            variants,
            thetas,
            lambdas,
            fusions,
            seeds,
        } => {
            let cells = ablate::grid(&variants, &thetas, &lambdas, &fusions);
            let seeds: Vec<u64> = (cfg.seed..cfg.seed + seeds).collect();
            let results = ablate::run_grid(&cfg, &cells, &seeds, |r| {
                eprintln!(
                    "{} {} λ={} θ={} seed={} held_out={} hter={:.4} auc={:.4}",
                    r.cell.variant, r.cell.fusion, r.cell.lambda, r.cell.theta, r.seed, r.held_out, r.report.hter, r.report.auc
                )
            })?;
            fs::create_dir_all(&cfg.out)?;
            fs::write(cfg.out.join("ablation_runs.csv"), ablate::runs_csv(&cfg, &results))?;
            let summary = ablate::summary_csv(&ablate::summarize(&results));
            fs::write(cfg.out.join("ablation_summary.csv"), &summary)?;
            print!("{summary}");
        }
        Cmd::Params { preset } => {
            let vit = ViTConfig::preset(&preset)?;
            let report = ParamReport::new(&preset, &vit, &cfg.adapter());
            println!("{report}");
            println!("{}\n{}", ParamReport::CSV_HEADER, report.csv_row());
        }
        Cmd::SynthDump => {
            let split = split_protocol(&cfg.protocol()?, cfg.sizes(), cfg.vit()?.image, false)?;
            for (name, batch) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
                let dir = cfg.out.join(name);
                dump(batch, &dir)?;
                eprintln!("{} images in {}", batch.len(), dir.display());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
