//! Trains the toy model on a leave-one-domain-out split and evaluates on
//! the held-out domain. Extra arguments are `key=value` config overrides.

use sadapter::harness::train::{build_split, evaluate_split, train};
use sadapter::harness::RunConfig;

fn main() -> sadapter::Result<()> {
    let mut cfg = RunConfig { lr: 1e-2, epochs: 10, ..RunConfig::default() };
    cfg.apply_overrides(&std::env::args().skip(1).collect::<Vec<_>>())?;
    let split = build_split(&cfg)?;
    let start = std::time::Instant::now();
    let out = train(&cfg, &split)?;
    for e in &out.log {
        println!("epoch {:>2} bce {:.4} tsr {:.3e} total {:.4}", e.epoch, e.bce, e.tsr, e.total);
    }
    let r = evaluate_split(&out.model, &split)?;
    println!("held-out domain {}: hter {:.4} auc {:.4} eer {:.4} ({:.1?})", cfg.held_out, r.hter, r.auc, r.eer, start.elapsed());
    Ok(())
}
