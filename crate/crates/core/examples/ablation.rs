//! A short ablation: full adapter versus the vanilla linear adapter.

use sadapter::adapter::{AdapterVariant, Fusion};
use sadapter::harness::ablate::{grid, run_grid, summarize, summary_csv};
use sadapter::harness::RunConfig;

fn main() -> sadapter::Result<()> {
    let base = RunConfig { lr: 1e-2, epochs: 5, train_per_class: 24, ..RunConfig::default() };
    let cells = grid(&[AdapterVariant::Full, AdapterVariant::VanillaLinear], &[0.7], &[0.1], &[Fusion::Sum]);
    let results = run_grid(&base, &cells, &[0, 1], |r| {
        println!("{} seed {} hter {:.4}", r.cell.variant.name(), r.seed, r.report.hter)
    })?;
    print!("{}", summary_csv(&summarize(&results)));
    Ok(())
}
