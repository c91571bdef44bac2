//! Runs the finite-difference gradient suite and prints one line per check.

use sadapter::harness::gradcheck::{all_pass, run_suite};

fn main() -> sadapter::Result<()> {
    let reports = run_suite(7)?;
    for r in &reports {
        println!("{r}");
    }
    println!("{} checks, all pass: {}", reports.len(), all_pass(&reports));
    Ok(())
}
