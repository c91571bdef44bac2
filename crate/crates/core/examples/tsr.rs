//! Token style regularization between bona fide maps of three domains.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sadapter::objective::{tsr_average, TsrMode};
use sadapter::Tensor;

fn main() -> sadapter::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels = [0u8, 0, 1, 0, 0, 1, 0, 0, 1];
    let domains = [0usize, 0, 0, 1, 1, 1, 2, 2, 2];
    let shared = Tensor::randn(&[9, 4, 3, 3], 1.0, &mut rng);
    let varied = {
        let mut v = shared.to_vec();
        for (i, x) in v.iter_mut().enumerate() {
            *x *= 1.0 + 0.5 * domains[i / 36] as f64;
        }
        Tensor::new(v, &[9, 4, 3, 3])?
    };
    for (name, maps) in [("unscaled", &shared), ("scaled per domain", &varied)] {
        for mode in [TsrMode::Aggregate, TsrMode::PerExample] {
            let v = tsr_average(maps, &labels, &domains, mode)?;
            println!("{name:<18} {mode:?}: {:.6} over {} pairs", v.loss.item()?, v.pairs);
        }
    }
    Ok(())
}
