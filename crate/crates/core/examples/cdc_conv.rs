//! Central-difference convolution on a small image: plain conv, pure
//! difference term, and the θ-blend in between.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sadapter::cdc::{central_difference, CdcConv};
use sadapter::Tensor;

fn main() -> sadapter::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::randn(&[2, 6, 6], 1.0, &mut rng);
    let conv = CdcConv::init(2, 4, 0.7, &mut rng)?;

    for theta in [0.0, 0.35, 0.7, 1.0] {
        let c = CdcConv::new(conv.kernel.clone(), conv.bias.clone(), theta)?;
        let y = c.forward_tensor(&x)?;
        let energy: f64 = y.data().iter().map(|v| v * v).sum::<f64>() / y.numel() as f64;
        println!("theta {theta:.2}: output {:?}, mean square {energy:.4}", y.shape());
    }

    let flat = Tensor::full(&[2, 6, 6], 3.0);
    let zg = central_difference(&flat, &conv.kernel)?;
    println!("difference term on a constant image, max |Zg| = {:e}", zg.data().iter().fold(0.0f64, |m, v| m.max(v.abs())));
    println!("{} parameters", conv.parameter_count());
    Ok(())
}
