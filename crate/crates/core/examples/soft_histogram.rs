//! Soft histogram responses for a few bin centres and widths.

use sadapter::histogram::SoftHistogram;
use sadapter::Tensor;

fn main() -> sadapter::Result<()> {
    let ramp: Vec<f64> = (0..25).map(|i| i as f64 / 12.0 - 1.0).collect();
    let z = Tensor::new(ramp, &[1, 5, 5])?;
    for (mu, gamma) in [(0.0, 1.0), (0.0, 4.0), (0.8, 4.0), (-0.8, 4.0)] {
        let h = SoftHistogram::new(Tensor::new(vec![mu], &[1])?, Tensor::new(vec![gamma], &[1])?)?;
        let out = h.forward_tensor(&z)?;
        println!("mu {mu:+.1} gamma {gamma:.1}");
        for row in out.data().chunks(5) {
            println!("  {}", row.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "));
        }
    }
    Ok(())
}
