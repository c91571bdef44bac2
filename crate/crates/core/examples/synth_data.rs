//! Generates the four preset domains and reports per-domain statistics.
//! Pass a directory to also write PPM images.

use sadapter::metrics::{auc, roc, ScoreSet};
use sadapter::synth::{dump, generate, highpass_energy, DomainStyle};

fn main() -> sadapter::Result<()> {
    let out = std::env::args().nth(1);
    for d in 0..4 {
        let style = DomainStyle::preset(d);
        let b = generate(&style, 16, 32)?;
        let mean = b.images.data().iter().sum::<f64>() / b.images.numel() as f64;
        let hp = auc(&roc(&ScoreSet::new(highpass_energy(&b.images), b.labels.clone())?)?);
        println!("domain {d}: gains {:?} noise {:.3} blur {} mean {mean:.3} high-pass auc {hp:.3}", style.color_gain, style.noise_sigma, style.blur_radius);
        if let Some(dir) = &out {
            dump(&b, &std::path::Path::new(dir).join(format!("domain{d}")))?;
        }
    }
    Ok(())
}
