//! Attaching zero-initialized adapters leaves the backbone's logits unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sadapter::adapter::{AdapterConfig, AdapterVariant, Fusion};
use sadapter::module::Module;
use sadapter::tensor::no_grad;
use sadapter::vit::{ViTConfig, VisionTransformer};
use sadapter::Tensor;

fn main() -> sadapter::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let backbone = VisionTransformer::new(ViTConfig::toy(), &mut rng)?;
    let images = Tensor::uniform(&[8, 3, 32, 32], 0.0, 1.0, &mut rng);
    let reference = no_grad(|| backbone.forward(&images))?.logits;

    for variant in AdapterVariant::ALL {
        for fusion in [Fusion::Sum, Fusion::Concat] {
            let mut model = backbone.clone();
            model.attach_adapters(&AdapterConfig { variant, fusion, ..AdapterConfig::default() }, &mut rng)?;
            let logits = no_grad(|| model.forward(&images))?.logits;
            let trainable: usize = model.named_parameters().iter().filter(|(_, t)| t.requires_grad()).map(|(_, t)| t.numel()).sum();
            println!(
                "{:<22} {:<6} identical: {:<5} trainable params: {trainable}",
                variant.name(),
                fusion.name(),
                logits.data() == reference.data()
            );
        }
    }
    Ok(())
}
