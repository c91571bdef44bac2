//! Parameter and MAC overhead of the adapters for each backbone preset.

use sadapter::adapter::AdapterConfig;
use sadapter::harness::params::ParamReport;
use sadapter::vit::ViTConfig;

fn main() -> sadapter::Result<()> {
    for name in ["toy", "tiny", "small", "base", "large"] {
        let r = ParamReport::new(name, &ViTConfig::preset(name)?, &AdapterConfig::default());
        println!("{name:<6} params +{:.3}%  macs +{:.3}%", 100.0 * r.param_ratio(), 100.0 * r.mac_ratio());
    }
    Ok(())
}
