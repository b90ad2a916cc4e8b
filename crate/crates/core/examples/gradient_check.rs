//! Finite-difference check of the full training objective on a tiny
//! two-class network in 64-bit precision.

use uscs::model::{MimoConfig, MimoSegNet};
use uscs::trainer::{objective_gradcheck, random_groups, TrainConfig};

fn main() -> uscs::Result<()> {
    let net = MimoConfig {
        num_classes: 2,
        encoder_widths: vec![4],
        encoder_strides: vec![2],
        decoder_widths: vec![4],
        input_size: (8, 8),
        ..MimoConfig::default()
    };
    let groups = random_groups(&net, 2, 7)?;
    for (label, uncertainty) in [("uncertainty-weighted", true), ("unweighted", false)] {
        let cfg = TrainConfig {
            uncertainty,
            ..TrainConfig::default()
        };
        let model = MimoSegNet::<f64>::new(net.clone(), 3)?;
        let err = objective_gradcheck(&model, &groups, &cfg, 1e-4)?;
        println!(
            "{label:<22} {} parameters, max relative error {err:.2e}",
            model.params().numel()
        );
    }
    Ok(())
}
