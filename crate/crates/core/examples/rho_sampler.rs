//! Empirical input-repetition rate of the two-group sampler against the
//! configured probability.

use uscs::data::{make_splits, GroupSampler, SamplerConfig, SceneSpec, SynthDataset, TrainData};
use uscs::transforms::CutMixConfig;

fn main() -> uscs::Result<()> {
    let spec = SceneSpec {
        size: 16,
        ..SceneSpec::default()
    };
    let ds = SynthDataset::generate(&spec, 0, 0, 256)?;
    let data = TrainData::new(&ds, &make_splits(256, 0.125, 0)?);
    let steps = 5000;
    for rho in [0.0, 0.2, 0.4, 0.7, 1.0] {
        let cfg = SamplerConfig {
            batch_size: 4,
            rho,
            cutmix: CutMixConfig::default(),
            augment: None,
        };
        let mut sampler = GroupSampler::new(cfg, &data, 1)?;
        let mut same = 0;
        for _ in 0..steps {
            let g = sampler.next_groups::<f32>(&data, false)?;
            same += usize::from(g.labeled1.ids == g.labeled2.ids);
        }
        println!("rho {rho:.1}: identical labeled batches in {:.3} of steps", same as f64 / steps as f64);
    }
    println!("unlabeled images read: {}", data.unlabeled.reads());
    Ok(())
}
