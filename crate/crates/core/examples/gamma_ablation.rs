//! A small sweep over the confidence threshold γ, with γ = 0 meaning an
//! all-ones weight mask, summarized as mean ± sd over seeds.

use uscs::harness::{run_sweep, SweepSpec};
use uscs::trainer::TrainConfig;

fn main() -> uscs::Result<()> {
    let base = TrainConfig {
        image_size: 32,
        min_radius: 4.0,
        max_radius: 8.0,
        num_scenes: 256,
        val_scenes: 64,
        encoder_widths: vec![8, 16, 32],
        decoder_widths: vec![16, 8],
        base_lr: 0.01,
        max_iters: 300,
        lambda_rampup: 100,
        eval_every: 0,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let spec = SweepSpec::parse("name = gamma\nseeds = 2\nkey = gamma\nvalues = 0, 0.5, 0.9\n")?;
    let dir = std::env::temp_dir().join("uscs_gamma_sweep");
    let rows = run_sweep(&base, &spec, &dir)?;
    println!("{:<12} {:>18} {:>20}", "arm", "mIoU", "non-overlap");
    for r in &rows {
        println!(
            "{:<12} {:>9.4} ± {:<6.4} {:>11.4} ± {:<6.4}",
            r.arm, r.miou_mean, r.miou_sd, r.non_overlap_mean, r.non_overlap_sd
        );
    }
    println!("summary written to {}", dir.join("summary.csv").display());
    Ok(())
}
