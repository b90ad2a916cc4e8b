//! Short supervised and cross-supervised runs on small scenes, written to a
//! temporary directory with per-iteration metrics and checkpoints.

use uscs::harness::{read_metrics, train_run};
use uscs::trainer::{Mode, TrainConfig};

fn main() -> uscs::Result<()> {
    let base = TrainConfig {
        image_size: 32,
        min_radius: 4.0,
        max_radius: 8.0,
        num_scenes: 512,
        val_scenes: 64,
        encoder_widths: vec![8, 16, 32],
        decoder_widths: vec![16, 8],
        base_lr: 0.01,
        max_iters: 300,
        lambda_rampup: 100,
        eval_every: 100,
        checkpoint_every: 150,
        ..TrainConfig::default()
    };
    let root = std::env::temp_dir().join("uscs_toy");
    for mode in [Mode::Supervised, Mode::Uscs] {
        let cfg = TrainConfig { mode, ..base.clone() };
        let dir = root.join(mode.to_string());
        let manifest = train_run(&cfg, &dir, &mut |line| println!("  {line}"))?;
        let rows = read_metrics(&dir.join("metrics.csv"))?;
        let last = rows.last().expect("at least one iteration");
        println!(
            "{mode}: final mIoU {:.4}, last total loss {:.4}, mean weight {}",
            manifest.final_miou,
            last.total,
            last.mean_w.map_or("n/a".to_string(), |w| format!("{w:.3}"))
        );
    }
    println!("runs written to {}", root.display());
    Ok(())
}
