//! CutMix applied to a probability map commutes with the per-pixel argmax,
//! so one spec can transform images, soft predictions and hard labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uscs::transforms::{apply_cutmix, apply_cutmix_labels, sample_cutmix, CutMixConfig};
use uscs::Tensor;

fn main() -> uscs::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, c, h, w) = (4, 3, 16, 16);
    let mut agree = 0;
    let trials = 200;
    for _ in 0..trials {
        let mut raw: Vec<f64> = (0..n * c * h * w).map(|_| rng.random_range(0.01..1.0)).collect();
        for b in 0..n {
            for p in 0..h * w {
                let s: f64 = (0..c).map(|k| raw[(b * c + k) * h * w + p]).sum();
                (0..c).for_each(|k| raw[(b * c + k) * h * w + p] /= s);
            }
        }
        let probs = Tensor::new(vec![n, c, h, w], raw)?;
        let spec = sample_cutmix(n, h, w, &CutMixConfig::default(), &mut rng)?;
        let mixed_then_argmax = apply_cutmix(&probs, &spec)?.argmax_channels()?;
        let argmax_then_mixed = apply_cutmix_labels(&probs.argmax_channels()?, &spec)?;
        agree += usize::from(mixed_then_argmax == argmax_then_mixed);
    }
    println!("{agree}/{trials} random maps commute");

    let spec = sample_cutmix(n, h, w, &CutMixConfig::default(), &mut rng)?;
    for (b, (bx, partner)) in spec.boxes.iter().zip(&spec.partners).enumerate() {
        println!(
            "element {b}: {}x{} box at ({}, {}) pasted from element {partner}, {:.0}% of the image",
            bx.height,
            bx.width,
            bx.top,
            bx.left,
            100.0 * bx.area() as f64 / (h * w) as f64
        );
    }
    Ok(())
}
