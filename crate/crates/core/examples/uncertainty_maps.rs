//! Entropy, confidence and weight masks of a probability map that blends
//! from certain to uniform. Writes the fields as graymaps.

use std::path::PathBuf;

use uscs::uncertainty::{confidence, shannon_entropy, weight_mask, write_pgm};
use uscs::Tensor;

fn main() -> uscs::Result<()> {
    let (c, h, w) = (4, 16, 64);
    // left edge is one-hot on class 0, right edge is uniform
    let mut data = vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let t = x as f64 / (w - 1) as f64;
            for k in 0..c {
                let one_hot = if k == 0 { 1.0 } else { 0.0 };
                data[(k * h + y) * w + x] = (1.0 - t) * one_hot + t / c as f64;
            }
        }
    }
    let p = Tensor::new(vec![1, c, h, w], data)?;
    let u = shannon_entropy(&p)?;
    let conf = confidence(&u, c)?;
    let out = std::env::temp_dir().join("uscs_uncertainty");
    std::fs::create_dir_all(&out).map_err(|e| uscs::Error::InvalidArgument(e.to_string()))?;
    write_pgm(&u, 0, 0.0, (c as f64).ln(), &out.join("entropy.pgm"))?;
    write_pgm(&conf.0, 0, 0.0, 1.0, &out.join("confidence.pgm"))?;

    println!("{:>6} {:>9} {:>11}", "column", "entropy", "confidence");
    for x in (0..w).step_by(9) {
        println!("{x:>6} {:>9.4} {:>11.4}", u.data()[x], conf.0.data()[x]);
    }
    for gamma in [0.1, 0.5, 0.9] {
        let m = weight_mask(&conf, gamma)?;
        let full = m.weights.data().iter().filter(|&&v| v == 1.0).count();
        let path: PathBuf = out.join(format!("weights_gamma{gamma}.pgm"));
        write_pgm(&m.weights, 0, 0.0, 1.0, &path)?;
        println!(
            "gamma {gamma}: mean weight {:.3}, {:.0}% of pixels at full weight",
            m.mean(),
            100.0 * full as f64 / (h * w) as f64
        );
    }
    println!("graymaps written to {}", out.display());
    Ok(())
}
