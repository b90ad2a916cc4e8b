//! Generates a few synthetic scenes, exports them as pixmaps and reports
//! class frequencies, the colour-only probe and a 1/8 partition.

use uscs::data::{make_splits, SceneSpec, SynthDataset};

fn main() -> uscs::Result<()> {
    let spec = SceneSpec::default();
    let ds = SynthDataset::generate(&spec, 0, 0, 256)?;
    let out = std::env::temp_dir().join("uscs_scenes");
    std::fs::create_dir_all(&out).map_err(|e| uscs::Error::InvalidArgument(e.to_string()))?;
    for i in 0..4 {
        ds.export(i, &out.join(format!("scene{i}.ppm")), &out.join(format!("scene{i}_label.pgm")))?;
    }
    let mut freq = vec![0usize; spec.num_classes];
    for i in 0..ds.len {
        ds.label(i).iter().for_each(|&l| freq[l as usize] += 1);
    }
    let total: usize = freq.iter().sum();
    for (c, n) in freq.iter().enumerate() {
        println!("class {c}: {:5.1}% of pixels", 100.0 * *n as f64 / total as f64);
    }
    let probe = ds.color_only_probe(16);
    println!(
        "colour-only classifier: pixel accuracy {:.3}, mIoU {:.3}",
        probe.accuracy, probe.miou
    );
    let splits = make_splits(2048, 1.0 / 8.0, 0)?;
    println!(
        "1/8 partition of 2048 scenes: {} labeled, {} unlabeled",
        splits.labeled.len(),
        splits.unlabeled.len()
    );
    println!("pixmaps written to {}", out.display());
    Ok(())
}
