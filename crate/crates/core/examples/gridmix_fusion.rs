//! Grid-mix fusion of two feature maps at several cell sizes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uscs::model::{gridmix, sample_grid_mask};
use uscs::Tensor;

fn main() -> uscs::Result<()> {
    let (h, w) = (8, 8);
    let a = Tensor::<f64>::full(&[1, 1, h, w], 1.0);
    let b = Tensor::<f64>::full(&[1, 1, h, w], 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for grid in [1, 2, 4] {
        let mask = sample_grid_mask(1, h, w, grid, &mut rng)?;
        let fused = gridmix(&a, &b, &mask)?;
        println!("g = {grid}: {:.0}% of cells from the first map", 100.0 * fused.mean());
        for y in 0..h {
            let row: String = (0..w)
                .map(|x| if fused.data()[y * w + x] == 1.0 { '#' } else { '.' })
                .collect();
            println!("  {row}");
        }
    }
    let same = gridmix(&a, &a, &sample_grid_mask(1, h, w, 2, &mut rng)?)?;
    println!("mixing a map with itself returns it: {}", same == a);
    Ok(())
}
