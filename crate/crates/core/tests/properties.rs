use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uscs::data::make_splits;
use uscs::metrics::{non_overlap_ratio, ConfusionMatrix};
use uscs::model::{gridmix, sample_grid_mask, summing_fusion};
use uscs::trainer::poly_lr;
use uscs::transforms::{apply_cutmix, apply_cutmix_labels, sample_cutmix, CutMixConfig};
use uscs::uncertainty::{confidence, shannon_entropy, weight_mask, weights_from_probs};
use uscs::{LabelMap, Tensor};

/// `n×c×h×w` probability map from raw positive scores.
fn probs(n: usize, c: usize, h: usize, w: usize, raw: &[f64]) -> Tensor<f64> {
    let plane = h * w;
    let mut data = raw[..n * c * plane].to_vec();
    for b in 0..n {
        for i in 0..plane {
            let s: f64 = (0..c).map(|k| data[(b * c + k) * plane + i]).sum();
            for k in 0..c {
                data[(b * c + k) * plane + i] /= s;
            }
        }
    }
    Tensor::new(vec![n, c, h, w], data).unwrap()
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (1usize..4, 2usize..6, 1usize..7, 1usize..7)
}

fn prob_map() -> impl Strategy<Value = Tensor<f64>> {
    dims().prop_flat_map(|(n, c, h, w)| {
        prop::collection::vec(1e-3f64..1.0, n * c * h * w).prop_map(move |raw| probs(n, c, h, w, &raw))
    })
}

fn labels(n: usize, h: usize, w: usize, c: u8) -> impl Strategy<Value = LabelMap> {
    prop::collection::vec(0..c, n * h * w).prop_map(move |d| LabelMap::new(n, h, w, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn entropy_is_bounded_by_log_classes(p in prob_map()) {
        let c = p.shape()[1];
        let u = shannon_entropy(&p).unwrap();
        for &v in u.data() {
            prop_assert!(v >= -1e-12 && v <= (c as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn weights_lie_in_unit_interval_and_saturate_above_gamma(p in prob_map(), gamma in 0.01f64..=1.0) {
        let c = p.shape()[1];
        let conf = confidence(&shannon_entropy(&p).unwrap(), c).unwrap();
        let w = weight_mask(&conf, gamma).unwrap();
        for (&u, &wt) in conf.0.data().iter().zip(w.weights.data()) {
            prop_assert!((0.0..=1.0).contains(&wt));
            if u >= gamma {
                prop_assert_eq!(wt, 1.0);
            } else {
                prop_assert!((wt - u / gamma).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_do_not_increase_with_gamma(p in prob_map(), a in 0.01f64..=1.0, b in 0.01f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let wl = weights_from_probs(&p, lo).unwrap();
        let wh = weights_from_probs(&p, hi).unwrap();
        for (x, y) in wl.weights.data().iter().zip(wh.weights.data()) {
            prop_assert!(x + 1e-12 >= *y);
        }
    }

    #[test]
    fn gridmix_selects_one_source_per_pixel(
        (n, c, h, w) in dims(), grid in 1usize..4, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = n * c * h * w;
        let f1 = Tensor::new(vec![n, c, h, w], (0..len).map(|i| i as f64).collect()).unwrap();
        let f2 = Tensor::new(vec![n, c, h, w], (0..len).map(|i| -(i as f64) - 1.0).collect()).unwrap();
        let m = sample_grid_mask(n, h, w, grid, &mut rng).unwrap();
        let out = gridmix(&f1, &f2, &m).unwrap();
        for b in 0..n {
            for k in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let i = ((b * c + k) * h + y) * w + x;
                        let want = if m.get(b, y, x) == 1 { f1.data()[i] } else { f2.data()[i] };
                        prop_assert_eq!(out.data()[i], want);
                    }
                }
            }
        }
        // the two complementary mixes add up to summing fusion
        let inv = uscs::model::GridMask { data: m.data.iter().map(|v| 1 - v).collect(), ..m.clone() };
        let back = gridmix(&f1, &f2, &inv).unwrap();
        let both = out.zip_map(&back, "sum", |a, b| a + b).unwrap();
        prop_assert_eq!(both, summing_fusion(&f1, &f2).unwrap());
    }

    #[test]
    fn cutmix_moves_labels_and_fields_alike(p in prob_map(), seed in any::<u64>()) {
        let (n, _, h, w) = p.dims4().unwrap();
        let spec = sample_cutmix(n, h, w, &CutMixConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let lhs = apply_cutmix(&p, &spec).unwrap().argmax_channels().unwrap();
        let rhs = apply_cutmix_labels(&p.argmax_channels().unwrap(), &spec).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn cutmix_boxes_fit_and_partners_differ(n in 1usize..5, h in 4usize..40, w in 4usize..40, seed in any::<u64>()) {
        let cfg = CutMixConfig::default();
        let spec = sample_cutmix(n, h, w, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for bx in &spec.boxes {
            prop_assert!(bx.top + bx.height <= h && bx.left + bx.width <= w);
            prop_assert!(bx.area() >= 1);
        }
        for (b, &q) in spec.partners.iter().enumerate() {
            prop_assert!(q < n);
            prop_assert!(n == 1 || q != b);
        }
    }

    #[test]
    fn miou_and_accuracy_are_fractions(
        (truth, pred) in (1usize..3, 1usize..6, 1usize..6)
            .prop_flat_map(|(n, h, w)| (labels(n, h, w, 4), labels(n, h, w, 4)))
    ) {
        let mut cm = ConfusionMatrix::new(4);
        cm.add(&truth, &pred).unwrap();
        prop_assert!((0.0..=1.0).contains(&cm.miou()));
        prop_assert!((0.0..=1.0).contains(&cm.pixel_accuracy()));
        let mut same = ConfusionMatrix::new(4);
        same.add(&truth, &truth).unwrap();
        prop_assert_eq!(same.miou(), 1.0);
        let r = non_overlap_ratio(&truth, &pred).unwrap();
        prop_assert_eq!(r, non_overlap_ratio(&pred, &truth).unwrap());
        prop_assert!((1.0 - r - cm.pixel_accuracy()).abs() < 1e-12);
    }

    #[test]
    fn splits_partition_the_indices(n in 2usize..500, ratio in 0.01f64..0.99, seed in any::<u64>()) {
        if let Ok(s) = make_splits(n, ratio, seed) {
            let mut all: Vec<usize> = s.labeled.iter().chain(&s.unlabeled).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(!s.labeled.is_empty() && !s.unlabeled.is_empty());
        }
    }

    #[test]
    fn poly_schedule_decreases_from_base(base in 1e-4f64..1.0, max in 1usize..5000) {
        let mut prev = f64::INFINITY;
        for it in (0..max).step_by((max / 17).max(1)) {
            let lr = poly_lr(base, it, max);
            prop_assert!(lr <= prev && lr > 0.0 && lr <= base);
            prev = lr;
        }
        prop_assert_eq!(poly_lr(base, 0, max), base);
    }
}
