//! Entropy-based confidence of pseudo labels and the thresholded weight mask.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probabilities are floored at this value inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-pixel confidence in `[0, 1]`, `N×1×H×W`; one means fully confident.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap<T>(pub Tensor<T>);

/// Per-pixel loss weights in `[0, 1]`, `N×1×H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMask<T> {
    pub weights: Tensor<T>,
    pub gamma: f64,
}

impl<T: Scalar> WeightMask<T> {
    /// All-ones mask, the unweighted special case.
    pub fn ones(shape: &[usize]) -> Self {
        WeightMask {
            weights: Tensor::full(shape, T::one()),
            gamma: 0.0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.weights.mean().to_f64()
    }
}

/// Shannon entropy `−Σ p log p` (natural log) over the channel axis of an
/// `N×C×H×W` probability map, returned as `N×1×H×W`.
pub fn shannon_entropy<T: Scalar>(p: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = p.dims4()?;
    let plane = h * w;
    let tol = 1e-6f64.max(8.0 * c as f64 * T::epsilon().to_f64());
    let floor = T::from_f64(PROB_FLOOR);
    let mut out = Tensor::zeros(&[n, 1, h, w]);
    for b in 0..n {
        for i in 0..plane {
            let mut sum = T::zero();
            let mut ent = T::zero();
            for ch in 0..c {
                let v = p.data()[(b * c + ch) * plane + i];
                if v < T::zero() || !v.is_finite() {
                    return Err(Error::InvalidArgument(format!("probability {v} at pixel {i}")));
                }
                sum = sum + v;
                ent = ent - v * v.max(floor).ln();
            }
            if (sum.to_f64() - 1.0).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "distribution at pixel {i} of element {b} sums to {sum}"
                )));
            }
            out.data_mut()[b * plane + i] = ent;
        }
    }
    Ok(out)
}

/// `Û = clamp(1 − U / ln C, 0, 1)`.
pub fn confidence<T: Scalar>(entropy: &Tensor<T>, num_classes: usize) -> Result<ConfidenceMap<T>> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "confidence needs at least 2 classes, got {num_classes}"
        )));
    }
    if entropy.data().iter().any(|&u| u < T::zero()) {
        return Err(Error::InvalidArgument("entropy must be non-negative".into()));
    }
    let max = T::from_f64((num_classes as f64).ln());
    Ok(ConfidenceMap(
        entropy.map(|u| (T::one() - u / max).max(T::zero()).min(T::one())),
    ))
}

/// `W = 1` where `Û ≥ γ`, `Û / γ` elsewhere.
pub fn weight_mask<T: Scalar>(conf: &ConfidenceMap<T>, gamma: f64) -> Result<WeightMask<T>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let g = T::from_f64(gamma);
    Ok(WeightMask {
        weights: conf.0.map(|u| if u >= g { T::one() } else { u / g }),
        gamma,
    })
}

/// Weight mask straight from a probability map.
pub fn weights_from_probs<T: Scalar>(p: &Tensor<T>, gamma: f64) -> Result<WeightMask<T>> {
    let (_, c, _, _) = p.dims4()?;
    weight_mask(&confidence(&shannon_entropy(p)?, c)?, gamma)
}

/// Writes one `N×1×H×W` field (element `index`) as a binary graymap,
/// linearly mapping `[lo, hi]` to `[0, 255]`.
pub fn write_pgm<T: Scalar>(field: &Tensor<T>, index: usize, lo: f64, hi: f64, path: &Path) -> Result<()> {
    let (n, _, h, w) = field.dims4()?;
    if index >= n {
        return Err(Error::InvalidArgument(format!("element {index} of {n}")));
    }
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    bytes.extend(field.data()[index * h * w..(index + 1) * h * w].iter().map(|&v| {
        (((v.to_f64() - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
    }));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(values: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[1, values.len(), 1, 1], values).unwrap()
    }

    #[test]
    fn entropy_of_one_hot_and_uniform() {
        assert_eq!(shannon_entropy(&probs(&[1.0, 0.0])).unwrap().item(), 0.0);
        let u = shannon_entropy(&probs(&[0.5, 0.5])).unwrap().item();
        assert!((u - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn entropy_rejects_unnormalized() {
        assert!(shannon_entropy(&probs(&[0.5, 0.6])).is_err());
        assert!(shannon_entropy(&probs(&[1.5, -0.5])).is_err());
    }

    #[test]
    fn confidence_endpoints() {
        let one_hot = confidence(&shannon_entropy(&probs(&[0.0, 1.0, 0.0])).unwrap(), 3).unwrap();
        assert_eq!(one_hot.0.item(), 1.0);
        let uniform = confidence(&shannon_entropy(&probs(&[0.25; 4])).unwrap(), 4).unwrap();
        assert!(uniform.0.item().abs() < 1e-15);
        assert!(confidence(&Tensor::<f64>::zeros(&[1, 1, 1, 1]), 1).is_err());
    }

    #[test]
    fn weight_mask_branches() {
        let conf = ConfidenceMap(Tensor::<f64>::from_f64(&[1, 1, 1, 3], &[0.7, 0.25, 0.5]).unwrap());
        let w = weight_mask(&conf, 0.5).unwrap();
        assert_eq!(w.weights.data(), &[1.0, 0.5, 1.0]);
        assert!(weight_mask(&conf, 0.0).is_err());
        assert!(weight_mask(&conf, 1.5).is_err());
    }

    #[test]
    fn pgm_dump_has_header_and_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let f = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[0.0, 0.5, 1.0, 2.0]).unwrap();
        let path = dir.path().join("u.pgm");
        write_pgm(&f, 0, 0.0, 1.0, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 128, 255, 255]);
    }
}
