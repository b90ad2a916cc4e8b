//! Supervised cross entropy, (uncertainty-weighted) self cross supervision and
//! the joint objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::model::MimoSegNet;
use crate::tensor::{LabelMap, Scalar, Tensor, IGNORE_LABEL};
use crate::transforms::{apply_cutmix, CutMixSpec};
use crate::uncertainty::WeightMask;

/// Hard pseudo label plus the distribution it was taken from.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel<T> {
    pub labels: LabelMap,
    pub dist: Tensor<T>,
}

impl<T: Scalar> PseudoLabel<T> {
    pub fn from_dist(dist: Tensor<T>) -> Result<Self> {
        Ok(PseudoLabel {
            labels: dist.argmax_channels()?,
            dist,
        })
    }
}

/// Normalisation of the weighted unlabeled loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum UscsNorm {
    /// `Σ W·ℓ / Σ W`; equals the plain mean when `W ≡ 1`.
    #[default]
    WeightedMean,
    /// `Σ W·ℓ / (|Ω| · Σ W)` with `Ω` all pixels of the batch.
    Literal,
}

impl std::fmt::Display for UscsNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UscsNorm::WeightedMean => "weighted",
            UscsNorm::Literal => "literal",
        })
    }
}

impl std::str::FromStr for UscsNorm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "weighted" => Ok(UscsNorm::WeightedMean),
            "literal" => Ok(UscsNorm::Literal),
            other => Err(format!("unknown normalisation {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub sup1: f64,
    pub sup2: f64,
    pub uscs1: f64,
    pub uscs2: f64,
    pub total: f64,
    pub lambda: f64,
}

/// `sup1 + sup2 + λ·(uscs1 + uscs2)`.
pub fn total_loss(sup: (f64, f64), uscs: (f64, f64), lambda: f64) -> LossReport {
    LossReport {
        sup1: sup.0,
        sup2: sup.1,
        uscs1: uscs.0,
        uscs2: uscs.1,
        total: (sup.0 + lambda * uscs.0) + (sup.1 + lambda * uscs.1),
        lambda,
    }
}

/// Per-pixel `−log softmax(logits)[target]`, `N×1×H×W`; zero at ignored pixels.
pub fn pixel_cross_entropy<T: Scalar>(g: &mut Graph<T>, logits: NodeId, targets: &LabelMap) -> Result<NodeId> {
    let ls = g.log_softmax(logits)?;
    let picked = g.pick_class(ls, targets)?;
    Ok(g.scale(picked, -T::one()))
}

fn weighted_cross_entropy<T: Scalar>(
    g: &mut Graph<T>,
    logits: NodeId,
    targets: &LabelMap,
    weights: Tensor<T>,
    norm: UscsNorm,
) -> Result<NodeId> {
    let ce = pixel_cross_entropy(g, logits, targets)?;
    let mut normalizer = weights.sum();
    if norm == UscsNorm::Literal {
        normalizer = normalizer * T::from_f64(weights.numel() as f64);
    }
    g.weighted_mean(ce, weights, normalizer)
}

#[derive(Clone, Copy, Debug)]
pub struct SupLoss {
    pub node: NodeId,
    /// Every pixel carried the ignore label; the loss is defined as zero.
    pub all_ignored: bool,
}

/// Mean cross entropy over non-ignored pixels.
pub fn sup_loss<T: Scalar>(g: &mut Graph<T>, logits: NodeId, labels: &LabelMap) -> Result<SupLoss> {
    let (n, _, h, w) = g.value(logits).dims4()?;
    if labels.dims() != (n, h, w) {
        return Err(Error::shape("sup_loss", g.value(logits).shape(), &[labels.n, labels.h, labels.w]));
    }
    let data = labels
        .data
        .iter()
        .map(|&l| if l == IGNORE_LABEL { T::zero() } else { T::one() })
        .collect();
    let weights = Tensor::new(vec![n, 1, h, w], data)?;
    let all_ignored = weights.sum() == T::zero();
    let node = weighted_cross_entropy(g, logits, labels, weights, UscsNorm::WeightedMean)?;
    Ok(SupLoss { node, all_ignored })
}

/// Uncertainty-weighted cross entropy against hard pseudo labels. A zero
/// weight sum yields a zero loss.
pub fn uscs_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: NodeId,
    pseudo: &PseudoLabel<T>,
    mask: &WeightMask<T>,
    norm: UscsNorm,
) -> Result<NodeId> {
    let (n, _, h, w) = g.value(logits).dims4()?;
    if mask.weights.shape() != [n, 1, h, w] || pseudo.labels.dims() != (n, h, w) {
        return Err(Error::shape("uscs_loss", g.value(logits).shape(), mask.weights.shape()));
    }
    weighted_cross_entropy(g, logits, &pseudo.labels, mask.weights.clone(), norm)
}

/// Unweighted self cross supervision: plain mean cross entropy against the
/// hard pseudo labels.
pub fn scs_loss<T: Scalar>(g: &mut Graph<T>, logits: NodeId, pseudo: &PseudoLabel<T>) -> Result<NodeId> {
    let shape = g.value(logits).shape().to_vec();
    let ones = WeightMask::ones(&[shape[0], 1, shape[2], shape[3]]);
    uscs_loss(g, logits, pseudo, &ones, UscsNorm::WeightedMean)
}

/// Teacher outputs of one no-gradient MIMO pass on the clean unlabeled batch.
#[derive(Clone, Debug)]
pub struct PseudoPair<T> {
    /// Target for branch 1: `T1` applied to head 2's prediction.
    pub p1: PseudoLabel<T>,
    /// Target for branch 2: `T2` applied to head 1's prediction.
    pub p2: PseudoLabel<T>,
    pub teacher1: Tensor<T>,
    pub teacher2: Tensor<T>,
}

/// One stop-gradient forward on `(x_ul, x_ul)`, then the crossed and
/// transformed targets `p1 = T1(F²(x_ul))`, `p2 = T2(F¹(x_ul))`.
pub fn make_pseudo<T: Scalar>(
    model: &MimoSegNet<T>,
    x_ul: &Tensor<T>,
    t1: &CutMixSpec,
    t2: &CutMixSpec,
    rng: &mut impl Rng,
) -> Result<PseudoPair<T>> {
    let mut g = Graph::no_grad();
    let p = model.bind(&mut g);
    let x = g.input(x_ul.clone(), false);
    let out = model.forward(&mut g, &p, x, x, rng)?;
    let s1 = g.softmax(out.logits1)?;
    let s2 = g.softmax(out.logits2)?;
    let teacher1 = g.value(s1).clone();
    let teacher2 = g.value(s2).clone();
    Ok(PseudoPair {
        p1: PseudoLabel::from_dist(apply_cutmix(&teacher2, t1)?)?,
        p2: PseudoLabel::from_dist(apply_cutmix(&teacher1, t2)?)?,
        teacher1,
        teacher2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(values: &[f64], n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_f64(&[n, c, h, w], values).unwrap()
    }

    #[test]
    fn confident_correct_logits_give_zero_loss() {
        let mut g = Graph::<f64>::new();
        let l = g.input(logits(&[0.0, -1e4, -1e4, 0.0], 1, 2, 1, 2), true);
        let labels = LabelMap::new(1, 1, 2, vec![0, 1]).unwrap();
        let s = sup_loss(&mut g, l, &labels).unwrap();
        assert!(g.value(s.node).item().abs() < 1e-12);
    }

    #[test]
    fn uniform_two_class_logits_give_ln2() {
        let mut g = Graph::<f64>::new();
        let l = g.input(Tensor::zeros(&[2, 2, 3, 3]), true);
        let labels = LabelMap::new(2, 3, 3, (0..18).map(|i| (i % 2) as u8).collect()).unwrap();
        let s = sup_loss(&mut g, l, &labels).unwrap();
        assert!((g.value(s.node).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn all_ignored_is_zero_and_flagged() {
        let mut g = Graph::<f64>::new();
        let l = g.input(Tensor::zeros(&[1, 2, 2, 2]), true);
        let labels = LabelMap::filled(1, 2, 2, IGNORE_LABEL);
        let s = sup_loss(&mut g, l, &labels).unwrap();
        assert!(s.all_ignored);
        assert_eq!(g.value(s.node).item(), 0.0);
        let grads = g.backward(s.node).unwrap();
        assert!(grads.node(l).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weight_mask_gives_zero_loss() {
        let mut g = Graph::<f64>::new();
        let l = g.input(logits(&[1.0, 2.0, 0.5, -1.0], 1, 2, 1, 2), true);
        let pseudo = PseudoLabel::from_dist(Tensor::from_f64(&[1, 2, 1, 2], &[0.9, 0.2, 0.1, 0.8]).unwrap()).unwrap();
        let w = WeightMask {
            weights: Tensor::zeros(&[1, 1, 1, 2]),
            gamma: 0.5,
        };
        let node = uscs_loss(&mut g, l, &pseudo, &w, UscsNorm::WeightedMean).unwrap();
        assert_eq!(g.value(node).item(), 0.0);
    }

    #[test]
    fn literal_normalisation_divides_by_pixel_count() {
        let pseudo = PseudoLabel::from_dist(Tensor::from_f64(&[1, 2, 1, 2], &[0.9, 0.2, 0.1, 0.8]).unwrap()).unwrap();
        let w = WeightMask::<f64>::ones(&[1, 1, 1, 2]);
        let raw = logits(&[1.0, 2.0, 0.5, -1.0], 1, 2, 1, 2);
        let mut g = Graph::<f64>::new();
        let l = g.input(raw, true);
        let a = uscs_loss(&mut g, l, &pseudo, &w, UscsNorm::WeightedMean).unwrap();
        let b = uscs_loss(&mut g, l, &pseudo, &w, UscsNorm::Literal).unwrap();
        assert!((g.value(a).item() / 2.0 - g.value(b).item()).abs() < 1e-15);
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss((1.0, 2.0), (0.5, 0.5), 1.0).total, 4.0);
        assert_eq!(total_loss((1.0, 2.0), (0.5, 0.5), 0.0).total, 3.0);
    }
}
