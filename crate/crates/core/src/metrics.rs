//! Segmentation quality, branch diversity and training-cost accounting.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::model::{Component, MimoConfig};
use crate::tensor::{LabelMap, Scalar, IGNORE_LABEL};

/// `C×C` pixel counts; entry `(t, p)` counts truth `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    /// Accumulates one batch. Pixels whose truth is the ignore label are skipped.
    pub fn add(&mut self, truth: &LabelMap, pred: &LabelMap) -> Result<()> {
        if truth.dims() != pred.dims() {
            return Err(Error::shape(
                "confusion",
                &[truth.n, truth.h, truth.w],
                &[pred.n, pred.h, pred.w],
            ));
        }
        let c = self.num_classes;
        for (&t, &p) in truth.data.iter().zip(&pred.data) {
            if t == IGNORE_LABEL {
                continue;
            }
            let (t, p) = (t as usize, p as usize);
            if t >= c || p >= c {
                return Err(Error::InvalidArgument(format!("class id {} outside 0..{c}", t.max(p))));
            }
            self.counts[t * c + p] += 1;
        }
        Ok(())
    }

    /// Entrywise sum.
    pub fn merge(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        if self.num_classes != other.num_classes {
            return Err(Error::shape("merge", &[self.num_classes], &[other.num_classes]));
        }
        Ok(ConfusionMatrix {
            num_classes: self.num_classes,
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `TP / (TP + FP + FN)`; `None` when the class is absent from the truth.
    pub fn iou(&self, class: usize) -> Option<f64> {
        let c = self.num_classes;
        let tp = self.get(class, class);
        let truth: u64 = (0..c).map(|p| self.get(class, p)).sum();
        if truth == 0 {
            return None;
        }
        let predicted: u64 = (0..c).map(|t| self.get(t, class)).sum();
        Some(tp as f64 / (truth + predicted - tp) as f64)
    }

    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.num_classes).map(|k| self.iou(k)).collect()
    }

    /// Mean IoU over classes present in the truth; zero for an empty matrix.
    pub fn miou(&self) -> f64 {
        let present: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }

    pub fn pixel_accuracy(&self) -> f64 {
        let diag: u64 = (0..self.num_classes).map(|k| self.get(k, k)).sum();
        match self.total() {
            0 => 0.0,
            t => diag as f64 / t as f64,
        }
    }
}

/// Fraction of pixels where two label maps disagree.
pub fn non_overlap_ratio(a: &LabelMap, b: &LabelMap) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape("non_overlap_ratio", &[a.n, a.h, a.w], &[b.n, b.h, b.w]));
    }
    let differ = a.data.iter().zip(&b.data).filter(|(x, y)| x != y).count();
    Ok(differ as f64 / a.data.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub encoder: usize,
    pub decoder: usize,
    pub heads: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.encoder + self.decoder + self.heads
    }
}

/// Scalar parameter count per component. `groups` gives each slot's component.
pub fn count_params<T: Scalar>(params: &ParamSet<T>, groups: &[Component]) -> ParamCount {
    let mut out = ParamCount::default();
    for (p, group) in params.iter().zip(groups) {
        let n = p.value.numel();
        match group {
            Component::Encoder => out.encoder += n,
            Component::Decoder => out.decoder += n,
            Component::Head => out.heads += n,
        }
    }
    out
}

/// Network wiring for cost purposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    /// One input, one head.
    Single,
    /// Two inputs through the shared encoder, one decoder pass, two heads.
    Mimo,
}

/// Parameter count derived from the architecture alone.
pub fn count_params_static(cfg: &MimoConfig, topology: Topology) -> ParamCount {
    let (h, w) = cfg.input_size;
    let mut out = ParamCount::default();
    for l in cfg.branch_layers(h, w) {
        match l.component {
            Component::Encoder => out.encoder += l.params(),
            Component::Decoder => out.decoder += l.params(),
            Component::Head => {
                out.heads += l.params() * if topology == Topology::Mimo { 2 } else { 1 }
            }
        }
    }
    out
}

/// Multiply-accumulates of one forward pass on a `batch×C×h×w` input
/// (convolutions only).
pub fn count_macs(cfg: &MimoConfig, topology: Topology, batch: usize, h: usize, w: usize) -> u64 {
    let branches = match topology {
        Topology::Single => 1,
        Topology::Mimo => 2,
    };
    let per_image: u64 = cfg
        .branch_layers(h, w)
        .iter()
        .map(|l| {
            let m = l.macs() as u64;
            match l.component {
                Component::Encoder | Component::Head => m * branches,
                Component::Decoder => m,
            }
        })
        .sum();
    per_image * batch as u64
}

/// One row of the training-cost table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub method: String,
    pub params: usize,
    pub macs_per_forward: u64,
    pub forward_passes: usize,
    pub macs_per_iteration: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub input: (usize, usize),
    pub rows: Vec<CostRow>,
}

impl CostReport {
    /// Supervised single net, two-model cross supervision and the MIMO method
    /// at a single input of the configured size.
    pub fn build(cfg: &MimoConfig, passes: [usize; 3]) -> Self {
        let (h, w) = cfg.input_size;
        let single = count_params_static(cfg, Topology::Single).total();
        let mimo = count_params_static(cfg, Topology::Mimo).total();
        let single_macs = count_macs(cfg, Topology::Single, 1, h, w);
        let mimo_macs = count_macs(cfg, Topology::Mimo, 1, h, w);
        let row = |method: &str, params, macs: u64, passes: usize| CostRow {
            method: method.to_string(),
            params,
            macs_per_forward: macs,
            forward_passes: passes,
            macs_per_iteration: macs * passes as u64,
        };
        CostReport {
            input: (h, w),
            rows: vec![
                row("SupOnly", single, single_macs, passes[0]),
                row("CPS", 2 * single, single_macs, passes[1]),
                row("USCS", mimo, mimo_macs, passes[2]),
            ],
        }
    }

    pub fn row(&self, method: &str) -> Option<&CostRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MimoSegNet, SingleSegNet};

    fn map(data: &[u8], h: usize, w: usize) -> LabelMap {
        LabelMap::new(1, h, w, data.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let t = map(&[0, 1, 2, 1], 2, 2);
        let mut cm = ConfusionMatrix::new(3);
        cm.add(&t, &t).unwrap();
        assert_eq!(cm.miou(), 1.0);
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn constant_wrong_class_hand_count() {
        // truth: 3 pixels of class 0, 1 of class 1; prediction: all class 1
        let mut cm = ConfusionMatrix::new(2);
        cm.add(&map(&[0, 0, 0, 1], 2, 2), &map(&[1, 1, 1, 1], 2, 2)).unwrap();
        assert_eq!(cm.iou(0), Some(0.0));
        assert_eq!(cm.iou(1), Some(0.25));
        assert_eq!(cm.miou(), 0.125);
    }

    #[test]
    fn absent_classes_do_not_count() {
        let mut cm = ConfusionMatrix::new(4);
        cm.add(&map(&[0, 0], 1, 2), &map(&[0, 0], 1, 2)).unwrap();
        assert_eq!(cm.iou(3), None);
        assert_eq!(cm.miou(), 1.0);
    }

    #[test]
    fn ignored_pixels_are_skipped() {
        let mut cm = ConfusionMatrix::new(2);
        cm.add(&map(&[0, IGNORE_LABEL], 1, 2), &map(&[0, 1], 1, 2)).unwrap();
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn non_overlap_counts() {
        let a = map(&[0; 12], 3, 4);
        let mut b = a.clone();
        assert_eq!(non_overlap_ratio(&a, &b).unwrap(), 0.0);
        b.data[0] = 1;
        b.data[5] = 1;
        b.data[11] = 2;
        assert_eq!(non_overlap_ratio(&a, &b).unwrap(), 0.25);
        let ones = map(&[1; 12], 3, 4);
        assert_eq!(non_overlap_ratio(&a, &ones).unwrap(), 1.0);
        assert!(non_overlap_ratio(&a, &map(&[0; 4], 2, 2)).is_err());
    }

    fn pointwise(cin: usize, cout: usize) -> MimoConfig {
        MimoConfig {
            in_channels: cin,
            num_classes: cout,
            encoder_widths: vec![],
            encoder_strides: vec![],
            decoder_widths: vec![],
            input_size: (8, 8),
            ..MimoConfig::default()
        }
    }

    #[test]
    fn conv_formulas() {
        let head_only = pointwise(3, 4);
        let layers = head_only.branch_layers(8, 8);
        assert_eq!(layers.len(), 1);
        assert_eq!(layers[0].params(), 16);
        assert_eq!(count_macs(&head_only, Topology::Single, 1, 8, 8), 768);
        let l = crate::model::ConvLayer {
            name: "c".into(),
            component: Component::Encoder,
            in_channels: 16,
            out_channels: 32,
            kernel: 3,
            stride: 1,
            out_h: 16,
            out_w: 16,
        };
        assert_eq!(l.macs(), 1_179_648);
    }

    #[test]
    fn static_and_instantiated_counts_agree() {
        let cfg = MimoConfig::default();
        let mimo = MimoSegNet::<f32>::new(cfg.clone(), 0).unwrap();
        let single = SingleSegNet::<f32>::new(cfg.clone(), 0).unwrap();
        assert_eq!(count_params(mimo.params(), &mimo.param_groups()), count_params_static(&cfg, Topology::Mimo));
        assert_eq!(
            count_params(single.params(), &single.param_groups()),
            count_params_static(&cfg, Topology::Single)
        );
        let m = count_params_static(&cfg, Topology::Mimo);
        let s = count_params_static(&cfg, Topology::Single);
        assert_eq!(m.total() - s.total(), s.heads);
    }

    #[test]
    fn macs_are_linear_in_batch() {
        let cfg = MimoConfig::default();
        let one = count_macs(&cfg, Topology::Mimo, 1, 64, 64);
        assert_eq!(count_macs(&cfg, Topology::Mimo, 5, 64, 64), 5 * one);
    }

    #[test]
    fn cost_table_orderings() {
        let r = CostReport::build(&MimoConfig::default(), [1, 4, 2]);
        let (sup, cps, uscs) = (r.row("SupOnly").unwrap(), r.row("CPS").unwrap(), r.row("USCS").unwrap());
        assert!(uscs.params < cps.params);
        assert!(sup.macs_per_iteration < uscs.macs_per_iteration);
        assert!(uscs.macs_per_iteration < cps.macs_per_iteration);
    }
}
