//! Reference iterations for cost comparison: a supervised single network and
//! two-model cross pseudo supervision built from the same trunk.

use std::collections::BTreeMap;

use crate::autodiff::Graph;
use crate::data::{LabeledBatch, UnlabeledBatch};
use crate::error::Result;
use crate::losses::{sup_loss, PseudoLabel};
use crate::model::SingleSegNet;
use crate::tensor::{Scalar, Tensor};
use crate::transforms::apply_cutmix;

/// Gradients of one reference iteration.
#[derive(Clone, Debug)]
pub struct ReferenceStep<T> {
    pub loss: f64,
    pub grads: Vec<BTreeMap<usize, Tensor<T>>>,
}

/// One forward, one backward on labeled data.
pub fn supervised_iteration<T: Scalar>(net: &SingleSegNet<T>, labeled: &LabeledBatch<T>) -> Result<ReferenceStep<T>> {
    let mut g = Graph::new();
    let p = net.bind(&mut g);
    let x = g.input(labeled.images.clone(), false);
    let logits = net.forward(&mut g, &p, x)?;
    let loss = sup_loss(&mut g, logits, &labeled.labels)?.node;
    Ok(ReferenceStep {
        loss: g.value(loss).item().to_f64(),
        grads: vec![g.backward(loss)?.into_params()],
    })
}

fn teacher<T: Scalar>(net: &SingleSegNet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::no_grad();
    let p = net.bind(&mut g);
    let xi = g.input(x.clone(), false);
    let logits = net.forward(&mut g, &p, xi)?;
    let s = g.softmax(logits)?;
    Ok(g.value(s).clone())
}

fn student<T: Scalar>(
    net: &SingleSegNet<T>,
    labeled: &LabeledBatch<T>,
    x_ul: &Tensor<T>,
    pseudo: &PseudoLabel<T>,
) -> Result<(f64, BTreeMap<usize, Tensor<T>>)> {
    let mut g = Graph::new();
    let p = net.bind(&mut g);
    let nl = labeled.labels.n;
    let x = g.input(Tensor::concat_batch(&[&labeled.images, x_ul])?, false);
    let logits = net.forward(&mut g, &p, x)?;
    let lab = g.slice_batch(logits, 0, nl)?;
    let ul = g.slice_batch(logits, nl, x_ul.shape()[0])?;
    let s = sup_loss(&mut g, lab, &labeled.labels)?.node;
    let u = sup_loss(&mut g, ul, &pseudo.labels)?.node;
    let total = g.add(s, u)?;
    Ok((g.value(total).item().to_f64(), g.backward(total)?.into_params()))
}

/// Two independent networks: each predicts the clean unlabeled batch without
/// gradient, then trains on labeled plus CutMix-transformed unlabeled data
/// against the other network's transformed prediction. Four forwards.
pub fn cps_iteration<T: Scalar>(
    a: &SingleSegNet<T>,
    b: &SingleSegNet<T>,
    labeled: &LabeledBatch<T>,
    unlabeled: &UnlabeledBatch<T>,
) -> Result<ReferenceStep<T>> {
    let pa = teacher(a, &unlabeled.clean)?;
    let pb = teacher(b, &unlabeled.clean)?;
    let target_a = PseudoLabel::from_dist(apply_cutmix(&pb, &unlabeled.t1)?)?;
    let target_b = PseudoLabel::from_dist(apply_cutmix(&pa, &unlabeled.t1)?)?;
    let (la, ga) = student(a, labeled, &unlabeled.x_t1, &target_a)?;
    let (lb, gb) = student(b, labeled, &unlabeled.x_t1, &target_b)?;
    Ok(ReferenceStep {
        loss: la + lb,
        grads: vec![ga, gb],
    })
}
