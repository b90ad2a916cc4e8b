//! Tape-style computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` is a single reverse sweep.

use std::collections::BTreeMap;

use super::kernels::{self, ConvGeometry, UpsampleMode};
use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param(usize),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeometry,
    },
    Relu(NodeId),
    Upsample2x(NodeId, UpsampleMode),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Log(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Mean(NodeId),
    SpatialMean(NodeId),
    WeightedMean {
        values: NodeId,
        weights: Tensor<T>,
        normalizer: T,
    },
    PickClass(NodeId, LabelMap),
    GridMix {
        a: NodeId,
        b: NodeId,
        mask: Tensor<T>,
    },
    ConcatBatch(Vec<NodeId>),
    SliceBatch {
        x: NodeId,
        start: usize,
    },
    StopGradient,
}

/// Operation kind of a node, without its payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Param,
    Conv2d,
    Relu,
    Upsample2x,
    Softmax,
    LogSoftmax,
    Log,
    Add,
    Sub,
    Mul,
    Scale,
    Mean,
    SpatialMean,
    WeightedMean,
    PickClass,
    GridMix,
    ConcatBatch,
    SliceBatch,
    StopGradient,
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    track_params: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: BTreeMap<usize, Tensor<T>>,
    visited: usize,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a parameter index, if the loss depends on it.
    pub fn param(&self, index: usize) -> Option<&Tensor<T>> {
        self.params.get(&index)
    }

    pub fn node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes.get(id.0).and_then(Option::as_ref)
    }

    pub fn into_params(self) -> BTreeMap<usize, Tensor<T>> {
        self.params
    }

    /// Number of nodes whose backward rule ran.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

impl<T: Scalar> Graph<T> {
    /// A graph whose parameter leaves require gradients.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            track_params: true,
        }
    }

    /// A graph for inference: parameters enter as constants.
    pub fn no_grad() -> Self {
        Graph {
            nodes: Vec::new(),
            track_params: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        match self.nodes[id.0].op {
            Op::Leaf => OpKind::Leaf,
            Op::Param(_) => OpKind::Param,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Relu(_) => OpKind::Relu,
            Op::Upsample2x(..) => OpKind::Upsample2x,
            Op::Softmax(_) => OpKind::Softmax,
            Op::LogSoftmax(_) => OpKind::LogSoftmax,
            Op::Log(_) => OpKind::Log,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Mean(_) => OpKind::Mean,
            Op::SpatialMean(_) => OpKind::SpatialMean,
            Op::WeightedMean { .. } => OpKind::WeightedMean,
            Op::PickClass(..) => OpKind::PickClass,
            Op::GridMix { .. } => OpKind::GridMix,
            Op::ConcatBatch(_) => OpKind::ConcatBatch,
            Op::SliceBatch { .. } => OpKind::SliceBatch,
            Op::StopGradient => OpKind::StopGradient,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Constant input, or a differentiable leaf when `requires_grad` is set.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf bound to a model parameter slot.
    pub fn param(&mut self, index: usize, value: Tensor<T>) -> NodeId {
        let rg = self.track_params;
        self.push(value, Op::Param(index), rg)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, padding: usize) -> Result<NodeId> {
        let geom = ConvGeometry { stride, padding };
        let value = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = kernels::relu(self.value(x));
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn upsample2x(&mut self, x: NodeId, mode: UpsampleMode) -> Result<NodeId> {
        let value = kernels::upsample2x(self.value(x), mode)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Upsample2x(x, mode), rg))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let value = kernels::softmax_channels(self.value(x), false)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let value = kernels::softmax_channels(self.value(x), true)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::LogSoftmax(x), rg))
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v.ln());
        let rg = self.rg(&[x]);
        self.push(value, Op::Log(x), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, factor), rg)
    }

    /// Mean over every element, producing a scalar.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(&[x]);
        self.push(value, Op::Mean(x), rg)
    }

    /// Mean over the spatial axes, `N×C×H×W -> N×C×1×1`.
    pub fn spatial_mean(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let plane = h * w;
        let denom = T::from_f64(plane as f64);
        let data = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() / denom)
            .collect();
        let value = Tensor::new(vec![n, c, 1, 1], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SpatialMean(x), rg))
    }

    /// `Σ weights·values / normalizer` as a scalar; zero when the normalizer is zero.
    /// Weights are constants.
    pub fn weighted_mean(&mut self, values: NodeId, weights: Tensor<T>, normalizer: T) -> Result<NodeId> {
        let v = self.value(values);
        if v.shape() != weights.shape() {
            return Err(Error::shape("weighted_mean", v.shape(), weights.shape()));
        }
        let out = if normalizer == T::zero() {
            T::zero()
        } else {
            let s: T = v
                .data()
                .iter()
                .zip(weights.data())
                .map(|(&a, &w)| a * w)
                .sum();
            s / normalizer
        };
        let rg = self.rg(&[values]);
        Ok(self.push(
            Tensor::scalar(out),
            Op::WeightedMean {
                values,
                weights,
                normalizer,
            },
            rg,
        ))
    }

    pub fn pick_class(&mut self, x: NodeId, labels: &LabelMap) -> Result<NodeId> {
        let value = kernels::pick_class(self.value(x), labels)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::PickClass(x, labels.clone()), rg))
    }

    /// `mask ⊙ a + (1 − mask) ⊙ b` for a binary `N×1×h×w` mask.
    pub fn grid_mix(&mut self, a: NodeId, b: NodeId, mask: Tensor<T>) -> Result<NodeId> {
        let value = kernels::grid_select(self.value(a), self.value(b), &mask)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::GridMix { a, b, mask }, rg))
    }

    pub fn concat_batch(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_batch(&refs)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatBatch(parts.to_vec()), rg))
    }

    pub fn slice_batch(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let value = self.value(x).slice_batch(start, len)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SliceBatch { x, start }, rg))
    }

    /// Same value, no gradient flow to `x`.
    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).clone();
        self.push(value, Op::StopGradient, false)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let mut params = BTreeMap::new();
        let mut visited = 0;
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            visited += 1;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(gy);
                    continue;
                }
                Op::Param(p) => {
                    match params.get_mut(p) {
                        None => {
                            params.insert(*p, gy.clone());
                        }
                        Some(acc) => Tensor::add_assign(acc, &gy),
                    }
                    grads[idx] = Some(gy);
                    continue;
                }
                Op::Conv2d { x, w, b, geom } => {
                    let need_x = self.nodes[x.0].requires_grad;
                    let g = kernels::conv2d_backward(self.value(*x), self.value(*w), &gy, *geom, need_x)?;
                    self.accumulate(&mut grads, *x, g.input);
                    self.accumulate(&mut grads, *w, g.weight);
                    if let Some(b) = b {
                        self.accumulate(&mut grads, *b, g.bias);
                    }
                }
                Op::Relu(x) => {
                    let g = kernels::relu_backward(self.value(*x), &gy);
                    self.accumulate(&mut grads, *x, g);
                }
                Op::Upsample2x(x, mode) => {
                    let g = kernels::upsample2x_backward(self.value(*x).shape(), &gy, *mode);
                    self.accumulate(&mut grads, *x, g);
                }
                Op::Softmax(x) => {
                    let g = kernels::softmax_backward(&node.value, &gy);
                    self.accumulate(&mut grads, *x, g);
                }
                Op::LogSoftmax(x) => {
                    let g = kernels::log_softmax_backward(&node.value, &gy);
                    self.accumulate(&mut grads, *x, g);
                }
                Op::Log(x) => {
                    let g = gy.zip_map(self.value(*x), "log", |g, v| g / v)?;
                    self.accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, gy.clone());
                    self.accumulate(&mut grads, *b, gy);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *b, gy.map(|g| -g));
                    self.accumulate(&mut grads, *a, gy);
                }
                Op::Mul(a, b) => {
                    let ga = gy.zip_map(self.value(*b), "mul", |g, v| g * v)?;
                    let gb = gy.zip_map(self.value(*a), "mul", |g, v| g * v)?;
                    self.accumulate(&mut grads, *a, ga);
                    self.accumulate(&mut grads, *b, gb);
                }
                Op::Scale(x, f) => {
                    let f = *f;
                    self.accumulate(&mut grads, *x, gy.map(|g| g * f));
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let g = gy.item() / T::from_f64(xv.numel() as f64);
                    self.accumulate(&mut grads, *x, Tensor::full(xv.shape(), g));
                }
                Op::SpatialMean(x) => {
                    let xv = self.value(*x);
                    let (_, _, h, w) = xv.dims4()?;
                    let denom = T::from_f64((h * w) as f64);
                    let mut g = Tensor::zeros(xv.shape());
                    for (plane, &gv) in g.data_mut().chunks_mut(h * w).zip(gy.data()) {
                        plane.fill(gv / denom);
                    }
                    self.accumulate(&mut grads, *x, g);
                }
                Op::WeightedMean {
                    values,
                    weights,
                    normalizer,
                } => {
                    let g = if *normalizer == T::zero() {
                        Tensor::zeros(weights.shape())
                    } else {
                        let s = gy.item() / *normalizer;
                        weights.map(|w| w * s)
                    };
                    self.accumulate(&mut grads, *values, g);
                }
                Op::PickClass(x, labels) => {
                    let g = kernels::pick_class_backward(self.value(*x).shape(), labels, &gy);
                    self.accumulate(&mut grads, *x, g);
                }
                Op::GridMix { a, b, mask } => {
                    if self.nodes[a.0].requires_grad {
                        self.accumulate(&mut grads, *a, kernels::grid_select_backward(&gy, mask, true));
                    }
                    if self.nodes[b.0].requires_grad {
                        self.accumulate(&mut grads, *b, kernels::grid_select_backward(&gy, mask, false));
                    }
                }
                Op::ConcatBatch(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let len = self.value(*p).shape()[0];
                        if self.nodes[p.0].requires_grad {
                            self.accumulate(&mut grads, *p, gy.slice_batch(start, len)?);
                        }
                        start += len;
                    }
                }
                Op::SliceBatch { x, start } => {
                    let xv = self.value(*x);
                    let n = xv.shape()[0];
                    let len = gy.shape()[0];
                    let mut pieces = Vec::new();
                    let mut shape = xv.shape().to_vec();
                    if *start > 0 {
                        shape[0] = *start;
                        pieces.push(Tensor::zeros(&shape));
                    }
                    pieces.push(gy);
                    if start + len < n {
                        shape[0] = n - start - len;
                        pieces.push(Tensor::zeros(&shape));
                    }
                    let refs: Vec<&Tensor<T>> = pieces.iter().collect();
                    self.accumulate(&mut grads, *x, Tensor::concat_batch(&refs)?);
                }
                Op::StopGradient => unreachable!("stop-gradient nodes never require grad"),
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
            visited,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_derivative_two_x() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::scalar(3.0), true);
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.node(x).unwrap().item(), 6.0);
    }

    #[test]
    fn stop_gradient_blocks_one_factor() {
        let mut g = Graph::<f64>::new();
        let y = g.input(Tensor::from_f64(&[2], &[2.0, 5.0]).unwrap(), true);
        let sg = g.stop_gradient(y);
        let prod = g.mul(sg, y).unwrap();
        let loss = g.mean(prod);
        let grads = g.backward(loss).unwrap();
        // d/dy mean(c·y) with c = y held constant is c / n
        assert_eq!(grads.node(y).unwrap().data(), &[1.0, 2.5]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[2]), true);
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_mismatch_reports_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::zeros(&[2]), false);
        let b = g.input(Tensor::zeros(&[3]), false);
        match g.add(a, b) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![2]);
                assert_eq!(right, vec![3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn shared_param_gradients_accumulate() {
        let mut g = Graph::<f64>::new();
        let p1 = g.param(0, Tensor::scalar(2.0));
        let p2 = g.param(0, Tensor::scalar(2.0));
        let y = g.mul(p1, p2).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.param(0).unwrap().item(), 4.0);
    }

    #[test]
    fn no_grad_graph_tracks_nothing() {
        let mut g = Graph::<f64>::no_grad();
        let p = g.param(0, Tensor::scalar(2.0));
        assert!(!g.requires_grad(p));
    }
}
