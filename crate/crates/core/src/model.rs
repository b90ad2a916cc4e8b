//! Two-input two-output segmentation network.
//!
//! Both inputs run through one shared encoder. Their feature maps are fused
//! (grid mix or summing), decoded once by a shared decoder trunk, and read
//! out by two independent 1×1 classifier heads: head 1 predicts the content of
//! input 1, head 2 the content of input 2.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, NodeId, ParamSet, UpsampleMode};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// How the two encoder feature maps are combined before the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    GridMix,
    Summing,
}

impl std::fmt::Display for Fusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Fusion::GridMix => write!(f, "gridmix"),
            Fusion::Summing => write!(f, "summing"),
        }
    }
}

impl std::str::FromStr for Fusion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gridmix" => Ok(Fusion::GridMix),
            "summing" => Ok(Fusion::Summing),
            other => Err(format!("unknown fusion {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MimoConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub encoder_widths: Vec<usize>,
    pub encoder_strides: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub grid_size: usize,
    pub fusion: Fusion,
    pub upsample: UpsampleMode,
    pub input_size: (usize, usize),
}

impl Default for MimoConfig {
    fn default() -> Self {
        MimoConfig {
            in_channels: 3,
            num_classes: 4,
            encoder_widths: vec![16, 32, 64],
            encoder_strides: vec![2, 2, 1],
            decoder_widths: vec![32, 16],
            grid_size: 1,
            fusion: Fusion::GridMix,
            upsample: UpsampleMode::Nearest,
            input_size: (64, 64),
        }
    }
}

/// Which part of the network a parameter or layer belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    Encoder,
    Decoder,
    Head,
}

/// Static description of one convolution, used for cost accounting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub component: Component,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvLayer {
    pub fn params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }

    pub fn macs(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel * self.out_h * self.out_w
    }
}

impl MimoConfig {
    pub fn total_stride(&self) -> usize {
        self.encoder_strides.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.num_classes < 2 {
            bad.push("num_classes".to_string());
        }
        if self.in_channels == 0 {
            bad.push("in_channels".to_string());
        }
        if self.grid_size == 0 {
            bad.push("grid_size".to_string());
        }
        if self.encoder_widths.is_empty()
            || self.encoder_widths.len() != self.encoder_strides.len()
            || self.encoder_widths.contains(&0)
        {
            bad.push("encoder_widths".to_string());
        }
        if self.encoder_strides.iter().any(|&s| s != 1 && s != 2) {
            bad.push("encoder_strides".to_string());
        }
        if self.decoder_widths.contains(&0) || 1usize << self.decoder_widths.len() != self.total_stride() {
            bad.push("decoder_widths".to_string());
        }
        let s = self.total_stride();
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % s != 0 || w % s != 0 {
            bad.push("input_size".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad))
        }
    }

    /// Spatial extent of the fused feature map for an input of `h×w`.
    pub fn feature_size(&self, h: usize, w: usize) -> (usize, usize) {
        let s = self.total_stride();
        (h / s, w / s)
    }

    /// Convolutions of one encoder → decoder → head branch at input `h×w`.
    pub fn branch_layers(&self, h: usize, w: usize) -> Vec<ConvLayer> {
        let mut layers = Vec::new();
        let (mut ch, mut cw, mut cin) = (h, w, self.in_channels);
        for (i, (&width, &stride)) in self.encoder_widths.iter().zip(&self.encoder_strides).enumerate() {
            ch = (ch + 2 - 3) / stride + 1;
            cw = (cw + 2 - 3) / stride + 1;
            layers.push(ConvLayer {
                name: format!("encoder.{i}"),
                component: Component::Encoder,
                in_channels: cin,
                out_channels: width,
                kernel: 3,
                stride,
                out_h: ch,
                out_w: cw,
            });
            cin = width;
        }
        for (j, &width) in self.decoder_widths.iter().enumerate() {
            layers.push(ConvLayer {
                name: format!("decoder.{j}"),
                component: Component::Decoder,
                in_channels: cin,
                out_channels: width,
                kernel: 3,
                stride: 1,
                out_h: ch,
                out_w: cw,
            });
            ch *= 2;
            cw *= 2;
            cin = width;
        }
        layers.push(ConvLayer {
            name: "head".to_string(),
            component: Component::Head,
            in_channels: cin,
            out_channels: self.num_classes,
            kernel: 1,
            stride: 1,
            out_h: ch,
            out_w: cw,
        });
        layers
    }
}

/// Binary fusion mask over the feature grid, one plane per batch element,
/// constant within each `g×g` cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMask {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub grid: usize,
    pub data: Vec<u8>,
}

impl GridMask {
    pub fn get(&self, b: usize, y: usize, x: usize) -> u8 {
        self.data[(b * self.h + y) * self.w + x]
    }

    pub fn filled(n: usize, h: usize, w: usize, value: u8) -> Self {
        GridMask {
            n,
            h,
            w,
            grid: h.max(w),
            data: vec![value; n * h * w],
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }).collect();
        Tensor::new(vec![self.n, 1, self.h, self.w], data).expect("mask shape")
    }
}

/// Draws each `g×g` cell i.i.d. Bernoulli(0.5). Border cells cut short by the
/// map extent share their cell's single draw.
pub fn sample_grid_mask(n: usize, h: usize, w: usize, grid: usize, rng: &mut impl Rng) -> Result<GridMask> {
    if grid == 0 {
        return Err(Error::InvalidArgument("grid size must be at least 1".into()));
    }
    let (cy, cx) = (h.div_ceil(grid), w.div_ceil(grid));
    let mut data = vec![0u8; n * h * w];
    for b in 0..n {
        let cells: Vec<u8> = (0..cy * cx).map(|_| rng.random_bool(0.5) as u8).collect();
        for y in 0..h {
            for x in 0..w {
                data[(b * h + y) * w + x] = cells[(y / grid) * cx + x / grid];
            }
        }
    }
    Ok(GridMask { n, h, w, grid, data })
}

/// `m ⊙ f1 + (1 − m) ⊙ f2`, with `m` broadcast over channels.
pub fn gridmix<T: Scalar>(f1: &Tensor<T>, f2: &Tensor<T>, m: &GridMask) -> Result<Tensor<T>> {
    crate::autodiff::kernels::grid_select(f1, f2, &m.to_tensor())
}

pub fn summing_fusion<T: Scalar>(f1: &Tensor<T>, f2: &Tensor<T>) -> Result<Tensor<T>> {
    f1.zip_map(f2, "summing_fusion", |a, b| a + b)
}

/// Invocation counters for cost instrumentation.
#[derive(Debug, Default)]
pub struct Counters {
    forward_passes: AtomicUsize,
    encoder_calls: AtomicUsize,
    decoder_calls: AtomicUsize,
    head_calls: AtomicUsize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub forward_passes: usize,
    pub encoder_calls: usize,
    pub decoder_calls: usize,
    pub head_calls: usize,
}

impl Counters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            forward_passes: self.forward_passes.load(Ordering::Relaxed),
            encoder_calls: self.encoder_calls.load(Ordering::Relaxed),
            decoder_calls: self.decoder_calls.load(Ordering::Relaxed),
            head_calls: self.head_calls.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.forward_passes.store(0, Ordering::Relaxed);
        self.encoder_calls.store(0, Ordering::Relaxed);
        self.decoder_calls.store(0, Ordering::Relaxed);
        self.head_calls.store(0, Ordering::Relaxed);
    }

    fn bump(counter: &AtomicUsize) {
        counter.fetch_add(1, Ordering::Relaxed);
    }
}

impl CounterSnapshot {
    pub fn since(self, earlier: CounterSnapshot) -> CounterSnapshot {
        CounterSnapshot {
            forward_passes: self.forward_passes - earlier.forward_passes,
            encoder_calls: self.encoder_calls - earlier.encoder_calls,
            decoder_calls: self.decoder_calls - earlier.decoder_calls,
            head_calls: self.head_calls - earlier.head_calls,
        }
    }
}

/// Parameter slots (weight, bias) of every convolution.
#[derive(Clone, Debug)]
struct Layout {
    encoder: Vec<(usize, usize)>,
    decoder: Vec<(usize, usize)>,
    heads: Vec<(usize, usize)>,
}

/// Graph nodes of a model's parameters for one graph.
#[derive(Clone, Debug)]
pub struct BoundParams {
    ids: Vec<NodeId>,
}

impl BoundParams {
    pub fn node(&self, index: usize) -> NodeId {
        self.ids[index]
    }
}

fn kaiming<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product();
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    let data = (0..shape.iter().product::<usize>())
        .map(|_| T::from_f64(normal.sample(rng)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Shared encoder/decoder machinery behind both network kinds.
#[derive(Debug)]
struct Trunk<T> {
    config: MimoConfig,
    params: ParamSet<T>,
    layout: Layout,
    counters: Counters,
}

impl<T: Scalar> Trunk<T> {
    fn build(config: MimoConfig, seed: u64, heads: usize) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = init_rng(seed, 0);
        let (h, w) = config.input_size;
        let layers = config.branch_layers(h, w);
        let mut layout = Layout {
            encoder: Vec::new(),
            decoder: Vec::new(),
            heads: Vec::new(),
        };
        let conv = |params: &mut ParamSet<T>, name: &str, l: &ConvLayer, rng: &mut ChaCha8Rng| {
            let wi = params.push(
                format!("{name}.weight"),
                kaiming(&[l.out_channels, l.in_channels, l.kernel, l.kernel], rng),
            );
            let bi = params.push(format!("{name}.bias"), Tensor::zeros(&[l.out_channels]));
            (wi, bi)
        };
        for l in &layers {
            match l.component {
                Component::Encoder => layout.encoder.push(conv(&mut params, &l.name, l, &mut rng)),
                Component::Decoder => layout.decoder.push(conv(&mut params, &l.name, l, &mut rng)),
                Component::Head => {
                    for k in 0..heads {
                        // same distribution, independent stream per head
                        let mut head_rng = init_rng(seed, 1 + k as u64);
                        layout
                            .heads
                            .push(conv(&mut params, &format!("head{}", k + 1), l, &mut head_rng));
                    }
                }
            }
        }
        Ok(Trunk {
            config,
            params,
            layout,
            counters: Counters::default(),
        })
    }

    fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        BoundParams {
            ids: self
                .params
                .iter()
                .enumerate()
                .map(|(i, p)| g.param(i, p.value.clone()))
                .collect(),
        }
    }

    fn check_input(&self, g: &Graph<T>, x: NodeId) -> Result<()> {
        let (_, c, h, w) = g.value(x).dims4()?;
        let s = self.config.total_stride();
        if c != self.config.in_channels || h % s != 0 || w % s != 0 {
            return Err(Error::ShapeMismatch {
                op: "encode",
                left: g.value(x).shape().to_vec(),
                right: vec![0, self.config.in_channels, s, s],
            });
        }
        Ok(())
    }

    fn encode(&self, g: &mut Graph<T>, p: &BoundParams, x: NodeId) -> Result<NodeId> {
        self.check_input(g, x)?;
        Counters::bump(&self.counters.encoder_calls);
        let mut h = x;
        for (&(wi, bi), &stride) in self.layout.encoder.iter().zip(&self.config.encoder_strides) {
            let c = g.conv2d(h, p.node(wi), Some(p.node(bi)), stride, 1)?;
            h = g.relu(c);
        }
        Ok(h)
    }

    fn decode(&self, g: &mut Graph<T>, p: &BoundParams, f: NodeId) -> Result<NodeId> {
        Counters::bump(&self.counters.decoder_calls);
        let mut h = f;
        for &(wi, bi) in &self.layout.decoder {
            let c = g.conv2d(h, p.node(wi), Some(p.node(bi)), 1, 1)?;
            let r = g.relu(c);
            h = g.upsample2x(r, self.config.upsample)?;
        }
        Ok(h)
    }

    fn head(&self, g: &mut Graph<T>, p: &BoundParams, k: usize, d: NodeId) -> Result<NodeId> {
        Counters::bump(&self.counters.head_calls);
        let (wi, bi) = self.layout.heads[k];
        g.conv2d(d, p.node(wi), Some(p.node(bi)), 1, 0)
    }

    fn param_groups(&self) -> Vec<Component> {
        let mut out = vec![Component::Encoder; self.params.len()];
        for &(w, b) in &self.layout.decoder {
            out[w] = Component::Decoder;
            out[b] = Component::Decoder;
        }
        for &(w, b) in &self.layout.heads {
            out[w] = Component::Head;
            out[b] = Component::Head;
        }
        out
    }
}

/// Logits of both heads for one forward pass.
#[derive(Clone, Debug)]
pub struct MimoOutput {
    pub logits1: NodeId,
    pub logits2: NodeId,
    pub mask: Option<GridMask>,
}

#[derive(Debug)]
pub struct MimoSegNet<T> {
    trunk: Trunk<T>,
}

impl<T: Scalar> MimoSegNet<T> {
    pub fn new(config: MimoConfig, seed: u64) -> Result<Self> {
        Ok(MimoSegNet {
            trunk: Trunk::build(config, seed, 2)?,
        })
    }

    pub fn config(&self) -> &MimoConfig {
        &self.trunk.config
    }

    /// Mutable access for tests and ablations that need to pin a setting.
    pub fn config_mut(&mut self) -> &mut MimoConfig {
        &mut self.trunk.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.trunk.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.trunk.params
    }

    pub fn counters(&self) -> &Counters {
        &self.trunk.counters
    }

    /// Component of every parameter slot, in slot order.
    pub fn param_groups(&self) -> Vec<Component> {
        self.trunk.param_groups()
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        self.trunk.bind(g)
    }

    pub fn encode(&self, g: &mut Graph<T>, p: &BoundParams, x: NodeId) -> Result<NodeId> {
        self.trunk.encode(g, p, x)
    }

    /// Copies head 1's parameters into head 2.
    pub fn tie_heads(&mut self) {
        let (w1, b1) = self.trunk.layout.heads[0];
        let (w2, b2) = self.trunk.layout.heads[1];
        let (wv, bv) = (self.trunk.params.get(w1).clone(), self.trunk.params.get(b1).clone());
        *self.trunk.params.get_mut(w2) = wv;
        *self.trunk.params.get_mut(b2) = bv;
    }

    /// One MIMO pass: shared encoder on both inputs, fusion, shared decoder,
    /// both heads. Logits come out at input resolution.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        x1: NodeId,
        x2: NodeId,
        rng: &mut impl Rng,
    ) -> Result<MimoOutput> {
        if g.value(x1).shape() != g.value(x2).shape() {
            return Err(Error::shape("forward", g.value(x1).shape(), g.value(x2).shape()));
        }
        Counters::bump(&self.trunk.counters.forward_passes);
        let f1 = self.trunk.encode(g, p, x1)?;
        let f2 = self.trunk.encode(g, p, x2)?;
        let (fused, mask) = match self.trunk.config.fusion {
            Fusion::GridMix => {
                let (n, _, h, w) = g.value(f1).dims4()?;
                let m = sample_grid_mask(n, h, w, self.trunk.config.grid_size, rng)?;
                (g.grid_mix(f1, f2, m.to_tensor())?, Some(m))
            }
            Fusion::Summing => (g.add(f1, f2)?, None),
        };
        let d = self.trunk.decode(g, p, fused)?;
        let logits1 = self.trunk.head(g, p, 0, d)?;
        let logits2 = self.trunk.head(g, p, 1, d)?;
        Ok(MimoOutput { logits1, logits2, mask })
    }

    /// Softmax maps of both heads with `x` fed to both inputs, no gradient.
    pub fn predict_heads(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::no_grad();
        let p = self.bind(&mut g);
        let xi = g.input(x.clone(), false);
        // identical inputs make the fusion mask irrelevant
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut g, &p, xi, xi, &mut rng)?;
        let p1 = g.softmax(out.logits1)?;
        let p2 = g.softmax(out.logits2)?;
        Ok((g.value(p1).clone(), g.value(p2).clone()))
    }

    /// Averaged class probabilities of the two heads.
    pub fn forward_inference(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (p1, p2) = self.predict_heads(x)?;
        let half = T::from_f64(0.5);
        p1.zip_map(&p2, "average", |a, b| (a + b) * half)
    }
}

/// One-input one-output network with the same trunk; the reference for
/// two-model cost comparisons.
#[derive(Debug)]
pub struct SingleSegNet<T> {
    trunk: Trunk<T>,
}

impl<T: Scalar> SingleSegNet<T> {
    pub fn new(config: MimoConfig, seed: u64) -> Result<Self> {
        Ok(SingleSegNet {
            trunk: Trunk::build(config, seed, 1)?,
        })
    }

    pub fn config(&self) -> &MimoConfig {
        &self.trunk.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.trunk.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.trunk.params
    }

    pub fn counters(&self) -> &Counters {
        &self.trunk.counters
    }

    pub fn param_groups(&self) -> Vec<Component> {
        self.trunk.param_groups()
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        self.trunk.bind(g)
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &BoundParams, x: NodeId) -> Result<NodeId> {
        Counters::bump(&self.trunk.counters.forward_passes);
        let f = self.trunk.encode(g, p, x)?;
        let d = self.trunk.decode(g, p, f)?;
        self.trunk.head(g, p, 0, d)
    }
}
