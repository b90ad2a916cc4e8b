//! Training loop: group sampling, a no-gradient teacher pass, one student
//! pass with backward, SGD with momentum under a poly schedule, and evaluation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_diff_check, Graph, NodeId, ParamSet, UpsampleMode};
use crate::data::{
    make_splits, GroupSampler, Groups, LabeledBatch, SamplerConfig, SceneSpec, SynthDataset, TrainData, UnlabeledBatch,
};
use crate::error::{Error, Result};
use crate::losses::{make_pseudo, sup_loss, total_loss, uscs_loss, LossReport, PseudoPair, UscsNorm};
use crate::metrics::{non_overlap_ratio, ConfusionMatrix};
use crate::model::{Component, Fusion, MimoConfig, MimoSegNet};
use crate::tensor::{LabelMap, Scalar, Tensor};
use crate::transforms::{apply_cutmix, sample_cutmix, AugmentConfig, CutMixConfig};
use crate::uncertainty::{weights_from_probs, WeightMask};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    /// Supervised and weighted cross-supervision terms.
    #[default]
    Uscs,
    /// Labeled data only: no teacher pass, unlabeled data is never read.
    Supervised,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }

        impl std::str::FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    other => Err(format!("unknown {} {other:?}", stringify!($ty).to_lowercase())),
                }
            }
        }
    };
}

text_enum!(Mode { Uscs => "uscs", Supervised => "supervised" });
text_enum!(Precision { F32 => "f32", F64 => "f64" });

/// Every hyperparameter of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lambda: f64,
    /// Iterations over which the unlabeled weight ramps up to `lambda`
    /// (`λ·exp(−5(1 − t)²)`); zero keeps it constant.
    pub lambda_rampup: usize,
    pub gamma: f64,
    /// When false the weight mask is all ones (the `γ → 0⁺` limit).
    pub uncertainty: bool,
    pub uscs_norm: UscsNorm,
    pub rho: f64,
    pub grid_size: usize,
    pub fusion: Fusion,
    pub upsample: UpsampleMode,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    /// Learning rate of the encoder.
    pub base_lr: f64,
    /// Decoder and heads train at `base_lr · lr_mult`.
    pub lr_mult: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_iters: usize,
    pub batch_size: usize,
    pub labeled_ratio: f64,
    pub num_scenes: usize,
    pub val_scenes: usize,
    pub image_size: usize,
    pub num_classes: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    pub scene_noise: f64,
    pub color_jitter: f64,
    pub foreground_contrast: f64,
    pub color_separation: f64,
    pub cutmix_min_area: f64,
    pub cutmix_max_area: f64,
    pub augment: bool,
    pub data_seed: u64,
    pub split_seed: u64,
    pub model_seed: u64,
    pub sampler_seed: u64,
    pub precision: Precision,
    pub eval_batch: usize,
    /// Evaluate every this many iterations; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Checkpoint every this many iterations; 0 saves only the final model.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let scene = SceneSpec::default();
        TrainConfig {
            mode: Mode::Uscs,
            lambda: 1.0,
            lambda_rampup: 0,
            gamma: 0.5,
            uncertainty: true,
            uscs_norm: UscsNorm::WeightedMean,
            rho: 0.4,
            grid_size: 1,
            fusion: Fusion::GridMix,
            upsample: UpsampleMode::Nearest,
            encoder_widths: vec![16, 32, 64],
            decoder_widths: vec![32, 16],
            base_lr: 0.01,
            lr_mult: 10.0,
            momentum: 0.9,
            weight_decay: 1e-4,
            max_iters: 3000,
            batch_size: 8,
            labeled_ratio: 0.125,
            num_scenes: 2048,
            val_scenes: 256,
            image_size: scene.size,
            num_classes: scene.num_classes,
            min_shapes: scene.min_shapes,
            max_shapes: scene.max_shapes,
            min_radius: scene.min_radius,
            max_radius: scene.max_radius,
            scene_noise: scene.noise,
            color_jitter: scene.color_jitter,
            foreground_contrast: scene.foreground_contrast,
            color_separation: scene.color_separation,
            cutmix_min_area: 0.25,
            cutmix_max_area: 0.5,
            augment: false,
            data_seed: 0,
            split_seed: 0,
            model_seed: 0,
            sampler_seed: 0,
            precision: Precision::F32,
            eval_batch: 32,
            eval_every: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> MimoConfig {
        MimoConfig {
            in_channels: crate::data::CHANNELS,
            num_classes: self.num_classes,
            encoder_widths: self.encoder_widths.clone(),
            encoder_strides: vec![2, 2, 1],
            decoder_widths: self.decoder_widths.clone(),
            grid_size: self.grid_size,
            fusion: self.fusion,
            upsample: self.upsample,
            input_size: (self.image_size, self.image_size),
        }
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            size: self.image_size,
            num_classes: self.num_classes,
            min_shapes: self.min_shapes,
            max_shapes: self.max_shapes,
            min_radius: self.min_radius,
            max_radius: self.max_radius,
            noise: self.scene_noise,
            color_jitter: self.color_jitter,
            foreground_contrast: self.foreground_contrast,
            color_separation: self.color_separation,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            batch_size: self.batch_size,
            rho: self.rho,
            cutmix: CutMixConfig {
                min_area: self.cutmix_min_area,
                max_area: self.cutmix_max_area,
                ..CutMixConfig::default()
            },
            augment: self.augment.then(|| AugmentConfig::for_size(self.image_size)),
        }
    }

    /// Checks every key and reports all offending ones together.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        let mut check = |ok: bool, key: &str| {
            if !ok {
                bad.push(key.to_string());
            }
        };
        check(self.lambda.is_finite() && self.lambda >= 0.0, "lambda");
        check(self.gamma > 0.0 && self.gamma <= 1.0, "gamma");
        check((0.0..=1.0).contains(&self.rho), "rho");
        check(self.base_lr.is_finite() && self.base_lr > 0.0, "base_lr");
        check(self.lr_mult.is_finite() && self.lr_mult > 0.0, "lr_mult");
        check((0.0..1.0).contains(&self.momentum), "momentum");
        check(self.weight_decay.is_finite() && self.weight_decay >= 0.0, "weight_decay");
        check(self.max_iters >= 1, "max_iters");
        check(self.batch_size >= 1, "batch_size");
        check(self.val_scenes >= 1, "val_scenes");
        check(self.eval_batch >= 1, "eval_batch");
        check(
            0.0 <= self.cutmix_min_area && self.cutmix_min_area <= self.cutmix_max_area && self.cutmix_max_area <= 1.0,
            "cutmix_min_area",
        );
        let count = (self.labeled_ratio * self.num_scenes as f64).round() as usize;
        check(
            self.labeled_ratio > 0.0 && self.labeled_ratio < 1.0 && count >= 1 && count < self.num_scenes,
            "labeled_ratio",
        );
        for r in [self.model_config().validate(), self.scene_spec().validate()] {
            if let Err(Error::InvalidConfig(keys)) = r {
                for key in keys {
                    let key = if key == "input_size" { "image_size".to_string() } else { key };
                    if !bad.contains(&key) {
                        bad.push(key);
                    }
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad))
        }
    }
}

/// `base · (1 − iter/max_iter)^0.9`.
pub fn poly_lr(base: f64, iter: usize, max_iter: usize) -> f64 {
    let frac = iter.min(max_iter) as f64 / max_iter.max(1) as f64;
    base * (1.0 - frac).powf(0.9)
}

/// Momentum buffers mirroring the parameter shapes.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub velocity: Vec<Tensor<T>>,
    pub steps: usize,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        OptimizerState {
            velocity: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            steps: 0,
        }
    }
}

/// `v ← μ·v + g + wd·θ; θ ← θ − lr·v` per parameter with its own learning
/// rate. Missing gradients count as zero. Returns false, leaving everything
/// untouched, when any gradient is non-finite.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &BTreeMap<usize, Tensor<T>>,
    state: &mut OptimizerState<T>,
    lrs: &[f64],
    momentum: f64,
    weight_decay: f64,
) -> Result<bool> {
    if lrs.len() != params.len() || state.velocity.len() != params.len() {
        return Err(Error::InvalidArgument("optimizer state does not match parameters".into()));
    }
    for (i, g) in grads {
        if g.shape() != params.get(*i).shape() {
            return Err(Error::shape("sgd_step", params.get(*i).shape(), g.shape()));
        }
        if !g.all_finite() {
            return Ok(false);
        }
    }
    let (mu, wd) = (T::from_f64(momentum), T::from_f64(weight_decay));
    for (i, (p, v)) in params.iter_mut().zip(&mut state.velocity).enumerate() {
        let lr = T::from_f64(lrs[i]);
        let g = grads.get(&i);
        for (k, (theta, vel)) in p.value.data_mut().iter_mut().zip(v.data_mut()).enumerate() {
            let gk = g.map_or(T::zero(), |g| g.data()[k]);
            *vel = mu * *vel + gk + wd * *theta;
            *theta = *theta - lr * *vel;
        }
    }
    state.steps += 1;
    Ok(true)
}

/// Per-parameter learning rates at `iter`.
pub fn learning_rates(cfg: &TrainConfig, groups: &[Component], iter: usize) -> Vec<f64> {
    let lr = poly_lr(cfg.base_lr, iter, cfg.max_iters);
    groups
        .iter()
        .map(|g| match g {
            Component::Encoder => lr,
            Component::Decoder | Component::Head => lr * cfg.lr_mult,
        })
        .collect()
}

/// Independent per-iteration stream: 0 for the student pass, 1 for the teacher.
pub fn step_rng(seed: u64, iter: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_736b);
    rng.set_stream(((iter as u64) << 1) | stream);
    rng
}

/// Frozen targets for one iteration.
#[derive(Clone, Debug)]
pub struct TeacherOutputs<T> {
    pub pseudo: PseudoPair<T>,
    pub w1: WeightMask<T>,
    pub w2: WeightMask<T>,
}

impl<T: Scalar> TeacherOutputs<T> {
    pub fn mean_weight(&self) -> f64 {
        0.5 * (self.w1.mean() + self.w2.mean())
    }

    /// Disagreement of the two heads on the clean unlabeled batch.
    pub fn non_overlap(&self) -> Result<f64> {
        non_overlap_ratio(
            &self.pseudo.teacher1.argmax_channels()?,
            &self.pseudo.teacher2.argmax_channels()?,
        )
    }
}

/// No-gradient pass on the clean unlabeled batch, crossed pseudo labels and
/// their weight masks.
pub fn teacher_pass<T: Scalar>(
    model: &MimoSegNet<T>,
    unlabeled: &UnlabeledBatch<T>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TeacherOutputs<T>> {
    let pseudo = make_pseudo(model, &unlabeled.clean, &unlabeled.t1, &unlabeled.t2, rng)?;
    let mask = |p: &Tensor<T>| -> Result<WeightMask<T>> {
        if cfg.uncertainty {
            weights_from_probs(p, cfg.gamma)
        } else {
            let (n, _, h, w) = p.dims4()?;
            Ok(WeightMask::ones(&[n, 1, h, w]))
        }
    };
    Ok(TeacherOutputs {
        w1: mask(&pseudo.p1.dist)?,
        w2: mask(&pseudo.p2.dist)?,
        pseudo,
    })
}

/// Graph of the student objective, ready for backward.
#[derive(Debug)]
pub struct StudentPass<T> {
    pub graph: Graph<T>,
    pub total: NodeId,
    pub report: LossReport,
}

/// One gradient MIMO pass on `(x_l¹ ‖ x_ul^{T1}, x_l² ‖ x_ul^{T2})`, or on the
/// labeled batches alone without a teacher.
pub fn student_pass<T: Scalar>(
    model: &MimoSegNet<T>,
    groups: &Groups<T>,
    teacher: Option<&TeacherOutputs<T>>,
    cfg: &TrainConfig,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StudentPass<T>> {
    let mut g = Graph::new();
    let p = model.bind(&mut g);
    let unlabeled = match (teacher, &groups.unlabeled) {
        (Some(t), Some(u)) => Some((t, u)),
        (None, _) => None,
        (Some(_), None) => return Err(Error::InvalidArgument("teacher outputs without an unlabeled batch".into())),
    };
    let (l1, l2) = (&groups.labeled1, &groups.labeled2);
    let (x1, x2) = match unlabeled {
        Some((_, u)) => (
            Tensor::concat_batch(&[&l1.images, &u.x_t1])?,
            Tensor::concat_batch(&[&l2.images, &u.x_t2])?,
        ),
        None => (l1.images.clone(), l2.images.clone()),
    };
    let nl = l1.labels.n;
    let x1 = g.input(x1, false);
    let x2 = g.input(x2, false);
    let out = model.forward(&mut g, &p, x1, x2, rng)?;
    let (lab1, lab2) = match unlabeled {
        Some(_) => (g.slice_batch(out.logits1, 0, nl)?, g.slice_batch(out.logits2, 0, l2.labels.n)?),
        None => (out.logits1, out.logits2),
    };
    let s1 = sup_loss(&mut g, lab1, &l1.labels)?.node;
    let s2 = sup_loss(&mut g, lab2, &l2.labels)?.node;
    let sup = (g.value(s1).item().to_f64(), g.value(s2).item().to_f64());
    let (total, uscs) = match unlabeled {
        Some((t, u)) => {
            let nu = u.clean.shape()[0];
            let ul1 = g.slice_batch(out.logits1, nl, nu)?;
            let ul2 = g.slice_batch(out.logits2, l2.labels.n, nu)?;
            let u1 = uscs_loss(&mut g, ul1, &t.pseudo.p1, &t.w1, cfg.uscs_norm)?;
            let u2 = uscs_loss(&mut g, ul2, &t.pseudo.p2, &t.w2, cfg.uscs_norm)?;
            let w1 = g.scale(u1, T::from_f64(lambda));
            let w2 = g.scale(u2, T::from_f64(lambda));
            let b1 = g.add(s1, w1)?;
            let b2 = g.add(s2, w2)?;
            let total = g.add(b1, b2)?;
            (total, (g.value(u1).item().to_f64(), g.value(u2).item().to_f64()))
        }
        None => (g.add(s1, s2)?, (0.0, 0.0)),
    };
    let mut report = total_loss(sup, uscs, if unlabeled.is_some() { lambda } else { 0.0 });
    report.total = g.value(total).item().to_f64();
    Ok(StudentPass { graph: g, total, report })
}

/// Unlabeled loss weight at `iter`.
pub fn lambda_at(cfg: &TrainConfig, iter: usize) -> f64 {
    if iter >= cfg.lambda_rampup {
        return cfg.lambda;
    }
    let t = iter as f64 / cfg.lambda_rampup as f64;
    cfg.lambda * (-5.0 * (1.0 - t).powi(2)).exp()
}

/// Gradients and diagnostics of one iteration, before the update.
#[derive(Clone, Debug)]
pub struct StepResult<T> {
    pub grads: BTreeMap<usize, Tensor<T>>,
    pub report: LossReport,
    pub mean_weight: Option<f64>,
    pub non_overlap: Option<f64>,
}

/// Teacher pass (cross-supervision mode only), student pass and backward:
/// exactly two MIMO forwards with a teacher, one without.
pub fn compute_step<T: Scalar>(
    model: &MimoSegNet<T>,
    groups: &Groups<T>,
    cfg: &TrainConfig,
    iter: usize,
    config_text: &str,
) -> Result<StepResult<T>> {
    let teacher = match cfg.mode {
        Mode::Uscs => {
            let u = groups
                .unlabeled
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("cross supervision needs an unlabeled batch".into()))?;
            Some(teacher_pass(model, u, cfg, &mut step_rng(cfg.sampler_seed, iter, 1))?)
        }
        Mode::Supervised => None,
    };
    let pass = student_pass(model, groups, teacher.as_ref(), cfg, lambda_at(cfg, iter), &mut step_rng(cfg.sampler_seed, iter, 0))?;
    if !pass.report.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            iter,
            config: config_text.to_string(),
        });
    }
    let grads = pass.graph.backward(pass.total)?.into_params();
    Ok(StepResult {
        grads,
        report: pass.report,
        mean_weight: teacher.as_ref().map(TeacherOutputs::mean_weight),
        non_overlap: teacher.as_ref().map(TeacherOutputs::non_overlap).transpose()?,
    })
}

/// One row of training telemetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub iter: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub losses: LossReport,
    pub mean_w: Option<f64>,
    pub non_overlap: Option<f64>,
    /// False when the update was skipped for a non-finite gradient.
    pub applied: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub pixel_accuracy: f64,
    /// Disagreement of the two heads with each image fed to both inputs.
    pub non_overlap: f64,
    pub confusion: ConfusionMatrix,
}

/// mIoU of the averaged head outputs over `ids` of `set`.
pub fn evaluate<T: Scalar>(model: &MimoSegNet<T>, set: &SynthDataset, ids: &[usize], batch: usize) -> Result<EvalReport> {
    let mut cm = ConfusionMatrix::new(model.config().num_classes);
    let (mut differ, mut pixels) = (0.0, 0usize);
    for chunk in ids.chunks(batch.max(1)) {
        let x: Tensor<T> = set.images_batch(chunk);
        let (p1, p2) = model.predict_heads(&x)?;
        let half = T::from_f64(0.5);
        let avg = p1.zip_map(&p2, "average", |a, b| (a + b) * half)?;
        cm.add(&set.labels_batch(chunk), &avg.argmax_channels()?)?;
        let (a1, a2) = (p1.argmax_channels()?, p2.argmax_channels()?);
        differ += non_overlap_ratio(&a1, &a2)? * a1.data.len() as f64;
        pixels += a1.data.len();
    }
    Ok(EvalReport {
        miou: cm.miou(),
        per_class_iou: cm.per_class_iou(),
        pixel_accuracy: cm.pixel_accuracy(),
        non_overlap: if pixels > 0 { differ / pixels as f64 } else { 0.0 },
        confusion: cm,
    })
}

/// Model, optimizer, data and sampler of one run.
#[derive(Debug)]
pub struct Trainer<T> {
    pub cfg: TrainConfig,
    pub model: MimoSegNet<T>,
    pub opt: OptimizerState<T>,
    data: TrainData,
    val: SynthDataset,
    sampler: GroupSampler,
    groups: Vec<Component>,
    config_text: String,
    iter: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.scene_spec();
        let train = SynthDataset::generate(&spec, cfg.data_seed, 0, cfg.num_scenes)?;
        let val = SynthDataset::generate(&spec, cfg.data_seed, cfg.num_scenes, cfg.val_scenes)?;
        let splits = make_splits(cfg.num_scenes, cfg.labeled_ratio, cfg.split_seed)?;
        let data = TrainData::new(&train, &splits);
        drop(train);
        let model = MimoSegNet::new(cfg.model_config(), cfg.model_seed)?;
        let sampler = GroupSampler::new(cfg.sampler_config(), &data, cfg.sampler_seed)?;
        Ok(Trainer {
            opt: OptimizerState::new(model.params()),
            groups: model.param_groups(),
            config_text: crate::config::to_text(&cfg),
            model,
            data,
            val,
            sampler,
            cfg,
            iter: 0,
        })
    }

    pub fn iter(&self) -> usize {
        self.iter
    }

    pub fn done(&self) -> bool {
        self.iter >= self.cfg.max_iters
    }

    pub fn data(&self) -> &TrainData {
        &self.data
    }

    pub fn val(&self) -> &SynthDataset {
        &self.val
    }

    /// Draws the next groups and runs one full iteration.
    pub fn step(&mut self) -> Result<StepStats> {
        let groups = self.sampler.next_groups(&self.data, self.cfg.mode == Mode::Uscs)?;
        let result = compute_step(&self.model, &groups, &self.cfg, self.iter, &self.config_text)?;
        let lrs = learning_rates(&self.cfg, &self.groups, self.iter);
        let applied = sgd_step(
            self.model.params_mut(),
            &result.grads,
            &mut self.opt,
            &lrs,
            self.cfg.momentum,
            self.cfg.weight_decay,
        )?;
        let stats = StepStats {
            iter: self.iter,
            lr: poly_lr(self.cfg.base_lr, self.iter, self.cfg.max_iters),
            losses: result.report,
            mean_w: result.mean_weight,
            non_overlap: result.non_overlap,
            applied,
        };
        self.iter += 1;
        Ok(stats)
    }

    pub fn evaluate(&self) -> Result<EvalReport> {
        let ids: Vec<usize> = (0..self.val.len).collect();
        evaluate(&self.model, &self.val, &ids, self.cfg.eval_batch)
    }
}

/// Random labeled and unlabeled groups shaped for `cfg`, inputs uniform in
/// `[-1, 1]` and labels uniform over the classes.
pub fn random_groups(cfg: &MimoConfig, batch: usize, seed: u64) -> Result<Groups<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = cfg.input_size;
    let image = |rng: &mut ChaCha8Rng| {
        let data = (0..batch * cfg.in_channels * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![batch, cfg.in_channels, h, w], data)
    };
    let labeled = |rng: &mut ChaCha8Rng, first: usize| -> Result<LabeledBatch<f64>> {
        let images = image(rng)?;
        let data = (0..batch * h * w).map(|_| rng.random_range(0..cfg.num_classes as u8)).collect();
        Ok(LabeledBatch {
            ids: (first..first + batch).collect(),
            images,
            labels: LabelMap::new(batch, h, w, data)?,
        })
    };
    let labeled1 = labeled(&mut rng, 0)?;
    let labeled2 = labeled(&mut rng, batch)?;
    let clean = image(&mut rng)?;
    let t1 = sample_cutmix(batch, h, w, &CutMixConfig::default(), &mut rng)?;
    let t2 = sample_cutmix(batch, h, w, &CutMixConfig::default(), &mut rng)?;
    Ok(Groups {
        labeled1,
        labeled2,
        repeated: false,
        unlabeled: Some(UnlabeledBatch {
            ids: (2 * batch..3 * batch).collect(),
            x_t1: apply_cutmix(&clean, &t1)?,
            x_t2: apply_cutmix(&clean, &t2)?,
            clean,
            t1,
            t2,
        }),
    })
}

/// Maximum relative error between the analytic gradient of the full
/// objective and central finite differences, over every parameter scalar.
/// Pseudo labels and weight masks come from one teacher pass and are held
/// fixed, as they carry no gradient.
pub fn objective_gradcheck(model: &MimoSegNet<f64>, groups: &Groups<f64>, cfg: &TrainConfig, eps: f64) -> Result<f64> {
    let teacher = match (cfg.mode, &groups.unlabeled) {
        (Mode::Uscs, Some(u)) => Some(teacher_pass(model, u, cfg, &mut step_rng(cfg.sampler_seed, 0, 1))?),
        _ => None,
    };
    let pass = student_pass(model, groups, teacher.as_ref(), cfg, cfg.lambda, &mut step_rng(cfg.sampler_seed, 0, 0))?;
    let grads = pass.graph.backward(pass.total)?.into_params();
    let mut analytic = model.params().clone();
    for (i, p) in analytic.iter_mut().enumerate() {
        p.value = grads.get(&i).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape()));
    }
    let mut probe = MimoSegNet::<f64>::new(model.config().clone(), 0)?;
    let mut failure = None;
    let worst = finite_diff_check(model.params(), &analytic, eps, |p| {
        let total = probe.params_mut().assign(p).and_then(|()| {
            student_pass(&probe, groups, teacher.as_ref(), cfg, cfg.lambda, &mut step_rng(cfg.sampler_seed, 0, 0))
        });
        match total {
            Ok(pass) => pass.report.total,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(worst),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_schedule_endpoints() {
        assert_eq!(poly_lr(0.01, 0, 100), 0.01);
        assert_eq!(poly_lr(0.01, 100, 100), 0.0);
        let half = poly_lr(0.01, 50, 100);
        // 0.5^0.9 to 40 digits
        let oracle = 0.01 * 0.535_886_731_268_146_582_106_503_162_511_671_011_453_2;
        assert!((half - oracle).abs() <= 1e-17);
    }

    fn one_param(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", Tensor::scalar(v));
        p
    }

    #[test]
    fn sgd_zero_gradient_is_a_no_op() {
        let mut p = one_param(1.5);
        let mut st = OptimizerState::new(&p);
        let grads = BTreeMap::from([(0, Tensor::scalar(0.0))]);
        assert!(sgd_step(&mut p, &grads, &mut st, &[0.1], 0.9, 0.0).unwrap());
        assert_eq!(p.get(0).item(), 1.5);
    }

    #[test]
    fn sgd_two_steps_unroll() {
        let (lr, mu, g0) = (0.1, 0.9, 2.0);
        let mut p = one_param(0.0);
        let mut st = OptimizerState::new(&p);
        let grads = BTreeMap::from([(0, Tensor::scalar(g0))]);
        sgd_step(&mut p, &grads, &mut st, &[lr], mu, 0.0).unwrap();
        assert_eq!(p.get(0).item(), -lr * g0);
        sgd_step(&mut p, &grads, &mut st, &[lr], mu, 0.0).unwrap();
        assert!((p.get(0).item() + lr * g0 * (2.0 + mu)).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite_gradients() {
        let mut p = one_param(1.0);
        let mut st = OptimizerState::new(&p);
        let grads = BTreeMap::from([(0, Tensor::scalar(f64::NAN))]);
        assert!(!sgd_step(&mut p, &grads, &mut st, &[0.1], 0.9, 0.0).unwrap());
        assert_eq!(p.get(0).item(), 1.0);
        assert_eq!(st.steps, 0);
    }

    #[test]
    fn validation_lists_every_bad_key() {
        let cfg = TrainConfig {
            gamma: 0.0,
            rho: 1.5,
            batch_size: 0,
            ..TrainConfig::default()
        };
        match cfg.validate() {
            Err(Error::InvalidConfig(keys)) => assert_eq!(keys, ["gamma", "rho", "batch_size"]),
            other => panic!("{other:?}"),
        }
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn lr_groups_scale_decoder_and_heads() {
        let cfg = TrainConfig::default();
        let lrs = learning_rates(&cfg, &[Component::Encoder, Component::Decoder, Component::Head], 0);
        assert_eq!(lrs, [0.01, 0.1, 0.1]);
    }

    #[test]
    fn lambda_ramp_reaches_target() {
        let flat = TrainConfig::default();
        assert_eq!(lambda_at(&flat, 0), flat.lambda);
        let ramp = TrainConfig {
            lambda: 2.0,
            lambda_rampup: 100,
            ..TrainConfig::default()
        };
        assert_eq!(lambda_at(&ramp, 0), 2.0 * (-5f64).exp());
        assert_eq!(lambda_at(&ramp, 100), 2.0);
        assert!((1..100).all(|i| lambda_at(&ramp, i) > lambda_at(&ramp, i - 1)));
    }

    fn tiny_net() -> (MimoConfig, MimoSegNet<f64>, Groups<f64>) {
        let net = MimoConfig {
            encoder_widths: vec![4, 8],
            encoder_strides: vec![2, 1],
            decoder_widths: vec![6],
            input_size: (8, 8),
            ..MimoConfig::default()
        };
        let model = MimoSegNet::new(net.clone(), 3).unwrap();
        let groups = random_groups(&net, 2, 5).unwrap();
        (net, model, groups)
    }

    #[test]
    fn cross_supervision_step_runs_two_forwards() {
        let (_, model, groups) = tiny_net();
        for (mode, passes) in [(Mode::Uscs, 2), (Mode::Supervised, 1)] {
            let cfg = TrainConfig { mode, ..TrainConfig::default() };
            let before = model.counters().snapshot();
            compute_step(&model, &groups, &cfg, 0, "").unwrap();
            let c = model.counters().snapshot().since(before);
            assert_eq!(c.forward_passes, passes);
            assert_eq!(c.encoder_calls, 2 * passes);
            assert_eq!(c.head_calls, 2 * passes);
        }
    }

    #[test]
    fn teacher_outputs_act_as_constants() {
        let (_, model, groups) = tiny_net();
        let cfg = TrainConfig::default();
        let step = compute_step(&model, &groups, &cfg, 3, "").unwrap();
        let u = groups.unlabeled.as_ref().unwrap();
        let frozen = teacher_pass(&model, u, &cfg, &mut step_rng(cfg.sampler_seed, 3, 1)).unwrap();
        let pass = student_pass(&model, &groups, Some(&frozen), &cfg, lambda_at(&cfg, 3), &mut step_rng(cfg.sampler_seed, 3, 0)).unwrap();
        let grads = pass.graph.backward(pass.total).unwrap().into_params();
        assert_eq!(grads.len(), step.grads.len());
        for (k, g) in &grads {
            assert_eq!(g.data(), step.grads[k].data());
        }
    }
}
