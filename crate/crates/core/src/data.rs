//! Procedural segmentation scenes, labeled/unlabeled partitions and the
//! two-group batch sampler.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::tensor::{LabelMap, Scalar, Tensor};
use crate::transforms::{apply_cutmix, augment_labeled, sample_cutmix, AugmentConfig, CutMixConfig, CutMixSpec};

pub const CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Rectangle,
    Triangle,
    Ring,
}

impl ShapeKind {
    /// Shape drawn for foreground class `class` (≥ 1).
    pub fn for_class(class: u8) -> Self {
        match (class - 1) % 4 {
            0 => ShapeKind::Disk,
            1 => ShapeKind::Rectangle,
            2 => ShapeKind::Triangle,
            _ => ShapeKind::Ring,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub size: usize,
    pub num_classes: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Standard deviation of per-pixel texture noise.
    pub noise: f64,
    /// Standard deviation of the per-shape colour offset from its class colour.
    pub color_jitter: f64,
    /// Distance between the background colour and the centre of the
    /// foreground colours.
    pub foreground_contrast: f64,
    /// Distance of each foreground class colour from the foreground centre.
    pub color_separation: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            size: 64,
            num_classes: 4,
            min_shapes: 1,
            max_shapes: 4,
            min_radius: 6.0,
            max_radius: 14.0,
            noise: 0.08,
            color_jitter: 0.1,
            foreground_contrast: 0.25,
            color_separation: 0.12,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.size < 4 {
            bad.push("image_size".to_string());
        }
        if !(2..=255).contains(&self.num_classes) {
            bad.push("num_classes".to_string());
        }
        if self.min_shapes > self.max_shapes {
            bad.push("min_shapes".to_string());
        }
        if !(self.min_radius > 0.0 && self.min_radius <= self.max_radius) {
            bad.push("min_radius".to_string());
        }
        if !(self.noise >= 0.0) {
            bad.push("scene_noise".to_string());
        }
        if !(self.color_jitter >= 0.0) {
            bad.push("color_jitter".to_string());
        }
        if !(self.foreground_contrast >= 0.0) {
            bad.push("foreground_contrast".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad))
        }
    }

    /// Mean colour of a class. Foreground colours sit on a small circle around
    /// a centre offset from the background grey, so colour separates
    /// foreground from background but is ambiguous between shape classes.
    pub fn class_color(&self, class: u8) -> [f64; 3] {
        if class == 0 {
            return [0.5; 3];
        }
        let k = (class - 1) as f64;
        let fg = (self.num_classes - 1).max(1) as f64;
        let angle = 2.0 * PI * k / fg;
        let (s, c) = angle.sin_cos();
        // orthonormal basis of the plane orthogonal to grey
        let u = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt(), 0.0];
        let v = [1.0 / 6f64.sqrt(), 1.0 / 6f64.sqrt(), -2.0 / 6f64.sqrt()];
        let d = self.color_separation;
        let centre = 0.5 + self.foreground_contrast / 3f64.sqrt();
        [
            centre + d * (c * u[0] + s * v[0]),
            centre + d * (c * u[1] + s * v[1]),
            centre + d * (c * u[2] + s * v[2]),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeInstance {
    pub class: u8,
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub angle: f64,
    pub aspect: f64,
    pub color: [f64; 3],
}

impl ShapeInstance {
    /// Whether the pixel centre `(px, py)` is covered.
    pub fn covers(&self, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - self.cx, py - self.cy);
        match self.kind {
            ShapeKind::Disk => dx * dx + dy * dy <= self.radius * self.radius,
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= self.radius * self.radius && d2 >= 0.25 * self.radius * self.radius
            }
            ShapeKind::Rectangle => {
                let (s, c) = self.angle.sin_cos();
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                u.abs() <= self.radius * self.aspect.sqrt() * 0.8 && v.abs() <= self.radius / self.aspect.sqrt() * 0.8
            }
            ShapeKind::Triangle => {
                let verts: Vec<(f64, f64)> = (0..3)
                    .map(|i| {
                        let a = self.angle + 2.0 * PI * i as f64 / 3.0;
                        (self.radius * a.cos(), self.radius * a.sin())
                    })
                    .collect();
                let sign = |(x1, y1): (f64, f64), (x2, y2): (f64, f64)| (x2 - x1) * (dy - y1) - (y2 - y1) * (dx - x1);
                let d0 = sign(verts[0], verts[1]);
                let d1 = sign(verts[1], verts[2]);
                let d2 = sign(verts[2], verts[0]);
                !((d0 < 0.0 || d1 < 0.0 || d2 < 0.0) && (d0 > 0.0 || d1 > 0.0 || d2 > 0.0))
            }
        }
    }
}

/// One rendered scene: `3×H×W` image in `[0, 1]` and `H×W` labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Vec<f32>,
    pub label: Vec<u8>,
}

/// Rasterises shapes in order (later shapes occlude earlier ones) over a
/// background, then adds texture noise.
pub fn render_scene(spec: &SceneSpec, shapes: &[ShapeInstance], background: [f64; 3], rng: &mut impl Rng) -> Scene {
    let s = spec.size;
    let plane = s * s;
    let mut label = vec![0u8; plane];
    let mut color = vec![background; plane];
    for shape in shapes {
        for y in 0..s {
            for x in 0..s {
                if shape.covers(x as f64 + 0.5, y as f64 + 0.5) {
                    label[y * s + x] = shape.class;
                    color[y * s + x] = shape.color;
                }
            }
        }
    }
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise");
    let mut image = vec![0f32; CHANNELS * plane];
    for ch in 0..CHANNELS {
        for i in 0..plane {
            let v = color[i][ch] + if spec.noise > 0.0 { noise.sample(rng) } else { 0.0 };
            image[ch * plane + i] = v.clamp(0.0, 1.0) as f32;
        }
    }
    Scene { image, label }
}

pub fn generate_scene(rng: &mut impl Rng, spec: &SceneSpec) -> Scene {
    let jitter = Normal::new(0.0, spec.color_jitter.max(0.0)).expect("finite jitter");
    let jittered = |base: [f64; 3], rng: &mut dyn rand::RngCore| {
        let mut c = base;
        if spec.color_jitter > 0.0 {
            for v in &mut c {
                *v += jitter.sample(rng);
            }
        }
        c
    };
    let count = rng.random_range(spec.min_shapes..=spec.max_shapes);
    let size = spec.size as f64;
    let shapes: Vec<ShapeInstance> = (0..count)
        .map(|_| {
            let class = rng.random_range(1..spec.num_classes) as u8;
            let radius = rng.random_range(spec.min_radius..=spec.max_radius);
            ShapeInstance {
                class,
                kind: ShapeKind::for_class(class),
                cx: rng.random_range(0.0..size),
                cy: rng.random_range(0.0..size),
                radius,
                angle: rng.random_range(0.0..2.0 * PI),
                aspect: rng.random_range(0.5..2.0),
                color: jittered(spec.class_color(class), rng),
            }
        })
        .collect();
    let background = jittered(spec.class_color(0), rng);
    render_scene(spec, &shapes, background, rng)
}

fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// A block of scenes, regenerable from `(spec, seed, first index)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub spec: SceneSpec,
    pub len: usize,
    images: Vec<f32>,
    labels: Vec<u8>,
}

impl SynthDataset {
    /// Scenes `start..start + len` of the stream identified by `seed`.
    pub fn generate(spec: &SceneSpec, seed: u64, start: usize, len: usize) -> Result<Self> {
        spec.validate()?;
        let plane = spec.size * spec.size;
        let mut images = Vec::with_capacity(len * CHANNELS * plane);
        let mut labels = Vec::with_capacity(len * plane);
        for i in start..start + len {
            let scene = generate_scene(&mut scene_rng(seed, i), spec);
            images.extend_from_slice(&scene.image);
            labels.extend_from_slice(&scene.label);
        }
        Ok(SynthDataset {
            spec: spec.clone(),
            len,
            images,
            labels,
        })
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = CHANNELS * self.spec.size * self.spec.size;
        &self.images[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> &[u8] {
        let n = self.spec.size * self.spec.size;
        &self.labels[i * n..(i + 1) * n]
    }

    pub fn images_batch<T: Scalar>(&self, ids: &[usize]) -> Tensor<T> {
        gather_images(ids.iter().map(|&i| self.image(i)), self.spec.size)
    }

    pub fn labels_batch(&self, ids: &[usize]) -> LabelMap {
        let s = self.spec.size;
        let data = ids.iter().flat_map(|&i| self.label(i).iter().copied()).collect();
        LabelMap::new(ids.len(), s, s, data).expect("label batch")
    }

    /// Writes scene `i` as a binary pixmap (`.ppm`) plus a graymap of its
    /// labels spread over `[0, 255]`.
    pub fn export(&self, i: usize, image_path: &Path, label_path: &Path) -> Result<()> {
        let s = self.spec.size;
        let plane = s * s;
        let img = self.image(i);
        let mut ppm = format!("P6\n{s} {s}\n255\n").into_bytes();
        for p in 0..plane {
            ppm.extend((0..CHANNELS).map(|c| (img[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        fs::write(image_path, ppm).map_err(|e| Error::io(image_path, e))?;
        let step = 255 / (self.spec.num_classes - 1).max(1);
        let mut pgm = format!("P5\n{s} {s}\n255\n").into_bytes();
        pgm.extend(self.label(i).iter().map(|&l| (l as usize * step) as u8));
        fs::write(label_path, pgm).map_err(|e| Error::io(label_path, e))
    }

    /// Best per-pixel colour-only classifier, estimated in-sample: colours
    /// are binned (`bins` per channel) and each bin predicts its majority
    /// class. Scores well below one mean shape context is required.
    pub fn color_only_probe(&self, bins: usize) -> ColorProbe {
        let c = self.spec.num_classes;
        let plane = self.spec.size * self.spec.size;
        let bins = bins.max(1);
        let bin_of = |img: &[f32], p: usize| {
            (0..CHANNELS).fold(0, |acc, ch| {
                let v = (img[ch * plane + p] as f64 * bins as f64) as usize;
                acc * bins + v.min(bins - 1)
            })
        };
        let mut hist = vec![0u64; bins.pow(CHANNELS as u32) * c];
        for i in 0..self.len {
            let (img, lab) = (self.image(i), self.label(i));
            for p in 0..plane {
                hist[bin_of(img, p) * c + lab[p] as usize] += 1;
            }
        }
        let majority: Vec<u8> = hist
            .chunks(c)
            .map(|h| (0..c).max_by_key(|&k| (h[k], std::cmp::Reverse(k))).unwrap_or(0) as u8)
            .collect();
        let mut cm = ConfusionMatrix::new(c);
        for i in 0..self.len {
            let (img, lab) = (self.image(i), self.label(i));
            let pred: Vec<u8> = (0..plane).map(|p| majority[bin_of(img, p)]).collect();
            let truth = LabelMap::new(1, self.spec.size, self.spec.size, lab.to_vec()).expect("label");
            let pred = LabelMap::new(1, self.spec.size, self.spec.size, pred).expect("label");
            cm.add(&truth, &pred).expect("matching geometry");
        }
        ColorProbe {
            accuracy: cm.pixel_accuracy(),
            miou: cm.miou(),
        }
    }
}

/// Scores of the colour-only classifier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorProbe {
    pub accuracy: f64,
    pub miou: f64,
}

/// Network input value of a stored pixel: centred on mid-grey, unit scale
/// roughly matching the colour spread.
pub fn normalize_pixel(v: f32) -> f64 {
    (v as f64 - 0.5) / 0.25
}

fn gather_images<'a, T: Scalar>(images: impl Iterator<Item = &'a [f32]>, size: usize) -> Tensor<T> {
    let data: Vec<T> = images.flat_map(|im| im.iter().map(|&v| T::from_f64(normalize_pixel(v)))).collect();
    let n = data.len() / (CHANNELS * size * size);
    Tensor::new(vec![n, CHANNELS, size, size], data).expect("image batch")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Seeded random partition with `round(ratio·n)` labeled indices.
pub fn make_splits(n: usize, ratio: f64, seed: u64) -> Result<Splits> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("labeled ratio must lie in (0, 1), got {ratio}")));
    }
    let count = (ratio * n as f64).round() as usize;
    if count == 0 || count >= n {
        return Err(Error::InvalidArgument(format!(
            "ratio {ratio} of {n} scenes leaves an empty partition"
        )));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labeled = ids[..count].to_vec();
    let mut unlabeled = ids[count..].to_vec();
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    Ok(Splits { labeled, unlabeled })
}

#[derive(Debug)]
pub struct LabeledSet {
    pub size: usize,
    pub ids: Vec<usize>,
    images: Vec<f32>,
    labels: Vec<u8>,
}

/// Unlabeled scenes: images only. Reads are counted for data-access audits.
#[derive(Debug)]
pub struct UnlabeledSet {
    pub size: usize,
    pub ids: Vec<usize>,
    images: Vec<f32>,
    reads: AtomicUsize,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn image(&self, pos: usize) -> &[f32] {
        let n = CHANNELS * self.size * self.size;
        &self.images[pos * n..(pos + 1) * n]
    }

    /// Images and labels at positions (not scene ids) within the set.
    pub fn batch<T: Scalar>(&self, positions: &[usize]) -> (Tensor<T>, LabelMap) {
        let plane = self.size * self.size;
        let labels = positions
            .iter()
            .flat_map(|&p| self.labels[p * plane..(p + 1) * plane].iter().copied())
            .collect();
        (
            gather_images(positions.iter().map(|&p| self.image(p)), self.size),
            LabelMap::new(positions.len(), self.size, self.size, labels).expect("labels"),
        )
    }
}

impl UnlabeledSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn batch<T: Scalar>(&self, positions: &[usize]) -> Tensor<T> {
        self.reads.fetch_add(positions.len(), Ordering::Relaxed);
        let n = CHANNELS * self.size * self.size;
        gather_images(positions.iter().map(|&p| &self.images[p * n..(p + 1) * n]), self.size)
    }
}

#[derive(Debug)]
pub struct TrainData {
    pub labeled: LabeledSet,
    pub unlabeled: UnlabeledSet,
}

impl TrainData {
    pub fn new(dataset: &SynthDataset, splits: &Splits) -> Self {
        let size = dataset.spec.size;
        TrainData {
            labeled: LabeledSet {
                size,
                ids: splits.labeled.clone(),
                images: splits.labeled.iter().flat_map(|&i| dataset.image(i).iter().copied()).collect(),
                labels: splits.labeled.iter().flat_map(|&i| dataset.label(i).iter().copied()).collect(),
            },
            unlabeled: UnlabeledSet {
                size,
                ids: splits.unlabeled.clone(),
                images: splits.unlabeled.iter().flat_map(|&i| dataset.image(i).iter().copied()).collect(),
                reads: AtomicUsize::new(0),
            },
        }
    }
}

/// Endless reshuffled pass over `0..len`.
#[derive(Clone, Debug)]
struct EpochStream {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochStream {
    fn new(len: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        EpochStream { order, pos: 0, rng }
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        (0..n)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct LabeledBatch<T> {
    /// Scene ids.
    pub ids: Vec<usize>,
    pub images: Tensor<T>,
    pub labels: LabelMap,
}

#[derive(Clone, Debug)]
pub struct UnlabeledBatch<T> {
    pub ids: Vec<usize>,
    pub clean: Tensor<T>,
    pub t1: CutMixSpec,
    pub t2: CutMixSpec,
    pub x_t1: Tensor<T>,
    pub x_t2: Tensor<T>,
}

/// The two groups for one iteration.
#[derive(Clone, Debug)]
pub struct Groups<T> {
    pub labeled1: LabeledBatch<T>,
    pub labeled2: LabeledBatch<T>,
    /// Branch 2 received branch 1's labeled batch.
    pub repeated: bool,
    pub unlabeled: Option<UnlabeledBatch<T>>,
}

#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub batch_size: usize,
    pub rho: f64,
    pub cutmix: CutMixConfig,
    pub augment: Option<AugmentConfig>,
}

#[derive(Clone, Debug)]
pub struct GroupSampler {
    cfg: SamplerConfig,
    labeled1: EpochStream,
    labeled2: EpochStream,
    unlabeled: EpochStream,
    rng: ChaCha8Rng,
}

impl GroupSampler {
    pub fn new(cfg: SamplerConfig, data: &TrainData, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.rho) {
            return Err(Error::InvalidArgument(format!("rho must lie in [0, 1], got {}", cfg.rho)));
        }
        if cfg.batch_size == 0 || data.labeled.is_empty() {
            return Err(Error::InvalidArgument("sampler needs a batch size and labeled data".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        Ok(GroupSampler {
            labeled1: EpochStream::new(data.labeled.len(), seed, 0),
            labeled2: EpochStream::new(data.labeled.len(), seed, 1),
            unlabeled: EpochStream::new(data.unlabeled.len().max(1), seed, 2),
            cfg,
            rng,
        })
    }

    fn labeled_batch<T: Scalar>(&mut self, data: &TrainData, positions: Vec<usize>) -> Result<LabeledBatch<T>> {
        let (mut images, mut labels) = data.labeled.batch::<T>(&positions);
        if let Some(aug) = &self.cfg.augment {
            let mut imgs = Vec::with_capacity(positions.len());
            let mut labs = Vec::with_capacity(positions.len());
            for b in 0..positions.len() {
                let (i, l) = augment_labeled(&images.slice_batch(b, 1)?, &labels.slice_batch(b, 1)?, aug, &mut self.rng)?;
                imgs.push(i);
                labs.push(l);
            }
            images = Tensor::concat_batch(&imgs.iter().collect::<Vec<_>>())?;
            labels = LabelMap::concat_batch(&labs.iter().collect::<Vec<_>>())?;
        }
        Ok(LabeledBatch {
            ids: positions.iter().map(|&p| data.labeled.ids[p]).collect(),
            images,
            labels,
        })
    }

    /// Draws both groups. Branch 2's labeled batch repeats branch 1's with
    /// probability `rho`; the unlabeled batch is shared and transformed by two
    /// independent CutMix draws. Unlabeled data is only read when requested.
    pub fn next_groups<T: Scalar>(&mut self, data: &TrainData, with_unlabeled: bool) -> Result<Groups<T>> {
        let b = self.cfg.batch_size;
        let p1 = self.labeled1.next_batch(b);
        let labeled1 = self.labeled_batch(data, p1)?;
        let repeated = self.rng.random_bool(self.cfg.rho);
        let labeled2 = if repeated {
            labeled1.clone()
        } else {
            let p2 = self.labeled2.next_batch(b);
            self.labeled_batch(data, p2)?
        };
        let unlabeled = if with_unlabeled {
            if data.unlabeled.is_empty() {
                return Err(Error::InvalidArgument("no unlabeled data".into()));
            }
            let pos = self.unlabeled.next_batch(b);
            let clean = data.unlabeled.batch::<T>(&pos);
            let (_, _, h, w) = clean.dims4()?;
            let t1 = sample_cutmix(b, h, w, &self.cfg.cutmix, &mut self.rng)?;
            let t2 = sample_cutmix(b, h, w, &self.cfg.cutmix, &mut self.rng)?;
            Some(UnlabeledBatch {
                ids: pos.iter().map(|&p| data.unlabeled.ids[p]).collect(),
                x_t1: apply_cutmix(&clean, &t1)?,
                x_t2: apply_cutmix(&clean, &t2)?,
                clean,
                t1,
                t2,
            })
        } else {
            None
        };
        Ok(Groups {
            labeled1,
            labeled2,
            repeated,
            unlabeled,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shapes_give_background_only() {
        let spec = SceneSpec {
            min_shapes: 0,
            max_shapes: 0,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&mut ChaCha8Rng::seed_from_u64(1), &spec);
        assert!(scene.label.iter().all(|&l| l == 0));
        assert!(scene.image.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn disk_area_matches_analytic() {
        let spec = SceneSpec {
            noise: 0.0,
            ..SceneSpec::default()
        };
        for r in (9..=24).map(f64::from) {
            let disk = ShapeInstance {
                class: 1,
                kind: ShapeKind::Disk,
                cx: 32.0,
                cy: 32.0,
                radius: r,
                angle: 0.0,
                aspect: 1.0,
                color: [1.0, 0.0, 0.0],
            };
            let scene = render_scene(&spec, &[disk], [0.5; 3], &mut ChaCha8Rng::seed_from_u64(0));
            let area = scene.label.iter().filter(|&&l| l == 1).count() as f64;
            let want = PI * r * r;
            assert!((area - want).abs() / want <= 0.02, "r={r}: {area} vs {want}");
        }
    }

    #[test]
    fn later_shapes_occlude() {
        let spec = SceneSpec::default();
        let mk = |class, r| ShapeInstance {
            class,
            kind: ShapeKind::Disk,
            cx: 32.0,
            cy: 32.0,
            radius: r,
            angle: 0.0,
            aspect: 1.0,
            color: [0.2; 3],
        };
        let scene = render_scene(&spec, &[mk(1, 10.0), mk(2, 5.0)], [0.5; 3], &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(scene.label[32 * 64 + 32], 2);
        assert_eq!(scene.label[32 * 64 + 32 + 8], 1);
    }

    #[test]
    fn scenes_are_seed_deterministic() {
        let spec = SceneSpec::default();
        let a = SynthDataset::generate(&spec, 7, 10, 3).unwrap();
        let b = SynthDataset::generate(&spec, 7, 10, 3).unwrap();
        assert_eq!(a, b);
        let c = SynthDataset::generate(&spec, 7, 11, 1).unwrap();
        assert_eq!(c.image(0), a.image(1));
    }

    #[test]
    fn split_arithmetic_and_set_laws() {
        let s = make_splits(1024, 0.125, 3).unwrap();
        assert_eq!((s.labeled.len(), s.unlabeled.len()), (128, 896));
        let mut all: Vec<usize> = s.labeled.iter().chain(&s.unlabeled).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1024).collect::<Vec<_>>());
        let other = make_splits(1024, 0.125, 4).unwrap();
        assert_ne!(s.labeled, other.labeled);
        assert!(make_splits(4, 0.1, 0).is_err());
        assert!(make_splits(10, 1.0, 0).is_err());
    }

    fn small_data() -> TrainData {
        let spec = SceneSpec {
            size: 16,
            min_radius: 3.0,
            max_radius: 5.0,
            ..SceneSpec::default()
        };
        let ds = SynthDataset::generate(&spec, 1, 0, 40).unwrap();
        TrainData::new(&ds, &make_splits(40, 0.25, 0).unwrap())
    }

    fn sampler(rho: f64, data: &TrainData) -> GroupSampler {
        GroupSampler::new(
            SamplerConfig {
                batch_size: 2,
                rho,
                cutmix: CutMixConfig::default(),
                augment: None,
            },
            data,
            5,
        )
        .unwrap()
    }

    #[test]
    fn rho_extremes() {
        let data = small_data();
        let mut always = sampler(1.0, &data);
        let mut never = sampler(0.0, &data);
        for _ in 0..50 {
            let g: Groups<f32> = always.next_groups(&data, false).unwrap();
            assert_eq!(g.labeled1.ids, g.labeled2.ids);
            assert!(g.repeated);
            let g: Groups<f32> = never.next_groups(&data, false).unwrap();
            assert!(!g.repeated);
        }
    }

    #[test]
    fn transformed_copies_match_specs_and_reads_are_counted() {
        let data = small_data();
        let mut s = sampler(0.4, &data);
        let _: Groups<f64> = s.next_groups(&data, false).unwrap();
        assert_eq!(data.unlabeled.reads(), 0);
        let g: Groups<f64> = s.next_groups(&data, true).unwrap();
        let u = g.unlabeled.unwrap();
        assert_eq!(u.x_t1, apply_cutmix(&u.clean, &u.t1).unwrap());
        assert_eq!(u.x_t2, apply_cutmix(&u.clean, &u.t2).unwrap());
        assert_eq!(data.unlabeled.reads(), 2);
        assert!(u.ids.iter().all(|id| !data.labeled.ids.contains(id)));
    }
}
