//! CutMix pixel-selection transforms and labeled-data augmentation.
//!
//! A [`CutMixSpec`] is pure pixel selection, so the same spec applied to an
//! image batch, a probability map or a hard label map moves the same pixels.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Scalar, Tensor};

/// Rectangle in pixels. A zero-height or zero-width box selects nothing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CutBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CutBox {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CutMixSpec {
    pub height: usize,
    pub width: usize,
    pub partners: Vec<usize>,
    pub boxes: Vec<CutBox>,
}

impl CutMixSpec {
    /// A spec that leaves every element unchanged.
    pub fn identity(n: usize, height: usize, width: usize) -> Self {
        CutMixSpec {
            height,
            width,
            partners: (0..n).collect(),
            boxes: vec![
                CutBox {
                    top: 0,
                    left: 0,
                    height: 0,
                    width: 0
                };
                n
            ],
        }
    }

    pub fn batch_size(&self) -> usize {
        self.partners.len()
    }

    /// Source `(element, y, x)` of output pixel `(b, y, x)`.
    pub fn source(&self, b: usize, y: usize, x: usize) -> usize {
        if self.boxes[b].contains(y, x) {
            self.partners[b]
        } else {
            b
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutMixConfig {
    pub min_area: f64,
    pub max_area: f64,
    pub min_aspect: f64,
    pub max_aspect: f64,
}

impl Default for CutMixConfig {
    fn default() -> Self {
        CutMixConfig {
            min_area: 0.25,
            max_area: 0.5,
            min_aspect: 0.5,
            max_aspect: 2.0,
        }
    }
}

/// Box area ratio uniform in `[min_area, max_area]`, aspect log-uniform in
/// `[min_aspect, max_aspect]`, position uniform; partners are the batch
/// rotated by one.
pub fn sample_cutmix(n: usize, height: usize, width: usize, cfg: &CutMixConfig, rng: &mut impl Rng) -> Result<CutMixSpec> {
    if n == 0 {
        return Err(Error::InvalidArgument("cutmix needs a non-empty batch".into()));
    }
    let area = (height * width) as f64;
    let boxes = (0..n)
        .map(|_| {
            let ratio = rng.random_range(cfg.min_area..=cfg.max_area);
            let aspect = rng
                .random_range(cfg.min_aspect.ln()..=cfg.max_aspect.ln())
                .exp();
            let bh = ((ratio * area * aspect).sqrt().round() as usize).clamp(1, height);
            let bw = ((ratio * area / aspect).sqrt().round() as usize).clamp(1, width);
            CutBox {
                top: rng.random_range(0..=height - bh),
                left: rng.random_range(0..=width - bw),
                height: bh,
                width: bw,
            }
        })
        .collect();
    Ok(CutMixSpec {
        height,
        width,
        partners: (0..n).map(|i| (i + 1) % n).collect(),
        boxes,
    })
}

/// CutMix on raw `N×C×H×W` storage of any element type.
pub fn cutmix_slice<V: Copy>(data: &[V], n: usize, c: usize, h: usize, w: usize, spec: &CutMixSpec) -> Result<Vec<V>> {
    if spec.batch_size() != n || spec.height != h || spec.width != w || data.len() != n * c * h * w {
        return Err(Error::shape("apply_cutmix", &[n, c, h, w], &[spec.batch_size(), c, spec.height, spec.width]));
    }
    let mut out = data.to_vec();
    let plane = h * w;
    for (b, (bx, &partner)) in spec.boxes.iter().zip(&spec.partners).enumerate() {
        if bx.area() == 0 {
            continue;
        }
        for ch in 0..c {
            let dst = (b * c + ch) * plane;
            let src = (partner * c + ch) * plane;
            for y in bx.top..bx.top + bx.height {
                let row = y * w;
                out[dst + row + bx.left..dst + row + bx.left + bx.width]
                    .copy_from_slice(&data[src + row + bx.left..src + row + bx.left + bx.width]);
            }
        }
    }
    Ok(out)
}

/// Applies a spec to an image batch or a probability map.
pub fn apply_cutmix<T: Scalar>(field: &Tensor<T>, spec: &CutMixSpec) -> Result<Tensor<T>> {
    let (n, c, h, w) = field.dims4()?;
    Tensor::new(field.shape().to_vec(), cutmix_slice(field.data(), n, c, h, w, spec)?)
}

/// Applies a spec to a hard label map.
pub fn apply_cutmix_labels(labels: &LabelMap, spec: &CutMixSpec) -> Result<LabelMap> {
    let (n, h, w) = labels.dims();
    LabelMap::new(n, h, w, cutmix_slice(&labels.data, n, 1, h, w, spec)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub crop: usize,
    pub flip_prob: f64,
    pub scale_range: (f64, f64),
}

impl AugmentConfig {
    pub fn for_size(crop: usize) -> Self {
        AugmentConfig {
            crop,
            flip_prob: 0.5,
            scale_range: (0.5, 2.0),
        }
    }
}

fn resize_bilinear<T: Scalar>(img: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let (n, c, h, w) = img.dims4().expect("rank 4");
    let taps = |o: usize, out: usize, inp: usize| {
        let src = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(inp - 1);
        (i0, i1, T::from_f64(src - i0 as f64))
    };
    let ty: Vec<_> = (0..oh).map(|o| taps(o, oh, h)).collect();
    let tx: Vec<_> = (0..ow).map(|o| taps(o, ow, w)).collect();
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for p in 0..n * c {
        let src = &img.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                dst[oy * ow + ox] = top * (T::one() - ly) + bot * ly;
            }
        }
    }
    out
}

fn nearest_index(o: usize, out: usize, inp: usize) -> usize {
    (((o as f64 + 0.5) * inp as f64 / out as f64).floor() as usize).min(inp - 1)
}

fn resize_nearest(labels: &LabelMap, oh: usize, ow: usize) -> LabelMap {
    let mut out = LabelMap::filled(labels.n, oh, ow, 0);
    for b in 0..labels.n {
        for y in 0..oh {
            let sy = nearest_index(y, oh, labels.h);
            for x in 0..ow {
                out.data[(b * oh + y) * ow + x] = labels.get(b, sy, nearest_index(x, ow, labels.w));
            }
        }
    }
    out
}

fn crop_tensor<T: Scalar>(img: &Tensor<T>, top: usize, left: usize, size: usize) -> Tensor<T> {
    let (n, c, h, w) = img.dims4().expect("rank 4");
    let mut out = Tensor::zeros(&[n, c, size, size]);
    for p in 0..n * c {
        for y in 0..size {
            let src = &img.data()[p * h * w + (top + y) * w + left..][..size];
            out.data_mut()[(p * size + y) * size..][..size].copy_from_slice(src);
        }
    }
    out
}

fn crop_labels(labels: &LabelMap, top: usize, left: usize, size: usize) -> LabelMap {
    let mut out = LabelMap::filled(labels.n, size, size, 0);
    for b in 0..labels.n {
        for y in 0..size {
            for x in 0..size {
                out.data[(b * size + y) * size + x] = labels.get(b, top + y, left + x);
            }
        }
    }
    out
}

/// Mirrors every plane left to right.
pub fn hflip<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = img.dims4().expect("rank 4");
    let mut out = img.clone();
    for p in 0..n * c * h {
        out.data_mut()[p * w..(p + 1) * w].reverse();
    }
    out
}

pub fn hflip_labels(labels: &LabelMap) -> LabelMap {
    let mut out = labels.clone();
    for row in out.data.chunks_mut(labels.w) {
        row.reverse();
    }
    out
}

/// Random scale, crop and horizontal flip applied identically to an image
/// batch and its labels. Labels are resampled by nearest neighbour only.
pub fn augment_labeled<T: Scalar>(
    image: &Tensor<T>,
    labels: &LabelMap,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(Tensor<T>, LabelMap)> {
    let (n, _, h, w) = image.dims4()?;
    if labels.dims() != (n, h, w) {
        return Err(Error::shape("augment_labeled", image.shape(), &[labels.n, labels.h, labels.w]));
    }
    let (lo, hi) = cfg.scale_range;
    let mut scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    // rescale up to fit the crop
    scale = scale.max(cfg.crop as f64 / h as f64).max(cfg.crop as f64 / w as f64);
    let oh = ((h as f64 * scale).round() as usize).max(cfg.crop);
    let ow = ((w as f64 * scale).round() as usize).max(cfg.crop);
    let (img, lab) = if (oh, ow) == (h, w) {
        (image.clone(), labels.clone())
    } else {
        (resize_bilinear(image, oh, ow), resize_nearest(labels, oh, ow))
    };
    let top = rng.random_range(0..=oh - cfg.crop);
    let left = rng.random_range(0..=ow - cfg.crop);
    let mut img = crop_tensor(&img, top, left, cfg.crop);
    let mut lab = crop_labels(&lab, top, left, cfg.crop);
    if rng.random_bool(cfg.flip_prob.clamp(0.0, 1.0)) {
        img = hflip(&img);
        lab = hflip_labels(&lab);
    }
    Ok((img, lab))
}
