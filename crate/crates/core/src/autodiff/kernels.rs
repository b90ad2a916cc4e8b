//! Forward and backward kernels for the differentiable primitives.
//!
//! All kernels work on `N×C×H×W` tensors and are deterministic: every output
//! element is produced by a fixed sequence of floating point operations.

use crate::error::{Error, Result};
use crate::tensor::{gemm, LabelMap, Scalar, Tensor, IGNORE_LABEL};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

pub(crate) fn conv_output_extent(input: usize, kernel: usize, geom: ConvGeometry) -> Option<usize> {
    let padded = input + 2 * geom.padding;
    if padded < kernel || geom.stride == 0 {
        return None;
    }
    Some((padded - kernel) / geom.stride + 1)
}

fn is_pointwise(k: usize, geom: ConvGeometry) -> bool {
    k == 1 && geom.stride == 1 && geom.padding == 0
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    geom: ConvGeometry,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let hw = ho * wo;
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ky) as isize - geom.padding as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * geom.stride + kx) as isize - geom.padding as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    geom: ConvGeometry,
    ho: usize,
    wo: usize,
    dx: &mut [T],
) {
    let hw = ho * wo;
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ky) as isize - geom.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (c * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * geom.stride + kx) as isize - geom.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            let d = &mut dx[base + ix as usize];
                            *d = *d + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_conv<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize)> {
    let (n, cin, h, w) = x.dims4()?;
    let (cout, wcin, k, k2) = weight.dims4()?;
    if wcin != cin || k != k2 {
        return Err(Error::shape("conv2d", x.shape(), weight.shape()));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape("conv2d bias", weight.shape(), b.shape()));
        }
    }
    let ho = conv_output_extent(h, k, geom).ok_or_else(|| Error::shape("conv2d", x.shape(), weight.shape()))?;
    let wo = conv_output_extent(w, k, geom).ok_or_else(|| Error::shape("conv2d", x.shape(), weight.shape()))?;
    Ok((n, cin, h, w, cout, k, ho, wo))
}

pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let (n, cin, h, w, cout, k, ho, wo) = check_conv(x, weight, bias, geom)?;
    let ckk = cin * k * k;
    let hw = ho * wo;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let mut cols = if is_pointwise(k, geom) { Vec::new() } else { vec![T::zero(); ckk * hw] };
    let xin = x.data();
    let plane_in = cin * h * w;
    let od = out.data_mut();
    for b in 0..n {
        let xb = &xin[b * plane_in..(b + 1) * plane_in];
        let ob = &mut od[b * cout * hw..(b + 1) * cout * hw];
        if let Some(bias) = bias {
            for (co, &bv) in bias.data().iter().enumerate() {
                ob[co * hw..(co + 1) * hw].fill(bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        if is_pointwise(k, geom) {
            gemm(cout, ckk, hw, T::one(), weight.data(), false, xb, false, beta, ob);
        } else {
            im2col(xb, cin, h, w, k, geom, ho, wo, &mut cols);
            gemm(cout, ckk, hw, T::one(), weight.data(), false, &cols, false, beta, ob);
        }
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: ConvGeometry,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (n, cin, h, w, cout, k, ho, wo) = check_conv(x, weight, None, geom)?;
    if grad_out.shape() != [n, cout, ho, wo] {
        return Err(Error::shape("conv2d backward", &[n, cout, ho, wo], grad_out.shape()));
    }
    let ckk = cin * k * k;
    let hw = ho * wo;
    let pointwise = is_pointwise(k, geom);
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[cout]);
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); ckk * hw] };
    let mut dcols = if pointwise || !need_input { Vec::new() } else { vec![T::zero(); ckk * hw] };
    let plane_in = cin * h * w;
    for b in 0..n {
        let xb = &x.data()[b * plane_in..(b + 1) * plane_in];
        let gy = &grad_out.data()[b * cout * hw..(b + 1) * cout * hw];
        for (co, g) in gb.data_mut().iter_mut().enumerate() {
            let s: T = gy[co * hw..(co + 1) * hw].iter().copied().sum();
            *g = *g + s;
        }
        let cols_ref: &[T] = if pointwise {
            xb
        } else {
            im2col(xb, cin, h, w, k, geom, ho, wo, &mut cols);
            &cols
        };
        gemm(cout, hw, ckk, T::one(), gy, false, cols_ref, true, T::one(), gw.data_mut());
        if need_input {
            let gxb = &mut gx.data_mut()[b * plane_in..(b + 1) * plane_in];
            if pointwise {
                gemm(ckk, cout, hw, T::one(), weight.data(), true, gy, false, T::zero(), gxb);
            } else {
                gemm(ckk, cout, hw, T::one(), weight.data(), true, gy, false, T::zero(), &mut dcols);
                col2im(&dcols, cin, h, w, k, geom, ho, wo, gxb);
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    x.zip_map(gy, "relu", |v, g| if v > T::zero() { g } else { T::zero() })
        .expect("relu shapes")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum UpsampleMode {
    #[default]
    Nearest,
    Bilinear,
}

impl std::fmt::Display for UpsampleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UpsampleMode::Nearest => "nearest",
            UpsampleMode::Bilinear => "bilinear",
        })
    }
}

impl std::str::FromStr for UpsampleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nearest" => Ok(UpsampleMode::Nearest),
            "bilinear" => Ok(UpsampleMode::Bilinear),
            other => Err(format!("unknown upsampling {other:?}")),
        }
    }
}

/// Source taps for one output coordinate of 2× bilinear upsampling
/// (half-pixel centers, edge-clamped).
fn bilinear_taps(out: usize, extent: usize) -> (usize, usize, f64) {
    let src = ((out as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(extent - 1);
    let i1 = (i0 + 1).min(extent - 1);
    (i0, i1, src - i0 as f64)
}

pub fn upsample2x<T: Scalar>(x: &Tensor<T>, mode: UpsampleMode) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(&[n, c, h2, w2]);
    let xd = x.data();
    let od = out.data_mut();
    match mode {
        UpsampleMode::Nearest => {
            for p in 0..n * c {
                let src = &xd[p * h * w..(p + 1) * h * w];
                let dst = &mut od[p * h2 * w2..(p + 1) * h2 * w2];
                for oy in 0..h2 {
                    let srow = &src[(oy / 2) * w..(oy / 2 + 1) * w];
                    for (ox, d) in dst[oy * w2..(oy + 1) * w2].iter_mut().enumerate() {
                        *d = srow[ox / 2];
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let ty: Vec<_> = (0..h2).map(|o| bilinear_taps(o, h)).collect();
            let tx: Vec<_> = (0..w2).map(|o| bilinear_taps(o, w)).collect();
            for p in 0..n * c {
                let src = &xd[p * h * w..(p + 1) * h * w];
                let dst = &mut od[p * h2 * w2..(p + 1) * h2 * w2];
                for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                    let ly = T::from_f64(ly);
                    for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                        let lx = T::from_f64(lx);
                        let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                        let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                        dst[oy * w2 + ox] = top * (T::one() - ly) + bot * ly;
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn upsample2x_backward<T: Scalar>(x_shape: &[usize], gy: &Tensor<T>, mode: UpsampleMode) -> Tensor<T> {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (h2, w2) = (2 * h, 2 * w);
    let mut gx = Tensor::zeros(x_shape);
    let gd = gy.data();
    let xd = gx.data_mut();
    match mode {
        UpsampleMode::Nearest => {
            for p in 0..n * c {
                let src = &gd[p * h2 * w2..(p + 1) * h2 * w2];
                let dst = &mut xd[p * h * w..(p + 1) * h * w];
                for y in 0..h {
                    for x in 0..w {
                        let a = src[(2 * y) * w2 + 2 * x];
                        let b = src[(2 * y) * w2 + 2 * x + 1];
                        let cc = src[(2 * y + 1) * w2 + 2 * x];
                        let d = src[(2 * y + 1) * w2 + 2 * x + 1];
                        dst[y * w + x] = (a + b) + (cc + d);
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let ty: Vec<_> = (0..h2).map(|o| bilinear_taps(o, h)).collect();
            let tx: Vec<_> = (0..w2).map(|o| bilinear_taps(o, w)).collect();
            for p in 0..n * c {
                let src = &gd[p * h2 * w2..(p + 1) * h2 * w2];
                let dst = &mut xd[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                    let ly = T::from_f64(ly);
                    for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                        let lx = T::from_f64(lx);
                        let g = src[oy * w2 + ox];
                        let gt = g * (T::one() - ly);
                        let gb = g * ly;
                        dst[y0 * w + x0] = dst[y0 * w + x0] + gt * (T::one() - lx);
                        dst[y0 * w + x1] = dst[y0 * w + x1] + gt * lx;
                        dst[y1 * w + x0] = dst[y1 * w + x0] + gb * (T::one() - lx);
                        dst[y1 * w + x1] = dst[y1 * w + x1] + gb * lx;
                    }
                }
            }
        }
    }
    gx
}

/// Softmax (or log-softmax) over the channel axis.
pub fn softmax_channels<T: Scalar>(x: &Tensor<T>, log: bool) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let mut out = Tensor::zeros(x.shape());
    let xd = x.data();
    let od = out.data_mut();
    for b in 0..n {
        let base = b * c * plane;
        for i in 0..plane {
            let mut m = xd[base + i];
            for ch in 1..c {
                m = m.max(xd[base + ch * plane + i]);
            }
            let mut z = T::zero();
            for ch in 0..c {
                z = z + (xd[base + ch * plane + i] - m).exp();
            }
            if log {
                let lz = m + z.ln();
                for ch in 0..c {
                    od[base + ch * plane + i] = xd[base + ch * plane + i] - lz;
                }
            } else {
                for ch in 0..c {
                    od[base + ch * plane + i] = (xd[base + ch * plane + i] - m).exp() / z;
                }
            }
        }
    }
    Ok(out)
}

/// Backward of softmax given its output `s`.
pub fn softmax_backward<T: Scalar>(s: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    channel_reduce_backward(s, gy, |s, g, dot| s * (g - dot), |s, g| s * g)
}

/// Backward of log-softmax given its output `ls`.
pub fn log_softmax_backward<T: Scalar>(ls: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    channel_reduce_backward(ls, gy, |ls, g, total| g - ls.exp() * total, |_, g| g)
}

fn channel_reduce_backward<T: Scalar>(
    y: &Tensor<T>,
    gy: &Tensor<T>,
    combine: impl Fn(T, T, T) -> T,
    reduce_term: impl Fn(T, T) -> T,
) -> Tensor<T> {
    let (n, c, h, w) = y.dims4().expect("rank 4");
    let plane = h * w;
    let mut gx = Tensor::zeros(y.shape());
    let yd = y.data();
    let gd = gy.data();
    let xd = gx.data_mut();
    for b in 0..n {
        let base = b * c * plane;
        for i in 0..plane {
            let mut acc = T::zero();
            for ch in 0..c {
                let k = base + ch * plane + i;
                acc = acc + reduce_term(yd[k], gd[k]);
            }
            for ch in 0..c {
                let k = base + ch * plane + i;
                xd[k] = combine(yd[k], gd[k], acc);
            }
        }
    }
    gx
}

/// `out[n, 0, y, x] = x[n, label, y, x]`; ignored pixels yield zero.
pub fn pick_class<T: Scalar>(x: &Tensor<T>, labels: &LabelMap) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if labels.dims() != (n, h, w) {
        return Err(Error::shape("pick_class", x.shape(), &[labels.n, labels.h, labels.w]));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, 1, h, w]);
    for b in 0..n {
        for i in 0..plane {
            let l = labels.data[b * plane + i];
            if l == IGNORE_LABEL {
                continue;
            }
            if l as usize >= c {
                return Err(Error::InvalidArgument(format!("label {l} outside {c} classes")));
            }
            out.data_mut()[b * plane + i] = x.data()[(b * c + l as usize) * plane + i];
        }
    }
    Ok(out)
}

pub fn pick_class_backward<T: Scalar>(x_shape: &[usize], labels: &LabelMap, gy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let plane = h * w;
    let mut gx = Tensor::zeros(x_shape);
    for b in 0..n {
        for i in 0..plane {
            let l = labels.data[b * plane + i];
            if l != IGNORE_LABEL {
                gx.data_mut()[(b * c + l as usize) * plane + i] = gy.data()[b * plane + i];
            }
        }
    }
    gx
}

/// Selects `a` where the `N×1×h×w` binary mask is one and `b` elsewhere.
pub fn grid_select<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = a.dims4()?;
    if a.shape() != b.shape() {
        return Err(Error::shape("gridmix", a.shape(), b.shape()));
    }
    if mask.shape() != [n, 1, h, w] {
        return Err(Error::shape("gridmix mask", a.shape(), mask.shape()));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(a.shape());
    let (ad, bd, md) = (a.data(), b.data(), mask.data());
    let od = out.data_mut();
    for bi in 0..n {
        let m = &md[bi * plane..(bi + 1) * plane];
        for ch in 0..c {
            let off = (bi * c + ch) * plane;
            for i in 0..plane {
                od[off + i] = if m[i] == T::one() { ad[off + i] } else { bd[off + i] };
            }
        }
    }
    Ok(out)
}

/// Splits an upstream gradient into the two gridmix branches.
pub fn grid_select_backward<T: Scalar>(gy: &Tensor<T>, mask: &Tensor<T>, take_one: bool) -> Tensor<T> {
    let (n, c, h, w) = gy.dims4().expect("rank 4");
    let plane = h * w;
    let mut g = Tensor::zeros(gy.shape());
    let (gd, md) = (gy.data(), mask.data());
    let od = g.data_mut();
    for bi in 0..n {
        for ch in 0..c {
            let off = (bi * c + ch) * plane;
            for i in 0..plane {
                if (md[bi * plane + i] == T::one()) == take_one {
                    od[off + i] = gd[off + i];
                }
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_conv_center_is_nine() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let k = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, None, ConvGeometry { stride: 1, padding: 1 }).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn strided_conv_matches_direct_loop() {
        let (n, cin, h, w, cout, k) = (2, 3, 7, 6, 4, 3);
        let geom = ConvGeometry { stride: 2, padding: 1 };
        let x = Tensor::<f64>::new(
            vec![n, cin, h, w],
            (0..n * cin * h * w).map(|i| ((i * 37 % 17) as f64) / 7.0 - 1.0).collect(),
        )
        .unwrap();
        let wt = Tensor::<f64>::new(
            vec![cout, cin, k, k],
            (0..cout * cin * k * k).map(|i| ((i * 13 % 11) as f64) / 5.0 - 1.0).collect(),
        )
        .unwrap();
        let bias = Tensor::<f64>::from_f64(&[cout], &[0.1, -0.2, 0.3, 0.0]).unwrap();
        let y = conv2d(&x, &wt, Some(&bias), geom).unwrap();
        let (ho, wo) = (4, 3);
        assert_eq!(y.shape(), &[n, cout, ho, wo]);
        for b in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias.data()[co];
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * 2 + ky) as isize - 1;
                                    let ix = (ox * 2 + kx) as isize - 1;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                        acc += x.data()[((b * cin + ci) * h + iy as usize) * w + ix as usize]
                                            * wt.data()[((co * cin + ci) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        let got = y.data()[((b * cout + co) * ho + oy) * wo + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn relu_and_softmax_basics() {
        let x = Tensor::<f64>::from_f64(&[3], &[-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let l = Tensor::<f64>::zeros(&[1, 2, 1, 1]);
        assert_eq!(softmax_channels(&l, false).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn nearest_upsample_replicates() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 1, 2], &[1.0, 2.0]).unwrap();
        let y = upsample2x(&x, UpsampleMode::Nearest).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn bilinear_upsample_preserves_constants() {
        let x = Tensor::<f64>::full(&[1, 2, 3, 3], 0.7);
        let y = upsample2x(&x, UpsampleMode::Bilinear).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }
}
