//! Dense row-major tensors and hard label maps.
//!
//! Activations follow the `N×C×H×W` layout throughout the crate. A [`Tensor`]
//! is generic over [`Scalar`], which is implemented for `f64` (gradient checks)
//! and `f32` (training).

use std::fmt::Debug;
use std::iter::Sum;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, LinalgScalar};
use num_traits::Float;

use crate::error::{Error, Result};

/// Label value excluded from supervised losses and from evaluation.
pub const IGNORE_LABEL: u8 = 255;

/// Floating point element type of tensors.
pub trait Scalar:
    Float + LinalgScalar + Default + Debug + Sum + Send + Sync + std::fmt::Display + 'static
{
    const DTYPE: &'static str;

    fn from_f64(v: f64) -> Self;

    fn to_f64(self) -> f64;

    /// Size in bytes of one little-endian value in a checkpoint blob.
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major slices.
///
/// `a` is `m×k` (or `k×m` when `trans_a`), `b` is `k×n` (or `n×k` when
/// `trans_b`), `c` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    let a = if trans_a {
        ArrayView2::from_shape((k, m), a).expect("gemm a").reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).expect("gemm a")
    };
    let b = if trans_b {
        ArrayView2::from_shape((n, k), b).expect("gemm b").reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).expect("gemm b")
    };
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("gemm c");
    general_mat_mul(alpha, &a, &b, beta, &mut c);
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape("dims4", &self.shape, &[0, 0, 0, 0])),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.data.len() as f64)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Elements `start..start + len` along the batch axis.
    pub fn slice_batch(&self, start: usize, len: usize) -> Result<Self> {
        let n = self.shape[0];
        if len == 0 || start + len > n {
            return Err(Error::InvalidArgument(format!(
                "batch slice {start}..{} out of range for batch {n}",
                start + len
            )));
        }
        let per = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Tensor {
            shape,
            data: self.data[start * per..(start + len) * per].to_vec(),
        })
    }

    pub fn concat_batch(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let mut shape = first.shape.clone();
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.numel()).sum());
        shape[0] = 0;
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(Error::shape("concat_batch", &first.shape, &p.shape));
            }
            shape[0] += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape, data })
    }

    /// Hard argmax over the channel axis. Ties go to the lowest channel index.
    pub fn argmax_channels(&self) -> Result<LabelMap> {
        let (n, c, h, w) = self.dims4()?;
        if c > IGNORE_LABEL as usize {
            return Err(Error::InvalidArgument(format!("{c} channels exceed label range")));
        }
        let plane = h * w;
        let mut out = vec![0u8; n * plane];
        for b in 0..n {
            let base = b * c * plane;
            for i in 0..plane {
                let mut best = 0usize;
                let mut best_v = self.data[base + i];
                for ch in 1..c {
                    let v = self.data[base + ch * plane + i];
                    if v > best_v {
                        best = ch;
                        best_v = v;
                    }
                }
                out[b * plane + i] = best as u8;
            }
        }
        Ok(LabelMap { n, h, w, data: out })
    }
}

/// Batch of hard per-pixel class ids, `N×H×W`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != n * h * w {
            return Err(Error::shape("label map", &[n, h, w], &[data.len()]));
        }
        Ok(LabelMap { n, h, w, data })
    }

    pub fn filled(n: usize, h: usize, w: usize, value: u8) -> Self {
        LabelMap {
            n,
            h,
            w,
            data: vec![value; n * h * w],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.h, self.w)
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> u8 {
        self.data[(b * self.h + y) * self.w + x]
    }

    pub fn slice_batch(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.n {
            return Err(Error::InvalidArgument(format!(
                "label slice {start}..{} out of range for batch {}",
                start + len,
                self.n
            )));
        }
        let plane = self.h * self.w;
        Ok(LabelMap {
            n: len,
            h: self.h,
            w: self.w,
            data: self.data[start * plane..(start + len) * plane].to_vec(),
        })
    }

    pub fn concat_batch(parts: &[&LabelMap]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero label maps".into()))?;
        let mut out = LabelMap {
            n: 0,
            h: first.h,
            w: first.w,
            data: Vec::new(),
        };
        for p in parts {
            if (p.h, p.w) != (first.h, first.w) {
                return Err(Error::shape("label concat", &[first.h, first.w], &[p.h, p.w]));
            }
            out.n += p.n;
            out.data.extend_from_slice(&p.data);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_storage() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let t = Tensor::<f64>::from_f64(&[1, 3, 1, 2], &[0.2, 0.5, 0.5, 0.5, 0.3, 0.0]).unwrap();
        let a = t.argmax_channels().unwrap();
        assert_eq!(a.data, vec![1, 0]);
    }

    #[test]
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, 1.0, &a, false, &b, false, 0.0, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], want);
            }
        }
        // transposed operands
        let at: Vec<f64> = (0..3).flat_map(|k| (0..2).map(move |i| (i * 3 + k) as f64)).collect();
        let mut c2 = vec![0.0; 8];
        gemm(2, 3, 4, 1.0, &at, true, &b, false, 0.0, &mut c2);
        assert_eq!(c, c2);
    }

    #[test]
    fn batch_slicing_round_trips() {
        let t = Tensor::<f32>::from_f64(&[3, 1, 1, 2], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let a = t.slice_batch(0, 1).unwrap();
        let b = t.slice_batch(1, 2).unwrap();
        assert_eq!(Tensor::concat_batch(&[&a, &b]).unwrap(), t);
    }
}
