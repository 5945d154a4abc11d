//! Dense row-major tensors and the `TSR1` file format.
//!
//! Tensors are generic over the element type so the same kernels can run in
//! `f32` (the runtime precision) and `f64` (used by gradient checks, where
//! single precision rounding would swamp a central difference).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::path::Path;

use num_traits::Float;
use rand::Rng;

use crate::codec::{put_f32, put_shape, ByteReader};
use crate::error::{Error, Result};

/// Floating point element type.
pub trait Real: Float + Sum + Default + Debug + Display + Send + Sync + 'static {
    fn of(v: f64) -> Self;

    fn f64(self) -> f64 {
        // Float -> f64 never fails for f32/f64
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<R = f32> {
    shape: Vec<usize>,
    data: Vec<R>,
}

impl<R: Real> Debug for Tensor<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "dimensions must be positive".into(),
        });
    }
    Ok(())
}

impl<R: Real> Tensor<R> {
    pub fn new(shape: Vec<usize>, data: Vec<R>) -> Result<Self> {
        check_shape(&shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("holds {} elements, data has {}", n, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor whose shape the caller has already validated.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<R>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: R) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, R::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, R::one())
    }

    pub fn scalar(value: R) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn from_slice(data: &[R]) -> Self {
        Self::from_parts(vec![data.len()], data.to_vec())
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| R::of(rng.gen_range(lo..hi))).collect();
        Self::from_parts(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Result<R> {
        if !self.is_scalar() {
            return Err(Error::NotScalar(self.shape.clone()));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn cast<S: Real>(&self) -> Tensor<S> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| S::of(v.f64())).collect(),
        )
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(R, R) -> R) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Sum with 64-bit accumulation.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.f64()).sum()
    }

    pub fn mean_f64(&self) -> f64 {
        self.sum_f64() / self.numel() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m: f64, v| m.max(v.f64().abs()))
    }

    /// Index of the largest element; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn abs(&self) -> Self {
        self.map(|v| v.abs())
    }

    pub fn clamp(&self, lo: R, hi: R) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }
}

const TSR_MAGIC: &[u8; 4] = b"TSR1";

impl Tensor<f32> {
    /// Serializes as `TSR1`: magic, u32 rank, rank x u32 dims, f32 payload,
    /// all little-endian.
    pub fn to_tsr_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.rank() + 4 * self.numel());
        out.extend_from_slice(TSR_MAGIC);
        put_shape(&mut out, &self.shape);
        for &v in &self.data {
            put_f32(&mut out, v);
        }
        out
    }

    pub fn from_tsr_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "TSR1");
        r.expect_magic(TSR_MAGIC)?;
        let t = read_tensor_body(&mut r)?;
        r.finish()?;
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsr_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsr_bytes(&bytes)
    }
}

/// Shape header and payload without the magic; used by TSR1 and WGT1.
pub(crate) fn read_tensor_body(r: &mut ByteReader<'_>) -> Result<Tensor<f32>> {
    let shape = r.shape()?;
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| r.error("element count overflow"))?;
    let data = r.f32_vec(n, "tensor payload")?;
    Ok(Tensor::from_parts(shape, data))
}

pub(crate) fn write_tensor_body(out: &mut Vec<u8>, t: &Tensor<f32>) {
    put_shape(out, t.shape());
    for &v in t.data() {
        put_f32(out, v);
    }
}
