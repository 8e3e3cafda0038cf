//! Dense row-major tensors.
//!
//! Images and feature maps are stored height × width × channels with the
//! channel index varying fastest. Parameters and activations are `f32`; the
//! same code runs on `f64` tensors for finite-difference checking.

use std::fmt::{Debug, Display};

use crate::error::{Error, Result};

/// Element type of a [`Tensor`].
pub trait Real:
    Copy + Default + PartialOrd + PartialEq + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("shape has no dimensions".into()));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::InvalidShape(format!(
            "dimension {pos} of {shape:?} is zero"
        )));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape(format!("{shape:?} overflows")))
}

impl<T: Real> Tensor<T> {
    /// A tensor of `shape` with every element equal to `fill`.
    pub fn full(shape: &[usize], fill: T) -> Result<Self> {
        let len = validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![fill; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::default())
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = validate_shape(shape)?;
        if len != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a tensor from `f64` values, rounding to `T`.
    pub fn from_f64_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::from_vec(shape, data.into_iter().map(T::from_f64).collect())
    }

    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Self {
            shape: other.shape.clone(),
            data: vec![T::default(); other.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = validate_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Interprets the tensor as height × width × channels.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::shape(format!(
                "expected a rank-3 h×w×c tensor, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = T::from_f64(a.to_f64() + b.to_f64());
        }
        Ok(())
    }

    pub fn expect_same_shape(&self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(format!(
                "expected {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Reverses the width axis of an h×w×c tensor.
    pub fn mirror_horizontal(&self) -> Result<Self> {
        let (h, w, c) = self.hwc()?;
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..h {
            for x in (0..w).rev() {
                let base = (y * w + x) * c;
                out.extend_from_slice(&self.data[base..base + c]);
            }
        }
        Tensor::from_vec(&self.shape, out)
    }

    /// Concatenates two h×w×c tensors along the channel axis.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Result<Self> {
        let (h, w, ca) = a.hwc()?;
        let (hb, wb, cb) = b.hwc()?;
        if (h, w) != (hb, wb) {
            return Err(Error::shape(format!(
                "cannot concatenate {:?} with {:?}",
                a.shape, b.shape
            )));
        }
        let mut out = Vec::with_capacity(h * w * (ca + cb));
        for cell in 0..h * w {
            out.extend_from_slice(&a.data[cell * ca..(cell + 1) * ca]);
            out.extend_from_slice(&b.data[cell * cb..(cell + 1) * cb]);
        }
        Tensor::from_vec(&[h, w, ca + cb], out)
    }

    /// Inverse of [`Tensor::concat_channels`]: splits off the first `first` channels.
    pub fn split_channels(&self, first: usize) -> Result<(Self, Self)> {
        let (h, w, c) = self.hwc()?;
        if first == 0 || first >= c {
            return Err(Error::shape(format!(
                "cannot split {c} channels at {first}"
            )));
        }
        let second = c - first;
        let mut a = Vec::with_capacity(h * w * first);
        let mut b = Vec::with_capacity(h * w * second);
        for cell in self.data.chunks_exact(c) {
            a.extend_from_slice(&cell[..first]);
            b.extend_from_slice(&cell[first..]);
        }
        Ok((
            Tensor::from_vec(&[h, w, first], a)?,
            Tensor::from_vec(&[h, w, second], b)?,
        ))
    }
}

/// `tensor_create`: a tensor of the given shape filled with a constant.
pub fn tensor_create(shape: &[usize], fill: f32) -> Result<Tensor> {
    Tensor::full(shape, fill)
}
