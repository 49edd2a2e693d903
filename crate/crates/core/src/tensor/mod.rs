//! Dense row-major tensors with reverse-mode differentiation.
//!
//! [`Tensor`] is a plain value type (shape + flat data). Differentiation is
//! tape-based: ops executed through a [`Tape`] record enough to replay
//! adjoints in reverse; [`Tape::backward`] populates gradients for every
//! leaf that requires them. Forward results do not depend on whether a tape
//! is recording.
//!
//! The element type is selectable between `f32` (training default) and
//! `f64` (gradient-check mode) through the [`Element`] trait.

mod gradcheck;
mod tape;

pub use gradcheck::grad_check;
pub use tape::{Tape, Value};

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("value is not recorded on this tape")]
    NotOnTape,
    #[error("concat of an empty list")]
    EmptyConcat,
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("function under gradient check is not deterministic")]
    NonDeterministic,
}

/// Scalar element of a [`Tensor`]: `f32` or `f64`.
pub trait Element:
    Copy
    + PartialEq
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    /// Gauss error function, used by the exact CDF form of GELU.
    fn erf(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

impl Element for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
    fn maximum(self, other: Self) -> Self {
        f32::max(self, other)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Element for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn maximum(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Dense N-dimensional array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    /// Builds a tensor, panicking if `data.len()` does not match the shape.
    pub fn new(shape: &[usize], data: Vec<E>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![E::ZERO; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: E) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(v: E) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Self {
        Self::new(shape, data.iter().map(|&v| E::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Extent of the trailing axis (1 for a scalar).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.is_empty()
    }

    pub fn item(&self) -> E {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| F::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// True when `suffix` equals the trailing axes of `shape`.
pub(crate) fn is_suffix(shape: &[usize], suffix: &[usize]) -> bool {
    suffix.len() <= shape.len() && shape[shape.len() - suffix.len()..] == *suffix
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_roundtrip() {
        let t = Tensor::<f64>::scalar(2.5);
        assert!(t.is_scalar());
        assert_eq!(t.item(), 2.5);
        assert_eq!(t.numel(), 1);
    }

    #[test]
    #[should_panic(expected = "does not match shape")]
    fn shape_data_mismatch_panics() {
        let _ = Tensor::<f32>::new(&[2, 3], vec![0.0; 5]);
    }

    #[test]
    fn cast_preserves_values() {
        let t = Tensor::<f64>::from_f64(&[2, 2], &[1.0, -2.0, 0.5, 3.0]);
        let f: Tensor<f32> = t.cast();
        assert_eq!(f.data(), &[1.0f32, -2.0, 0.5, 3.0]);
    }

    #[test]
    fn suffix_check() {
        assert!(is_suffix(&[4, 17, 160], &[160]));
        assert!(is_suffix(&[4, 17, 160], &[17, 160]));
        assert!(!is_suffix(&[4, 17, 160], &[4]));
        assert!(is_suffix(&[3], &[]));
    }
}
