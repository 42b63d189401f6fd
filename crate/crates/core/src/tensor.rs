//! Dense row-major tensors and the scalar abstraction shared by every kernel.
//!
//! Model state lives in `f32`. The same kernels are instantiated for `f64`
//! so the finite-difference gradient oracle can run without `f32` rounding
//! noise swamping the comparison.

use std::fmt;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

use crate::error::{DsuError, Result};

/// Floating-point element type usable by every operation in the crate.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// `c += a * b` on row-major operands with explicit strides.
    ///
    /// `a` is `m×k` with strides `(rsa, csa)`, `b` is `k×n`, `c` is `m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm_acc(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        c: &mut [Self],
        rsc: isize,
    );

    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! gemm_impl {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm_acc(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                c: &mut [Self],
                rsc: isize,
            ) {
                if m == 0 || n == 0 || k == 0 {
                    return;
                }
                let a_end = (m as isize - 1) * rsa + (k as isize - 1) * csa;
                let b_end = (k as isize - 1) * rsb + (n as isize - 1) * csb;
                let c_end = (m as isize - 1) * rsc + n as isize - 1;
                assert!(a_end >= 0 && (a_end as usize) < a.len(), "gemm: lhs out of bounds");
                assert!(b_end >= 0 && (b_end as usize) < b.len(), "gemm: rhs out of bounds");
                assert!(c_end >= 0 && (c_end as usize) < c.len(), "gemm: out out of bounds");
                // SAFETY: every addressed element lies inside the slices (checked above
                // for the extreme corners; all strides are non-negative).
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        1.0,
                        c.as_mut_ptr(),
                        rsc,
                        1,
                    );
                }
            }
        }
    };
}

gemm_impl!(f32, matrixmultiply::sgemm);
gemm_impl!(f64, matrixmultiply::dgemm);

/// Dense tensor with an optional gradient buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    /// Accumulated gradient; only ever allocated on trainable tensors.
    pub grad: Option<Vec<T>>,
    pub trainable: bool,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("trainable", &self.trainable)
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(DsuError::Shape(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(DsuError::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data, grad: None, trainable: false })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in shape {shape:?}");
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n], grad: None, trainable: false }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self::from_vec(shape, (0..n).map(&mut f).collect()).expect("shape product matches")
    }

    /// Marks the tensor as an optimizable parameter.
    pub fn into_trainable(mut self) -> Self {
        self.trainable = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
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

    /// `(C, H, W)` of a rank-3 feature map.
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected C×H×W, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(DsuError::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), n);
        }
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect(), grad: None, trainable: false }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            grad: None,
            trainable: false,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Adds `g` into the gradient buffer. Frozen tensors ignore the call.
    pub fn accumulate_grad(&mut self, g: &[T]) {
        if !self.trainable {
            return;
        }
        assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(buf) => {
                for (a, &b) in buf.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Converts element type, dropping any gradient buffer.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64c(v.as_f64())).collect(),
            grad: None,
            trainable: self.trainable,
        }
    }

    /// Channel slice `[start, start + count)` of a C×H×W map.
    pub fn channels(&self, start: usize, count: usize) -> Self {
        let (c, h, w) = self.chw();
        assert!(start + count <= c, "channel range out of bounds");
        let plane = h * w;
        Self::from_vec(&[count, h, w], self.data[start * plane..(start + count) * plane].to_vec())
            .expect("slice shape")
    }

    /// Concatenates C×H×W maps along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Self {
        assert!(!parts.is_empty());
        let (_, h, w) = parts[0].chw();
        let mut data = Vec::new();
        let mut c = 0;
        for p in parts {
            let (pc, ph, pw) = p.chw();
            assert_eq!((ph, pw), (h, w), "concat spatial mismatch");
            data.extend_from_slice(&p.data);
            c += pc;
        }
        Self::from_vec(&[c, h, w], data).expect("concat shape")
    }

    /// Raw little-endian bytes of the payload (used for byte comparisons).
    pub fn to_le_bytes(&self) -> Vec<u8>
    where
        T: LeBytes,
    {
        let mut out = Vec::with_capacity(self.data.len() * std::mem::size_of::<T>());
        for v in &self.data {
            v.extend_le(&mut out);
        }
        out
    }
}

pub trait LeBytes {
    fn extend_le(&self, out: &mut Vec<u8>);
}

impl LeBytes for f32 {
    fn extend_le(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl LeBytes for f64 {
    fn extend_le(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

/// Convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self { in_channels, out_channels, kernel: (kernel, kernel), stride: 1, padding: 0, dilation: 1, groups: 1 }
    }

    /// Same-size convolution: padding chosen so stride-1 output keeps the input extent.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Self {
        Self::new(in_channels, out_channels, kernel).with_dilation(dilation).with_padding(dilation * (kernel - 1) / 2)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if [self.in_channels, self.out_channels, kh, kw, self.stride, self.dilation, self.groups].contains(&0) {
            return Err(DsuError::Config(format!("non-positive conv parameter in {self:?}")));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(DsuError::Config(format!(
                "channels {}→{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels / self.groups, self.kernel.0, self.kernel.1]
    }

    /// Output extent along one axis, or a configuration error when not strictly positive.
    pub fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> Result<usize> {
        let span = dilation * (kernel - 1) + 1;
        let padded = input + 2 * padding;
        if padded < span {
            return Err(DsuError::Config(format!(
                "non-positive output extent: input {input}, pad {padding}, kernel span {span}"
            )));
        }
        Ok((padded - span) / stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            Self::out_extent(h, self.kernel.0, self.stride, self.padding, self.dilation)?,
            Self::out_extent(w, self.kernel.1, self.stride, self.padding, self.dilation)?,
        ))
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel.0 * self.kernel.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shapes() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[0, 3], vec![]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn frozen_tensor_never_grows_grad() {
        let mut t = Tensor::<f32>::zeros(&[4]);
        t.accumulate_grad(&[1.0; 4]);
        assert!(t.grad.is_none());
        let mut p = Tensor::<f32>::zeros(&[4]).into_trainable();
        p.accumulate_grad(&[1.0; 4]);
        p.accumulate_grad(&[2.0; 4]);
        assert_eq!(p.grad.as_deref(), Some(&[3.0f32; 4][..]));
    }

    #[test]
    fn conv_extent_formula() {
        assert_eq!(ConvSpec::out_extent(88, 3, 2, 1, 1).unwrap(), 44);
        assert_eq!(ConvSpec::out_extent(11, 3, 2, 1, 1).unwrap(), 6);
        assert_eq!(ConvSpec::out_extent(6, 3, 1, 7, 7).unwrap(), 6);
        assert!(ConvSpec::out_extent(2, 5, 1, 0, 1).is_err());
        assert!(ConvSpec::new(6, 4, 3).with_groups(4).validate().is_err());
    }
}
