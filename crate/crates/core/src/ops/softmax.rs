use crate::error::{DsuError, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-pixel softmax across the `K` branch maps of a `K×H×W` tensor.
pub fn softmax_over_branch<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, h, w) = input.chw();
    if k < 2 {
        return Err(DsuError::Shape(format!("softmax over branches needs K ≥ 2, got {k}")));
    }
    let p = h * w;
    let d = input.data();
    let mut out = vec![T::zero(); d.len()];
    for i in 0..p {
        let m = (0..k).map(|b| d[b * p + i]).fold(T::neg_infinity(), T::max);
        let mut z = 0.0f64;
        for b in 0..k {
            let e = (d[b * p + i] - m).exp();
            out[b * p + i] = e;
            z += e.as_f64();
        }
        let z = T::from_f64c(z);
        for b in 0..k {
            out[b * p + i] /= z;
        }
    }
    Tensor::from_vec(input.shape(), out)
}

/// Backward given the softmax *output*.
pub fn softmax_over_branch_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let (k, h, w) = output.chw();
    let p = h * w;
    let y = output.data();
    let g = grad_out.data();
    let mut dx = vec![T::zero(); y.len()];
    for i in 0..p {
        let dot: f64 = (0..k).map(|b| (y[b * p + i] * g[b * p + i]).as_f64()).sum();
        let dot = T::from_f64c(dot);
        for b in 0..k {
            dx[b * p + i] = y[b * p + i] * (g[b * p + i] - dot);
        }
    }
    Tensor::from_vec(output.shape(), dx).expect("same shape")
}
