use crate::error::{DsuError, Result};
use crate::tensor::{Scalar, Tensor};

/// Gradients of an affine map.
#[derive(Debug)]
pub struct LinearGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

fn dims<T: Scalar>(weights: &Tensor<T>) -> Result<(usize, usize)> {
    match weights.shape() {
        &[din, dout] => Ok((din, dout)),
        s => Err(DsuError::Shape(format!("linear weights must be Din×Dout, got {s:?}"))),
    }
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, dout: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [dout] => {
            Err(DsuError::Shape(format!("linear bias shape {:?}, expected [{dout}]", b.shape())))
        }
        _ => Ok(()),
    }
}

/// Affine map over the trailing axis: `y = x·W + b` with `W` stored `Din×Dout`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (din, dout) = dims(weights)?;
    let last = *input.shape().last().expect("rank ≥ 1");
    if last != din {
        return Err(DsuError::Shape(format!("linear trailing extent {last}, weights expect {din}")));
    }
    check_bias(bias, dout)?;
    let rows = input.len() / din;
    let mut out = vec![T::zero(); rows * dout];
    if let Some(b) = bias {
        for r in 0..rows {
            out[r * dout..(r + 1) * dout].copy_from_slice(b.data());
        }
    }
    T::gemm_acc(rows, din, dout, input.data(), din as isize, 1, weights.data(), dout as isize, 1, &mut out, dout as isize);
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = dout;
    Tensor::from_vec(&shape, out)
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    has_bias: bool,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (din, dout) = dims(weights)?;
    let rows = input.len() / din;
    if grad_out.len() != rows * dout {
        return Err(DsuError::Shape("linear grad_out size mismatch".into()));
    }
    let dy = grad_out.data();
    let mut dw = vec![T::zero(); din * dout];
    T::gemm_acc(din, rows, dout, input.data(), 1, din as isize, dy, dout as isize, 1, &mut dw, dout as isize);
    let mut dx = vec![T::zero(); rows * din];
    T::gemm_acc(rows, dout, din, dy, dout as isize, 1, weights.data(), 1, dout as isize, &mut dx, din as isize);
    let db = has_bias.then(|| {
        (0..dout)
            .map(|o| T::from_f64c((0..rows).map(|r| dy[r * dout + o].as_f64()).sum()))
            .collect()
    });
    Ok(LinearGrads { input: Tensor::from_vec(input.shape(), dx)?, weight: dw, bias: db })
}

/// Affine map over the channel axis of a `C×H×W` map, applied at every pixel.
///
/// Same weight layout as [`linear`] (`Din×Dout`), so a per-position linear layer
/// needs no transposition of the feature map.
pub fn channel_linear<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (din, dout) = dims(weights)?;
    let (c, h, w) = input.chw();
    if c != din {
        return Err(DsuError::Shape(format!("channel_linear input has {c} channels, weights expect {din}")));
    }
    check_bias(bias, dout)?;
    let p = h * w;
    let mut out = vec![T::zero(); dout * p];
    if let Some(b) = bias {
        for (o, &bv) in b.data().iter().enumerate() {
            out[o * p..(o + 1) * p].iter_mut().for_each(|v| *v = bv);
        }
    }
    T::gemm_acc(dout, din, p, weights.data(), 1, dout as isize, input.data(), p as isize, 1, &mut out, p as isize);
    Tensor::from_vec(&[dout, h, w], out)
}

pub fn channel_linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    has_bias: bool,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (din, dout) = dims(weights)?;
    let (_, h, w) = input.chw();
    let p = h * w;
    if grad_out.shape() != [dout, h, w] {
        return Err(DsuError::Shape("channel_linear grad_out shape mismatch".into()));
    }
    let dy = grad_out.data();
    let mut dw = vec![T::zero(); din * dout];
    T::gemm_acc(din, p, dout, input.data(), p as isize, 1, dy, 1, p as isize, &mut dw, dout as isize);
    let mut dx = vec![T::zero(); din * p];
    T::gemm_acc(din, dout, p, weights.data(), dout as isize, 1, dy, p as isize, 1, &mut dx, p as isize);
    let db = has_bias
        .then(|| (0..dout).map(|o| T::from_f64c(dy[o * p..(o + 1) * p].iter().map(|v| v.as_f64()).sum())).collect());
    Ok(LinearGrads { input: Tensor::from_vec(input.shape(), dx)?, weight: dw, bias: db })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_sum() {
        let x = Tensor::<f32>::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.0]).unwrap();
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let zero_b = Tensor::zeros(&[3]);
        assert_eq!(linear(&x, &eye, Some(&zero_b)).unwrap().data(), x.data());

        let x = Tensor::<f32>::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        let w = Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().data(), &[7.0]);
    }

    #[test]
    fn trailing_dimension_mismatch() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        let w = Tensor::zeros(&[4, 2]);
        assert!(matches!(linear(&x, &w, None), Err(DsuError::Shape(_))));
    }

    #[test]
    fn channel_linear_matches_transposed_linear() {
        let x = Tensor::<f64>::from_fn(&[3, 2, 2], |i| (i as f64 * 0.37).sin());
        let w = Tensor::from_fn(&[3, 2], |i| i as f64 - 2.5);
        let b = Tensor::from_vec(&[2], vec![0.1, -0.2]).unwrap();
        let y = channel_linear(&x, &w, Some(&b)).unwrap();
        for p in 0..4 {
            let col = Tensor::from_fn(&[3], |c| x.data()[c * 4 + p]);
            let r = linear(&col, &w, Some(&b)).unwrap();
            for o in 0..2 {
                assert!((y.data()[o * 4 + p] - r.data()[o]).abs() < 1e-12);
            }
        }
    }
}
