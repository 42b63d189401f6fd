use crate::error::Result;
use crate::tensor::{ConvSpec, Scalar, Tensor};

/// Average pooling over square windows of a `C×H×W` map.
///
/// Padded zeros count toward the denominator (it is always `kernel²`).
/// Window sums are accumulated in `f64`, separably (rows, then columns).
pub fn avg_pool2d<T: Scalar>(input: &Tensor<T>, kernel: usize, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw();
    let oh = ConvSpec::out_extent(h, kernel, stride, padding, 1)?;
    let ow = ConvSpec::out_extent(w, kernel, stride, padding, 1)?;
    let denom = (kernel * kernel) as f64;
    let mut out = vec![T::zero(); c * oh * ow];
    let mut rows = vec![0.0f64; h * ow];
    for ch in 0..c {
        let src = &input.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for ox in 0..ow {
                let start = (ox * stride) as isize - padding as isize;
                let lo = start.max(0) as usize;
                let hi = ((start + kernel as isize).min(w as isize)).max(0) as usize;
                rows[y * ow + ox] = src[y * w + lo.min(hi)..y * w + hi].iter().map(|v| v.as_f64()).sum();
            }
        }
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            let start = (oy * stride) as isize - padding as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + kernel as isize).min(h as isize)).max(0) as usize;
            for ox in 0..ow {
                let s: f64 = (lo..hi.max(lo)).map(|y| rows[y * ow + ox]).sum();
                dst[oy * ow + ox] = T::from_f64c(s / denom);
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

pub fn avg_pool2d_backward<T: Scalar>(
    input_shape: (usize, usize, usize),
    kernel: usize,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (c, h, w) = input_shape;
    let (_, oh, ow) = grad_out.chw();
    let inv = T::from_f64c(1.0 / (kernel * kernel) as f64);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let g = &grad_out.data()[ch * oh * ow..(ch + 1) * oh * ow];
        let d = &mut dx[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let v = g[oy * ow + ox] * inv;
                for ky in 0..kernel {
                    let y = (oy * stride + ky) as isize - padding as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let x = (ox * stride + kx) as isize - padding as isize;
                        if x >= 0 && x < w as isize {
                            d[y as usize * w + x as usize] += v;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c, h, w], dx).expect("pool shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padded_corner_counts_zeros() {
        let x = Tensor::<f64>::full(&[1, 2, 2], 1.0);
        let y = avg_pool2d(&x, 3, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert!((y.data()[0] - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn constant_interior_and_unit_kernel() {
        let x = Tensor::<f64>::full(&[1, 9, 9], 2.5);
        let y = avg_pool2d(&x, 3, 1, 1).unwrap();
        assert_eq!(y.data()[4 * 9 + 4], 2.5);
        let z = Tensor::<f32>::from_fn(&[2, 3, 4], |i| i as f32);
        assert_eq!(avg_pool2d(&z, 1, 1, 0).unwrap().data(), z.data());
    }

    #[test]
    fn strided_window() {
        let x = Tensor::<f64>::from_fn(&[1, 4, 4], |i| i as f64);
        let y = avg_pool2d(&x, 2, 2, 0).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
        assert!(avg_pool2d(&x, 7, 1, 0).is_err());
    }
}
