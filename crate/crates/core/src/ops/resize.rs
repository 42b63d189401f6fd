use crate::tensor::{Scalar, Tensor};

/// Source coordinate table for one axis: `(i0, i1, frac)` per output index.
fn axis_taps(input: usize, output: usize, align_corners: bool) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|i| {
            let src = if align_corners {
                if output > 1 {
                    i as f64 * (input - 1) as f64 / (output - 1) as f64
                } else {
                    0.0
                }
            } else {
                ((i as f64 + 0.5) * input as f64 / output as f64 - 0.5).max(0.0)
            };
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling of every channel of a `C×H×W` map.
pub fn bilinear_resize<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize, align_corners: bool) -> Tensor<T> {
    let (c, h, w) = input.chw();
    if (out_h, out_w) == (h, w) {
        return Tensor::from_vec(input.shape(), input.data().to_vec()).expect("same shape");
    }
    let ys = axis_taps(h, out_h, align_corners);
    let xs = axis_taps(w, out_w, align_corners);
    let mut out = vec![T::zero(); c * out_h * out_w];
    for ch in 0..c {
        let src = &input.data()[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let fy = T::from_f64c(fy);
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let fx = T::from_f64c(fx);
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                dst[oy * out_w + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out).expect("resize shape")
}

pub fn bilinear_resize_backward<T: Scalar>(
    input_shape: (usize, usize, usize),
    grad_out: &Tensor<T>,
    align_corners: bool,
) -> Tensor<T> {
    let (c, h, w) = input_shape;
    let (_, out_h, out_w) = grad_out.chw();
    if (out_h, out_w) == (h, w) {
        return Tensor::from_vec(&[c, h, w], grad_out.data().to_vec()).expect("same shape");
    }
    let ys = axis_taps(h, out_h, align_corners);
    let xs = axis_taps(w, out_w, align_corners);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let g = &grad_out.data()[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        let d = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let fy = T::from_f64c(fy);
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let fx = T::from_f64c(fx);
                let v = g[oy * out_w + ox];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                d[y0 * w + x0] += top * (T::one() - fx);
                d[y0 * w + x1] += top * fx;
                d[y1 * w + x0] += bot * (T::one() - fx);
                d[y1 * w + x1] += bot * fx;
            }
        }
    }
    Tensor::from_vec(&[c, h, w], dx).expect("resize shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_of_two_by_two() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = bilinear_resize(&x, 3, 3, true);
        assert_eq!(y.data()[4], 1.5);
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[8], 3.0);
        assert_eq!(y.data()[1], 0.5);
    }

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 5], |i| i as f32 * 0.1);
        assert_eq!(bilinear_resize(&x, 3, 5, true).data(), x.data());
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f64>::full(&[1, 37, 37], 0.75);
        for (h, w) in [(11, 11), (1, 1), (80, 3)] {
            let y = bilinear_resize(&x, h, w, true);
            assert!(y.data().iter().all(|&v| (v - 0.75).abs() < 1e-15));
        }
    }
}
