use crate::tensor::{Scalar, Tensor};

fn taps(cin: usize, cout: usize) -> Vec<(usize, usize, f64)> {
    (0..cout)
        .map(|j| {
            let src = if cout > 1 { j as f64 * (cin - 1) as f64 / (cout - 1) as f64 } else { 0.0 };
            let i0 = (src.floor() as usize).min(cin - 1);
            let i1 = (i0 + 1).min(cin - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Corner-aligned linear interpolation along the channel axis.
///
/// Output channel `j` samples input coordinate `j·(Cin−1)/(Cout−1)`.
pub fn channel_resample<T: Scalar>(x: &Tensor<T>, cout: usize) -> Tensor<T> {
    let (cin, h, w) = x.chw();
    if cin == cout {
        return x.clone();
    }
    let p = h * w;
    let d = x.data();
    let mut out = vec![T::zero(); cout * p];
    for (j, (i0, i1, f)) in taps(cin, cout).into_iter().enumerate() {
        let f = T::from_f64c(f);
        let dst = &mut out[j * p..(j + 1) * p];
        for k in 0..p {
            dst[k] = d[i0 * p + k] * (T::one() - f) + d[i1 * p + k] * f;
        }
    }
    Tensor::from_vec(&[cout, h, w], out).expect("resample shape")
}

pub fn channel_resample_backward<T: Scalar>(cin: usize, grad_out: &Tensor<T>) -> Tensor<T> {
    let (cout, h, w) = grad_out.chw();
    if cin == cout {
        return grad_out.clone();
    }
    let p = h * w;
    let g = grad_out.data();
    let mut dx = vec![T::zero(); cin * p];
    for (j, (i0, i1, f)) in taps(cin, cout).into_iter().enumerate() {
        let f = T::from_f64c(f);
        for k in 0..p {
            dx[i0 * p + k] += g[j * p + k] * (T::one() - f);
            dx[i1 * p + k] += g[j * p + k] * f;
        }
    }
    Tensor::from_vec(&[cin, h, w], dx).expect("resample shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_to_three_inserts_midpoint() {
        let x = Tensor::<f64>::from_vec(&[2, 1, 2], vec![1.0, -4.0, 3.0, 8.0]).unwrap();
        let y = channel_resample(&x, 3);
        assert_eq!(y.data(), &[1.0, -4.0, 2.0, 2.0, 3.0, 8.0]);
    }

    #[test]
    fn same_width_is_identity() {
        let x = Tensor::<f32>::from_fn(&[5, 2, 2], |i| i as f32);
        assert_eq!(channel_resample(&x, 5), x);
    }

    proptest! {
        #[test]
        fn output_within_channelwise_bounds(vals in prop::collection::vec(-10.0f64..10.0, 16), cout in 1usize..40) {
            let x = Tensor::from_vec(&[16, 1, 1], vals.clone()).unwrap();
            let y = channel_resample(&x, cout);
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(y.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        }
    }
}
