//! 2-D convolution (cross-correlation) via im2col + GEMM.

use std::borrow::Cow;

use crate::error::{DsuError, Result};
use crate::tensor::{ConvSpec, Scalar, Tensor};

/// Gradients produced by [`conv2d_backward`].
#[derive(Debug)]
pub struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

struct Geometry {
    batch: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    rank4: bool,
}

fn geometry<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: Option<&Tensor<T>>, spec: &ConvSpec) -> Result<Geometry> {
    spec.validate()?;
    let (batch, c, h, w, rank4) = match input.shape() {
        &[c, h, w] => (1, c, h, w, false),
        &[n, c, h, w] => (n, c, h, w, true),
        s => return Err(DsuError::Shape(format!("conv2d expects C×H×W or N×C×H×W input, got {s:?}"))),
    };
    if c != spec.in_channels {
        return Err(DsuError::Shape(format!("conv2d input has {c} channels, spec expects {}", spec.in_channels)));
    }
    if weights.shape() != spec.weight_shape() {
        return Err(DsuError::Shape(format!(
            "conv2d weight shape {:?}, expected {:?}",
            weights.shape(),
            spec.weight_shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(DsuError::Shape(format!("conv2d bias shape {:?}, expected [{}]", b.shape(), spec.out_channels)));
        }
    }
    let (oh, ow) = spec.output_hw(h, w)?;
    Ok(Geometry { batch, h, w, oh, ow, rank4 })
}

fn is_pointwise(spec: &ConvSpec) -> bool {
    spec.kernel == (1, 1) && spec.stride == 1 && spec.padding == 0
}

/// Unfolds one image (`C×H×W` slice) into a `(C·kh·kw) × (oh·ow)` matrix.
fn im2col<T: Scalar>(x: &[T], spec: &ConvSpec, g: &Geometry) -> Vec<T> {
    let (kh, kw) = spec.kernel;
    let p = g.oh * g.ow;
    let mut cols = vec![T::zero(); spec.in_channels * kh * kw * p];
    let pad = spec.padding as isize;
    for c in 0..spec.in_channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * p;
                let dst = &mut cols[row..row + p];
                for oy in 0..g.oh {
                    let iy = (oy * spec.stride + ki * spec.dilation) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * spec.stride + kj * spec.dilation) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.ow + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], spec: &ConvSpec, g: &Geometry, dx: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let p = g.oh * g.ow;
    let pad = spec.padding as isize;
    for c in 0..spec.in_channels {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((c * kh + ki) * kw + kj) * p;
                let src = &cols[row..row + p];
                for oy in 0..g.oh {
                    let iy = (oy * spec.stride + ki * spec.dilation) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * spec.stride + kj * spec.dilation) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Grouped, strided, dilated, zero-padded 2-D convolution.
///
/// Accepts `C×H×W` (treated as a batch of one) or `N×C×H×W`; the output has the
/// same rank as the input.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: Option<&Tensor<T>>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let g = geometry(input, weights, bias, spec)?;
    let cin = spec.in_channels;
    let cout = spec.out_channels;
    let (kh, kw) = spec.kernel;
    let k = cin / spec.groups * kh * kw;
    let cog = cout / spec.groups;
    let p = g.oh * g.ow;
    let in_stride = cin * g.h * g.w;
    let mut out = vec![T::zero(); g.batch * cout * p];
    for n in 0..g.batch {
        let x = &input.data()[n * in_stride..(n + 1) * in_stride];
        let cols: Cow<[T]> = if is_pointwise(spec) { Cow::Borrowed(x) } else { Cow::Owned(im2col(x, spec, &g)) };
        let y = &mut out[n * cout * p..(n + 1) * cout * p];
        if let Some(b) = bias {
            for (o, &bv) in b.data().iter().enumerate() {
                y[o * p..(o + 1) * p].iter_mut().for_each(|v| *v = bv);
            }
        }
        for grp in 0..spec.groups {
            T::gemm_acc(
                cog,
                k,
                p,
                &weights.data()[grp * cog * k..],
                k as isize,
                1,
                &cols[grp * k * p..],
                p as isize,
                1,
                &mut y[grp * cog * p..],
                p as isize,
            );
        }
    }
    let shape = if g.rank4 { vec![g.batch, cout, g.oh, g.ow] } else { vec![cout, g.oh, g.ow] };
    Tensor::from_vec(&shape, out)
}

/// Gradients of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    has_bias: bool,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = geometry(input, weights, None, spec)?;
    let cin = spec.in_channels;
    let cout = spec.out_channels;
    let (kh, kw) = spec.kernel;
    let k = cin / spec.groups * kh * kw;
    let cog = cout / spec.groups;
    let p = g.oh * g.ow;
    if grad_out.len() != g.batch * cout * p {
        return Err(DsuError::Shape(format!(
            "conv2d grad_out shape {:?} does not match output geometry",
            grad_out.shape()
        )));
    }
    let in_stride = cin * g.h * g.w;
    let mut dx = vec![T::zero(); input.len()];
    let mut dw = vec![T::zero(); weights.len()];
    let mut db = has_bias.then(|| vec![T::zero(); cout]);
    for n in 0..g.batch {
        let x = &input.data()[n * in_stride..(n + 1) * in_stride];
        let dy = &grad_out.data()[n * cout * p..(n + 1) * cout * p];
        let pointwise = is_pointwise(spec);
        let cols: Cow<[T]> = if pointwise { Cow::Borrowed(x) } else { Cow::Owned(im2col(x, spec, &g)) };
        if let Some(db) = db.as_mut() {
            for (o, acc) in db.iter_mut().enumerate() {
                let s: f64 = dy[o * p..(o + 1) * p].iter().map(|v| v.as_f64()).sum();
                *acc += T::from_f64c(s);
            }
        }
        let mut dcols = if pointwise { None } else { Some(vec![T::zero(); cols.len()]) };
        for grp in 0..spec.groups {
            // dW_g += dy_g · cols_gᵀ
            T::gemm_acc(
                cog,
                p,
                k,
                &dy[grp * cog * p..],
                p as isize,
                1,
                &cols[grp * k * p..],
                1,
                p as isize,
                &mut dw[grp * cog * k..],
                k as isize,
            );
            // dcols_g = W_gᵀ · dy_g
            let target: &mut [T] = match dcols.as_mut() {
                Some(d) => &mut d[grp * k * p..],
                None => &mut dx[n * in_stride + grp * k * p..],
            };
            T::gemm_acc(
                k,
                cog,
                p,
                &weights.data()[grp * cog * k..],
                1,
                k as isize,
                &dy[grp * cog * p..],
                p as isize,
                1,
                target,
                p as isize,
            );
        }
        if let Some(dcols) = dcols {
            col2im(&dcols, spec, &g, &mut dx[n * in_stride..(n + 1) * in_stride]);
        }
    }
    Ok(ConvGrads { input: Tensor::from_vec(input.shape(), dx)?, weight: dw, bias: db })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop correlation, one output element at a time.
    fn brute_force(x: &Tensor<f64>, w: &Tensor<f64>, spec: &ConvSpec) -> Tensor<f64> {
        let (_, h, wd) = x.chw();
        let (oh, ow) = spec.output_hw(h, wd).unwrap();
        let cig = spec.in_channels / spec.groups;
        let cog = spec.out_channels / spec.groups;
        let (kh, kw) = spec.kernel;
        let mut out = Tensor::zeros(&[spec.out_channels, oh, ow]);
        for o in 0..spec.out_channels {
            let grp = o / cog;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cig {
                        let c = grp * cig + ci;
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = (oy * spec.stride + ki * spec.dilation) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + kj * spec.dilation) as isize - spec.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[(c * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((o * cig + ci) * kh + ki) * kw + kj];
                            }
                        }
                    }
                    out.data_mut()[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn ones_kernel_counts_window() {
        let x = Tensor::<f32>::full(&[1, 1, 4, 4], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let spec = ConvSpec::new(1, 1, 3).with_padding(1);
        let y = conv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(y.data()[5], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 5, 3], &mut rng);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = conv2d(&x, &w, None, &ConvSpec::new(1, 1, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_brute_force_on_small_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let specs = [
            ConvSpec::new(3, 2, 3).with_padding(1),
            ConvSpec::new(2, 4, 3).with_stride(2).with_padding(1),
            ConvSpec::same(2, 2, 3, 2),
            ConvSpec::new(4, 4, 3).with_padding(1).with_groups(4),
            ConvSpec::new(4, 2, 2).with_groups(2),
            ConvSpec::new(3, 5, 1),
        ];
        for spec in specs {
            let x = random(&[spec.in_channels, 4, 4], &mut rng);
            let w = random(&spec.weight_shape(), &mut rng);
            let y = conv2d(&x, &w, None, &spec).unwrap();
            let oracle = brute_force(&x, &w, &spec);
            assert!(y.max_abs_diff(&oracle) < 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn depthwise_channels_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec::new(3, 3, 3).with_padding(1).with_groups(3);
        let x = random(&[3, 5, 5], &mut rng);
        let w = random(&spec.weight_shape(), &mut rng);
        let y0 = conv2d(&x, &w, None, &spec).unwrap();
        let mut x1 = x.clone();
        x1.data_mut()[12] += 3.0; // channel 0
        let y1 = conv2d(&x1, &w, None, &spec).unwrap();
        assert_ne!(y0.channels(0, 1), y1.channels(0, 1));
        assert_eq!(y0.channels(1, 2), y1.channels(1, 2));
    }

    #[test]
    fn batched_input_equals_per_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = ConvSpec::new(2, 3, 3).with_padding(1);
        let x = random(&[2, 2, 4, 4], &mut rng);
        let w = random(&spec.weight_shape(), &mut rng);
        let y = conv2d(&x, &w, None, &spec).unwrap();
        for n in 0..2 {
            let xn = Tensor::from_vec(&[2, 4, 4], x.data()[n * 32..(n + 1) * 32].to_vec()).unwrap();
            let yn = conv2d(&xn, &w, None, &spec).unwrap();
            assert_eq!(&y.data()[n * 48..(n + 1) * 48], yn.data());
        }
    }

    #[test]
    fn reports_shape_and_geometry_errors() {
        let x = Tensor::<f32>::zeros(&[2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        let err = conv2d(&x, &w, None, &ConvSpec::new(1, 1, 3)).unwrap_err();
        assert!(matches!(err, DsuError::Shape(_)));
        let x = Tensor::<f32>::zeros(&[1, 2, 2]);
        let w = Tensor::<f32>::zeros(&[1, 1, 5, 5]);
        let err = conv2d(&x, &w, None, &ConvSpec::new(1, 1, 5)).unwrap_err();
        assert!(matches!(err, DsuError::Config(_)));
    }
}
