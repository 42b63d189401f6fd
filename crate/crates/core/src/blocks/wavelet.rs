use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{join, Conv2d, ParamSet};
use crate::ops::{bilinear_resize, bilinear_resize_backward};
use crate::tensor::{ConvSpec, Scalar, Tensor};

fn half<T: Scalar>() -> T {
    T::from_f64c(0.5)
}

/// One-level orthonormal Haar analysis. Output channels are band-major:
/// `[LL | LH | HL | HH]`, each block `C` channels wide.
pub fn haar_dwt2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(crate::DsuError::Shape(format!("haar transform needs even extents, got {h}×{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let d = x.data();
    let band = c * oh * ow;
    let mut out = vec![T::zero(); 4 * band];
    let s = half::<T>();
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let at = |r: usize, q: usize| d[(ch * h + 2 * i + r) * w + 2 * j + q];
                let (a, b, cc, dd) = (at(0, 0), at(0, 1), at(1, 0), at(1, 1));
                let o = (ch * oh + i) * ow + j;
                out[o] = (a + b + cc + dd) * s;
                out[band + o] = (a - b + cc - dd) * s;
                out[2 * band + o] = (a + b - cc - dd) * s;
                out[3 * band + o] = (a - b - cc + dd) * s;
            }
        }
    }
    Tensor::from_vec(&[4 * c, oh, ow], out)
}

/// Exact inverse of [`haar_dwt2`]. The transform is orthonormal, so this is also its adjoint.
pub fn haar_idwt2<T: Scalar>(bands: &Tensor<T>) -> Result<Tensor<T>> {
    let (c4, oh, ow) = bands.chw();
    if c4 % 4 != 0 {
        return Err(crate::DsuError::Shape(format!("sub-band stack needs 4C channels, got {c4}")));
    }
    let c = c4 / 4;
    let (h, w) = (2 * oh, 2 * ow);
    let d = bands.data();
    let band = c * oh * ow;
    let mut out = vec![T::zero(); c * h * w];
    let s = half::<T>();
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let o = (ch * oh + i) * ow + j;
                let (ll, lh, hl, hh) = (d[o], d[band + o], d[2 * band + o], d[3 * band + o]);
                let base = (ch * h + 2 * i) * w + 2 * j;
                out[base] = (ll + lh + hl + hh) * s;
                out[base + 1] = (ll - lh + hl - hh) * s;
                out[base + w] = (ll + lh - hl - hh) * s;
                out[base + w + 1] = (ll - lh - hl + hh) * s;
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

// Source index for padded row/column `i` of an extent-`n` axis padded to even.
fn reflect(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else { n.saturating_sub(2) }
}

/// Pads the bottom row and right column by reflection when the extent is odd.
pub fn pad_to_even<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.chw();
    let (ph, pw) = (h + h % 2, w + w % 2);
    if (ph, pw) == (h, w) {
        return x.clone();
    }
    let d = x.data();
    Tensor::from_fn(&[c, ph, pw], |k| {
        let ch = k / (ph * pw);
        let i = reflect((k / pw) % ph, h);
        let j = reflect(k % pw, w);
        d[(ch * h + i) * w + j]
    })
}

fn pad_to_even_backward<T: Scalar>(shape: (usize, usize, usize), g: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = shape;
    let (_, ph, pw) = g.chw();
    if (ph, pw) == (h, w) {
        return g.clone();
    }
    let mut out = vec![T::zero(); c * h * w];
    for (k, &v) in g.data().iter().enumerate() {
        let ch = k / (ph * pw);
        let i = reflect((k / pw) % ph, h);
        let j = reflect(k % pw, w);
        out[(ch * h + i) * w + j] += v;
    }
    Tensor::from_vec(&[c, h, w], out).expect("pad shape")
}

fn crop<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (c, ph, pw) = x.chw();
    if (ph, pw) == (h, w) {
        return x.clone();
    }
    let d = x.data();
    Tensor::from_fn(&[c, h, w], |k| {
        let ch = k / (h * w);
        d[(ch * ph + (k / w) % h) * pw + k % w]
    })
}

fn crop_backward<T: Scalar>(g: &Tensor<T>, ph: usize, pw: usize) -> Tensor<T> {
    let (c, h, w) = g.chw();
    if (ph, pw) == (h, w) {
        return g.clone();
    }
    let mut out = vec![T::zero(); c * ph * pw];
    for (k, &v) in g.data().iter().enumerate() {
        let ch = k / (h * w);
        out[(ch * ph + (k / w) % h) * pw + k % w] = v;
    }
    Tensor::from_vec(&[c, ph, pw], out).expect("crop shape")
}

/// Wavelet-domain depthwise-separable downsampling to a target grid.
#[derive(Debug, Clone)]
pub struct Wtd<T: Scalar> {
    /// Depthwise 3×3 over the `4C` sub-band channels, no bias.
    pub subband: Conv2d<T>,
    /// Point-wise `C→C` completion.
    pub pointwise: Conv2d<T>,
}

#[derive(Debug)]
pub struct WtdCache<T: Scalar> {
    in_shape: (usize, usize, usize),
    bands: Tensor<T>,
    padded_hw: (usize, usize),
    rec: Tensor<T>,
}

impl<T: Scalar> Wtd<T> {
    fn specs(c: usize) -> (ConvSpec, ConvSpec) {
        (ConvSpec::new(4 * c, 4 * c, 3).with_padding(1).with_groups(4 * c), ConvSpec::new(c, c, 1))
    }

    /// Identity-initialised filters: the block starts as a plain resize.
    pub fn identity(channels: usize) -> Self {
        let (sb, pw) = Self::specs(channels);
        Self { subband: Conv2d::identity(sb, false, true), pointwise: Conv2d::identity(pw, true, true) }
    }

    pub fn new_random(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let (sb, pw) = Self::specs(channels);
        Self { subband: Conv2d::new(sb, false, true, rng), pointwise: Conv2d::new(pw, true, true, rng) }
    }

    pub fn forward(&self, x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<(Tensor<T>, WtdCache<T>)> {
        let in_shape = x.chw();
        let padded = pad_to_even(x);
        let (_, ph, pw) = padded.chw();
        let bands = haar_dwt2(&padded)?;
        let filtered = self.subband.forward(&bands)?;
        let rec = crop(&haar_idwt2(&filtered)?, in_shape.1, in_shape.2);
        let mixed = self.pointwise.forward(&rec)?;
        let y = bilinear_resize(&mixed, out_h, out_w, true);
        Ok((y, WtdCache { in_shape, bands, padded_hw: (ph, pw), rec }))
    }

    pub fn backward(&mut self, cache: &WtdCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = cache.in_shape;
        let dmixed = bilinear_resize_backward((c, h, w), dy, true);
        let drec = self.pointwise.backward(&cache.rec, &dmixed)?;
        let dfiltered = haar_dwt2(&crop_backward(&drec, cache.padded_hw.0, cache.padded_hw.1))?;
        let dbands = self.subband.backward(&cache.bands, &dfiltered)?;
        let dpadded = haar_idwt2(&dbands)?;
        Ok(pad_to_even_backward(cache.in_shape, &dpadded))
    }
}

impl<T: Scalar> ParamSet<T> for Wtd<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.subband.collect(&join(prefix, "subband"), out);
        self.pointwise.collect(&join(prefix, "pointwise"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.subband.collect_mut(&join(prefix, "subband"), out);
        self.pointwise.collect_mut(&join(prefix, "pointwise"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_inputs;

    #[test]
    fn constant_input_concentrates_in_ll() {
        let x = Tensor::<f64>::full(&[2, 4, 6], 1.5);
        let b = haar_dwt2(&x).unwrap();
        assert_eq!(b.shape(), &[8, 2, 3]);
        let band = 2 * 2 * 3;
        assert!(b.data()[..band].iter().all(|&v| (v - 3.0).abs() < 1e-15));
        assert!(b.data()[band..].iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn perfect_reconstruction() {
        for seed in 0..5 {
            let x = &random_inputs(&[&[3, 8, 8]], seed)[0];
            let r = haar_idwt2(&haar_dwt2(x).unwrap()).unwrap();
            assert!(r.max_abs_diff(x) < 1e-12);
        }
    }

    #[test]
    fn energy_preserved() {
        let x = &random_inputs(&[&[2, 6, 4]], 9)[0];
        let b = haar_dwt2(x).unwrap();
        let e = |t: &Tensor<f64>| t.data().iter().map(|v| v * v).sum::<f64>();
        assert!((e(x) - e(&b)).abs() < 1e-12);
    }

    #[test]
    fn odd_extents_pad_then_crop() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 1], |i| i as f64);
        let p = pad_to_even(&x);
        assert_eq!(p.shape(), &[1, 4, 2]);
        assert_eq!(p.data(), &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 1.0, 1.0]);
        assert_eq!(crop(&p, 3, 1), x);
    }

    #[test]
    fn identity_wtd_is_resize() {
        for (c, h, w, th, tw) in [(4, 9, 9, 3, 3), (3, 37, 37, 11, 11), (2, 8, 6, 5, 4)] {
            let x = Tensor::<f32>::from_fn(&[c, h, w], |i| ((i as f32) * 0.37).sin());
            let wtd = Wtd::<f32>::identity(c);
            let (y, _) = wtd.forward(&x, th, tw).unwrap();
            let r = bilinear_resize(&x, th, tw, true);
            assert!(y.max_abs_diff(&r) < 1e-5, "{c}×{h}×{w}");
        }
    }
}
