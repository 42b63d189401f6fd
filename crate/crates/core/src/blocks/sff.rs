use rand_chacha::ChaCha8Rng;

use crate::error::{DsuError, Result};
use crate::nn::{join, Conv2d, ParamSet};
use crate::ops::{bilinear_resize, bilinear_resize_backward, softmax_over_branch, softmax_over_branch_backward};
use crate::tensor::{ConvSpec, Scalar, Tensor};

/// Per-pixel softmax blend of a fine map and an upsampled coarser one.
#[derive(Debug, Clone)]
pub struct Sff<T: Scalar> {
    pub gate: Conv2d<T>,
    pub out: Conv2d<T>,
}

#[derive(Debug)]
pub struct SffCache<T: Scalar> {
    low: Tensor<T>,
    high_shape: (usize, usize, usize),
    high_up: Tensor<T>,
    cat: Tensor<T>,
    /// Branch weights `2×H×W`: row 0 for the fine map, row 1 for the coarse one.
    pub weights: Tensor<T>,
    mix: Tensor<T>,
}

impl<T: Scalar> Sff<T> {
    pub fn new(c: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            gate: Conv2d::new(ConvSpec::new(2 * c, 2, 1), true, true, rng),
            out: Conv2d::new(ConvSpec::same(c, c, 3, 1), true, true, rng),
        }
    }

    pub fn forward(&self, low: &Tensor<T>, high: &Tensor<T>) -> Result<(Tensor<T>, SffCache<T>)> {
        let (c, h, w) = low.chw();
        if high.chw().0 != c {
            return Err(DsuError::Shape(format!("decoder fusion channel mismatch: {c} vs {}", high.chw().0)));
        }
        let high_up = bilinear_resize(high, h, w, true);
        let cat = Tensor::concat_channels(&[low, &high_up]);
        let weights = softmax_over_branch(&self.gate.forward(&cat)?)?;
        let p = h * w;
        let (a, l, u) = (weights.data(), low.data(), high_up.data());
        let mix = Tensor::from_fn(&[c, h, w], |i| a[i % p] * l[i] + a[p + i % p] * u[i]);
        let y = self.out.forward(&mix)?;
        Ok((y, SffCache { low: low.clone(), high_shape: high.chw(), high_up, cat, weights, mix }))
    }

    /// Returns gradients for `(low, high)`.
    pub fn backward(&mut self, k: &SffCache<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (c, h, w) = k.low.chw();
        let p = h * w;
        let dmix = self.out.backward(&k.mix, dy)?;
        let (a, l, u, g) = (k.weights.data(), k.low.data(), k.high_up.data(), dmix.data());
        let mut da = vec![T::zero(); 2 * p];
        for i in 0..c * p {
            da[i % p] += g[i] * l[i];
            da[p + i % p] += g[i] * u[i];
        }
        let mut dlow = Tensor::from_fn(&[c, h, w], |i| a[i % p] * g[i]);
        let mut dup = Tensor::from_fn(&[c, h, w], |i| a[p + i % p] * g[i]);
        let dlogits = softmax_over_branch_backward(&k.weights, &Tensor::from_vec(&[2, h, w], da)?);
        let dcat = self.gate.backward(&k.cat, &dlogits)?;
        dlow.add_assign(&dcat.channels(0, c));
        dup.add_assign(&dcat.channels(c, c));
        Ok((dlow, bilinear_resize_backward(k.high_shape, &dup, true)))
    }
}

impl<T: Scalar> ParamSet<T> for Sff<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.gate.collect(&join(prefix, "gate"), out);
        self.out.collect(&join(prefix, "out"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.gate.collect_mut(&join(prefix, "gate"), out);
        self.out.collect_mut(&join(prefix, "out"), out);
    }
}

/// Point-wise logit head followed by a resize to the output grid.
#[derive(Debug, Clone)]
pub struct Head<T: Scalar> {
    pub conv: Conv2d<T>,
}

impl<T: Scalar> Head<T> {
    pub fn new(c: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { conv: Conv2d::new(ConvSpec::new(c, 1, 1), true, true, rng) }
    }

    pub fn forward(&self, x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        Ok(bilinear_resize(&self.conv.forward(x)?, out_h, out_w, true))
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, h, w) = x.chw();
        let dz = bilinear_resize_backward((1, h, w), dy, true);
        self.conv.backward(x, &dz)
    }
}

impl<T: Scalar> ParamSet<T> for Head<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.conv.collect(prefix, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.conv.collect_mut(prefix, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_inputs;
    use rand::SeedableRng;

    #[test]
    fn branch_weights_partition_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sff = Sff::<f64>::new(6, &mut rng);
        let v = random_inputs(&[&[6, 8, 8], &[6, 4, 4]], 3);
        let (y, k) = sff.forward(&v[0], &v[1]).unwrap();
        assert_eq!(y.shape(), &[6, 8, 8]);
        let p = 64;
        for i in 0..p {
            assert!((k.weights.data()[i] + k.weights.data()[p + i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_branches_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sff = Sff::<f64>::new(3, &mut rng);
        let x = &random_inputs(&[&[3, 5, 5]], 1)[0];
        let (_, k) = sff.forward(x, x).unwrap();
        assert!(k.mix.max_abs_diff(x) < 1e-12);
    }

    #[test]
    fn paper_level_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sff = Sff::<f32>::new(64, &mut rng);
        let (y, _) = sff.forward(&Tensor::zeros(&[64, 22, 22]), &Tensor::zeros(&[64, 11, 11])).unwrap();
        assert_eq!(y.shape(), &[64, 22, 22]);
        assert!(sff.forward(&Tensor::zeros(&[64, 22, 22]), &Tensor::zeros(&[32, 11, 11])).is_err());
    }

    #[test]
    fn head_geometry_and_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut head = Head::<f32>::new(64, &mut rng);
        let x = Tensor::full(&[64, 88, 88], 0.3);
        assert_eq!(head.forward(&x, 352, 352).unwrap().shape(), &[1, 352, 352]);
        head.conv.zeroed();
        let z = head.forward(&x, 352, 352).unwrap();
        assert!(z.data().iter().all(|&v| crate::ops::sigmoid(v) == 0.5));
        let same = head.forward(&x, 88, 88).unwrap();
        assert_eq!(same, head.conv.forward(&x).unwrap());
    }
}
