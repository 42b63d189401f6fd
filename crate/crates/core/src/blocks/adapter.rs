use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{join, Linear, ParamSet};
use crate::ops::{gelu_grad, pointwise_activation, Activation};
use crate::tensor::{Scalar, Tensor};

/// Bottleneck width for a `channels`-wide adapter.
pub fn bottleneck_width(channels: usize, ratio: f64) -> usize {
    ((channels as f64 * ratio).round() as usize).max(1)
}

/// Residual per-position bottleneck: `x + GeLU(up(GeLU(down(x))))`.
#[derive(Debug, Clone)]
pub struct Adapter<T: Scalar> {
    pub down: Linear<T>,
    pub up: Linear<T>,
}

#[derive(Debug)]
pub struct AdapterCache<T: Scalar> {
    x: Tensor<T>,
    h_pre: Tensor<T>,
    h: Tensor<T>,
    u_pre: Tensor<T>,
}

impl<T: Scalar> Adapter<T> {
    /// The up-projection starts at zero so the adapter is initially the identity.
    pub fn new(channels: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Self {
        let b = bottleneck_width(channels, ratio);
        Self { down: Linear::new(channels, b, true, rng), up: Linear::zeros(b, channels, true) }
    }

    /// Both projections drawn at random (used by the gradient checks).
    pub fn new_random(channels: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Self {
        let b = bottleneck_width(channels, ratio);
        Self { down: Linear::new(channels, b, true, rng), up: Linear::new(b, channels, true, rng) }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, AdapterCache<T>)> {
        let h_pre = self.down.forward_channels(x)?;
        let h = pointwise_activation(&h_pre, Activation::Gelu);
        let u_pre = self.up.forward_channels(&h)?;
        let y = x.add(&pointwise_activation(&u_pre, Activation::Gelu));
        Ok((y, AdapterCache { x: x.clone(), h_pre, h, u_pre }))
    }

    pub fn backward(&mut self, cache: &AdapterCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let du = cache.u_pre.zip_map(dy, |z, g| g * gelu_grad(z));
        let dh = self.up.backward_channels(&cache.h, &du)?;
        let dh_pre = cache.h_pre.zip_map(&dh, |z, g| g * gelu_grad(z));
        let mut dx = self.down.backward_channels(&cache.x, &dh_pre)?;
        dx.add_assign(dy);
        Ok(dx)
    }
}

impl<T: Scalar> ParamSet<T> for Adapter<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.down.collect(&join(prefix, "down"), out);
        self.up.collect(&join(prefix, "up"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.down.collect_mut(&join(prefix, "down"), out);
        self.up.collect_mut(&join(prefix, "up"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_initialised_adapter_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Adapter::<f32>::new(12, 0.25, &mut rng);
        let x = Tensor::from_fn(&[12, 3, 5], |i| (i as f32 * 0.31).cos());
        let (y, _) = a.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (c, h, w) in [(1, 1, 1), (7, 2, 9), (144, 3, 3)] {
            let a = Adapter::<f32>::new_random(c, 0.25, &mut rng);
            let (y, _) = a.forward(&Tensor::full(&[c, h, w], 0.5)).unwrap();
            assert_eq!(y.shape(), &[c, h, w]);
        }
        assert_eq!(bottleneck_width(144, 0.25), 36);
        assert_eq!(bottleneck_width(2, 0.25), 1);
    }
}
