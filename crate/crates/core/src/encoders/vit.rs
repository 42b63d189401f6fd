use rand_chacha::ChaCha8Rng;

use super::channel_norm;
use crate::config::Geometry;
use crate::error::{DsuError, Result};
use crate::nn::{join, Conv2d, Linear, ParamSet};
use crate::ops::{pointwise_activation, Activation};
use crate::tensor::{ConvSpec, Scalar, Tensor};

/// ConvMixer-style token block: depthwise spatial mixing, then a channel MLP,
/// both residual and pre-normalised.
#[derive(Debug, Clone)]
struct TokenBlock<T: Scalar> {
    mix: Conv2d<T>,
    fc1: Linear<T>,
    fc2: Linear<T>,
}

impl<T: Scalar> TokenBlock<T> {
    fn new(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            mix: Conv2d::new(ConvSpec::new(dim, dim, 3).with_padding(1).with_groups(dim), true, false, rng),
            fc1: Linear::new(dim, dim, false, rng),
            fc2: Linear::new(dim, dim, false, rng),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = x.add(&self.mix.forward(&channel_norm(x))?);
        let h = pointwise_activation(&self.fc1.forward_channels(&channel_norm(&x))?, Activation::Gelu);
        x.add_assign(&self.fc2.forward_channels(&h)?);
        Ok(x)
    }
}

/// Frozen patch-embedding token network.
#[derive(Debug, Clone)]
pub struct VitStandIn<T: Scalar> {
    patch: usize,
    embed: Conv2d<T>,
    blocks: Vec<TokenBlock<T>>,
}

impl<T: Scalar> VitStandIn<T> {
    pub fn new(geometry: &Geometry, rng: &mut ChaCha8Rng) -> Self {
        let d = geometry.vit_dim;
        let p = geometry.patch;
        let embed = Conv2d::new(ConvSpec::new(3, d, p).with_stride(p), true, false, rng);
        let blocks = (0..geometry.vit_depth).map(|_| TokenBlock::new(d, rng)).collect();
        Self { patch: p, embed, blocks }
    }

    /// Returns the final token map and one tap after each quarter of the stack.
    pub fn forward(&self, image: &Tensor<T>) -> Result<(Tensor<T>, [Tensor<T>; 4])> {
        let (c, h, w) = image.chw();
        if c != 3 || h % self.patch != 0 || w % self.patch != 0 {
            return Err(DsuError::Shape(format!(
                "token encoder needs 3×H×W with H, W divisible by {}, got {c}×{h}×{w}",
                self.patch
            )));
        }
        let two = T::from_f64c(2.0);
        let mut x = self.embed.forward(&image.map(|v| v * two - T::one()))?;
        let depth = self.blocks.len();
        let mut taps = Vec::with_capacity(4);
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(&x)?;
            // tap after block ⌈(q+1)·depth/4⌉ for quarter q
            if taps.len() < 4 && i + 1 == ((taps.len() + 1) * depth).div_ceil(4) {
                taps.push(channel_norm(&x));
            }
        }
        let v = channel_norm(&x);
        Ok((v, taps.try_into().expect("depth ≥ 4 gives four taps")))
    }
}

impl<T: Scalar> ParamSet<T> for VitStandIn<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.embed.collect(&join(prefix, "embed"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            b.mix.collect(&join(&p, "mix"), out);
            b.fc1.collect(&join(&p, "fc1"), out);
            b.fc2.collect(&join(&p, "fc2"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.embed.collect_mut(&join(prefix, "embed"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            b.mix.collect_mut(&join(&p, "mix"), out);
            b.fc1.collect_mut(&join(&p, "fc1"), out);
            b.fc2.collect_mut(&join(&p, "fc2"), out);
        }
    }
}
