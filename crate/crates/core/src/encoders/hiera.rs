use rand_chacha::ChaCha8Rng;

use super::channel_norm;
use crate::config::Geometry;
use crate::error::{DsuError, Result};
use crate::nn::{join, Conv2d, ParamSet};
use crate::ops::{pointwise_activation, Activation};
use crate::tensor::{ConvSpec, Scalar, Tensor};

/// Frozen hierarchical stand-in: a stride-4 stem and three stride-2 stages,
/// doubling channels at each stage.
#[derive(Debug, Clone)]
pub struct HieraStandIn<T: Scalar> {
    stem: [Conv2d<T>; 2],
    stages: [Conv2d<T>; 3],
}

impl<T: Scalar> HieraStandIn<T> {
    pub fn new(geometry: &Geometry, rng: &mut ChaCha8Rng) -> Self {
        let c = geometry.pyramid_channels;
        let down = |cin, cout, rng: &mut ChaCha8Rng| {
            Conv2d::new(ConvSpec::new(cin, cout, 3).with_stride(2).with_padding(1), true, false, rng)
        };
        let stem = [down(3, c[0] / 2, rng), down(c[0] / 2, c[0], rng)];
        let stages = [down(c[0], c[1], rng), down(c[1], c[2], rng), down(c[2], c[3], rng)];
        Self { stem, stages }
    }

    /// `3×H×W` image in `[0, 1]` → four pyramid maps.
    pub fn forward(&self, image: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
        let (c, h, w) = image.chw();
        if c != 3 || h % 32 != 0 || w % 32 != 0 {
            return Err(DsuError::Shape(format!("hierarchical encoder needs 3×H×W with H, W divisible by 32, got {c}×{h}×{w}")));
        }
        let two = T::from_f64c(2.0);
        let mut x = image.map(|v| v * two - T::one());
        for conv in &self.stem {
            x = pointwise_activation(&conv.forward(&x)?, Activation::Gelu);
        }
        let s1 = channel_norm(&x);
        let mut outs = vec![s1];
        for conv in &self.stages {
            let y = pointwise_activation(&conv.forward(outs.last().unwrap())?, Activation::Gelu);
            outs.push(channel_norm(&y));
        }
        Ok(outs.try_into().expect("four levels"))
    }
}

impl<T: Scalar> ParamSet<T> for HieraStandIn<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (i, c) in self.stem.iter().enumerate() {
            c.collect(&join(prefix, &format!("stem{i}")), out);
        }
        for (i, c) in self.stages.iter().enumerate() {
            c.collect(&join(prefix, &format!("stage{}", i + 2)), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for (i, c) in self.stem.iter_mut().enumerate() {
            c.collect_mut(&join(prefix, &format!("stem{i}")), out);
        }
        for (i, c) in self.stages.iter_mut().enumerate() {
            c.collect_mut(&join(prefix, &format!("stage{}", i + 2)), out);
        }
    }
}
