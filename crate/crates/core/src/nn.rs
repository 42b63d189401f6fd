//! Parameter-holding layers and the named-parameter registry.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ops::{channel_linear, channel_linear_backward, conv2d, conv2d_backward, linear, linear_backward};
use crate::tensor::{ConvSpec, Scalar, Tensor};

/// Named parameter enumeration. Order is stable and defines checkpoint layout.
pub trait ParamSet<T: Scalar> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>);

    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform `[-1/√fan_in, 1/√fan_in]` tensor.
pub fn uniform_init<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64c(rng.gen_range(-bound..=bound)))
}

fn set_trainable<T: Scalar>(t: Tensor<T>, trainable: bool) -> Tensor<T> {
    if trainable {
        t.into_trainable()
    } else {
        t
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(spec: ConvSpec, with_bias: bool, trainable: bool, rng: &mut ChaCha8Rng) -> Self {
        spec.validate().expect("valid conv spec");
        let fan_in = spec.fan_in();
        let weight = set_trainable(uniform_init(&spec.weight_shape(), fan_in, rng), trainable);
        let bias = with_bias.then(|| set_trainable(uniform_init(&[spec.out_channels], fan_in, rng), trainable));
        Self { spec, weight, bias }
    }

    /// Point-wise identity (`C→C`, 1×1) or depthwise identity (centre tap 1), zero bias.
    pub fn identity(spec: ConvSpec, with_bias: bool, trainable: bool) -> Self {
        let [o, i, kh, kw] = spec.weight_shape();
        assert!(spec.in_channels == spec.out_channels && kh % 2 == 1 && kw % 2 == 1);
        let cig = i;
        let cog = o / spec.groups;
        let mut weight = Tensor::zeros(&[o, i, kh, kw]);
        for oc in 0..o {
            // input channel within the group that carries the same global index
            let local = oc - (oc / cog) * cog;
            if local < cig {
                weight.data_mut()[((oc * cig + local) * kh + kh / 2) * kw + kw / 2] = T::one();
            }
        }
        let bias = with_bias.then(|| set_trainable(Tensor::zeros(&[o]), trainable));
        Self { spec, weight: set_trainable(weight, trainable), bias }
    }

    pub fn zeroed(&mut self) {
        self.weight.data_mut().iter_mut().for_each(|v| *v = T::zero());
        if let Some(b) = &mut self.bias {
            b.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight, self.bias.as_ref(), &self.spec)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = conv2d_backward(x, &self.weight, self.bias.is_some(), &self.spec, grad_out)?;
        self.weight.accumulate_grad(&g.weight);
        if let (Some(b), Some(gb)) = (&mut self.bias, &g.bias) {
            b.accumulate_grad(gb);
        }
        Ok(g.input)
    }
}

impl<T: Scalar> ParamSet<T> for Conv2d<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((join(prefix, "weight"), &self.weight));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }
}

/// Affine layer with `Din×Dout` weights.
#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(din: usize, dout: usize, trainable: bool, rng: &mut ChaCha8Rng) -> Self {
        let weight = set_trainable(uniform_init(&[din, dout], din, rng), trainable);
        let bias = set_trainable(uniform_init(&[dout], din, rng), trainable);
        Self { weight, bias }
    }

    pub fn zeros(din: usize, dout: usize, trainable: bool) -> Self {
        Self {
            weight: set_trainable(Tensor::zeros(&[din, dout]), trainable),
            bias: set_trainable(Tensor::zeros(&[dout]), trainable),
        }
    }

    pub fn din(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn dout(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Trailing-axis application.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        linear(x, &self.weight, Some(&self.bias))
    }

    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = linear_backward(x, &self.weight, true, grad_out)?;
        self.weight.accumulate_grad(&g.weight);
        self.bias.accumulate_grad(g.bias.as_deref().expect("bias grad"));
        Ok(g.input)
    }

    /// Per-pixel application over the channel axis of a `C×H×W` map.
    pub fn forward_channels(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        channel_linear(x, &self.weight, Some(&self.bias))
    }

    pub fn backward_channels(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = channel_linear_backward(x, &self.weight, true, grad_out)?;
        self.weight.accumulate_grad(&g.weight);
        self.bias.accumulate_grad(g.bias.as_deref().expect("bias grad"));
        Ok(g.input)
    }
}

impl<T: Scalar> ParamSet<T> for Linear<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn init_is_bounded_and_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let x: Tensor<f32> = uniform_init(&[16, 9], 9, &mut a);
        let y: Tensor<f32> = uniform_init(&[16, 9], 9, &mut b);
        assert_eq!(x, y);
        assert!(x.data().iter().all(|v| v.abs() <= 1.0 / 3.0));
    }

    #[test]
    fn identity_convs_pass_input_through() {
        let x = Tensor::<f32>::from_fn(&[4, 3, 3], |i| i as f32 - 7.0);
        let dw = Conv2d::identity(ConvSpec::new(4, 4, 3).with_padding(1).with_groups(4), false, true);
        assert_eq!(dw.forward(&x).unwrap(), x);
        let pw = Conv2d::identity(ConvSpec::new(4, 4, 1), true, true);
        assert_eq!(pw.forward(&x).unwrap(), x);
    }
}
