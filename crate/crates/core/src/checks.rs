//! Gradient-check cases for every primitive and block, shared by the test
//! suites and `dsu verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{channel_resample, channel_resample_backward, haar_dwt2, haar_idwt2, Adapter, Cga, Head, Rfb, Sff, Wtd};
use crate::config::ModelConfig;
use crate::encoders::{Encoders, FeaturePyramid};
use crate::error::Result;
use crate::loss::total_loss;
use crate::model::{DecoderOutputs, DsuNet};
use crate::gradcheck::Differentiable;
use crate::nn::{Conv2d, Linear, ParamSet};
use crate::ops::{self, Activation, ReduceAxis, ReduceOp};
use crate::tensor::{ConvSpec, Tensor};

type T64 = Tensor<f64>;
type FwdFn = Box<dyn Fn(&[T64]) -> Result<Vec<T64>>>;
type BwdFn = Box<dyn Fn(&[T64], &[T64]) -> Result<Vec<T64>>>;

/// A named block with the input shapes it is checked on.
pub struct CheckCase {
    pub name: String,
    pub block: Box<dyn Differentiable>,
    pub input_shapes: Vec<Vec<usize>>,
}

impl CheckCase {
    fn new(name: &str, block: impl Differentiable + 'static, shapes: &[&[usize]]) -> Self {
        Self { name: name.into(), block: Box::new(block), input_shapes: shapes.iter().map(|s| s.to_vec()).collect() }
    }
}

/// Parameter-free operation given as a forward/backward pair.
struct OpCase {
    fwd: FwdFn,
    bwd: BwdFn,
}

impl Differentiable for OpCase {
    fn forward(&self, inputs: &[T64]) -> Result<Vec<T64>> {
        (self.fwd)(inputs)
    }

    fn forward_backward(&mut self, inputs: &[T64], grads: &[T64]) -> Result<Vec<T64>> {
        (self.bwd)(inputs, grads)
    }

    fn params_mut(&mut self) -> Vec<(String, &mut T64)> {
        Vec::new()
    }
}

fn op(
    fwd: impl Fn(&[T64]) -> Result<Vec<T64>> + 'static,
    bwd: impl Fn(&[T64], &[T64]) -> Result<Vec<T64>> + 'static,
) -> OpCase {
    OpCase { fwd: Box::new(fwd), bwd: Box::new(bwd) }
}

macro_rules! param_case {
    ($ty:ident, $field:ident: $inner:ty, |$s:ident, $x:ident| $fwd:expr, |$sb:ident, $xb:ident, $g:ident| $bwd:expr) => {
        struct $ty {
            $field: $inner,
        }

        impl Differentiable for $ty {
            fn forward(&self, $x: &[T64]) -> Result<Vec<T64>> {
                let $s = self;
                $fwd
            }

            fn forward_backward(&mut self, $xb: &[T64], $g: &[T64]) -> Result<Vec<T64>> {
                let $sb = self;
                $bwd
            }

            fn params_mut(&mut self) -> Vec<(String, &mut T64)> {
                self.$field.named_params_mut()
            }
        }
    };
}

param_case!(ConvCase, conv: Conv2d<f64>,
    |s, x| Ok(vec![s.conv.forward(&x[0])?]),
    |s, x, g| Ok(vec![s.conv.backward(&x[0], &g[0])?]));

param_case!(LinearCase, lin: Linear<f64>,
    |s, x| Ok(vec![s.lin.forward(&x[0])?]),
    |s, x, g| Ok(vec![s.lin.backward(&x[0], &g[0])?]));

param_case!(AdapterCase, block: Adapter<f64>,
    |s, x| Ok(vec![s.block.forward(&x[0])?.0]),
    |s, x, g| {
        let (_, k) = s.block.forward(&x[0])?;
        Ok(vec![s.block.backward(&k, &g[0])?])
    });

param_case!(RfbCase, block: Rfb<f64>,
    |s, x| Ok(vec![s.block.forward(&x[0])?.0]),
    |s, x, g| {
        let (_, k) = s.block.forward(&x[0])?;
        Ok(vec![s.block.backward(&k, &g[0])?])
    });

param_case!(CgaCase, block: Cga<f64>,
    |s, x| Ok(vec![s.block.forward(&x[0], &x[1])?.0]),
    |s, x, g| {
        let (_, k) = s.block.forward(&x[0], &x[1])?;
        let (dx, dy) = s.block.backward(&k, &g[0])?;
        Ok(vec![dx, dy])
    });

param_case!(SffCase, block: Sff<f64>,
    |s, x| Ok(vec![s.block.forward(&x[0], &x[1])?.0]),
    |s, x, g| {
        let (_, k) = s.block.forward(&x[0], &x[1])?;
        let (dl, dh) = s.block.backward(&k, &g[0])?;
        Ok(vec![dl, dh])
    });

struct WtdCase {
    block: Wtd<f64>,
    out: (usize, usize),
}

impl Differentiable for WtdCase {
    fn forward(&self, x: &[T64]) -> Result<Vec<T64>> {
        Ok(vec![self.block.forward(&x[0], self.out.0, self.out.1)?.0])
    }

    fn forward_backward(&mut self, x: &[T64], g: &[T64]) -> Result<Vec<T64>> {
        let (_, k) = self.block.forward(&x[0], self.out.0, self.out.1)?;
        Ok(vec![self.block.backward(&k, &g[0])?])
    }

    fn params_mut(&mut self) -> Vec<(String, &mut T64)> {
        self.block.named_params_mut()
    }
}

struct HeadCase {
    block: Head<f64>,
    out: (usize, usize),
}

impl Differentiable for HeadCase {
    fn forward(&self, x: &[T64]) -> Result<Vec<T64>> {
        Ok(vec![self.block.forward(&x[0], self.out.0, self.out.1)?])
    }

    fn forward_backward(&mut self, x: &[T64], g: &[T64]) -> Result<Vec<T64>> {
        Ok(vec![self.block.backward(&x[0], &g[0])?])
    }

    fn params_mut(&mut self) -> Vec<(String, &mut T64)> {
        self.block.named_params_mut()
    }
}

/// conv → GeLU → conv.
struct ComposeCase {
    a: Conv2d<f64>,
    b: Conv2d<f64>,
}

impl Differentiable for ComposeCase {
    fn forward(&self, x: &[T64]) -> Result<Vec<T64>> {
        let h = ops::pointwise_activation(&self.a.forward(&x[0])?, Activation::Gelu);
        Ok(vec![self.b.forward(&h)?])
    }

    fn forward_backward(&mut self, x: &[T64], g: &[T64]) -> Result<Vec<T64>> {
        let z = self.a.forward(&x[0])?;
        let h = ops::pointwise_activation(&z, Activation::Gelu);
        let dh = self.b.backward(&h, &g[0])?;
        let dz = ops::pointwise_activation_backward(&z, Activation::Gelu, &dh);
        Ok(vec![self.a.backward(&x[0], &dz)?])
    }

    fn params_mut(&mut self) -> Vec<(String, &mut T64)> {
        let mut out = Vec::new();
        self.a.collect_mut("a", &mut out);
        self.b.collect_mut("b", &mut out);
        out
    }
}

fn conv_case(name: &str, spec: ConvSpec, hw: usize, rng: &mut ChaCha8Rng) -> CheckCase {
    let cin = spec.in_channels;
    CheckCase::new(name, ConvCase { conv: Conv2d::new(spec, true, true, rng) }, &[&[cin, hw, hw]])
}

/// Differentiable primitives.
pub fn op_cases(seed: u64) -> Vec<CheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = vec![
        conv_case("conv2d 3x3", ConvSpec::same(3, 4, 3, 1), 5, &mut rng),
        conv_case("conv2d strided", ConvSpec::new(2, 3, 3).with_stride(2).with_padding(1), 6, &mut rng),
        conv_case("conv2d dilated", ConvSpec::same(2, 2, 3, 2), 5, &mut rng),
        conv_case("conv2d depthwise", ConvSpec::new(4, 4, 3).with_padding(1).with_groups(4), 4, &mut rng),
        CheckCase::new("linear 4->2", LinearCase { lin: Linear::new(4, 2, true, &mut rng) }, &[&[3, 4]]),
        CheckCase::new(
            "conv-gelu-conv",
            ComposeCase {
                a: Conv2d::new(ConvSpec::same(2, 3, 3, 1), true, true, &mut rng),
                b: Conv2d::new(ConvSpec::new(3, 2, 1), true, true, &mut rng),
            },
            &[&[2, 4, 4]],
        ),
    ];
    for kind in [Activation::Gelu, Activation::Relu, Activation::Sigmoid] {
        cases.push(CheckCase::new(
            &format!("activation {kind:?}").to_lowercase(),
            op(
                move |x| Ok(vec![ops::pointwise_activation(&x[0], kind)]),
                move |x, g| Ok(vec![ops::pointwise_activation_backward(&x[0], kind, &g[0])]),
            ),
            &[&[2, 3, 3]],
        ));
    }
    cases.push(CheckCase::new(
        "bilinear resize",
        op(
            |x| Ok(vec![ops::bilinear_resize(&x[0], 7, 5, true)]),
            |x, g| Ok(vec![ops::bilinear_resize_backward(x[0].chw(), &g[0], true)]),
        ),
        &[&[2, 4, 3]],
    ));
    cases.push(CheckCase::new(
        "avg pool",
        op(
            |x| Ok(vec![ops::avg_pool2d(&x[0], 3, 1, 1)?]),
            |x, g| Ok(vec![ops::avg_pool2d_backward(x[0].chw(), 3, 1, 1, &g[0])]),
        ),
        &[&[2, 5, 5]],
    ));
    for (rop, axis) in [
        (ReduceOp::Mean, ReduceAxis::Channel),
        (ReduceOp::Max, ReduceAxis::Channel),
        (ReduceOp::Sum, ReduceAxis::All),
        (ReduceOp::Mean, ReduceAxis::Spatial),
    ] {
        cases.push(CheckCase::new(
            &format!("reduce {rop:?} {axis:?}").to_lowercase(),
            op(
                move |x| Ok(vec![ops::reduce(&x[0], rop, axis)?]),
                move |x, g| Ok(vec![ops::reduce_backward(&x[0], rop, axis, &g[0])]),
            ),
            &[&[4, 3, 3]],
        ));
    }
    cases.push(CheckCase::new(
        "softmax over branch",
        op(
            |x| Ok(vec![ops::softmax_over_branch(&x[0])?]),
            |x, g| {
                let y = ops::softmax_over_branch(&x[0])?;
                Ok(vec![ops::softmax_over_branch_backward(&y, &g[0])])
            },
        ),
        &[&[3, 3, 3]],
    ));
    cases
}

/// Network blocks at the shapes used by the block-level contracts.
pub fn block_cases(seed: u64) -> Vec<CheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        CheckCase::new("adapter", AdapterCase { block: Adapter::new_random(8, 0.25, &mut rng) }, &[&[8, 4, 4]]),
        CheckCase::new(
            "channel resample",
            op(
                |x| Ok(vec![channel_resample(&x[0], 7)]),
                |x, g| Ok(vec![channel_resample_backward(x[0].chw().0, &g[0])]),
            ),
            &[&[5, 3, 3]],
        ),
        CheckCase::new(
            "haar transform",
            op(|x| Ok(vec![haar_dwt2(&x[0])?]), |_, g| Ok(vec![haar_idwt2(&g[0])?])),
            &[&[2, 4, 6]],
        ),
        CheckCase::new("wtd", WtdCase { block: Wtd::new_random(4, &mut rng), out: (3, 3) }, &[&[4, 9, 9]]),
        CheckCase::new("rfb", RfbCase { block: Rfb::new(8, 16, &mut rng) }, &[&[8, 6, 6]]),
        CheckCase::new("cga", CgaCase { block: Cga::new(8, &mut rng) }, &[&[8, 4, 4], &[8, 4, 4]]),
        CheckCase::new("sff", SffCase { block: Sff::new(8, &mut rng) }, &[&[8, 6, 6], &[8, 3, 3]]),
        CheckCase::new("head", HeadCase { block: Head::new(8, &mut rng), out: (8, 8) }, &[&[8, 5, 5]]),
        CheckCase::new(
            "total loss",
            LossCase {
                gt: Tensor::from_fn(&[1, 12, 12], |i| if rng.gen_bool(0.4) || i % 12 < 3 { 1.0 } else { 0.0 }),
                config: ModelConfig::default(),
            },
            &[&[1, 12, 12], &[1, 12, 12], &[1, 12, 12]],
        ),
    ]
}

/// Deep-supervised loss as a function of the three logit maps.
struct LossCase {
    gt: T64,
    config: ModelConfig,
}

impl Differentiable for LossCase {
    fn forward(&self, x: &[T64]) -> Result<Vec<T64>> {
        let out = DecoderOutputs { maps: [x[0].clone(), x[1].clone(), x[2].clone()] };
        let (b, _) = total_loss(&out, &self.gt, &self.config)?;
        Ok(vec![Tensor::from_vec(&[1], vec![b.total])?])
    }

    fn forward_backward(&mut self, x: &[T64], g: &[T64]) -> Result<Vec<T64>> {
        let out = DecoderOutputs { maps: [x[0].clone(), x[1].clone(), x[2].clone()] };
        let (_, grads) = total_loss(&out, &self.gt, &self.config)?;
        let s = g[0].data()[0];
        Ok(grads.iter().map(|t| t.scale(s)).collect())
    }

    fn params_mut(&mut self) -> Vec<(String, &mut T64)> {
        Vec::new()
    }
}

/// Whole trainable network on toy-profile encoder features.
pub struct EndToEnd {
    pub net: DsuNet<f64>,
}

impl EndToEnd {
    /// Fresh network with the adapters' zero up-projections replaced by small
    /// random values, so every parameter carries a non-trivial gradient.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut net = DsuNet::<f64>::new(config, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for (name, p) in net.named_params_mut() {
            if name.starts_with("adapter") && name.contains(".up.") {
                p.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
            }
        }
        Ok(Self { net })
    }

    fn pyramid(inputs: &[T64]) -> FeaturePyramid<f64> {
        FeaturePyramid {
            levels: [inputs[0].clone(), inputs[1].clone(), inputs[2].clone(), inputs[3].clone()],
            vit: inputs[4].clone(),
            vit_taps: (inputs.len() == 9)
                .then(|| [inputs[5].clone(), inputs[6].clone(), inputs[7].clone(), inputs[8].clone()]),
        }
    }

    /// Encoder features of a deterministic pair of views, flattened as inputs.
    pub fn inputs(config: &ModelConfig, seed: u64) -> Result<Vec<T64>> {
        let g = config.geometry();
        let enc = Encoders::<f64>::new(g, config.encoder_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut view = |s: usize| Tensor::from_fn(&[3, s, s], |_| rng.gen_range(0.0..1.0));
        let (main, aux) = (view(g.main_size), view(g.aux_size));
        let f = enc.forward(&main, &aux)?;
        let mut out: Vec<T64> = f.levels.to_vec();
        out.push(f.vit);
        out.extend(f.vit_taps.expect("stand-in exposes taps"));
        Ok(out)
    }
}

impl Differentiable for EndToEnd {
    fn forward(&self, inputs: &[T64]) -> Result<Vec<T64>> {
        Ok(self.net.forward(&Self::pyramid(inputs))?.maps.to_vec())
    }

    fn forward_backward(&mut self, inputs: &[T64], grads: &[T64]) -> Result<Vec<T64>> {
        let (_, cache) = self.net.forward_cached(&Self::pyramid(inputs))?;
        let g = self.net.backward(&cache, &[grads[0].clone(), grads[1].clone(), grads[2].clone()])?;
        let mut out: Vec<T64> = g.levels.to_vec();
        out.push(g.vit);
        match g.vit_taps {
            Some(t) => out.extend(t),
            None => out.extend((0..4).map(|k| Tensor::zeros(inputs[5 + k].shape()))),
        }
        Ok(out)
    }

    fn params_mut(&mut self) -> Vec<(String, &mut T64)> {
        self.net.named_params_mut()
    }
}
