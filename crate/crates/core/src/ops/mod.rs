//! Differentiable primitives. Every forward has a hand-written backward next to it.

mod activation;
mod conv;
mod linear;
mod pool;
mod reduce;
mod resize;
mod softmax;

pub use activation::{
    gelu, gelu_grad, pointwise_activation, pointwise_activation_backward, relu, sigmoid, Activation,
};
pub use conv::{conv2d, conv2d_backward, ConvGrads};
pub use linear::{channel_linear, channel_linear_backward, linear, linear_backward, LinearGrads};
pub use pool::{avg_pool2d, avg_pool2d_backward};
pub use reduce::{reduce, reduce_backward, ReduceAxis, ReduceOp};
pub use resize::{bilinear_resize, bilinear_resize_backward};
pub use softmax::{softmax_over_branch, softmax_over_branch_backward};

use crate::tensor::{Scalar, Tensor};

/// Broadcasts a `C×1×1` or `1×H×W` map up to `C×H×W`.
pub fn broadcast_to<T: Scalar>(t: &Tensor<T>, c: usize, h: usize, w: usize) -> Tensor<T> {
    let (tc, th, tw) = t.chw();
    let d = t.data();
    Tensor::from_fn(&[c, h, w], |i| {
        let ch = i / (h * w);
        let y = (i / w) % h;
        let x = i % w;
        d[((if tc == 1 { 0 } else { ch }) * th + if th == 1 { 0 } else { y }) * tw + if tw == 1 { 0 } else { x }]
    })
}

/// Sums a `C×H×W` gradient back down to the broadcast source shape.
pub fn unbroadcast<T: Scalar>(g: &Tensor<T>, shape: (usize, usize, usize)) -> Tensor<T> {
    let (_, h, w) = g.chw();
    let (tc, th, tw) = shape;
    let mut acc = vec![0.0f64; tc * th * tw];
    for (i, v) in g.data().iter().enumerate() {
        let ch = i / (h * w);
        let y = (i / w) % h;
        let x = i % w;
        let j = ((if tc == 1 { 0 } else { ch }) * th + if th == 1 { 0 } else { y }) * tw + if tw == 1 { 0 } else { x };
        acc[j] += v.as_f64();
    }
    Tensor::from_vec(&[tc, th, tw], acc.into_iter().map(T::from_f64c).collect()).expect("unbroadcast shape")
}
