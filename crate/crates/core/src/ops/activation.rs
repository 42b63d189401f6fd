use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
    Sigmoid,
}

const GELU_COEF: f64 = 0.044715;

fn sqrt_2_over_pi<T: Scalar>() -> T {
    T::from_f64c((2.0 / std::f64::consts::PI).sqrt())
}

/// Tanh-approximated GeLU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64c(0.5);
    let u = sqrt_2_over_pi::<T>() * (x + T::from_f64c(GELU_COEF) * x * x * x);
    half * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64c(0.5);
    let c = sqrt_2_over_pi::<T>();
    let k = T::from_f64c(GELU_COEF);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::from_f64c(3.0) * k * x * x)
}

/// Logistic sigmoid evaluated without overflow for large |x|.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Self::Gelu => gelu(x),
            Self::Relu => relu(x),
            Self::Sigmoid => sigmoid(x),
        }
    }
}

pub fn pointwise_activation<T: Scalar>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    input.map(|v| kind.apply(v))
}

/// Backward of [`pointwise_activation`]; `input` is the pre-activation.
pub fn pointwise_activation_backward<T: Scalar>(input: &Tensor<T>, kind: Activation, grad_out: &Tensor<T>) -> Tensor<T> {
    match kind {
        Activation::Gelu => input.zip_map(grad_out, |x, g| g * gelu_grad(x)),
        Activation::Relu => input.zip_map(grad_out, |x, g| if x > T::zero() { g } else { T::zero() }),
        Activation::Sigmoid => input.zip_map(grad_out, |x, g| {
            let s = sigmoid(x);
            g * s * (T::one() - s)
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(relu(-1.0f64), 0.0);
    }

    #[test]
    fn gelu_at_three() {
        // 0.5·3·(1 + tanh(√(2/π)·(3 + 0.044715·27)))
        let u = (2.0f64 / std::f64::consts::PI).sqrt() * (3.0 + 0.044715 * 27.0);
        let expected = 1.5 * (1.0 + u.tanh());
        assert!((expected - 2.9964).abs() < 5e-5);
        assert!((gelu(3.0f64) - expected).abs() < 1e-15);
    }

    #[test]
    fn gelu_monotone_on_positive_axis() {
        let mut prev = gelu(0.0f64);
        for i in 1..2000 {
            let v = gelu(i as f64 * 0.005);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        assert_eq!(sigmoid(-1000.0f32), 0.0);
        assert_eq!(sigmoid(1000.0f32), 1.0);
    }
}
