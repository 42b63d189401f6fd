//! AdamW with decoupled weight decay.

use crate::error::{DsuError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub name: String,
    pub m: Tensor<f32>,
    pub v: Tensor<f32>,
}

/// First and second moments for every trainable tensor, in registry order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimState {
    pub step: u64,
    pub moments: Vec<Moments>,
}

impl OptimState {
    /// Zeroed buffers shaped like the trainable entries of `params`.
    pub fn for_params(params: &[(String, &Tensor<f32>)]) -> Self {
        let moments = params
            .iter()
            .filter(|(_, t)| t.trainable)
            .map(|(n, t)| Moments { name: n.clone(), m: Tensor::zeros(t.shape()), v: Tensor::zeros(t.shape()) })
            .collect();
        Self { step: 0, moments }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.moments.iter().map(|m| m.name.as_str())
    }
}

impl AdamW {
    /// One update over the trainable tensors of `params`. Gradients are multiplied by
    /// `grad_scale` first (batch averaging); a missing gradient buffer counts as zero.
    pub fn step(&self, params: &mut [(String, &mut Tensor<f32>)], state: &mut OptimState, grad_scale: f64) -> Result<()> {
        let trainable: Vec<&mut (String, &mut Tensor<f32>)> = params.iter_mut().filter(|(_, t)| t.trainable).collect();
        if trainable.len() != state.moments.len() {
            return Err(DsuError::Config(format!(
                "optimizer state has {} entries for {} trainable tensors",
                state.moments.len(),
                trainable.len()
            )));
        }
        for ((name, t), mo) in trainable.iter().map(|p| (&p.0, &p.1)).zip(&state.moments) {
            if *name != mo.name || t.shape() != mo.m.shape() {
                return Err(DsuError::Config(format!("optimizer entry {} does not match parameter {name}", mo.name)));
            }
            if let Some(g) = &t.grad {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(DsuError::NonFinite(format!("gradient of {name} at index {i}")));
                }
            }
        }
        state.step += 1;
        let t_step = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t_step);
        let bc2 = 1.0 - self.beta2.powi(t_step);
        for (p, mo) in trainable.into_iter().zip(&mut state.moments) {
            let t = &mut *p.1;
            let grad = t.grad.take();
            let (m, v) = (mo.m.data_mut(), mo.v.data_mut());
            for (i, theta) in t.data_mut().iter_mut().enumerate() {
                let g = grad.as_ref().map_or(0.0, |g| g[i] as f64 * grad_scale);
                let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let (mh, vh) = (mi / bc1, vi / bc2);
                let th = *theta as f64;
                *theta = (th - self.lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * th)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap().into_trainable()
    }

    fn run(opt: AdamW, t: &mut Tensor<f32>, grad: Option<Vec<f32>>, steps: usize) -> OptimState {
        let mut state = OptimState::for_params(&[("p".into(), &*t)]);
        for _ in 0..steps {
            t.grad = grad.clone();
            opt.step(&mut [("p".into(), &mut *t)], &mut state, 1.0).unwrap();
        }
        state
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut t = param(&[0.5, -2.0, 3.0]);
        run(AdamW { weight_decay: 0.0, ..Default::default() }, &mut t, None, 5);
        assert_eq!(t.data(), &[0.5, -2.0, 3.0]);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks_geometrically() {
        let opt = AdamW { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let mut t = param(&[1.0, -4.0]);
        run(opt, &mut t, Some(vec![0.0, 0.0]), 3);
        let f = (1.0f64 - 0.1 * 0.5).powi(3);
        assert!((t.data()[0] as f64 - f).abs() < 1e-6);
        assert!((t.data()[1] as f64 + 4.0 * f).abs() < 1e-6);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let opt = AdamW { lr: 0.01, weight_decay: 0.0, ..Default::default() };
        let mut t = param(&[1.0, 1.0, 1.0]);
        let state = run(opt, &mut t, Some(vec![3.0, -0.2, 1e-3]), 1);
        for (x, s) in t.data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((*x as f64 - (1.0 + 0.01 * s)).abs() < 1e-5, "{x}");
        }
        assert_eq!(state.step, 1);
        assert!((state.moments[0].m.data()[0] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn frozen_tensors_are_skipped_and_nan_names_the_tensor() {
        let frozen = Tensor::from_vec(&[2], vec![1.0f32, 2.0]).unwrap();
        let mut live = param(&[0.0]);
        let mut state = OptimState::for_params(&[("frozen".into(), &frozen), ("live".into(), &live)]);
        assert_eq!(state.names().collect::<Vec<_>>(), ["live"]);
        live.grad = Some(vec![f32::NAN]);
        let mut frozen = frozen;
        let err = AdamW::default()
            .step(&mut [("frozen".into(), &mut frozen), ("live".into(), &mut live)], &mut state, 1.0)
            .unwrap_err();
        assert!(err.to_string().contains("live"), "{err}");
        assert_eq!(frozen.data(), &[1.0, 2.0]);
    }
}
