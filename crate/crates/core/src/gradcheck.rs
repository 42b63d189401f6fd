//! Finite-difference verification of hand-written backward passes.
//!
//! Everything runs in `f64`. The scalar objective is a fixed random positive
//! weighting of all outputs, `L = Σ r·y` with `r ∈ [0.5, 1.5]`; plain summation
//! would give identically zero gradients for normalised outputs such as softmax.
//! The base step is `1e-3·max(1, |x|)`, refined when it straddles a kink.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DsuError, Result};
use crate::tensor::Tensor;

/// A block whose analytic gradients can be checked.
pub trait Differentiable {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>;

    /// Runs forward then backward with the given upstream gradients. Parameter
    /// gradients accumulate into the parameters' buffers; input gradients are returned.
    fn forward_backward(&mut self, inputs: &[Tensor<f64>], grad_outputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>;

    /// All parameters, frozen ones included.
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)>;
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Cap on coordinates probed per tensor; `None` probes every element.
    pub max_coords_per_tensor: Option<usize>,
    pub check_inputs: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { max_coords_per_tensor: None, check_inputs: true }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: String,
    pub coords_checked: usize,
}

/// Uniform random tensors in `[-1, 1)` of the given shapes.
pub fn random_inputs(shapes: &[&[usize]], seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes.iter().map(|s| Tensor::from_fn(s, |_| rng.gen_range(-1.0..1.0))).collect()
}

/// Relative error with a unit floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn objective(outputs: &[Tensor<f64>], weights: &[Tensor<f64>]) -> f64 {
    outputs
        .iter()
        .zip(weights)
        .map(|(o, r)| o.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

fn coords(len: usize, cap: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match cap {
        Some(k) if k < len => {
            let mut v = sample(rng, len, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

fn step(x: f64) -> f64 {
    1e-3 * x.abs().max(1.0)
}

/// Error level below which the base step is accepted without refinement.
const REFINE_ABOVE: f64 = 1e-7;

/// Central difference at the base step, refined by factors of ten when the
/// match is poor. A wrong analytic gradient disagrees at every step; a
/// piecewise-linear kink straddled by the base step does not.
fn probe(analytic: f64, x: f64, mut eval: impl FnMut(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let mut h = step(x);
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..4 {
        let n = (eval(x + h)? - eval(x - h)?) / (2.0 * h);
        let e = relative_error(analytic, n);
        if e < best.0 {
            best = (e, n);
        }
        if best.0 <= REFINE_ABOVE {
            break;
        }
        h /= 10.0;
    }
    Ok((analytic, best.1))
}

/// Compares analytic gradients of `block` against central differences.
pub fn grad_check(
    block: &mut dyn Differentiable,
    inputs: &[Tensor<f64>],
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let outputs = block.forward(inputs)?;
    for (k, o) in outputs.iter().enumerate() {
        if let Some(i) = o.data().iter().position(|v| !v.is_finite()) {
            return Err(DsuError::GradCheck(format!("non-finite forward output {k} at index {i}")));
        }
    }
    let weights: Vec<Tensor<f64>> =
        outputs.iter().map(|o| Tensor::from_fn(o.shape(), |_| rng.gen_range(0.5..1.5))).collect();

    for (_, p) in block.params_mut() {
        p.zero_grad();
    }
    let input_grads = block.forward_backward(inputs, &weights)?;

    let mut report = GradCheckReport { max_rel_err: 0.0, worst: String::new(), coords_checked: 0 };
    let record = |name: &str, idx: usize, a: f64, n: f64, report: &mut GradCheckReport| {
        let e = relative_error(a, n);
        report.coords_checked += 1;
        if e > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = e.max(report.max_rel_err);
            report.worst = format!("{name}[{idx}] analytic {a:.6e} numeric {n:.6e}");
        }
    };

    // Parameter gradients, snapshotting analytic values before probing.
    let mut plan = Vec::new();
    for (slot, (name, p)) in block.params_mut().into_iter().enumerate() {
        if !p.trainable {
            if p.grad.is_some() {
                return Err(DsuError::GradCheck(format!("frozen tensor {name} received a gradient")));
            }
            continue;
        }
        let grad = p.grad.clone().unwrap_or_else(|| vec![0.0; p.len()]);
        plan.push((slot, name, coords(p.len(), opts.max_coords_per_tensor, &mut rng), grad));
    }
    for (slot, name, idxs, grad) in &plan {
        for &i in idxs {
            let x = block.params_mut().swap_remove(*slot).1.data()[i];
            let (a, n) = probe(grad[i], x, |v| {
                block.params_mut().swap_remove(*slot).1.data_mut()[i] = v;
                Ok(objective(&block.forward(inputs)?, &weights))
            })?;
            block.params_mut().swap_remove(*slot).1.data_mut()[i] = x;
            record(name, i, a, n, &mut report);
        }
    }

    if opts.check_inputs {
        for (j, input) in inputs.iter().enumerate() {
            let mut probe_in = inputs.to_vec();
            for i in coords(input.len(), opts.max_coords_per_tensor, &mut rng) {
                let x = input.data()[i];
                let (a, n) = probe(input_grads[j].data()[i], x, |v| {
                    probe_in[j].data_mut()[i] = v;
                    Ok(objective(&block.forward(&probe_in)?, &weights))
                })?;
                probe_in[j].data_mut()[i] = x;
                record(&format!("input{j}"), i, a, n, &mut report);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{linear, linear_backward};

    struct Affine {
        w: Tensor<f64>,
        b: Tensor<f64>,
        frozen: Tensor<f64>,
    }

    impl Differentiable for Affine {
        fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
            Ok(vec![linear(&inputs[0], &self.w, Some(&self.b))?])
        }

        fn forward_backward(&mut self, inputs: &[Tensor<f64>], g: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
            let grads = linear_backward(&inputs[0], &self.w, true, &g[0])?;
            self.w.accumulate_grad(&grads.weight);
            self.b.accumulate_grad(grads.bias.as_deref().unwrap());
            self.frozen.accumulate_grad(&[1.0]);
            Ok(vec![grads.input])
        }

        fn params_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
            vec![("w".into(), &mut self.w), ("b".into(), &mut self.b), ("frozen".into(), &mut self.frozen)]
        }
    }

    #[test]
    fn linear_layer_passes() {
        for seed in 0..5 {
            let mut inp = random_inputs(&[&[3, 4], &[4, 2], &[2]], seed);
            let b = inp.pop().unwrap().into_trainable();
            let w = inp.pop().unwrap().into_trainable();
            let mut block = Affine { w, b, frozen: Tensor::zeros(&[1]) };
            let report = grad_check(&mut block, &inp, seed, &GradCheckOptions::default()).unwrap();
            assert!(report.max_rel_err < 1e-5, "{report:?}");
            assert_eq!(report.coords_checked, 8 + 2 + 12);
            assert!(block.frozen.grad.is_none());
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        struct Wrong;
        impl Differentiable for Wrong {
            fn forward(&self, x: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
                Ok(vec![x[0].map(|v| v * v)])
            }
            fn forward_backward(&mut self, x: &[Tensor<f64>], g: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
                Ok(vec![x[0].zip_map(&g[0], |v, g| v * g)])
            }
            fn params_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
                vec![]
            }
        }
        let inputs = vec![Tensor::full(&[3], 2.0)];
        let r = grad_check(&mut Wrong, &inputs, 0, &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_err > 0.4);
    }

    #[test]
    fn non_finite_output_is_reported() {
        struct Blowup;
        impl Differentiable for Blowup {
            fn forward(&self, x: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
                Ok(vec![x[0].map(|v| 1.0 / (v - v))])
            }
            fn forward_backward(&mut self, x: &[Tensor<f64>], _: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
                Ok(vec![x[0].clone()])
            }
            fn params_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
                vec![]
            }
        }
        let err = grad_check(&mut Blowup, &[Tensor::full(&[2], 1.0)], 0, &GradCheckOptions::default()).unwrap_err();
        assert!(err.to_string().contains("index 0"));
    }
}
