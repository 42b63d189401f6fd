//! Self-checks behind `dsu verify`: gradients, wavelet identities and metric oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{haar_dwt2, haar_idwt2, Sff, Wtd};
use crate::checks::{block_cases, op_cases, CheckCase, EndToEnd};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::gradcheck::{grad_check, random_inputs, GradCheckOptions};
use crate::image::MaskImage;
use crate::metrics::{
    e_measure, e_measure_eps, f_measure, mae, s_measure, s_measure_eps, ThresholdPolicy, DEFAULT_ALPHA, DEFAULT_BETA2, EPS,
};
use crate::ops::bilinear_resize;
use crate::tensor::Tensor;

pub const BLOCK_TOL: f64 = 1e-4;
pub const E2E_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub suite: &'static str,
    pub name: String,
    /// Worst observed error.
    pub value: f64,
    pub tolerance: f64,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.value < self.tolerance || (self.value == 0.0 && self.tolerance == 0.0)
    }
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{tag} [{}] {}: {:.3e} (tol {:.0e})", self.suite, self.name, self.value, self.tolerance)
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seeds: u64,
    pub e2e_seeds: u64,
    pub e2e_coords: usize,
    pub e2e_config: ModelConfig,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seeds: 5, e2e_seeds: 5, e2e_coords: 2, e2e_config: ModelConfig::default() }
    }
}

fn worst_over_seeds(cases: fn(u64) -> Vec<CheckCase>, seeds: u64) -> Result<Vec<CheckLine>> {
    let mut lines: Vec<CheckLine> = Vec::new();
    for seed in 0..seeds {
        for mut case in cases(seed) {
            let shapes: Vec<&[usize]> = case.input_shapes.iter().map(Vec::as_slice).collect();
            let inputs = random_inputs(&shapes, 100 + seed);
            let r = grad_check(case.block.as_mut(), &inputs, seed, &GradCheckOptions::default())?;
            match lines.iter_mut().find(|l| l.name == case.name) {
                Some(l) => l.value = l.value.max(r.max_rel_err),
                None => lines.push(CheckLine { suite: "gradient", name: case.name.to_string(), value: r.max_rel_err, tolerance: BLOCK_TOL }),
            }
        }
    }
    Ok(lines)
}

/// Per-primitive and per-block worst relative error over `seeds` seeds.
pub fn gradient_suite(seeds: u64) -> Result<Vec<CheckLine>> {
    let mut out = worst_over_seeds(op_cases, seeds)?;
    out.extend(worst_over_seeds(block_cases, seeds)?);
    Ok(out)
}

/// Whole-network check on sampled coordinates of every parameter and input tensor.
pub fn end_to_end_check(config: &ModelConfig, seed: u64, coords: usize) -> Result<CheckLine> {
    let inputs = EndToEnd::inputs(config, seed)?;
    let mut case = EndToEnd::new(config, seed)?;
    let opts = GradCheckOptions { max_coords_per_tensor: Some(coords), check_inputs: true };
    let r = grad_check(&mut case, &inputs, seed, &opts)?;
    Ok(CheckLine {
        suite: "gradient",
        name: format!("end-to-end {} seed {seed} ({} coords, worst {})", config.variant, r.coords_checked, r.worst),
        value: r.max_rel_err,
        tolerance: E2E_TOL,
    })
}

pub fn wavelet_suite(seeds: u64) -> Result<Vec<CheckLine>> {
    let (mut rec, mut ident) = (0.0f64, 0.0f64);
    for seed in 0..seeds {
        let x = &random_inputs(&[&[3, 8, 8]], seed)[0];
        rec = rec.max(haar_idwt2(&haar_dwt2(x)?)?.max_abs_diff(x));
        for (h, w, oh, ow) in [(9, 9, 3, 3), (37, 37, 11, 11), (8, 6, 5, 4)] {
            let x: Tensor<f32> = random_inputs(&[&[4, h, w]], seed)[0].cast();
            let (y, _) = Wtd::<f32>::identity(4).forward(&x, oh, ow)?;
            ident = ident.max(y.max_abs_diff(&bilinear_resize(&x, oh, ow, true)));
        }
    }
    Ok(vec![
        CheckLine { suite: "wavelet", name: "idwt2(dwt2(x)) = x on 3×8×8".into(), value: rec, tolerance: 1e-6 },
        CheckLine { suite: "wavelet", name: "identity WTD = bilinear resize".into(), value: ident, tolerance: 1e-5 },
    ])
}

fn random_binary(rng: &mut ChaCha8Rng, w: usize, h: usize) -> MaskImage {
    let p = rng.gen_range(0.1..0.9);
    MaskImage { width: w, height: h, data: (0..w * h).map(|_| if rng.gen_bool(p) { 1.0 } else { 0.0 }).collect() }
}

/// Foreground at rows 0–1, columns 2–3 of a 4×4 grid.
fn fixture_gt() -> MaskImage {
    let mut d = vec![0.0; 16];
    for i in [2, 3, 6, 7] {
        d[i] = 1.0;
    }
    MaskImage { width: 4, height: 4, data: d }
}

/// Hand-evaluated S for the continuous fixture prediction.
fn fixture_s() -> (MaskImage, f64) {
    let mut p = fixture_gt();
    p.data[7] = 0.5;
    let s_o = 0.25 * 1.75 / (2.015625 + EPS) + 0.75 * 2.0 / (2.0 + EPS);
    let q1 = 0.21875 / (13447.0 / 57344.0 + EPS);
    let s_r = 0.5 * q1 + 0.5;
    (p, 0.5 * s_o + 0.5 * s_r)
}

/// Hand-evaluated E for the binary fixture prediction: tp 3, fp 1, fn 1, tn 11.
fn fixture_e() -> (MaskImage, f64) {
    let mut p = fixture_gt();
    p.data[7] = 0.0;
    p.data[15] = 1.0;
    let enh = |num: f64, den: f64| (num / (den + EPS) + 1.0).powi(2) / 4.0;
    let e = (3.0 * enh(1.125, 1.125) + 2.0 * enh(-0.375, 0.625) + 11.0 * enh(0.125, 0.125)) / 16.0;
    (p, e)
}

fn brute_mae(p: &MaskImage, g: &MaskImage) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += (p.data[i] - g.data[i]).abs();
    }
    s / p.len() as f64
}

fn brute_f(p: &MaskImage, g: &MaskImage, t: f64, beta2: f64) -> f64 {
    let (mut tp, mut pp, mut gp) = (0.0, 0.0, 0.0);
    for i in 0..p.len() {
        let hit = p.data[i] >= t && p.data[i] > 0.0;
        let fg = g.data[i] > 0.5;
        tp += (hit && fg) as u8 as f64;
        pp += hit as u8 as f64;
        gp += fg as u8 as f64;
    }
    if tp == 0.0 {
        return 0.0;
    }
    let (prec, rec) = (tp / pp, tp / gp);
    (1.0 + beta2) * prec * rec / (beta2 * prec + rec)
}

pub fn metric_suite(masks: usize, seed: u64) -> Result<Vec<CheckLine>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut m_self, mut s_self, mut e_self, mut f_self) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut mae_err, mut f_err) = (0.0f64, 0.0f64);
    for _ in 0..masks {
        let g = random_binary(&mut rng, 24, 20);
        m_self = m_self.max(mae(&g, &g)?);
        s_self = s_self.max((s_measure_eps(&g, &g, DEFAULT_ALPHA, 0.0)? - 1.0).abs());
        e_self = e_self.max((e_measure_eps(&g, &g, ThresholdPolicy::Adaptive, 0.0)? - 1.0).abs());
        f_self = f_self.max((f_measure(&g, &g, DEFAULT_BETA2, ThresholdPolicy::Adaptive)?.unwrap_or(0.0) - 1.0).abs());
        let p = MaskImage { data: (0..g.len()).map(|_| rng.gen_range(0.0..1.0)).collect(), ..g.clone() };
        mae_err = mae_err.max((mae(&p, &g)? - brute_mae(&p, &g)).abs());
        let t = (2.0 * p.mean()).min(1.0);
        let fa = f_measure(&p, &g, DEFAULT_BETA2, ThresholdPolicy::Adaptive)?.unwrap_or(f64::NAN);
        f_err = f_err.max((fa - brute_f(&p, &g, t, DEFAULT_BETA2)).abs());
        let fm = f_measure(&p, &g, DEFAULT_BETA2, ThresholdPolicy::MeanThresholds)?.unwrap_or(f64::NAN);
        let oracle = (1..=255).map(|k| brute_f(&p, &g, k as f64 / 255.0, DEFAULT_BETA2)).sum::<f64>() / 255.0;
        f_err = f_err.max((fm - oracle).abs());
    }
    let (ps, s_fix) = fixture_s();
    let (pe, e_fix) = fixture_e();
    let gt = fixture_gt();
    let s_got = s_measure(&ps, &gt, DEFAULT_ALPHA)?;
    let e_got = e_measure(&pe, &gt, ThresholdPolicy::Adaptive)?;
    let e_mean = e_measure(&pe, &gt, ThresholdPolicy::MeanThresholds)?;
    let mut sff_err = 0.0f64;
    for s in 0..5 {
        let mut r = ChaCha8Rng::seed_from_u64(s);
        let sff = Sff::<f32>::new(6, &mut r);
        let ins = random_inputs(&[&[6, 8, 8], &[6, 4, 4]], s);
        let (_, cache) = sff.forward(&ins[0].cast(), &ins[1].cast())?;
        let (_, h, w) = cache.weights.chw();
        let wd = cache.weights.data();
        for i in 0..h * w {
            sff_err = sff_err.max((wd[i] as f64 + wd[h * w + i] as f64 - 1.0).abs());
        }
    }
    let line = |name: &str, value: f64, tolerance: f64| CheckLine { suite: "metric", name: name.into(), value, tolerance };
    Ok(vec![
        line("M(G,G) = 0", m_self, 1e-15),
        line("S(G,G) = 1 (ε = 0)", s_self, 1e-12),
        line("E(G,G) = 1 (ε = 0)", e_self, 1e-12),
        line("F(G,G) = 1", f_self, 1e-12),
        line("MAE vs brute force", mae_err, 1e-12),
        line("F vs brute force", f_err, 1e-12),
        line("S 4×4 fixture", (s_got - s_fix).abs(), 1e-10),
        line("E 4×4 fixture (adaptive)", (e_got - e_fix).abs(), 1e-10),
        line("E 4×4 fixture (sweep)", (e_mean - e_fix).abs(), 1e-10),
        line("SFF branch weights sum to 1", sff_err, 1e-6),
    ])
}

/// Every suite; the end-to-end checks dominate the runtime.
pub fn run_all(opts: &VerifyOptions, mut report: impl FnMut(&CheckLine)) -> Result<Vec<CheckLine>> {
    let mut all = Vec::new();
    let mut push = |l: CheckLine, all: &mut Vec<CheckLine>| {
        report(&l);
        all.push(l);
    };
    for l in wavelet_suite(opts.seeds)?.into_iter().chain(metric_suite(20, 7)?).chain(gradient_suite(opts.seeds)?) {
        push(l, &mut all);
    }
    for seed in 0..opts.e2e_seeds {
        let l = end_to_end_check(&opts.e2e_config, seed, opts.e2e_coords)?;
        push(l, &mut all);
    }
    Ok(all)
}
