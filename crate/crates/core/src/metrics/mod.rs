//! MAE, F-measure, E-measure and S-measure for binary ground truth.

mod report;

pub use report::{evaluate_dataset, evaluate_pairs, ImageMetrics, MetricMeans, MetricReport};

use crate::error::{DsuError, Result};
use crate::image::MaskImage;

pub const EPS: f64 = 1e-8;
pub const DEFAULT_BETA2: f64 = 0.3;
pub const DEFAULT_ALPHA: f64 = 0.5;
/// Thresholds `k/255`, `k = 1..=255`, for the mean-over-thresholds policy.
pub const SWEEP_STEPS: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdPolicy {
    /// Single threshold `min(2·mean(pred), 1)`.
    Adaptive,
    /// Average over the uniform threshold sweep.
    MeanThresholds,
}

fn same_dims(pred: &MaskImage, gt: &MaskImage) -> Result<()> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(DsuError::Shape(format!(
            "prediction {}×{} vs ground truth {}×{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    Ok(())
}

pub fn mae(pred: &MaskImage, gt: &MaskImage) -> Result<f64> {
    same_dims(pred, gt)?;
    Ok(pred.data.iter().zip(&gt.data).map(|(c, g)| (c - g).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn adaptive_threshold(pred: &MaskImage) -> f64 {
    (2.0 * pred.mean()).min(1.0)
}

/// Confusion counts of `pred ≥ t` against a binary `gt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// Zero-valued pixels are never positive, so a zero adaptive threshold
    /// on an all-zero prediction selects nothing.
    pub fn at(pred: &MaskImage, gt: &MaskImage, t: f64) -> Self {
        let mut c = Confusion::default();
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            match (p >= t && p > 0.0, g > 0.5) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `None` when the ground truth has no foreground.
    pub fn f_beta(&self, beta2: f64) -> Option<f64> {
        if self.tp + self.fn_ == 0 {
            return None;
        }
        if self.tp == 0 {
            return Some(0.0);
        }
        let p = self.tp as f64 / (self.tp + self.fp) as f64;
        let r = self.tp as f64 / (self.tp + self.fn_) as f64;
        Some((1.0 + beta2) * p * r / (beta2 * p + r))
    }

    /// Enhanced-alignment score of the binarised prediction.
    pub fn e_phi(&self) -> f64 {
        self.e_phi_eps(EPS)
    }

    /// [`Confusion::e_phi`] with an explicit regulariser.
    pub fn e_phi_eps(&self, eps: f64) -> f64 {
        let n = self.total() as f64;
        let fg = self.tp + self.fn_;
        let pos = (self.tp + self.fp) as f64 / n;
        if fg == 0 {
            return 1.0 - pos;
        }
        if fg == self.total() {
            return pos;
        }
        let mu_g = fg as f64 / n;
        let enhanced = |c: f64, g: f64| {
            let (pc, pg) = (c - pos, g - mu_g);
            let xi = 2.0 * pc * pg / (pc * pc + pg * pg + eps);
            (xi + 1.0).powi(2) / 4.0
        };
        (self.tp as f64 * enhanced(1.0, 1.0)
            + self.fp as f64 * enhanced(1.0, 0.0)
            + self.fn_ as f64 * enhanced(0.0, 1.0)
            + self.tn as f64 * enhanced(0.0, 0.0))
            / n
    }
}

fn thresholds(pred: &MaskImage, policy: ThresholdPolicy) -> Vec<f64> {
    match policy {
        ThresholdPolicy::Adaptive => vec![adaptive_threshold(pred)],
        ThresholdPolicy::MeanThresholds => (1..=SWEEP_STEPS).map(|k| k as f64 / SWEEP_STEPS as f64).collect(),
    }
}

/// Confusion counts at every threshold of the policy.
fn sweep(pred: &MaskImage, gt: &MaskImage, policy: ThresholdPolicy) -> Vec<Confusion> {
    let ts = thresholds(pred, policy);
    if ts.len() == 1 {
        return vec![Confusion::at(pred, gt, ts[0])];
    }
    let mut fg: Vec<f64> = pred.data.iter().zip(&gt.data).filter(|(_, &g)| g > 0.5).map(|(&p, _)| p).collect();
    let mut bg: Vec<f64> = pred.data.iter().zip(&gt.data).filter(|(_, &g)| g <= 0.5).map(|(&p, _)| p).collect();
    fg.sort_by(f64::total_cmp);
    bg.sort_by(f64::total_cmp);
    // count of values ≥ t in a sorted slice
    let above = |v: &[f64], t: f64| v.len() - v.partition_point(|&x| x < t);
    ts.iter()
        .map(|&t| {
            let tp = above(&fg, t);
            let fp = above(&bg, t);
            Confusion { tp, fp, fn_: fg.len() - tp, tn: bg.len() - fp }
        })
        .collect()
}

/// `None` when the ground truth has no foreground pixel.
pub fn f_measure(pred: &MaskImage, gt: &MaskImage, beta2: f64, policy: ThresholdPolicy) -> Result<Option<f64>> {
    same_dims(pred, gt)?;
    let scores: Option<Vec<f64>> = sweep(pred, gt, policy).iter().map(|c| c.f_beta(beta2)).collect();
    Ok(scores.map(|s| s.iter().sum::<f64>() / s.len() as f64))
}

pub fn e_measure(pred: &MaskImage, gt: &MaskImage, policy: ThresholdPolicy) -> Result<f64> {
    e_measure_eps(pred, gt, policy, EPS)
}

/// [`e_measure`] with an explicit regulariser; `eps = 0` gives the unregularised value.
pub fn e_measure_eps(pred: &MaskImage, gt: &MaskImage, policy: ThresholdPolicy, eps: f64) -> Result<f64> {
    same_dims(pred, gt)?;
    let s = sweep(pred, gt, policy);
    Ok(s.iter().map(|c| c.e_phi_eps(eps)).sum::<f64>() / s.len() as f64)
}

fn object_score(values: impl Iterator<Item = f64> + Clone, eps: f64) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let std = if n > 1 { (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    2.0 * mean / (mean * mean + 1.0 + std + eps)
}

fn s_object(pred: &MaskImage, gt: &MaskImage, eps: f64) -> f64 {
    let mu = gt.mean();
    let pairs = pred.data.iter().zip(&gt.data);
    let fg = object_score(pairs.clone().filter(|(_, &g)| g > 0.5).map(|(&p, _)| p), eps);
    let bg = object_score(pairs.filter(|(_, &g)| g <= 0.5).map(|(&p, _)| 1.0 - p), eps);
    mu * fg + (1.0 - mu) * bg
}

/// Structural similarity of one rectangular block.
fn block_ssim(pred: &MaskImage, gt: &MaskImage, rows: (usize, usize), cols: (usize, usize), eps: f64) -> f64 {
    let n = (rows.1 - rows.0) * (cols.1 - cols.0);
    let cells = || (rows.0..rows.1).flat_map(move |y| (cols.0..cols.1).map(move |x| (y, x)));
    let x = cells().map(|(y, c)| pred.at(y, c)).sum::<f64>() / n as f64;
    let yy = cells().map(|(y, c)| gt.at(y, c)).sum::<f64>() / n as f64;
    let d = (n.max(2) - 1) as f64;
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (r, c) in cells() {
        let (a, b) = (pred.at(r, c) - x, gt.at(r, c) - yy);
        sx += a * a;
        sy += b * b;
        sxy += a * b;
    }
    let (sx, sy, sxy) = (sx / d, sy / d, sxy / d);
    let alpha = 4.0 * x * yy * sxy;
    let beta = (x * x + yy * yy) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + eps)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Split point `(column, row)` one past the rounded foreground centroid.
pub fn centroid_split(gt: &MaskImage) -> (usize, usize) {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in 0..gt.height {
        for x in 0..gt.width {
            if gt.at(y, x) > 0.5 {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return ((gt.width as f64 / 2.0).round() as usize, (gt.height as f64 / 2.0).round() as usize);
    }
    ((sx / n as f64).round() as usize + 1, (sy / n as f64).round() as usize + 1)
}

fn s_region(pred: &MaskImage, gt: &MaskImage, eps: f64) -> f64 {
    let (cx, cy) = centroid_split(gt);
    let (w, h) = (gt.width, gt.height);
    let area = (w * h) as f64;
    let mut total = 0.0;
    for rows in [(0, cy), (cy, h)] {
        for cols in [(0, cx), (cx, w)] {
            let n = (rows.1 - rows.0) * (cols.1 - cols.0);
            if n > 0 {
                total += n as f64 / area * block_ssim(pred, gt, rows, cols, eps);
            }
        }
    }
    total
}

pub fn s_measure(pred: &MaskImage, gt: &MaskImage, alpha: f64) -> Result<f64> {
    s_measure_eps(pred, gt, alpha, EPS)
}

/// [`s_measure`] with an explicit regulariser.
pub fn s_measure_eps(pred: &MaskImage, gt: &MaskImage, alpha: f64, eps: f64) -> Result<f64> {
    same_dims(pred, gt)?;
    let mu = gt.mean();
    let s = if mu == 0.0 {
        1.0 - pred.mean()
    } else if mu == 1.0 {
        pred.mean()
    } else {
        alpha * s_object(pred, gt, eps) + (1.0 - alpha) * s_region(pred, gt, eps)
    };
    Ok(s.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(w: usize, v: &[f64]) -> MaskImage {
        MaskImage::new(w, v.len() / w, v.to_vec()).unwrap()
    }

    #[test]
    fn mae_examples() {
        let c = m(2, &[1.0, 0.0, 0.5, 0.25]);
        let g = m(2, &[1.0, 0.0, 0.0, 0.0]);
        assert!((mae(&c, &g).unwrap() - 0.1875).abs() < 1e-15);
        assert_eq!(mae(&g, &g).unwrap(), 0.0);
        assert_eq!(mae(&g, &g.binarize(0.5).map_complement()).unwrap(), 1.0);
        assert!(mae(&c, &m(4, &[0.0; 4])).is_err());
    }

    impl MaskImage {
        fn map_complement(&self) -> Self {
            Self { data: self.data.iter().map(|v| 1.0 - v).collect(), ..*self }
        }
    }

    #[test]
    fn f_measure_algebra() {
        // P = 0.8, R = 0.5: 5 predicted, 4 correct, 8 foreground
        let c = Confusion { tp: 4, fp: 1, fn_: 4, tn: 10 };
        assert!((c.f_beta(0.3).unwrap() - 0.52 / 0.74).abs() < 1e-12);
        let eq = Confusion { tp: 3, fp: 1, fn_: 1, tn: 5 };
        for b in [0.1, 0.3, 1.0, 4.0] {
            assert!((eq.f_beta(b).unwrap() - 0.75).abs() < 1e-12);
        }
        assert_eq!(Confusion { tp: 0, fp: 3, fn_: 2, tn: 1 }.f_beta(0.3), Some(0.0));
        assert_eq!(Confusion { tp: 0, fp: 3, fn_: 0, tn: 1 }.f_beta(0.3), None);
    }

    #[test]
    fn empty_gt_f_is_undefined() {
        let g = m(2, &[0.0; 4]);
        assert_eq!(f_measure(&g, &g, 0.3, ThresholdPolicy::Adaptive).unwrap(), None);
        assert_eq!(s_measure(&g, &g, 0.5).unwrap(), 1.0);
        assert_eq!(e_measure(&g, &g, ThresholdPolicy::Adaptive).unwrap(), 1.0);
    }

    #[test]
    fn constant_half_baseline() {
        let g = m(4, &[0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let c = MaskImage::filled(4, 4, 0.5);
        assert_eq!(mae(&c, &g).unwrap(), 0.5);
        assert_eq!(f_measure(&c, &g, 0.3, ThresholdPolicy::Adaptive).unwrap(), Some(0.0));
        assert!((e_measure(&c, &g, ThresholdPolicy::Adaptive).unwrap() - 0.25).abs() < 1e-12);
        assert!((s_object(&c, &g, EPS) - 0.8).abs() < 1e-7);
    }

    #[test]
    fn sweep_matches_direct_counts() {
        let p = m(3, &[0.1, 0.5, 0.9, 0.3, 0.7, 1.0, 0.0, 0.2, 0.6]);
        let g = m(3, &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let s = sweep(&p, &g, ThresholdPolicy::MeanThresholds);
        assert_eq!(s.len(), 255);
        for (k, c) in s.iter().enumerate() {
            assert_eq!(*c, Confusion::at(&p, &g, (k + 1) as f64 / 255.0));
        }
    }
}
