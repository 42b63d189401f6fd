use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{e_measure, f_measure, mae, s_measure, ThresholdPolicy, DEFAULT_ALPHA, DEFAULT_BETA2};
use crate::error::{DsuError, Result};
use crate::image::{read_gt, read_mask, MaskImage};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub image: String,
    pub s: f64,
    /// `None` when the ground truth is empty.
    pub f_adaptive: Option<f64>,
    pub f_mean: Option<f64>,
    pub e_adaptive: f64,
    pub e_mean: f64,
    pub mae: f64,
}

impl ImageMetrics {
    pub fn compute(image: &str, pred: &MaskImage, gt: &MaskImage, beta2: f64) -> Result<Self> {
        Ok(Self {
            image: image.to_owned(),
            s: s_measure(pred, gt, DEFAULT_ALPHA)?,
            f_adaptive: f_measure(pred, gt, beta2, ThresholdPolicy::Adaptive)?,
            f_mean: f_measure(pred, gt, beta2, ThresholdPolicy::MeanThresholds)?,
            e_adaptive: e_measure(pred, gt, ThresholdPolicy::Adaptive)?,
            e_mean: e_measure(pred, gt, ThresholdPolicy::MeanThresholds)?,
            mae: mae(pred, gt)?,
        })
    }
}

/// Dataset means. F means skip images whose F is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricMeans {
    pub s: f64,
    pub f_adaptive: f64,
    pub f_mean: f64,
    pub e_adaptive: f64,
    pub e_mean: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
    pub means: MetricMeans,
    /// Images whose F-measure is undefined (empty ground truth).
    pub f_undefined: usize,
    /// Stems present on only one side.
    pub missing: Vec<String>,
    /// Per-file failures: stem and message.
    pub failures: Vec<(String, String)>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl MetricReport {
    pub fn from_images(images: Vec<ImageMetrics>) -> Self {
        let means = MetricMeans {
            s: mean(images.iter().map(|m| m.s)),
            f_adaptive: mean(images.iter().filter_map(|m| m.f_adaptive)),
            f_mean: mean(images.iter().filter_map(|m| m.f_mean)),
            e_adaptive: mean(images.iter().map(|m| m.e_adaptive)),
            e_mean: mean(images.iter().map(|m| m.e_mean)),
            mae: mean(images.iter().map(|m| m.mae)),
        };
        let f_undefined = images.iter().filter(|m| m.f_adaptive.is_none()).count();
        Self { images, means, f_undefined, missing: Vec::new(), failures: Vec::new() }
    }

    pub fn is_clean(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let num = |v: f64| if v.is_finite() { format!("{v:.6}") } else { "NA".into() };
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".into(), num);
        let mut out = String::from("image,S,Fadp,Fmean,Eadp,Emean,MAE\n");
        for m in &self.images {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                m.image,
                num(m.s),
                opt(m.f_adaptive),
                opt(m.f_mean),
                num(m.e_adaptive),
                num(m.e_mean),
                num(m.mae)
            );
        }
        let a = &self.means;
        let _ = writeln!(
            out,
            "mean,{},{},{},{},{},{}",
            num(a.s),
            num(a.f_adaptive),
            num(a.f_mean),
            num(a.e_adaptive),
            num(a.e_mean),
            num(a.mae)
        );
        out
    }

    pub fn to_table(&self) -> String {
        let w = self.images.iter().map(|m| m.image.len()).max().unwrap_or(0).max(5);
        let cell = |v: Option<f64>| v.filter(|x| x.is_finite()).map_or_else(|| "NA".into(), |x| format!("{x:.4}"));
        let mut out = format!("{:<w$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}\n", "image", "S", "Fadp", "Fmean", "Eadp", "Emean", "MAE");
        let mut row = |name: &str, vals: [Option<f64>; 6]| {
            let _ = write!(out, "{name:<w$}");
            for v in vals {
                let _ = write!(out, "  {:>6}", cell(v));
            }
            out.push('\n');
        };
        for m in &self.images {
            row(&m.image, [Some(m.s), m.f_adaptive, m.f_mean, Some(m.e_adaptive), Some(m.e_mean), Some(m.mae)]);
        }
        let a = self.means;
        row("mean", [Some(a.s), Some(a.f_adaptive), Some(a.f_mean), Some(a.e_adaptive), Some(a.e_mean), Some(a.mae)]);
        if self.f_undefined > 0 {
            let _ = writeln!(out, "{} image(s) with empty ground truth skipped in F means", self.f_undefined);
        }
        for s in &self.missing {
            let _ = writeln!(out, "missing counterpart: {s}");
        }
        for (s, e) in &self.failures {
            let _ = writeln!(out, "failed: {s}: {e}");
        }
        out
    }
}

/// In-memory evaluation of `(name, prediction, ground truth)` triples.
pub fn evaluate_pairs<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a MaskImage, &'a MaskImage)>,
    beta2: f64,
) -> Result<MetricReport> {
    let images = pairs
        .into_iter()
        .map(|(n, p, g)| ImageMetrics::compute(n, p, g, beta2))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_images(images))
}

fn pgm_stems(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| DsuError::io(dir, e))? {
        let path = entry.map_err(|e| DsuError::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("pgm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_owned(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Pairs `pred_dir/<stem>.pgm` with `gt_dir/<stem>.pgm` in sorted stem order.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path, beta2: Option<f64>) -> Result<MetricReport> {
    let beta2 = beta2.unwrap_or(DEFAULT_BETA2);
    let preds = pgm_stems(pred_dir)?;
    let gts = pgm_stems(gt_dir)?;
    let mut missing: Vec<String> = preds.keys().filter(|k| !gts.contains_key(*k)).map(|k| format!("{k} (no ground truth)")).collect();
    missing.extend(gts.keys().filter(|k| !preds.contains_key(*k)).map(|k| format!("{k} (no prediction)")));
    let common: Vec<&String> = preds.keys().filter(|k| gts.contains_key(*k)).collect();
    if common.is_empty() {
        return Err(DsuError::Dataset(format!(
            "no common stems between {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for stem in common {
        let r = read_mask(&preds[stem])
            .and_then(|p| read_gt(&gts[stem]).map(|g| (p, g)))
            .and_then(|(p, g)| ImageMetrics::compute(stem, &p, &g, beta2));
        match r {
            Ok(m) => images.push(m),
            Err(e) => failures.push((stem.clone(), e.to_string())),
        }
    }
    let mut report = MetricReport::from_images(images);
    report.missing = missing;
    report.failures = failures;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{write_mask, write_pgm, Gray8};

    fn mask(seed: usize) -> MaskImage {
        MaskImage::new(6, 5, (0..30).map(|i| if (i * 7 + seed * 3) % 5 < 2 { 1.0 } else { 0.0 }).collect()).unwrap()
    }

    #[test]
    fn identical_directories_score_perfectly() {
        let (p, g) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        for i in 0..3 {
            write_mask(&p.path().join(format!("im{i}.pgm")), &mask(i)).unwrap();
            write_mask(&g.path().join(format!("im{i}.pgm")), &mask(i)).unwrap();
        }
        write_mask(&p.path().join("extra.pgm"), &mask(0)).unwrap();
        write_pgm(&g.path().join("im9.pgm"), &Gray8 { width: 2, height: 2, pixels: vec![0; 4] }).unwrap();
        std::fs::write(p.path().join("im9.pgm"), b"junk").unwrap();
        let r = evaluate_dataset(p.path(), g.path(), None).unwrap();
        assert_eq!(r.images.len(), 3);
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.missing.len(), 1);
        let a = r.means;
        // equal to one up to the ε regulariser
        assert!((a.s - 1.0).abs() < 1e-6 && (a.f_adaptive - 1.0).abs() < 1e-12 && (a.e_adaptive - 1.0).abs() < 1e-6);
        assert_eq!(a.mae, 0.0);
        let csv = r.to_csv();
        assert!(csv.starts_with("image,S,Fadp,Fmean,Eadp,Emean,MAE\nim0,"));
        assert!(csv.lines().last().unwrap().starts_with("mean,"));
    }

    #[test]
    fn disjoint_directories_error() {
        let (p, g) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_mask(&p.path().join("a.pgm"), &mask(0)).unwrap();
        write_mask(&g.path().join("b.pgm"), &mask(0)).unwrap();
        assert!(matches!(evaluate_dataset(p.path(), g.path(), None), Err(DsuError::Dataset(_))));
    }

    #[test]
    fn means_are_arithmetic() {
        let preds: Vec<MaskImage> = (0..4).map(|i| MaskImage::filled(6, 5, 0.2 * i as f64)).collect();
        let gts: Vec<MaskImage> = (0..4).map(mask).collect();
        let names = ["a", "b", "c", "d"];
        let r = evaluate_pairs((0..4).map(|i| (names[i], &preds[i], &gts[i])), 0.3).unwrap();
        let by_hand: f64 = r.images.iter().map(|m| m.mae).sum::<f64>() / 4.0;
        assert_eq!(r.means.mae, by_hand);
        let s: f64 = r.images.iter().map(|m| m.s).sum::<f64>() / 4.0;
        assert_eq!(r.means.s, s);
    }

    #[test]
    fn undefined_f_prints_na() {
        let empty = MaskImage::filled(3, 3, 0.0);
        let r = evaluate_pairs([("e", &empty, &empty)], 0.3).unwrap();
        assert_eq!(r.f_undefined, 1);
        assert!(r.to_csv().contains("e,1.000000,NA,NA,"));
    }
}
