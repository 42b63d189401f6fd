//! Training driver, prediction export, parameter accounting and ablation sweeps.

mod checkpoint;
mod optim;
mod train;

pub use checkpoint::Checkpoint;
pub use optim::{AdamW, Moments, OptimState};
pub use train::{evaluate_samples, load_data, log_csv, predict_sample, train, EpochLog, FeatureCache};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{FusionVariant, ModelConfig, RunConfig};
use crate::data::{read_manifest, read_rgb, DatasetDirs, Sample};
use crate::encoders::Encoders;
use crate::error::{DsuError, Result};
use crate::image::{write_mask, MaskImage};
use crate::metrics::{MetricMeans, MetricReport};
use crate::model::DsuNet;
use crate::nn::ParamSet;

/// Epoch log path next to a checkpoint: `model.dsut` → `model.log.csv`.
pub fn log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.csv")
}

/// Image ids of a dataset root: the manifest if present, else the red planes in `images-main/`.
pub fn list_ids(root: &Path) -> Result<Vec<String>> {
    let dirs = DatasetDirs::new(root);
    if dirs.manifest.exists() {
        return Ok(read_manifest(root)?.into_iter().map(|m| m.id).collect());
    }
    let mut ids: Vec<String> = fs::read_dir(&dirs.main)
        .map_err(|e| DsuError::io(&dirs.main, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".r.pgm")).map(str::to_owned))
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(DsuError::Dataset(format!("no images under {}", dirs.main.display())));
    }
    Ok(ids)
}

/// Writes `out_dir/<id>.pgm` = quantised `sigmoid(D3)` for every image under `images`.
pub fn predict_dir(checkpoint: &Checkpoint, images: &Path, out_dir: &Path) -> Result<Vec<String>> {
    let model = &checkpoint.config.model;
    let encoders = Encoders::new(model.geometry(), model.encoder_seed);
    let dirs = DatasetDirs::new(images);
    fs::create_dir_all(out_dir).map_err(|e| DsuError::io(out_dir, e))?;
    let ids = list_ids(images)?;
    let g = model.geometry();
    for id in &ids {
        let image_main = read_rgb(&dirs.main, id)?;
        let image_aux = read_rgb(&dirs.aux, id)?;
        for (view, t, size) in [("main", &image_main, g.main_size), ("aux", &image_aux, g.aux_size)] {
            if t.shape() != [3, size, size] {
                return Err(DsuError::Shape(format!(
                    "{id}: {view} view is {:?}, the {} profile expects 3×{size}×{size}",
                    t.shape(),
                    model.profile
                )));
            }
        }
        let sample = Sample { id: id.clone(), image_main, image_aux, gt: MaskImage::filled(g.main_size, g.main_size, 0.0) };
        let mask = predict_sample(&checkpoint.net, &encoders, &sample)?;
        write_mask(&out_dir.join(format!("{id}.pgm")), &mask)?;
    }
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: String,
    pub total: usize,
    pub trainable: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamReport {
    pub groups: Vec<ParamGroup>,
    pub total: usize,
    pub trainable: usize,
}

impl ParamReport {
    pub fn fraction(&self) -> f64 {
        self.trainable as f64 / self.total as f64
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<10} {:>12} {:>12}\n", "module", "total", "trainable");
        for g in &self.groups {
            let _ = writeln!(s, "{:<10} {:>12} {:>12}", g.name, g.total, g.trainable);
        }
        let _ = writeln!(s, "{:<10} {:>12} {:>12}", "all", self.total, self.trainable);
        let _ = writeln!(s, "trainable fraction: {:.4}%", 100.0 * self.fraction());
        s
    }
}

fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name).trim_end_matches(|c: char| c.is_ascii_digit())
}

/// Element counts over both frozen encoders and the trainable network, grouped by module.
pub fn count_parameters(model: &ModelConfig) -> Result<ParamReport> {
    model.validate()?;
    let encoders = Encoders::<f32>::new(model.geometry(), model.encoder_seed);
    let net = DsuNet::<f32>::new(model, 0)?;
    let mut groups: Vec<ParamGroup> = Vec::new();
    for (name, t) in encoders.named_params().into_iter().chain(net.named_params()) {
        let key = group_of(&name);
        let idx = match groups.iter().position(|g| g.name == key) {
            Some(i) => i,
            None => {
                groups.push(ParamGroup { name: key.to_owned(), total: 0, trainable: 0 });
                groups.len() - 1
            }
        };
        groups[idx].total += t.len();
        if t.trainable {
            groups[idx].trainable += t.len();
        }
    }
    let total = groups.iter().map(|g| g.total).sum();
    let trainable = groups.iter().map(|g| g.trainable).sum();
    Ok(ParamReport { groups, total, trainable })
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub variant: FusionVariant,
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct Ablation {
    /// A, B, C, then the full model.
    pub runs: Vec<AblationRun>,
}

const PROPOSED: &str = "proposed";

impl Ablation {
    fn row(m: &MetricMeans) -> [f64; 4] {
        [m.s, m.f_mean, m.e_mean, m.mae]
    }

    /// `variant,S,F,E,MAE` with F and E averaged over the threshold sweep.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,S,F,E,MAE\n");
        for r in &self.runs {
            let [a, b, c, d] = Self::row(&r.report.means);
            let _ = writeln!(s, "{},{a:.6},{b:.6},{c:.6},{d:.6}", r.variant);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<16} {:>7} {:>7} {:>7} {:>7}\n", "variant", "S", "F", "E", "MAE");
        for r in &self.runs {
            let label = if r.variant == FusionVariant::Full { format!("full ({PROPOSED})") } else { r.variant.to_string() };
            let [a, b, c, d] = Self::row(&r.report.means);
            let _ = writeln!(s, "{label:<16} {a:>7.4} {b:>7.4} {c:>7.4} {d:>7.4}");
        }
        s
    }
}

/// Trains and evaluates every fusion variant on one shared dataset and encoder pair.
pub fn ablate(base: &RunConfig, mut progress: impl FnMut(FusionVariant, &EpochLog)) -> Result<Ablation> {
    let (train_set, val) = load_data(base)?;
    if val.is_empty() {
        return Err(DsuError::Dataset("ablation needs a validation set".into()));
    }
    let encoders = Encoders::new(base.model.geometry(), base.model.encoder_seed);
    let mut runs = Vec::with_capacity(4);
    for variant in FusionVariant::ALL {
        let mut cfg = base.clone();
        cfg.model.variant = variant;
        let (checkpoint, log) = train(&cfg, &encoders, &train_set, |e| progress(variant, e))?;
        let report = evaluate_samples(&checkpoint.net, &encoders, &val)?;
        runs.push(AblationRun { variant, checkpoint, log, report });
    }
    Ok(Ablation { runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_groups_and_fraction() {
        let full = count_parameters(&ModelConfig::default()).unwrap();
        let names: Vec<&str> = full.groups.iter().map(|g| g.name.as_str()).collect();
        assert_eq!(names, ["hiera", "vit", "adapter", "wtd", "cga", "rfb", "sff", "head"]);
        assert!(full.fraction() > 0.0 && full.fraction() < 1.0);
        assert!(full.groups[..2].iter().all(|g| g.trainable == 0));
        let a = count_parameters(&ModelConfig { variant: FusionVariant::A, ..Default::default() }).unwrap();
        assert!(a.trainable < full.trainable);
        assert_eq!(a.total - a.trainable, full.total - full.trainable);
    }

    #[test]
    fn log_path_replaces_extension() {
        assert_eq!(log_path(Path::new("out/model.dsut")), Path::new("out/model.log.csv"));
    }
}
