//! Model and run configuration, plus the line-based `key = value` file format.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{DsuError, Result};

/// Encoder geometry preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Full-size geometry: 352² main view, 518² auxiliary view.
    Paper,
    /// Desk-scale geometry: 96² main view, 126² auxiliary view.
    Toy,
}

/// Static shapes implied by a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub main_size: usize,
    pub aux_size: usize,
    pub pyramid_channels: [usize; 4],
    pub vit_dim: usize,
    pub patch: usize,
    pub vit_depth: usize,
}

impl Geometry {
    pub fn pyramid_spatial(&self) -> [usize; 4] {
        let s1 = self.main_size / 4;
        [s1, s1 / 2, s1 / 4, s1 / 8]
    }

    pub fn pyramid_shape(&self, level: usize) -> [usize; 3] {
        let s = self.pyramid_spatial()[level];
        [self.pyramid_channels[level], s, s]
    }

    pub fn vit_grid(&self) -> usize {
        self.aux_size / self.patch
    }

    pub fn vit_shape(&self) -> [usize; 3] {
        [self.vit_dim, self.vit_grid(), self.vit_grid()]
    }
}

impl Profile {
    pub fn geometry(self) -> Geometry {
        match self {
            Profile::Paper => Geometry {
                main_size: 352,
                aux_size: 518,
                pyramid_channels: [144, 288, 576, 1152],
                vit_dim: 1024,
                patch: 14,
                vit_depth: 4,
            },
            Profile::Toy => Geometry {
                main_size: 96,
                aux_size: 126,
                pyramid_channels: [24, 48, 96, 192],
                vit_dim: 128,
                patch: 14,
                vit_depth: 4,
            },
        }
    }
}

/// Where (and whether) the ViT features are fused into the pyramid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionVariant {
    /// No ViT branch.
    A,
    /// Four intermediate ViT taps fused into the four levels respectively.
    B,
    /// The final ViT map fused into all four levels.
    C,
    /// The final ViT map fused into the deepest level only.
    Full,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 4] = [FusionVariant::A, FusionVariant::B, FusionVariant::C, FusionVariant::Full];

    /// Pyramid levels (0-based) that receive a fusion block.
    pub fn fused_levels(self) -> &'static [usize] {
        match self {
            FusionVariant::A => &[],
            FusionVariant::B | FusionVariant::C => &[0, 1, 2, 3],
            FusionVariant::Full => &[3],
        }
    }
}

macro_rules! text_enum {
    ($ty:ty, $what:literal, { $($text:literal => $val:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = DsuError;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($val),)+
                    other => Err(DsuError::Config(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $val { return f.write_str($text); })+
                unreachable!()
            }
        }
    };
}

text_enum!(Profile, "profile", { "paper" => Profile::Paper, "toy" => Profile::Toy });
text_enum!(FusionVariant, "fusion variant", {
    "a" => FusionVariant::A,
    "b" => FusionVariant::B,
    "c" => FusionVariant::C,
    "full" => FusionVariant::Full,
});

/// Synthetic scene style.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneMode {
    Sod,
    Cod,
}

text_enum!(SceneMode, "scene mode", { "sod" => SceneMode::Sod, "cod" => SceneMode::Cod });

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub profile: Profile,
    pub variant: FusionVariant,
    pub adapter_ratio: f64,
    pub reduced_channels: usize,
    /// Deep-supervision weights for (D1, D2, D3).
    pub loss_weights: [f64; 3],
    pub beta2_f: f64,
    /// Pixel-weight the BCE term with the boundary map.
    pub weighted_bce: bool,
    /// Pixel-weight the IoU term with the boundary map.
    pub weighted_iou: bool,
    /// Seed of the frozen backbone stand-ins.
    pub encoder_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Toy,
            variant: FusionVariant::Full,
            adapter_ratio: 0.25,
            reduced_channels: 64,
            loss_weights: [0.25, 0.5, 1.0],
            beta2_f: 0.3,
            weighted_bce: true,
            weighted_iou: true,
            encoder_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adapter_ratio > 0.0 && self.adapter_ratio <= 1.0) {
            return Err(DsuError::Config(format!("adapter_ratio {} outside (0, 1]", self.adapter_ratio)));
        }
        if self.reduced_channels == 0 {
            return Err(DsuError::Config("reduced_channels must be ≥ 1".into()));
        }
        if self.loss_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(DsuError::Config(format!("loss weights must be non-negative: {:?}", self.loss_weights)));
        }
        if !(self.beta2_f > 0.0) {
            return Err(DsuError::Config("beta2_f must be positive".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        self.profile.geometry()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub mode: SceneMode,
    pub n_train: usize,
    pub n_val: usize,
    /// Seed of the generated corpus; validation samples use the seeds after the training ones.
    pub data_seed: u64,
    pub train_data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
    pub augment: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: 1e-3,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch: 4,
            epochs: 20,
            max_steps: None,
            seed: 42,
            mode: SceneMode::Sod,
            n_train: 64,
            n_val: 16,
            data_seed: 42,
            train_data: None,
            val_data: None,
            augment: true,
        }
    }
}

impl RunConfig {
    /// The optimizer and data settings used for full-size training runs.
    pub fn paper() -> Self {
        Self {
            model: ModelConfig { profile: Profile::Paper, ..ModelConfig::default() },
            batch: 8,
            epochs: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0) {
            return Err(DsuError::Config("lr must be positive".into()));
        }
        if self.batch == 0 {
            return Err(DsuError::Config("batch must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(DsuError::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DsuError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses `key = value` lines; `#` starts a comment, unknown keys are rejected.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut profile_set = false;
        let mut batch_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| DsuError::ConfigFile { path: path.to_owned(), line: lineno + 1, detail };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<V: FromStr>(v: &str) -> std::result::Result<V, String> {
                v.parse().map_err(|_| format!("cannot parse {v:?}"))
            }
            fn flag(v: &str) -> std::result::Result<bool, String> {
                match v {
                    "true" | "1" | "yes" => Ok(true),
                    "false" | "0" | "no" => Ok(false),
                    _ => Err(format!("expected boolean, got {v:?}")),
                }
            }
            let m = &mut cfg.model;
            let res: std::result::Result<(), String> = match key {
                "profile" => {
                    profile_set = true;
                    value.parse().map(|v| m.profile = v).map_err(|e: DsuError| e.to_string())
                }
                "variant" | "fusion_variant" => value.parse().map(|v| m.variant = v).map_err(|e: DsuError| e.to_string()),
                "adapter_ratio" => num(value).map(|v| m.adapter_ratio = v),
                "reduced_channels" => num(value).map(|v| m.reduced_channels = v),
                "w1" => num(value).map(|v| m.loss_weights[0] = v),
                "w2" => num(value).map(|v| m.loss_weights[1] = v),
                "w3" => num(value).map(|v| m.loss_weights[2] = v),
                "beta2_f" => num(value).map(|v| m.beta2_f = v),
                "weighted_bce" => flag(value).map(|v| m.weighted_bce = v),
                "weighted_iou" => flag(value).map(|v| m.weighted_iou = v),
                "encoder_seed" => num(value).map(|v| m.encoder_seed = v),
                "lr" => num(value).map(|v| cfg.lr = v),
                "weight_decay" => num(value).map(|v| cfg.weight_decay = v),
                "beta1" => num(value).map(|v| cfg.beta1 = v),
                "beta2" => num(value).map(|v| cfg.beta2 = v),
                "eps" => num(value).map(|v| cfg.eps = v),
                "batch" => {
                    batch_set = true;
                    num(value).map(|v| cfg.batch = v)
                }
                "epochs" => num(value).map(|v| cfg.epochs = v),
                "max_steps" => num(value).map(|v| cfg.max_steps = Some(v)),
                "seed" => num(value).map(|v| cfg.seed = v),
                "mode" => value.parse().map(|v| cfg.mode = v).map_err(|e: DsuError| e.to_string()),
                "n_train" => num(value).map(|v| cfg.n_train = v),
                "n_val" => num(value).map(|v| cfg.n_val = v),
                "data_seed" => num(value).map(|v| cfg.data_seed = v),
                "train_data" => {
                    cfg.train_data = Some(PathBuf::from(value));
                    Ok(())
                }
                "val_data" => {
                    cfg.val_data = Some(PathBuf::from(value));
                    Ok(())
                }
                "augment" => flag(value).map(|v| cfg.augment = v),
                other => Err(format!("unknown key {other:?}")),
            };
            res.map_err(err)?;
        }
        if profile_set && cfg.model.profile == Profile::Paper && !batch_set {
            cfg.batch = 8;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("profile", m.profile.to_string());
        kv("variant", m.variant.to_string());
        kv("adapter_ratio", m.adapter_ratio.to_string());
        kv("reduced_channels", m.reduced_channels.to_string());
        kv("w1", m.loss_weights[0].to_string());
        kv("w2", m.loss_weights[1].to_string());
        kv("w3", m.loss_weights[2].to_string());
        kv("beta2_f", m.beta2_f.to_string());
        kv("weighted_bce", m.weighted_bce.to_string());
        kv("weighted_iou", m.weighted_iou.to_string());
        kv("encoder_seed", m.encoder_seed.to_string());
        kv("lr", self.lr.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("eps", self.eps.to_string());
        kv("batch", self.batch.to_string());
        kv("epochs", self.epochs.to_string());
        if let Some(n) = self.max_steps {
            kv("max_steps", n.to_string());
        }
        kv("seed", self.seed.to_string());
        kv("mode", self.mode.to_string());
        kv("n_train", self.n_train.to_string());
        kv("n_val", self.n_val.to_string());
        kv("data_seed", self.data_seed.to_string());
        if let Some(p) = &self.train_data {
            kv("train_data", p.display().to_string());
        }
        if let Some(p) = &self.val_data {
            kv("val_data", p.display().to_string());
        }
        kv("augment", self.augment.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_shapes() {
        let g = Profile::Paper.geometry();
        assert_eq!(g.pyramid_shape(0), [144, 88, 88]);
        assert_eq!(g.pyramid_shape(3), [1152, 11, 11]);
        assert_eq!(g.vit_shape(), [1024, 37, 37]);
        let t = Profile::Toy.geometry();
        assert_eq!(t.pyramid_shape(0), [24, 24, 24]);
        assert_eq!(t.pyramid_shape(3), [192, 3, 3]);
        assert_eq!(t.vit_shape(), [128, 9, 9]);
    }

    #[test]
    fn parses_and_round_trips() {
        let text = "# toy run\nprofile = toy\nvariant = B\nlr = 0.002 # faster\nepochs=3\nmax_steps = 10\n";
        let cfg = RunConfig::parse(text, Path::new("x.cfg")).unwrap();
        assert_eq!(cfg.model.variant, FusionVariant::B);
        assert_eq!(cfg.lr, 0.002);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.max_steps, Some(10));
        let again = RunConfig::parse(&cfg.to_text(), Path::new("y.cfg")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_unknown_keys_with_line_number() {
        let err = RunConfig::parse("lr = 0.1\nlearning_rate = 3\n", Path::new("c.cfg")).unwrap_err();
        match err {
            DsuError::ConfigFile { line, detail, .. } => {
                assert_eq!(line, 2);
                assert!(detail.contains("learning_rate"));
            }
            e => panic!("unexpected {e}"),
        }
        assert!(RunConfig::parse("lr = -1\n", Path::new("c")).is_err());
        assert!(RunConfig::parse("batch = 0\n", Path::new("c")).is_err());
        assert!(RunConfig::parse("w1 = -0.5\n", Path::new("c")).is_err());
    }

    #[test]
    fn paper_defaults() {
        let cfg = RunConfig::parse("profile = paper\n", Path::new("p")).unwrap();
        assert_eq!(cfg.batch, 8);
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(cfg.weight_decay, 5e-4);
        assert_eq!(RunConfig::paper().epochs, 50);
    }
}
