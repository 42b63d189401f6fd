//! Seeded training loop, inference and evaluation on in-memory samples.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::optim::{AdamW, OptimState};
use crate::config::{FusionVariant, RunConfig};
use crate::data::{flip_with, generate_dataset, read_dataset, Sample};
use crate::encoders::{Encoders, FeaturePyramid};
use crate::error::{DsuError, Result};
use crate::image::MaskImage;
use crate::loss::{total_loss, LevelLoss, LossBreakdown};
use crate::metrics::{evaluate_pairs, MetricReport};
use crate::model::DsuNet;
use crate::nn::ParamSet;
use crate::ops::sigmoid;

/// Mean loss over the samples seen in one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps completed so far.
    pub steps: u64,
    pub mean: LossBreakdown,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,steps,d1_bce,d1_iou,d2_bce,d2_iou,d3_bce,d3_iou,total\n");
    for e in log {
        let _ = write!(s, "{},{}", e.epoch, e.steps);
        for l in &e.mean.levels {
            let _ = write!(s, ",{:.8},{:.8}", l.bce, l.iou);
        }
        let _ = writeln!(s, ",{:.8}", e.mean.total);
    }
    s
}

/// Frozen-encoder outputs memoised per (sample, vertical flip, horizontal flip).
pub struct FeatureCache<'a> {
    encoders: &'a Encoders<f32>,
    keep_taps: bool,
    map: HashMap<(usize, bool, bool), FeaturePyramid<f32>>,
}

impl<'a> FeatureCache<'a> {
    pub fn new(encoders: &'a Encoders<f32>, variant: FusionVariant) -> Self {
        Self { encoders, keep_taps: variant == FusionVariant::B, map: HashMap::new() }
    }

    pub fn get(&mut self, index: usize, sample: &Sample, flips: (bool, bool)) -> Result<&FeaturePyramid<f32>> {
        let key = (index, flips.0, flips.1);
        if !self.map.contains_key(&key) {
            let mut f = self.encoders.forward(&sample.image_main, &sample.image_aux)?;
            if !self.keep_taps {
                f.vit_taps = None;
            }
            self.map.insert(key, f);
        }
        Ok(&self.map[&key])
    }
}

/// Training and validation samples: read from the configured directories or generated from `data_seed`.
pub fn load_data(config: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let n = config.n_train + config.n_val;
    let generated = if config.train_data.is_none() || config.val_data.is_none() {
        generate_dataset(n, config.mode, config.model.profile, config.data_seed).into_iter().map(|(_, s)| s).collect()
    } else {
        Vec::new()
    };
    let mut generated = generated.into_iter();
    let train = match &config.train_data {
        Some(p) => read_dataset(p, true)?,
        None => generated.by_ref().take(config.n_train).collect(),
    };
    let val = match &config.val_data {
        Some(p) => read_dataset(p, true)?,
        None => generated.skip(if config.train_data.is_some() { config.n_train } else { 0 }).collect(),
    };
    if train.is_empty() {
        return Err(DsuError::Dataset("training set is empty".into()));
    }
    Ok((train, val))
}

fn mean_breakdown(sum: &LossBreakdown, n: usize) -> LossBreakdown {
    let k = 1.0 / n.max(1) as f64;
    let levels = sum.levels.map(|l| LevelLoss { bce: l.bce * k, iou: l.iou * k, total: l.total * k });
    LossBreakdown { levels, total: sum.total * k }
}

/// Runs the configured optimisation and returns the final checkpoint with the epoch log.
pub fn train(
    config: &RunConfig,
    encoders: &Encoders<f32>,
    data: &[Sample],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(DsuError::Dataset("training set is empty".into()));
    }
    let mut net = DsuNet::<f32>::new(&config.model, config.seed)?;
    let mut optim = OptimState::for_params(&net.named_params());
    let opt = AdamW {
        lr: config.lr,
        weight_decay: config.weight_decay,
        beta1: config.beta1,
        beta2: config.beta2,
        eps: config.eps,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut features = FeatureCache::new(encoders, config.model.variant);
    let flipped: Vec<[Sample; 4]> = if config.augment {
        data.iter().map(|s| [(false, false), (false, true), (true, false), (true, true)].map(|(v, h)| flip_with(s, v, h))).collect()
    } else {
        Vec::new()
    };
    let gts: Vec<[_; 4]> = if config.augment {
        flipped.iter().map(|f| f.each_ref().map(|s| s.gt.to_tensor::<f32>())).collect()
    } else {
        data.iter().map(|s| [(); 4].map(|_| s.gt.to_tensor::<f32>())).collect()
    };
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut seen = 0;
        for batch in order.chunks(config.batch) {
            if config.max_steps.is_some_and(|m| optim.step >= m as u64) {
                break;
            }
            for &i in batch {
                let (v, h) = if config.augment { (rng.gen_bool(0.5), rng.gen_bool(0.5)) } else { (false, false) };
                let k = (v as usize) << 1 | h as usize;
                let sample = if config.augment { &flipped[i][k] } else { &data[i] };
                let feats = features.get(i, sample, (v, h))?;
                let (out, cache) = net.forward_cached(feats)?;
                let (loss, grads) = total_loss(&out, &gts[i][k], &config.model).map_err(|e| match e {
                    DsuError::NonFinite(what) => {
                        DsuError::NonFinite(format!("{what} at epoch {epoch}, step {}", optim.step + 1))
                    }
                    e => e,
                })?;
                net.backward(&cache, &grads)?;
                for (a, b) in sum.levels.iter_mut().zip(&loss.levels) {
                    a.bce += b.bce;
                    a.iou += b.iou;
                    a.total += b.total;
                }
                sum.total += loss.total;
                seen += 1;
            }
            let mut params = net.named_params_mut();
            opt.step(&mut params, &mut optim, 1.0 / batch.len() as f64)?;
        }
        if seen == 0 {
            break 'epochs;
        }
        let entry = EpochLog { epoch, steps: optim.step, mean: mean_breakdown(&sum, seen) };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok((Checkpoint { config: config.clone(), net, optim }, log))
}

/// `sigmoid(D3)` as a mask on the main grid.
pub fn predict_sample(net: &DsuNet<f32>, encoders: &Encoders<f32>, sample: &Sample) -> Result<MaskImage> {
    let mut f = encoders.forward(&sample.image_main, &sample.image_aux)?;
    if net.variant() != FusionVariant::B {
        f.vit_taps = None;
    }
    let out = net.forward(&f)?;
    let mut mask = MaskImage::from_tensor(out.last())?;
    mask.data.iter_mut().for_each(|z| *z = sigmoid(*z));
    Ok(mask)
}

pub fn evaluate_samples(net: &DsuNet<f32>, encoders: &Encoders<f32>, samples: &[Sample]) -> Result<MetricReport> {
    let preds = samples.iter().map(|s| predict_sample(net, encoders, s)).collect::<Result<Vec<_>>>()?;
    evaluate_pairs(samples.iter().zip(&preds).map(|(s, p)| (s.id.as_str(), p, &s.gt)), net.config.beta2_f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    fn tiny() -> RunConfig {
        RunConfig {
            model: ModelConfig { reduced_channels: 8, ..Default::default() },
            n_train: 3,
            n_val: 1,
            batch: 2,
            epochs: 2,
            ..Default::default()
        }
    }

    #[test]
    fn short_run_is_deterministic_and_logs_each_epoch() {
        let cfg = tiny();
        let (train_set, val) = load_data(&cfg).unwrap();
        assert_eq!((train_set.len(), val.len()), (3, 1));
        let enc = Encoders::new(cfg.model.geometry(), cfg.model.encoder_seed);
        let (a, log) = train(&cfg, &enc, &train_set, |_| {}).unwrap();
        let (b, _) = train(&cfg, &enc, &train_set, |_| {}).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(log.len(), 2);
        assert_eq!(log[1].steps, 4);
        assert!(log_csv(&log).lines().count() == 3);
    }

    #[test]
    fn max_steps_stops_early() {
        let cfg = RunConfig { max_steps: Some(1), ..tiny() };
        let (train_set, _) = load_data(&cfg).unwrap();
        let enc = Encoders::new(cfg.model.geometry(), 0);
        let (ck, log) = train(&cfg, &enc, &train_set, |_| {}).unwrap();
        assert_eq!(ck.optim.step, 1);
        assert_eq!(log.len(), 1);
    }
}
