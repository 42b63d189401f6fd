//! Frozen backbone stand-ins and feature-file ingestion.
//!
//! The stand-ins reproduce the pyramid and token-grid geometry of the real
//! backbones with a handful of seeded, frozen layers. Features computed by the
//! real networks can be injected instead through [`FeaturePyramid::from_named`].

mod container;
mod hiera;
mod vit;

pub use container::{
    decode, encode, read_container, read_feature_file, write_container, write_feature_file, NamedTensors,
    CHECKPOINT_MAGIC, FEATURE_MAGIC, VERSION,
};
pub use hiera::HieraStandIn;
pub use vit::VitStandIn;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Geometry;
use crate::error::{DsuError, Result};
use crate::nn::{join, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// Per-pixel standardisation over channels (parameter-free layer norm).
pub(crate) fn channel_norm<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.chw();
    let p = h * w;
    let d = x.data();
    let mut out = vec![T::zero(); d.len()];
    for i in 0..p {
        let mean = (0..c).map(|ch| d[ch * p + i].as_f64()).sum::<f64>() / c as f64;
        let var = (0..c).map(|ch| (d[ch * p + i].as_f64() - mean).powi(2)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + 1e-6).sqrt();
        for ch in 0..c {
            out[ch * p + i] = T::from_f64c((d[ch * p + i].as_f64() - mean) * inv);
        }
    }
    Tensor::from_vec(x.shape(), out).expect("same shape")
}

/// Encoder outputs consumed by the trainable network.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid<T: Scalar = f32> {
    /// S1..S4, finest first.
    pub levels: [Tensor<T>; 4],
    /// Final token map.
    pub vit: Tensor<T>,
    /// Intermediate token maps, one per quarter of the token stack.
    pub vit_taps: Option<[Tensor<T>; 4]>,
}

pub const LEVEL_NAMES: [&str; 4] = ["S1", "S2", "S3", "S4"];
pub const TAP_NAMES: [&str; 4] = ["V_tap1", "V_tap2", "V_tap3", "V_tap4"];

impl<T: Scalar> FeaturePyramid<T> {
    pub fn cast<U: Scalar>(&self) -> FeaturePyramid<U> {
        FeaturePyramid {
            levels: self.levels.each_ref().map(|t| t.cast()),
            vit: self.vit.cast(),
            vit_taps: self.vit_taps.as_ref().map(|taps| taps.each_ref().map(|t| t.cast())),
        }
    }

    /// Checks every map against the profile geometry.
    pub fn validate(&self, geometry: &Geometry) -> Result<()> {
        let check = |name: &str, t: &Tensor<T>, expected: [usize; 3]| {
            if t.shape() != expected {
                return Err(DsuError::ProfileShape {
                    name: name.to_owned(),
                    expected: expected.to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            Ok(())
        };
        for (i, t) in self.levels.iter().enumerate() {
            check(LEVEL_NAMES[i], t, geometry.pyramid_shape(i))?;
        }
        check("V", &self.vit, geometry.vit_shape())?;
        if let Some(taps) = &self.vit_taps {
            for (i, t) in taps.iter().enumerate() {
                check(TAP_NAMES[i], t, geometry.vit_shape())?;
            }
        }
        Ok(())
    }
}

impl FeaturePyramid<f32> {
    /// Named view in feature-file order.
    pub fn to_named(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out: Vec<(String, &Tensor<f32>)> =
            self.levels.iter().enumerate().map(|(i, t)| (LEVEL_NAMES[i].to_owned(), t)).collect();
        out.push(("V".to_owned(), &self.vit));
        if let Some(taps) = &self.vit_taps {
            out.extend(taps.iter().enumerate().map(|(i, t)| (TAP_NAMES[i].to_owned(), t)));
        }
        out
    }

    /// Builds a pyramid from a feature file's tensors, validating shapes against the profile.
    pub fn from_named(mut tensors: NamedTensors, geometry: &Geometry) -> Result<Self> {
        let mut take = |name: &str| -> Result<Tensor<f32>> {
            let pos = tensors.iter().position(|(n, _)| n == name).ok_or_else(|| DsuError::MissingTensor(name.into()))?;
            Ok(tensors.swap_remove(pos).1)
        };
        let levels = [take("S1")?, take("S2")?, take("S3")?, take("S4")?];
        let vit = take("V")?;
        let vit_taps = match take(TAP_NAMES[0]) {
            Ok(t1) => Some([t1, take(TAP_NAMES[1])?, take(TAP_NAMES[2])?, take(TAP_NAMES[3])?]),
            Err(DsuError::MissingTensor(_)) => None,
            Err(e) => return Err(e),
        };
        let p = Self { levels, vit, vit_taps };
        p.validate(geometry)?;
        Ok(p)
    }
}

/// Both frozen backbones.
#[derive(Debug, Clone)]
pub struct Encoders<T: Scalar = f32> {
    pub geometry: Geometry,
    pub hiera: HieraStandIn<T>,
    pub vit: VitStandIn<T>,
}

impl<T: Scalar> Encoders<T> {
    pub fn new(geometry: Geometry, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hiera = HieraStandIn::new(&geometry, &mut rng);
        let vit = VitStandIn::new(&geometry, &mut rng);
        Self { geometry, hiera, vit }
    }

    /// Runs both encoders on the two views of a scene.
    pub fn forward(&self, main: &Tensor<T>, aux: &Tensor<T>) -> Result<FeaturePyramid<T>> {
        let g = &self.geometry;
        if main.shape() != [3, g.main_size, g.main_size] {
            return Err(DsuError::Shape(format!(
                "main view must be 3×{0}×{0}, got {1:?}",
                g.main_size,
                main.shape()
            )));
        }
        if aux.shape() != [3, g.aux_size, g.aux_size] {
            return Err(DsuError::Shape(format!("aux view must be 3×{0}×{0}, got {1:?}", g.aux_size, aux.shape())));
        }
        let levels = self.hiera.forward(main)?;
        let (vit, taps) = self.vit.forward(aux)?;
        Ok(FeaturePyramid { levels, vit, vit_taps: Some(taps) })
    }
}

impl<T: Scalar> ParamSet<T> for Encoders<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.hiera.collect(&join(prefix, "hiera"), out);
        self.vit.collect(&join(prefix, "vit"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.hiera.collect_mut(&join(prefix, "hiera"), out);
        self.vit.collect_mut(&join(prefix, "vit"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    fn image(size: usize, phase: f32) -> Tensor<f32> {
        Tensor::from_fn(&[3, size, size], |i| 0.5 + 0.5 * ((i as f32) * 0.013 + phase).sin())
    }

    #[test]
    fn toy_shapes_and_determinism() {
        let g = Profile::Toy.geometry();
        let enc = Encoders::<f32>::new(g, 0);
        let p = enc.forward(&image(96, 0.0), &image(126, 1.0)).unwrap();
        let shapes: Vec<_> = p.levels.iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![24, 24, 24], vec![48, 12, 12], vec![96, 6, 6], vec![192, 3, 3]]);
        assert_eq!(p.vit.shape(), &[128, 9, 9]);
        for t in p.vit_taps.as_ref().unwrap() {
            assert_eq!(t.shape(), &[128, 9, 9]);
        }
        let q = enc.forward(&image(96, 0.0), &image(126, 1.0)).unwrap();
        assert_eq!(p, q);
        p.validate(&g).unwrap();
    }

    #[test]
    fn all_backbone_parameters_frozen() {
        let enc = Encoders::<f32>::new(Profile::Toy.geometry(), 3);
        let params = enc.named_params();
        assert!(!params.is_empty());
        assert!(params.iter().all(|(_, t)| !t.trainable));
    }

    #[test]
    fn rejects_indivisible_sizes() {
        let enc = Encoders::<f32>::new(Profile::Toy.geometry(), 0);
        assert!(enc.hiera.forward(&image(100, 0.0)).is_err());
        assert!(enc.vit.forward(&image(130, 0.0)).is_err());
        assert!(enc.forward(&image(64, 0.0), &image(126, 0.0)).is_err());
    }

    #[test]
    fn ingestion_names_expected_channels() {
        let g = Profile::Paper.geometry();
        let s = |c, hw| Tensor::<f32>::zeros(&[c, hw, hw]);
        let tensors = vec![
            ("S1".to_owned(), s(144, 88)),
            ("S2".to_owned(), s(288, 44)),
            ("S3".to_owned(), s(576, 22)),
            ("S4".to_owned(), s(1151, 11)),
            ("V".to_owned(), s(1024, 37)),
        ];
        let err = FeaturePyramid::from_named(tensors, &g).unwrap_err();
        match err {
            DsuError::ProfileShape { name, expected, found } => {
                assert_eq!(name, "S4");
                assert_eq!(expected, vec![1152, 11, 11]);
                assert_eq!(found, vec![1151, 11, 11]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn channel_norm_standardises() {
        let x = Tensor::<f64>::from_fn(&[5, 2, 2], |i| (i * i) as f64);
        let y = channel_norm(&x);
        for p in 0..4 {
            let vals: Vec<f64> = (0..5).map(|c| y.data()[c * 4 + p]).collect();
            let mean = vals.iter().sum::<f64>() / 5.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-5);
        }
    }
}
