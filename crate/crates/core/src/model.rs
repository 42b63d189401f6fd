//! Network assembly: adapters, optional ViT fusion, reduction, decoder and heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{
    channel_resample, channel_resample_backward, Adapter, AdapterCache, Cga, CgaCache, Head, Rfb, RfbCache, Sff,
    SffCache, Wtd, WtdCache,
};
use crate::config::{FusionVariant, Geometry, ModelConfig};
use crate::encoders::FeaturePyramid;
use crate::error::{DsuError, Result};
use crate::nn::{join, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// WTD + CGA pair injecting ViT features into one pyramid level.
#[derive(Debug, Clone)]
pub struct Fusion<T: Scalar> {
    pub level: usize,
    pub wtd: Wtd<T>,
    pub cga: Cga<T>,
}

/// Three logit maps at input resolution: `[D1, D2, D3]`, coarsest stage first.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutputs<T: Scalar = f32> {
    pub maps: [Tensor<T>; 3],
}

impl<T: Scalar> DecoderOutputs<T> {
    /// The exported map.
    pub fn last(&self) -> &Tensor<T> {
        &self.maps[2]
    }
}

/// Gradients with respect to the (frozen) encoder features.
#[derive(Debug, Clone)]
pub struct PyramidGrads<T: Scalar> {
    pub levels: [Tensor<T>; 4],
    pub vit: Tensor<T>,
    pub vit_taps: Option<[Tensor<T>; 4]>,
}

struct FusionCache<T: Scalar> {
    wtd: WtdCache<T>,
    cga: CgaCache<T>,
}

/// Intermediate state kept for the backward pass.
pub struct ModelCache<T: Scalar> {
    vit_channels: usize,
    adapters: Vec<AdapterCache<T>>,
    fusions: Vec<FusionCache<T>>,
    rfb: Vec<RfbCache<T>>,
    /// Decoder states `[U3, U2, U1]`.
    decoded: Vec<Tensor<T>>,
    sff: Vec<SffCache<T>>,
    has_taps: bool,
}

#[derive(Debug, Clone)]
pub struct DsuNet<T: Scalar = f32> {
    pub config: ModelConfig,
    pub geometry: Geometry,
    pub adapters: [Adapter<T>; 4],
    pub fusions: Vec<Fusion<T>>,
    pub rfb: [Rfb<T>; 4],
    /// `[sff3, sff2, sff1]` in evaluation order.
    pub sff: [Sff<T>; 3],
    pub heads: [Head<T>; 3],
}

impl<T: Scalar> DsuNet<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let geometry = config.geometry();
        let ch = geometry.pyramid_channels;
        let r = config.reduced_channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adapters = ch.map(|c| Adapter::new(c, config.adapter_ratio, &mut rng));
        let fusions = config
            .variant
            .fused_levels()
            .iter()
            .map(|&level| Fusion { level, wtd: Wtd::identity(ch[level]), cga: Cga::new(ch[level], &mut rng) })
            .collect();
        let rfb = ch.map(|c| Rfb::new(c, r, &mut rng));
        let sff = [(); 3].map(|_| Sff::new(r, &mut rng));
        let heads = [(); 3].map(|_| Head::new(r, &mut rng));
        Ok(Self { config: config.clone(), geometry, adapters, fusions, rfb, sff, heads })
    }

    pub fn variant(&self) -> FusionVariant {
        self.config.variant
    }

    fn vit_source<'a>(&self, features: &'a FeaturePyramid<T>, level: usize) -> Result<&'a Tensor<T>> {
        match self.config.variant {
            FusionVariant::B => match &features.vit_taps {
                Some(taps) => Ok(&taps[level]),
                None => Err(DsuError::Config("fusion variant b needs the four intermediate ViT taps".into())),
            },
            _ => Ok(&features.vit),
        }
    }

    pub fn forward(&self, features: &FeaturePyramid<T>) -> Result<DecoderOutputs<T>> {
        Ok(self.forward_cached(features)?.0)
    }

    pub fn forward_cached(&self, features: &FeaturePyramid<T>) -> Result<(DecoderOutputs<T>, ModelCache<T>)> {
        features.validate(&self.geometry)?;
        let out = self.geometry.main_size;
        let mut adapters = Vec::with_capacity(4);
        let mut levels = Vec::with_capacity(4);
        for (a, s) in self.adapters.iter().zip(&features.levels) {
            let (y, k) = a.forward(s)?;
            levels.push(y);
            adapters.push(k);
        }
        let mut fusions = Vec::with_capacity(self.fusions.len());
        for f in &self.fusions {
            let (c, h, w) = levels[f.level].chw();
            let v = channel_resample(self.vit_source(features, f.level)?, c);
            let (z, wtd) = f.wtd.forward(&v, h, w)?;
            let (t, cga) = f.cga.forward(&levels[f.level], &z)?;
            levels[f.level] = t;
            fusions.push(FusionCache { wtd, cga });
        }
        let mut xs = Vec::with_capacity(4);
        let mut rfb = Vec::with_capacity(4);
        for (block, t) in self.rfb.iter().zip(&levels) {
            let (x, k) = block.forward(t)?;
            xs.push(x);
            rfb.push(k);
        }
        let mut decoded: Vec<Tensor<T>> = Vec::with_capacity(3);
        let mut sff = Vec::with_capacity(3);
        for (k, block) in self.sff.iter().enumerate() {
            let low = &xs[2 - k];
            let high = if k == 0 { &xs[3] } else { &decoded[k - 1] };
            let (u, c) = block.forward(low, high)?;
            decoded.push(u);
            sff.push(c);
        }
        let maps = [
            self.heads[0].forward(&decoded[0], out, out)?,
            self.heads[1].forward(&decoded[1], out, out)?,
            self.heads[2].forward(&decoded[2], out, out)?,
        ];
        let cache = ModelCache {
            vit_channels: features.vit.chw().0,
            adapters,
            fusions,
            rfb,
            decoded,
            sff,
            has_taps: features.vit_taps.is_some(),
        };
        Ok((DecoderOutputs { maps }, cache))
    }

    /// Accumulates parameter gradients from the upstream logit gradients.
    pub fn backward(&mut self, cache: &ModelCache<T>, grads: &[Tensor<T>; 3]) -> Result<PyramidGrads<T>> {
        let mut dd: Vec<Tensor<T>> = Vec::with_capacity(3);
        for k in 0..3 {
            dd.push(self.heads[k].backward(&cache.decoded[k], &grads[k])?);
        }
        // U1 → U2 → U3 feeds backwards through the decoder chain.
        let mut dx: Vec<Option<Tensor<T>>> = vec![None, None, None, None];
        let mut carry: Option<Tensor<T>> = None;
        for k in (0..3).rev() {
            let mut du = dd[k].clone();
            if let Some(c) = carry.take() {
                du.add_assign(&c);
            }
            let (dlow, dhigh) = self.sff[k].backward(&cache.sff[k], &du)?;
            dx[2 - k] = Some(dlow);
            if k == 0 {
                dx[3] = Some(dhigh);
            } else {
                carry = Some(dhigh);
            }
        }
        let mut dlevels: Vec<Tensor<T>> = Vec::with_capacity(4);
        for (i, g) in dx.into_iter().enumerate() {
            dlevels.push(self.rfb[i].backward(&cache.rfb[i], &g.expect("all levels decoded"))?);
        }
        let g = &self.geometry;
        let vshape = g.vit_shape();
        let mut dvit = Tensor::zeros(&vshape);
        let mut dtaps = cache.has_taps.then(|| [(); 4].map(|_| Tensor::zeros(&vshape)));
        for (f, k) in self.fusions.iter_mut().zip(&cache.fusions).rev() {
            let (ds, dz) = f.cga.backward(&k.cga, &dlevels[f.level])?;
            dlevels[f.level] = ds;
            let dv = channel_resample_backward(cache.vit_channels, &f.wtd.backward(&k.wtd, &dz)?);
            match (self.config.variant, dtaps.as_mut()) {
                (FusionVariant::B, Some(t)) => t[f.level].add_assign(&dv),
                _ => dvit.add_assign(&dv),
            }
        }
        let mut out = Vec::with_capacity(4);
        for (i, d) in dlevels.iter().enumerate() {
            out.push(self.adapters[i].backward(&cache.adapters[i], d)?);
        }
        Ok(PyramidGrads { levels: out.try_into().expect("four levels"), vit: dvit, vit_taps: dtaps })
    }

    pub fn cast<U: Scalar>(&self) -> DsuNet<U> {
        let mut net = DsuNet::<U>::new(&self.config, 0).expect("validated config");
        let src = self.named_params();
        for ((_, dst), (_, s)) in net.named_params_mut().into_iter().zip(src) {
            *dst = s.cast();
        }
        net
    }
}

impl<T: Scalar> ParamSet<T> for DsuNet<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (i, a) in self.adapters.iter().enumerate() {
            a.collect(&join(prefix, &format!("adapter{}", i + 1)), out);
        }
        for f in &self.fusions {
            f.wtd.collect(&join(prefix, &format!("wtd{}", f.level + 1)), out);
            f.cga.collect(&join(prefix, &format!("cga{}", f.level + 1)), out);
        }
        for (i, r) in self.rfb.iter().enumerate() {
            r.collect(&join(prefix, &format!("rfb{}", i + 1)), out);
        }
        for (k, s) in self.sff.iter().enumerate() {
            s.collect(&join(prefix, &format!("sff{}", 3 - k)), out);
        }
        for (k, h) in self.heads.iter().enumerate() {
            h.collect(&join(prefix, &format!("head{}", k + 1)), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for (i, a) in self.adapters.iter_mut().enumerate() {
            a.collect_mut(&join(prefix, &format!("adapter{}", i + 1)), out);
        }
        for f in &mut self.fusions {
            f.wtd.collect_mut(&join(prefix, &format!("wtd{}", f.level + 1)), out);
            f.cga.collect_mut(&join(prefix, &format!("cga{}", f.level + 1)), out);
        }
        for (i, r) in self.rfb.iter_mut().enumerate() {
            r.collect_mut(&join(prefix, &format!("rfb{}", i + 1)), out);
        }
        for (k, s) in self.sff.iter_mut().enumerate() {
            s.collect_mut(&join(prefix, &format!("sff{}", 3 - k)), out);
        }
        for (k, h) in self.heads.iter_mut().enumerate() {
            h.collect_mut(&join(prefix, &format!("head{}", k + 1)), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;
    use crate::encoders::Encoders;

    fn toy_features() -> FeaturePyramid<f32> {
        let g = Profile::Toy.geometry();
        let enc = Encoders::<f32>::new(g, 0);
        let img = |s: usize| Tensor::from_fn(&[3, s, s], |i| 0.5 + 0.4 * ((i as f32) * 0.021).sin());
        enc.forward(&img(96), &img(126)).unwrap()
    }

    #[test]
    fn variants_share_output_geometry() {
        let f = toy_features();
        for v in FusionVariant::ALL {
            let cfg = ModelConfig { variant: v, ..Default::default() };
            let net = DsuNet::<f32>::new(&cfg, 1).unwrap();
            let out = net.forward(&f).unwrap();
            for m in &out.maps {
                assert_eq!(m.shape(), &[1, 96, 96]);
                assert!(m.is_finite());
            }
        }
    }

    #[test]
    fn trainable_partition_and_prefixes() {
        let cfg = ModelConfig::default();
        let net = DsuNet::<f32>::new(&cfg, 0).unwrap();
        let params = net.named_params();
        assert!(params.iter().all(|(_, t)| t.trainable));
        let prefixes: std::collections::BTreeSet<String> =
            params.iter().map(|(n, _)| n.chars().take_while(|c| c.is_ascii_alphabetic()).collect()).collect();
        let expected: std::collections::BTreeSet<String> =
            ["adapter", "wtd", "cga", "rfb", "sff", "head"].iter().map(|s| s.to_string()).collect();
        assert_eq!(prefixes, expected);
        let a = DsuNet::<f32>::new(&ModelConfig { variant: FusionVariant::A, ..cfg }, 0).unwrap();
        let count = |n: &DsuNet<f32>| n.named_params().iter().map(|(_, t)| t.len()).sum::<usize>();
        assert!(count(&a) < count(&net));
    }

    #[test]
    fn variant_b_requires_taps() {
        let mut f = toy_features();
        f.vit_taps = None;
        let net = DsuNet::<f32>::new(&ModelConfig { variant: FusionVariant::B, ..Default::default() }, 0).unwrap();
        assert!(matches!(net.forward(&f), Err(DsuError::Config(_))));
    }

    #[test]
    fn forward_is_deterministic() {
        let f = toy_features();
        let net = DsuNet::<f32>::new(&ModelConfig::default(), 7).unwrap();
        assert_eq!(net.forward(&f).unwrap(), net.forward(&f).unwrap());
    }
}
