use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{join, Conv2d, ParamSet};
use crate::tensor::{ConvSpec, Scalar, Tensor};

pub const RFB_DILATIONS: [usize; 3] = [3, 5, 7];

/// Multi-branch dilated reduction of a feature map to `reduced` channels.
#[derive(Debug, Clone)]
pub struct Rfb<T: Scalar> {
    pub branch0: Conv2d<T>,
    pub squeeze: [Conv2d<T>; 3],
    pub dilated: [Conv2d<T>; 3],
    pub fuse: Conv2d<T>,
    pub shortcut: Conv2d<T>,
}

#[derive(Debug)]
pub struct RfbCache<T: Scalar> {
    x: Tensor<T>,
    squeezed: Vec<Tensor<T>>,
    cat: Tensor<T>,
    pre: Tensor<T>,
}

impl<T: Scalar> Rfb<T> {
    pub fn new(cin: usize, reduced: usize, rng: &mut ChaCha8Rng) -> Self {
        let q = (reduced / 4).max(1);
        let pw = |cin, cout, rng: &mut ChaCha8Rng| Conv2d::new(ConvSpec::new(cin, cout, 1), true, true, rng);
        let branch0 = pw(cin, q, rng);
        let squeeze = [pw(cin, q, rng), pw(cin, q, rng), pw(cin, q, rng)];
        let dilated = RFB_DILATIONS.map(|d| Conv2d::new(ConvSpec::same(q, q, 3, d), true, true, rng));
        let fuse = Conv2d::new(ConvSpec::same(4 * q, reduced, 3, 1), true, true, rng);
        let shortcut = pw(cin, reduced, rng);
        Self { branch0, squeeze, dilated, fuse, shortcut }
    }

    pub fn out_channels(&self) -> usize {
        self.fuse.spec.out_channels
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, RfbCache<T>)> {
        let mut branches = vec![self.branch0.forward(x)?];
        let mut squeezed = Vec::with_capacity(3);
        for (s, d) in self.squeeze.iter().zip(&self.dilated) {
            let h = s.forward(x)?;
            branches.push(d.forward(&h)?);
            squeezed.push(h);
        }
        let cat = Tensor::concat_channels(&branches.iter().collect::<Vec<_>>());
        let mut pre = self.fuse.forward(&cat)?;
        pre.add_assign(&self.shortcut.forward(x)?);
        let y = pre.map(|v| v.max(T::zero()));
        Ok((y, RfbCache { x: x.clone(), squeezed, cat, pre }))
    }

    pub fn backward(&mut self, cache: &RfbCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let dpre = cache.pre.zip_map(dy, |z, g| if z > T::zero() { g } else { T::zero() });
        let mut dx = self.shortcut.backward(&cache.x, &dpre)?;
        let dcat = self.fuse.backward(&cache.cat, &dpre)?;
        let q = self.branch0.spec.out_channels;
        dx.add_assign(&self.branch0.backward(&cache.x, &dcat.channels(0, q))?);
        for k in 0..3 {
            let dh = self.dilated[k].backward(&cache.squeezed[k], &dcat.channels((k + 1) * q, q))?;
            dx.add_assign(&self.squeeze[k].backward(&cache.x, &dh)?);
        }
        Ok(dx)
    }
}

impl<T: Scalar> ParamSet<T> for Rfb<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.branch0.collect(&join(prefix, "branch0"), out);
        for k in 0..3 {
            self.squeeze[k].collect(&join(prefix, &format!("branch{}.squeeze", k + 1)), out);
            self.dilated[k].collect(&join(prefix, &format!("branch{}.dilated", k + 1)), out);
        }
        self.fuse.collect(&join(prefix, "fuse"), out);
        self.shortcut.collect(&join(prefix, "shortcut"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.branch0.collect_mut(&join(prefix, "branch0"), out);
        for (k, (s, d)) in self.squeeze.iter_mut().zip(self.dilated.iter_mut()).enumerate() {
            s.collect_mut(&join(prefix, &format!("branch{}.squeeze", k + 1)), out);
            d.collect_mut(&join(prefix, &format!("branch{}.dilated", k + 1)), out);
        }
        self.fuse.collect_mut(&join(prefix, "fuse"), out);
        self.shortcut.collect_mut(&join(prefix, "shortcut"), out);
    }
}
