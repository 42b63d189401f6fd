use rand_chacha::ChaCha8Rng;

use crate::error::{DsuError, Result};
use crate::nn::{join, Conv2d, Linear, ParamSet};
use crate::ops::{broadcast_to, reduce, reduce_backward, sigmoid, unbroadcast, ReduceAxis, ReduceOp};
use crate::tensor::{ConvSpec, Scalar, Tensor};

/// Content-guided attention fusion of two same-shape maps.
#[derive(Debug, Clone)]
pub struct Cga<T: Scalar> {
    pub channel_down: Linear<T>,
    pub channel_up: Linear<T>,
    pub spatial: Conv2d<T>,
    pub pixel_dw: Conv2d<T>,
    pub pixel_pw: Conv2d<T>,
    pub proj: Conv2d<T>,
}

#[derive(Debug)]
pub struct CgaCache<T: Scalar> {
    x: Tensor<T>,
    y: Tensor<T>,
    u: Tensor<T>,
    gap: Tensor<T>,
    hidden_pre: Tensor<T>,
    hidden: Tensor<T>,
    wc: Tensor<T>,
    pooled: Tensor<T>,
    ws: Tensor<T>,
    a: Tensor<T>,
    p1: Tensor<T>,
    w: Tensor<T>,
    fused: Tensor<T>,
}

impl<T: Scalar> Cga<T> {
    pub fn new(c: usize, rng: &mut ChaCha8Rng) -> Self {
        let b = (c / 4).max(1);
        Self {
            channel_down: Linear::new(c, b, true, rng),
            channel_up: Linear::new(b, c, true, rng),
            spatial: Conv2d::new(ConvSpec::new(2, 1, 7).with_padding(3), true, true, rng),
            pixel_dw: Conv2d::new(ConvSpec::new(c, c, 3).with_padding(1).with_groups(c), true, true, rng),
            pixel_pw: Conv2d::new(ConvSpec::new(c, c, 1), true, true, rng),
            proj: Conv2d::new(ConvSpec::new(c, c, 1), true, true, rng),
        }
    }

    /// Attention map `W` and the pre-projection blend `X⊙W + Y⊙(1−W)`.
    pub fn blend(&self, x: &Tensor<T>, y: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (_, c) = self.forward(x, y)?;
        Ok((c.w, c.fused))
    }

    pub fn forward(&self, x: &Tensor<T>, y: &Tensor<T>) -> Result<(Tensor<T>, CgaCache<T>)> {
        if x.shape() != y.shape() {
            return Err(DsuError::Shape(format!("fusion inputs differ: {:?} vs {:?}", x.shape(), y.shape())));
        }
        let (c, h, w) = x.chw();
        let u = x.add(y);

        let gap = reduce(&u, ReduceOp::Mean, ReduceAxis::Spatial)?;
        let hidden_pre = self.channel_down.forward_channels(&gap)?;
        let hidden = hidden_pre.map(|v| v.max(T::zero()));
        let wc = self.channel_up.forward_channels(&hidden)?.map(sigmoid);

        let pooled = Tensor::concat_channels(&[
            &reduce(&u, ReduceOp::Mean, ReduceAxis::Channel)?,
            &reduce(&u, ReduceOp::Max, ReduceAxis::Channel)?,
        ]);
        let ws = self.spatial.forward(&pooled)?.map(sigmoid);

        let mut a = u.add(&broadcast_to(&wc, c, h, w));
        a.add_assign(&broadcast_to(&ws, c, h, w));
        let p1 = self.pixel_dw.forward(&a)?;
        let wmap = self.pixel_pw.forward(&p1)?.map(sigmoid);

        let fused = Tensor::from_fn(&[c, h, w], |i| {
            let (xv, yv, wv) = (x.data()[i], y.data()[i], wmap.data()[i]);
            xv * wv + yv * (T::one() - wv)
        });
        let out = self.proj.forward(&fused)?;
        let cache = CgaCache {
            x: x.clone(),
            y: y.clone(),
            u,
            gap,
            hidden_pre,
            hidden,
            wc,
            pooled,
            ws,
            a,
            p1,
            w: wmap,
            fused,
        };
        Ok((out, cache))
    }

    /// Returns gradients for `(X, Y)`.
    pub fn backward(&mut self, k: &CgaCache<T>, dout: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (c, h, w) = k.x.chw();
        let dfused = self.proj.backward(&k.fused, dout)?;
        let d = dfused.data();
        let (xs, ys, ws) = (k.x.data(), k.y.data(), k.w.data());
        let mut dx = Tensor::from_fn(&[c, h, w], |i| d[i] * ws[i]);
        let mut dy = Tensor::from_fn(&[c, h, w], |i| d[i] * (T::one() - ws[i]));
        let dp2 = Tensor::from_fn(&[c, h, w], |i| d[i] * (xs[i] - ys[i]) * ws[i] * (T::one() - ws[i]));

        let dp1 = self.pixel_pw.backward(&k.p1, &dp2)?;
        let da = self.pixel_dw.backward(&k.a, &dp1)?;
        let mut du = da.clone();

        let dws = unbroadcast(&da, (1, h, w));
        let dsz = k.ws.zip_map(&dws, |s, g| g * s * (T::one() - s));
        let dpooled = self.spatial.backward(&k.pooled, &dsz)?;
        du.add_assign(&reduce_backward(&k.u, ReduceOp::Mean, ReduceAxis::Channel, &dpooled.channels(0, 1)));
        du.add_assign(&reduce_backward(&k.u, ReduceOp::Max, ReduceAxis::Channel, &dpooled.channels(1, 1)));

        let dwc = unbroadcast(&da, (c, 1, 1));
        let dz = k.wc.zip_map(&dwc, |s, g| g * s * (T::one() - s));
        let dhidden = self.channel_up.backward_channels(&k.hidden, &dz)?;
        let dhidden_pre = k.hidden_pre.zip_map(&dhidden, |z, g| if z > T::zero() { g } else { T::zero() });
        let dgap = self.channel_down.backward_channels(&k.gap, &dhidden_pre)?;
        du.add_assign(&reduce_backward(&k.u, ReduceOp::Mean, ReduceAxis::Spatial, &dgap));

        dx.add_assign(&du);
        dy.add_assign(&du);
        Ok((dx, dy))
    }
}

impl<T: Scalar> ParamSet<T> for Cga<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.channel_down.collect(&join(prefix, "channel_down"), out);
        self.channel_up.collect(&join(prefix, "channel_up"), out);
        self.spatial.collect(&join(prefix, "spatial"), out);
        self.pixel_dw.collect(&join(prefix, "pixel_dw"), out);
        self.pixel_pw.collect(&join(prefix, "pixel_pw"), out);
        self.proj.collect(&join(prefix, "proj"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.channel_down.collect_mut(&join(prefix, "channel_down"), out);
        self.channel_up.collect_mut(&join(prefix, "channel_up"), out);
        self.spatial.collect_mut(&join(prefix, "spatial"), out);
        self.pixel_dw.collect_mut(&join(prefix, "pixel_dw"), out);
        self.pixel_pw.collect_mut(&join(prefix, "pixel_pw"), out);
        self.proj.collect_mut(&join(prefix, "proj"), out);
    }
}
