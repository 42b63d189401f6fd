//! Trainable blocks of the fusion network.

mod adapter;
mod cga;
mod channel;
mod rfb;
mod sff;
mod wavelet;

pub use adapter::{bottleneck_width, Adapter, AdapterCache};
pub use cga::{Cga, CgaCache};
pub use channel::{channel_resample, channel_resample_backward};
pub use rfb::{Rfb, RfbCache, RFB_DILATIONS};
pub use sff::{Head, Sff, SffCache};
pub use wavelet::{haar_dwt2, haar_idwt2, pad_to_even, Wtd, WtdCache};
