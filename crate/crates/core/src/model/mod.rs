//! Channel, covariance, fading and feedback models, plus all random sampling.

mod bank;
mod channel;
mod fading;
mod quantizer;

pub use bank::{build_sample_bank, sample_rng, CsitModel, OuterCell, SampleBank};
pub use channel::{
    random_gaussian, ChannelSpec, ChannelTemplate, CovarianceSpec, Dimensions, FactorSpec, Field, PSD_CLIP_TOL,
};
pub use fading::{sample_h, Correlation, FadingModel};
pub use quantizer::{
    design_uniform_quantizer, gaussian_mse, quantize_h, sample_h_given_hhat, sample_truncated_normal, Quantizer,
    MAX_BITS,
};
