//! The implicit two-path autoencoder (ITAE).
//!
//! A static encoder sees every `tau`-th frame, a dynamic encoder sees all
//! `T` frames, time-strided lateral convolutions carry dynamic features into
//! the static path, and a single decoder reconstructs the clip from the
//! channel-fused latent.

mod clip;
mod loss;
mod model;
mod train;

pub use clip::VideoClip;
pub use loss::{
    ms_ssim, msssim_scales, recon_loss, recon_loss_var, ReconLoss, ReconLossReport, MSSSIM_WEIGHTS,
};
pub use model::{EncoderMode, ItaeConfig, ItaeForward, ItaeModel, LayerShape};
pub use train::{train_itae, ItaeTrainConfig, ItaeTrainReport};
