//! Glow-style normalizing flow with exact log-likelihood.

mod layers;
mod stack;
mod train;

pub use layers::{ActNorm, AffineCoupling, FlowStep, InvConv1x1};
pub use stack::{
    bits_per_dim, FlowConfig, FlowForward, FlowLevel, FlowStack, GaussianPrior, LayerLogdet,
    NllReport,
};
pub use train::{gather, train_flow, FlowTrainConfig, FlowTrainReport};
