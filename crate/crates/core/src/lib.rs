pub mod autodiff;
pub mod bridge;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod data;
pub mod error;
pub mod flow;
pub mod itae;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scoring;
pub mod tensor;

pub use autodiff::{Gradients, Param, ParamId, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Shape5, Tensor5};

// the guide's code blocks run as doc-tests
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/autoencoder.md")]
    mod autoencoder {}
    #[doc = include_str!("../../../book/src/flows.md")]
    mod flows {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
