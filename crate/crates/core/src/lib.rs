pub mod augment;
pub mod autograd;
pub mod error;
pub mod pca;
pub mod rng;
pub mod signal;
pub mod split;
pub mod synth;

pub use error::{Error, Result};
pub mod nn;
pub mod diffusion;
pub mod dit;
pub mod encoder;
pub mod optim;
pub mod config;
pub mod model;
pub mod checkpoint;
pub mod metrics;
pub mod downstream;
pub mod pipeline;
