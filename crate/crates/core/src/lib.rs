pub mod autograd;
#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod export;
pub mod influence;
pub mod latent;
pub mod layout;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
