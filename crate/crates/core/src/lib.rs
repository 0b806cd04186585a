pub mod analytic;
pub mod cli;
pub mod data;
pub mod error;
pub mod estimators;
pub mod latent;
pub mod metrics;
pub mod ndcore;
pub mod nets;
pub mod oracle;
pub mod train;

pub use error::{Error, Result};
