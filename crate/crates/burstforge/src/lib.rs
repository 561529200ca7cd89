//! File formats, image IO and the command-line driver for `burstforge-core`.

pub mod bundle;
pub mod ckptfile;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod gain;
pub mod imageio;
pub mod inference;
pub mod manifest;

pub use error::{Error, Result};
