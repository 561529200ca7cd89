//! Kernel-prediction burst denoising engine.
//!
//! The crate is `no_std` + `alloc`. It carries the differentiable tensor
//! substrate ([`tape`], [`ops`], [`optim`]), the per-pixel adaptive
//! convolution and reconstruction ([`adaconv`]), channel/spatial attention
//! ([`attention`]), the U-Net kernel predictor ([`net`]), the training
//! objective ([`objective`]), the synthetic burst pipeline ([`burstgen`]),
//! image-quality metrics ([`metrics`]) and the in-memory training loop
//! ([`train`]). File formats and the command-line driver live in the
//! `burstforge` companion crate.
#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod adaconv;
pub mod attention;
pub mod burstgen;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod net;
pub mod objective;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::ParamStore;
pub use tape::{Graph, Var};
pub use tensor::{DType, Real, Tensor};
