//! Stochastic-attribute face super-resolution at desk scale.
//!
//! An LR image's information splits into deterministic attributes (fully
//! recoverable by a plain encoder-decoder) and stochastic attributes that
//! survive downsampling only partially. This crate trains the split in two
//! phases: first the SR encoder-decoder plus a residual encoder that packs
//! whatever the deterministic path missed into a diagonal-Gaussian latent,
//! then a predictor that infers that latent distribution from the LR image
//! alone. Synthetic data with known attribute structure, PSNR/SSIM
//! evaluation studies, and binary checkpointing round out the pipeline.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod latent;
pub mod models;
pub mod params;
pub mod train;

pub use config::ArchConfig;
pub use error::{Error, Result};
pub use params::{Binding, ParamSet};
