//! Physically grounded relighting toolkit.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`light`]: light parameters, SH direction encoding and the 11-dim
//!   relative-illumination vector Δℓ.
//! - [`render`]: an analytic GGX renderer with hard shadows and G-buffers.
//! - [`dataset`]: multi-view, multi-light dataset generation and pair sampling.
//! - [`mask`]: lighting-aware masks, loss weight maps and the mask predictor.
//! - [`proxy`]: the few-shot per-pixel PBR proxy encoder.
//! - [`dpo`]: preference refinement of the encoder against a frozen reference.
//! - [`relight`]: the analytic relighting operator.
//! - [`metrics`]: RMSE/PSNR/SSIM and grouped evaluation reports.
//! - [`pipeline`]: stage orchestration used by the command-line tool.

pub mod dataset;
pub mod dpo;
pub mod edit;
pub mod error;
pub mod fixtures;
pub mod image;
pub mod json;
pub mod light;
pub mod mask;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod proxy;
pub mod relight;
pub mod render;

pub use error::{Error, Result};
