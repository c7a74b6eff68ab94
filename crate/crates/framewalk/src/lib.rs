//! framewalk: image restoration as progressive trajectory generation.
//!
//! A degraded image is treated as the first frame of a short clip and its
//! clean counterpart as the last; a small conditional spatio-temporal model
//! learns the whole quality trajectory. The crate bundles everything the
//! pipeline needs at desk scale: a minimal reverse-mode autodiff tensor
//! library, AdamW with warmup and gradient clipping, image I/O and
//! resampling, seeded synthetic degradations, pseudo-temporal clip
//! construction, curriculum training, drift correction, guided flow
//! sampling, and exact PSNR/SSIM evaluation with per-category reports.
//!
//! See `examples/` for one runnable program per capability and the
//! `framewalk` binary for the pipeline CLI.

pub mod clip;
pub mod degrade;
pub mod error;
pub mod graph;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod sampler;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{finite_diff_check, Graph, NodeId};
pub use optim::{clip_grad_norm, lr_at_step, OptimizerConfig, OptimizerState, Param, ParamSet};
pub use tensor::{Element, Tensor};
