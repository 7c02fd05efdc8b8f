//! Incremental refinement lab for neural terrain fields.
//!
//! A frozen base field trained on an initial set of synthetic satellite-like
//! views is corrected by a zero-initialized residual controller trained only
//! on later views, fused at inference through uncertainty-aware gating,
//! compressed by distillation, and fed by a depth-aware view-selection
//! pipeline. A baseline suite (joint, initial-only, finetune, finetune+KD,
//! EWC) measures catastrophic forgetting against it.

pub mod autodiff;
pub mod checkpoint;
pub mod controller;
pub mod error;
pub mod field;
pub mod gate;
pub mod geom;
pub mod img;
pub mod metrics;
pub mod render;
pub mod experiment;
pub mod scene;
pub mod select;
pub mod train;

pub use error::{Error, Result};
