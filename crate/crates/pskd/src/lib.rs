//! Desk-scale laboratory for progressive self-knowledge distillation.
//!
//! Train small dense classifiers with hard targets, label smoothing,
//! classic knowledge distillation, or progressive self-distillation (the
//! model's own epoch-(t-1) predictions as the teacher, trusted more as
//! training proceeds); verify the gradient-rescaling theory behind the
//! method analytically; and measure accuracy together with
//! confidence-estimation quality (NLL, ECE, AURC).
//!
//! Modules:
//! - [`nn`]: dense feed-forward nets, softmax/cross-entropy, exact backprop
//!   and its finite-difference oracle
//! - [`targets`]: soft-target construction and the distillation losses
//! - [`grad`]: closed-form logit gradients, L1-norm identity, rescaling
//!   factors, hard-example reports
//! - [`store`]: epoch-(t-1) teachers (model snapshot or on-disk cache)
//! - [`trainer`]: SGD loop with per-epoch teacher refresh and history
//! - [`metrics`]: top-k error, NLL, ECE, AURC, reliability bins, ensembles
//! - [`data`]: synthetic blob/spiral generators, CSV and IDX loaders
//! - [`cli`]: the `pskd` command-line front end

pub mod cli;
pub mod data;
pub mod error;
pub mod grad;
pub mod metrics;
pub mod nn;
pub mod store;
pub mod targets;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
