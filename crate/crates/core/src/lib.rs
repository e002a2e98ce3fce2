//! Evidence-based out-of-context (OOC) detection over precomputed image/text
//! embeddings.
//!
//! The pipeline is:
//!
//! 1. [`data`] loads or synthesizes datasets of claim pairs with candidate
//!    image and text evidence.
//! 2. [`features`] re-ranks evidence (top-1 by intra-modal cosine) and builds
//!    the six-component multimodal similarity vector.
//! 3. [`tabular`] fits decision trees, random forests and a small MLP on those
//!    similarities; [`aitr`] trains a transformer that attends over the
//!    classification tokens of every encoder layer.
//! 4. [`eval`] computes accuracies, the out-of-distribution cross-validation
//!    protocol, limited-data curves, ablations and distribution reports.

pub mod aitr;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod optim;
pub mod rng;
pub mod tabular;

pub use error::{Error, Result};
