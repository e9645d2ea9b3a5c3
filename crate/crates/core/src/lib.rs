//! Hybrid quantum-classical convolutional classifier.
//!
//! The pipeline: grayscale volumes are normalized, energy-ranked, reduced by
//! PCA, and angle-scaled into feature vectors; a parameterized circuit with
//! learnable per-feature weighting, ring-topology convolution blocks, and
//! folding pooling runs on a dense state-vector simulator; Pauli-Z readouts
//! feed a dense+softmax head trained end-to-end with exact gradients.
//!
//! Modules mirror the pipeline stages: [`preprocess`] and [`data`] on the
//! classical side, [`statevec`]/[`circuit`]/[`model`] for the quantum model,
//! [`train`]/[`eval`]/[`noise`] for experiments.

pub mod circuit;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod noise;
pub mod preprocess;
pub mod rng;
pub mod statevec;
pub mod train;

pub use error::{Error, Result};
