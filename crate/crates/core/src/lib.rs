//! memcirc — circuit discovery for memorization behavior in toy
//! decoder-only transformers.
//!
//! The crate covers the full pipeline:
//!
//! 1. [`corpus`] generates synthetic domain-flavored corpora and [`trainer`]
//!    trains a small transformer until a target subset is perfectly
//!    memorized.
//! 2. [`dataset`] scores memorization, locates divergence points, and builds
//!    the two contrastive datasets (memorization decision, branch
//!    comparison).
//! 3. [`model`] exposes the transformer as an explicit edge graph over the
//!    residual stream; [`patching`] executes interventions on that graph and
//!    [`attribution`] scores every edge with integrated-gradient attribution.
//! 4. [`circuit`] searches for minimal faithful circuits and [`harness`]
//!    runs the verification matrix (random baselines, cross-task,
//!    cross-corpus, alternative ablations) and emits report tables.
//!
//! Math is generic over the scalar type ([`scalar::Scalar`]); the pipeline
//! instantiates everything at `f64` via the aliases below.

pub mod attribution;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod trainer;
pub mod model;
pub mod patching;
pub mod scalar;
pub mod stats;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};

/// Working-precision tensor used by the pipeline.
pub type Tensor = tensor::TensorBase<f64>;
/// Working-precision tape.
pub type Tape = tape::Tape<f64>;
