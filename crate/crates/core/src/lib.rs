//! Unsupervised 3D partitioning with per-partition autoencoders, plus the
//! evaluation and representation-learning tooling around it.
//!
//! The crate is organized bottom-up: [`diffengine`] provides tensors and
//! reverse-mode differentiation, [`nets`] builds the partitioning U-Net and
//! the low-capacity autoencoders on top of it, [`losses`] defines the
//! reconstruction / neighborhood-similarity / anti-devouring objective and
//! [`trainer`] minimizes it with Adam. [`volio`], [`evalmetrics`] and
//! [`repr`] cover data handling, evaluation and downstream regression.

pub mod diffengine;
pub mod error;
pub mod evalmetrics;
pub mod losses;
pub mod nets;
pub mod par;
pub mod repr;
pub mod trainer;
pub mod volio;

pub use error::{Error, Result};
