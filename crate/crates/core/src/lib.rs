//! Progressive pseudo-labeling for semi-supervised re-identification on
//! precomputed embeddings.
//!
//! Labeled identities guide clustering of the unlabeled pool through
//! semantics-guided affinity propagation; reliable cluster members are
//! selected under a growing distance threshold and used, with soft labels,
//! to refine a linear embedding map.

pub mod affinity;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod refiner;
pub mod selection;
pub mod sgap;

pub use error::{Error, Result};
