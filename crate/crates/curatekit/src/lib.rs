//! Scalable data-curation engine: ANN-backed active learning, GMM typicality
//! filtering, multi-model annotation fusion, detection-quality metrics, and a
//! benchmarking harness, composed behind one pipeline runner and CLI.

pub mod error;
pub mod matrix;
pub mod pool;

pub mod kmeans;

pub mod index;

pub mod al;

pub mod ood;

pub mod fusion;

pub mod eval;

pub mod bench;

pub mod pipeline;

pub use error::{Error, Result};
