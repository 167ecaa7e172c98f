//! Unsupervised linear alignment of two independently trained embedding spaces.

pub mod adversarial;
pub mod benchmark;
pub mod cluster;
pub mod error;
pub mod evaluation;
pub mod instances;
pub mod mapping;
pub mod pipeline;
pub mod refine;
pub mod retrieval;
pub mod sgns;
pub mod store;

pub use error::{Error, Result};
pub use nalgebra;
