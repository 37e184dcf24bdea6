//! Semantic embedding enhancement for sequential recommenders.
//!
//! Items and users carry frozen semantic vectors. Each item is enhanced by
//! retrieving its nearest neighbours, gating three views (self, similar,
//! global) and fusing them through a small MLP. The enhanced rows then feed a
//! GRU4Rec or SASRec backbone trained with binary cross-entropy.

pub mod backbone;
pub(crate) mod binio;
pub mod cli;
pub mod dataset;
pub mod embedstore;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod hae;
pub mod model;
pub mod nn;
pub mod rng;
pub mod trainer;

pub use error::{GraspError, Result};
