//! Block-relevance content-based image retrieval.
//!
//! Images are split into `k x k` blocks, each described by a local binary
//! pattern histogram. A shallow `n/p/n` autoencoder trained on block pixels
//! scores how hard each block position is to encode for every class; the
//! easiest positions are dropped from the feature vectors before similarity
//! search, which shortens the vectors that a linear scan has to compare.

mod codec;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod relevance;
pub mod svm;
pub mod autoencoder;
pub mod pipeline;
pub mod retrieval;

pub use error::{Error, Result};
