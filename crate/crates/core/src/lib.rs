//! Compressed-domain nearest-neighbor search with polysemous codes.
//!
//! A polysemous code is a product-quantization code whose centroid labels
//! have been permuted so that the raw bytes are also a useful binary code.
//! Search can then discard most of the database with a cheap Hamming test
//! and re-rank the survivors with the asymmetric (lookup table) distance.

pub mod coarseindex;
pub mod config;
pub mod dataio;
pub mod distance;
pub mod error;
pub mod eval;
pub mod flatindex;
mod par;
pub mod pipeline;
pub mod polyopt;
pub mod pqcore;
pub mod synthetic;

pub use dataio::{VecFormat, VectorSet};
pub use error::{Error, Result};
pub use flatindex::{FlatIndex, ResultList, SearchParams, Strategy};
pub use polyopt::{AnnealSchedule, LossKind, PolyConfig};
pub use pqcore::{PqConfig, ProductQuantizer};
