//! Streaming coresets for `(k, z)`-clustering and online `L_p` subspace embeddings.

pub mod cli;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod merge_reduce;
pub mod oracle;
pub mod pipeline;
pub mod quadtree;
pub mod rng;
pub mod sensitivity;
pub mod solvers;
pub mod subspace;

pub use error::{Error, Result};
