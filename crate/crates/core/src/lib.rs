//! Metapath-based homophily metrics and a heterophily-aware heterogeneous
//! graph neural network.
//!
//! - [`hetgraph`]: typed graph storage, manifest/TSV ingestion, validation.
//! - [`metapath`]: metapath enumeration, induced subgraphs, mask and negative sampling.
//! - [`homophily`]: label homophily and Dirichlet energy, per metapath and aggregated.
//! - [`numcore`]: dense tensors, a reverse-mode tape, Adam and gradient checking.
//! - [`model`]: two-channel multi-view message passing and its training objective.
//! - [`harness`]: training loop, evaluation, bucketed reports, synthetic graphs.

pub mod error;
pub mod harness;
pub mod hetgraph;
pub mod homophily;
pub mod metapath;
pub mod model;
pub mod numcore;

pub use error::{Error, Result};
