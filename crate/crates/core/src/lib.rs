//! Multi-task attentive graph convolution for one-class recommendation.
//!
//! Users and items share one embedding table `R⁰`. A stack of `K − 1`
//! attentive graph convolution layers over the user–item bipartite graph
//! produces further representation sets `R¹ … R^{K−1}`. Every set is trained
//! with its own BPR ranking loss and the losses are averaged. At evaluation
//! time the rows of all sets are concatenated and items are ranked by inner
//! product.
//!
//! Module map:
//!
//! - [`dataio`]: interaction ingestion, k-core filtering, splitting, the
//!   canonical corpus file.
//! - [`graph`]: the bipartite adjacency in compressed form.
//! - [`compute`]: tensors, the gradient tape, Xavier init, Adam and
//!   checkpoints.
//! - [`model`]: attentive convolution layers and the `K` representation sets.
//! - [`train`]: negative sampling, BPR losses, epochs and early stopping.
//! - [`eval`]: full-ranking Recall@N and NDCG@N.
//! - [`config`]: the flat `key = value` run configuration.
//! - [`cli`]: the commands behind the `prefrank` binary.

pub mod cli;
pub mod compute;
pub mod config;
pub mod dataio;
pub mod eval;
pub mod graph;
pub mod model;
pub mod train;

mod error;

pub use error::{Error, Result};
