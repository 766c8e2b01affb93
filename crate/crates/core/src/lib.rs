//! Spectral node-robustness scoring for graph neural networks.
//!
//! A GCN trained on an input graph produces node embeddings; a kNN graph over
//! those embeddings is the output graph. The top eigenpairs of the Laplacian
//! pencil `(L_in, L_out)` measure how much the model distorts each input
//! edge, and averaging that distortion over a node's neighbors gives its
//! SPADE score. The [`pipeline`] module uses the lowest-scoring nodes to train
//! a second GCN and labels the rest by nearest class centroid.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod knn;
pub mod par;
pub mod pipeline;
pub mod spade;
pub mod spectral;

pub use error::{Error, ErrorKind, Result};
