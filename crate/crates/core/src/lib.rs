//! Tensor-train compressed embedding tables for graph neural networks.
//!
//! The crate is organised around the lookup pipeline of a TT-matrix
//! embedding: a flat node id is split into per-core coordinates, one slice is
//! taken from every core, and the row is rebuilt by a short chain of small
//! matrix products.
//!
//! - [`tt`]: factorization plans, core storage, row reconstruction and the
//!   binary core format.
//! - [`init`]: Gaussian, orthogonal-core and TT-SVD based initialisers plus
//!   the column-orthogonality check.
//! - [`grad`]: gradients of a batched lookup with respect to every core and
//!   SGD/Adam updates.
//! - [`graph`]: CSR graphs, stochastic block models, multilevel partitioning
//!   and hierarchical node reordering.
//! - [`gnn`]: a small full-batch GraphSage/GCN harness with interchangeable
//!   dense and TT embedding backends.

pub mod error;
pub mod gnn;
pub mod grad;
pub mod graph;
pub mod init;
pub mod linalg;
pub mod rng;
pub mod tt;

pub use error::{Error, Result};
pub use tt::{RowCoordinate, TtConfig, TtEmbedding};
