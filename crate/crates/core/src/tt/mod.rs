//! TT-matrix representation of an embedding table.
//!
//! A row index `i` of an `M x N` table is written in mixed radix over the row
//! factors `m_1..m_d` and the row is the chained product of one slice from
//! every core. See [`TtEmbedding::padded_row`] for the kernel.

mod config;
mod embedding;
pub mod io;

pub use config::{
    balanced_factors, integer_root_ceil, plan_factorization, uniform_ranks, RowCoordinate,
    TtConfig,
};
pub use embedding::{TtEmbedding, MATERIALIZE_LIMIT};
