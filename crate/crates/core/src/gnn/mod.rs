//! Full-batch GNN training on top of a dense or TT embedding table.
//!
//! Nodes carry no input features: layer 0 reads the embedding row of each
//! node and gradients flow back into the table (dense rows or TT cores).

mod backend;
pub mod experiment;
mod model;
mod train;

pub use backend::{BackendGrad, BackendSpec, EmbeddingBackend};
pub use model::{
    accuracy, gcn_aggregate, mean_aggregate, softmax_cross_entropy, ForwardCache, GnnModel, Layer, LayerType,
    ModelGrads,
};
pub use train::{evaluate, run_epochs, train, EpochMetrics, Evaluation, TrainConfig, TrainState};

use ndarray::Array2;

use crate::error::Result;
use crate::graph::CsrGraph;

/// Logits for `nodes`, computed from a full-graph pass.
pub fn forward(model: &GnnModel, backend: &EmbeddingBackend, graph: &CsrGraph, nodes: &[usize]) -> Result<Array2<f64>> {
    let all: Vec<usize> = (0..graph.num_nodes()).collect();
    let h0 = backend.lookup(&all)?;
    let cache = model.forward(graph, &h0)?;
    let logits = cache.logits();
    let mut out = Array2::zeros((nodes.len(), logits.ncols()));
    for (i, &v) in nodes.iter().enumerate() {
        if v >= graph.num_nodes() {
            return Err(crate::Error::IndexOutOfRange {
                index: v,
                rows: graph.num_nodes(),
            });
        }
        out.row_mut(i).assign(&logits.row(v));
    }
    Ok(out)
}
