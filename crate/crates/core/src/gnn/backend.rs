use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{backward_lookup, CoreGradients};
use crate::init::{initialize, InitSpec};
use crate::rng;
use crate::tt::{TtConfig, TtEmbedding};

/// How the node embedding table is parameterized and initialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    /// Dense `M x N` table with i.i.d. Gaussian entries.
    Full { rows: usize, dim: usize, init_std: f64, seed: u64 },
    Tt { config: TtConfig, init: InitSpec },
}

impl BackendSpec {
    pub fn num_rows(&self) -> usize {
        match self {
            BackendSpec::Full { rows, .. } => *rows,
            BackendSpec::Tt { config, .. } => config.num_rows(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BackendSpec::Full { dim, .. } => *dim,
            BackendSpec::Tt { config, .. } => config.emb_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingBackend {
    Full(Array2<f64>),
    Tt(TtEmbedding),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendGrad {
    Full(Array2<f64>),
    Tt(CoreGradients),
}

impl BackendGrad {
    pub fn slices(&self) -> Vec<&[f64]> {
        match self {
            BackendGrad::Full(g) => vec![g.as_slice().expect("standard layout")],
            BackendGrad::Tt(g) => g
                .grads
                .iter()
                .map(|c| c.as_slice().expect("standard layout"))
                .collect(),
        }
    }
}

impl EmbeddingBackend {
    pub fn build(spec: &BackendSpec) -> Result<Self> {
        match spec {
            BackendSpec::Full {
                rows,
                dim,
                init_std,
                seed,
            } => {
                if !(init_std.is_finite() && *init_std >= 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "init_std must be finite and non-negative, got {init_std}"
                    )));
                }
                let normal = Normal::new(0.0, *init_std)
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                let mut rng = rng::seeded(*seed);
                let table = Array2::from_shape_simple_fn((*rows, *dim), || normal.sample(&mut rng));
                Ok(EmbeddingBackend::Full(table))
            }
            BackendSpec::Tt { config, init } => Ok(EmbeddingBackend::Tt(initialize(config, init)?)),
        }
    }

    pub fn num_rows(&self) -> usize {
        match self {
            EmbeddingBackend::Full(t) => t.nrows(),
            EmbeddingBackend::Tt(e) => e.config().num_rows(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingBackend::Full(t) => t.ncols(),
            EmbeddingBackend::Tt(e) => e.config().emb_dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            EmbeddingBackend::Full(t) => t.len(),
            EmbeddingBackend::Tt(e) => e.num_params(),
        }
    }

    pub fn lookup(&self, indices: &[usize]) -> Result<Array2<f64>> {
        match self {
            EmbeddingBackend::Full(t) => {
                let rows = t.nrows();
                let mut out = Array2::zeros((indices.len(), t.ncols()));
                for (position, &index) in indices.iter().enumerate() {
                    if index >= rows {
                        return Err(Error::BatchIndexOutOfRange {
                            position,
                            index,
                            rows,
                        });
                    }
                    out.row_mut(position).assign(&t.row(index));
                }
                Ok(out)
            }
            EmbeddingBackend::Tt(e) => e.lookup_batch(indices),
        }
    }

    /// Gradient of `sum_b <lookup(indices)[b], upstream[b]>` with respect to
    /// the backend parameters.
    pub fn backward(&self, indices: &[usize], upstream: ArrayView2<'_, f64>) -> Result<BackendGrad> {
        match self {
            EmbeddingBackend::Full(t) => {
                if upstream.dim() != (indices.len(), t.ncols()) {
                    return Err(Error::ShapeMismatch(format!(
                        "upstream is {:?}, expected ({}, {})",
                        upstream.dim(),
                        indices.len(),
                        t.ncols()
                    )));
                }
                let mut g = Array2::zeros(t.raw_dim());
                for (position, (&index, row)) in indices.iter().zip(upstream.rows()).enumerate() {
                    if index >= t.nrows() {
                        return Err(Error::BatchIndexOutOfRange {
                            position,
                            index,
                            rows: t.nrows(),
                        });
                    }
                    let mut dst = g.row_mut(index);
                    dst += &row;
                }
                Ok(BackendGrad::Full(g))
            }
            EmbeddingBackend::Tt(e) => Ok(BackendGrad::Tt(backward_lookup(e, indices, upstream)?)),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            EmbeddingBackend::Full(t) => vec![t.as_slice_mut().expect("standard layout")],
            EmbeddingBackend::Tt(e) => e
                .cores_mut()
                .iter_mut()
                .map(|c| c.as_slice_mut().expect("standard layout"))
                .collect(),
        }
    }
}
