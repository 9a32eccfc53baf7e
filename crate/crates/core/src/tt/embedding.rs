use ndarray::{Array2, Array4};

use super::config::{RowCoordinate, TtConfig};
use crate::error::{Error, Result};

/// Upper bound on `rows * cols` for any routine that materializes the whole
/// logical table.
pub const MATERIALIZE_LIMIT: usize = 10_000_000;

/// A trainable embedding table stored as `d` TT-matrix cores.
///
/// Each core is held in `(R_prev, m, n, R_next)` row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct TtEmbedding {
    config: TtConfig,
    cores: Vec<Array4<f64>>,
}

impl TtEmbedding {
    pub fn new(config: TtConfig, cores: Vec<Array4<f64>>) -> Result<Self> {
        if cores.len() != config.num_cores() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} cores, got {}",
                config.num_cores(),
                cores.len()
            )));
        }
        for (k, core) in cores.iter().enumerate() {
            let want = config.core_shape(k);
            if core.shape() != want {
                return Err(Error::ShapeMismatch(format!(
                    "core {k} has shape {:?}, expected {:?}",
                    core.shape(),
                    want
                )));
            }
        }
        let cores = cores
            .into_iter()
            .map(|c| c.as_standard_layout().into_owned())
            .collect();
        Ok(TtEmbedding { config, cores })
    }

    pub fn zeros(config: TtConfig) -> Self {
        let cores = (0..config.num_cores())
            .map(|k| Array4::zeros(config.core_shape(k)))
            .collect();
        TtEmbedding { config, cores }
    }

    pub fn config(&self) -> &TtConfig {
        &self.config
    }

    pub fn cores(&self) -> &[Array4<f64>] {
        &self.cores
    }

    /// Mutable access to the cores. Shapes must not change.
    pub fn cores_mut(&mut self) -> &mut [Array4<f64>] {
        &mut self.cores
    }

    pub fn num_params(&self) -> usize {
        self.config.count_params()
    }

    fn checked_coordinate(&self, index: usize) -> Result<RowCoordinate> {
        let rows = self.config.num_rows();
        if index >= rows {
            return Err(Error::IndexOutOfRange { index, rows });
        }
        self.config.index_to_coordinate(index)
    }

    /// Row `index` of the table, truncated to the embedding dimension.
    pub fn reconstruct_row(&self, index: usize) -> Result<Vec<f64>> {
        let coord = self.checked_coordinate(index)?;
        let mut row = self.padded_row(coord.parts());
        row.truncate(self.config.emb_dim());
        Ok(row)
    }

    /// Full `prod(n)`-long row for a coordinate, padding rows included.
    ///
    /// Runs the chain `G_1[i_1] G_2[i_2] ... G_d[i_d]` where slice `k` is the
    /// `R_prev x (n_k R_next)` unfolding of `G_k(:, i_k, :, :)`. The running
    /// product is kept as a `(n_1..n_k) x R_k` row-major buffer.
    pub fn padded_row(&self, coord: &[usize]) -> Vec<f64> {
        let first = &self.cores[0];
        let [_, m0, n0, r0] = self.config.core_shape(0);
        debug_assert!(coord[0] < m0);
        let data = first.as_slice().expect("standard layout");
        let width = n0 * r0;
        let mut acc = data[coord[0] * width..(coord[0] + 1) * width].to_vec();
        let mut rows = n0;
        for k in 1..self.cores.len() {
            let [rp, mk, nk, rk] = self.config.core_shape(k);
            let core = self.cores[k].as_slice().expect("standard layout");
            let width = nk * rk;
            let mut next = vec![0.0; rows * width];
            for a in 0..rows {
                let out = &mut next[a * width..(a + 1) * width];
                for r in 0..rp {
                    let x = acc[a * rp + r];
                    let base = (r * mk + coord[k]) * width;
                    let slice = &core[base..base + width];
                    for (o, &g) in out.iter_mut().zip(slice) {
                        *o += x * g;
                    }
                }
            }
            acc = next;
            rows *= nk;
        }
        acc
    }

    /// Rows for every index in order, shape `(indices.len(), N)`.
    pub fn lookup_batch(&self, indices: &[usize]) -> Result<Array2<f64>> {
        let rows = self.config.num_rows();
        if let Some((position, &index)) = indices.iter().enumerate().find(|(_, &i)| i >= rows) {
            return Err(Error::BatchIndexOutOfRange {
                position,
                index,
                rows,
            });
        }
        let n = self.config.emb_dim();
        let mut out = Array2::zeros((indices.len(), n));
        for (b, &i) in indices.iter().enumerate() {
            let coord = self.config.index_to_coordinate(i)?;
            let row = self.padded_row(coord.parts());
            out.row_mut(b)
                .as_slice_mut()
                .expect("fresh array")
                .copy_from_slice(&row[..n]);
        }
        Ok(out)
    }

    /// Dense table. With `include_padding` the result is the full
    /// `prod(m) x prod(n)` logical table, otherwise the served `M x N` block.
    pub fn materialize(&self, include_padding: bool) -> Result<Array2<f64>> {
        let (rows, cols) = if include_padding {
            (self.config.padded_rows(), self.config.padded_cols())
        } else {
            (self.config.num_rows(), self.config.emb_dim())
        };
        let entries = rows.saturating_mul(cols);
        if entries > MATERIALIZE_LIMIT {
            return Err(Error::TooLarge {
                entries,
                limit: MATERIALIZE_LIMIT,
            });
        }
        let mut out = Array2::zeros((rows, cols));
        for i in 0..rows {
            let coord = self.config.index_to_coordinate(i)?;
            let row = self.padded_row(coord.parts());
            for (dst, src) in out.row_mut(i).iter_mut().zip(&row) {
                *dst = *src;
            }
        }
        Ok(out)
    }
}
