//! Gradients of batched TT lookups and first-order optimizers.
//!
//! For a row with coordinate `(i_1, ..., i_d)` the lookup is
//! `w = L_k G_k[i_k] R_k`, where `L_k` is the chained product of the slices
//! before core `k` (shape `n_<k x R_prev`) and `R_k` the product after it
//! (shape `R_next x n_>k`). The gradient of `<w, g>` with respect to the
//! slice is therefore `dG_k(a, j, b) = sum L_k(x, a) g(x, j, y) R_k(b, y)`.
//! Only slice `i_k` of each core is touched by a row, but every row touches
//! every core, so gradients are kept dense.

use std::collections::BTreeMap;

use ndarray::{Array2, Array4, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tt::TtEmbedding;

/// Dense per-core gradients, shaped like the cores.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreGradients {
    pub grads: Vec<Array4<f64>>,
    pub batch_count: usize,
}

impl CoreGradients {
    pub fn zeros_like(emb: &TtEmbedding) -> Self {
        CoreGradients {
            grads: emb.cores().iter().map(|c| Array4::zeros(c.raw_dim())).collect(),
            batch_count: 0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Gradient of `sum_b <lookup(indices[b]), upstream[b]>` with respect to
/// every core.
///
/// Rows sharing an index are summed first and the index is processed once,
/// in ascending order, so the accumulation order is fixed.
pub fn backward_lookup(
    emb: &TtEmbedding,
    indices: &[usize],
    upstream: ArrayView2<'_, f64>,
) -> Result<CoreGradients> {
    let config = emb.config();
    let n = config.emb_dim();
    if upstream.nrows() != indices.len() || upstream.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "upstream is {}x{}, expected {}x{}",
            upstream.nrows(),
            upstream.ncols(),
            indices.len(),
            n
        )));
    }
    let rows = config.num_rows();
    let padded = config.padded_cols();
    let mut merged: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (position, (&index, g)) in indices.iter().zip(upstream.rows()).enumerate() {
        if index >= rows {
            return Err(Error::BatchIndexOutOfRange {
                position,
                index,
                rows,
            });
        }
        let acc = merged.entry(index).or_insert_with(|| vec![0.0; padded]);
        for (a, &x) in acc.iter_mut().zip(g.iter()) {
            *a += x;
        }
    }

    let mut out = CoreGradients::zeros_like(emb);
    out.batch_count = indices.len();
    for (index, g) in &merged {
        let coord = config.index_to_coordinate(*index)?;
        accumulate_row(emb, coord.parts(), g, &mut out.grads);
    }
    Ok(out)
}

fn accumulate_row(emb: &TtEmbedding, coord: &[usize], g: &[f64], grads: &mut [Array4<f64>]) {
    let config = emb.config();
    let d = config.num_cores();
    let cores = emb.cores();
    let slice = |k: usize| -> (Vec<f64>, [usize; 4]) {
        let shape = config.core_shape(k);
        let [rp, mk, nk, rn] = shape;
        let data = cores[k].as_slice().expect("standard layout");
        let width = nk * rn;
        let mut s = Vec::with_capacity(rp * width);
        for r in 0..rp {
            let base = (r * mk + coord[k]) * width;
            s.extend_from_slice(&data[base..base + width]);
        }
        (s, shape)
    };
    let slices: Vec<(Vec<f64>, [usize; 4])> = (0..d).map(slice).collect();

    // left[k]: (prod n_<k) x R_k, row-major
    let mut left: Vec<Array2<f64>> = Vec::with_capacity(d);
    left.push(Array2::ones((1, 1)));
    for k in 0..d - 1 {
        let (s, [rp, _, nk, rn]) = &slices[k];
        let unfold = ArrayView2::from_shape((*rp, nk * rn), s).expect("slice shape");
        let prod = left[k].dot(&unfold);
        let rows = prod.nrows() * nk;
        left.push(prod.into_shape_with_order((rows, *rn)).expect("reshape"));
    }
    // right[k]: R_{k+1} x (prod n_>k)
    let mut right: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); d];
    right[d - 1] = Array2::ones((1, 1));
    for k in (1..d).rev() {
        let (s, [rp, _, nk, rn]) = &slices[k];
        let unfold = ArrayView2::from_shape((rp * nk, *rn), s).expect("slice shape");
        let prod = unfold.dot(&right[k]);
        let cols = nk * prod.ncols();
        right[k - 1] = prod.into_shape_with_order((*rp, cols)).expect("reshape");
    }

    for k in 0..d {
        let [rp, _, nk, rn] = slices[k].1;
        let l = &left[k];
        let r = &right[k];
        let before = l.nrows();
        let after = r.ncols();
        let grad = grads[k].as_slice_mut().expect("standard layout");
        let mk = config.row_factors()[k];
        for j in 0..nk {
            // block of g with the k-th column digit fixed: before x after
            let mut block = Array2::zeros((before, after));
            for x in 0..before {
                let off = (x * nk + j) * after;
                block
                    .row_mut(x)
                    .as_slice_mut()
                    .unwrap()
                    .copy_from_slice(&g[off..off + after]);
            }
            let contrib = l.t().dot(&block).dot(&r.t());
            for a in 0..rp {
                for b in 0..rn {
                    grad[((a * mk + coord[k]) * nk + j) * rn + b] += contrib[[a, b]];
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam(1e-3)
    }
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            ..OptimizerConfig::adam(learning_rate)
        }
    }
}

/// Optimizer state for an ordered list of parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Update every group in place. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter groups but {} gradient groups",
                params.len(),
                grads.len()
            )));
        }
        for (group, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::ShapeMismatch(format!(
                    "group {group}: {} parameters, {} gradients",
                    p.len(),
                    g.len()
                )));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { group });
            }
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != grads.len()
            || self.first.iter().zip(grads).any(|(m, g)| m.len() != g.len())
        {
            return Err(Error::ShapeMismatch(
                "parameter groups changed between steps".into(),
            ));
        }
        self.step += 1;
        let c = self.config;
        match c.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, &dx) in p.iter_mut().zip(g.iter()) {
                        *x -= c.learning_rate * (dx + c.weight_decay * *x);
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for i in 0..p.len() {
                        let dx = g[i] + c.weight_decay * p[i];
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * dx;
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * dx * dx;
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        p[i] -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Apply one optimizer step to the cores.
pub fn apply_update(
    emb: &mut TtEmbedding,
    grads: &CoreGradients,
    opt: &mut OptimizerState,
) -> Result<()> {
    if grads.grads.len() != emb.cores().len()
        || grads
            .grads
            .iter()
            .zip(emb.cores())
            .any(|(g, c)| g.shape() != c.shape())
    {
        return Err(Error::ShapeMismatch(
            "gradient shapes do not match cores".into(),
        ));
    }
    let g: Vec<&[f64]> = grads
        .grads
        .iter()
        .map(|g| g.as_slice().expect("standard layout"))
        .collect();
    let mut p: Vec<&mut [f64]> = emb
        .cores_mut()
        .iter_mut()
        .map(|c| c.as_slice_mut().expect("standard layout"))
        .collect();
    opt.step(&mut p, &g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{init_gaussian, InitMethod, InitSpec};
    use crate::tt::{uniform_ranks, TtConfig};

    fn small() -> TtEmbedding {
        let c = TtConfig::new(12, 8, vec![3, 2, 2], vec![2, 2, 2], vec![1, 3, 2, 1]).unwrap();
        init_gaussian(&c, &InitSpec::new(InitMethod::Gaussian, 4).with_std(0.7)).unwrap()
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let e = small();
        let up = Array2::zeros((3, 8));
        let g = backward_lookup(&e, &[0, 5, 11], up.view()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert_eq!(g.batch_count, 3);
    }

    #[test]
    fn rank_one_product_rule() {
        // d=2, all ranks 1, one row and one column per core: w = a * b
        let c = TtConfig::new(1, 1, vec![1, 1], vec![1, 1], uniform_ranks(2, 1)).unwrap();
        let mut e = TtEmbedding::zeros(c);
        e.cores_mut()[0][[0, 0, 0, 0]] = 3.0;
        e.cores_mut()[1][[0, 0, 0, 0]] = -2.0;
        let up = ndarray::array![[5.0]];
        let g = backward_lookup(&e, &[0], up.view()).unwrap();
        assert_eq!(g.grads[0][[0, 0, 0, 0]], -10.0);
        assert_eq!(g.grads[1][[0, 0, 0, 0]], 15.0);
    }

    #[test]
    fn shape_and_index_errors() {
        let e = small();
        assert!(backward_lookup(&e, &[0, 1], Array2::zeros((3, 8)).view()).is_err());
        assert!(backward_lookup(&e, &[0], Array2::zeros((1, 7)).view()).is_err());
        assert!(matches!(
            backward_lookup(&e, &[0, 12], Array2::zeros((2, 8)).view()),
            Err(Error::BatchIndexOutOfRange { position: 1, .. })
        ));
    }

    #[test]
    fn sgd_zero_gradient_is_noop() {
        let mut e = small();
        let before = e.clone();
        let g = CoreGradients::zeros_like(&e);
        let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.1));
        apply_update(&mut e, &g, &mut opt).unwrap();
        assert_eq!(e, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        for scale in [1e-3, 1.0, 1e6] {
            let mut p = vec![0.0; 3];
            let g = vec![scale, -scale, 2.0 * scale];
            let mut opt = OptimizerState::new(OptimizerConfig::adam(1e-3));
            opt.step(&mut [&mut p[..]], &[&g[..]]).unwrap();
            for x in &p {
                assert!((x.abs() - 1e-3).abs() < 1e-6, "{scale}: {x}");
            }
        }
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut e = small();
        let before = e.clone();
        let mut g = CoreGradients::zeros_like(&e);
        g.grads[1][[0, 0, 0, 0]] = f64::NAN;
        let mut opt = OptimizerState::new(OptimizerConfig::adam(1e-3));
        assert!(matches!(
            apply_update(&mut e, &g, &mut opt),
            Err(Error::NonFiniteGradient { group: 1 })
        ));
        assert_eq!(e, before);
        assert_eq!(opt.step, 0);
    }
}
