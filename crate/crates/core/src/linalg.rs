//! Small dense linear-algebra kernels used by the initialisers.
//!
//! Matrices here are at most a few thousand entries on a side, so the
//! routines favour accuracy and determinism over blocking or SIMD.

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Relative tolerance for the Jacobi off-diagonal test.
pub const SVD_TOL: f64 = 1e-12;
const SVD_MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `a = u * diag(s) * vt`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// rows x k, orthonormal columns for nonzero singular values
    pub u: Array2<f64>,
    /// k singular values in non-increasing order
    pub s: Array1<f64>,
    /// k x cols
    pub vt: Array2<f64>,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Rebuild `u[:, ..k] * diag(s[..k]) * vt[..k, :]`.
    pub fn reconstruct(&self, k: usize) -> Array2<f64> {
        let k = k.min(self.rank());
        let mut us = self.u.slice(ndarray::s![.., ..k]).to_owned();
        for (mut col, &sv) in us.axis_iter_mut(Axis(1)).zip(self.s.iter()) {
            col *= sv;
        }
        us.dot(&self.vt.slice(ndarray::s![..k, ..]))
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Works on the columns of the taller orientation; a wide input is handled
/// through its transpose.
pub fn svd(a: &Array2<f64>) -> Result<Svd> {
    let (rows, cols) = a.dim();
    if rows < cols {
        let t = svd(&a.t().to_owned())?;
        return Ok(Svd {
            u: t.vt.t().to_owned(),
            s: t.s,
            vt: t.u.t().to_owned(),
        });
    }
    let n = cols;
    let m = rows;
    // column-major working copies: w[j] is column j of A, v[j] column j of V
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = n < 2;
    for _ in 0..SVD_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (wp, wq) = (&w[p], &w[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..m {
                        alpha += wp[i] * wp[i];
                        beta += wq[i] * wq[i];
                        gamma += wp[i] * wq[i];
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= SVD_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: SVD_MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = w
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));

    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let mut u = Array2::zeros((m, n));
    let mut s = Array1::zeros(n);
    let mut vt = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        s[dst] = sigma;
        if sigma > scale * f64::EPSILON * (m as f64) && sigma > 0.0 {
            for i in 0..m {
                u[[i, dst]] = w[src][i] / sigma;
            }
        }
        for i in 0..n {
            vt[[dst, i]] = v[src][i];
        }
    }
    Ok(Svd { u, s, vt })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Orthonormalise the columns of `a` in place with modified Gram-Schmidt,
/// run twice per column. Returns the index of the first column whose
/// residual collapsed below `1e-10` of its original norm.
///
/// This is the Q factor of a QR decomposition whose R has a positive
/// diagonal.
pub fn orthonormalize_columns(a: &mut Array2<f64>) -> std::result::Result<(), usize> {
    let cols = a.ncols();
    for j in 0..cols {
        let original = a.column(j).dot(&a.column(j)).sqrt();
        for _pass in 0..2 {
            for k in 0..j {
                let proj = a.column(k).dot(&a.column(j));
                let qk = a.column(k).to_owned();
                a.column_mut(j).scaled_add(-proj, &qk);
            }
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        if !(norm > 1e-10 * original) || original == 0.0 {
            return Err(j);
        }
        a.column_mut(j).mapv_inplace(|x| x / norm);
    }
    Ok(())
}

/// I.i.d. standard normal matrix.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Haar-distributed column-orthogonal `rows x cols` matrix (`rows >= cols`),
/// drawn as the Q factor of a Gaussian matrix with positive-diagonal R.
pub fn random_orthogonal(rows: usize, cols: usize, rng: &mut Rng) -> Result<Array2<f64>> {
    if cols > rows {
        return Err(Error::ShapeMismatch(format!(
            "column-orthogonal matrix needs rows >= cols, got {rows}x{cols}"
        )));
    }
    for _ in 0..8 {
        let mut g = gaussian_matrix(rows, cols, rng);
        if orthonormalize_columns(&mut g).is_ok() {
            return Ok(g);
        }
    }
    Err(Error::DegenerateGramSchmidt {
        core: 0,
        attempts: 8,
    })
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
