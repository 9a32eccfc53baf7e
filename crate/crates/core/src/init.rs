//! Core initialisers.
//!
//! Three ways to produce starting cores:
//!
//! - [`init_gaussian`]: i.i.d. normal entries.
//! - [`init_ortho_core`]: each core is filled with orthonormal slice vectors
//!   so that the product table is column orthogonal without ever forming it.
//! - [`init_decomp_ortho`]: draw a random column-orthogonal table and run
//!   TT-SVD on it ([`tt_svd`]).
//!
//! [`verify_orthogonality`] materializes the table and measures how far `W^T W` is
//! from a multiple of the identity.

use ndarray::{Array2, Array4};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, gaussian_matrix, orthonormalize_columns};
use crate::rng::{self, Rng};
use crate::tt::{TtConfig, TtEmbedding, MATERIALIZE_LIMIT};

const GRAM_SCHMIDT_RETRIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMethod {
    Gaussian,
    OrthoCore,
    DecompOrtho,
}

impl std::str::FromStr for InitMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(InitMethod::Gaussian),
            "ortho-core" | "ortho_core" => Ok(InitMethod::OrthoCore),
            "decomp-ortho" | "decomp_ortho" => Ok(InitMethod::DecompOrtho),
            other => Err(Error::InvalidConfig(format!(
                "unknown init method {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for InitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitMethod::Gaussian => "gaussian",
            InitMethod::OrthoCore => "ortho-core",
            InitMethod::DecompOrtho => "decomp-ortho",
        })
    }
}

/// Scale of the semi-orthogonal target `W^T W = alpha I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TargetScale {
    /// Keep whatever scale the construction yields.
    #[default]
    Auto,
    /// Rescale the first core so that alpha equals the given value. Only
    /// meaningful for the orthogonal methods, which produce alpha = 1.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub method: InitMethod,
    pub seed: u64,
    pub gaussian_std: f64,
    #[serde(default)]
    pub target_scale: TargetScale,
}

impl InitSpec {
    pub fn new(method: InitMethod, seed: u64) -> Self {
        InitSpec {
            method,
            seed,
            gaussian_std: 0.1,
            target_scale: TargetScale::Auto,
        }
    }

    pub fn with_std(mut self, std: f64) -> Self {
        self.gaussian_std = std;
        self
    }
}

/// Dispatch on `spec.method`.
pub fn initialize(config: &TtConfig, spec: &InitSpec) -> Result<TtEmbedding> {
    match spec.method {
        InitMethod::Gaussian => init_gaussian(config, spec),
        InitMethod::OrthoCore => init_ortho_core(config, spec),
        InitMethod::DecompOrtho => init_decomp_ortho(config, spec),
    }
}

pub fn init_gaussian(config: &TtConfig, spec: &InitSpec) -> Result<TtEmbedding> {
    if !(spec.gaussian_std >= 0.0) || !spec.gaussian_std.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "gaussian std must be a non-negative number, got {}",
            spec.gaussian_std
        )));
    }
    let mut rng = rng::seeded(spec.seed);
    let mut emb = TtEmbedding::zeros(config.clone());
    if spec.gaussian_std == 0.0 {
        return Ok(emb);
    }
    let normal = Normal::new(0.0, spec.gaussian_std).expect("validated std");
    for core in emb.cores_mut() {
        for x in core.iter_mut() {
            *x = normal.sample(&mut rng);
        }
    }
    Ok(emb)
}

/// Check `n_k * R_prev <= m_k * R_next` for every core.
pub fn ortho_core_feasible(config: &TtConfig) -> Result<()> {
    for k in 0..config.num_cores() {
        let [rp, m, n, rn] = config.core_shape(k);
        if n * rp > m * rn {
            return Err(Error::InfeasibleRanks {
                core: k,
                needed: n * rp,
                available: m * rn,
            });
        }
    }
    Ok(())
}

/// Orthogonal core construction.
///
/// For core `k` draw `n_k R_prev` Gaussian vectors of length `m_k R_next`,
/// orthonormalise them, and store vector `r * n_k + j` as the slice
/// `G_k(r, :, j, :)` reshaped to `m_k x R_next`. Summing the slice outer
/// products over the row coordinate then gives the identity at every core,
/// so the full table has orthonormal columns.
pub fn init_ortho_core(config: &TtConfig, spec: &InitSpec) -> Result<TtEmbedding> {
    ortho_core_feasible(config)?;
    let mut rng = rng::seeded(spec.seed);
    let mut cores = Vec::with_capacity(config.num_cores());
    for k in 0..config.num_cores() {
        let [rp, m, n, rn] = config.core_shape(k);
        let vectors = orthonormal_vectors(m * rn, n * rp, k, &mut rng)?;
        let mut core = Array4::zeros((rp, m, n, rn));
        for r in 0..rp {
            for j in 0..n {
                let v = vectors.column(r * n + j);
                for i in 0..m {
                    for b in 0..rn {
                        core[[r, i, j, b]] = v[i * rn + b];
                    }
                }
            }
        }
        cores.push(core);
    }
    let mut emb = TtEmbedding::new(config.clone(), cores)?;
    apply_target_scale(&mut emb, spec.target_scale);
    Ok(emb)
}

fn orthonormal_vectors(len: usize, count: usize, core: usize, rng: &mut Rng) -> Result<Array2<f64>> {
    for _ in 0..GRAM_SCHMIDT_RETRIES {
        let mut g = gaussian_matrix(len, count, rng);
        if orthonormalize_columns(&mut g).is_ok() {
            return Ok(g);
        }
    }
    Err(Error::DegenerateGramSchmidt {
        core,
        attempts: GRAM_SCHMIDT_RETRIES,
    })
}

fn apply_target_scale(emb: &mut TtEmbedding, scale: TargetScale) {
    if let TargetScale::Fixed(alpha) = scale {
        let s = alpha.sqrt();
        emb.cores_mut()[0].mapv_inplace(|x| x * s);
    }
}

/// Random column-orthogonal logical table decomposed with [`tt_svd`].
pub fn init_decomp_ortho(config: &TtConfig, spec: &InitSpec) -> Result<TtEmbedding> {
    let rows = config.padded_rows();
    let cols = config.padded_cols();
    let entries = rows.saturating_mul(cols);
    if entries > MATERIALIZE_LIMIT {
        return Err(Error::TooLarge {
            entries,
            limit: MATERIALIZE_LIMIT,
        });
    }
    let mut rng = rng::seeded(spec.seed);
    let x = linalg::random_orthogonal(rows, cols, &mut rng)?;
    let (mut emb, _) = tt_svd(&x, config)?;
    apply_target_scale(&mut emb, spec.target_scale);
    Ok(emb)
}

/// Per-step bookkeeping of a TT-SVD run.
#[derive(Debug, Clone, PartialEq)]
pub struct TtSvdReport {
    /// Number of singular values kept at each of the `d - 1` splits.
    pub kept: Vec<usize>,
    /// Sum of squared discarded singular values at each split.
    pub discarded_sq: Vec<f64>,
}

impl TtSvdReport {
    /// `sqrt(sum of all discarded sigma^2)`. The splits are taken against
    /// left-orthonormal factors, so this equals the Frobenius error of the
    /// decomposition.
    pub fn error_bound(&self) -> f64 {
        self.discarded_sq.iter().sum::<f64>().sqrt()
    }
}

/// TT-matrix decomposition of a dense table by sequential truncated SVD.
///
/// `table` is either the served `M x N` table (zero-padded here) or the full
/// `prod(m) x prod(n)` logical table. The rank at split `k` is
/// `min(R_k, rank of the unfolding)`; when the configured rank is larger the
/// extra core slots are zero so the core shapes always follow `config`.
pub fn tt_svd(table: &Array2<f64>, config: &TtConfig) -> Result<(TtEmbedding, TtSvdReport)> {
    let pr = config.padded_rows();
    let pc = config.padded_cols();
    let dim = table.dim();
    if dim != (pr, pc) && dim != (config.num_rows(), config.emb_dim()) {
        return Err(Error::ShapeMismatch(format!(
            "table is {}x{}, config expects {}x{} or {}x{}",
            dim.0,
            dim.1,
            config.num_rows(),
            config.emb_dim(),
            pr,
            pc
        )));
    }
    let d = config.num_cores();
    let m = config.row_factors();
    let n = config.col_factors();

    // Interleave axes to (m_1, n_1, ..., m_d, n_d).
    let mut y = vec![0.0; pr * pc];
    let mut strides = vec![1usize; d];
    for k in (0..d - 1).rev() {
        strides[k] = strides[k + 1] * m[k + 1] * n[k + 1];
    }
    for i in 0..dim.0 {
        let ic = config.index_to_coordinate(i)?;
        for j in 0..dim.1 {
            let mut rest = j;
            let mut offset = 0;
            for k in (0..d).rev() {
                let jk = rest % n[k];
                rest /= n[k];
                offset += (ic.0[k] * n[k] + jk) * strides[k];
            }
            y[offset] = table[[i, j]];
        }
    }

    let mut cores = Vec::with_capacity(d);
    let mut report = TtSvdReport {
        kept: Vec::with_capacity(d - 1),
        discarded_sq: Vec::with_capacity(d - 1),
    };
    for k in 0..d - 1 {
        let [rp, mk, nk, rn] = config.core_shape(k);
        let rows = rp * mk * nk;
        let cols = y.len() / rows;
        let mat = Array2::from_shape_vec((rows, cols), y).expect("reshape");
        let f = linalg::svd(&mat)?;
        let keep = rn.min(f.rank());
        report.kept.push(keep);
        report
            .discarded_sq
            .push(f.s.iter().skip(keep).map(|s| s * s).sum());

        let mut core = Array4::zeros((rp, mk, nk, rn));
        {
            let flat = core.as_slice_mut().expect("fresh array");
            for row in 0..rows {
                for c in 0..keep {
                    flat[row * rn + c] = f.u[[row, c]];
                }
            }
        }
        cores.push(core);

        let mut next = vec![0.0; rn * cols];
        for c in 0..keep {
            for t in 0..cols {
                next[c * cols + t] = f.s[c] * f.vt[[c, t]];
            }
        }
        y = next;
    }
    let [rp, mk, nk, rn] = config.core_shape(d - 1);
    debug_assert_eq!(y.len(), rp * mk * nk * rn);
    cores.push(Array4::from_shape_vec((rp, mk, nk, rn), y).expect("reshape"));
    Ok((TtEmbedding::new(config.clone(), cores)?, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrthogonalityReport {
    pub alpha: f64,
    pub max_deviation: f64,
    pub pass: bool,
}

/// Column-orthogonality check of the full logical table.
///
/// `alpha` is the mean diagonal of `W^T W`; the check passes when every entry
/// of `W^T W - alpha I` is at most `tol * alpha` in magnitude.
pub fn verify_orthogonality(emb: &TtEmbedding, tol: f64) -> Result<OrthogonalityReport> {
    let w = emb.materialize(true)?;
    Ok(column_orthogonality(&w, tol))
}

pub fn column_orthogonality(w: &Array2<f64>, tol: f64) -> OrthogonalityReport {
    let gram = w.t().dot(w);
    let n = gram.nrows();
    let alpha = gram.diag().sum() / n as f64;
    let mut max_deviation = 0.0f64;
    for ((i, j), &g) in gram.indexed_iter() {
        let target = if i == j { alpha } else { 0.0 };
        max_deviation = max_deviation.max((g - target).abs());
    }
    OrthogonalityReport {
        alpha,
        max_deviation,
        pass: alpha > 0.0 && max_deviation <= tol * alpha,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tt::uniform_ranks;

    fn cfg(m: Vec<usize>, n: Vec<usize>, ranks: Vec<usize>) -> TtConfig {
        let rows = m.iter().product();
        let cols = n.iter().product();
        TtConfig::new(rows, cols, m, n, ranks).unwrap()
    }

    #[test]
    fn gaussian_zero_std_and_determinism() {
        let c = cfg(vec![3, 4], vec![2, 2], uniform_ranks(2, 3));
        let z = init_gaussian(&c, &InitSpec::new(InitMethod::Gaussian, 1).with_std(0.0)).unwrap();
        assert!(z.cores().iter().all(|k| k.iter().all(|&x| x == 0.0)));
        let s = InitSpec::new(InitMethod::Gaussian, 42);
        assert_eq!(init_gaussian(&c, &s).unwrap(), init_gaussian(&c, &s).unwrap());
        assert!(init_gaussian(&c, &s.with_std(f64::NAN)).is_err());
    }

    #[test]
    fn gaussian_moments() {
        // 1 x 60 x 40 x 50 + 50 x 60 x 1 x 1 = 123000 entries
        let c = cfg(vec![60, 60], vec![40, 1], vec![1, 50, 1]);
        let e = init_gaussian(&c, &InitSpec::new(InitMethod::Gaussian, 9).with_std(0.1)).unwrap();
        let xs: Vec<f64> = e.cores().iter().flat_map(|k| k.iter().cloned()).collect();
        let n = xs.len() as f64;
        assert!(n >= 1e5);
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 3.0 * 0.1 / n.sqrt(), "mean {mean}");
        assert!((var.sqrt() - 0.1).abs() <= 0.005, "std {}", var.sqrt());
    }

    #[test]
    fn ortho_core_two_by_two() {
        let c = cfg(vec![2, 4], vec![2, 2], vec![1, 2, 1]);
        let e = init_ortho_core(&c, &InitSpec::new(InitMethod::OrthoCore, 3)).unwrap();
        let w = e.materialize(true).unwrap();
        let gram = w.t().dot(&w);
        let alpha = gram[[0, 0]];
        let dev = (&gram - &(Array2::<f64>::eye(4) * alpha))
            .iter()
            .fold(0.0f64, |a, x| a.max(x.abs()));
        assert!(dev <= 1e-10);
    }

    #[test]
    fn ortho_core_rank_one_unit_vectors() {
        let c = cfg(vec![3, 5, 4], vec![1, 1, 1], uniform_ranks(3, 1));
        let e = init_ortho_core(&c, &InitSpec::new(InitMethod::OrthoCore, 8)).unwrap();
        for core in e.cores() {
            let norm: f64 = core.iter().map(|x| x * x).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        let w = e.materialize(true).unwrap();
        let col: f64 = w.column(0).iter().map(|x| x * x).sum();
        assert!((col - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ortho_core_feasibility_bound() {
        let arxiv = |r| {
            TtConfig::new(169_363, 128, vec![55, 55, 56], vec![8, 4, 4], uniform_ranks(3, r)).unwrap()
        };
        match ortho_core_feasible(&arxiv(32)) {
            Err(Error::InfeasibleRanks { core, needed, available }) => {
                assert_eq!((core, needed, available), (2, 128, 56));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(ortho_core_feasible(&arxiv(8)).is_ok());
        assert!(init_ortho_core(&arxiv(32), &InitSpec::new(InitMethod::OrthoCore, 0)).is_err());
    }

    #[test]
    fn slice_vectors_are_orthonormal() {
        let c = cfg(vec![4, 6, 5], vec![2, 3, 2], vec![1, 3, 2, 1]);
        let e = init_ortho_core(&c, &InitSpec::new(InitMethod::OrthoCore, 17)).unwrap();
        for (k, core) in e.cores().iter().enumerate() {
            let [rp, m, n, rn] = c.core_shape(k);
            let mut vs = Array2::zeros((m * rn, n * rp));
            for r in 0..rp {
                for j in 0..n {
                    for i in 0..m {
                        for b in 0..rn {
                            vs[[i * rn + b, r * n + j]] = core[[r, i, j, b]];
                        }
                    }
                }
            }
            let g = vs.t().dot(&vs);
            let dev = (&g - &Array2::<f64>::eye(n * rp)).iter().fold(0.0f64, |a, x| a.max(x.abs()));
            assert!(dev <= 1e-10, "core {k}: {dev}");
        }
    }

    #[test]
    fn fixed_target_scale() {
        let c = cfg(vec![4, 4], vec![2, 2], vec![1, 2, 1]);
        let mut s = InitSpec::new(InitMethod::OrthoCore, 1);
        s.target_scale = TargetScale::Fixed(2.5);
        let r = verify_orthogonality(&init_ortho_core(&c, &s).unwrap(), 1e-8).unwrap();
        assert!(r.pass);
        assert!((r.alpha - 2.5).abs() < 1e-12);
    }

    #[test]
    fn decomp_exact_on_orthogonal_8x4() {
        let c = TtConfig::new(8, 4, vec![2, 2, 2], vec![2, 2, 1], vec![1, 4, 4, 1]).unwrap();
        let mut rng = rng::seeded(21);
        let x = linalg::random_orthogonal(8, 4, &mut rng).unwrap();
        let (e, report) = tt_svd(&x, &c).unwrap();
        assert!(report.error_bound() < 1e-12);
        let back = e.materialize(false).unwrap();
        let err = (&back - &x).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(err <= 1e-10);
    }

    #[test]
    fn decomp_identity_columns() {
        let c = TtConfig::new(8, 4, vec![2, 2, 2], vec![2, 2, 1], vec![1, 4, 2, 1]).unwrap();
        let x = Array2::from_shape_fn((8, 4), |(i, j)| if i == j { 1.0 } else { 0.0 });
        let (e, _) = tt_svd(&x, &c).unwrap();
        let back = e.materialize(false).unwrap();
        assert!((&back - &x).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn decomp_init_is_orthogonal_and_deterministic() {
        let c = cfg(vec![4, 4, 4], vec![2, 2, 2], vec![1, 8, 8, 1]);
        let s = InitSpec::new(InitMethod::DecompOrtho, 5);
        let e = init_decomp_ortho(&c, &s).unwrap();
        assert_eq!(e, init_decomp_ortho(&c, &s).unwrap());
        let r = verify_orthogonality(&e, 1e-8).unwrap();
        assert!(r.pass, "{r:?}");
        assert!((r.alpha - 1.0).abs() < 1e-10);
    }

    #[test]
    fn orthogonality_degenerate_and_failing() {
        let c = cfg(vec![1, 1], vec![1, 1], vec![1, 1, 1]);
        let mut e = TtEmbedding::zeros(c);
        e.cores_mut()[0][[0, 0, 0, 0]] = 3.0;
        e.cores_mut()[1][[0, 0, 0, 0]] = -0.5;
        let r = verify_orthogonality(&e, 1e-8).unwrap();
        assert!(r.pass);
        assert!((r.alpha - 2.25).abs() < 1e-15);

        let c = cfg(vec![16, 16], vec![4, 4], vec![1, 4, 1]);
        let g = init_gaussian(&c, &InitSpec::new(InitMethod::Gaussian, 2)).unwrap();
        assert!(!verify_orthogonality(&g, 1e-3).unwrap().pass);
    }

    #[test]
    fn init_method_parsing() {
        assert_eq!("ortho-core".parse::<InitMethod>().unwrap(), InitMethod::OrthoCore);
        assert_eq!(InitMethod::DecompOrtho.to_string(), "decomp-ortho");
        assert!("laplacian".parse::<InitMethod>().is_err());
    }
}
