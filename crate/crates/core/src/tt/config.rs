use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Factorization plan for an `M x N` table stored as `d` TT-matrix cores.
///
/// Core `k` has shape `(R[k], m[k], n[k], R[k+1])` (0-based), with
/// `R[0] = R[d] = 1`. The logical table is `prod(m) x prod(n)`; rows past `M`
/// and columns past `N` are padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig", into = "RawConfig")]
pub struct TtConfig {
    num_rows: usize,
    emb_dim: usize,
    row_factors: Vec<usize>,
    col_factors: Vec<usize>,
    ranks: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawConfig {
    num_rows: usize,
    emb_dim: usize,
    row_factors: Vec<usize>,
    col_factors: Vec<usize>,
    ranks: Vec<usize>,
}

impl TryFrom<RawConfig> for TtConfig {
    type Error = Error;
    fn try_from(r: RawConfig) -> Result<Self> {
        TtConfig::new(r.num_rows, r.emb_dim, r.row_factors, r.col_factors, r.ranks)
    }
}

impl From<TtConfig> for RawConfig {
    fn from(c: TtConfig) -> Self {
        RawConfig {
            num_rows: c.num_rows,
            emb_dim: c.emb_dim,
            row_factors: c.row_factors,
            col_factors: c.col_factors,
            ranks: c.ranks,
        }
    }
}

/// Mixed-radix coordinate `(i_1, ..., i_d)` of a table row; `i_1` is the
/// most significant digit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RowCoordinate(pub Vec<usize>);

impl RowCoordinate {
    pub fn parts(&self) -> &[usize] {
        &self.0
    }
}

/// `[1, r, r, ..., r, 1]` of length `d + 1`.
pub fn uniform_ranks(d: usize, rank: usize) -> Vec<usize> {
    let mut ranks = vec![rank; d + 1];
    ranks[0] = 1;
    ranks[d] = 1;
    ranks
}

impl TtConfig {
    pub fn new(
        num_rows: usize,
        emb_dim: usize,
        row_factors: Vec<usize>,
        col_factors: Vec<usize>,
        ranks: Vec<usize>,
    ) -> Result<Self> {
        let d = row_factors.len();
        if num_rows == 0 || emb_dim == 0 {
            return Err(Error::InvalidConfig(
                "table dimensions must be positive".into(),
            ));
        }
        if d < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 cores, got {d}"
            )));
        }
        if col_factors.len() != d {
            return Err(Error::InvalidConfig(format!(
                "{} row factors but {} column factors",
                d,
                col_factors.len()
            )));
        }
        check_ranks(&ranks, d)?;
        if row_factors.iter().chain(&col_factors).any(|&f| f == 0) {
            return Err(Error::InvalidConfig("factors must be positive".into()));
        }
        let rows = checked_product(&row_factors)?;
        let cols = checked_product(&col_factors)?;
        if rows < num_rows {
            return Err(Error::InvalidConfig(format!(
                "row factors cover {rows} rows, need {num_rows}"
            )));
        }
        if cols < emb_dim {
            return Err(Error::InvalidConfig(format!(
                "column factors cover {cols} columns, need {emb_dim}"
            )));
        }
        Ok(TtConfig {
            num_rows,
            emb_dim,
            row_factors,
            col_factors,
            ranks,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    pub fn num_cores(&self) -> usize {
        self.row_factors.len()
    }

    pub fn row_factors(&self) -> &[usize] {
        &self.row_factors
    }

    pub fn col_factors(&self) -> &[usize] {
        &self.col_factors
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// `prod(m)`, including padding rows.
    pub fn padded_rows(&self) -> usize {
        self.row_factors.iter().product()
    }

    /// `prod(n)`, including padding columns.
    pub fn padded_cols(&self) -> usize {
        self.col_factors.iter().product()
    }

    /// `(R[k], m[k], n[k], R[k+1])` for 0-based core `k`.
    pub fn core_shape(&self, k: usize) -> [usize; 4] {
        [
            self.ranks[k],
            self.row_factors[k],
            self.col_factors[k],
            self.ranks[k + 1],
        ]
    }

    pub fn core_len(&self, k: usize) -> usize {
        self.core_shape(k).iter().product()
    }

    /// Same factors, different ranks.
    pub fn with_ranks(&self, ranks: Vec<usize>) -> Result<Self> {
        TtConfig::new(
            self.num_rows,
            self.emb_dim,
            self.row_factors.clone(),
            self.col_factors.clone(),
            ranks,
        )
    }

    /// Smallest ranks for which every `prod(m) x prod(n)` table has an exact
    /// representation: `R[k] = min(prod_{<=k} m n, prod_{>k} m n)`.
    pub fn full_ranks(&self) -> Vec<usize> {
        let d = self.num_cores();
        let sizes: Vec<usize> = (0..d)
            .map(|k| self.row_factors[k] * self.col_factors[k])
            .collect();
        let mut ranks = vec![1; d + 1];
        for k in 1..d {
            let left: usize = sizes[..k].iter().product();
            let right: usize = sizes[k..].iter().product();
            ranks[k] = left.min(right);
        }
        ranks
    }

    /// Exact number of core entries, `sum_k R[k] m[k] n[k] R[k+1]`.
    pub fn count_params(&self) -> usize {
        (0..self.num_cores()).map(|k| self.core_len(k)).sum()
    }

    /// `M * N / count_params`.
    pub fn compression_ratio(&self) -> f64 {
        self.compression_ratio_vs(self.emb_dim)
    }

    /// Ratio against a dense `M x full_dim` table, for baselines whose width
    /// differs from the served embedding dimension.
    pub fn compression_ratio_vs(&self, full_dim: usize) -> f64 {
        (self.num_rows as f64 * full_dim as f64) / self.count_params() as f64
    }

    pub fn index_to_coordinate(&self, index: usize) -> Result<RowCoordinate> {
        let rows = self.padded_rows();
        if index >= rows {
            return Err(Error::IndexOutOfRange { index, rows });
        }
        let mut parts = vec![0; self.num_cores()];
        let mut rest = index;
        for (slot, &m) in parts.iter_mut().zip(&self.row_factors).rev() {
            *slot = rest % m;
            rest /= m;
        }
        Ok(RowCoordinate(parts))
    }

    pub fn coordinate_to_index(&self, coord: &RowCoordinate) -> Result<usize> {
        if coord.0.len() != self.num_cores() {
            return Err(Error::ShapeMismatch(format!(
                "coordinate has {} parts, config has {} cores",
                coord.0.len(),
                self.num_cores()
            )));
        }
        let mut index = 0;
        for (&part, &m) in coord.0.iter().zip(&self.row_factors) {
            if part >= m {
                return Err(Error::IndexOutOfRange {
                    index: part,
                    rows: m,
                });
            }
            index = index * m + part;
        }
        Ok(index)
    }
}

fn check_ranks(ranks: &[usize], d: usize) -> Result<()> {
    if ranks.len() != d + 1 {
        return Err(Error::InvalidConfig(format!(
            "rank list must have {} entries for {} cores, got {}",
            d + 1,
            d,
            ranks.len()
        )));
    }
    if ranks[0] != 1 || ranks[d] != 1 {
        return Err(Error::InvalidConfig(
            "boundary ranks R[0] and R[d] must be 1".into(),
        ));
    }
    if ranks.contains(&0) {
        return Err(Error::InvalidConfig("ranks must be positive".into()));
    }
    Ok(())
}

fn checked_product(factors: &[usize]) -> Result<usize> {
    factors
        .iter()
        .try_fold(1usize, |acc, &f| acc.checked_mul(f))
        .ok_or_else(|| Error::InvalidConfig("factor product overflows".into()))
}

/// Plan a factorization of an `M x N` table into `d` cores.
///
/// Every factor is bounded by `ceil(value^(1/d))`; among such factorizations
/// the one with the smallest product (least padding) wins, ties going to the
/// most balanced. With `ortho_friendly` the row factors are ascending and the
/// column factors descending, so the last core has the largest `m` and the
/// smallest `n`, which is the most permissive layout for orthogonal core
/// initialisation.
pub fn plan_factorization(
    num_rows: usize,
    emb_dim: usize,
    d: usize,
    ranks: Vec<usize>,
    ortho_friendly: bool,
) -> Result<TtConfig> {
    if num_rows == 0 || emb_dim == 0 {
        return Err(Error::InvalidConfig(
            "table dimensions must be positive".into(),
        ));
    }
    if d < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 cores, got {d}"
        )));
    }
    check_ranks(&ranks, d)?;
    let rows = balanced_factors(num_rows, d);
    let mut cols = balanced_factors(emb_dim, d);
    if ortho_friendly {
        cols.reverse();
    }
    TtConfig::new(num_rows, emb_dim, rows, cols, ranks)
}

/// Smallest `c` with `c^d >= value`.
pub fn integer_root_ceil(value: usize, d: usize) -> usize {
    let mut c = (value as f64).powf(1.0 / d as f64).floor().max(1.0) as usize;
    while pow_at_least(c, d, value) {
        if c == 1 {
            return 1;
        }
        c -= 1;
    }
    while !pow_at_least(c, d, value) {
        c += 1;
    }
    c
}

fn pow_at_least(base: usize, exp: usize, target: usize) -> bool {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc *= base as u128;
        if acc >= target as u128 {
            return true;
        }
    }
    acc >= target as u128
}

/// `d` ascending factors, each at most `ceil(value^(1/d))`, whose product is
/// the smallest possible value `>= value`.
pub fn balanced_factors(value: usize, d: usize) -> Vec<usize> {
    let cap = integer_root_ceil(value, d);
    let mut best: Option<(u128, usize, Vec<usize>)> = None;
    let mut current = Vec::with_capacity(d);
    search_factors(value as u128, d, cap, 1, 1, &mut current, &mut best);
    best.expect("cap^d >= value always admits a solution").2
}

fn search_factors(
    value: u128,
    d: usize,
    cap: usize,
    lo: usize,
    product: u128,
    current: &mut Vec<usize>,
    best: &mut Option<(u128, usize, Vec<usize>)>,
) {
    let remaining = d - current.len();
    if remaining == 1 {
        let need = value.div_ceil(product).max(lo as u128);
        if need > cap as u128 {
            return;
        }
        let last = need as usize;
        let total = product * need;
        let spread = last - current.first().copied().unwrap_or(last);
        let better = match best {
            None => true,
            Some((bp, bs, _)) => total < *bp || (total == *bp && spread < *bs),
        };
        if better {
            let mut f = current.clone();
            f.push(last);
            *best = Some((total, spread, f));
        }
        return;
    }
    let cap_pow = (cap as u128).pow(remaining as u32 - 1);
    let need = value.div_ceil(product);
    let start = (need.div_ceil(cap_pow) as usize).max(lo);
    for f in start..=cap {
        // all later factors are >= f
        let floor_total = product * (f as u128).pow(remaining as u32);
        if let Some((bp, _, _)) = best {
            if floor_total > *bp {
                break;
            }
        }
        current.push(f);
        search_factors(value, d, cap, f, product * f as u128, current, best);
        current.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_cube() {
        let c = plan_factorization(8, 8, 3, vec![1, 1, 1, 1], false).unwrap();
        assert_eq!(c.row_factors(), &[2, 2, 2]);
        assert_eq!(c.col_factors(), &[2, 2, 2]);
        assert_eq!(c.padded_rows() - c.num_rows(), 0);
    }

    #[test]
    fn published_row_factorizations() {
        assert_eq!(balanced_factors(169_363, 3), vec![55, 55, 56]);
        assert_eq!(balanced_factors(48, 3), vec![3, 4, 4]);
        assert_eq!(balanced_factors(1, 3), vec![1, 1, 1]);
        assert_eq!(balanced_factors(1000, 3), vec![10, 10, 10]);
    }

    #[test]
    fn prime_is_padded() {
        let f = balanced_factors(1009, 3);
        let p: usize = f.iter().product();
        assert!(p > 1009);
        assert!(f.iter().all(|&x| x <= integer_root_ceil(1009, 3)));
    }

    #[test]
    fn ortho_friendly_order() {
        let c = plan_factorization(169_363, 128, 3, uniform_ranks(3, 8), true).unwrap();
        let m = c.row_factors();
        let n = c.col_factors();
        assert_eq!(*m.last().unwrap(), *m.iter().max().unwrap());
        assert_eq!(*n.last().unwrap(), *n.iter().min().unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(plan_factorization(0, 4, 3, uniform_ranks(3, 2), false).is_err());
        assert!(plan_factorization(4, 0, 3, uniform_ranks(3, 2), false).is_err());
        assert!(plan_factorization(4, 4, 3, vec![1, 2, 1], false).is_err());
        assert!(plan_factorization(4, 4, 1, vec![1, 1], false).is_err());
        assert!(TtConfig::new(9, 4, vec![2, 2], vec![2, 2], vec![1, 2, 1]).is_err());
        assert!(TtConfig::new(4, 4, vec![2, 2], vec![2, 2], vec![2, 2, 1]).is_err());
    }

    #[test]
    fn integer_roots() {
        assert_eq!(integer_root_ceil(27, 3), 3);
        assert_eq!(integer_root_ceil(28, 3), 4);
        assert_eq!(integer_root_ceil(1, 5), 1);
        assert_eq!(integer_root_ceil(111_059_956, 3), 481);
    }

    #[test]
    fn full_ranks_cover_unfoldings() {
        let c = TtConfig::new(8, 4, vec![2, 2, 2], vec![2, 2, 1], uniform_ranks(3, 1)).unwrap();
        assert_eq!(c.full_ranks(), vec![1, 4, 2, 1]);
    }

    #[test]
    fn json_roundtrip_validates() {
        let c = plan_factorization(100, 16, 3, uniform_ranks(3, 4), true).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: TtConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let bad = s.replace("\"num_rows\":100", "\"num_rows\":100000");
        assert!(serde_json::from_str::<TtConfig>(&bad).is_err());
    }
}
