//! Sparse-recovery certificates: orthogonal-complement projectors,
//! spark, mutual coherence, the coherence surrogate computed from the
//! regressor hat matrix, genericity indices and the uniqueness
//! thresholds that govern sequential submodel extraction.

use crate::dataset::RegressorMatrix;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use std::fmt;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_REL_TOL: f64 = 1e-10;
/// Hat-matrix diagonals within this distance of 1 make the coherence
/// surrogate undefined.
pub const LEVERAGE_TOL: f64 = 1e-8;
/// Exhaustive certificates refuse matrices wider than this.
pub const MAX_EXHAUSTIVE_COLS: usize = 20;
/// Exhaustive certificates refuse enumerations larger than this.
pub const MAX_EXHAUSTIVE_SUBSETS: usize = 200_000;

/// A count that may be infinite (spark, genericity index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountOrInf {
    Finite(usize),
    Infinite,
}

impl CountOrInf {
    pub fn is_finite(&self) -> bool {
        matches!(self, CountOrInf::Finite(_))
    }

    pub fn finite(&self) -> Option<usize> {
        match self {
            CountOrInf::Finite(v) => Some(*v),
            CountOrInf::Infinite => None,
        }
    }
}

impl fmt::Display for CountOrInf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CountOrInf::Finite(v) => write!(f, "{v}"),
            CountOrInf::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for CountOrInf {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CountOrInf::Finite(v) => serializer.serialize_u64(*v as u64),
            CountOrInf::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for CountOrInf {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = CountOrInf;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a nonnegative integer or the string \"inf\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<CountOrInf, E> {
                Ok(CountOrInf::Finite(v as usize))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<CountOrInf, E> {
                if v < 0 {
                    Err(E::custom("negative count"))
                } else {
                    Ok(CountOrInf::Finite(v as usize))
                }
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<CountOrInf, E> {
                if v == "inf" {
                    Ok(CountOrInf::Infinite)
                } else {
                    Err(E::custom(format!("unexpected string {v:?}")))
                }
            }
        }
        deserializer.deserialize_any(V)
    }
}

/// Orthogonal projection onto the complement of the regressor row space.
///
/// `a_full` is the full projector, `a_x` an orthonormal full-row-rank
/// basis of the same row space, and `b_x = a_x * y`.
#[derive(Debug, Clone)]
pub struct Projector {
    pub a_full: DMatrix<f64>,
    pub a_x: DMatrix<f64>,
    pub b_x: DVector<f64>,
}

/// Numerical rank with a scale-invariant tolerance.
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    if max <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_REL_TOL * max).count()
}

/// Builds the projector for a regressor matrix.
pub fn projector(x: &RegressorMatrix) -> Result<Projector> {
    projector_from_parts(x.x(), x.y_vec())
}

/// Builds the projector for raw regressors `x` (n x N) and aligned
/// outputs `y` (length N). Errors when `x` loses row rank.
pub fn projector_from_parts(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Projector> {
    let n = x.nrows();
    let cols = x.ncols();
    assert_eq!(cols, y.len(), "regressors and outputs must align");
    let r = rank(x);
    if r < n {
        return Err(Error::RankDeficientRegressors {
            rank: r,
            expected: n,
        });
    }
    if cols == n {
        // Square full-rank regressors have a trivial complement.
        return Ok(Projector {
            a_full: DMatrix::zeros(cols, cols),
            a_x: DMatrix::zeros(0, cols),
            b_x: DVector::zeros(0),
        });
    }
    // Full Q of the QR factorization of x^T: the first n rows of Q^T
    // span the regressor row space, the rest its orthogonal complement.
    let qr = x.transpose().qr();
    let mut q_t = DMatrix::identity(cols, cols);
    qr.q_tr_mul(&mut q_t);
    let q1 = q_t.rows(0, n).into_owned();
    let a_x = q_t.rows(n, cols - n).into_owned();
    let a_full = DMatrix::identity(cols, cols) - q1.transpose() * &q1;
    let b_x = &a_x * y;
    Ok(Projector { a_full, a_x, b_x })
}

fn binomial_saturating(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

/// Advances `idx` to the next k-combination of `0..n`; false when done.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - (k - i) {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn submatrix(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let mut sub = DMatrix::zeros(a.nrows(), cols.len());
    for (j, &c) in cols.iter().enumerate() {
        sub.set_column(j, &a.column(c));
    }
    sub
}

fn guard_exhaustive(columns: usize, subsets: usize) -> Result<()> {
    if columns > MAX_EXHAUSTIVE_COLS || subsets > MAX_EXHAUSTIVE_SUBSETS {
        return Err(Error::TooLarge {
            columns,
            subsets,
            col_limit: MAX_EXHAUSTIVE_COLS,
            subset_limit: MAX_EXHAUSTIVE_SUBSETS,
        });
    }
    Ok(())
}

/// Smallest number of linearly dependent columns, by exhaustive search.
///
/// Returns `Infinite` when every subset of columns is independent.
pub fn spark(a: &DMatrix<f64>) -> Result<CountOrInf> {
    let cols = a.ncols();
    if cols == 0 {
        return Err(Error::EmptyBlock);
    }
    let max_size = cols.min(a.nrows() + 1);
    let total: usize = (1..=max_size)
        .map(|s| binomial_saturating(cols, s))
        .fold(0usize, |acc, c| acc.saturating_add(c));
    guard_exhaustive(cols, total)?;
    for size in 1..=max_size {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            if rank(&submatrix(a, &idx)) < size {
                return Ok(CountOrInf::Finite(size));
            }
            if !next_combination(&mut idx, cols) {
                break;
            }
        }
    }
    Ok(CountOrInf::Infinite)
}

/// Largest absolute normalized inner product between distinct columns.
pub fn mutual_coherence(a: &DMatrix<f64>) -> Result<f64> {
    let cols = a.ncols();
    if cols == 0 || a.nrows() == 0 {
        return Err(Error::EmptyBlock);
    }
    let norms: Vec<f64> = (0..cols).map(|j| a.column(j).norm()).collect();
    let max_norm = norms.iter().cloned().fold(0.0, f64::max);
    for (j, &nj) in norms.iter().enumerate() {
        if nj <= 1e-12 * max_norm || max_norm == 0.0 {
            return Err(Error::ZeroColumn { index: j });
        }
    }
    let mut mu: f64 = 0.0;
    for i in 0..cols {
        let ci = a.column(i);
        for j in i + 1..cols {
            let v = ci.dot(&a.column(j)).abs() / (norms[i] * norms[j]);
            mu = mu.max(v);
        }
    }
    Ok(mu.min(1.0))
}

/// Coherence surrogate computed from the hat matrix of the regressors.
///
/// Equals the mutual coherence of any orthonormal complement basis of
/// the regressor row space.
pub fn tau(x: &DMatrix<f64>) -> Result<f64> {
    let n = x.nrows();
    let cols = x.ncols();
    if cols == 0 || n == 0 {
        return Err(Error::EmptyBlock);
    }
    let gram = x * x.transpose();
    let chol = gram.cholesky().ok_or(Error::RankDeficientRegressors {
        rank: rank(x),
        expected: n,
    })?;
    // hat = x^T (x x^T)^{-1} x, assembled column by column.
    let z = chol.solve(x);
    let hat = x.transpose() * z;
    for k in 0..cols {
        if hat[(k, k)] >= 1.0 - LEVERAGE_TOL {
            return Err(Error::LeverageOne {
                index: k,
                value: hat[(k, k)],
            });
        }
    }
    let mut t: f64 = 0.0;
    for i in 0..cols {
        let di = 1.0 - hat[(i, i)];
        for j in i + 1..cols {
            let dj = 1.0 - hat[(j, j)];
            let v = hat[(i, j)].abs() / (di * dj).sqrt();
            t = t.max(v);
        }
    }
    Ok(t.min(1.0))
}

/// Convenience overload for [`tau`] on a built regressor matrix.
pub fn tau_of(x: &RegressorMatrix) -> Result<f64> {
    tau(x.x())
}

/// Uniqueness threshold `(1 + 1/tau) / 2` derived from the coherence
/// surrogate; `None` when the surrogate vanishes.
pub fn uniqueness_threshold(tau: f64) -> Option<f64> {
    if tau > 0.0 {
        Some(0.5 * (1.0 + 1.0 / tau))
    } else {
        None
    }
}

/// Smallest `m` such that every selection of `m` columns has rank at
/// least `k`; `Infinite` when `k` exceeds the matrix rank, 0 for `k = 0`.
pub fn genericity_index(a: &DMatrix<f64>, k: usize) -> Result<CountOrInf> {
    if k == 0 {
        return Ok(CountOrInf::Finite(0));
    }
    let cols = a.ncols();
    if cols == 0 {
        return Err(Error::EmptyBlock);
    }
    if k > rank(a) {
        return Ok(CountOrInf::Infinite);
    }
    let total: usize = (k..=cols)
        .map(|m| binomial_saturating(cols, m))
        .fold(0usize, |acc, c| acc.saturating_add(c));
    guard_exhaustive(cols, total)?;
    for m in k..=cols {
        let mut idx: Vec<usize> = (0..m).collect();
        let mut every_subset_ok = true;
        loop {
            if rank(&submatrix(a, &idx)) < k {
                every_subset_ok = false;
                break;
            }
            if !next_combination(&mut idx, cols) {
                break;
            }
        }
        if every_subset_ok {
            return Ok(CountOrInf::Finite(m));
        }
    }
    // The full matrix has rank >= k, so the loop always returns.
    unreachable!("genericity search exhausted without finding a width");
}

/// Mean Euclidean norm of the columns of a block.
pub fn nu(block: &DMatrix<f64>) -> Result<f64> {
    if block.ncols() == 0 || block.nrows() == 0 {
        return Err(Error::EmptyBlock);
    }
    let sum: f64 = (0..block.ncols()).map(|j| block.column(j).norm()).sum();
    Ok(sum / block.ncols() as f64)
}

/// Mean absolute entry of a vector, treating each entry as a
/// one-dimensional column.
pub fn nu_vec(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyBlock);
    }
    Ok(v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64)
}

/// One stage of the sequential-extraction bound chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundStage {
    /// 1-based extraction round.
    pub stage: usize,
    /// Hypothesized sample count extracted this round.
    pub size: usize,
    /// Samples still unassigned when the round starts.
    pub remaining: usize,
    /// `remaining - threshold`; the stage needs `size > lower > 0`.
    pub lower: Option<f64>,
    pub holds: bool,
}

/// Diagnostic report for the sequential-extraction size conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionBoundReport {
    pub tau: f64,
    /// Threshold computed once from the full regressor set.
    pub theta_bound: Option<f64>,
    pub stages: Vec<BoundStage>,
    pub all_hold: bool,
}

/// Evaluates the chain `N_i > N - sum_{j<i} N_j - threshold > 0` for a
/// hypothesized extraction-size ordering. Diagnostic only; the final
/// mode is exempt from the chain.
pub fn extraction_bound(x: &RegressorMatrix, sizes: &[usize]) -> Result<ExtractionBoundReport> {
    let t = tau_of(x)?;
    let bound = uniqueness_threshold(t);
    let total: usize = sizes.iter().sum();
    let mut remaining = total;
    let mut stages = Vec::new();
    let mut all_hold = true;
    if sizes.len() > 1 {
        for (i, &size) in sizes.iter().take(sizes.len() - 1).enumerate() {
            let lower = bound.map(|b| remaining as f64 - b);
            let holds = match lower {
                Some(l) => (size as f64) > l && l > 0.0,
                None => false,
            };
            all_hold &= holds;
            stages.push(BoundStage {
                stage: i + 1,
                size,
                remaining,
                lower,
                holds,
            });
            remaining -= size;
        }
    }
    Ok(ExtractionBoundReport {
        tau: t,
        theta_bound: bound,
        stages,
        all_hold,
    })
}

/// Certificate bundle attached to identification results.
///
/// Fields are `None` when the quantity is undefined for the data or too
/// large for the exhaustive search guards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparsitySummary {
    pub spark: Option<CountOrInf>,
    pub mu: Option<f64>,
    pub tau: Option<f64>,
    pub theta_bound: Option<f64>,
    /// Alternate printed form `(1 + tau) / 2`, recorded alongside.
    pub theta_bound_alt: Option<f64>,
    pub genericity: BTreeMap<usize, CountOrInf>,
}

impl SparsitySummary {
    /// Summary with only the hat-matrix quantities, suitable for large
    /// regressor sets.
    pub fn from_tau(t: Result<f64>) -> Self {
        let tau = t.ok();
        SparsitySummary {
            spark: None,
            mu: None,
            tau,
            theta_bound: tau.and_then(uniqueness_threshold),
            theta_bound_alt: tau.map(|v| 0.5 * (1.0 + v)),
            genericity: BTreeMap::new(),
        }
    }
}

/// Computes the full certificate bundle for raw regressors, including
/// the exhaustive certificates when the size guards permit.
pub fn summarize(x: &DMatrix<f64>, y: &DVector<f64>) -> SparsitySummary {
    let mut summary = SparsitySummary::from_tau(tau(x));
    if let Ok(proj) = projector_from_parts(x, y) {
        if proj.a_x.nrows() > 0 {
            summary.mu = mutual_coherence(&proj.a_x).ok();
            summary.spark = spark(&proj.a_x).ok();
        }
    }
    for k in 0..=x.nrows() {
        if let Ok(v) = genericity_index(x, k) {
            summary.genericity.insert(k, v);
        }
    }
    summary
}
