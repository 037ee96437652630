//! Stage one: switching-instant detection by dynamic programming over
//! least-squares segment costs under a minimum-dwell constraint, with a
//! recursive least-squares sweep for streaming cost evaluation and a
//! log-ratio criterion for choosing the number of segments.

use crate::dataset::RegressorMatrix;
use crate::error::{Error, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Ridge scale applied when a segment Gram is singular.
pub const RIDGE_SCALE: f64 = 1e-8;
/// Relative floor applied to fitting costs inside the selection
/// criterion, preventing log-of-zero on noiseless data.
pub const COST_FLOOR_REL: f64 = 1e-12;

/// In-place Cholesky solve for small symmetric positive definite
/// systems; avoids per-cell allocations in the table build.
struct SmallSpd {
    n: usize,
    a: Vec<f64>,
}

impl SmallSpd {
    fn new(n: usize) -> Self {
        Self { n, a: vec![0.0; n * n] }
    }

    fn load(&mut self, m: &[f64]) {
        self.a.copy_from_slice(m);
    }

    fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.n {
            self.a[i * self.n + i] += value;
        }
    }

    /// Lower Cholesky factorization in place; false when not positive
    /// definite. Pivots below a relative tolerance count as failures so
    /// rank-deficient Grams take the ridge path instead of producing
    /// garbage solutions.
    fn factor(&mut self) -> bool {
        let n = self.n;
        let mut max_diag: f64 = 0.0;
        for i in 0..n {
            max_diag = max_diag.max(self.a[i * n + i].abs());
        }
        let tol = 1e-12 * max_diag;
        for j in 0..n {
            let mut d = self.a[j * n + j];
            for k in 0..j {
                d -= self.a[j * n + k] * self.a[j * n + k];
            }
            if d <= tol || !d.is_finite() {
                return false;
            }
            let d = d.sqrt();
            self.a[j * n + j] = d;
            for i in j + 1..n {
                let mut v = self.a[i * n + j];
                for k in 0..j {
                    v -= self.a[i * n + k] * self.a[j * n + k];
                }
                self.a[i * n + j] = v / d;
            }
        }
        true
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= self.a[i * n + k] * b[k];
            }
            b[i] = v / self.a[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in i + 1..n {
                v -= self.a[k * n + i] * b[k];
            }
            b[i] = v / self.a[i * n + i];
        }
    }
}

/// Provider of least-squares fitting costs over half-open aligned
/// ranges, consumed by the dynamic program.
pub trait SegmentCosts {
    fn n_eff(&self) -> usize;
    /// Cost of fitting `[start, end)` as one segment.
    fn cost(&self, start: usize, end: usize) -> f64;
}

/// Precomputed triangular table of segment costs built from prefix
/// Gram sums of the regressors.
pub struct CostTable {
    n_eff: usize,
    costs: Vec<f64>,
    row_offsets: Vec<usize>,
}

impl CostTable {
    pub fn build(x: &RegressorMatrix) -> Self {
        let n = x.n();
        let n_eff = x.n_eff();
        let xm = x.x();
        let yv = x.y_vec();

        // Prefix sums of the per-sample Gram contributions.
        let mut g = vec![0.0; (n_eff + 1) * n * n];
        let mut c = vec![0.0; (n_eff + 1) * n];
        let mut q = vec![0.0; n_eff + 1];
        for k in 0..n_eff {
            let src = k * n * n;
            let dst = (k + 1) * n * n;
            for i in 0..n {
                let xi = xm[(i, k)];
                for j in 0..n {
                    g[dst + i * n + j] = g[src + i * n + j] + xi * xm[(j, k)];
                }
                c[(k + 1) * n + i] = c[k * n + i] + xi * yv[k];
            }
            q[k + 1] = q[k] + yv[k] * yv[k];
        }

        let mut row_offsets = Vec::with_capacity(n_eff);
        let mut total = 0usize;
        for j in 0..n_eff {
            row_offsets.push(total);
            total += n_eff - j;
        }
        let mut costs = vec![0.0; total];
        let mut spd = SmallSpd::new(n);
        let mut gram = vec![0.0; n * n];
        let mut rhs = vec![0.0; n];
        let mut beta = vec![0.0; n];
        for j in 0..n_eff {
            for k in j + 1..=n_eff {
                for t in 0..n * n {
                    gram[t] = g[k * n * n + t] - g[j * n * n + t];
                }
                for t in 0..n {
                    rhs[t] = c[k * n + t] - c[j * n + t];
                }
                let qq = q[k] - q[j];
                spd.load(&gram);
                let mut solvable = spd.factor();
                if !solvable {
                    let trace: f64 = (0..n).map(|i| gram[i * n + i]).sum();
                    spd.load(&gram);
                    spd.add_diagonal(RIDGE_SCALE * trace / n as f64 + 1e-300);
                    solvable = spd.factor();
                }
                let cost = if solvable {
                    beta.copy_from_slice(&rhs);
                    spd.solve(&mut beta);
                    let mut quad = 0.0;
                    let mut lin = 0.0;
                    for i in 0..n {
                        lin += beta[i] * rhs[i];
                        let mut gi = 0.0;
                        for t in 0..n {
                            gi += gram[i * n + t] * beta[t];
                        }
                        quad += beta[i] * gi;
                    }
                    (qq - 2.0 * lin + quad).max(0.0)
                } else {
                    // All-zero segment regressors: the zero fit is optimal.
                    qq
                };
                costs[row_offsets[j] + (k - j - 1)] = cost;
            }
        }
        CostTable {
            n_eff,
            costs,
            row_offsets,
        }
    }
}

impl SegmentCosts for CostTable {
    fn n_eff(&self) -> usize {
        self.n_eff
    }

    fn cost(&self, start: usize, end: usize) -> f64 {
        debug_assert!(start < end && end <= self.n_eff);
        self.costs[self.row_offsets[start] + (end - start - 1)]
    }
}

/// Least-squares cost and minimizer of one aligned segment `[start, end)`.
///
/// The Gram gets a ridge of `ridge * trace/n` only when singular, so
/// degenerate segments (shorter than the regressor dimension) stay
/// solvable. The cost is the explicit residual sum at the minimizer.
pub fn segment_cost(
    x: &RegressorMatrix,
    start: usize,
    end: usize,
    ridge: f64,
) -> (f64, DVector<f64>) {
    assert!(start < end && end <= x.n_eff(), "invalid segment range");
    let n = x.n();
    let xm = x.x();
    let yv = x.y_vec();
    let mut gram = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for k in start..end {
        for i in 0..n {
            let xi = xm[(i, k)];
            for j in 0..n {
                gram[i * n + j] += xi * xm[(j, k)];
            }
            rhs[i] += xi * yv[k];
        }
    }
    let mut spd = SmallSpd::new(n);
    spd.load(&gram);
    if !spd.factor() {
        let trace: f64 = (0..n).map(|i| gram[i * n + i]).sum();
        spd.load(&gram);
        spd.add_diagonal(ridge * trace / n as f64 + 1e-300);
        if !spd.factor() {
            // All-zero segment regressors: the zero fit is optimal.
            let cost = (start..end).map(|k| yv[k] * yv[k]).sum();
            return (cost, DVector::zeros(n));
        }
    }
    let mut beta = rhs.clone();
    spd.solve(&mut beta);
    let beta = DVector::from_vec(beta);
    let mut cost = 0.0;
    for k in start..end {
        let pred: f64 = (0..n).map(|i| beta[i] * xm[(i, k)]).sum();
        let r = yv[k] - pred;
        cost += r * r;
    }
    (cost, beta)
}

/// Streamed recursive least-squares sweep over `[start, end)`.
#[derive(Debug, Clone)]
pub struct RlsSweep {
    /// `costs[i]` is the fitting cost of `[start, start + i + 1)`.
    pub costs: Vec<f64>,
    /// Final parameter estimate for the full stretch.
    pub beta: DVector<f64>,
}

/// Rank-one recursive least squares over a data stretch, emitting the
/// running fitting cost after every sample.
///
/// The first samples double as warm-up: while the accumulated Gram is
/// still singular the emitted cost is the (ridge-stabilized) batch cost
/// of the prefix, and once the Gram inverts the recursion starts from
/// the exact batch state, so the streamed costs match batch least
/// squares to rounding accuracy.
pub fn rls_sweep(x: &RegressorMatrix, start: usize, end: usize) -> RlsSweep {
    assert!(start < end && end <= x.n_eff(), "invalid sweep range");
    let n = x.n();
    let xm = x.x();
    let yv = x.y_vec();
    let mut costs = Vec::with_capacity(end - start);

    // Warm-up: find the first prefix with an invertible Gram.
    let mut gram = nalgebra::DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    let mut warm_end = end;
    let mut chol = None;
    for k in start..end {
        let xk = xm.column(k);
        gram += xk * xk.transpose();
        rhs += xk * yv[k];
        let mut spd = SmallSpd::new(n);
        spd.load(gram.as_slice());
        if spd.factor() {
            warm_end = k + 1;
            chol = Some(spd);
            break;
        }
        costs.push(segment_cost(x, start, k + 1, RIDGE_SCALE).0);
    }
    let Some(spd) = chol else {
        // The whole stretch never excites the regressors fully.
        let beta = segment_cost(x, start, end, RIDGE_SCALE).1;
        return RlsSweep { costs, beta };
    };

    // Exact batch state at the end of the warm-up.
    let mut beta_vec = rhs.as_slice().to_vec();
    spd.solve(&mut beta_vec);
    let mut beta = DVector::from_vec(beta_vec);
    let mut q = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        spd.solve(&mut e);
        for (j, v) in e.iter().enumerate() {
            q[(j, i)] = *v;
        }
    }
    let mut cost: f64 = (start..warm_end)
        .map(|k| {
            let r = yv[k] - xm.column(k).dot(&beta);
            r * r
        })
        .sum();
    costs.push(cost);

    for k in warm_end..end {
        let xk = xm.column(k);
        let qx = &q * xk;
        let denom = 1.0 + xk.dot(&qx);
        let innovation = yv[k] - xk.dot(&beta);
        cost += innovation * innovation / denom;
        let gain = &qx / denom;
        beta += &gain * innovation;
        q -= &gain * qx.transpose();
        costs.push(cost);
    }
    RlsSweep { costs, beta }
}

/// Dynamic-programming tables of optimal prefix costs and last-segment
/// starts.
///
/// `cost(m, k)` is the optimal cost of splitting the aligned prefix
/// `[0, k)` into `m` segments, each at least `dwell` samples long;
/// `last_start(m, k)` is the 0-based start of the final segment of that
/// optimal split.
#[derive(Debug, Clone)]
pub struct DpTables {
    pub m_max: usize,
    pub dwell: usize,
    pub n_eff: usize,
    data_energy: f64,
    c: Vec<f64>,
    p: Vec<usize>,
}

const NO_START: usize = usize::MAX;

impl DpTables {
    pub fn cost(&self, m: usize, k: usize) -> f64 {
        assert!((1..=self.m_max).contains(&m) && k <= self.n_eff);
        self.c[(m - 1) * (self.n_eff + 1) + k]
    }

    pub fn last_start(&self, m: usize, k: usize) -> Option<usize> {
        assert!((1..=self.m_max).contains(&m) && k <= self.n_eff);
        match self.p[(m - 1) * (self.n_eff + 1) + k] {
            NO_START => None,
            s => Some(s),
        }
    }

    /// Total energy of the aligned outputs, used by the selection floor.
    pub fn data_energy(&self) -> f64 {
        self.data_energy
    }
}

/// Fills the tables from an arbitrary cost provider.
pub fn dp_fill(
    costs: &dyn SegmentCosts,
    m_max: usize,
    dwell: usize,
    data_energy: f64,
) -> Result<DpTables> {
    let n_eff = costs.n_eff();
    if dwell == 0 || m_max == 0 {
        return Err(Error::InvalidParameter(
            "dwell and segment budget must be positive".into(),
        ));
    }
    if m_max * dwell > n_eff {
        return Err(Error::InfeasibleDwell {
            m_max,
            dwell,
            n_eff,
        });
    }
    let width = n_eff + 1;
    let mut c = vec![f64::INFINITY; m_max * width];
    let mut p = vec![NO_START; m_max * width];
    for k in dwell..=n_eff {
        c[k] = costs.cost(0, k);
        p[k] = 0;
    }
    for m in 2..=m_max {
        let row = (m - 1) * width;
        let prev = (m - 2) * width;
        for k in m * dwell..=n_eff {
            let mut best = f64::INFINITY;
            let mut best_j = NO_START;
            // The last segment [j, k) and the (m-1)-prefix [0, j) must
            // both honor the dwell bound.
            for j in (m - 1) * dwell..=k - dwell {
                let prior = c[prev + j];
                if !prior.is_finite() {
                    continue;
                }
                let total = prior + costs.cost(j, k);
                if total < best {
                    best = total;
                    best_j = j;
                }
            }
            c[row + k] = best;
            p[row + k] = best_j;
        }
    }
    Ok(DpTables {
        m_max,
        dwell,
        n_eff,
        data_energy,
        c,
        p,
    })
}

/// Builds the cost table from the regressors and fills the DP tables.
pub fn dp_tables(x: &RegressorMatrix, m_max: usize, dwell: usize) -> Result<DpTables> {
    let table = CostTable::build(x);
    let energy = x.y_vec().norm_squared();
    dp_fill(&table, m_max, dwell, energy)
}

/// Recovers the optimal segment starts (0-based) for an `m`-segment
/// split of the full prefix.
pub fn backtrack_boundaries(tables: &DpTables, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > tables.m_max {
        return Err(Error::InvalidParameter(format!(
            "segment count {m} outside 1..={}",
            tables.m_max
        )));
    }
    if !tables.cost(m, tables.n_eff).is_finite() {
        return Err(Error::InfeasibleDwell {
            m_max: m,
            dwell: tables.dwell,
            n_eff: tables.n_eff,
        });
    }
    let mut starts = vec![0usize; m];
    let mut end = tables.n_eff;
    for mm in (1..=m).rev() {
        let s = tables.last_start(mm, end).ok_or_else(|| {
            Error::InvalidParameter(format!("no recorded start for ({mm}, {end})"))
        })?;
        starts[mm - 1] = s;
        end = s;
    }
    Ok(starts)
}

/// A detected segmentation: instants, per-segment least-squares
/// parameters and per-segment residual costs.
///
/// `instants` are 1-based aligned indices with first entry 1 and last
/// entry `n_eff + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub instants: Vec<usize>,
    pub betas: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
    pub total_cost: f64,
}

impl Segmentation {
    /// Number of segments.
    pub fn len(&self) -> usize {
        self.instants.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Half-open 0-based aligned ranges of the segments.
    pub fn ranges(&self) -> Vec<(usize, usize)> {
        self.instants
            .windows(2)
            .map(|w| (w[0] - 1, w[1] - 1))
            .collect()
    }

    /// Interior instants (everything but the fixed first and last).
    pub fn interior(&self) -> &[usize] {
        &self.instants[1..self.instants.len() - 1]
    }
}

/// Recovers the segmentation for a chosen segment count, recomputing
/// per-segment batch parameters and residual costs.
pub fn backtrack(tables: &DpTables, m: usize, x: &RegressorMatrix) -> Result<Segmentation> {
    let starts = backtrack_boundaries(tables, m)?;
    let mut instants = Vec::with_capacity(m + 1);
    for &s in &starts {
        instants.push(s + 1);
    }
    instants.push(tables.n_eff + 1);
    let mut betas = Vec::with_capacity(m);
    let mut costs = Vec::with_capacity(m);
    let mut total = 0.0;
    for w in instants.windows(2) {
        let (cost, beta) = segment_cost(x, w[0] - 1, w[1] - 1, RIDGE_SCALE);
        total += cost;
        costs.push(cost);
        betas.push(beta.iter().copied().collect());
    }
    Ok(Segmentation {
        instants,
        betas,
        costs,
        total_cost: total,
    })
}

/// One row of the segment-count selection table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionRow {
    pub m: usize,
    pub cost: f64,
    /// Log cost-reduction per added segment; `None` for `m = 1`.
    pub criterion: Option<f64>,
}

/// Outcome of the segment-count selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MSelection {
    pub selected: usize,
    /// Set when the one-segment fit is already at the cost floor, in
    /// which case a single segment is reported.
    pub degenerate: bool,
    pub rows: Vec<CriterionRow>,
}

/// Chooses the segment count maximizing the average log cost reduction
/// per added segment, `log(J(1)/J(M)) / (M - 1)` over `M in 2..=m_max`.
///
/// Costs are floored at a small fraction of the data energy so the
/// criterion stays finite on noiseless data; a one-segment fit already
/// at the floor short-circuits to `M = 1`.
pub fn select_m(tables: &DpTables) -> MSelection {
    let floor = COST_FLOOR_REL * tables.data_energy().max(f64::MIN_POSITIVE);
    let j1 = tables.cost(1, tables.n_eff);
    let mut rows = vec![CriterionRow {
        m: 1,
        cost: j1,
        criterion: None,
    }];
    if j1 <= floor {
        for m in 2..=tables.m_max {
            rows.push(CriterionRow {
                m,
                cost: tables.cost(m, tables.n_eff),
                criterion: None,
            });
        }
        return MSelection {
            selected: 1,
            degenerate: true,
            rows,
        };
    }
    let mut best_m = 1;
    let mut best_value = f64::NEG_INFINITY;
    for m in 2..=tables.m_max {
        let jm = tables.cost(m, tables.n_eff);
        let value = (j1.max(floor) / jm.max(floor)).ln() / (m - 1) as f64;
        rows.push(CriterionRow {
            m,
            cost: jm,
            criterion: Some(value),
        });
        if value > best_value {
            best_value = value;
            best_m = m;
        }
    }
    if best_m == 1 {
        // m_max == 1: only the single-segment fit exists.
        return MSelection {
            selected: 1,
            degenerate: false,
            rows,
        };
    }
    MSelection {
        selected: best_m,
        degenerate: false,
        rows,
    }
}

/// Stage-one output: the chosen segmentation plus the selection table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstantIdentification {
    pub segmentation: Segmentation,
    pub selection: MSelection,
}

/// End-to-end switching-instant identification: fill the tables, pick
/// the segment count, backtrack the instants.
pub fn identify_instants(
    x: &RegressorMatrix,
    dwell: usize,
    m_max: usize,
) -> Result<InstantIdentification> {
    let tables = dp_tables(x, m_max, dwell)?;
    let selection = select_m(&tables);
    let segmentation = backtrack(&tables, selection.selected, x)?;
    Ok(InstantIdentification {
        segmentation,
        selection,
    })
}
