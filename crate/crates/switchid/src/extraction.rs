//! Stage two: extraction of one submodel parameter vector from
//! segmented data by sparsity inducing, either through iteratively
//! reweighted least squares with a momentum term on the block weights
//! or through a block orthogonal matching pursuit on the
//! complement-projector system.

use crate::error::{Error, Result};
use crate::dataset::RegressorMatrix;
use crate::segmentation::Segmentation;
use crate::sparsity::{nu, nu_vec, Projector};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Segmented data blocks `[y_m, -T_m^T]` of shape `p_m x (n + 1)`.
///
/// For any parameter vector `theta` and its lifted form
/// `theta_bar = [1, theta]`, the product of a block with `theta_bar`
/// equals the residual vector `y_m - T_m^T theta`.
#[derive(Debug, Clone)]
pub struct SegmentBlocks {
    d_bars: Vec<DMatrix<f64>>,
    starts: Vec<usize>,
    n: usize,
}

impl SegmentBlocks {
    /// Blocks cut from aligned half-open ranges.
    pub fn from_ranges(x: &RegressorMatrix, ranges: &[(usize, usize)]) -> Self {
        let n = x.n();
        let mut d_bars = Vec::with_capacity(ranges.len());
        let mut starts = Vec::with_capacity(ranges.len());
        for &(start, end) in ranges {
            assert!(start < end && end <= x.n_eff(), "invalid block range");
            let p = end - start;
            let mut d = DMatrix::zeros(p, n + 1);
            for (row, k) in (start..end).enumerate() {
                d[(row, 0)] = x.y_vec()[k];
                for i in 0..n {
                    d[(row, i + 1)] = -x.x()[(i, k)];
                }
            }
            d_bars.push(d);
            starts.push(start);
        }
        SegmentBlocks { d_bars, starts, n }
    }

    pub fn from_segmentation(x: &RegressorMatrix, seg: &Segmentation) -> Self {
        Self::from_ranges(x, &seg.ranges())
    }

    /// One block per sample; the degenerate per-sample variant.
    pub fn singletons(x: &RegressorMatrix) -> Self {
        let ranges: Vec<(usize, usize)> = (0..x.n_eff()).map(|k| (k, k + 1)).collect();
        Self::from_ranges(x, &ranges)
    }

    pub fn len(&self) -> usize {
        self.d_bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_bars.is_empty()
    }

    /// Regressor dimension `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn block(&self, m: usize) -> &DMatrix<f64> {
        &self.d_bars[m]
    }

    /// Aligned start of block `m` in the originating regressor matrix.
    pub fn start(&self, m: usize) -> usize {
        self.starts[m]
    }

    pub fn size(&self, m: usize) -> usize {
        self.d_bars[m].nrows()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.d_bars.iter().map(|d| d.nrows()).collect()
    }

    pub fn total_samples(&self) -> usize {
        self.d_bars.iter().map(|d| d.nrows()).sum()
    }

    /// Restriction to a subset of block indices, preserving order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        SegmentBlocks {
            d_bars: indices.iter().map(|&m| self.d_bars[m].clone()).collect(),
            starts: indices.iter().map(|&m| self.starts[m]).collect(),
            n: self.n,
        }
    }

    /// Residual vector of block `m` under `theta`.
    pub fn residual(&self, m: usize, theta: &[f64]) -> DVector<f64> {
        assert_eq!(theta.len(), self.n);
        let d = &self.d_bars[m];
        let mut theta_bar = DVector::zeros(self.n + 1);
        theta_bar[0] = 1.0;
        for (i, &t) in theta.iter().enumerate() {
            theta_bar[i + 1] = t;
        }
        d * theta_bar
    }

    /// Concatenated regressors (n x total) and outputs of the blocks.
    pub fn concat_parts(&self) -> (DMatrix<f64>, DVector<f64>) {
        let total = self.total_samples();
        let mut x = DMatrix::zeros(self.n, total);
        let mut y = DVector::zeros(total);
        let mut col = 0;
        for d in &self.d_bars {
            for row in 0..d.nrows() {
                y[col] = d[(row, 0)];
                for i in 0..self.n {
                    x[(i, col)] = -d[(row, i + 1)];
                }
                col += 1;
            }
        }
        (x, y)
    }
}

/// Hyperparameters of the sparsity-inducing extraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Convergence tolerance on consecutive parameter iterates.
    pub eps0: f64,
    /// Normalized-residual threshold for block assignment.
    pub eps_thres: f64,
    /// Momentum decay.
    pub alpha: f64,
    /// Momentum step.
    pub eta: f64,
    /// Initial momentum.
    pub v0: f64,
    /// Iteration cap for the reweighting loop.
    pub max_iters: usize,
    /// Floor applied to weight denominators.
    pub weight_floor: f64,
    /// Estimated per-sample residual scale of a correctly assigned
    /// block; enables the noise-consistent assignment clause.
    pub noise_floor: Option<f64>,
    /// Multiplier on `noise_floor` for the assignment clause.
    pub noise_gate: f64,
    /// Override for the initial iterate; defaults to the global
    /// least-squares fit over all blocks.
    pub initial_theta: Option<Vec<f64>>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            eps0: 1e-3,
            eps_thres: 1e-4,
            alpha: 0.9,
            eta: 0.01,
            v0: 0.1,
            max_iters: 100,
            weight_floor: 1e-8,
            noise_floor: None,
            noise_gate: 1.25,
            initial_theta: None,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps0.is_nan() || self.eps0 <= 0.0 {
            return Err(Error::InvalidParameter("eps0 must be positive".into()));
        }
        if self.eps_thres.is_nan() || self.eps_thres <= 0.0 {
            return Err(Error::InvalidParameter("eps_thres must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter("alpha must lie in [0, 1)".into()));
        }
        if self.eta.is_nan() || self.eta <= 0.0 {
            return Err(Error::InvalidParameter("eta must be positive".into()));
        }
        if self.weight_floor.is_nan() || self.weight_floor <= 0.0 {
            return Err(Error::InvalidParameter("weight_floor must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// One extracted submodel: parameters, assigned blocks and the
/// normalized residual of every block under the final parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractedSubmodel {
    pub theta: Vec<f64>,
    pub assigned: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub residual_profile: Vec<f64>,
}

fn theta_norm_bar(theta: &[f64]) -> f64 {
    (1.0 + theta.iter().map(|t| t * t).sum::<f64>()).sqrt()
}

/// Normalized block residual of each block under `theta`:
/// `|resid|_1 / (nu(block) * |theta_bar|_2 * p_m)`.
pub fn residual_profile(theta: &[f64], blocks: &SegmentBlocks) -> Vec<f64> {
    let norm_bar = theta_norm_bar(theta);
    (0..blocks.len())
        .map(|m| {
            let r = blocks.residual(m, theta);
            let l1: f64 = r.iter().map(|v| v.abs()).sum();
            let p = blocks.size(m) as f64;
            let scale = nu(blocks.block(m)).unwrap_or(0.0).max(f64::MIN_POSITIVE);
            l1 / (scale * norm_bar * p)
        })
        .collect()
}

/// Blocks whose normalized residual under `theta` is at or below the
/// threshold (inclusive boundary).
pub fn assign_blocks(theta: &[f64], blocks: &SegmentBlocks, eps_thres: f64) -> Vec<usize> {
    residual_profile(theta, blocks)
        .iter()
        .enumerate()
        .filter(|(_, &r)| r <= eps_thres)
        .map(|(m, _)| m)
        .collect()
}

/// Assignment with the additional noise-consistency clause: a block is
/// also accepted when its mean absolute residual stays within
/// `gate * floor` of the estimated noise scale.
fn assign_blocks_gated(theta: &[f64], blocks: &SegmentBlocks, cfg: &ExtractionConfig) -> Vec<usize> {
    let profile = residual_profile(theta, blocks);
    (0..blocks.len())
        .filter(|&m| {
            if profile[m] <= cfg.eps_thres {
                return true;
            }
            if let Some(floor) = cfg.noise_floor {
                let mean_abs = nu_vec(blocks.residual(m, theta).as_slice()).unwrap_or(f64::MAX);
                // Mean |N(0, sigma)| is sigma * sqrt(2/pi).
                return mean_abs <= cfg.noise_gate * floor * (2.0 / std::f64::consts::PI).sqrt();
            }
            false
        })
        .collect()
}

/// Batch least squares of the outputs on the regressors of the
/// assigned blocks.
pub fn reestimate(blocks: &SegmentBlocks, assigned: &[usize]) -> Result<Vec<f64>> {
    if assigned.is_empty() {
        return Err(Error::EmptyBlock);
    }
    let sub = blocks.subset(assigned);
    let (x, y) = sub.concat_parts();
    let r = crate::sparsity::rank(&x);
    if r < blocks.n() {
        return Err(Error::RankDeficientAssignment {
            rank: r,
            expected: blocks.n(),
        });
    }
    let gram = &x * x.transpose();
    let rhs = &x * y;
    let chol = gram.cholesky().ok_or(Error::RankDeficientAssignment {
        rank: r,
        expected: blocks.n(),
    })?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Weighted least squares over all blocks with per-block weights.
fn weighted_ls(blocks: &SegmentBlocks, weights: &[f64]) -> Result<Vec<f64>> {
    let n = blocks.n();
    let max_w = weights.iter().cloned().fold(0.0, f64::max);
    if max_w <= 0.0 {
        return Err(Error::InvalidParameter("all block weights vanished".into()));
    }
    let mut gram = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for m in 0..blocks.len() {
        let w = (weights[m] / max_w).powi(2);
        if w == 0.0 {
            continue;
        }
        let d = blocks.block(m);
        for row in 0..d.nrows() {
            let yk = d[(row, 0)];
            for i in 0..n {
                let xi = -d[(row, i + 1)];
                rhs[i] += w * xi * yk;
                for j in 0..n {
                    gram[(i, j)] += w * xi * -d[(row, j + 1)];
                }
            }
        }
    }
    let solved = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => {
            let trace: f64 = gram.trace();
            let ridge = 1e-10 * trace.max(1e-300) / n as f64;
            let ridged = gram + DMatrix::identity(n, n) * ridge;
            ridged
                .cholesky()
                .ok_or(Error::RankDeficientAssignment { rank: 0, expected: n })?
                .solve(&rhs)
        }
    };
    Ok(solved.iter().copied().collect())
}

/// Extracts one submodel by iteratively reweighted least squares with
/// momentum on the block weights.
///
/// Each iteration solves the block-weighted least-squares problem in
/// `theta` (the objective is affine in `theta` with unit leading
/// coefficient), then updates per-block momenta and weights from the
/// mean absolute block residuals. After convergence the blocks are
/// assigned by normalized residual and the parameters re-estimated by
/// batch least squares on the assigned blocks.
pub fn reweighted_l1_extract(
    blocks: &SegmentBlocks,
    cfg: &ExtractionConfig,
) -> Result<ExtractedSubmodel> {
    cfg.validate()?;
    if blocks.is_empty() {
        return Err(Error::EmptyBlock);
    }
    let m_count = blocks.len();
    let n = blocks.n();
    if blocks.total_samples() <= n {
        return Err(Error::InvalidParameter(format!(
            "need more than {n} samples across blocks, got {}",
            blocks.total_samples()
        )));
    }

    // Static per-block data scales.
    let nu_d: Vec<f64> = (0..m_count)
        .map(|m| nu(blocks.block(m)).unwrap_or(0.0).max(cfg.weight_floor))
        .collect();

    let mut theta_prev = match &cfg.initial_theta {
        Some(t) => {
            if t.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "initial theta has dimension {}, expected {n}",
                    t.len()
                )));
            }
            t.clone()
        }
        None => {
            let all: Vec<usize> = (0..m_count).collect();
            reestimate(blocks, &all).or_else(|_| weighted_ls(blocks, &vec![1.0; m_count]))?
        }
    };

    let mut momentum = vec![cfg.v0; m_count];
    let mut weights = vec![1.0; m_count];
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let effective: Vec<f64> = (0..m_count).map(|m| weights[m] / nu_d[m]).collect();
        let theta = weighted_ls(blocks, &effective)?;
        let step: f64 = theta
            .iter()
            .zip(&theta_prev)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if step <= cfg.eps0 {
            theta_prev = theta;
            converged = true;
            break;
        }
        for m in 0..m_count {
            let resid_scale = nu_vec(blocks.residual(m, &theta).as_slice())
                .unwrap_or(f64::MAX)
                .max(cfg.weight_floor);
            momentum[m] = cfg.alpha * momentum[m] - cfg.eta / resid_scale;
            // Floor the denominator proportionally to the residual scale
            // so saturated weights keep their relative ordering; a flat
            // floor would freeze the reweighting at uniform weights once
            // the momenta overshoot.
            let denom = (resid_scale + momentum[m])
                .max(cfg.weight_floor * resid_scale)
                .max(1e-30);
            weights[m] = 1.0 / denom;
        }
        theta_prev = theta;
    }

    let mut assigned = assign_blocks_gated(&theta_prev, blocks, cfg);
    if assigned.is_empty() {
        return Err(Error::NoBlockAssigned {
            eps_thres: cfg.eps_thres,
        });
    }
    let mut theta = reestimate(blocks, &assigned).unwrap_or_else(|_| theta_prev.clone());
    // One refresh pass so the assignment is consistent with the
    // returned parameters.
    let refreshed = assign_blocks_gated(&theta, blocks, cfg);
    if !refreshed.is_empty() && refreshed != assigned {
        assigned = refreshed;
        theta = reestimate(blocks, &assigned).unwrap_or(theta);
    }
    Ok(ExtractedSubmodel {
        residual_profile: residual_profile(&theta, blocks),
        theta,
        assigned,
        iterations,
        converged,
    })
}

/// Outcome of the greedy block support selection.
#[derive(Debug, Clone)]
pub struct OmpReport {
    /// Blocks whose columns entered the support, in selection order.
    pub support: Vec<usize>,
    /// Residual norm after each selection.
    pub residual_norms: Vec<f64>,
    pub iterations: usize,
    /// True when the residual tolerance was met.
    pub converged: bool,
}

/// Greedy block orthogonal matching pursuit on `a_x z = b_x`.
///
/// Sweeps the unselected column blocks, adds the block explaining the
/// residual best, refits on the enlarged support and repeats until the
/// residual norm drops to `eps0` or the support is exhausted.
pub fn block_omp(
    a_x: &DMatrix<f64>,
    b_x: &DVector<f64>,
    sizes: &[usize],
    eps0: f64,
) -> Result<OmpReport> {
    let total: usize = sizes.iter().sum();
    assert_eq!(total, a_x.ncols(), "block sizes must partition the columns");
    let m_count = sizes.len();
    let mut col_start = Vec::with_capacity(m_count);
    let mut acc = 0;
    for &s in sizes {
        col_start.push(acc);
        acc += s;
    }

    // Per-block Gram factors for the sweep step.
    let mut block_chols = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let a_m = a_x.columns(col_start[m], sizes[m]).into_owned();
        let gram = a_m.transpose() * &a_m;
        let chol = match gram.clone().cholesky() {
            Some(c) => c,
            None => {
                let ridge = 1e-12 * gram.trace().max(1e-300) / sizes[m] as f64;
                (gram + DMatrix::identity(sizes[m], sizes[m]) * ridge)
                    .cholesky()
                    .ok_or(Error::RankDeficientAssignment {
                        rank: 0,
                        expected: sizes[m],
                    })?
            }
        };
        block_chols.push((a_m, chol));
    }

    let mut selected = vec![false; m_count];
    let mut support = Vec::new();
    let mut residual_norms = Vec::new();
    let mut r = b_x.clone();
    let mut iterations = 0;
    loop {
        if r.norm() <= eps0 {
            return Ok(OmpReport {
                support,
                residual_norms,
                iterations,
                converged: true,
            });
        }
        let mut best: Option<(usize, f64)> = None;
        for m in 0..m_count {
            if selected[m] {
                continue;
            }
            let (a_m, chol) = &block_chols[m];
            let w = a_m.transpose() * &r;
            let z = chol.solve(&w);
            let eps_m = (r.norm_squared() - w.dot(&z)).max(0.0);
            match best {
                Some((_, current)) if eps_m >= current => {}
                _ => best = Some((m, eps_m)),
            }
        }
        let Some((pick, _)) = best else {
            // Support exhausted without reaching the tolerance.
            return Ok(OmpReport {
                support,
                residual_norms,
                iterations,
                converged: false,
            });
        };
        selected[pick] = true;
        support.push(pick);
        iterations += 1;

        // Refit on the whole support.
        let width: usize = support.iter().map(|&m| sizes[m]).sum();
        let mut a_s = DMatrix::zeros(a_x.nrows(), width);
        let mut col = 0;
        for &m in &support {
            for j in 0..sizes[m] {
                a_s.set_column(col, &a_x.column(col_start[m] + j));
                col += 1;
            }
        }
        let gram = a_s.transpose() * &a_s;
        let chol = match gram.clone().cholesky() {
            Some(c) => c,
            None => {
                let ridge = 1e-12 * gram.trace().max(1e-300) / width as f64;
                (gram + DMatrix::identity(width, width) * ridge)
                    .cholesky()
                    .ok_or(Error::RankDeficientAssignment {
                        rank: 0,
                        expected: width,
                    })?
            }
        };
        let z = chol.solve(&(a_s.transpose() * b_x));
        let r_new = b_x - &a_s * z;
        if r_new.norm_squared() > r.norm_squared() * (1.0 - 1e-12) + 1e-300
            && r_new.norm() > eps0
        {
            return Err(Error::NoProgress {
                residual: r_new.norm(),
            });
        }
        r = r_new;
        residual_norms.push(r.norm());
    }
}

/// Extracts one submodel by block orthogonal matching pursuit.
///
/// The selected support collects the blocks that explain the projected
/// output, which are exactly the blocks *not* generated by the dominant
/// submodel; the submodel is therefore re-estimated on the complement
/// (or on everything when the support swallowed all blocks).
pub fn omp_extract(
    blocks: &SegmentBlocks,
    projector: &Projector,
    eps0: f64,
) -> Result<ExtractedSubmodel> {
    if blocks.is_empty() {
        return Err(Error::EmptyBlock);
    }
    let sizes = blocks.sizes();
    let report = block_omp(&projector.a_x, &projector.b_x, &sizes, eps0)?;
    let in_support: Vec<bool> = {
        let mut flags = vec![false; blocks.len()];
        for &m in &report.support {
            flags[m] = true;
        }
        flags
    };
    let complement: Vec<usize> = (0..blocks.len()).filter(|&m| !in_support[m]).collect();
    let assigned = if complement.is_empty() {
        (0..blocks.len()).collect::<Vec<_>>()
    } else {
        complement
    };
    let theta = reestimate(blocks, &assigned)?;
    Ok(ExtractedSubmodel {
        residual_profile: residual_profile(&theta, blocks),
        theta,
        assigned,
        iterations: report.iterations,
        converged: report.converged,
    })
}
