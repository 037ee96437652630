//! End-to-end identification: segment the series, repeatedly extract
//! submodels from the remaining blocks, merge near-duplicates, label
//! segments and samples, and score one-step-ahead predictions.

use crate::dataset::{build_regressors, RegressorMatrix, SystemOrder, TimeSeries};
use crate::error::{Error, Result};
use crate::extraction::{
    omp_extract, reestimate, reweighted_l1_extract, ExtractionConfig, SegmentBlocks,
};
use crate::segmentation::{
    backtrack_boundaries, dp_fill, identify_instants, segment_cost, select_m, CriterionRow,
    SegmentCosts, Segmentation, RIDGE_SCALE,
};
use crate::sparsity::{projector_from_parts, tau, SparsitySummary};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Safety factor applied to the estimated noise norm when calibrating
/// the matching-pursuit stopping tolerance.
const OMP_NOISE_SLACK: f64 = 1.1;
/// Relative tolerance below which two extracted parameter vectors are
/// merged into one submodel.
pub const DEFAULT_MERGE_TOL: f64 = 1e-3;

/// Which sparsity-inducing extractor drives stage two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    /// Reweighted least squares with momentum.
    L1,
    /// Block orthogonal matching pursuit.
    L0,
}

/// Configuration of the full identification run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifyConfig {
    /// Minimum dwell between switching instants.
    pub dwell: usize,
    /// Largest segment count considered by stage one.
    pub m_max: usize,
    pub extractor: ExtractorKind,
    pub extraction: ExtractionConfig,
    /// Raw sample index splitting train from test; `None` trains on
    /// everything.
    pub split: Option<usize>,
    /// Adapt block assignment to the noise scale estimated in stage
    /// one. Without it a fixed threshold rejects every block once the
    /// noise exceeds the threshold scale.
    pub noise_adaptive: bool,
    /// Relative distance below which extracted parameter vectors merge.
    pub merge_tol: f64,
    /// Window length for the persistent-excitation diagnostic;
    /// defaults to `2n`.
    pub pe_window: Option<usize>,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        IdentifyConfig {
            dwell: 10,
            m_max: 15,
            extractor: ExtractorKind::L1,
            extraction: ExtractionConfig::default(),
            split: None,
            noise_adaptive: true,
            merge_tol: DEFAULT_MERGE_TOL,
            pe_window: None,
        }
    }
}

/// Extracted submodels plus the segment and sample labelings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmodelSet {
    pub thetas: Vec<Vec<f64>>,
    /// 1-based submodel index per segment.
    pub segment_labels: Vec<usize>,
    /// 1-based submodel index per aligned training sample.
    pub sample_labels: Vec<usize>,
    /// Marks submodels created by the stall fallback rather than a
    /// successful extraction round.
    pub from_stall: Vec<bool>,
}

/// Diagnostics of one extraction round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    pub round: usize,
    pub remaining_blocks: usize,
    pub remaining_samples: usize,
    /// Original block indices assigned this round.
    pub assigned_blocks: Vec<usize>,
    pub assigned_samples: usize,
    pub sparsity: SparsitySummary,
    /// Sequential-extraction size condition evaluated on this round's
    /// remaining data: assigned > remaining - threshold > 0.
    pub sequential_bound_holds: Option<bool>,
}

/// Persistent-excitation and uniqueness diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeDiagnostics {
    /// Smallest pairwise distance among the extracted parameters;
    /// `None` with fewer than two submodels.
    pub min_theta_distance: Option<f64>,
    pub distinct_ok: bool,
    /// Per-segment nonsingularity of the regressor Gram.
    pub segment_gram_ok: Vec<bool>,
    /// Per-segment existence of a sample discriminating the segment's
    /// submodel from every other one.
    pub witness_ok: Vec<bool>,
    pub window_order: usize,
    /// Smallest windowed-Gram eigenvalue over all windows.
    pub rho1: Option<f64>,
    /// Largest windowed-Gram eigenvalue over all windows.
    pub rho2: Option<f64>,
    pub window_ok: bool,
    pub pass: bool,
    pub reasons: Vec<String>,
}

/// Full identification output, serializable as a single document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub schema_version: u32,
    pub order: SystemOrder,
    pub dwell: usize,
    pub m_max: usize,
    pub extractor: ExtractorKind,
    pub split: Option<usize>,
    pub segmentation: Segmentation,
    pub selected_m: usize,
    pub degenerate_fit: bool,
    pub criterion: Vec<CriterionRow>,
    pub submodels: SubmodelSet,
    pub s: usize,
    pub rounds: Vec<RoundDiagnostics>,
    pub stalled: bool,
    pub noise_scale: f64,
    pub diagnostics: PeDiagnostics,
    pub fit_train: f64,
    /// One-step-ahead prediction fit on the held-out split.
    pub fit_test: Option<f64>,
    /// Segment-wise free-run (simulated output) fit on the held-out
    /// split; the measure classically reported for model-output
    /// comparisons.
    pub fit_test_sim: Option<f64>,
}

/// Prediction-time mode labeling policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModePolicy {
    /// Segment the test data with costs restricted to the identified
    /// parameter set, honoring the dwell bound.
    DpAssign,
    /// Externally supplied 1-based submodel labels, one per raw test
    /// sample. Testing only.
    OracleModes(Vec<usize>),
}

/// One-step-ahead predictions with their per-sample labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub yhat: Vec<f64>,
    /// 1-based submodel index per aligned sample.
    pub labels: Vec<usize>,
    pub fit: f64,
}

/// Prediction-accuracy percentage `(1 - |yhat - y| / |y - mean(y)|) * 100`.
pub fn fit_score(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::InvalidParameter(format!(
            "length mismatch: {} vs {}",
            y.len(),
            yhat.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::InvalidParameter(
            "fit score needs at least two samples".into(),
        ));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let dev: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
    if dev == 0.0 {
        return Err(Error::ConstantReference);
    }
    let err: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok((1.0 - err / dev) * 100.0)
}

/// Segment costs restricted to a fixed candidate parameter set.
struct CandidateCosts {
    /// Per-candidate prefix sums of squared residuals.
    prefix: Vec<Vec<f64>>,
    n_eff: usize,
}

impl CandidateCosts {
    fn new(thetas: &[Vec<f64>], x: &RegressorMatrix) -> Self {
        let n_eff = x.n_eff();
        let prefix = thetas
            .iter()
            .map(|theta| {
                let mut acc = Vec::with_capacity(n_eff + 1);
                acc.push(0.0);
                let mut run = 0.0;
                for k in 0..n_eff {
                    let pred: f64 = theta
                        .iter()
                        .enumerate()
                        .map(|(i, t)| t * x.x()[(i, k)])
                        .sum();
                    let r = x.y_vec()[k] - pred;
                    run += r * r;
                    acc.push(run);
                }
                acc
            })
            .collect();
        CandidateCosts { prefix, n_eff }
    }

    fn best(&self, start: usize, end: usize) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (s, pref) in self.prefix.iter().enumerate() {
            let c = pref[end] - pref[start];
            if c < best.1 {
                best = (s, c);
            }
        }
        best
    }
}

impl SegmentCosts for CandidateCosts {
    fn n_eff(&self) -> usize {
        self.n_eff
    }

    fn cost(&self, start: usize, end: usize) -> f64 {
        self.best(start, end).1
    }
}

fn predict_aligned(
    thetas: &[Vec<f64>],
    dwell: usize,
    m_max: usize,
    x_t: &RegressorMatrix,
    policy: &ModePolicy,
    raw_len: usize,
) -> Result<Prediction> {
    if thetas.is_empty() {
        return Err(Error::InvalidParameter("no submodels to predict with".into()));
    }
    let n_eff = x_t.n_eff();
    let labels: Vec<usize> = match policy {
        ModePolicy::OracleModes(modes) => {
            if modes.len() != raw_len {
                return Err(Error::PolicyUnavailable);
            }
            let offset = x_t.offset();
            let labels: Vec<usize> = (0..n_eff).map(|k| modes[k + offset]).collect();
            if labels.iter().any(|&l| l == 0 || l > thetas.len()) {
                return Err(Error::PolicyUnavailable);
            }
            labels
        }
        ModePolicy::DpAssign => {
            let costs = CandidateCosts::new(thetas, x_t);
            let m_cap = (n_eff / dwell).max(1).min(m_max);
            let boundaries = if m_cap <= 1 {
                vec![0usize]
            } else {
                let energy = x_t.y_vec().norm_squared();
                let tables = dp_fill(&costs, m_cap, dwell, energy)?;
                let selection = select_m(&tables);
                backtrack_boundaries(&tables, selection.selected)?
            };
            let mut labels = vec![1usize; n_eff];
            for (i, &start) in boundaries.iter().enumerate() {
                let end = boundaries.get(i + 1).copied().unwrap_or(n_eff);
                let (best, _) = costs.best(start, end);
                for slot in labels.iter_mut().take(end).skip(start) {
                    *slot = best + 1;
                }
            }
            labels
        }
    };
    let yhat: Vec<f64> = (0..n_eff)
        .map(|k| {
            let theta = &thetas[labels[k] - 1];
            theta
                .iter()
                .enumerate()
                .map(|(i, t)| t * x_t.x()[(i, k)])
                .sum()
        })
        .collect();
    let y: Vec<f64> = x_t.y_vec().iter().copied().collect();
    let fit = fit_score(&y, &yhat)?;
    Ok(Prediction { yhat, labels, fit })
}

/// Segment-wise free-run outputs: within each contiguous label run the
/// model is simulated forward from the run's initial measured lags, so
/// prediction errors compound inside a segment instead of being reset
/// by measurements at every step.
fn free_run_outputs(
    thetas: &[Vec<f64>],
    labels: &[usize],
    test: &TimeSeries,
    offset: usize,
) -> Vec<f64> {
    let n_a = test.order.n_a;
    let n_b = test.order.n_b;
    let n_eff = labels.len();
    let mut yhat = vec![0.0; n_eff];
    let mut seg_start = 0usize;
    for k in 0..n_eff {
        if k > 0 && labels[k] != labels[k - 1] {
            seg_start = k;
        }
        let theta = &thetas[labels[k] - 1];
        let t_raw = k + offset;
        let mut acc = 0.0;
        for i in 0..n_a {
            let lag_raw = t_raw - 1 - i;
            let lag_aligned = lag_raw as isize - offset as isize;
            let v = if lag_aligned >= seg_start as isize {
                yhat[lag_aligned as usize]
            } else {
                test.y[lag_raw]
            };
            acc += theta[i] * v;
        }
        for i in 0..n_b {
            acc += theta[n_a + i] * test.u[t_raw - 1 - i];
        }
        yhat[k] = acc;
    }
    yhat
}

/// Free-run variant of [`predict`]: labels are chosen by the same
/// policy, but the outputs are simulated forward within each labeled
/// segment rather than predicted one step ahead.
pub fn predict_free_run(
    result: &IdentificationResult,
    test: &TimeSeries,
    policy: &ModePolicy,
) -> Result<Prediction> {
    let x_t = build_regressors(test)?;
    let one_step = predict_aligned(
        &result.submodels.thetas,
        result.dwell,
        result.m_max,
        &x_t,
        policy,
        test.len(),
    )?;
    let yhat = free_run_outputs(
        &result.submodels.thetas,
        &one_step.labels,
        test,
        x_t.offset(),
    );
    let y: Vec<f64> = x_t.y_vec().iter().copied().collect();
    let fit = fit_score(&y, &yhat)?;
    Ok(Prediction {
        yhat,
        labels: one_step.labels,
        fit,
    })
}

/// One-step-ahead prediction on a test series using the identified
/// submodels and the selected labeling policy.
pub fn predict(
    result: &IdentificationResult,
    test: &TimeSeries,
    policy: &ModePolicy,
) -> Result<Prediction> {
    let x_t = build_regressors(test)?;
    predict_aligned(
        &result.submodels.thetas,
        result.dwell,
        result.m_max,
        &x_t,
        policy,
        test.len(),
    )
}

fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

struct PendingSubmodel {
    theta: Vec<f64>,
    blocks: Vec<usize>,
    from_stall: bool,
}

/// Runs the complete identification on a time series.
///
/// Stage one segments the training prefix; stage two repeatedly
/// extracts a submodel from the remaining blocks and removes its
/// assignment. When a round assigns nothing, the remaining blocks each
/// become their own flagged least-squares submodel. Extracted
/// parameters that agree to within the merge tolerance are unified and
/// re-estimated.
pub fn identify(
    ts: &TimeSeries,
    order: SystemOrder,
    cfg: &IdentifyConfig,
) -> Result<IdentificationResult> {
    cfg.extraction.validate()?;
    if ts.order != order {
        return Err(Error::InvalidParameter(
            "series order disagrees with requested order".into(),
        ));
    }
    let x_full = build_regressors(ts)?;
    let split_raw = match cfg.split {
        Some(s) => {
            if s <= x_full.offset() || s > ts.len() {
                return Err(Error::InvalidParameter(format!(
                    "split {s} outside ({}, {}]",
                    x_full.offset(),
                    ts.len()
                )));
            }
            s
        }
        None => ts.len(),
    };
    let split_col = split_raw - x_full.offset();
    let x_train = if split_col == x_full.n_eff() {
        x_full.clone()
    } else {
        x_full.truncate(split_col)
    };

    let inst = identify_instants(&x_train, cfg.dwell, cfg.m_max)?;
    let seg = inst.segmentation;
    let m_segments = seg.len();
    let n = x_train.n();

    let dof = (x_train.n_eff() as f64 - (m_segments * n) as f64).max(1.0);
    let sigma_hat = (seg.total_cost / dof).max(0.0).sqrt();

    let blocks = SegmentBlocks::from_segmentation(&x_train, &seg);
    let mut extraction_cfg = cfg.extraction.clone();
    if cfg.noise_adaptive {
        extraction_cfg.noise_floor = Some(sigma_hat);
    }

    let mut remaining: Vec<usize> = (0..blocks.len()).collect();
    let mut pending: Vec<PendingSubmodel> = Vec::new();
    let mut rounds: Vec<RoundDiagnostics> = Vec::new();
    let mut stalled = false;

    while !remaining.is_empty() {
        let sub = blocks.subset(&remaining);
        let (x_e, y_e) = sub.concat_parts();
        let sparsity = SparsitySummary::from_tau(tau(&x_e));
        let n_c = sub.total_samples();
        let outcome = match cfg.extractor {
            ExtractorKind::L1 => reweighted_l1_extract(&sub, &extraction_cfg),
            ExtractorKind::L0 => projector_from_parts(&x_e, &y_e).and_then(|proj| {
                let noise_norm = sigma_hat * ((n_c.saturating_sub(n)).max(1) as f64).sqrt();
                let eps_eff = extraction_cfg.eps0.max(OMP_NOISE_SLACK * noise_norm);
                omp_extract(&sub, &proj, eps_eff)
            }),
        };
        let round_no = rounds.len() + 1;
        match outcome {
            Ok(extracted) if !extracted.assigned.is_empty() => {
                let assigned: Vec<usize> =
                    extracted.assigned.iter().map(|&i| remaining[i]).collect();
                let assigned_samples: usize = assigned.iter().map(|&b| blocks.size(b)).sum();
                let sequential_bound_holds = sparsity.theta_bound.map(|bound| {
                    let lower = n_c as f64 - bound;
                    (assigned_samples as f64) > lower && lower > 0.0
                });
                rounds.push(RoundDiagnostics {
                    round: round_no,
                    remaining_blocks: remaining.len(),
                    remaining_samples: n_c,
                    assigned_blocks: assigned.clone(),
                    assigned_samples,
                    sparsity,
                    sequential_bound_holds,
                });
                pending.push(PendingSubmodel {
                    theta: extracted.theta,
                    blocks: assigned.clone(),
                    from_stall: false,
                });
                remaining.retain(|b| !assigned.contains(b));
            }
            Ok(_)
            | Err(Error::NoBlockAssigned { .. })
            | Err(Error::NoProgress { .. })
            | Err(Error::RankDeficientAssignment { .. })
            | Err(Error::RankDeficientRegressors { .. }) => {
                stalled = true;
                rounds.push(RoundDiagnostics {
                    round: round_no,
                    remaining_blocks: remaining.len(),
                    remaining_samples: n_c,
                    assigned_blocks: Vec::new(),
                    assigned_samples: 0,
                    sparsity,
                    sequential_bound_holds: None,
                });
                for &b in &remaining {
                    let start = blocks.start(b);
                    let end = start + blocks.size(b);
                    let (_, beta) = segment_cost(&x_train, start, end, RIDGE_SCALE);
                    pending.push(PendingSubmodel {
                        theta: beta.iter().copied().collect(),
                        blocks: vec![b],
                        from_stall: true,
                    });
                }
                remaining.clear();
            }
            Err(e) => return Err(e),
        }
    }

    // Merge parameter vectors that agree to within the tolerance and
    // re-estimate on the unioned blocks.
    loop {
        let mut merged_any = false;
        'outer: for i in 0..pending.len() {
            for j in i + 1..pending.len() {
                if relative_distance(&pending[i].theta, &pending[j].theta) <= cfg.merge_tol {
                    let absorbed = pending.remove(j);
                    pending[i].blocks.extend(absorbed.blocks);
                    pending[i].blocks.sort_unstable();
                    pending[i].from_stall &= absorbed.from_stall;
                    if let Ok(theta) = reestimate(&blocks, &pending[i].blocks) {
                        pending[i].theta = theta;
                    }
                    merged_any = true;
                    break 'outer;
                }
            }
        }
        if !merged_any {
            break;
        }
    }

    let s = pending.len();
    let mut segment_labels = vec![0usize; m_segments];
    for (idx, sub) in pending.iter().enumerate() {
        for &b in &sub.blocks {
            segment_labels[b] = idx + 1;
        }
    }
    let ranges = seg.ranges();
    let mut sample_labels = vec![0usize; x_train.n_eff()];
    for (b, &(start, end)) in ranges.iter().enumerate() {
        for slot in sample_labels.iter_mut().take(end).skip(start) {
            *slot = segment_labels[b];
        }
    }

    let thetas: Vec<Vec<f64>> = pending.iter().map(|p| p.theta.clone()).collect();
    let from_stall: Vec<bool> = pending.iter().map(|p| p.from_stall).collect();

    let yhat_train: Vec<f64> = (0..x_train.n_eff())
        .map(|k| {
            let theta = &thetas[sample_labels[k] - 1];
            theta
                .iter()
                .enumerate()
                .map(|(i, t)| t * x_train.x()[(i, k)])
                .sum()
        })
        .collect();
    let y_train: Vec<f64> = x_train.y_vec().iter().copied().collect();
    let fit_train = fit_score(&y_train, &yhat_train)?;

    let (fit_test, fit_test_sim) = if split_raw < ts.len() {
        let test = ts.slice(split_raw - x_full.offset(), ts.len())?;
        let x_t = build_regressors(&test)?;
        let one_step = predict_aligned(
            &thetas,
            cfg.dwell,
            cfg.m_max,
            &x_t,
            &ModePolicy::DpAssign,
            test.len(),
        )?;
        let sim_yhat = free_run_outputs(&thetas, &one_step.labels, &test, x_t.offset());
        let y: Vec<f64> = x_t.y_vec().iter().copied().collect();
        let sim_fit = fit_score(&y, &sim_yhat)?;
        (Some(one_step.fit), Some(sim_fit))
    } else {
        (None, None)
    };

    let pe_window = cfg.pe_window.unwrap_or(2 * n);
    let submodels = SubmodelSet {
        thetas,
        segment_labels,
        sample_labels,
        from_stall,
    };
    let mut result = IdentificationResult {
        schema_version: 1,
        order,
        dwell: cfg.dwell,
        m_max: cfg.m_max,
        extractor: cfg.extractor,
        split: cfg.split,
        segmentation: seg,
        selected_m: inst.selection.selected,
        degenerate_fit: inst.selection.degenerate,
        criterion: inst.selection.rows,
        submodels,
        s,
        rounds,
        stalled,
        noise_scale: sigma_hat,
        diagnostics: PeDiagnostics {
            min_theta_distance: None,
            distinct_ok: true,
            segment_gram_ok: Vec::new(),
            witness_ok: Vec::new(),
            window_order: pe_window,
            rho1: None,
            rho2: None,
            window_ok: false,
            pass: false,
            reasons: Vec::new(),
        },
        fit_train,
        fit_test,
        fit_test_sim,
    };
    result.diagnostics = pe_diagnostics(&result, &x_train);
    Ok(result)
}

/// Checks the identifiability conditions on a finished identification:
/// pairwise parameter distinctness, per-segment Gram nonsingularity,
/// per-segment witness samples, and the windowed excitation bounds.
pub fn pe_diagnostics(result: &IdentificationResult, x: &RegressorMatrix) -> PeDiagnostics {
    let thetas = &result.submodels.thetas;
    let mut reasons = Vec::new();

    let mut min_dist: Option<f64> = None;
    for i in 0..thetas.len() {
        for j in i + 1..thetas.len() {
            let d: f64 = thetas[i]
                .iter()
                .zip(&thetas[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min_dist = Some(min_dist.map_or(d, |m: f64| m.min(d)));
        }
    }
    let distinct_ok = match min_dist {
        Some(d) => d > 1e-8,
        None => true,
    };
    if !distinct_ok {
        reasons.push("two submodels share their parameters".into());
    }

    let ranges = result.segmentation.ranges();
    let n = x.n();
    let mut segment_gram_ok = Vec::with_capacity(ranges.len());
    for &(start, end) in &ranges {
        let mut gram = DMatrix::zeros(n, n);
        for k in start..end.min(x.n_eff()) {
            let col = x.x().column(k);
            gram += col * col.transpose();
        }
        let eig = gram.symmetric_eigen().eigenvalues;
        let max = eig.iter().cloned().fold(0.0, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        segment_gram_ok.push(max > 0.0 && min > 1e-10 * max);
    }
    if segment_gram_ok.iter().any(|ok| !ok) {
        reasons.push("a segment has a singular regressor Gram".into());
    }

    let labels = &result.submodels.segment_labels;
    let mut witness_ok = Vec::with_capacity(ranges.len());
    for (m, &(start, end)) in ranges.iter().enumerate() {
        let own = labels.get(m).copied().unwrap_or(0);
        if own == 0 || thetas.len() < 2 {
            witness_ok.push(!thetas.is_empty());
            continue;
        }
        let theta_own = &thetas[own - 1];
        let mut found = false;
        'samples: for k in start..end.min(x.n_eff()) {
            let xk = x.x().column(k);
            let mut discriminates = true;
            for (i, other) in thetas.iter().enumerate() {
                if i + 1 == own {
                    continue;
                }
                let delta: Vec<f64> = theta_own.iter().zip(other).map(|(a, b)| a - b).collect();
                let delta_norm: f64 = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
                let proj: f64 = delta.iter().enumerate().map(|(i, d)| d * xk[i]).sum();
                if proj.abs() <= 1e-8 * xk.norm() * delta_norm.max(1e-300) {
                    discriminates = false;
                    break;
                }
            }
            if discriminates {
                found = true;
                break 'samples;
            }
        }
        witness_ok.push(found);
    }
    if witness_ok.iter().any(|ok| !ok) {
        reasons.push("a segment lacks a discriminating witness sample".into());
    }

    let oe = result.diagnostics.window_order.max(1);
    let (rho1, rho2) = if x.n_eff() >= oe {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for k0 in 0..=x.n_eff() - oe {
            let mut gram = DMatrix::zeros(n, n);
            for k in k0..k0 + oe {
                let col = x.x().column(k);
                gram += col * col.transpose();
            }
            gram /= oe as f64;
            let eig = gram.symmetric_eigen().eigenvalues;
            lo = lo.min(eig.iter().cloned().fold(f64::INFINITY, f64::min));
            hi = hi.max(eig.iter().cloned().fold(0.0, f64::max));
        }
        (Some(lo), Some(hi))
    } else {
        (None, None)
    };
    let window_ok = match (rho1, rho2) {
        (Some(lo), Some(hi)) => hi > 0.0 && lo > 1e-10 * hi,
        _ => false,
    };
    if !window_ok {
        reasons.push("windowed excitation bound failed or was unavailable".into());
    }

    let pass = distinct_ok
        && segment_gram_ok.iter().all(|&ok| ok)
        && witness_ok.iter().all(|&ok| ok)
        && window_ok;
    PeDiagnostics {
        min_theta_distance: min_dist,
        distinct_ok,
        segment_gram_ok,
        witness_ok,
        window_order: oe,
        rho1,
        rho2,
        window_ok,
        pass,
        reasons,
    }
}

/// Pairwise overlap statistics between the per-sample acceptance sets
/// of candidate parameter vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapStat {
    /// 1-based candidate indices.
    pub i: usize,
    pub j: usize,
    pub fraction: f64,
}

/// Fraction of samples whose normalized residual is at or below `eps`
/// under both members of each candidate pair.
pub fn kernel_overlap(thetas: &[Vec<f64>], x: &RegressorMatrix, eps: f64) -> Vec<OverlapStat> {
    let n = x.n();
    let n_eff = x.n_eff();
    let accepted: Vec<Vec<bool>> = thetas
        .iter()
        .map(|theta| {
            let norm_bar = (1.0 + theta.iter().map(|t| t * t).sum::<f64>()).sqrt();
            (0..n_eff)
                .map(|k| {
                    let pred: f64 = theta
                        .iter()
                        .enumerate()
                        .map(|(i, t)| t * x.x()[(i, k)])
                        .sum();
                    let resid = (x.y_vec()[k] - pred).abs();
                    let mut scale = x.y_vec()[k].abs();
                    for i in 0..n {
                        scale += x.x()[(i, k)].abs();
                    }
                    scale /= (n + 1) as f64;
                    resid <= eps * scale.max(f64::MIN_POSITIVE) * norm_bar
                })
                .collect()
        })
        .collect();
    let mut stats = Vec::new();
    for i in 0..thetas.len() {
        for j in i + 1..thetas.len() {
            let both = accepted[i]
                .iter()
                .zip(&accepted[j])
                .filter(|(a, b)| **a && **b)
                .count();
            stats.push(OverlapStat {
                i: i + 1,
                j: j + 1,
                fraction: both as f64 / n_eff as f64,
            });
        }
    }
    stats
}
