//! File emitters and summary types for the command-line tool.
#![allow(clippy::needless_range_loop)]

use anyhow::{Context, Result};
use nalgebra_shim::window_eigen_bounds;
use serde::Serialize;
use std::io::Write;
use std::path::Path;
use switchid::dataset::{RegressorMatrix, SystemOrder, TimeSeries};
use switchid::pipeline::{ExtractorKind, IdentificationResult, OverlapStat, Prediction};
use switchid::presets::{ExperimentRun, PerTruthStats};
use switchid::segmentation::CriterionRow;
use switchid::sparsity::SparsitySummary;

/// Windowed excitation bounds computed without a full identification.
#[derive(Debug, Clone, Serialize)]
pub struct PeWindowReport {
    pub window_order: usize,
    pub rho1: Option<f64>,
    pub rho2: Option<f64>,
    pub ok: bool,
}

impl PeWindowReport {
    pub fn compute(x: &RegressorMatrix, window: usize) -> Self {
        let (rho1, rho2) = window_eigen_bounds(x, window.max(1));
        let ok = match (rho1, rho2) {
            (Some(lo), Some(hi)) => hi > 0.0 && lo > 1e-10 * hi,
            _ => false,
        };
        PeWindowReport {
            window_order: window.max(1),
            rho1,
            rho2,
            ok,
        }
    }
}

/// Minimal eigen helper kept local to the binary.
mod nalgebra_shim {
    use switchid::dataset::RegressorMatrix;

    pub fn window_eigen_bounds(
        x: &RegressorMatrix,
        window: usize,
    ) -> (Option<f64>, Option<f64>) {
        let n = x.n();
        let n_eff = x.n_eff();
        if n_eff < window {
            return (None, None);
        }
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for k0 in 0..=n_eff - window {
            let mut gram = nalgebra::DMatrix::<f64>::zeros(n, n);
            for k in k0..k0 + window {
                let col = x.x().column(k);
                gram += col * col.transpose();
            }
            gram /= window as f64;
            let eig = gram.symmetric_eigen().eigenvalues;
            lo = lo.min(eig.iter().cloned().fold(f64::INFINITY, f64::min));
            hi = hi.max(eig.iter().cloned().fold(0.0, f64::max));
        }
        (Some(lo), Some(hi))
    }
}

/// Full certificate report emitted by the metrics subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub order: SystemOrder,
    pub n_eff: usize,
    pub sparsity: SparsitySummary,
    pub pe_window: PeWindowReport,
    pub overlap_eps: f64,
    pub overlaps: Option<Vec<OverlapStat>>,
}

pub fn write_criterion_csv(path: &Path, rows: &[CriterionRow]) -> Result<()> {
    let mut out = String::from("m,cost,criterion\n");
    for row in rows {
        match row.criterion {
            Some(c) => out.push_str(&format!("{},{},{}\n", row.m, row.cost, c)),
            None => out.push_str(&format!("{},{},\n", row.m, row.cost)),
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Per-sample `(k, y, yhat, label)` rows over the aligned samples, the
/// training part labeled by the identification and the test part by the
/// prediction policy.
pub fn write_prediction_csv(
    path: &Path,
    series: &TimeSeries,
    x: &RegressorMatrix,
    result: &IdentificationResult,
    test_pred: Option<&Prediction>,
) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "k,y,yhat,label")?;
    let offset = x.offset();
    let labels = &result.submodels.sample_labels;
    for k in 0..labels.len() {
        let theta = &result.submodels.thetas[labels[k] - 1];
        let yhat: f64 = theta
            .iter()
            .enumerate()
            .map(|(i, t)| t * x.x()[(i, k)])
            .sum();
        writeln!(
            w,
            "{},{},{},{}",
            k + offset + 1,
            series.y[k + offset],
            yhat,
            labels[k]
        )?;
    }
    if let (Some(pred), Some(split)) = (test_pred, result.split) {
        for (j, (&label, &yhat)) in pred.labels.iter().zip(&pred.yhat).enumerate() {
            let raw0 = split + j;
            writeln!(w, "{},{},{},{}", raw0 + 1, series.y[raw0], yhat, label)?;
        }
    }
    w.flush()?;
    Ok(())
}

type Outcome = (u64, u64, std::result::Result<ExperimentRun, String>);

pub fn write_runs_csv(path: &Path, outcomes: &[Outcome]) -> Result<()> {
    let mut rows = String::from(
        "replicate,seed,status,s,selected_m,stalled,fit_train,fit_test,fit_test_sim\n",
    );
    let mut sorted: Vec<&Outcome> = outcomes.iter().collect();
    sorted.sort_by_key(|(rep, _, _)| *rep);
    for (rep, seed, outcome) in sorted {
        match outcome {
            Ok(run) => {
                let r = &run.result;
                rows.push_str(&format!(
                    "{},{},ok,{},{},{},{},{},{}\n",
                    rep,
                    seed,
                    r.s,
                    r.selected_m,
                    r.stalled,
                    r.fit_train,
                    r.fit_test.map_or(String::new(), |v| v.to_string()),
                    r.fit_test_sim.map_or(String::new(), |v| v.to_string()),
                ));
            }
            Err(e) => {
                rows.push_str(&format!(
                    "{},{},error,,,,,,\n",
                    rep,
                    seed
                ));
                let _ = e;
            }
        }
    }
    std::fs::write(path, rows).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_params_csv(path: &Path, stats: &[PerTruthStats]) -> Result<()> {
    let mut rows = String::from("submodel,coord,truth,mean,std,mean_abs_err,count\n");
    for (s, stat) in stats.iter().enumerate() {
        for i in 0..stat.truth.len() {
            rows.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s + 1,
                i + 1,
                stat.truth[i],
                stat.mean.get(i).copied().unwrap_or(f64::NAN),
                stat.std.get(i).copied().unwrap_or(f64::NAN),
                stat.mean_abs_err.get(i).copied().unwrap_or(f64::NAN),
                stat.count
            ));
        }
    }
    std::fs::write(path, rows).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl FitSummary {
    fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Some(FitSummary {
            mean,
            median: sorted[n / 2],
            std: var.sqrt(),
            min: sorted[0],
            max: sorted[n - 1],
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub preset: String,
    pub snr_db: Option<f64>,
    pub extractor: ExtractorKind,
    pub runs: u64,
    pub failures: u64,
    pub s_counts: std::collections::BTreeMap<usize, usize>,
    pub fit_train: Option<FitSummary>,
    pub fit_test: Option<FitSummary>,
    pub fit_test_sim: Option<FitSummary>,
    pub params: Vec<PerTruthStats>,
}

pub fn summarize_runs(
    preset: &str,
    snr_db: f64,
    extractor: ExtractorKind,
    runs: u64,
    outcomes: &[Outcome],
    params: &[PerTruthStats],
) -> SweepSummary {
    let ok: Vec<&ExperimentRun> = outcomes.iter().filter_map(|(_, _, r)| r.as_ref().ok()).collect();
    let mut s_counts = std::collections::BTreeMap::new();
    for run in &ok {
        *s_counts.entry(run.result.s).or_insert(0usize) += 1;
    }
    let fit_train: Vec<f64> = ok.iter().map(|r| r.result.fit_train).collect();
    let fit_test: Vec<f64> = ok.iter().filter_map(|r| r.result.fit_test).collect();
    let fit_test_sim: Vec<f64> = ok.iter().filter_map(|r| r.result.fit_test_sim).collect();
    SweepSummary {
        schema_version: 1,
        preset: preset.to_string(),
        snr_db: if snr_db.is_infinite() { None } else { Some(snr_db) },
        extractor,
        runs,
        failures: outcomes.iter().filter(|(_, _, r)| r.is_err()).count() as u64,
        s_counts,
        fit_train: FitSummary::from_values(&fit_train),
        fit_test: FitSummary::from_values(&fit_test),
        fit_test_sim: FitSummary::from_values(&fit_test_sim),
        params: params.to_vec(),
    }
}
