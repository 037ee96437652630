//! Command-line front end: dataset simulation, switching-instant
//! detection, full identification runs, seeded replication sweeps and
//! certificate reports, all emitting plot-ready CSV and JSON.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use switchid::dataset::{build_regressors, SystemOrder, TimeSeries, TrueSystem};
use switchid::pipeline::{
    kernel_overlap, predict, ExtractorKind, IdentificationResult, IdentifyConfig, ModePolicy,
    OverlapStat,
};
use switchid::presets::{
    aggregate_thetas, derive_seed, preset_config, run_preset, simulate_preset,
    Preset,
};
use switchid::segmentation::identify_instants;
use switchid::sparsity::summarize;

mod report;

use report::{write_criterion_csv, write_prediction_csv, write_runs_csv, MetricsReport, PeWindowReport};

#[derive(Parser)]
#[command(
    name = "switchid",
    about = "Identification of switched ARX systems from input-output series",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a switched system to CSV with a ground-truth sidecar.
    Simulate(SimulateArgs),
    /// Detect switching instants only and emit the selection table.
    Segment(SegmentArgs),
    /// Run the full identification and emit result, prediction and
    /// criterion files.
    Identify(IdentifyArgs),
    /// Seeded replication sweep of the identification.
    Montecarlo(MontecarloArgs),
    /// Sparsity certificates and excitation diagnostics for a dataset.
    Metrics(MetricsArgs),
}

#[derive(Args, Clone)]
struct OrderArgs {
    /// Output lag count.
    #[arg(long = "order-na")]
    order_na: Option<usize>,
    /// Input lag count.
    #[arg(long = "order-nb")]
    order_nb: Option<usize>,
}

impl OrderArgs {
    fn resolve(&self, preset: Option<Preset>) -> Result<SystemOrder> {
        let default = preset.map(|p| p.order());
        let n_a = self.order_na.or(default.map(|o| o.n_a)).unwrap_or(2);
        let n_b = self.order_nb.or(default.map(|o| o.n_b)).unwrap_or(2);
        Ok(SystemOrder::new(n_a, n_b)?)
    }
}

#[derive(Args, Clone)]
struct TuningArgs {
    /// Minimum dwell between switching instants.
    #[arg(long)]
    dwell: Option<usize>,
    /// Largest segment count considered.
    #[arg(long)]
    mmax: Option<usize>,
    /// Sparsity-inducing extractor.
    #[arg(long, value_enum)]
    extractor: Option<ExtractorArg>,
    /// Convergence tolerance of the reweighting loop.
    #[arg(long)]
    eps0: Option<f64>,
    /// Block-assignment threshold.
    #[arg(long = "eps-thres")]
    eps_thres: Option<f64>,
    /// Momentum decay.
    #[arg(long)]
    alpha: Option<f64>,
    /// Momentum step.
    #[arg(long)]
    eta: Option<f64>,
    /// Initial momentum.
    #[arg(long)]
    v0: Option<f64>,
    /// Raw train/test split index.
    #[arg(long)]
    split: Option<usize>,
}

impl TuningArgs {
    fn resolve(&self, preset: Option<Preset>, extractor_default: ExtractorKind) -> IdentifyConfig {
        let mut cfg = match preset {
            Some(p) => preset_config(p, extractor_default),
            None => IdentifyConfig {
                extractor: extractor_default,
                ..Default::default()
            },
        };
        if let Some(d) = self.dwell {
            cfg.dwell = d;
        }
        if let Some(m) = self.mmax {
            cfg.m_max = m;
        }
        if let Some(e) = self.extractor {
            cfg.extractor = e.into();
        }
        if let Some(v) = self.eps0 {
            cfg.extraction.eps0 = v;
        }
        if let Some(v) = self.eps_thres {
            cfg.extraction.eps_thres = v;
        }
        if let Some(v) = self.alpha {
            cfg.extraction.alpha = v;
        }
        if let Some(v) = self.eta {
            cfg.extraction.eta = v;
        }
        if let Some(v) = self.v0 {
            cfg.extraction.v0 = v;
        }
        if let Some(s) = self.split {
            cfg.split = Some(s);
        }
        cfg
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ExtractorArg {
    L0,
    L1,
}

impl From<ExtractorArg> for ExtractorKind {
    fn from(value: ExtractorArg) -> Self {
        match value {
            ExtractorArg::L0 => ExtractorKind::L0,
            ExtractorArg::L1 => ExtractorKind::L1,
        }
    }
}

/// Parses a signal-to-noise ratio in dB, accepting `inf` for noiseless.
fn parse_snr(value: &str) -> std::result::Result<f64, String> {
    if value.eq_ignore_ascii_case("inf") || value.eq_ignore_ascii_case("infinity") {
        return Ok(f64::INFINITY);
    }
    value
        .parse::<f64>()
        .map_err(|e| format!("invalid SNR {value:?}: {e}"))
}

#[derive(Args)]
struct SimulateArgs {
    /// Benchmark preset (paper-periodic or paper-random).
    #[arg(long)]
    preset: Option<String>,
    /// Ground-truth system description (JSON).
    #[arg(long)]
    system: Option<PathBuf>,
    #[command(flatten)]
    order: OrderArgs,
    /// Number of samples to simulate.
    #[arg(long)]
    n: Option<usize>,
    /// Signal-to-noise ratio in dB (`inf` for noiseless).
    #[arg(long, value_parser = parse_snr)]
    snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "out-dir", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    /// Input series CSV with a `u,y` header.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    order: OrderArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long = "out-dir", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Input series CSV; omit when simulating a preset in place.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Ground-truth sidecar for deviation reporting.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_parser = parse_snr)]
    snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    order: OrderArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long = "out-dir", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MontecarloArgs {
    #[arg(long)]
    preset: String,
    #[arg(long, value_parser = parse_snr)]
    snr: Option<f64>,
    /// Replication count.
    #[arg(long, default_value_t = 100)]
    runs: u64,
    #[arg(long, value_enum, default_value_t = ExtractorArg::L1)]
    extractor: ExtractorArg,
    /// Base seed; replicate seeds derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker count (default: SWITCHID_THREADS or available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long = "out-dir", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    order: OrderArgs,
    /// Optional JSON file with candidate parameter vectors
    /// (`{"thetas": [[...], ...]}`) for overlap statistics.
    #[arg(long)]
    thetas: Option<PathBuf>,
    /// Acceptance threshold for the overlap statistic.
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long = "out-dir", default_value = "out")]
    out_dir: PathBuf,
}

fn main() -> Result<()> {
    // Die quietly on closed pipes (e.g. `switchid identify | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Segment(args) => cmd_segment(args),
        Command::Identify(args) => cmd_identify(args),
        Command::Montecarlo(args) => cmd_montecarlo(args),
        Command::Metrics(args) => cmd_metrics(args),
    }
}

fn parse_preset(name: &Option<String>) -> Result<Option<Preset>> {
    match name {
        Some(n) => Ok(Some(Preset::from_name(n)?)),
        None => Ok(None),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_truth(path: &Path) -> Result<TrueSystem> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    let preset = parse_preset(&args.preset)?;
    let (truth, series) = match (preset, &args.system) {
        (Some(p), None) => {
            let snr = args.snr.unwrap_or_else(|| p.default_snr_db());
            simulate_preset(p, args.seed, snr)?
        }
        (None, Some(path)) => {
            let order = args.order.resolve(None)?;
            let mut truth = read_truth(path)?;
            truth.seed = args.seed;
            let n = args.n.unwrap_or(truth.declared_len());
            let noiseless = switchid::dataset::simulate(
                &TrueSystem {
                    noise_sigma: 0.0,
                    ..truth.clone()
                },
                order,
                &switchid::dataset::InputSpec::default(),
                n,
                switchid::dataset::DEFAULT_OVERFLOW_BOUND,
            )?;
            if let Some(snr) = args.snr {
                truth.noise_sigma = if snr.is_infinite() && snr > 0.0 {
                    0.0
                } else {
                    switchid::dataset::sigma_for_snr(&noiseless.y, snr)?
                };
            }
            let series = switchid::dataset::simulate(
                &truth,
                order,
                &switchid::dataset::InputSpec::default(),
                n,
                switchid::dataset::DEFAULT_OVERFLOW_BOUND,
            )?;
            (truth, series)
        }
        (Some(_), Some(_)) => bail!("--preset and --system are mutually exclusive"),
        (None, None) => bail!("either --preset or --system is required"),
    };
    let csv_path = args.out_dir.join("series.csv");
    series.write_csv_path(&csv_path)?;
    write_json(&args.out_dir.join("truth.json"), &truth)?;
    println!(
        "simulated {} samples, {} segments, sigma = {}",
        series.len(),
        truth.segment_modes.len(),
        truth.noise_sigma
    );
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn cmd_segment(args: SegmentArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    let order = args.order.resolve(None)?;
    let cfg = args.tuning.resolve(None, ExtractorKind::L1);
    let series = TimeSeries::read_csv_path(&args.input, order)?;
    let x = build_regressors(&series)?;
    let id = identify_instants(&x, cfg.dwell, cfg.m_max)?;
    write_json(&args.out_dir.join("segmentation.json"), &id)?;
    write_criterion_csv(&args.out_dir.join("criterion.csv"), &id.selection.rows)?;
    let raw: Vec<usize> = id
        .segmentation
        .interior()
        .iter()
        .map(|&s| x.raw_from_aligned(s))
        .collect();
    println!(
        "selected M = {}{}",
        id.selection.selected,
        if id.selection.degenerate {
            " (single linear model fits the data)"
        } else {
            ""
        }
    );
    println!("interior instants (raw): {raw:?}");
    Ok(())
}

fn print_instant_deviations(truth: &TrueSystem, result: &IdentificationResult, x_offset: usize) {
    let est: Vec<usize> = result.segmentation.instants
        [1..result.segmentation.instants.len() - 1]
        .iter()
        .map(|&s| s + x_offset)
        .collect();
    // Only truth instants whose segment can visibly start inside the
    // training window are comparable.
    let horizon = result
        .split
        .map(|s| s.saturating_sub(result.dwell))
        .unwrap_or(usize::MAX);
    let true_raw: Vec<usize> = truth.switch_instants
        [1..truth.switch_instants.len() - 1]
        .iter()
        .copied()
        .filter(|&s| s <= horizon)
        .collect();
    if est.len() != true_raw.len() {
        println!(
            "instant deviations unavailable: {} estimated vs {} true instants",
            est.len(),
            true_raw.len()
        );
        return;
    }
    println!("instant deviations (raw index):");
    println!("  m    true  estimated  deviation");
    for (i, (&t, &e)) in true_raw.iter().zip(&est).enumerate() {
        println!(
            "  {:<4} {:<5} {:<10} {:+}",
            i + 2,
            t,
            e,
            e as isize - t as isize
        );
    }
}

fn cmd_identify(args: IdentifyArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    let preset = parse_preset(&args.preset)?;
    let order = args.order.resolve(preset)?;
    let cfg = args.tuning.resolve(preset, ExtractorKind::L1);

    let (series, truth): (TimeSeries, Option<TrueSystem>) = match (&args.input, preset) {
        (Some(path), _) => {
            let series = TimeSeries::read_csv_path(path, order)?;
            let truth = match &args.truth {
                Some(p) => Some(read_truth(p)?),
                None => None,
            };
            (series, truth)
        }
        (None, Some(p)) => {
            let snr = args.snr.unwrap_or_else(|| p.default_snr_db());
            let (truth, series) = simulate_preset(p, args.seed, snr)?;
            series.write_csv_path(args.out_dir.join("series.csv"))?;
            write_json(&args.out_dir.join("truth.json"), &truth)?;
            (series, Some(truth))
        }
        (None, None) => bail!("either --input or --preset is required"),
    };

    let result = switchid::pipeline::identify(&series, order, &cfg)?;
    write_json(&args.out_dir.join("result.json"), &result)?;
    write_criterion_csv(&args.out_dir.join("criterion.csv"), &result.criterion)?;

    let x = build_regressors(&series)?;
    let test_pred = match result.split {
        Some(split) if split < series.len() => {
            let test = series.slice(split - x.offset(), series.len())?;
            Some(predict(&result, &test, &ModePolicy::DpAssign)?)
        }
        _ => None,
    };
    write_prediction_csv(
        &args.out_dir.join("prediction.csv"),
        &series,
        &x,
        &result,
        test_pred.as_ref(),
    )?;

    println!("S = {}", result.s);
    let raw: Vec<usize> = result.segmentation.interior()
        .iter()
        .map(|&s| x.raw_from_aligned(s))
        .collect();
    println!("interior instants (raw): {raw:?}");
    println!("fit_train = {:.2}%", result.fit_train);
    if let (Some(ft), Some(fs)) = (result.fit_test, result.fit_test_sim) {
        println!("fit_test (one-step) = {ft:.2}%  fit_test (free-run) = {fs:.2}%");
    }
    if result.stalled {
        println!("note: extraction stalled; some submodels are per-segment fits");
    }
    if let Some(truth) = &truth {
        print_instant_deviations(truth, &result, x.offset());
    }
    Ok(())
}

fn cmd_montecarlo(args: MontecarloArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    let preset = Preset::from_name(&args.preset)?;
    let snr = args.snr.unwrap_or_else(|| preset.default_snr_db());
    let extractor: ExtractorKind = args.extractor.into();
    if args.runs == 0 {
        bail!("--runs must be at least 1");
    }

    let threads = args
        .threads
        .or_else(|| {
            std::env::var("SWITCHID_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .context("building worker pool")?;

    use rayon::prelude::*;
    let outcomes: Vec<(u64, u64, std::result::Result<switchid::presets::ExperimentRun, String>)> =
        pool.install(|| {
            (0..args.runs)
                .into_par_iter()
                .map(|rep| {
                    let seed = derive_seed(args.seed, rep);
                    let outcome =
                        run_preset(preset, seed, snr, extractor).map_err(|e| e.to_string());
                    (rep, seed, outcome)
                })
                .collect()
        });

    let failures: Vec<(u64, &String)> = outcomes
        .iter()
        .filter_map(|(rep, _, r)| r.as_ref().err().map(|e| (*rep, e)))
        .collect();
    write_runs_csv(&args.out_dir.join("runs.csv"), &outcomes)?;

    let succeeded: Vec<&switchid::presets::ExperimentRun> =
        outcomes.iter().filter_map(|(_, _, r)| r.as_ref().ok()).collect();
    let truths = preset.thetas();
    let runs_thetas: Vec<Vec<Vec<f64>>> = succeeded
        .iter()
        .map(|r| r.result.submodels.thetas.clone())
        .collect();
    let stats = aggregate_thetas(&runs_thetas, &truths);
    report::write_params_csv(&args.out_dir.join("params.csv"), &stats)?;

    let summary = report::summarize_runs(
        preset.name(),
        snr,
        extractor,
        args.runs,
        &outcomes,
        &stats,
    );
    write_json(&args.out_dir.join("summary.json"), &summary)?;

    println!(
        "{} runs ({} failed), extractor {:?}, SNR {} dB",
        args.runs,
        failures.len(),
        extractor,
        if snr.is_infinite() { "inf".into() } else { format!("{snr}") }
    );
    if let Some(f) = &summary.fit_test {
        println!(
            "fit_test (one-step): mean {:.2} +- {:.2}, median {:.2}",
            f.mean, f.std, f.median
        );
    }
    if let Some(f) = &summary.fit_test_sim {
        println!(
            "fit_test (free-run): mean {:.2} +- {:.2}, median {:.2}",
            f.mean, f.std, f.median
        );
    }
    for stat in &stats {
        println!(
            "submodel (truth {:?}): matched {} estimates",
            stat.truth, stat.count
        );
    }
    for (rep, err) in &failures {
        eprintln!("replicate {rep} failed: {err}");
    }
    if failures.len() * 10 > args.runs as usize {
        bail!("{} of {} replications failed", failures.len(), args.runs);
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct ThetaFile {
    thetas: Vec<Vec<f64>>,
}

fn cmd_metrics(args: MetricsArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    let order = args.order.resolve(None)?;
    let series = TimeSeries::read_csv_path(&args.input, order)?;
    let x = build_regressors(&series)?;
    let sparsity = summarize(x.x(), x.y_vec());

    let pe_window = PeWindowReport::compute(&x, 2 * x.n());

    let overlaps: Option<Vec<OverlapStat>> = match &args.thetas {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let file: ThetaFile = serde_json::from_str(&text)?;
            Some(kernel_overlap(&file.thetas, &x, args.eps))
        }
        None => None,
    };

    let report = MetricsReport {
        schema_version: 1,
        order,
        n_eff: x.n_eff(),
        sparsity,
        pe_window,
        overlap_eps: args.eps,
        overlaps,
    };
    write_json(&args.out_dir.join("metrics.json"), &report)?;

    match report.sparsity.tau {
        Some(t) => println!("tau = {t:.6}"),
        None => println!("tau undefined for this dataset"),
    }
    if let Some(b) = report.sparsity.theta_bound {
        println!("uniqueness threshold = {b:.4}");
    }
    if let Some(mu) = report.sparsity.mu {
        println!("complement coherence = {mu:.6}");
    }
    if let Some(spark) = report.sparsity.spark {
        println!("spark = {spark}");
    }
    for (k, v) in &report.sparsity.genericity {
        println!("genericity v_{k} = {v}");
    }
    if let Some(overlaps) = &report.overlaps {
        for o in overlaps {
            println!(
                "overlap I({}) & I({}): {:.1}%",
                o.i,
                o.j,
                100.0 * o.fraction
            );
        }
    }
    Ok(())
}
