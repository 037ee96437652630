//! Benchmark presets: canned switched-system setups with fixed
//! submodels and switching schedules, plus helpers for seeded
//! replication sweeps. The `paper-periodic` preset uses three
//! second-order submodels with periodic switching; `paper-random` uses
//! two close second-order submodels with randomly drawn instants.

use crate::dataset::{
    sigma_for_snr, simulate, InputSpec, SystemOrder, TimeSeries, TrueSystem,
    DEFAULT_OVERFLOW_BOUND,
};
use crate::error::{Error, Result};
use crate::pipeline::{identify, ExtractorKind, IdentificationResult, IdentifyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Available benchmark presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Three submodels of order (2, 2), periodic switches every 100
    /// samples over 1000 samples.
    Periodic3,
    /// Two close submodels of order (2, 2), 14 randomly placed
    /// interior switching instants over 1000 samples.
    Random2,
}

impl Preset {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "paper-periodic" => Ok(Preset::Periodic3),
            "paper-random" => Ok(Preset::Random2),
            other => Err(Error::InvalidParameter(format!(
                "unknown preset {other:?} (expected paper-periodic or paper-random)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Periodic3 => "paper-periodic",
            Preset::Random2 => "paper-random",
        }
    }

    pub fn order(&self) -> SystemOrder {
        SystemOrder { n_a: 2, n_b: 2 }
    }

    pub fn n_samples(&self) -> usize {
        1000
    }

    /// Default raw train/test split index.
    pub fn split(&self) -> usize {
        800
    }

    pub fn dwell(&self) -> usize {
        10
    }

    pub fn m_max(&self) -> usize {
        match self {
            Preset::Periodic3 => 15,
            Preset::Random2 => 20,
        }
    }

    /// Default signal-to-noise ratio in dB; infinite means noiseless.
    pub fn default_snr_db(&self) -> f64 {
        match self {
            Preset::Periodic3 => 30.0,
            Preset::Random2 => f64::INFINITY,
        }
    }

    pub fn thetas(&self) -> Vec<Vec<f64>> {
        match self {
            Preset::Periodic3 => vec![
                vec![-0.4, 0.25, -0.15, 0.08],
                vec![0.55, -0.58, -1.1, 1.2],
                vec![1.0, -0.24, -0.65, 0.3],
            ],
            Preset::Random2 => vec![
                vec![-0.9, -0.2, 0.16, 0.2],
                vec![-0.8, -0.1, 0.26, 0.15],
            ],
        }
    }

    /// Minimum gap enforced between randomly drawn instants.
    pub fn min_gap(&self) -> usize {
        30
    }
}

/// Builds the noiseless ground-truth system for a preset and seed.
///
/// The periodic preset has a fixed schedule; the random preset draws
/// its instants deterministically from the seed.
pub fn build_system(preset: Preset, seed: u64) -> (TrueSystem, SystemOrder) {
    let order = preset.order();
    let n = preset.n_samples();
    match preset {
        Preset::Periodic3 => {
            let mut instants = vec![1usize];
            instants.extend((1..=9).map(|m| 100 * m));
            instants.push(n + 1);
            (
                TrueSystem {
                    thetas: preset.thetas(),
                    switch_instants: instants,
                    segment_modes: vec![1, 2, 3, 1, 2, 1, 2, 1, 3, 2],
                    noise_sigma: 0.0,
                    seed,
                },
                order,
            )
        }
        Preset::Random2 => {
            let mut master = ChaCha8Rng::seed_from_u64(seed);
            let segments = 15;
            let min_gap = preset.min_gap();
            // Distribute the slack one unit at a time so every gap is
            // at least `min_gap` and the gaps sum to the series length.
            let mut gaps = vec![min_gap; segments];
            for _ in 0..n - segments * min_gap {
                let idx = master.gen_range(0..segments);
                gaps[idx] += 1;
            }
            let mut instants = Vec::with_capacity(segments + 1);
            let mut s = 1usize;
            instants.push(s);
            for gap in gaps {
                s += gap;
                instants.push(s);
            }
            debug_assert_eq!(*instants.last().unwrap(), n + 1);
            let modes = (0..segments).map(|m| 1 + m % 2).collect();
            let sim_seed = master.gen::<u64>();
            (
                TrueSystem {
                    thetas: preset.thetas(),
                    switch_instants: instants,
                    segment_modes: modes,
                    noise_sigma: 0.0,
                    seed: sim_seed,
                },
                order,
            )
        }
    }
}

/// Simulates a preset at the requested signal-to-noise ratio,
/// returning the resolved ground truth (with its noise level filled
/// in) and the realized series.
pub fn simulate_preset(preset: Preset, seed: u64, snr_db: f64) -> Result<(TrueSystem, TimeSeries)> {
    let (sys0, order) = build_system(preset, seed);
    let n = preset.n_samples();
    let noiseless = simulate(&sys0, order, &InputSpec::default(), n, DEFAULT_OVERFLOW_BOUND)?;
    let sigma = if snr_db.is_infinite() && snr_db > 0.0 {
        0.0
    } else {
        sigma_for_snr(&noiseless.y, snr_db)?
    };
    let sys = TrueSystem {
        noise_sigma: sigma,
        ..sys0
    };
    let series = simulate(&sys, order, &InputSpec::default(), n, DEFAULT_OVERFLOW_BOUND)?;
    Ok((sys, series))
}

/// Identification configuration matching a preset's published setup.
pub fn preset_config(preset: Preset, extractor: ExtractorKind) -> IdentifyConfig {
    IdentifyConfig {
        dwell: preset.dwell(),
        m_max: preset.m_max(),
        extractor,
        split: Some(preset.split()),
        ..Default::default()
    }
}

/// One full preset run: simulate, identify, keep everything.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub truth: TrueSystem,
    pub series: TimeSeries,
    pub result: IdentificationResult,
}

pub fn run_preset(
    preset: Preset,
    seed: u64,
    snr_db: f64,
    extractor: ExtractorKind,
) -> Result<ExperimentRun> {
    let (truth, series) = simulate_preset(preset, seed, snr_db)?;
    let cfg = preset_config(preset, extractor);
    let result = identify(&series, preset.order(), &cfg)?;
    Ok(ExperimentRun {
        truth,
        series,
        result,
    })
}

/// Derives a replication seed from a base seed (splitmix64 step).
pub fn derive_seed(base: u64, replicate: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E3779B97F4A7C15u64.wrapping_mul(replicate.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Index of the nearest truth vector by Euclidean distance.
pub fn nearest_truth(estimate: &[f64], truths: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, truth) in truths.iter().enumerate() {
        let d: f64 = estimate
            .iter()
            .zip(truth)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Per-truth aggregation of matched estimates across replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerTruthStats {
    pub truth: Vec<f64>,
    pub count: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub mean_abs_err: Vec<f64>,
}

/// Matches every estimated parameter vector of every run to its
/// nearest truth and aggregates per-coordinate statistics.
pub fn aggregate_thetas(runs: &[Vec<Vec<f64>>], truths: &[Vec<f64>]) -> Vec<PerTruthStats> {
    let dim = truths.first().map_or(0, |t| t.len());
    let mut buckets: Vec<Vec<&Vec<f64>>> = vec![Vec::new(); truths.len()];
    for run in runs {
        for estimate in run {
            buckets[nearest_truth(estimate, truths)].push(estimate);
        }
    }
    truths
        .iter()
        .zip(buckets)
        .map(|(truth, matched)| {
            let count = matched.len();
            let mut mean = vec![0.0; dim];
            let mut mean_abs_err = vec![0.0; dim];
            for est in &matched {
                for i in 0..dim {
                    mean[i] += est[i];
                    mean_abs_err[i] += (est[i] - truth[i]).abs();
                }
            }
            if count > 0 {
                for i in 0..dim {
                    mean[i] /= count as f64;
                    mean_abs_err[i] /= count as f64;
                }
            }
            let mut std = vec![0.0; dim];
            if count > 1 {
                for est in &matched {
                    for i in 0..dim {
                        std[i] += (est[i] - mean[i]).powi(2);
                    }
                }
                for v in std.iter_mut() {
                    *v = (*v / (count - 1) as f64).sqrt();
                }
            }
            PerTruthStats {
                truth: truth.clone(),
                count,
                mean,
                std,
                mean_abs_err,
            }
        })
        .collect()
}
