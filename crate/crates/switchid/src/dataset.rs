//! Data model for switched ARX time series: lag structure, raw series,
//! regressor construction, synthetic simulation and CSV ingestion.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Default bound above which a simulated output is treated as divergent.
pub const DEFAULT_OVERFLOW_BOUND: f64 = 1e9;

/// Lag structure of an ARX model: `n_a` output lags and `n_b` input lags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemOrder {
    pub n_a: usize,
    pub n_b: usize,
}

impl SystemOrder {
    pub fn new(n_a: usize, n_b: usize) -> Result<Self> {
        if n_a + n_b == 0 {
            return Err(Error::EmptyOrder);
        }
        Ok(Self { n_a, n_b })
    }

    /// Total regressor dimension.
    pub fn n(&self) -> usize {
        self.n_a + self.n_b
    }

    /// Number of leading samples that cannot form a complete lag stack.
    pub fn burn_in(&self) -> usize {
        self.n_a.max(self.n_b)
    }
}

/// Scalar input-output series together with its lag structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub order: SystemOrder,
}

impl TimeSeries {
    pub fn new(u: Vec<f64>, y: Vec<f64>, order: SystemOrder) -> Result<Self> {
        if u.len() != y.len() {
            return Err(Error::LengthMismatch {
                u_len: u.len(),
                y_len: y.len(),
            });
        }
        Ok(Self { u, y, order })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Sub-series over raw samples `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidParameter(format!(
                "slice [{start}, {end}) out of range for series of length {}",
                self.len()
            )));
        }
        Ok(Self {
            u: self.u[start..end].to_vec(),
            y: self.y[start..end].to_vec(),
            order: self.order,
        })
    }

    /// Writes the series as `u,y` CSV rows with full float precision.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["u", "y"])?;
        for (u, y) in self.u.iter().zip(&self.y) {
            wtr.write_record([format!("{u}"), format!("{y}")])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }

    /// Reads a two-column `u,y` CSV with a one-line header.
    pub fn read_csv<R: Read>(reader: R, order: SystemOrder) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut u = Vec::new();
        let mut y = Vec::new();
        for record in rdr.records() {
            let record = record?;
            if record.len() < 2 {
                return Err(Error::InvalidParameter(format!(
                    "expected two columns per row, got {}",
                    record.len()
                )));
            }
            let pu: f64 = record[0].trim().parse().map_err(|_| {
                Error::InvalidParameter(format!("cannot parse input sample {:?}", &record[0]))
            })?;
            let py: f64 = record[1].trim().parse().map_err(|_| {
                Error::InvalidParameter(format!("cannot parse output sample {:?}", &record[1]))
            })?;
            u.push(pu);
            y.push(py);
        }
        Self::new(u, y, order)
    }

    pub fn read_csv_path<P: AsRef<Path>>(path: P, order: SystemOrder) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, order)
    }
}

/// Regressor matrix built from a series: column `j` stacks the output
/// and input lags of aligned sample `j`, so it depends only on samples
/// strictly before the output `y_vec[j]` it is paired with.
#[derive(Debug, Clone)]
pub struct RegressorMatrix {
    x: DMatrix<f64>,
    y_vec: DVector<f64>,
    offset: usize,
    order: SystemOrder,
}

impl RegressorMatrix {
    /// Regressor dimension.
    pub fn n(&self) -> usize {
        self.order.n()
    }

    /// Number of usable (aligned) samples.
    pub fn n_eff(&self) -> usize {
        self.x.ncols()
    }

    /// Index of the first raw sample with a complete lag stack.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn order(&self) -> SystemOrder {
        self.order
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y_vec(&self) -> &DVector<f64> {
        &self.y_vec
    }

    /// Regressor column for aligned sample `j`.
    pub fn column(&self, j: usize) -> DVector<f64> {
        self.x.column(j).into_owned()
    }

    /// Restriction to the first `n_cols` aligned samples.
    pub fn truncate(&self, n_cols: usize) -> Self {
        assert!(n_cols <= self.n_eff());
        Self {
            x: self.x.columns(0, n_cols).into_owned(),
            y_vec: DVector::from_fn(n_cols, |i, _| self.y_vec[i]),
            offset: self.offset,
            order: self.order,
        }
    }

    /// Maps a raw 1-based switching instant to aligned 1-based
    /// coordinates, clamping instants inside the burn-in window to the
    /// first valid index.
    pub fn align_raw_instant(&self, raw_1based: usize) -> usize {
        raw_1based.saturating_sub(self.offset).max(1)
    }

    /// Maps an aligned 1-based instant back to raw 1-based time.
    pub fn raw_from_aligned(&self, aligned_1based: usize) -> usize {
        aligned_1based + self.offset
    }
}

/// Builds the regressor matrix and the aligned output vector.
///
/// The first `max(n_a, n_b)` samples are burn-in and excluded.
pub fn build_regressors(ts: &TimeSeries) -> Result<RegressorMatrix> {
    let order = ts.order;
    let offset = order.burn_in();
    if ts.len() <= offset {
        return Err(Error::SeriesTooShort {
            len: ts.len(),
            min_len: offset + 1,
        });
    }
    let n_eff = ts.len() - offset;
    let n = order.n();
    let mut x = DMatrix::zeros(n, n_eff);
    for j in 0..n_eff {
        let t = j + offset;
        for i in 0..order.n_a {
            x[(i, j)] = ts.y[t - 1 - i];
        }
        for i in 0..order.n_b {
            x[(order.n_a + i, j)] = ts.u[t - 1 - i];
        }
    }
    let y_vec = DVector::from_fn(n_eff, |j, _| ts.y[j + offset]);
    Ok(RegressorMatrix {
        x,
        y_vec,
        offset,
        order,
    })
}

/// Ground-truth description of a switched ARX system.
///
/// `switch_instants` are raw 1-based instants `s_1 = 1 < ... < s_{M+1}`,
/// the last one pointing one past the final sample of the last segment.
/// `segment_modes` holds the 1-based active submodel per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueSystem {
    pub thetas: Vec<Vec<f64>>,
    pub switch_instants: Vec<usize>,
    pub segment_modes: Vec<usize>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl TrueSystem {
    pub fn validate(&self, order: SystemOrder) -> Result<()> {
        if self.thetas.is_empty() {
            return Err(Error::InvalidSystem("no submodel parameters".into()));
        }
        let n = order.n();
        for (i, theta) in self.thetas.iter().enumerate() {
            if theta.len() != n {
                return Err(Error::InvalidSystem(format!(
                    "theta {} has dimension {}, expected {}",
                    i,
                    theta.len(),
                    n
                )));
            }
        }
        if self.switch_instants.len() < 2 || self.switch_instants[0] != 1 {
            return Err(Error::InvalidSystem(
                "switch instants must start at 1 and contain the end boundary".into(),
            ));
        }
        if !self.switch_instants.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidSystem(
                "switch instants must be strictly increasing".into(),
            ));
        }
        if self.segment_modes.len() + 1 != self.switch_instants.len() {
            return Err(Error::InvalidSystem(format!(
                "{} segment modes for {} instants",
                self.segment_modes.len(),
                self.switch_instants.len()
            )));
        }
        let s_count = self.thetas.len();
        if let Some(bad) = self
            .segment_modes
            .iter()
            .find(|&&m| m == 0 || m > s_count)
        {
            return Err(Error::InvalidSystem(format!(
                "segment mode {bad} outside 1..={s_count}"
            )));
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidSystem("noise sigma must be nonnegative".into()));
        }
        Ok(())
    }

    /// Number of samples covered by the declared instants.
    pub fn declared_len(&self) -> usize {
        self.switch_instants.last().copied().unwrap_or(1) - 1
    }

    /// 1-based mode of each raw sample `1..=n`, extending the final
    /// segment beyond the declared end boundary.
    pub fn sample_modes(&self, n: usize) -> Vec<usize> {
        let mut modes = vec![*self.segment_modes.last().unwrap(); n];
        for (m, window) in self.switch_instants.windows(2).enumerate() {
            let start = window[0] - 1;
            let end = (window[1] - 1).min(n);
            for slot in modes.iter_mut().take(end).skip(start.min(n)) {
                *slot = self.segment_modes[m];
            }
        }
        modes
    }
}

/// Input excitation descriptor for simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InputSpec {
    Gaussian { mean: f64, std_dev: f64 },
}

impl Default for InputSpec {
    fn default() -> Self {
        InputSpec::Gaussian {
            mean: 0.0,
            std_dev: 1.0,
        }
    }
}

/// Simulates a switched ARX system with zero initial lags.
///
/// The output recursion is `y_k = theta_{mode(k)}^T x_k + e_k` with
/// `e_k` i.i.d. Gaussian of standard deviation `noise_sigma`. Input and
/// noise streams derive deterministically from the system seed, so the
/// input realization is unchanged when only the noise level varies.
pub fn simulate(
    sys: &TrueSystem,
    order: SystemOrder,
    input: &InputSpec,
    n_samples: usize,
    overflow_bound: f64,
) -> Result<TimeSeries> {
    sys.validate(order)?;
    if n_samples < sys.declared_len() {
        return Err(Error::InvalidSystem(format!(
            "requested {} samples but instants declare {}",
            n_samples,
            sys.declared_len()
        )));
    }
    let mut master = ChaCha8Rng::seed_from_u64(sys.seed);
    let u_seed = master.gen::<u64>();
    let e_seed = master.gen::<u64>();

    let u = match *input {
        InputSpec::Gaussian { mean, std_dev } => {
            let dist = Normal::new(mean, std_dev)
                .map_err(|e| Error::InvalidParameter(format!("input distribution: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(u_seed);
            (0..n_samples).map(|_| dist.sample(&mut rng)).collect::<Vec<_>>()
        }
    };
    let noise: Vec<f64> = {
        let std_normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(e_seed);
        (0..n_samples)
            .map(|_| sys.noise_sigma * std_normal.sample(&mut rng))
            .collect()
    };

    let modes = sys.sample_modes(n_samples);
    let mut y = vec![0.0; n_samples];
    for k in 0..n_samples {
        let theta = &sys.thetas[modes[k] - 1];
        let mut acc = 0.0;
        for i in 0..order.n_a {
            if k > i {
                acc += theta[i] * y[k - 1 - i];
            }
        }
        for i in 0..order.n_b {
            if k > i {
                acc += theta[order.n_a + i] * u[k - 1 - i];
            }
        }
        let value = acc + noise[k];
        if !value.is_finite() || value.abs() > overflow_bound {
            return Err(Error::DivergentTrajectory {
                index: k,
                value,
                bound: overflow_bound,
            });
        }
        y[k] = value;
    }
    TimeSeries::new(u, y, order)
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64
}

/// Noise standard deviation achieving a signal-to-noise ratio in dB
/// against the variance of the given noiseless output.
pub fn sigma_for_snr(noiseless_y: &[f64], snr_db: f64) -> Result<f64> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(0.0);
    }
    let var = variance(noiseless_y);
    if var <= 0.0 {
        return Err(Error::DegenerateSignal);
    }
    Ok((var / 10f64.powf(snr_db / 10.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn order(n_a: usize, n_b: usize) -> SystemOrder {
        SystemOrder::new(n_a, n_b).unwrap()
    }

    #[test]
    fn regressor_columns_are_lag_stacks() {
        let ts = TimeSeries::new(vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], order(1, 1)).unwrap();
        let reg = build_regressors(&ts).unwrap();
        assert_eq!(reg.n_eff(), 2);
        assert_eq!(reg.column(0).as_slice(), &[4.0, 1.0]);
        assert_eq!(reg.y_vec()[0], 5.0);
        assert_eq!(reg.column(1).as_slice(), &[5.0, 2.0]);
        assert_eq!(reg.y_vec()[1], 6.0);
    }

    #[test]
    fn effective_length_discounts_burn_in() {
        let ts = TimeSeries::new(vec![0.0; 1000], vec![1.0; 1000], order(2, 2)).unwrap();
        let reg = build_regressors(&ts).unwrap();
        assert_eq!(reg.n_eff(), 998);
        assert_eq!(reg.offset(), 2);
    }

    #[test]
    fn too_short_series_is_rejected() {
        let ts = TimeSeries::new(vec![1.0, 2.0], vec![1.0, 2.0], order(2, 2)).unwrap();
        match build_regressors(&ts) {
            Err(Error::SeriesTooShort { len: 2, min_len: 3 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        match TimeSeries::new(vec![1.0], vec![1.0, 2.0], order(1, 0)) {
            Err(Error::LengthMismatch { u_len: 1, y_len: 2 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    fn single_mode_system(theta: Vec<f64>, n: usize, sigma: f64, seed: u64) -> TrueSystem {
        TrueSystem {
            thetas: vec![theta],
            switch_instants: vec![1, n + 1],
            segment_modes: vec![1],
            noise_sigma: sigma,
            seed,
        }
    }

    #[test]
    fn zero_input_zero_noise_yields_zero_output() {
        let sys = single_mode_system(vec![0.5], 10, 0.0, 7);
        let ts = simulate(
            &sys,
            order(1, 0),
            &InputSpec::Gaussian {
                mean: 0.0,
                std_dev: 1.0,
            },
            10,
            DEFAULT_OVERFLOW_BOUND,
        )
        .unwrap();
        assert!(ts.y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noiseless_single_mode_satisfies_regression_identity() {
        let theta = vec![-0.4, 0.25, -0.15, 0.08];
        let sys = single_mode_system(theta.clone(), 300, 0.0, 42);
        let ts = simulate(&sys, order(2, 2), &InputSpec::default(), 300, 1e9).unwrap();
        let reg = build_regressors(&ts).unwrap();
        let theta = DVector::from_vec(theta);
        let resid = reg.y_vec() - reg.x().transpose() * &theta;
        let rel = resid.norm() / reg.y_vec().norm();
        assert!(rel < 1e-10, "relative residual {rel}");
    }

    #[test]
    fn seeded_simulation_is_bit_identical() {
        let sys = single_mode_system(vec![0.3, 0.5], 200, 0.05, 99);
        let a = simulate(&sys, order(1, 1), &InputSpec::default(), 200, 1e9).unwrap();
        let b = simulate(&sys, order(1, 1), &InputSpec::default(), 200, 1e9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn input_stream_is_invariant_to_noise_level() {
        let quiet = single_mode_system(vec![0.3, 0.5], 50, 0.0, 5);
        let noisy = TrueSystem {
            noise_sigma: 0.7,
            ..quiet.clone()
        };
        let a = simulate(&quiet, order(1, 1), &InputSpec::default(), 50, 1e9).unwrap();
        let b = simulate(&noisy, order(1, 1), &InputSpec::default(), 50, 1e9).unwrap();
        assert_eq!(a.u, b.u);
        assert_ne!(a.y, b.y);
    }

    #[test]
    fn divergent_trajectory_is_detected() {
        let sys = single_mode_system(vec![1.5, 1.0], 200, 0.0, 3);
        match simulate(&sys, order(1, 1), &InputSpec::default(), 200, 1e6) {
            Err(Error::DivergentTrajectory { .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn sigma_for_snr_matches_hand_values() {
        let y: Vec<f64> = vec![1.0, -1.0, 1.0, -1.0]; // variance 1
        assert_relative_eq!(sigma_for_snr(&y, 0.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(sigma_for_snr(&y, 20.0).unwrap(), 0.1, epsilon = 1e-12);
        let y4: Vec<f64> = vec![2.0, -2.0, 2.0, -2.0]; // variance 4
        assert_relative_eq!(
            sigma_for_snr(&y4, 30.0).unwrap(),
            2.0 * 10f64.powf(-1.5),
            epsilon = 1e-12
        );
        assert_eq!(sigma_for_snr(&y, f64::INFINITY).unwrap(), 0.0);
    }

    #[test]
    fn sigma_for_snr_rejects_constant_signal() {
        match sigma_for_snr(&[3.0, 3.0, 3.0], 10.0) {
            Err(Error::DegenerateSignal) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn realized_snr_is_close_to_requested() {
        let theta = vec![-0.4, 0.25, -0.15, 0.08];
        let noiseless = single_mode_system(theta.clone(), 1000, 0.0, 11);
        let ts0 = simulate(&noiseless, order(2, 2), &InputSpec::default(), 1000, 1e9).unwrap();
        let sigma = sigma_for_snr(&ts0.y, 30.0).unwrap();
        // Reconstruct the realized noise stream deterministically.
        let noisy = TrueSystem {
            noise_sigma: sigma,
            ..noiseless
        };
        let _ = simulate(&noisy, order(2, 2), &InputSpec::default(), 1000, 1e9).unwrap();
        let mut master = ChaCha8Rng::seed_from_u64(noisy.seed);
        let _u_seed = master.gen::<u64>();
        let e_seed = master.gen::<u64>();
        let std_normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(e_seed);
        let noise: Vec<f64> = (0..1000).map(|_| sigma * std_normal.sample(&mut rng)).collect();
        let snr_emp = 10.0 * (variance(&ts0.y) / variance(&noise)).log10();
        assert!((snr_emp - 30.0).abs() < 0.5, "empirical SNR {snr_emp}");
    }

    #[test]
    fn csv_round_trip_preserves_samples() {
        let ts = TimeSeries::new(
            vec![0.1, -2.5e-7, 3.0],
            vec![1.0 / 3.0, 2.0, -4.25],
            order(1, 1),
        )
        .unwrap();
        let mut buf = Vec::new();
        ts.write_csv(&mut buf).unwrap();
        let back = TimeSeries::read_csv(buf.as_slice(), order(1, 1)).unwrap();
        assert_eq!(ts, back);
    }

    #[test]
    fn instant_alignment_clamps_burn_in() {
        let ts = TimeSeries::new(vec![0.0; 20], vec![1.0; 20], order(2, 2)).unwrap();
        let reg = build_regressors(&ts).unwrap();
        assert_eq!(reg.align_raw_instant(1), 1);
        assert_eq!(reg.align_raw_instant(2), 1);
        assert_eq!(reg.align_raw_instant(3), 1);
        assert_eq!(reg.align_raw_instant(10), 8);
        assert_eq!(reg.raw_from_aligned(8), 10);
    }

    #[test]
    fn sample_modes_extend_last_segment() {
        let sys = TrueSystem {
            thetas: vec![vec![0.0], vec![0.1]],
            switch_instants: vec![1, 4, 6],
            segment_modes: vec![1, 2],
            noise_sigma: 0.0,
            seed: 0,
        };
        assert_eq!(sys.sample_modes(8), vec![1, 1, 1, 2, 2, 2, 2, 2]);
    }
}
