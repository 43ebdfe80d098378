//! Seeded Monte Carlo benchmarking of the estimators on the study systems.
//!
//! A declarative [`ExperimentConfig`] names the data-generating setup, the
//! record lengths, the order-selection mode, and the estimators to compare;
//! [`run_experiment`] executes every `(n, run)` cell with seed
//! `base_seed + run`, times each estimator around its own call (order search
//! is shared preprocessing and excluded), and collects per-run records that
//! regenerate bit-identically — only wall times vary between executions.
//! [`summarize`] folds records into per-`(n, estimator)` table rows and
//! [`emit_plot_data`] renders plot-ready CSV series.

use crate::arx::{aic_select_order, recommended_order};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{fit_metric, mse_dynamic};
use crate::model::{
    benchmark_model_basic, benchmark_model_oscillatory, sample_random_bj, BjModel, ModelOrders,
    ThetaVector,
};
use crate::pem::{gn_refine, GnReport};
use crate::poly::{Polynomial, RationalFilter};
use crate::sd::{sd_estimate, ArxOrder, SdEstimate};
use crate::sim::{
    gen_closed_loop, gen_open_loop, input_from_reference, noise_reference, reference_stream,
    scale_noise_for_snr, simulate_with_scaled_noise, InputSpec, SnrMode,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Full record length behind the prefix-based studies.
pub const FULL_RECORD_LEN: usize = 20_000;

/// Which data-generating study a benchmark draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Fixed second-order system, open loop, shaped reference input.
    BasicOpenLoop,
    /// The same system under unit output feedback.
    BasicClosedLoop,
    /// Fixed fourth-order oscillatory system, low-pass input, noise scaled
    /// to a target signal-to-noise ratio on the full record.
    Oscillatory,
    /// A fresh random fourth-order system per run, low-pass input, scaled
    /// noise.
    RandomSystems,
}

/// How the first-stage order is chosen for every run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    Fixed(usize),
    Aic(Vec<usize>),
    /// Rule-of-thumb order from the true model's slowest mode (an oracle
    /// diagnostic, since it peeks at the truth).
    Recommended,
}

/// The estimators a benchmark can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Three-stage sequential least squares.
    Sd,
    /// The same followed by damped Gauss-Newton refinement.
    Sdgn,
    /// Refinement started at the true parameters (oracle reference).
    PemTrue,
    /// Refinement started from a crude initializer: stage-two dynamics with
    /// an identity noise model.
    PemDefault,
}

impl EstimatorKind {
    /// Stable column label used in CSV output.
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Sd => "sd",
            EstimatorKind::Sdgn => "sdgn",
            EstimatorKind::PemTrue => "pem_true",
            EstimatorKind::PemDefault => "pem_default(approx)",
        }
    }
}

/// Declarative description of one Monte Carlo benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Record lengths, ascending.
    pub n_list: Vec<usize>,
    /// Monte Carlo repetitions per record length.
    pub runs: usize,
    /// Seed of run 0; run `i` uses `base_seed + i`.
    pub base_seed: u64,
    pub order_mode: OrderMode,
    pub estimators: Vec<EstimatorKind>,
    /// Target signal-to-noise ratio; `None` uses the model's own variance.
    pub snr: Option<f64>,
    /// Which denominator the ratio measures (ignored when `snr` is `None`).
    pub snr_mode: SnrMode,
}

impl ExperimentConfig {
    /// Open-loop study of the second-order benchmark system: unit-variance
    /// noise, order 50, lengths 600 / 3000 / 10000.
    pub fn preset_basic_open_loop() -> Self {
        Self {
            kind: ExperimentKind::BasicOpenLoop,
            n_list: vec![600, 3000, 10_000],
            runs: 100,
            base_seed: 1,
            order_mode: OrderMode::Fixed(50),
            estimators: vec![EstimatorKind::Sd, EstimatorKind::Sdgn, EstimatorKind::PemTrue],
            snr: None,
            snr_mode: SnrMode::RawNoise,
        }
    }

    /// Closed-loop variant of the same study.
    pub fn preset_basic_closed_loop() -> Self {
        Self { kind: ExperimentKind::BasicClosedLoop, ..Self::preset_basic_open_loop() }
    }

    /// Oscillatory fourth-order system at signal-to-noise 5 against the raw
    /// noise, order by information criterion, full-length records.
    pub fn preset_oscillatory() -> Self {
        Self {
            kind: ExperimentKind::Oscillatory,
            n_list: vec![FULL_RECORD_LEN],
            runs: 100,
            base_seed: 1,
            order_mode: OrderMode::Aic(crate::sd::default_aic_grid()),
            estimators: vec![EstimatorKind::Sd, EstimatorKind::Sdgn, EstimatorKind::PemTrue],
            snr: Some(5.0),
            snr_mode: SnrMode::RawNoise,
        }
    }

    /// Random fourth-order systems at signal-to-noise 5 against the shaped
    /// noise, order by information criterion, full-length records.
    pub fn preset_random_systems() -> Self {
        Self {
            kind: ExperimentKind::RandomSystems,
            n_list: vec![FULL_RECORD_LEN],
            runs: 100,
            base_seed: 1,
            order_mode: OrderMode::Aic(crate::sd::default_aic_grid()),
            estimators: vec![EstimatorKind::Sd, EstimatorKind::Sdgn, EstimatorKind::PemTrue],
            snr: Some(5.0),
            snr_mode: SnrMode::FilteredNoise,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::ParameterOutOfRange("need at least one run".into()));
        }
        if self.n_list.is_empty() {
            return Err(Error::ParameterOutOfRange("need at least one record length".into()));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::ParameterOutOfRange(
                "record lengths must be strictly ascending".into(),
            ));
        }
        if self.estimators.is_empty() {
            return Err(Error::ParameterOutOfRange("need at least one estimator".into()));
        }
        if let Some(s) = self.snr {
            if !(s > 0.0) {
                return Err(Error::ParameterOutOfRange(format!(
                    "signal-to-noise target must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// The shaped reference filter `F/(F+B)` of the open-loop benchmark study.
pub fn basic_open_loop_input() -> InputSpec {
    let model = benchmark_model_basic();
    let fb = model.f().add(model.b());
    InputSpec::Filtered {
        filter: RationalFilter::new(model.f().clone(), fb).expect("monic by construction"),
        variance: 1.0,
    }
}

/// The second-order low-pass input filter `1/(1 - a q^-1)^2` used by the
/// prefix-based studies.
pub fn lowpass_input_spec(pole: f64) -> InputSpec {
    let den = Polynomial::new(vec![1.0, -pole]);
    InputSpec::Filtered {
        filter: RationalFilter::new(Polynomial::one(), den.mul(&den))
            .expect("monic by construction"),
        variance: 1.0,
    }
}

/// One estimator's outcome on one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub estimator: EstimatorKind,
    /// Estimate; absent when the estimator failed.
    pub theta: Option<ThetaVector>,
    /// Fit score against the record's truth (NaN on failure).
    pub fit: f64,
    /// Squared dynamics-parameter error (NaN on failure).
    pub mse_dynamic: f64,
    /// Accepted refinement steps, when the estimator refines.
    pub gn_iterations: Option<usize>,
    /// Refinement convergence flag, when the estimator refines.
    pub converged: Option<bool>,
    /// Diagnostic flags: instabilities, repairs, failure messages.
    pub flags: Vec<String>,
    /// Time spent inside the estimator call (order search excluded).
    pub wall_time_seconds: f64,
}

/// All results for one `(n, run)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: usize,
    pub n: usize,
    pub seed: u64,
    /// First-stage order used by every estimator in this cell.
    pub arx_order: usize,
    pub results: Vec<EstimatorResult>,
}

/// Mean/median aggregates for one `(n, estimator)` table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub estimator: EstimatorKind,
    pub runs: usize,
    /// Runs excluded from the aggregates because the estimator failed.
    pub failures: usize,
    pub mean_fit: f64,
    pub median_fit: f64,
    pub mean_mse: f64,
    pub median_mse: f64,
    pub mean_time_seconds: f64,
    /// Mean accepted refinement steps (NaN for non-refining estimators).
    pub mean_iterations: f64,
}

/// Truth and record for one cell.
struct CellData {
    dataset: Dataset,
    truth: BjModel,
}

fn generate_cell(config: &ExperimentConfig, n: usize, seed: u64) -> Result<CellData> {
    match config.kind {
        ExperimentKind::BasicOpenLoop => {
            let model = benchmark_model_basic();
            let ds = gen_open_loop(&model, &basic_open_loop_input(), n, seed)?;
            Ok(CellData { dataset: ds, truth: model })
        }
        ExperimentKind::BasicClosedLoop => {
            let model = benchmark_model_basic();
            let ds = gen_closed_loop(&model, &RationalFilter::identity(), 1.0, n, seed)?;
            Ok(CellData { dataset: ds, truth: model })
        }
        ExperimentKind::Oscillatory => {
            let model = benchmark_model_oscillatory();
            prefix_record(config, &model, lowpass_input_spec(0.85), n, seed)
        }
        ExperimentKind::RandomSystems => {
            let model = sample_random_bj(ModelOrders::new(4, 2, 2, 4), seed)?;
            prefix_record(config, &model, lowpass_input_spec(0.8), n, seed)
        }
    }
}

/// Generates the full-length record, scales the noise on it, and returns the
/// requested prefix, so every `n` of one run shares a single realization.
fn prefix_record(
    config: &ExperimentConfig,
    model: &BjModel,
    input: InputSpec,
    n: usize,
    seed: u64,
) -> Result<CellData> {
    if n > FULL_RECORD_LEN {
        return Err(Error::ParameterOutOfRange(format!(
            "record length {n} exceeds the full record length {FULL_RECORD_LEN}"
        )));
    }
    let r = reference_stream(FULL_RECORD_LEN, seed);
    let u = input_from_reference(&input, &r)?;
    let e_raw = noise_reference(FULL_RECORD_LEN, seed);
    let sigma = match config.snr {
        Some(target) => scale_noise_for_snr(model, &u, &e_raw, target, config.snr_mode)?,
        None => model.sigma2().sqrt(),
    };
    let y = simulate_with_scaled_noise(model, &u, &e_raw, sigma)?;
    let truth = model.with_sigma2(sigma * sigma)?;
    let full = Dataset::new(u, y, seed, crate::dataset::Regime::OpenLoop, Some(truth.clone()));
    Ok(CellData { dataset: full.prefix(n), truth })
}

/// Generates the record one `(n, run)` cell sees — the dataset (truth
/// embedded) plus the true model — without running any estimator. This is
/// the exact data path of [`run_experiment`], exposed for data export.
pub fn generate_run_data(
    config: &ExperimentConfig,
    n: usize,
    seed: u64,
) -> Result<(Dataset, BjModel)> {
    let cell = generate_cell(config, n, seed)?;
    Ok((cell.dataset, cell.truth))
}

fn resolve_order(config: &ExperimentConfig, cell: &CellData) -> Result<usize> {
    match &config.order_mode {
        OrderMode::Fixed(m) => Ok(*m),
        OrderMode::Aic(grid) => {
            Ok(aic_select_order(&cell.dataset.u, &cell.dataset.y, grid)?.0)
        }
        OrderMode::Recommended => recommended_order(cell.truth.rho()?, cell.dataset.n()),
    }
}

fn failure_result(estimator: EstimatorKind, err: &Error, elapsed: f64) -> EstimatorResult {
    EstimatorResult {
        estimator,
        theta: None,
        fit: f64::NAN,
        mse_dynamic: f64::NAN,
        gn_iterations: None,
        converged: None,
        flags: vec![format!("error:{err}")],
        wall_time_seconds: elapsed,
    }
}

fn sd_flags(est: &SdEstimate) -> Vec<String> {
    let mut flags = Vec::new();
    if !est.stable_dynamics {
        flags.push("unstable_f_hat".to_string());
    }
    if !est.stable_noise_model {
        flags.push("unstable_c_hat".to_string());
    }
    flags
}

fn gn_flags(report: &GnReport) -> Vec<String> {
    let mut flags = Vec::new();
    if report.repaired {
        flags.push("gn_repaired_start".to_string());
    }
    if !report.converged {
        flags.push("gn_not_converged".to_string());
    }
    flags
}

fn metric_pair(theta: &ThetaVector, truth: &BjModel) -> Result<(f64, f64)> {
    Ok((fit_metric(theta, &truth.theta())?, mse_dynamic(theta, &truth.theta())?))
}

fn run_estimator(
    estimator: EstimatorKind,
    cell: &CellData,
    m: usize,
) -> EstimatorResult {
    let ds = &cell.dataset;
    let orders = cell.truth.orders();
    let start = Instant::now();
    let outcome: Result<(ThetaVector, Vec<String>, Option<usize>, Option<bool>)> = (|| {
        match estimator {
            EstimatorKind::Sd => {
                let est = sd_estimate(ds, orders, ArxOrder::Fixed(m))?;
                let flags = sd_flags(&est);
                Ok((est.theta, flags, None, None))
            }
            EstimatorKind::Sdgn => {
                let est = sd_estimate(ds, orders, ArxOrder::Fixed(m))?;
                let mut flags = sd_flags(&est);
                let report = gn_refine(&est.theta, &ds.u, &ds.y)?;
                flags.extend(gn_flags(&report));
                Ok((report.theta, flags, Some(report.iterations), Some(report.converged)))
            }
            EstimatorKind::PemTrue => {
                let report = gn_refine(&cell.truth.theta(), &ds.u, &ds.y)?;
                let flags = gn_flags(&report);
                Ok((report.theta, flags, Some(report.iterations), Some(report.converged)))
            }
            EstimatorKind::PemDefault => {
                let arx = crate::arx::fit_arx(&ds.u, &ds.y, m)?;
                let sig = crate::sd::FilteredSignals::from_arx(&ds.u, &ds.y, &arx)?;
                let (tf, tb, _) = crate::sd::stage2_oe_dynamics(&sig, orders.p_f, orders.p_b)?;
                // Identity noise model: all c and d coefficients start at 0.
                let theta0 = ThetaVector {
                    b: tb,
                    c: vec![0.0; orders.p_c],
                    d: vec![0.0; orders.p_d],
                    f: tf,
                };
                let report = gn_refine(&theta0, &ds.u, &ds.y)?;
                let flags = gn_flags(&report);
                Ok((report.theta, flags, Some(report.iterations), Some(report.converged)))
            }
        }
    })();
    let elapsed = start.elapsed().as_secs_f64();
    match outcome {
        Ok((theta, flags, iters, converged)) => match metric_pair(&theta, &cell.truth) {
            Ok((fit, mse)) => EstimatorResult {
                estimator,
                theta: Some(theta),
                fit,
                mse_dynamic: mse,
                gn_iterations: iters,
                converged,
                flags,
                wall_time_seconds: elapsed,
            },
            Err(e) => failure_result(estimator, &e, elapsed),
        },
        Err(e) => failure_result(estimator, &e, elapsed),
    }
}

fn run_cell(config: &ExperimentConfig, n: usize, run_index: usize) -> Result<RunRecord> {
    let seed = config.base_seed + run_index as u64;
    let cell = generate_cell(config, n, seed)?;
    let arx_order = resolve_order(config, &cell)?;
    let results = config
        .estimators
        .iter()
        .map(|&est| run_estimator(est, &cell, arx_order))
        .collect();
    Ok(RunRecord { run_index, n, seed, arx_order, results })
}

/// Executes the benchmark: every record length times every run index, with
/// runs parallelized and results ordered by `(n, run_index)`.
///
/// A failing estimator yields a flagged result inside its record; a failing
/// cell (data generation or order selection) aborts with the error, since no
/// estimator could run at all.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    // Single-threaded linear algebra: run-level parallelism already uses the
    // cores, and a fixed kernel order keeps results bit-reproducible.
    faer::set_global_parallelism(faer::Par::Seq);
    let mut records = Vec::with_capacity(config.n_list.len() * config.runs);
    for &n in &config.n_list {
        let batch: Vec<Result<RunRecord>> = (0..config.runs)
            .into_par_iter()
            .map(|run| run_cell(config, n, run))
            .collect();
        for r in batch {
            records.push(r?);
        }
    }
    Ok(records)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Median by linear interpolation on the sorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

fn sorted(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(|a, b| a.partial_cmp(b).expect("no NaN after filtering"));
    values
}

/// Folds run records into one row per `(n, estimator)`, excluding failed
/// runs from every aggregate and counting them.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, EstimatorKind)> = Vec::new();
    for rec in records {
        for res in &rec.results {
            let key = (rec.n, res.estimator);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    keys.iter()
        .map(|&(n, estimator)| {
            let mut fits = Vec::new();
            let mut mses = Vec::new();
            let mut times = Vec::new();
            let mut iters = Vec::new();
            let mut failures = 0usize;
            let mut total = 0usize;
            for rec in records.iter().filter(|r| r.n == n) {
                for res in rec.results.iter().filter(|r| r.estimator == estimator) {
                    total += 1;
                    if res.theta.is_none() || !res.fit.is_finite() {
                        failures += 1;
                        continue;
                    }
                    fits.push(res.fit);
                    mses.push(res.mse_dynamic);
                    times.push(res.wall_time_seconds);
                    if let Some(k) = res.gn_iterations {
                        iters.push(k as f64);
                    }
                }
            }
            let fits_sorted = sorted(fits.clone());
            let mses_sorted = sorted(mses.clone());
            SummaryRow {
                n,
                estimator,
                runs: total,
                failures,
                mean_fit: mean(&fits),
                median_fit: quantile(&fits_sorted, 0.5),
                mean_mse: mean(&mses),
                median_mse: quantile(&mses_sorted, 0.5),
                mean_time_seconds: mean(&times),
                mean_iterations: mean(&iters),
            }
        })
        .collect()
}

/// Plot-data flavors emitted by [`emit_plot_data`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    /// `n, estimator, mean_mse` — error-versus-length trend lines.
    MseVsN,
    /// Five-number summaries of the fit score per `(n, estimator)`.
    FitBox,
    /// Five-number summaries of estimator wall time.
    TimeBox,
    /// Five-number summaries of accepted refinement steps.
    IterBox,
}

/// Renders plot-ready CSV for the requested flavor. Failed runs are skipped;
/// box rows carry `min, q1, median, q3, max` from interpolated quantiles.
pub fn emit_plot_data(records: &[RunRecord], kind: PlotKind) -> Result<String> {
    if records.is_empty() {
        return Err(Error::ParameterOutOfRange("no records to plot".into()));
    }
    let rows = summarize(records);
    let mut out = String::new();
    match kind {
        PlotKind::MseVsN => {
            out.push_str("n,estimator,mean_mse\n");
            for row in &rows {
                out.push_str(&format!("{},{},{:?}\n", row.n, row.estimator.label(), row.mean_mse));
            }
        }
        PlotKind::FitBox | PlotKind::TimeBox | PlotKind::IterBox => {
            out.push_str("n,estimator,min,q1,median,q3,max\n");
            for row in &rows {
                let (n, estimator) = (row.n, row.estimator);
                let mut values = Vec::new();
                for rec in records.iter().filter(|r| r.n == n) {
                    for res in rec.results.iter().filter(|r| r.estimator == estimator) {
                        if res.theta.is_none() {
                            continue;
                        }
                        let v = match kind {
                            PlotKind::FitBox => res.fit,
                            PlotKind::TimeBox => res.wall_time_seconds,
                            PlotKind::IterBox => match res.gn_iterations {
                                Some(k) => k as f64,
                                None => continue,
                            },
                            PlotKind::MseVsN => unreachable!(),
                        };
                        if v.is_finite() {
                            values.push(v);
                        }
                    }
                }
                if values.is_empty() {
                    continue;
                }
                let s = sorted(values);
                out.push_str(&format!(
                    "{},{},{:?},{:?},{:?},{:?},{:?}\n",
                    n,
                    estimator.label(),
                    s[0],
                    quantile(&s, 0.25),
                    quantile(&s, 0.5),
                    quantile(&s, 0.75),
                    s[s.len() - 1]
                ));
            }
        }
    }
    Ok(out)
}
