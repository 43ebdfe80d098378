//! `bjsd` — command-line front end for the Box-Jenkins estimation pipeline.
//!
//! Four subcommands: `simulate` exports a seeded data record, `estimate`
//! fits a model to a record on disk, `benchmark` runs a Monte Carlo study
//! and writes its tables, and `crbound` prints the asymptotic covariance
//! floor of a benchmark system. Run `bjsd <command> --help` for flags.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use bjsd_core::dataset::Dataset;
use bjsd_core::experiment::{
    basic_open_loop_input, emit_plot_data, generate_run_data, lowpass_input_spec, run_experiment,
    summarize, EstimatorKind, ExperimentConfig, OrderMode, PlotKind, RunRecord, SummaryRow,
};
use bjsd_core::model::{benchmark_model_basic, benchmark_model_oscillatory, ThetaVector};
use bjsd_core::pem::{cramer_rao, gn_refine, CrDataSpec};
use bjsd_core::sd::{sd_estimate, ArxOrder};

#[derive(Parser)]
#[command(
    name = "bjsd",
    version,
    about = "Box-Jenkins identification: sequential least-squares estimation with Gauss-Newton refinement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one seeded data record and save it as CSV plus JSON sidecar.
    Simulate(SimulateArgs),
    /// Fit a Box-Jenkins model to a saved data record.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo benchmark and write its result tables.
    Benchmark(BenchmarkArgs),
    /// Print the asymptotic covariance floor for a benchmark system.
    Crbound(CrboundArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Data-generating setup: basic_open, basic_closed, oscillatory, random.
    #[arg(long)]
    preset: String,
    /// Record length.
    #[arg(long)]
    n: usize,
    /// Seed of the realization.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory; receives data.csv and data.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Path to a data CSV saved by `bjsd simulate` (sidecar required).
    #[arg(long)]
    data: PathBuf,
    /// Model orders as `b,c,d,f` counts, e.g. `2,1,1,2`.
    #[arg(long)]
    orders: String,
    /// First-stage order: `fixed:K` or `aic`.
    #[arg(long, default_value = "aic")]
    order: String,
    /// Also run Gauss-Newton refinement from the sequential estimate.
    #[arg(long)]
    refine: bool,
    /// Output JSON path; prints to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Benchmark preset: basic_open, basic_closed, oscillatory, random.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// JSON config file mirroring the benchmark configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override record lengths, comma-separated ascending, e.g. `600,3000`.
    #[arg(long)]
    n: Option<String>,
    /// Override the number of Monte Carlo runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Override the base seed (run i uses seed base_seed + i).
    #[arg(long)]
    seed: Option<u64>,
    /// Override order selection: `fixed:K`, `aic`, or `rec`.
    #[arg(long)]
    order: Option<String>,
    /// Override the estimator list, comma-separated from
    /// sd, sdgn, pem_true, pem_default.
    #[arg(long)]
    estimators: Option<String>,
    /// Override the signal-to-noise target.
    #[arg(long)]
    snr: Option<f64>,
    /// Output directory for runs.csv, summary.csv, plotdata_*.csv, and
    /// config_echo.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CrboundArgs {
    /// System whose floor to compute: basic_open or oscillatory.
    #[arg(long, default_value = "basic_open")]
    preset: String,
    /// Record length per Fisher-information sample.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Number of averaged information samples.
    #[arg(long, default_value_t = 40)]
    runs: usize,
    #[arg(long, default_value_t = 9000)]
    seed: u64,
    /// Output JSON path; prints to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// On-disk benchmark configuration: the experiment description plus where
/// to write results.
#[derive(Serialize, Deserialize)]
struct BenchConfigFile {
    #[serde(flatten)]
    experiment: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_dir: Option<PathBuf>,
}

fn preset_by_name(name: &str) -> Result<ExperimentConfig> {
    Ok(match name {
        "basic_open" => ExperimentConfig::preset_basic_open_loop(),
        "basic_closed" => ExperimentConfig::preset_basic_closed_loop(),
        "oscillatory" => ExperimentConfig::preset_oscillatory(),
        "random" => ExperimentConfig::preset_random_systems(),
        other => bail!(
            "unknown preset '{other}'; expected basic_open, basic_closed, oscillatory, or random"
        ),
    })
}

fn parse_order_mode(text: &str) -> Result<OrderMode> {
    if let Some(k) = text.strip_prefix("fixed:") {
        let m: usize = k.parse().with_context(|| format!("bad fixed order '{k}'"))?;
        return Ok(OrderMode::Fixed(m));
    }
    match text {
        "aic" => Ok(OrderMode::Aic(bjsd_core::sd::default_aic_grid())),
        "rec" => Ok(OrderMode::Recommended),
        other => bail!("unknown order mode '{other}'; expected fixed:K, aic, or rec"),
    }
}

fn parse_estimators(text: &str) -> Result<Vec<EstimatorKind>> {
    text.split(',')
        .map(|s| match s.trim() {
            "sd" => Ok(EstimatorKind::Sd),
            "sdgn" => Ok(EstimatorKind::Sdgn),
            "pem_true" => Ok(EstimatorKind::PemTrue),
            "pem_default" | "pem_default(approx)" => Ok(EstimatorKind::PemDefault),
            other => bail!(
                "unknown estimator '{other}'; expected sd, sdgn, pem_true, or pem_default"
            ),
        })
        .collect()
}

fn parse_n_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad record length '{s}'")))
        .collect()
}

/// Quotes a CSV field only when it needs it.
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per (run, estimator); floats in shortest round-trip form so two
/// identical executions produce identical bytes. The wall-time column is
/// last, so timing can be stripped by dropping each line's final field.
fn runs_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(
        "run_index,n,seed,arx_order,estimator,fit,mse_dynamic,gn_iterations,converged,flags,theta,wall_time_seconds\n",
    );
    for rec in records {
        for res in &rec.results {
            let theta = res
                .theta
                .as_ref()
                .map(|t| {
                    t.to_flat().iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(";")
                })
                .unwrap_or_default();
            let iters = res.gn_iterations.map(|v| v.to_string()).unwrap_or_default();
            let conv = res.converged.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{:?},{:?},{},{},{},{},{:?}\n",
                rec.run_index,
                rec.n,
                rec.seed,
                rec.arx_order,
                res.estimator.label(),
                res.fit,
                res.mse_dynamic,
                iters,
                conv,
                csv_field(&res.flags.join("|")),
                csv_field(&theta),
                res.wall_time_seconds,
            ));
        }
    }
    out
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "n,estimator,runs,failures,mean_fit,median_fit,mean_mse,median_mse,mean_iterations,mean_time_seconds\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.n,
            r.estimator.label(),
            r.runs,
            r.failures,
            r.mean_fit,
            r.median_fit,
            r.mean_mse,
            r.median_mse,
            r.mean_iterations,
            r.mean_time_seconds,
        ));
    }
    out
}

fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:>7} {:<20} {:>5} {:>5} {:>9} {:>9} {:>11} {:>7} {:>10}",
        "n", "estimator", "runs", "fail", "mean fit", "med fit", "mean mse", "iters", "time [s]"
    );
    for r in rows {
        println!(
            "{:>7} {:<20} {:>5} {:>5} {:>9.2} {:>9.2} {:>11.4e} {:>7.2} {:>10.4}",
            r.n,
            r.estimator.label(),
            r.runs,
            r.failures,
            r.mean_fit,
            r.median_fit,
            r.mean_mse,
            r.mean_iterations,
            r.mean_time_seconds,
        );
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let config = preset_by_name(&args.preset)?;
    let (dataset, _truth) = generate_run_data(&config, args.n, args.seed)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let csv_path = args.out.join("data.csv");
    dataset.save(&csv_path)?;
    println!(
        "wrote {} samples to {} (+ data.json sidecar)",
        dataset.n(),
        csv_path.display()
    );
    Ok(())
}

/// Fit report written by `bjsd estimate`.
#[derive(Serialize)]
struct EstimateOutput {
    arx_order: usize,
    theta: ThetaVector,
    stable_dynamics: bool,
    stable_noise_model: bool,
    refinement: Option<RefinementOutput>,
}

#[derive(Serialize)]
struct RefinementOutput {
    iterations: usize,
    converged: bool,
    final_loss: f64,
    repaired_start: bool,
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let parts: Vec<usize> = args
        .orders
        .split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad order '{s}'")))
        .collect::<Result<_>>()?;
    let [p_b, p_c, p_d, p_f] = parts[..] else {
        bail!("--orders needs exactly four counts, e.g. 2,1,1,2");
    };
    let orders = bjsd_core::model::ModelOrders::new(p_b, p_c, p_d, p_f);

    let arx_order = match parse_order_mode(&args.order)? {
        OrderMode::Fixed(m) => ArxOrder::Fixed(m),
        OrderMode::Aic(_) => ArxOrder::Auto,
        OrderMode::Recommended => {
            bail!("order mode 'rec' needs the true model's decay rate; use fixed:K or aic")
        }
    };

    let dataset = Dataset::load(&args.data)?;
    let est = sd_estimate(&dataset, orders, arx_order)?;
    let refinement = if args.refine {
        let report = gn_refine(&est.theta, &dataset.u, &dataset.y)?;
        Some((report.theta.clone(), RefinementOutput {
            iterations: report.iterations,
            converged: report.converged,
            final_loss: report.final_loss,
            repaired_start: report.repaired,
        }))
    } else {
        None
    };
    let (theta, refinement) = match refinement {
        Some((theta, info)) => (theta, Some(info)),
        None => (est.theta.clone(), None),
    };

    let output = EstimateOutput {
        arx_order: est.arx.m,
        theta,
        stable_dynamics: est.stable_dynamics,
        stable_noise_model: est.stable_noise_model,
        refinement,
    };
    let json = serde_json::to_string_pretty(&output)?;
    match &args.out {
        Some(path) => {
            fs::write(path, &json).with_context(|| format!("cannot write {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<()> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            serde_json::from_str::<BenchConfigFile>(&text)
                .with_context(|| format!("bad config {}", path.display()))?
        }
        (None, Some(name)) => {
            BenchConfigFile { experiment: preset_by_name(name)?, output_dir: None }
        }
        (None, None) => bail!("provide --preset or --config"),
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };

    if let Some(text) = &args.n {
        config.experiment.n_list = parse_n_list(text)?;
    }
    if let Some(runs) = args.runs {
        config.experiment.runs = runs;
    }
    if let Some(seed) = args.seed {
        config.experiment.base_seed = seed;
    }
    if let Some(text) = &args.order {
        config.experiment.order_mode = parse_order_mode(text)?;
    }
    if let Some(text) = &args.estimators {
        config.experiment.estimators = parse_estimators(text)?;
    }
    if let Some(snr) = args.snr {
        config.experiment.snr = Some(snr);
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .context("no output directory: pass --out or set output_dir in the config file")?;
    config.output_dir = Some(out.clone());
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;

    let records = run_experiment(&config.experiment)?;
    let rows = summarize(&records);

    fs::write(out.join("runs.csv"), runs_csv(&records))?;
    fs::write(out.join("summary.csv"), summary_csv(&rows))?;
    for (kind, name) in [
        (PlotKind::MseVsN, "plotdata_mse_vs_n.csv"),
        (PlotKind::FitBox, "plotdata_fit_box.csv"),
        (PlotKind::TimeBox, "plotdata_time_box.csv"),
        (PlotKind::IterBox, "plotdata_iter_box.csv"),
    ] {
        fs::write(out.join(name), emit_plot_data(&records, kind)?)?;
    }
    fs::write(out.join("config_echo.json"), serde_json::to_string_pretty(&config)?)?;

    print_summary(&rows);
    println!("results in {}", out.display());
    Ok(())
}

/// Covariance floor written by `bjsd crbound`.
#[derive(Serialize)]
struct CrboundOutput {
    labels: Vec<String>,
    /// Asymptotic covariance; divide by the record length for the
    /// finite-sample floor.
    matrix: Vec<Vec<f64>>,
    trace: f64,
    /// Trace over the dynamics block (b and f entries) only.
    dynamics_trace: f64,
}

fn cmd_crbound(args: &CrboundArgs) -> Result<()> {
    let (model, input) = match args.preset.as_str() {
        "basic_open" => (benchmark_model_basic(), basic_open_loop_input()),
        "oscillatory" => (benchmark_model_oscillatory(), lowpass_input_spec(0.85)),
        other => bail!("unknown preset '{other}'; expected basic_open or oscillatory"),
    };
    let cr = cramer_rao(&model, &CrDataSpec { input }, args.n, args.runs, args.seed)?;

    let orders = model.orders();
    let mut labels = Vec::new();
    for (name, count) in [("b", orders.p_b), ("c", orders.p_c), ("d", orders.p_d), ("f", orders.p_f)]
    {
        for k in 1..=count {
            labels.push(format!("{name}{k}"));
        }
    }
    let dim = labels.len();
    let matrix: Vec<Vec<f64>> =
        (0..dim).map(|i| (0..dim).map(|j| cr[(i, j)]).collect()).collect();
    let trace: f64 = (0..dim).map(|i| cr[(i, i)]).sum();
    let dyn_idx: Vec<usize> = (0..orders.p_b)
        .chain(orders.p_b + orders.p_c + orders.p_d..dim)
        .collect();
    let dynamics_trace: f64 = dyn_idx.iter().map(|&i| cr[(i, i)]).sum();

    let output = CrboundOutput { labels, matrix, trace, dynamics_trace };
    let json = serde_json::to_string_pretty(&output)?;
    match &args.out {
        Some(path) => {
            fs::write(path, &json).with_context(|| format!("cannot write {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Crbound(args) => cmd_crbound(args),
    }
}
