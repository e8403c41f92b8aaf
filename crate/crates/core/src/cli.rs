//! Command-line front end: `estimate`, `test`, `simulate` and `gcurve`.
//!
//! Exit codes: 0 on success, 2 for input or configuration errors, 3 for
//! numerical failures.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bootstrap::bootstrap_test;
use crate::comparators::{cce_pooled_fit, naive_fit};
use crate::error::{Error, Result};
use crate::estimator::{fit, g_curve, Coefficient, FitResult, GCurve, GCurveMethod};
use crate::kernels::BandwidthSpec;
use crate::linalg::{median, quantile_sorted};
use crate::panel::{load_csv, ColumnMapping, PanelDataset};
use crate::simulation::{run_study, write_report, Comparator, StudyConfig};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 42;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "panelfactor",
    version,
    about = "Semiparametric panel estimation and specification testing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "PANELFACTOR_THREADS", default_value_t = 0)]
    pub workers: usize,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the slope and the nuisance curve; writes fit.json and ghat.csv.
    Estimate(EstimateArgs),
    /// Run the specification test; writes test.json.
    Test(TestArgs),
    /// Run a Monte Carlo study from a JSON grid file.
    Simulate(SimulateArgs),
    /// Evaluate the nuisance curve with pointwise bands; writes ghat.csv.
    Gcurve(GcurveArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Long-format CSV with one row per (unit, time).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "unit")]
    pub unit: String,
    #[arg(long, default_value = "time")]
    pub time: String,
    #[arg(long)]
    pub y: String,
    /// Linear regressors, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub x: Vec<String>,
    /// Control covariates entering g, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub w: Vec<String>,
    /// Regressors among --x that vary over time only.
    #[arg(long = "time-only", value_delimiter = ',')]
    pub time_only: Vec<String>,
    /// `auto` or comma-separated bandwidths for w.
    #[arg(long, default_value = "auto")]
    pub bandwidth: String,
    /// `auto` or comma-separated bandwidths for (x, w).
    #[arg(long = "test-bandwidth", default_value = "auto")]
    pub test_bandwidth: String,
}

#[derive(Debug, Args)]
pub struct BandArgs {
    /// Confidence level of the pointwise bands.
    #[arg(long = "ci-level", default_value_t = 0.95)]
    pub ci_level: f64,
    /// Points on the default evaluation grid.
    #[arg(long = "grid-points", default_value_t = 50)]
    pub grid_points: usize,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub bands: BandArgs,
    /// Bootstrap draws for the bands (0 = plug-in bands).
    #[arg(long, default_value_t = 199)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Pooled comparators to report alongside, e.g. `naive,cce`.
    #[arg(long, value_delimiter = ',')]
    pub comparators: Vec<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Bootstrap draws for the p-value (0 = asymptotic only).
    #[arg(long, default_value_t = 199)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON study grid: n, t, delta, replications, bootstrap, levels, seed, comparators.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GcurveArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub bands: BandArgs,
    /// Bootstrap draws for the bands (0 = plug-in bands).
    #[arg(long, default_value_t = 199)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_NUMERICAL
    }
}

pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
}

/// Parse the process arguments, run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    init_logging(cli.verbose);
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let work = || match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Gcurve(a) => cmd_gcurve(a),
    };
    if cli.workers == 0 {
        return work();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {} workers: {e}", cli.workers)))?;
    pool.install(work)
}

fn parse_bandwidth(text: &str, flag: &str) -> Result<Option<Vec<f64>>> {
    if text.trim().eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("{flag}: cannot parse `{s}` as a bandwidth")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn load(data: &DataArgs) -> Result<(PanelDataset, BandwidthSpec)> {
    let mapping = ColumnMapping {
        unit: data.unit.clone(),
        time: data.time.clone(),
        y: data.y.clone(),
        x: data.x.clone(),
        w: data.w.clone(),
        time_only: data.time_only.clone(),
    };
    let ds = load_csv(&data.input, &mapping)?;
    let h_est = parse_bandwidth(&data.bandwidth, "--bandwidth")?;
    let h_test = parse_bandwidth(&data.test_bandwidth, "--test-bandwidth")?;
    let bw = BandwidthSpec::resolve(&ds, h_est.as_deref(), h_test.as_deref())?;
    log::info!(
        "loaded N={} T={} d_x={} d_w={}; h_est={:?} h_test={:?}",
        ds.n_units(),
        ds.n_periods(),
        ds.d_x(),
        ds.d_w(),
        bw.h_est,
        bw.h_test
    );
    Ok((ds, bw))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Default evaluation grid: an even grid over the range of `w` when `d_w = 1`;
/// otherwise the first coordinate runs over its 5%–95% quantiles with the
/// others held at their medians.
pub fn default_grid(ds: &PanelDataset, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::InvalidArgument(format!(
            "--grid-points must be at least 2, got {points}"
        )));
    }
    let mut first = ds.w_column(0);
    first.sort_by(f64::total_cmp);
    let (lo, hi) = if ds.d_w() == 1 {
        (first[0], first[first.len() - 1])
    } else {
        (quantile_sorted(&first, 0.05), quantile_sorted(&first, 0.95))
    };
    let others: Vec<f64> = (1..ds.d_w()).map(|c| median(&ds.w_column(c))).collect();
    let mut grid = Vec::with_capacity(points * ds.d_w());
    for p in 0..points {
        let v = if p == points - 1 {
            hi
        } else {
            lo + (hi - lo) * p as f64 / (points - 1) as f64
        };
        grid.push(v);
        grid.extend_from_slice(&others);
    }
    Ok(grid)
}

#[derive(Debug, Serialize)]
struct ComparatorOutput {
    estimator: &'static str,
    /// Time-only regressors left out because pooled CCE cannot identify them.
    dropped: Vec<String>,
    coefficients: Vec<Coefficient>,
}

#[derive(Debug, Serialize)]
struct FitOutput<'a> {
    n_units: usize,
    n_periods: usize,
    coefficients: Vec<Coefficient>,
    vcov: Vec<Vec<f64>>,
    bandwidths: &'a BandwidthSpec,
    comparators: Vec<ComparatorOutput>,
}

fn comparator_outputs(ds: &PanelDataset, names: &[String]) -> Result<Vec<ComparatorOutput>> {
    let mut out = Vec::new();
    for name in names {
        match name.parse::<Comparator>()? {
            Comparator::Naive => out.push(ComparatorOutput {
                estimator: "naive",
                dropped: Vec::new(),
                coefficients: naive_fit(ds)?.table(),
            }),
            Comparator::Cce => {
                let mut time_only: Vec<usize> = ds.detect_time_only_columns();
                time_only.extend((0..ds.d_x()).filter(|&c| ds.time_only_flags()[c]));
                let keep: Vec<usize> = (0..ds.d_x()).filter(|c| !time_only.contains(c)).collect();
                let dropped = (0..ds.d_x())
                    .filter(|c| !keep.contains(c))
                    .map(|c| ds.x_names()[c].clone())
                    .collect();
                out.push(ComparatorOutput {
                    estimator: "cce",
                    dropped,
                    coefficients: cce_pooled_fit(&ds.select_x(&keep)?)?.table(),
                });
            }
        }
    }
    Ok(out)
}

fn write_ghat(path: &Path, ds: &PanelDataset, curve: &GCurve) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ds.w_names().to_vec();
    header.extend(["g_hat", "se_pointwise", "lower", "upper"].map(String::from));
    wtr.write_record(&header)?;
    let d_w = ds.d_w();
    for (p, point) in curve.grid.chunks(d_w).enumerate() {
        let mut rec: Vec<String> = point.iter().map(f64::to_string).collect();
        rec.extend([curve.g_hat[p], curve.se_pointwise[p], curve.lower[p], curve.upper[p]].map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

fn curve_for(f: &FitResult, ds: &PanelDataset, bands: &BandArgs, bootstrap: usize, seed: u64) -> Result<GCurve> {
    let grid = default_grid(ds, bands.grid_points)?;
    let method = if bootstrap == 0 {
        GCurveMethod::PlugIn
    } else {
        GCurveMethod::BootstrapPercentile {
            replications: bootstrap,
            seed,
        }
    };
    g_curve(f, ds, &grid, method, bands.ci_level)
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let (ds, bw) = load(&args.data)?;
    let f = fit(&ds, &bw)?;
    let comparators = comparator_outputs(&ds, &args.comparators)?;
    let curve = curve_for(&f, &ds, &args.bands, args.bootstrap, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    let k = f.d_x();
    let output = FitOutput {
        n_units: f.n_units,
        n_periods: f.n_periods,
        coefficients: f.coefficients(),
        vcov: f.vcov_beta.chunks(k).map(<[f64]>::to_vec).collect(),
        bandwidths: &f.bandwidths,
        comparators,
    };
    write_json(&args.out.join("fit.json"), &output)?;
    write_ghat(&args.out.join("ghat.csv"), &ds, &curve)?;
    for c in &output.coefficients {
        println!("{:<12} {:>12.6} (se {:.6})", c.name, c.estimate, c.std_error);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TestOutput<'a> {
    #[serde(flatten)]
    result: &'a crate::spec_test::SpecTestResult,
    seed: u64,
    bandwidths: &'a BandwidthSpec,
    summary: String,
}

pub fn cmd_test(args: &TestArgs) -> Result<()> {
    let (ds, bw) = load(&args.data)?;
    let f = fit(&ds, &bw)?;
    let result = bootstrap_test(&ds, &bw, &f, args.bootstrap, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    let summary = result.summary_line();
    write_json(
        &args.out.join("test.json"),
        &TestOutput {
            result: &result,
            seed: args.seed,
            bandwidths: &bw,
            summary: summary.clone(),
        },
    )?;
    println!("{summary}");
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.grid)?;
    let cfg = StudyConfig::from_json(&text)?;
    let report = run_study(&cfg)?;
    write_report(&report, &args.out)?;
    for c in &report.cells {
        let rej = c
            .rejections
            .iter()
            .map(|r| format!("{:.2}:{:.3}", r.level, r.rate))
            .collect::<Vec<_>>()
            .join(" ");
        println!(
            "N={:<4} T={:<4} delta={:<5} rmse(beta1)={:.4} bias100(beta1)={:+.3} reject[{rej}]",
            c.n, c.t, c.delta, c.beta[0].rmse, c.beta[0].bias_x100
        );
    }
    Ok(())
}

pub fn cmd_gcurve(args: &GcurveArgs) -> Result<()> {
    let (ds, bw) = load(&args.data)?;
    let f = fit(&ds, &bw)?;
    let curve = curve_for(&f, &ds, &args.bands, args.bootstrap, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    write_ghat(&args.out.join("ghat.csv"), &ds, &curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_flags() {
        assert_eq!(parse_bandwidth("auto", "--bandwidth").unwrap(), None);
        assert_eq!(parse_bandwidth(" AUTO ", "--bandwidth").unwrap(), None);
        assert_eq!(parse_bandwidth("0.5, 1", "--bandwidth").unwrap(), Some(vec![0.5, 1.0]));
        assert!(parse_bandwidth("0.5,x", "--bandwidth").is_err());
    }

    #[test]
    fn default_grid_spans_range() {
        let ds = PanelDataset::new(
            2,
            2,
            vec![0.0; 4],
            vec![1.0, 2.0, 3.0, 4.0],
            1,
            vec![0.3, -1.0, 2.0, 0.0],
            1,
        )
        .unwrap();
        let g = default_grid(&ds, 5).unwrap();
        assert_eq!(g.first(), Some(&-1.0));
        assert_eq!(g.last(), Some(&2.0));
        assert_eq!(g.len(), 5);
        assert!(default_grid(&ds, 1).is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::MissingColumn("a".into())), EXIT_INPUT);
        assert_eq!(exit_code(&Error::ZeroVariance { v_nt: 0.0 }), EXIT_NUMERICAL);
    }
}
