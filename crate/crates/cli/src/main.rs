//! `retroforecast` command line.
//!
//! Each subcommand runs one pipeline stage on files written by the previous
//! one; `reproduce` chains them all. Exit status is 0 on success, 10 when
//! `diagnose` returns NOGO and 1 on any error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use retroforecast::arrow::{arrow_verdict, Verdict};
use retroforecast::ingest::{
    build_dataset, load_csv, load_dataset, preprocess, save_dataset, DaylightFilter, PreprocessSpec, Split,
};
use retroforecast::models::{Method, ModelBundle};
use retroforecast::pipeline::{self, RunConfig};
use retroforecast::{Case, TimeSeries};

const EXIT_NOGO: u8 = 10;

#[derive(Parser, Debug)]
#[command(name = "retroforecast", version, about = "Retrodictive forecasting with an arrow-of-time gate")]
struct Cli {
    /// Run configuration (JSON); omitted fields take their defaults.
    #[arg(long, global = true, value_name = "run.json")]
    config: Option<PathBuf>,

    /// Master seed; overrides the config and every module seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file or directory of the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a synthetic case to an `index,value` CSV.
    Generate(GenerateArgs),
    /// Window, split and standardize a CSV series into a dataset.
    Ingest(IngestArgs),
    /// Arrow-of-time test; exits 10 on NOGO.
    Diagnose(DiagnoseArgs),
    /// Train the models needed by the chosen methods.
    Train(TrainArgs),
    /// Predict windows of a split with one method.
    Forecast(ForecastArgs),
    /// RMSE, Diebold-Mariano and diagnostics from forecast CSVs.
    Evaluate(EvaluateArgs),
    /// Score a run directory and export its tables.
    Scorecard(ScorecardArgs),
    /// Every stage for every configured case.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    case: Case,
    /// Series length.
    #[arg(long = "T", visible_alias = "len")]
    t: Option<usize>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value = "value")]
    value_col: String,
    #[arg(long)]
    timestamp_col: Option<String>,
    /// Natural log after flooring at the wind floor.
    #[arg(long)]
    log: bool,
    /// Keep daylight rows only: `LAT,LON[,MAX_ZENITH_DEG]` (needs timestamps).
    #[arg(long, value_name = "LAT,LON[,ZENITH]")]
    daylight: Option<String>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    /// Dataset (`.bin`) or series CSV.
    #[arg(long)]
    data: PathBuf,
    /// Column to read when `--data` is a CSV.
    #[arg(long, default_value = "value")]
    value_col: String,
    /// Permutation count (defaults to the config).
    #[arg(long)]
    n_perm: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// `all` or a comma-separated list such as `mlp,inv-flow`.
    #[arg(long, default_value = "all")]
    methods: String,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Windows to sample from the split (defaults to the config).
    #[arg(long, conflicts_with = "full")]
    subsample: Option<usize>,
    /// Use every window of the split.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    method: Method,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Forecast CSVs, as `path` (method read from the file name) or
    /// `method=path`.
    #[arg(long, num_args = 1.., required = true)]
    forecasts: Vec<String>,
}

#[derive(Args, Debug)]
struct ScorecardArgs {
    #[arg(long)]
    runs: PathBuf,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// Comma-separated synthetic cases (defaults to the config).
    #[arg(long, value_delimiter = ',')]
    cases: Option<Vec<Case>>,
    #[arg(long)]
    methods: Option<String>,
    /// Forecast the full test split instead of a subsample.
    #[arg(long)]
    full_test: bool,
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg.seeded(),
    })
}

fn out_or(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    pipeline::write_json_atomic(path, value)?;
    Ok(())
}

fn parse_daylight(s: &str) -> Result<DaylightFilter> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad --daylight `{s}`"))?;
    match parts[..] {
        [lat, lon] => Ok(DaylightFilter { lat, lon, zenith_max: 80.0 }),
        [lat, lon, zenith_max] => Ok(DaylightFilter { lat, lon, zenith_max }),
        _ => bail!("--daylight takes LAT,LON or LAT,LON,ZENITH"),
    }
}

/// A dataset file gives its stored series; anything else is read as CSV.
fn load_series(path: &Path, value_col: &str) -> Result<TimeSeries> {
    if path.extension().is_some_and(|e| e == "bin") {
        Ok(load_dataset(path)?.0)
    } else {
        Ok(load_csv(path, value_col, None)?)
    }
}

fn generate(cli: &Cli, args: &GenerateArgs) -> Result<()> {
    let cfg = run_config(cli)?;
    let series = args.case.generate(args.t.unwrap_or(cfg.series_len), cfg.seed)?;
    let out = out_or(cli, "series.csv");
    pipeline::write_atomic(&out, series.to_csv().as_bytes())?;
    log::info!("wrote {} values to {}", series.values.len(), out.display());
    Ok(())
}

fn ingest(cli: &Cli, args: &IngestArgs) -> Result<()> {
    let cfg = run_config(cli)?;
    let spec = PreprocessSpec {
        log_transform: args.log,
        daylight_filter: args.daylight.as_deref().map(parse_daylight).transpose()?,
    };
    if spec.daylight_filter.is_some() && args.timestamp_col.is_none() {
        bail!("--daylight needs --timestamp-col");
    }
    let raw = load_csv(&args.csv, &args.value_col, args.timestamp_col.as_deref())?;
    let series = preprocess(&raw, &spec)?;
    let ds = build_dataset(&series, cfg.window)?;
    let out = out_or(cli, "dataset.bin");
    save_dataset(&out, &series, &ds)?;
    log::info!("{} windows ({} values) -> {}", ds.len(), series.values.len(), out.display());
    Ok(())
}

fn diagnose(cli: &Cli, args: &DiagnoseArgs) -> Result<Verdict> {
    let cfg = run_config(cli)?;
    let mut arrow = cfg.arrow.clone();
    if let Some(n) = args.n_perm {
        arrow.n_perm = n;
    }
    let series = load_series(&args.data, &args.value_col)?;
    let report = arrow_verdict(&series.name, &series.values, &arrow)?;
    for r in &report.scale_results {
        println!(
            "{:<5} w={:<2} J={:>9.4} p={:.4}{}",
            r.representation.label(),
            r.w,
            r.j_raw,
            r.p_perm,
            if r.significant { "  *" } else { "" }
        );
    }
    println!("verdict {} (delta_arrow {:.4})", report.verdict, report.delta_arrow);
    write_json(&out_or(cli, "arrow.json"), &report)?;
    Ok(report.verdict)
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut cfg = run_config(cli)?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let methods = Method::parse_list(&args.methods)?;
    let (_, ds) = load_dataset(&args.data)?;
    let bundle = ModelBundle::train(&ds, &cfg.train, &methods)?;
    let out = out_or(cli, "bundle");
    bundle.save(&out)?;
    log::info!("saved bundle to {}", out.display());
    Ok(())
}

fn forecast(cli: &Cli, args: &ForecastArgs) -> Result<()> {
    let cfg = run_config(cli)?;
    let (_, ds) = load_dataset(&args.data)?;
    let bundle = ModelBundle::load(&args.bundle)?;
    let subsample = if args.full { None } else { args.subsample.or(cfg.test_subsample) };
    let windows = pipeline::select_windows(&ds, args.split, subsample, cfg.seed);
    if windows.is_empty() {
        bail!("the {:?} split has no windows", args.split);
    }
    let f = pipeline::forecast(&bundle, &ds, &windows, args.method, &cfg.map)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(pipeline::forecast_csv_name(args.method)));
    pipeline::write_forecast(&out, &f)?;
    log::info!("{} windows -> {}", windows.len(), out.display());
    Ok(())
}

fn evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let files = args
        .forecasts
        .iter()
        .map(|s| match s.split_once('=') {
            Some((m, p)) => Ok((m.parse::<Method>()?, PathBuf::from(p))),
            None => {
                let p = PathBuf::from(s);
                Ok((pipeline::method_from_path(&p)?, p))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let report = pipeline::evaluate_files(&files)?;
    for (m, r) in &report.rmse {
        println!("{m:<10} RMSE {r:.4}");
    }
    if let Some(r) = report.ratio_inv_mlp {
        println!("inv-flow/mlp {r:.4}");
    }
    if let Some(dm) = report.dm {
        println!("DM inv-flow vs mlp: stat {:.3} p {:.4}", dm.stat, dm.p);
    }
    write_json(&out_or(cli, "eval.json"), &report)
}

fn scorecard(cli: &Cli, args: &ScorecardArgs) -> Result<()> {
    let cfg = run_config(cli)?;
    let sc = pipeline::scorecard_from_run(&args.runs, &cfg.thresholds)?;
    pipeline::export_tables(&args.runs)?;
    print!("{}", sc.to_table());
    write_json(&cli.out.clone().unwrap_or_else(|| args.runs.join("scorecard.json")), &sc)
}

fn reproduce(cli: &Cli, args: &ReproduceArgs) -> Result<()> {
    let mut cfg = run_config(cli)?;
    if let Some(c) = &args.cases {
        cfg.cases = c.clone();
    }
    if let Some(m) = &args.methods {
        cfg.methods = Method::parse_list(m)?;
    }
    if args.full_test {
        cfg.test_subsample = None;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    let run = pipeline::reproduce(&cfg)?;
    print!("{}", run.scorecard.to_table());
    println!("artifacts in {}", run.dir.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Generate(a) => generate(cli, a)?,
        Command::Ingest(a) => ingest(cli, a)?,
        Command::Diagnose(a) => {
            return Ok(match diagnose(cli, a)? {
                Verdict::Go => 0,
                Verdict::NoGo => EXIT_NOGO,
            })
        }
        Command::Train(a) => train(cli, a)?,
        Command::Forecast(a) => forecast(cli, a)?,
        Command::Evaluate(a) => evaluate(cli, a)?,
        Command::Scorecard(a) => scorecard(cli, a)?,
        Command::Reproduce(a) => reproduce(cli, a)?,
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
