//! End-to-end runs: generate or load, window, diagnose, train, forecast,
//! evaluate, score. Each stage reads what the previous one wrote, so a run
//! directory can be audited or resumed stage by stage from the CLI.
//!
//! Layout of a run directory:
//!
//! ```text
//! <out>/manifest.json            config, versions, stage timings, checksums
//! <out>/scorecard.json           P1-P4 (no timings, byte-stable per config)
//! <out>/results.csv              one row per case
//! <out>/per_horizon.csv          RMSE per case, method and horizon step
//! <out>/<case>/series.csv
//! <out>/<case>/dataset.bin(.json)
//! <out>/<case>/arrow.json
//! <out>/<case>/bundle/
//! <out>/<case>/forecasts_<method>.csv
//! <out>/<case>/forecasts_<method>.map.json  per-window MAP details
//! <out>/<case>/eval.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arrow::{arrow_verdict, ArrowConfig, ArrowReport};
use crate::error::{Error, Result};
use crate::eval::{scorecard, CaseOutcome, EvalReport, Scorecard, Thresholds};
use crate::ingest::{
    build_dataset, load_csv, load_dataset, preprocess, save_dataset, PreprocessSpec, Split, WindowConfig,
    WindowedDataset,
};
use crate::mapinfer::{map_optimize, predictions, ForecastResult, MapConfig};
use crate::models::{Method, ModelBundle, StandardNormal, TrainConfig};
use crate::procgen::{Case, TimeSeries};
use crate::rng::{streams, Rng};

/// A user-supplied series read from CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileCase {
    pub name: String,
    pub path: PathBuf,
    pub value_column: String,
    #[serde(default)]
    pub timestamp_column: Option<String>,
    #[serde(default)]
    pub preprocess: PreprocessSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub cases: Vec<Case>,
    pub files: Vec<FileCase>,
    pub series_len: usize,
    /// Master seed; copied into every module config.
    pub seed: u64,
    pub window: WindowConfig,
    pub arrow: ArrowConfig,
    pub train: TrainConfig,
    pub map: MapConfig,
    /// Number of test windows to forecast; `None` uses the full test split.
    pub test_subsample: Option<usize>,
    pub methods: Vec<Method>,
    pub thresholds: Thresholds,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cases: Case::ALL.to_vec(),
            files: Vec::new(),
            series_len: 20_000,
            seed: 42,
            window: WindowConfig::default(),
            arrow: ArrowConfig::default(),
            train: TrainConfig::default(),
            map: MapConfig::default(),
            test_subsample: Some(256),
            methods: Method::ALL.to_vec(),
            thresholds: Thresholds::default(),
            out: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Sets the master seed and propagates it to the module configs.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.seeded()
    }

    pub fn seeded(mut self) -> Self {
        self.arrow.seed = self.seed;
        self.train.seed = self.seed;
        self.map.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.cases.is_empty() && self.files.is_empty() {
            return Err(Error::InvalidParam("the case set is empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParam("no methods selected".into()));
        }
        if self.test_subsample == Some(0) {
            return Err(Error::InvalidParam("test_subsample must be positive".into()));
        }
        let mut names: Vec<String> = self.case_names();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParam("case names must be unique".into()));
        }
        for f in &self.files {
            if !f.path.is_file() {
                return Err(Error::Missing(format!("data file {} for case {}", f.path.display(), f.name)));
            }
        }
        self.window.validate()?;
        self.arrow.validate()?;
        self.train.validate()?;
        self.map.validate()
    }

    pub fn case_names(&self) -> Vec<String> {
        self.cases
            .iter()
            .map(|c| c.to_string())
            .chain(self.files.iter().map(|f| f.name.clone()))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub enum CaseSource {
    Synthetic(Case),
    File(FileCase),
}

impl CaseSource {
    pub fn name(&self) -> String {
        match self {
            CaseSource::Synthetic(c) => c.to_string(),
            CaseSource::File(f) => f.name.clone(),
        }
    }

    pub fn load(&self, series_len: usize, seed: u64) -> Result<TimeSeries> {
        match self {
            CaseSource::Synthetic(c) => c.generate(series_len, seed),
            CaseSource::File(f) => {
                let raw = load_csv(&f.path, &f.value_column, f.timestamp_column.as_deref())?;
                let mut s = preprocess(&raw, &f.preprocess)?;
                s.name = f.name.clone();
                Ok(s)
            }
        }
    }
}

/// Seeded uniform choice of windows from `split`, as global window indices
/// in increasing order.
pub fn select_windows(ds: &WindowedDataset, split: Split, subsample: Option<usize>, seed: u64) -> Vec<usize> {
    let r = ds.range(split);
    match subsample {
        Some(k) if k < r.len() => Rng::stream(seed, streams::TEST_SUBSAMPLE)
            .sample_sorted(r.len(), k)
            .into_iter()
            .map(|i| i + r.start)
            .collect(),
        _ => r.collect(),
    }
}

/// Predictions of one method on the selected windows.
#[derive(Clone, Debug)]
pub struct MethodForecast {
    pub method: Method,
    pub windows: Vec<usize>,
    pub truth: Array2<f64>,
    pub preds: Array2<f64>,
    pub map: Option<Vec<ForecastResult>>,
}

pub fn forecast(
    bundle: &ModelBundle,
    ds: &WindowedDataset,
    windows: &[usize],
    method: Method,
    map_cfg: &MapConfig,
) -> Result<MethodForecast> {
    if let Some(&w) = windows.iter().find(|&&w| w >= ds.len()) {
        return Err(Error::InvalidParam(format!("window {w} out of range")));
    }
    let x = ds.x.select(Axis(0), windows);
    let truth = ds.y.select(Axis(0), windows);
    let fic = || bundle.cvae()?.predict_keyed(&x, windows, map_cfg.seed);
    let (preds, map) = match method {
        Method::Naive => (bundle.naive()?.predict(windows.len()), None),
        Method::Mlp => (bundle.mlp()?.predict(&x)?, None),
        Method::Cvae => (fic()?, None),
        Method::InvFlow => {
            let r = map_optimize(bundle.inverse()?, bundle.flow()?, &x, &fic()?, windows, map_cfg)?;
            (predictions(&r), Some(r))
        }
        Method::InvGauss => {
            let prior = StandardNormal { dim: ds.config.horizon };
            let r = map_optimize(bundle.inverse()?, &prior, &x, &fic()?, windows, map_cfg)?;
            (predictions(&r), Some(r))
        }
    };
    Ok(MethodForecast {
        method,
        windows: windows.to_vec(),
        truth,
        preds,
        map,
    })
}

/// Long-format CSV: `window_index,horizon_step,y_true,y_hat` (standardized,
/// horizon steps from 1).
pub fn write_forecast_csv(path: &Path, f: &MethodForecast) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["window_index", "horizon_step", "y_true", "y_hat"])?;
    for (i, &win) in f.windows.iter().enumerate() {
        for h in 0..f.truth.ncols() {
            w.write_record([
                win.to_string(),
                (h + 1).to_string(),
                format!("{:?}", f.truth[[i, h]]),
                format!("{:?}", f.preds[[i, h]]),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the CSV and, for MAP methods, the per-window details beside it.
pub fn write_forecast(path: &Path, f: &MethodForecast) -> Result<()> {
    write_forecast_csv(path, f)?;
    match &f.map {
        Some(map) => write_json_atomic(&map_detail_path(path), map),
        None => Ok(()),
    }
}

/// Reads a forecast CSV back into `(windows, truth, preds)`.
pub fn read_forecast_csv(path: &Path) -> Result<(Vec<usize>, Array2<f64>, Array2<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows: BTreeMap<usize, BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).ok_or(Error::BadRow(i));
        let win: usize = field(0)?.parse().map_err(|_| Error::BadRow(i))?;
        let h: usize = field(1)?.parse().map_err(|_| Error::BadRow(i))?;
        let yt: f64 = field(2)?.parse().map_err(|_| Error::BadRow(i))?;
        let yh: f64 = field(3)?.parse().map_err(|_| Error::BadRow(i))?;
        rows.entry(win).or_default().insert(h, (yt, yh));
    }
    let m = rows.values().next().map_or(0, |r| r.len());
    if m == 0 || rows.values().any(|r| r.len() != m || r.keys().copied().ne(1..=m)) {
        return Err(Error::Shape(format!("{} has ragged or empty horizons", path.display())));
    }
    let windows: Vec<usize> = rows.keys().copied().collect();
    let mut truth = Array2::zeros((windows.len(), m));
    let mut preds = Array2::zeros((windows.len(), m));
    for (i, r) in rows.values().enumerate() {
        for (j, (yt, yh)) in r.values().enumerate() {
            truth[[i, j]] = *yt;
            preds[[i, j]] = *yh;
        }
    }
    Ok((windows, truth, preds))
}

pub fn forecast_csv_name(method: Method) -> String {
    format!("forecasts_{method}.csv")
}

/// Per-window MAP details stored next to a forecast CSV:
/// `forecasts_inv-flow.csv` -> `forecasts_inv-flow.map.json`.
pub fn map_detail_path(forecast_csv: &Path) -> PathBuf {
    forecast_csv.with_extension("map.json")
}

/// Method encoded in a forecast file name: the part of the stem after the
/// last `_`, or the whole stem (`forecasts_inv-flow.csv`, `mlp.csv`).
pub fn method_from_path(path: &Path) -> Result<Method> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let tail = stem.rsplit('_').next().unwrap_or(stem);
    tail.parse()
        .map_err(|_| Error::InvalidParam(format!("cannot tell the method of {}", path.display())))
}

/// Builds the evaluation from forecast CSVs that cover the same windows. The
/// inv-flow MAP details are read from the file next to its CSV when present.
pub fn evaluate_files(files: &[(Method, PathBuf)]) -> Result<EvalReport> {
    if files.is_empty() {
        return Err(Error::Missing("forecast files".into()));
    }
    let mut preds = BTreeMap::new();
    let mut reference: Option<(Vec<usize>, Array2<f64>)> = None;
    let mut map_detail = None;
    for (method, f) in files {
        if preds.contains_key(method) {
            return Err(Error::InvalidParam(format!("two forecast files for {method}")));
        }
        let (w, t, p) = read_forecast_csv(f)?;
        match &reference {
            None => reference = Some((w, t)),
            Some((rw, rt)) => {
                if *rw != w || *rt != t {
                    return Err(Error::Shape(format!("{} covers different windows", f.display())));
                }
            }
        }
        preds.insert(*method, p);
        let detail = map_detail_path(f);
        if *method == Method::InvFlow && detail.is_file() {
            map_detail = Some(detail);
        }
    }
    let (windows, truth) = reference.expect("at least one file");
    let retro: Option<Vec<ForecastResult>> = match &map_detail {
        Some(p) => {
            let r: Vec<ForecastResult> = read_json(p)?;
            if r.iter().map(|f| f.window).ne(windows.iter().copied()) {
                return Err(Error::Shape(format!("{} covers different windows", p.display())));
            }
            Some(r)
        }
        None => None,
    };
    EvalReport::build(&truth, &preds, retro.as_deref())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub case: String,
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
    /// SHA-256 of every artifact, keyed by path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(config: &RunConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            stages: Vec::new(),
            artifacts: BTreeMap::new(),
        }
    }
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(value)?)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn record_artifacts(manifest: &mut RunManifest, root: &Path, dir: &Path) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            record_artifacts(manifest, root, &p)?;
        } else if p.extension().is_none_or(|e| e != "tmp") && p.file_name() != Some("manifest.json".as_ref()) {
            let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            manifest.artifacts.insert(rel, sha256_file(&p)?);
        }
    }
    Ok(())
}

/// Everything `reproduce` produced for one case.
#[derive(Clone, Debug)]
pub struct CaseRun {
    pub name: String,
    pub arrow: ArrowReport,
    pub eval: EvalReport,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub cases: Vec<CaseRun>,
    pub scorecard: Scorecard,
}

struct StageTimer<'a> {
    manifest: &'a mut RunManifest,
    root: &'a Path,
}

impl StageTimer<'_> {
    fn run<T>(&mut self, case: &str, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        log::info!("[{case}] {stage}");
        let t = Instant::now();
        let out = f().map_err(|e| e.in_stage(format!("{case}/{stage}")))?;
        self.manifest.stages.push(StageRecord {
            case: case.to_string(),
            stage: stage.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        self.manifest.artifacts.clear();
        record_artifacts(self.manifest, self.root, self.root)?;
        write_json_atomic(&self.root.join("manifest.json"), &*self.manifest)?;
        Ok(out)
    }
}

/// Runs every stage for every case and writes the scorecard and tables.
pub fn reproduce(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let root = config.out.clone();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let mut manifest = RunManifest::new(config);
    let mut timer = StageTimer {
        manifest: &mut manifest,
        root: &root,
    };
    let sources: Vec<CaseSource> = config
        .cases
        .iter()
        .map(|&c| CaseSource::Synthetic(c))
        .chain(config.files.iter().cloned().map(CaseSource::File))
        .collect();

    let mut runs = Vec::new();
    for src in &sources {
        let name = src.name();
        let dir = root.join(&name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let series = timer.run(&name, "generate", || {
            let s = src.load(config.series_len, config.seed)?;
            write_atomic(&dir.join("series.csv"), s.to_csv().as_bytes())?;
            Ok(s)
        })?;
        let data_path = dir.join("dataset.bin");
        timer.run(&name, "ingest", || {
            let ds = build_dataset(&series, config.window)?;
            save_dataset(&data_path, &series, &ds)
        })?;
        let (series, ds) = load_dataset(&data_path)?;
        let arrow = timer.run(&name, "diagnose", || {
            let r = arrow_verdict(&name, &series.values, &config.arrow)?;
            write_json_atomic(&dir.join("arrow.json"), &r)?;
            Ok(r)
        })?;
        let bundle_dir = dir.join("bundle");
        timer.run(&name, "train", || {
            ModelBundle::train(&ds, &config.train, &config.methods)?.save(&bundle_dir)
        })?;
        let bundle = ModelBundle::load(&bundle_dir)?;
        let windows = select_windows(&ds, Split::Test, config.test_subsample, config.seed);
        timer.run(&name, "forecast", || {
            for &m in &config.methods {
                let f = forecast(&bundle, &ds, &windows, m, &config.map)?;
                write_forecast(&dir.join(forecast_csv_name(m)), &f)?;
            }
            Ok(())
        })?;
        let eval = timer.run(&name, "evaluate", || {
            let files: Vec<(Method, PathBuf)> =
                config.methods.iter().map(|&m| (m, dir.join(forecast_csv_name(m)))).collect();
            let e = evaluate_files(&files)?;
            write_json_atomic(&dir.join("eval.json"), &e)?;
            Ok(e)
        })?;
        runs.push(CaseRun { name, arrow, eval });
    }

    let sc = timer.run("all", "scorecard", || {
        let sc = scorecard_from_run(&root, &config.thresholds)?;
        write_json_atomic(&root.join("scorecard.json"), &sc)?;
        export_tables(&root)?;
        Ok(sc)
    })?;
    Ok(RunSummary {
        dir: root,
        cases: runs,
        scorecard: sc,
    })
}

/// Case directories of a run (those holding an `arrow.json`), sorted.
pub fn case_dirs(run_dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))? {
        let p = e.map_err(|e| Error::io(run_dir, e))?.path();
        if p.join("arrow.json").is_file() {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            out.push((name, p));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Missing(format!("case directories under {}", run_dir.display())));
    }
    Ok(out)
}

pub fn scorecard_from_run(run_dir: &Path, th: &Thresholds) -> Result<Scorecard> {
    let mut outcomes = Vec::new();
    for (name, dir) in case_dirs(run_dir)? {
        let arrow: ArrowReport = read_json(&dir.join("arrow.json"))?;
        let eval_path = dir.join("eval.json");
        let eval = if eval_path.is_file() {
            Some(read_json(&eval_path)?)
        } else {
            None
        };
        outcomes.push(CaseOutcome {
            synthetic: name.parse::<Case>().is_ok(),
            case: name,
            verdict: arrow.verdict,
            eval,
        });
    }
    scorecard(&outcomes, th)
}

/// Shortest round-trip representation, so derived columns can be recomputed
/// exactly from the file.
fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// Writes `results.csv` and `per_horizon.csv` into the run directory.
pub fn export_tables(run_dir: &Path) -> Result<()> {
    let mut results = csv::Writer::from_path(run_dir.join("results.csv"))?;
    results.write_record(["Case", "Verdict", "Naive", "MLP", "CVAE", "InvFlow", "Ratio", "DMstat", "DMp"])?;
    let mut horizons = csv::Writer::from_path(run_dir.join("per_horizon.csv"))?;
    horizons.write_record(["Case", "Method", "h", "RMSE"])?;
    for (name, dir) in case_dirs(run_dir)? {
        let arrow: ArrowReport = read_json(&dir.join("arrow.json"))?;
        let eval_path = dir.join("eval.json");
        if !eval_path.is_file() {
            return Err(Error::Missing(format!("eval.json for case {name}")));
        }
        let e: EvalReport = read_json(&eval_path)?;
        let get = |m: Method| e.rmse.get(&m).copied();
        results.write_record([
            name.clone(),
            arrow.verdict.to_string(),
            fmt_opt(get(Method::Naive)),
            fmt_opt(get(Method::Mlp)),
            fmt_opt(get(Method::Cvae)),
            fmt_opt(get(Method::InvFlow)),
            fmt_opt(e.ratio_inv_mlp),
            fmt_opt(e.dm.map(|d| d.stat)),
            fmt_opt(e.dm.map(|d| d.p)),
        ])?;
        for (m, per_h) in &e.rmse_per_horizon {
            for (h, v) in per_h.iter().enumerate() {
                horizons.write_record([name.clone(), m.to_string(), (h + 1).to_string(), v.to_string()])?;
            }
        }
    }
    results.flush().map_err(|e| Error::io(run_dir, e))?;
    horizons.flush().map_err(|e| Error::io(run_dir, e))
}
