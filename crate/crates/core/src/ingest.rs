//! Series loading, preprocessing, supervised windowing, chronological split
//! and standardization.

use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::procgen::{Source, TimeSeries};

/// Floor applied before a log transform (calm-wind zeros).
pub const LOG_FLOOR: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub past_len: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            past_len: 32,
            horizon: 16,
            stride: 1,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.past_len == 0 || self.horizon == 0 || self.stride == 0 {
            return Err(Error::InvalidParam(format!("window config must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn span(&self) -> usize {
        self.past_len + self.horizon
    }
}

/// Scalar z-score transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    pub std: f64,
}

impl Scaler {
    /// Mean and (population) std over every element of the given matrices.
    pub fn fit(parts: &[&Array2<f64>]) -> Result<Self> {
        let n: usize = parts.iter().map(|p| p.len()).sum();
        if n == 0 {
            return Err(Error::InsufficientData("no training elements".into()));
        }
        let mean = parts.iter().map(|p| p.sum()).sum::<f64>() / n as f64;
        let var = parts
            .iter()
            .map(|p| p.iter().map(|x| (x - mean).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::ZeroVariance);
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn transform_matrix(&self, m: &Array2<f64>) -> Array2<f64> {
        m.mapv(|x| self.transform(x))
    }

    pub fn inverse_matrix(&self, m: &Array2<f64>) -> Array2<f64> {
        m.mapv(|z| self.inverse(z))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaylightFilter {
    pub lat: f64,
    pub lon: f64,
    pub zenith_max: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub log_transform: bool,
    pub daylight_filter: Option<DaylightFilter>,
}

/// Raw (unscaled) window matrices with the source start index of each row.
#[derive(Clone, Debug, PartialEq)]
pub struct Windows {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub starts: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParam(format!("unknown split `{other}`"))),
        }
    }
}

/// Standardized, chronologically split supervised windows.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub starts: Vec<usize>,
    pub train_end: usize,
    pub val_end: usize,
    pub scaler: Scaler,
    pub config: WindowConfig,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn range(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train_end,
            Split::Val => self.train_end..self.val_end,
            Split::Test => self.val_end..self.len(),
        }
    }

    pub fn x_split(&self, split: Split) -> Array2<f64> {
        let r = self.range(split);
        self.x.slice(s![r, ..]).to_owned()
    }

    pub fn y_split(&self, split: Split) -> Array2<f64> {
        let r = self.range(split);
        self.y.slice(s![r, ..]).to_owned()
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    const FORMATS: [&str; 4] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"];
    for f in FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(s.trim_end_matches('Z'), f) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Reads one value column (and optionally a UTC timestamp column) from a
/// headed CSV file.
pub fn load_csv(path: &Path, value_column: &str, timestamp_column: Option<&str>) -> Result<TimeSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => Error::Csv(e),
        })?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let vcol = col(value_column)?;
    let tcol = timestamp_column.map(col).transpose()?;

    let mut values = Vec::new();
    let mut stamps = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let v: f64 = record
            .get(vcol)
            .and_then(|s| s.parse().ok())
            .filter(|v: &f64| v.is_finite())
            .ok_or(Error::BadRow(row))?;
        if let Some(tc) = tcol {
            let raw = record.get(tc).unwrap_or("");
            let t = parse_timestamp(raw).ok_or_else(|| Error::BadTimestamp {
                row,
                value: raw.to_string(),
            })?;
            if let Some(prev) = stamps.last() {
                if t <= *prev {
                    return Err(Error::NonMonotoneTimestamps(row));
                }
            }
            stamps.push(t);
        }
        values.push(v);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into());
    let mut series = TimeSeries::new(name, values, Source::File, None)?;
    if tcol.is_some() {
        series.timestamps = Some(stamps);
    }
    Ok(series)
}

/// Solar zenith angle in degrees for a UTC instant, from the Cooper
/// declination and the hour angle at local mean solar time.
pub fn solar_zenith_deg(t: &NaiveDateTime, lat: f64, lon: f64) -> f64 {
    let day = t.ordinal() as f64;
    let decl = 23.45f64.to_radians() * (2.0 * std::f64::consts::PI * (284.0 + day) / 365.0).sin();
    let hours = t.hour() as f64 + t.minute() as f64 / 60.0 + t.second() as f64 / 3600.0;
    let solar_time = hours + lon / 15.0;
    let hour_angle = (15.0 * (solar_time - 12.0)).to_radians();
    let phi = lat.to_radians();
    let cos_z = phi.sin() * decl.sin() + phi.cos() * decl.cos() * hour_angle.cos();
    cos_z.clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn preprocess(series: &TimeSeries, spec: &PreprocessSpec) -> Result<TimeSeries> {
    let mut values = series.values.clone();
    let mut stamps = series.timestamps.clone();

    if let Some(f) = spec.daylight_filter {
        if !(f.zenith_max > 0.0 && f.zenith_max <= 90.0) {
            return Err(Error::InvalidParam(format!("zenith_max {} outside (0, 90]", f.zenith_max)));
        }
        let ts = stamps.as_ref().ok_or(Error::MissingTimestamps)?;
        let keep: Vec<bool> = ts
            .iter()
            .map(|t| solar_zenith_deg(t, f.lat, f.lon) < f.zenith_max)
            .collect();
        values = values
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(v, _)| *v)
            .collect();
        stamps = Some(ts.iter().zip(&keep).filter(|(_, k)| **k).map(|(t, _)| *t).collect());
    }

    if spec.log_transform {
        for (i, v) in values.iter_mut().enumerate() {
            if *v < 0.0 || !v.is_finite() {
                return Err(Error::NonPositiveLog { index: i, value: *v });
            }
            *v = v.max(LOG_FLOOR).ln();
        }
    }

    let mut out = TimeSeries::new(series.name.clone(), values, series.source, series.seed)?;
    out.timestamps = stamps;
    Ok(out)
}

/// Row `i` holds `x = s[i*stride .. i*stride+n]`, `y = s[i*stride+n .. +m]`.
pub fn make_windows(series: &[f64], config: &WindowConfig) -> Result<Windows> {
    config.validate()?;
    let span = config.span();
    if series.len() < span {
        return Err(Error::TooShort {
            needed: span,
            got: series.len(),
        });
    }
    let n_rows = (series.len() - span) / config.stride + 1;
    let n = config.past_len;
    let m = config.horizon;
    let mut x = Array2::zeros((n_rows, n));
    let mut y = Array2::zeros((n_rows, m));
    let mut starts = Vec::with_capacity(n_rows);
    for i in 0..n_rows {
        let st = i * config.stride;
        for j in 0..n {
            x[[i, j]] = series[st + j];
        }
        for j in 0..m {
            y[[i, j]] = series[st + n + j];
        }
        starts.push(st);
    }
    Ok(Windows { x, y, starts })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.70, val: 0.15 }
    }
}

/// Chronological split (no shuffling) and scalar z-scoring fitted on the
/// training rows' `x` and `y` elements only.
pub fn split_and_scale(windows: Windows, config: WindowConfig, fractions: SplitFractions) -> Result<WindowedDataset> {
    let n = windows.x.nrows();
    if n < 10 {
        return Err(Error::InsufficientData(format!("need at least 10 windows, got {n}")));
    }
    let train_end = ((n as f64) * fractions.train).round() as usize;
    let val_end = ((n as f64) * (fractions.train + fractions.val)).round() as usize;
    if !(0 < train_end && train_end < val_end && val_end < n) {
        return Err(Error::InvalidParam(format!(
            "split fractions {fractions:?} give empty splits for {n} windows"
        )));
    }
    let tx = windows.x.slice(s![..train_end, ..]).to_owned();
    let ty = windows.y.slice(s![..train_end, ..]).to_owned();
    let scaler = Scaler::fit(&[&tx, &ty])?;
    Ok(WindowedDataset {
        x: scaler.transform_matrix(&windows.x),
        y: scaler.transform_matrix(&windows.y),
        starts: windows.starts,
        train_end,
        val_end,
        scaler,
        config,
    })
}

pub fn build_dataset(series: &TimeSeries, config: WindowConfig) -> Result<WindowedDataset> {
    split_and_scale(make_windows(&series.values, &config)?, config, SplitFractions::default())
}

#[derive(Serialize, Deserialize)]
struct DatasetSidecar {
    name: String,
    series_len: usize,
    n_windows: usize,
    config: WindowConfig,
    scaler: Scaler,
    train_end: usize,
    val_end: usize,
}

/// Persists the (preprocessed) source series as flat little-endian f64 at
/// `path`, and the scaler, window config and split bounds in `<path>.json`.
/// Loading rebuilds the identical dataset.
pub fn save_dataset(path: &Path, series: &TimeSeries, ds: &WindowedDataset) -> Result<()> {
    let bytes: Vec<u8> = series.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = DatasetSidecar {
        name: series.name.clone(),
        series_len: series.len(),
        n_windows: ds.len(),
        config: ds.config,
        scaler: ds.scaler,
        train_end: ds.train_end,
        val_end: ds.val_end,
    };
    let sp = sidecar_path(path);
    std::fs::write(&sp, serde_json::to_vec_pretty(&side)?).map_err(|e| Error::io(&sp, e))?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn load_dataset(path: &Path) -> Result<(TimeSeries, WindowedDataset)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let sp = sidecar_path(path);
    let side: DatasetSidecar =
        serde_json::from_slice(&std::fs::read(&sp).map_err(|e| Error::io(&sp, e))?)?;
    if bytes.len() != side.series_len * 8 {
        return Err(Error::Shape(format!(
            "{} holds {} bytes, sidecar says {} values",
            path.display(),
            bytes.len(),
            side.series_len
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let series = TimeSeries::new(side.name, values, Source::File, None)?;
    let windows = make_windows(&series.values, &side.config)?;
    if windows.x.nrows() != side.n_windows {
        return Err(Error::Shape("window count disagrees with sidecar".into()));
    }
    let ds = WindowedDataset {
        x: side.scaler.transform_matrix(&windows.x),
        y: side.scaler.transform_matrix(&windows.y),
        starts: windows.starts,
        train_end: side.train_end,
        val_end: side.val_end,
        scaler: side.scaler,
        config: side.config,
    };
    Ok((series, ds))
}
