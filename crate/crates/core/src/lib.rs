//! Retrodictive time-series forecasting.
//!
//! Instead of mapping a past window to a future window, the forecaster
//! searches for the future that best explains the observed past under an
//! inverse conditional VAE, regularized by a RealNVP prior over futures. The
//! crate also provides the arrow-of-time irreversibility gate that decides
//! whether a series is a candidate for this approach, forward baselines, and
//! the evaluation machinery (RMSE, Diebold-Mariano, scorecard).

pub mod arrow;
pub mod checks;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod mapinfer;
pub mod models;
pub mod pipeline;
pub mod procgen;
pub mod rng;

pub use arrow::{ArrowConfig, ArrowReport, Representation, ScaleResult, Verdict};
pub use error::{Error, Result};
pub use eval::{EvalReport, Scorecard};
pub use ingest::{Scaler, WindowConfig, WindowedDataset};
pub use mapinfer::{ForecastResult, MapConfig};
pub use models::{ModelBundle, TrainConfig};
pub use procgen::{Case, TimeSeries};
pub use rng::Rng;
