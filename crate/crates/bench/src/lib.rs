//! Shared fixtures for the benchmarks.

use ndarray::Array2;
use retroforecast::ingest::WindowConfig;
use retroforecast::Rng;

/// Standard-normal matrix from a fixed seed.
pub fn normal(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    Rng::new(seed).normal_matrix(rows, cols)
}

pub fn windows() -> WindowConfig {
    WindowConfig::default()
}
