//! Forecasting backbones: naive mean, forward MLP, forward CVAE, inverse CVAE
//! and the RealNVP prior over future windows.
//!
//! Every network works in standardized units and owns its [`ParamStore`].
//! Training minimizes a per-row mean loss with Adam and keeps the
//! best-validation epoch.

mod bundle;
mod flow;
mod forward;
mod inverse;
pub(crate) mod train;

use serde::{Deserialize, Serialize};

use crate::diffcore::{std_normal_logpdf_rows, Tape, Var};
use crate::error::{Error, Result};
use crate::ingest::{Split, WindowedDataset};
use crate::rng::Rng;

pub use bundle::{Method, ModelBundle};
pub use flow::FlowPrior;
pub use forward::{ForwardCvae, ForwardMlp, NaiveMean};
pub use inverse::{DecoderScale, InverseCvae};
pub use train::TrainHistory;

use train::TrainData;

/// Network sizes. Defaults follow the reference architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub hidden: usize,
    pub depth: usize,
    pub latent: usize,
    pub cvae_samples: usize,
    pub flow_layers: usize,
    pub flow_hidden: usize,
    pub decoder_scale: DecoderScale,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: 128,
            depth: 2,
            latent: 8,
            cvae_samples: 64,
            flow_layers: 8,
            flow_hidden: 64,
            decoder_scale: DecoderScale::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub beta_kl: f64,
    pub batch: usize,
    pub seed: u64,
    pub arch: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            epochs: 80,
            beta_kl: 1.0,
            batch: 128,
            seed: 42,
            arch: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.epochs == 0 || self.batch == 0 {
            return Err(Error::InvalidParam("lr, epochs and batch must be positive".into()));
        }
        if !(self.beta_kl >= 0.0 && self.beta_kl.is_finite()) {
            return Err(Error::InvalidParam(format!("beta_kl {} must be >= 0", self.beta_kl)));
        }
        if [a.hidden, a.depth, a.latent, a.cvae_samples, a.flow_layers, a.flow_hidden].contains(&0) {
            return Err(Error::InvalidParam("architecture sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Density over standardized future windows used as the MAP regularizer.
pub trait FuturePrior {
    fn dim(&self) -> usize;
    /// Per-row log-density, `N x 1`, differentiable in `y`.
    fn log_prob_rows(&self, tape: &mut Tape, y: Var) -> Result<Var>;
    fn sample(&self, n: usize, rng: &mut Rng) -> Result<ndarray::Array2<f64>>;
}

/// `N(0, I)` over futures, the prior used by the inv-gauss method.
#[derive(Clone, Copy, Debug)]
pub struct StandardNormal {
    pub dim: usize,
}

impl FuturePrior for StandardNormal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_prob_rows(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        Ok(std_normal_logpdf_rows(tape, y))
    }

    fn sample(&self, n: usize, rng: &mut Rng) -> Result<ndarray::Array2<f64>> {
        Ok(rng.normal_matrix(n, self.dim))
    }
}

pub fn fit_naive(ds: &WindowedDataset) -> Result<NaiveMean> {
    NaiveMean::fit(&ds.y_split(Split::Train))
}

pub fn train_forward_mlp(ds: &WindowedDataset, cfg: &TrainConfig) -> Result<(ForwardMlp, TrainHistory)> {
    let mut net = ForwardMlp::new(ds.config.past_len, ds.config.horizon, &cfg.arch, cfg.seed)?;
    let h = net.fit(&TrainData::from_dataset(ds), cfg)?;
    Ok((net, h))
}

pub fn train_forward_cvae(ds: &WindowedDataset, cfg: &TrainConfig) -> Result<(ForwardCvae, TrainHistory)> {
    let mut net = ForwardCvae::new(ds.config.past_len, ds.config.horizon, &cfg.arch, cfg.seed)?;
    let h = net.fit(&TrainData::from_dataset(ds), cfg)?;
    Ok((net, h))
}

pub fn train_inverse_cvae(ds: &WindowedDataset, cfg: &TrainConfig) -> Result<(InverseCvae, TrainHistory)> {
    let mut net = InverseCvae::new(ds.config.past_len, ds.config.horizon, &cfg.arch, cfg.seed)?;
    let h = net.fit(&TrainData::from_dataset(ds), cfg)?;
    Ok((net, h))
}

/// Fits the flow to the training futures only.
pub fn train_flow(ds: &WindowedDataset, cfg: &TrainConfig) -> Result<(FlowPrior, TrainHistory)> {
    let mut net = FlowPrior::new(ds.config.horizon, &cfg.arch, cfg.seed)?;
    let h = net.fit(&TrainData::from_dataset(ds), cfg)?;
    Ok((net, h))
}

#[cfg(test)]
mod tests;
