//! Inverse CVAE: the decoder reconstructs the past from the future and a
//! latent, `p(x | y, z)`, with `z ~ N(0, I)` a priori.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::forward::reparameterize;
use super::train::{fit, model_stream, Objective, TrainData, TrainHistory};
use super::{Architecture, TrainConfig};
use crate::diffcore::{
    gaussian_head, gaussian_kl_rows, gaussian_logpdf_rows, Activation, Mlp, NetworkSpec, ParamId, ParamStore, Tape,
    Var, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::error::{Error, Result};
use crate::rng::{streams, Rng};

pub(crate) const INVERSE_ID: u64 = 3;

/// How the decoder's reconstruction scale is parameterized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderScale {
    /// One learned log-std per past timestep, shared by all samples.
    PerTimestep,
    /// A single learned log-std shared by every timestep and sample.
    #[default]
    Global,
    /// Log-std emitted by the decoder network for each sample.
    Heteroscedastic,
}

#[derive(Clone, Debug)]
pub struct InverseCvae {
    store: ParamStore,
    encoder: Mlp,
    decoder: Mlp,
    log_std: Option<ParamId>,
    past_len: usize,
    horizon: usize,
    latent: usize,
    beta: f64,
}

impl InverseCvae {
    pub fn new(past_len: usize, horizon: usize, arch: &Architecture, seed: u64) -> Result<Self> {
        let mut rng = Rng::stream(seed, model_stream(streams::INIT, INVERSE_ID));
        let mut store = ParamStore::new();
        let (h, d, l) = (arch.hidden, arch.depth, arch.latent);
        let encoder = Mlp::new(
            &mut store,
            "encoder",
            NetworkSpec::mlp(past_len + horizon, h, d, 2 * l, Activation::Relu),
            &mut rng,
        )?;
        let heads = match arch.decoder_scale {
            DecoderScale::Heteroscedastic => 2 * past_len,
            _ => past_len,
        };
        let decoder = Mlp::new(
            &mut store,
            "decoder",
            NetworkSpec::mlp(horizon + l, h, d, heads, Activation::Relu),
            &mut rng,
        )?;
        let log_std = match arch.decoder_scale {
            DecoderScale::PerTimestep => Some(store.add("decoder.log_std", Array2::zeros((1, past_len)))),
            DecoderScale::Global => Some(store.add("decoder.log_std", Array2::zeros((1, 1)))),
            DecoderScale::Heteroscedastic => None,
        };
        Ok(Self {
            store,
            encoder,
            decoder,
            log_std,
            past_len,
            horizon,
            latent: l,
            beta: 1.0,
        })
    }

    pub(crate) fn fit(&mut self, data: &TrainData, cfg: &TrainConfig) -> Result<TrainHistory> {
        self.beta = cfg.beta_kl;
        fit(self, INVERSE_ID, data, cfg)
    }

    pub fn past_len(&self) -> usize {
        self.past_len
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn latent(&self) -> usize {
        self.latent
    }

    /// Decoder Gaussian `(mean, log_std)` over the past given `(y, z)`.
    pub fn decode(&self, tape: &mut Tape, y: Var, z: Var) -> Result<(Var, Var)> {
        let input = tape.concat(&[y, z])?;
        let out = self.decoder.forward(tape, &self.store, input)?;
        match self.log_std {
            Some(id) => {
                let raw = tape.param(&self.store, id);
                Ok((out, tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)))
            }
            None => gaussian_head(tape, out, self.past_len),
        }
    }

    /// `log p(x | y, z)` per row, `N x 1`.
    pub fn recon_logpdf_rows(&self, tape: &mut Tape, x: Var, y: Var, z: Var) -> Result<Var> {
        let (mean, log_std) = self.decode(tape, y, z)?;
        gaussian_logpdf_rows(tape, x, mean, log_std)
    }

    /// Posterior `q(z | x, y)` parameters.
    pub fn encode(&self, x: &Array2<f64>, y: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if x.ncols() != self.past_len || y.ncols() != self.horizon {
            return Err(Error::Shape("encoder input widths".into()));
        }
        let mut tape = Tape::frozen();
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let input = tape.concat(&[xv, yv])?;
        let out = self.encoder.forward(&mut tape, &self.store, input)?;
        let (m, l) = gaussian_head(&mut tape, out, self.latent)?;
        Ok((tape.value(m).clone(), tape.value(l).clone()))
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

impl Objective for InverseCvae {
    const NAME: &'static str = "inverse";

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Negative ELBO: `-E[log p(x|y,z)] + beta KL(q(z|x,y) || N(0, I))`.
    fn loss(&self, tape: &mut Tape, x: &Array2<f64>, y: &Array2<f64>, rng: &mut Rng) -> Result<Var> {
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let enc_in = tape.concat(&[xv, yv])?;
        let eout = self.encoder.forward(tape, &self.store, enc_in)?;
        let (mq, lq) = gaussian_head(tape, eout, self.latent)?;
        let z = reparameterize(tape, mq, lq, rng.normal_matrix(x.nrows(), self.latent))?;
        let rec = self.recon_logpdf_rows(tape, xv, yv, z)?;
        let zero = tape.constant(Array2::zeros((1, self.latent)));
        let kl = gaussian_kl_rows(tape, mq, lq, zero, zero)?;
        let kl = tape.scale(kl, self.beta);
        let per_row = tape.sub(kl, rec)?;
        Ok(tape.mean(per_row))
    }
}
