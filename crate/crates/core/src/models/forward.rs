//! Forward baselines mapping the past window to the future window.

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::train::{fit, model_stream, Objective, TrainData, TrainHistory};
use super::{Architecture, TrainConfig};
use crate::diffcore::{
    gaussian_head, gaussian_kl_rows, gaussian_logpdf_rows, Activation, Mlp, NetworkSpec, ParamStore, Tape, Var,
};
use crate::error::{Error, Result};
use crate::rng::{streams, Rng};

pub(crate) const MLP_ID: u64 = 1;
pub(crate) const CVAE_ID: u64 = 2;

const PREDICT_CHUNK: usize = 64;

/// Column-wise mean of the training futures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveMean {
    pub mean: Vec<f64>,
}

impl NaiveMean {
    pub fn fit(y_train: &Array2<f64>) -> Result<Self> {
        let mean = y_train
            .mean_axis(Axis(0))
            .ok_or_else(|| Error::InsufficientData("empty training split".into()))?;
        Ok(Self { mean: mean.to_vec() })
    }

    pub fn predict(&self, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, self.mean.len()), |(_, j)| self.mean[j])
    }
}

fn check_width(x: &Array2<f64>, want: usize, what: &str) -> Result<()> {
    if x.ncols() != want {
        return Err(Error::Shape(format!("{what} has {} columns, expected {want}", x.ncols())));
    }
    Ok(())
}

/// ReLU MLP from past to future trained on squared error.
#[derive(Clone, Debug)]
pub struct ForwardMlp {
    store: ParamStore,
    net: Mlp,
}

impl ForwardMlp {
    pub fn new(past_len: usize, horizon: usize, arch: &Architecture, seed: u64) -> Result<Self> {
        let mut rng = Rng::stream(seed, model_stream(streams::INIT, MLP_ID));
        let mut store = ParamStore::new();
        let spec = NetworkSpec::mlp(past_len, arch.hidden, arch.depth, horizon, Activation::Relu);
        let net = Mlp::new(&mut store, "mlp", spec, &mut rng)?;
        Ok(Self { store, net })
    }

    pub(crate) fn fit(&mut self, data: &TrainData, cfg: &TrainConfig) -> Result<TrainHistory> {
        fit(self, MLP_ID, data, cfg)
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        check_width(x, self.net.spec().input_width(), "past window")?;
        let mut tape = Tape::frozen();
        let xv = tape.constant(x.clone());
        let out = self.net.forward(&mut tape, &self.store, xv)?;
        Ok(tape.value(out).clone())
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

impl Objective for ForwardMlp {
    const NAME: &'static str = "mlp";

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn loss(&self, tape: &mut Tape, x: &Array2<f64>, y: &Array2<f64>, _rng: &mut Rng) -> Result<Var> {
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let pred = self.net.forward(tape, &self.store, xv)?;
        let diff = tape.sub(pred, yv)?;
        let sq = tape.square(diff);
        Ok(tape.mean(sq))
    }
}

/// Conditional VAE with a learned prior `p(z|x)`, encoder `q(z|x,y)` and
/// decoder `p(y|x,z)`. Predictions average decoder means over prior draws.
#[derive(Clone, Debug)]
pub struct ForwardCvae {
    store: ParamStore,
    prior: Mlp,
    encoder: Mlp,
    decoder: Mlp,
    past_len: usize,
    horizon: usize,
    latent: usize,
    samples: usize,
    beta: f64,
}

impl ForwardCvae {
    pub fn new(past_len: usize, horizon: usize, arch: &Architecture, seed: u64) -> Result<Self> {
        let mut rng = Rng::stream(seed, model_stream(streams::INIT, CVAE_ID));
        let mut store = ParamStore::new();
        let (h, d, l) = (arch.hidden, arch.depth, arch.latent);
        let prior = Mlp::new(
            &mut store,
            "prior",
            NetworkSpec::mlp(past_len, h, d, 2 * l, Activation::Relu),
            &mut rng,
        )?;
        let encoder = Mlp::new(
            &mut store,
            "encoder",
            NetworkSpec::mlp(past_len + horizon, h, d, 2 * l, Activation::Relu),
            &mut rng,
        )?;
        let decoder = Mlp::new(
            &mut store,
            "decoder",
            NetworkSpec::mlp(past_len + l, h, d, 2 * horizon, Activation::Relu),
            &mut rng,
        )?;
        Ok(Self {
            store,
            prior,
            encoder,
            decoder,
            past_len,
            horizon,
            latent: l,
            samples: arch.cvae_samples,
            beta: 1.0,
        })
    }

    pub(crate) fn fit(&mut self, data: &TrainData, cfg: &TrainConfig) -> Result<TrainHistory> {
        self.beta = cfg.beta_kl;
        fit(self, CVAE_ID, data, cfg)
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn set_samples(&mut self, samples: usize) {
        self.samples = samples.max(1);
    }

    /// Averaged decoder means; row `i` draws its latents from the stream
    /// keyed by `keys[i]`, so a window's prediction does not depend on which
    /// other windows are in the batch.
    pub fn predict_keyed(&self, x: &Array2<f64>, keys: &[usize], seed: u64) -> Result<Array2<f64>> {
        check_width(x, self.past_len, "past window")?;
        if keys.len() != x.nrows() {
            return Err(Error::Shape(format!("{} keys for {} rows", keys.len(), x.nrows())));
        }
        let s = self.samples;
        let mut out = Array2::zeros((x.nrows(), self.horizon));
        for start in (0..x.nrows()).step_by(PREDICT_CHUNK) {
            let end = (start + PREDICT_CHUNK).min(x.nrows());
            let rows: Vec<usize> = (start..end).flat_map(|i| std::iter::repeat(i).take(s)).collect();
            let xr = x.select(Axis(0), &rows);
            let mut eps = Array2::zeros((rows.len(), self.latent));
            for (j, i) in (start..end).enumerate() {
                let mut rng = Rng::stream(seed, streams::derive(streams::NOISE, CVAE_ID, keys[i] as u64));
                eps.slice_mut(s![j * s..(j + 1) * s, ..]).assign(&rng.normal_matrix(s, self.latent));
            }
            let mut tape = Tape::frozen();
            let xv = tape.constant(xr);
            let pout = self.prior.forward(&mut tape, &self.store, xv)?;
            let (mp, lp) = gaussian_head(&mut tape, pout, self.latent)?;
            let z = reparameterize(&mut tape, mp, lp, eps)?;
            let dec_in = tape.concat(&[xv, z])?;
            let dout = self.decoder.forward(&mut tape, &self.store, dec_in)?;
            let mean = tape.value(dout).slice(s![.., ..self.horizon]).to_owned();
            for (j, i) in (start..end).enumerate() {
                let block = mean.slice(s![j * s..(j + 1) * s, ..]);
                out.row_mut(i).assign(&block.mean_axis(Axis(0)).expect("samples >= 1"));
            }
        }
        Ok(out)
    }

    pub fn predict(&self, x: &Array2<f64>, seed: u64) -> Result<Array2<f64>> {
        let keys: Vec<usize> = (0..x.nrows()).collect();
        self.predict_keyed(x, &keys, seed)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

pub(crate) fn reparameterize(tape: &mut Tape, mean: Var, log_std: Var, eps: Array2<f64>) -> Result<Var> {
    let e = tape.constant(eps);
    let std = tape.exp(log_std);
    let scaled = tape.mul(std, e)?;
    tape.add(mean, scaled)
}

impl Objective for ForwardCvae {
    const NAME: &'static str = "cvae";

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn loss(&self, tape: &mut Tape, x: &Array2<f64>, y: &Array2<f64>, rng: &mut Rng) -> Result<Var> {
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let pout = self.prior.forward(tape, &self.store, xv)?;
        let (mp, lp) = gaussian_head(tape, pout, self.latent)?;
        let enc_in = tape.concat(&[xv, yv])?;
        let eout = self.encoder.forward(tape, &self.store, enc_in)?;
        let (mq, lq) = gaussian_head(tape, eout, self.latent)?;
        let z = reparameterize(tape, mq, lq, rng.normal_matrix(x.nrows(), self.latent))?;
        let dec_in = tape.concat(&[xv, z])?;
        let dout = self.decoder.forward(tape, &self.store, dec_in)?;
        let (my, ly) = gaussian_head(tape, dout, self.horizon)?;
        let rec = gaussian_logpdf_rows(tape, yv, my, ly)?;
        let kl = gaussian_kl_rows(tape, mq, lq, mp, lp)?;
        let kl = tape.scale(kl, self.beta);
        let per_row = tape.sub(kl, rec)?;
        Ok(tape.mean(per_row))
    }
}
