//! Retrodictive MAP inference over `(y, z)`.
//!
//! For a past window `x` the objective per restart is
//! `-log p(x|y,z) + lambda_prior * (-log p(y)) + lambda_y * |y - y_fic|^2 - log N(z; 0, I)`.
//! All windows and restarts are optimized together as rows of one matrix;
//! rows never interact, gradients are clipped per row and Adam is
//! elementwise, so this is the same as running each restart on its own.

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::diffcore::{clip_row_norm, std_normal_logpdf_rows, AdamConfig, AdamState, Tape, Var};
use crate::error::{Error, Result};
use crate::models::{FuturePrior, InverseCvae};
use crate::rng::{streams, Rng};

const WINDOW_CHUNK: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    pub restarts: usize,
    pub steps: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub lambda_prior: f64,
    pub lambda_y: f64,
    pub use_fic: bool,
    pub seed: u64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            steps: 200,
            lr: 5e-2,
            clip_norm: 5.0,
            lambda_prior: 2.0,
            lambda_y: 0.0,
            use_fic: true,
            seed: 42,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidParam("MAP needs at least one restart".into()));
        }
        if !(self.lr > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::InvalidParam("MAP lr and clip_norm must be positive".into()));
        }
        if !(self.lambda_prior >= 0.0 && self.lambda_y >= 0.0) {
            return Err(Error::InvalidParam("MAP penalties must be non-negative".into()));
        }
        Ok(())
    }
}

/// Conditional density of the past given a future and a latent.
pub trait Retrodictor {
    fn past_len(&self) -> usize;
    fn horizon(&self) -> usize;
    fn latent(&self) -> usize;
    /// `log p(x | y, z)` per row, `N x 1`.
    fn recon_logpdf_rows(&self, tape: &mut Tape, x: Var, y: Var, z: Var) -> Result<Var>;
}

impl Retrodictor for InverseCvae {
    fn past_len(&self) -> usize {
        InverseCvae::past_len(self)
    }

    fn horizon(&self) -> usize {
        InverseCvae::horizon(self)
    }

    fn latent(&self) -> usize {
        InverseCvae::latent(self)
    }

    fn recon_logpdf_rows(&self, tape: &mut Tape, x: Var, y: Var, z: Var) -> Result<Var> {
        InverseCvae::recon_logpdf_rows(self, tape, x, y, z)
    }
}

/// Per-window MAP outcome; `y_hat` is in standardized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub window: usize,
    pub y_hat: Vec<f64>,
    pub z_hat: Vec<f64>,
    pub map_loss_best: f64,
    pub map_losses_all: Vec<f64>,
    pub map_losses_init: Vec<f64>,
    pub best_restart: usize,
    pub retro_nll: f64,
    pub dispersion: f64,
    pub used_fic: bool,
}

/// Objective terms per row.
pub struct ObjectiveRows {
    pub total: Var,
    pub recon_nll: Var,
}

/// Builds the MAP objective per row on `tape`. `fic` is only read when
/// `lambda_y > 0`.
pub fn map_objective_rows(
    tape: &mut Tape,
    decoder: &dyn Retrodictor,
    prior: &dyn FuturePrior,
    x: Var,
    y: Var,
    z: Var,
    fic: Option<Var>,
    cfg: &MapConfig,
) -> Result<ObjectiveRows> {
    let rec = decoder.recon_logpdf_rows(tape, x, y, z)?;
    let recon_nll = tape.neg(rec);
    let lp = prior.log_prob_rows(tape, y)?;
    let prior_term = tape.scale(lp, -cfg.lambda_prior);
    let lz = std_normal_logpdf_rows(tape, z);
    let mut total = tape.add(recon_nll, prior_term)?;
    total = tape.sub(total, lz)?;
    if cfg.lambda_y > 0.0 {
        let fic = fic.ok_or_else(|| Error::Missing("FIC anchor for lambda_y > 0".into()))?;
        let d = tape.sub(y, fic)?;
        let d2 = tape.square(d);
        let pen = tape.sum_cols(d2);
        let pen = tape.scale(pen, cfg.lambda_y);
        total = tape.add(total, pen)?;
    }
    Ok(ObjectiveRows { total, recon_nll })
}

/// Objective value and gradients for a single `(x, y, z)`.
pub fn map_objective(
    decoder: &dyn Retrodictor,
    prior: &dyn FuturePrior,
    x_obs: &[f64],
    y: &[f64],
    z: &[f64],
    fic: Option<&[f64]>,
    cfg: &MapConfig,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector");
    let mut tape = Tape::frozen();
    let xv = tape.constant(row(x_obs));
    let yv = tape.input(row(y));
    let zv = tape.input(row(z));
    let fv = fic.map(|f| tape.constant(row(f)));
    let obj = map_objective_rows(&mut tape, decoder, prior, xv, yv, zv, fv, cfg)?;
    let value = tape.scalar(obj.total);
    let g = tape.backward(obj.total)?;
    let grad = |v: Var, d: usize| g.wrt(v).map_or(vec![0.0; d], |a| a.iter().copied().collect());
    Ok((value, grad(yv, y.len()), grad(zv, z.len())))
}

struct Evaluated {
    total: Vec<f64>,
    recon_nll: Vec<f64>,
    grad: Option<Array2<f64>>,
}

fn evaluate(
    decoder: &dyn Retrodictor,
    prior: &dyn FuturePrior,
    x: &Array2<f64>,
    params: &Array2<f64>,
    fic: &Array2<f64>,
    cfg: &MapConfig,
    with_grad: bool,
) -> Result<Evaluated> {
    let m = decoder.horizon();
    let mut tape = Tape::frozen();
    let xv = tape.constant(x.clone());
    let pv = tape.input(params.clone());
    let yv = tape.slice_cols(pv, 0, m)?;
    let zv = tape.slice_cols(pv, m, params.ncols())?;
    let fv = (cfg.lambda_y > 0.0).then(|| tape.constant(fic.clone()));
    let obj = map_objective_rows(&mut tape, decoder, prior, xv, yv, zv, fv, cfg)?;
    let total = tape.value(obj.total).iter().copied().collect();
    let recon_nll = tape.value(obj.recon_nll).iter().copied().collect();
    let grad = if with_grad {
        let sum = tape.sum(obj.total);
        let g = tape.backward(sum)?;
        Some(g.wrt(pv).cloned().unwrap_or_else(|| Array2::zeros(params.dim())))
    } else {
        None
    };
    Ok(Evaluated { total, recon_nll, grad })
}

/// Runs `restarts` Adam descents per window. `keys[i]` identifies window `i`
/// (it selects the window's random stream); `fic` holds the forward-CVAE
/// predictions used for restart 0.
pub fn map_optimize(
    decoder: &dyn Retrodictor,
    prior: &dyn FuturePrior,
    x_obs: &Array2<f64>,
    fic: &Array2<f64>,
    keys: &[usize],
    cfg: &MapConfig,
) -> Result<Vec<ForecastResult>> {
    cfg.validate()?;
    let (n, m, l) = (decoder.past_len(), decoder.horizon(), decoder.latent());
    if x_obs.ncols() != n || fic.ncols() != m || fic.nrows() != x_obs.nrows() || keys.len() != x_obs.nrows() {
        return Err(Error::Shape("MAP inputs disagree on window count or widths".into()));
    }
    if prior.dim() != m {
        return Err(Error::Shape(format!("prior over {} dims, horizon {m}", prior.dim())));
    }
    let mut out = Vec::with_capacity(x_obs.nrows());
    for start in (0..x_obs.nrows()).step_by(WINDOW_CHUNK) {
        let end = (start + WINDOW_CHUNK).min(x_obs.nrows());
        let x = x_obs.slice(s![start..end, ..]).to_owned();
        let f = fic.slice(s![start..end, ..]).to_owned();
        out.extend(optimize_chunk(decoder, prior, &x, &f, &keys[start..end], cfg, (m, l))?);
    }
    Ok(out)
}

fn optimize_chunk(
    decoder: &dyn Retrodictor,
    prior: &dyn FuturePrior,
    x: &Array2<f64>,
    fic: &Array2<f64>,
    keys: &[usize],
    cfg: &MapConfig,
    (m, l): (usize, usize),
) -> Result<Vec<ForecastResult>> {
    let k = cfg.restarts;
    let w = x.nrows();
    let rows: Vec<usize> = (0..w).flat_map(|i| std::iter::repeat(i).take(k)).collect();
    let xr = x.select(Axis(0), &rows);
    let fr = fic.select(Axis(0), &rows);

    let mut params = Array2::zeros((w * k, m + l));
    for (i, &key) in keys.iter().enumerate() {
        let mut rng = Rng::stream(cfg.seed, streams::derive(streams::MAP, key as u64, 0));
        let samples = prior.sample(k, &mut rng)?;
        let latents = rng.normal_matrix(k, l);
        for r in 0..k {
            let mut row = params.row_mut(i * k + r);
            if r == 0 && cfg.use_fic {
                row.slice_mut(s![..m]).assign(&fic.row(i));
            } else {
                row.slice_mut(s![..m]).assign(&samples.row(r));
                row.slice_mut(s![m..]).assign(&latents.row(r));
            }
        }
    }

    let adam = AdamConfig::with_lr(cfg.lr);
    let mut state = AdamState::zeros(params.dim());
    let mut initial = None;
    for step in 0..cfg.steps {
        let ev = evaluate(decoder, prior, &xr, &params, &fr, cfg, true)?;
        check_finite(&ev.total, keys, k)?;
        if initial.is_none() {
            initial = Some(ev.total.clone());
        }
        let mut g = ev.grad.expect("gradient requested");
        for row in g.rows_mut() {
            clip_row_norm(row, cfg.clip_norm);
        }
        state.update(&mut params, &g, step as u64 + 1, &adam);
    }
    let last = evaluate(decoder, prior, &xr, &params, &fr, cfg, false)?;
    check_finite(&last.total, keys, k)?;
    let initial = initial.unwrap_or_else(|| last.total.clone());

    let mut results = Vec::with_capacity(w);
    for (i, &key) in keys.iter().enumerate() {
        let losses = &last.total[i * k..(i + 1) * k];
        let best = (0..k)
            .min_by(|&a, &b| losses[a].total_cmp(&losses[b]))
            .expect("restarts >= 1");
        let block = params.slice(s![i * k..(i + 1) * k, ..m]);
        let dispersion = block.std_axis(Axis(0), 0.0).mean().unwrap_or(0.0);
        let best_row = params.row(i * k + best);
        results.push(ForecastResult {
            window: key,
            y_hat: best_row.slice(s![..m]).to_vec(),
            z_hat: best_row.slice(s![m..]).to_vec(),
            map_loss_best: losses[best],
            map_losses_all: losses.to_vec(),
            map_losses_init: initial[i * k..(i + 1) * k].to_vec(),
            best_restart: best,
            retro_nll: last.recon_nll[i * k + best],
            dispersion,
            used_fic: cfg.use_fic,
        });
    }
    Ok(results)
}

fn check_finite(values: &[f64], keys: &[usize], k: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(p) => Err(Error::MapNonFinite {
            window: keys[p / k],
            restart: p % k,
        }),
        None => Ok(()),
    }
}

/// Stacks the `y_hat` rows of `results`.
pub fn predictions(results: &[ForecastResult]) -> Array2<f64> {
    let m = results.first().map_or(0, |r| r.y_hat.len());
    Array2::from_shape_fn((results.len(), m), |(i, j)| results[i].y_hat[j])
}
