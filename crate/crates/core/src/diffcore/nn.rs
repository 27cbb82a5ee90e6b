use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Lower/upper clamp applied to every Gaussian log-std head.
pub const LOG_STD_MIN: f64 = -7.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

/// Fully connected network: `widths[0]` inputs, hidden layers with
/// `activation`, identity output layer of width `widths.last()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Self {
        Self { widths, activation }
    }

    /// `input -> hidden x depth -> output`.
    pub fn mlp(input: usize, hidden: usize, depth: usize, output: usize, activation: Activation) -> Self {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat(hidden).take(depth));
        widths.push(output);
        Self { widths, activation }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParam(format!("bad network widths {:?}", self.widths)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    spec: NetworkSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers `<prefix>.w{i}` / `<prefix>.b{i}` in `store`.
    pub fn new(store: &mut ParamStore, prefix: &str, spec: NetworkSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let wid = store.add_glorot(format!("{prefix}.w{i}"), w[0], w[1], rng);
                let bid = store.add(format!("{prefix}.b{i}"), Array2::zeros((1, w[1])));
                (wid, bid)
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Zeroes the output layer so the network initially emits zeros.
    pub fn zero_output_layer(&self, store: &mut ParamStore) {
        let (w, b) = *self.layers.last().expect("at least one layer");
        let wz = Array2::zeros(store.value(w).dim());
        let bz = Array2::zeros(store.value(b).dim());
        store.set_value(w, wz);
        store.set_value(b, bz);
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|(w, b)| [*w, *b])
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        let (_, c) = tape.shape(input);
        if c != self.spec.input_width() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {c}",
                self.spec.input_width()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = input;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, *w);
            let bv = tape.param(store, *b);
            let z = tape.matmul(h, wv)?;
            h = tape.add(z, bv)?;
            if i < last {
                h = match self.spec.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                    Activation::Identity => h,
                };
            }
        }
        Ok(h)
    }
}

/// Splits a `2d`-wide head into `(mean, clamped log_std)`.
pub fn gaussian_head(tape: &mut Tape, out: Var, d: usize) -> Result<(Var, Var)> {
    let mean = tape.slice_cols(out, 0, d)?;
    let raw = tape.slice_cols(out, d, 2 * d)?;
    let log_std = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
    Ok((mean, log_std))
}

/// Per-row diagonal Gaussian log-density, `N x 1`.
pub fn gaussian_logpdf_rows(tape: &mut Tape, x: Var, mean: Var, log_std: Var) -> Result<Var> {
    let (_, d) = tape.shape(x);
    let diff = tape.sub(x, mean)?;
    let neg = tape.neg(log_std);
    let inv_std = tape.exp(neg);
    let zs = tape.mul(diff, inv_std)?;
    let sq = tape.square(zs);
    let half = tape.scale(sq, -0.5);
    let terms = tape.sub(half, log_std)?;
    let rows = tape.sum_cols(terms);
    Ok(tape.add_scalar(rows, -(d as f64) * HALF_LN_2PI))
}

/// Per-row standard-normal log-density, `N x 1`.
pub fn std_normal_logpdf_rows(tape: &mut Tape, x: Var) -> Var {
    let (_, d) = tape.shape(x);
    let sq = tape.square(x);
    let rows = tape.sum_cols(sq);
    let half = tape.scale(rows, -0.5);
    tape.add_scalar(half, -(d as f64) * HALF_LN_2PI)
}

/// Closed-form `KL(N(mq, sq) || N(mp, sp))` per row, `N x 1`, given log-stds.
pub fn gaussian_kl_rows(tape: &mut Tape, mq: Var, lq: Var, mp: Var, lp: Var) -> Result<Var> {
    // lp - lq + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2
    let dl = tape.sub(lp, lq)?;
    let two_lq = tape.scale(lq, 2.0);
    let var_q = tape.exp(two_lq);
    let dm = tape.sub(mq, mp)?;
    let dm2 = tape.square(dm);
    let num = tape.add(var_q, dm2)?;
    let m2lp = tape.scale(lp, -2.0);
    let inv_var_p = tape.exp(m2lp);
    let ratio = tape.mul(num, inv_var_p)?;
    let half = tape.scale(ratio, 0.5);
    let t = tape.add(dl, half)?;
    let t = tape.add_scalar(t, -0.5);
    Ok(tape.sum_cols(t))
}

/// Plain diagonal Gaussian log-density of one vector.
pub fn gaussian_logpdf(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    assert!(x.len() == mean.len() && x.len() == log_std.len());
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((x, m), l)| {
            let z = (x - m) * (-l).exp();
            -HALF_LN_2PI - l - 0.5 * z * z
        })
        .sum()
}
