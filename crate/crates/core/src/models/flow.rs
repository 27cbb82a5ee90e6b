//! RealNVP density over future windows.
//!
//! Layer `l` keeps coordinates with `(j + l)` even and transforms the rest by
//! `y * exp(s) + t`, with `s = 2 tanh(net_s)` and `t = net_t` fed the kept
//! coordinates. The data-to-base direction is the one built on the tape, so
//! `log p(y)` is differentiable in `y`.

use ndarray::Array2;

use super::train::{fit, model_stream, Objective, TrainData, TrainHistory};
use super::{Architecture, FuturePrior, TrainConfig};
use crate::diffcore::{std_normal_logpdf_rows, Activation, Mlp, NetworkSpec, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{streams, Rng};

pub(crate) const FLOW_ID: u64 = 4;

#[derive(Clone, Debug)]
struct Coupling {
    keep: Array2<f64>,
    change: Array2<f64>,
    scale: Mlp,
    shift: Mlp,
}

#[derive(Clone, Debug)]
pub struct FlowPrior {
    store: ParamStore,
    layers: Vec<Coupling>,
    dim: usize,
}

impl FlowPrior {
    /// Output layers start at zero, so a fresh flow is the identity map.
    pub fn new(dim: usize, arch: &Architecture, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParam("flow dimension must be positive".into()));
        }
        let mut rng = Rng::stream(seed, model_stream(streams::INIT, FLOW_ID));
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(arch.flow_layers);
        for l in 0..arch.flow_layers {
            let keep = Array2::from_shape_fn((1, dim), |(_, j)| if (j + l) % 2 == 0 { 1.0 } else { 0.0 });
            let change = keep.mapv(|k| 1.0 - k);
            let spec = NetworkSpec::mlp(dim, arch.flow_hidden, 2, dim, Activation::Tanh);
            let scale = Mlp::new(&mut store, &format!("c{l}.s"), spec.clone(), &mut rng)?;
            let shift = Mlp::new(&mut store, &format!("c{l}.t"), spec, &mut rng)?;
            scale.zero_output_layer(&mut store);
            shift.zero_output_layer(&mut store);
            layers.push(Coupling {
                keep,
                change,
                scale,
                shift,
            });
        }
        Ok(Self { store, layers, dim })
    }

    pub(crate) fn fit(&mut self, data: &TrainData, cfg: &TrainConfig) -> Result<TrainHistory> {
        fit(self, FLOW_ID, data, cfg)
    }

    fn coupling_st(&self, tape: &mut Tape, c: &Coupling, h: Var) -> Result<(Var, Var)> {
        let keep = tape.constant(c.keep.clone());
        let change = tape.constant(c.change.clone());
        let kept = tape.mul(h, keep)?;
        let raw = c.scale.forward(tape, &self.store, kept)?;
        let s = tape.tanh(raw);
        let s = tape.scale(s, 2.0);
        let s = tape.mul(s, change)?;
        let t = c.shift.forward(tape, &self.store, kept)?;
        let t = tape.mul(t, change)?;
        Ok((s, t))
    }

    /// Maps data to base space; returns `(u, log|det J|)` with the log-det
    /// per row, `N x 1`.
    pub fn forward_rows(&self, tape: &mut Tape, y: Var) -> Result<(Var, Var)> {
        let (n, d) = tape.shape(y);
        if d != self.dim {
            return Err(Error::Shape(format!("flow expects {} columns, got {d}", self.dim)));
        }
        let mut h = y;
        let mut log_det = tape.constant(Array2::zeros((n, 1)));
        for c in &self.layers {
            let (s, t) = self.coupling_st(tape, c, h)?;
            let es = tape.exp(s);
            let scaled = tape.mul(h, es)?;
            h = tape.add(scaled, t)?;
            let ld = tape.sum_cols(s);
            log_det = tape.add(log_det, ld)?;
        }
        Ok((h, log_det))
    }

    pub fn forward(&self, y: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let mut tape = Tape::frozen();
        let yv = tape.constant(y.clone());
        let (u, ld) = self.forward_rows(&mut tape, yv)?;
        Ok((tape.value(u).clone(), tape.value(ld).clone()))
    }

    /// Base to data space.
    pub fn inverse(&self, u: &Array2<f64>) -> Result<Array2<f64>> {
        if u.ncols() != self.dim {
            return Err(Error::Shape(format!("flow expects {} columns, got {}", self.dim, u.ncols())));
        }
        let mut h = u.clone();
        for c in self.layers.iter().rev() {
            let mut tape = Tape::frozen();
            let hv = tape.constant(h.clone());
            let (s, t) = self.coupling_st(&mut tape, c, hv)?;
            let s = tape.value(s);
            let t = tape.value(t);
            h = (&h - t) * &s.mapv(|v| (-v).exp());
        }
        Ok(h)
    }

    pub fn log_prob(&self, y: &Array2<f64>) -> Result<Vec<f64>> {
        let mut tape = Tape::frozen();
        let yv = tape.constant(y.clone());
        let lp = self.log_prob_rows(&mut tape, yv)?;
        Ok(tape.value(lp).iter().copied().collect())
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

impl FuturePrior for FlowPrior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_prob_rows(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        let (u, log_det) = self.forward_rows(tape, y)?;
        let base = std_normal_logpdf_rows(tape, u);
        tape.add(base, log_det)
    }

    fn sample(&self, n: usize, rng: &mut Rng) -> Result<Array2<f64>> {
        self.inverse(&rng.normal_matrix(n, self.dim))
    }
}

impl Objective for FlowPrior {
    const NAME: &'static str = "flow";

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn loss(&self, tape: &mut Tape, _x: &Array2<f64>, y: &Array2<f64>, _rng: &mut Rng) -> Result<Var> {
        let yv = tape.constant(y.clone());
        let lp = self.log_prob_rows(tape, yv)?;
        let nll = tape.neg(lp);
        Ok(tape.mean(nll))
    }
}
