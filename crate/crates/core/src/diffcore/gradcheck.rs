//! Central finite-difference oracle for tape gradients.

use ndarray::Array2;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Denominator floor for the relative error, so entries whose true
/// gradient is ~0 are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error between tape gradients of the scalar built by `f`
/// and central differences, over every parameter entry in `store` (or every
/// `stride`-th entry of large tensors).
pub fn check_params<F>(store: &ParamStore, f: F, h: f64, stride: usize) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut analytic = store.clone();
    analytic.zero_grad();
    let mut tape = Tape::new();
    let out = f(&analytic, &mut tape)?;
    tape.backward(out)?.accumulate_into(&mut analytic)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let o = f(s, &mut t)?;
        Ok(t.scalar(o))
    };

    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for p in store.params() {
        let id = store.id(&p.name).expect("own parameter");
        let n = p.value.len();
        let step = if n > 64 { stride.max(1) } else { 1 };
        for flat in (0..n).step_by(step) {
            let (r, c) = (flat / p.value.ncols(), flat % p.value.ncols());
            let base = p.value[[r, c]];
            let mut v = p.value.clone();
            v[[r, c]] = base + h;
            probe.set_value(id, v.clone());
            let fp = eval(&probe)?;
            v[[r, c]] = base - h;
            probe.set_value(id, v.clone());
            let fm = eval(&probe)?;
            v[[r, c]] = base;
            probe.set_value(id, v);
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(rel_err(analytic.grad(id)[[r, c]], numeric));
        }
    }
    Ok(worst)
}

/// Same as [`check_params`] but differentiating with respect to input leaves.
/// Parameters read inside `f` are treated as constants.
pub fn check_inputs<F>(inputs: &[Array2<f64>], f: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::frozen();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.input(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let eval = |xs: &[Array2<f64>]| -> Result<f64> {
        let mut t = Tape::frozen();
        let vs: Vec<Var> = xs.iter().map(|x| t.input(x.clone())).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.scalar(o))
    };

    let mut probe: Vec<Array2<f64>> = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let zero = Array2::zeros(x.dim());
        let g = grads.wrt(vars[k]).unwrap_or(&zero);
        for ((r, c), &base) in x.indexed_iter() {
            probe[k][[r, c]] = base + h;
            let fp = eval(&probe)?;
            probe[k][[r, c]] = base - h;
            let fm = eval(&probe)?;
            probe[k][[r, c]] = base;
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(rel_err(g[[r, c]], numeric));
        }
    }
    Ok(worst)
}
