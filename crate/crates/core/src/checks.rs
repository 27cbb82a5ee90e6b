//! Numerical self-checks of the library, each returning the measured error
//! so callers decide the tolerance. Used by the acceptance harness.

use ndarray::Array2;

use crate::arrow::{block_permutation_test, knn_kl, ArrowConfig, Representation};
use crate::diffcore::gradcheck::{check_inputs, check_params};
use crate::diffcore::{gaussian_logpdf_rows, ParamStore, Tape, Var};
use crate::error::Result;
use crate::mapinfer::{map_objective_rows, map_optimize, MapConfig, Retrodictor};
use crate::models::train::Objective;
use crate::models::{Architecture, DecoderScale, FlowPrior, ForwardCvae, ForwardMlp, FuturePrior, InverseCvae, StandardNormal};
use crate::rng::Rng;

const STEP: f64 = 1e-6;

fn small_arch(decoder_scale: DecoderScale) -> Architecture {
    Architecture {
        hidden: 6,
        depth: 2,
        latent: 2,
        cvae_samples: 3,
        flow_layers: 3,
        flow_hidden: 5,
        decoder_scale,
    }
}

/// Adds Gaussian noise to every parameter so zero-initialized layers and
/// zero biases do not hide terms (or sit on ReLU kinks).
fn jitter(store: &mut ParamStore, scale: f64, rng: &mut Rng) {
    let ids: Vec<_> = store.params().iter().map(|p| store.id(&p.name).expect("own name")).collect();
    for id in ids {
        let (r, c) = store.value(id).dim();
        let v = store.value(id) + &(rng.normal_matrix(r, c) * scale);
        store.set_value(id, v);
    }
}

fn loss_error<M: Objective + Clone>(model: &M, x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    check_params(
        model.store(),
        |s, tape| {
            let mut m = model.clone();
            *m.store_mut() = s.clone();
            m.loss(tape, x, y, &mut Rng::new(1))
        },
        STEP,
        1,
    )
}

/// Largest relative error between tape and finite-difference gradients of
/// each training loss (wrt parameters) and of the MAP objective (wrt `y`
/// and `z`), on small random networks.
pub fn gradient_errors(seed: u64) -> Result<Vec<(String, f64)>> {
    let mut rng = Rng::new(seed);
    let (p, h) = (5, 4);
    let x = rng.normal_matrix(4, p);
    let y = rng.normal_matrix(4, h);
    let arch = small_arch(DecoderScale::default());
    let mut out = Vec::new();

    let mut mlp = ForwardMlp::new(p, h, &arch, seed)?;
    jitter(mlp.store_mut(), 0.1, &mut rng);
    out.push(("mlp".to_string(), loss_error(&mlp, &x, &y)?));

    let mut cvae = ForwardCvae::new(p, h, &arch, seed)?;
    jitter(cvae.store_mut(), 0.1, &mut rng);
    out.push(("cvae".to_string(), loss_error(&cvae, &x, &y)?));

    for scale in [DecoderScale::Global, DecoderScale::PerTimestep, DecoderScale::Heteroscedastic] {
        let mut inv = InverseCvae::new(p, h, &small_arch(scale), seed)?;
        jitter(inv.store_mut(), 0.1, &mut rng);
        out.push((format!("inverse ({scale:?})"), loss_error(&inv, &x, &y)?));
    }

    let mut flow = FlowPrior::new(h, &arch, seed)?;
    jitter(flow.store_mut(), 0.3, &mut rng);
    out.push(("flow".to_string(), loss_error(&flow, &x, &y)?));

    let mut inv = InverseCvae::new(p, h, &arch, seed)?;
    jitter(inv.store_mut(), 0.1, &mut rng);
    let fic = rng.normal_matrix(4, h);
    let cfg = MapConfig {
        lambda_y: 0.5,
        ..MapConfig::default()
    };
    let map = check_inputs(
        &[y.clone(), rng.normal_matrix(4, arch.latent)],
        |tape, v| {
            let xv = tape.constant(x.clone());
            let fv = tape.constant(fic.clone());
            let o = map_objective_rows(tape, &inv, &flow, xv, v[0], v[1], Some(fv), &cfg)?;
            Ok(tape.sum(o.total))
        },
        STEP,
    )?;
    out.push(("map objective (y, z)".to_string(), map));
    Ok(out)
}

/// `(round-trip error, log-det error)` of a random flow over `dim`
/// coordinates: max |inverse(forward(y)) - y| and max |log|det J| - numeric|
/// with the Jacobian from central differences.
pub fn flow_invertibility(dim: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = Rng::new(seed);
    let mut flow = FlowPrior::new(dim, &small_arch(DecoderScale::default()), seed)?;
    jitter(flow.store_mut(), 0.5, &mut rng);
    let y = rng.normal_matrix(16, dim);
    let (u, log_det) = flow.forward(&y)?;
    let back = flow.inverse(&u)?;
    let round_trip = (&back - &y).iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let mut det_err = 0.0f64;
    for i in 0..y.nrows() {
        let mut jac = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        for j in 0..dim {
            let mut plus = y.row(i).to_owned().insert_axis(ndarray::Axis(0));
            let mut minus = plus.clone();
            plus[[0, j]] += STEP;
            minus[[0, j]] -= STEP;
            let (up, _) = flow.forward(&plus)?;
            let (um, _) = flow.forward(&minus)?;
            for k in 0..dim {
                jac[(k, j)] = (up[[0, k]] - um[[0, k]]) / (2.0 * STEP);
            }
        }
        det_err = det_err.max((jac.determinant().abs().ln() - log_det[[i, 0]]).abs());
    }
    Ok((round_trip, det_err))
}

/// kNN estimates of `KL(N(0,1) || N(1,1)) = 1/2`, one per replicate.
pub fn knn_kl_unit_shift(n: usize, replicates: usize, seed: u64) -> Result<Vec<f64>> {
    (0..replicates as u64)
        .map(|r| {
            let mut rng = Rng::new(seed.wrapping_add(r));
            let x = rng.normal_matrix(n, 1);
            let y = rng.normal_matrix(n, 1).mapv(|v| v + 1.0);
            knn_kl(&x, &y, 5)
        })
        .collect()
}

/// Rejection rate of the block permutation test on time-reversible Gaussian
/// AR(1) series (coefficient 0.6, length 300, w = 2, 99 permutations).
pub fn permutation_rejection_rate(runs: usize, seed: u64) -> Result<f64> {
    let mut rejections = 0;
    for r in 0..runs as u64 {
        let mut rng = Rng::new(seed.wrapping_add(r));
        let mut s = rng.normal() / 0.8;
        let series: Vec<f64> = (0..300)
            .map(|_| {
                s = 0.6 * s + rng.normal();
                s
            })
            .collect();
        let cfg = ArrowConfig {
            n_perm: 99,
            seed: seed.wrapping_add(r),
            ..ArrowConfig::default()
        };
        rejections += usize::from(block_permutation_test(&series, 2, Representation::Level, &cfg)?.significant);
    }
    Ok(rejections as f64 / runs as f64)
}

/// Linear-Gaussian retrodictor `x = y A + z B + N(0, sigma^2 I)`.
pub struct LinearGaussian {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub log_sigma: f64,
}

impl Retrodictor for LinearGaussian {
    fn past_len(&self) -> usize {
        self.a.ncols()
    }

    fn horizon(&self) -> usize {
        self.a.nrows()
    }

    fn latent(&self) -> usize {
        self.b.nrows()
    }

    fn recon_logpdf_rows(&self, tape: &mut Tape, x: Var, y: Var, z: Var) -> Result<Var> {
        let a = tape.constant(self.a.clone());
        let b = tape.constant(self.b.clone());
        let ya = tape.matmul(y, a)?;
        let zb = tape.matmul(z, b)?;
        let mean = tape.add(ya, zb)?;
        let ls = tape.constant(Array2::from_elem((1, self.past_len()), self.log_sigma));
        gaussian_logpdf_rows(tape, x, mean, ls)
    }
}

/// Max |MAP estimate - closed-form posterior mode| over `(y, z)` for a
/// random linear-Gaussian model under a standard-normal future prior.
pub fn linear_gaussian_map_error(seed: u64) -> Result<f64> {
    let (m, l, n) = (3, 2, 5);
    let mut rng = Rng::new(seed);
    let model = LinearGaussian {
        a: rng.normal_matrix(m, n),
        b: rng.normal_matrix(l, n),
        log_sigma: -0.5,
    };
    let x = rng.normal_matrix(4, n);
    let cfg = MapConfig {
        restarts: 2,
        steps: 4000,
        lr: 0.01,
        clip_norm: 1e6,
        lambda_prior: 1.5,
        seed,
        ..MapConfig::default()
    };
    let prior = StandardNormal { dim: m };
    let keys: Vec<usize> = (0..x.nrows()).collect();
    let found = map_optimize(&model, &prior, &x, &Array2::zeros((x.nrows(), m)), &keys, &cfg)?;

    // Minimize |x - M p|^2 / (2 s^2) + p' D p / 2 with M = [A; B]', D = diag(lambda, 1).
    let s2 = (2.0 * model.log_sigma).exp();
    let mm = nalgebra::DMatrix::from_fn(n, m + l, |i, j| if j < m { model.a[[j, i]] } else { model.b[[j - m, i]] });
    let d = nalgebra::DMatrix::from_fn(m + l, m + l, |i, j| match (i == j, i < m) {
        (false, _) => 0.0,
        (true, true) => cfg.lambda_prior,
        (true, false) => 1.0,
    });
    let lhs = (mm.transpose() * &mm / s2 + d).lu();
    let mut worst = 0.0f64;
    for (i, f) in found.iter().enumerate() {
        let xi = nalgebra::DVector::from_iterator(n, x.row(i).iter().copied());
        let mode = lhs.solve(&(mm.transpose() * xi / s2)).expect("positive definite");
        for (j, v) in f.y_hat.iter().chain(&f.z_hat).enumerate() {
            worst = worst.max((v - mode[j]).abs());
        }
    }
    Ok(worst)
}

/// Log-density of a fresh (identity) flow at the origin; equals
/// `-dim * ln(2 pi) / 2`.
pub fn identity_flow_log_prob(dim: usize) -> Result<f64> {
    let flow = FlowPrior::new(dim, &small_arch(DecoderScale::default()), 0)?;
    let mut tape = Tape::frozen();
    let y = tape.constant(Array2::zeros((1, dim)));
    let lp = flow.log_prob_rows(&mut tape, y)?;
    Ok(tape.scalar(lp))
}
