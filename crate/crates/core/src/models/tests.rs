use ndarray::{Array1, Array2};

use super::train::Objective;
use super::*;
use crate::diffcore::gradcheck::{check_inputs, check_params};
use crate::diffcore::{gaussian_kl_rows, ParamStore, Tape};
use crate::ingest::{build_dataset, WindowConfig};
use crate::procgen::Case;
use crate::rng::Rng;

const TOL: f64 = 1e-5;

fn small_arch() -> Architecture {
    Architecture {
        hidden: 6,
        depth: 2,
        latent: 2,
        cvae_samples: 3,
        flow_layers: 3,
        flow_hidden: 5,
        decoder_scale: DecoderScale::default(),
    }
}

fn data(n: usize, p: usize, h: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = Rng::new(seed);
    (rng.normal_matrix(n, p), rng.normal_matrix(n, h))
}

/// Jitters every parameter: zero biases can put ReLU inputs exactly on the
/// kink, and zero-initialized flow outputs would hide the coupling nets.
fn jitter(store: &mut ParamStore, scale: f64, seed: u64) {
    let mut rng = Rng::new(seed);
    let ids: Vec<_> = store.params().iter().map(|p| store.id(&p.name).unwrap()).collect();
    for id in ids {
        let (r, c) = store.value(id).dim();
        let v = store.value(id) + &(rng.normal_matrix(r, c) * scale);
        store.set_value(id, v);
    }
}

fn grad_err<M: Objective + Clone>(model: &M, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    check_params(
        model.store(),
        |s, tape| {
            let mut m = model.clone();
            *m.store_mut() = s.clone();
            m.loss(tape, x, y, &mut Rng::new(11))
        },
        1e-6,
        1,
    )
    .unwrap()
}

#[test]
fn mlp_loss_gradients() {
    let (x, y) = data(5, 4, 3, 1);
    let mut m = ForwardMlp::new(4, 3, &small_arch(), 2).unwrap();
    jitter(m.store_mut(), 0.1, 32);
    let e = grad_err(&m, &x, &y);
    assert!(e < TOL, "{e}");
}

#[test]
fn cvae_loss_gradients() {
    let (x, y) = data(5, 4, 3, 3);
    let mut m = ForwardCvae::new(4, 3, &small_arch(), 4).unwrap();
    jitter(m.store_mut(), 0.1, 30);
    let e = grad_err(&m, &x, &y);
    assert!(e < TOL, "{e}");
}

#[test]
fn inverse_loss_gradients_every_scale() {
    let (x, y) = data(5, 4, 3, 5);
    for scale in [DecoderScale::Global, DecoderScale::PerTimestep, DecoderScale::Heteroscedastic] {
        let arch = Architecture {
            decoder_scale: scale,
            ..small_arch()
        };
        let mut m = InverseCvae::new(4, 3, &arch, 6).unwrap();
        jitter(m.store_mut(), 0.1, 7);
        assert!(grad_err(&m, &x, &y) < TOL, "{scale:?}");
    }
}

#[test]
fn flow_loss_gradients() {
    let (x, y) = data(5, 4, 4, 8);
    let mut f = FlowPrior::new(4, &small_arch(), 9).unwrap();
    jitter(f.store_mut(), 0.3, 10);
    assert!(grad_err(&f, &x, &y) < TOL);
}

#[test]
fn flow_log_prob_gradient_in_y() {
    let mut f = FlowPrior::new(4, &small_arch(), 12).unwrap();
    jitter(f.store_mut(), 0.3, 13);
    let (_, y) = data(3, 1, 4, 14);
    let err = check_inputs(
        &[y],
        |tape, v| {
            let lp = f.log_prob_rows(tape, v[0])?;
            Ok(tape.sum(lp))
        },
        1e-6,
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

#[test]
fn flow_round_trip() {
    let mut f = FlowPrior::new(4, &small_arch(), 15).unwrap();
    jitter(f.store_mut(), 0.5, 16);
    let (_, y) = data(20, 1, 4, 17);
    let (u, _) = f.forward(&y).unwrap();
    let back = f.inverse(&u).unwrap();
    let err = (&back - &y).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn flow_log_det_matches_numeric_jacobian() {
    let mut f = FlowPrior::new(4, &small_arch(), 18).unwrap();
    jitter(f.store_mut(), 0.5, 19);
    let (_, y) = data(3, 1, 4, 20);
    let (_, ld) = f.forward(&y).unwrap();
    let h = 1e-6;
    for i in 0..y.nrows() {
        let mut jac = nalgebra::DMatrix::<f64>::zeros(4, 4);
        for j in 0..4 {
            let mut yp = y.row(i).to_owned().insert_axis(ndarray::Axis(0));
            let mut ym = yp.clone();
            yp[[0, j]] += h;
            ym[[0, j]] -= h;
            let (up, _) = f.forward(&yp).unwrap();
            let (um, _) = f.forward(&ym).unwrap();
            for k in 0..4 {
                jac[(k, j)] = (up[[0, k]] - um[[0, k]]) / (2.0 * h);
            }
        }
        let numeric = jac.determinant().abs().ln();
        assert!((numeric - ld[[i, 0]]).abs() < 1e-4, "{numeric} vs {}", ld[[i, 0]]);
    }
}

#[test]
fn fresh_flow_is_standard_normal() {
    let f = FlowPrior::new(4, &small_arch(), 21).unwrap();
    let lp = f.log_prob(&Array2::zeros((2, 4))).unwrap();
    for v in lp {
        assert!((v + 4.0 * 0.918_938_533_204_672_7).abs() < 1e-12);
    }
}

#[test]
fn gaussian_kl_matches_monte_carlo() {
    let (mq, lq, mp, lp) = ([0.3, -1.0], [-0.2, 0.4], [0.0, 0.5], [0.1, -0.3]);
    let row = |v: [f64; 2]| Array2::from_shape_vec((1, 2), v.to_vec()).unwrap();
    let mut tape = Tape::new();
    let vars: Vec<_> = [mq, lq, mp, lp].iter().map(|&v| tape.constant(row(v))).collect();
    let kl = gaussian_kl_rows(&mut tape, vars[0], vars[1], vars[2], vars[3]).unwrap();
    let closed = tape.scalar(kl);

    let logpdf = |x: f64, m: f64, l: f64| -0.5 * ((x - m) / l.exp()).powi(2) - l - 0.918_938_533_204_672_7;
    let mut rng = Rng::new(22);
    let n = 200_000;
    let mut mc = 0.0;
    for _ in 0..n {
        for d in 0..2 {
            let x = mq[d] + lq[d].exp() * rng.normal();
            mc += logpdf(x, mq[d], lq[d]) - logpdf(x, mp[d], lp[d]);
        }
    }
    mc /= n as f64;
    assert!((closed - mc).abs() < 0.01, "{closed} vs {mc}");
}

#[test]
fn naive_mean_predicts_column_means() {
    let y = ndarray::array![[1.0, 2.0], [3.0, 6.0]];
    let m = NaiveMean::fit(&y).unwrap();
    assert_eq!(m.predict(3).row(2), Array1::from(vec![2.0, 4.0]));
    assert!(NaiveMean::fit(&Array2::zeros((0, 2))).is_err());
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        arch: small_arch(),
        ..TrainConfig::default()
    }
}

fn tiny_dataset() -> crate::ingest::WindowedDataset {
    let s = Case::D.generate(600, 1).unwrap();
    build_dataset(
        &s,
        WindowConfig {
            past_len: 8,
            horizon: 4,
            stride: 1,
        },
    )
    .unwrap()
}

#[test]
fn training_is_deterministic() {
    let ds = tiny_dataset();
    let cfg = tiny_config();
    let (a, ha) = train_inverse_cvae(&ds, &cfg).unwrap();
    let (b, hb) = train_inverse_cvae(&ds, &cfg).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a.store().snapshot(), b.store().snapshot());
    let (c, _) = train_inverse_cvae(&ds, &TrainConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a.store().snapshot(), c.store().snapshot());
}

#[test]
fn training_reduces_loss() {
    let ds = tiny_dataset();
    let cfg = TrainConfig { epochs: 6, ..tiny_config() };
    let (_, h) = train_forward_mlp(&ds, &cfg).unwrap();
    assert!(h.val_loss[h.best_epoch] < h.val_loss[0] || h.best_epoch == 0);
    assert!(h.train_loss.last().unwrap() < &h.train_loss[0]);
}

#[test]
fn bundle_round_trips() {
    let ds = tiny_dataset();
    let b = ModelBundle::train(&ds, &tiny_config(), &Method::ALL).unwrap();
    let dir = std::env::temp_dir().join(format!("rf-bundle-{}", std::process::id()));
    b.save(&dir).unwrap();
    let l = ModelBundle::load(&dir).unwrap();
    let x = ds.x.slice(ndarray::s![..5, ..]).to_owned();
    assert_eq!(b.mlp().unwrap().predict(&x).unwrap(), l.mlp().unwrap().predict(&x).unwrap());
    let keys = [0, 1, 2, 3, 4];
    assert_eq!(
        b.cvae().unwrap().predict_keyed(&x, &keys, 1).unwrap(),
        l.cvae().unwrap().predict_keyed(&x, &keys, 1).unwrap()
    );
    assert_eq!(b.flow().unwrap().store().snapshot(), l.flow().unwrap().store().snapshot());
    assert_eq!(b.inverse().unwrap().store().snapshot(), l.inverse().unwrap().store().snapshot());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn bundle_reports_missing_models() {
    let ds = tiny_dataset();
    let b = ModelBundle::train(&ds, &tiny_config(), &[Method::Naive]).unwrap();
    assert!(b.naive().is_ok());
    assert!(b.mlp().is_err());
    assert!(b.flow().is_err());
}

#[test]
fn cvae_prediction_is_keyed() {
    let ds = tiny_dataset();
    let (m, _) = train_forward_cvae(&ds, &tiny_config()).unwrap();
    let x = ds.x.slice(ndarray::s![..6, ..]).to_owned();
    let all = m.predict_keyed(&x, &[10, 11, 12, 13, 14, 15], 5).unwrap();
    let part = m.predict_keyed(&x.slice(ndarray::s![2..4, ..]).to_owned(), &[12, 13], 5).unwrap();
    assert_eq!(all.slice(ndarray::s![2..4, ..]), part);
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
    }
    assert_eq!(Method::parse_list("all").unwrap(), Method::ALL.to_vec());
    assert_eq!(Method::parse_list("mlp,inv-flow").unwrap(), vec![Method::Mlp, Method::InvFlow]);
    assert!(Method::parse_list("mlp,bogus").is_err());
}


