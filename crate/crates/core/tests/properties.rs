use ndarray::Array2;
use proptest::prelude::*;

use retroforecast::arrow::knn_kl;
use retroforecast::arrow::{block_permutation_test, ArrowConfig, Representation};
use retroforecast::eval::{dm_test, rmse, window_mse};
use retroforecast::Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-10.0f64..10.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #[test]
    fn dm_is_antisymmetric(
        a in prop::collection::vec(0.0f64..5.0, 12..60),
        noise in prop::collection::vec(-1.0f64..1.0, 60),
        h in 1usize..6,
    ) {
        let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| (x + e).abs()).collect();
        let ab = dm_test(&a, &b, h).unwrap();
        let ba = dm_test(&b, &a, h).unwrap();
        prop_assert!((ab.stat + ba.stat).abs() <= 1e-9 * ab.stat.abs().max(1.0));
        prop_assert!((ab.p - ba.p).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p));
    }

    #[test]
    fn rmse_decomposes_over_horizons_and_windows(
        (p, t) in (1usize..20, 1usize..8).prop_flat_map(|(r, c)| (matrix(r, c), matrix(r, c)))
    ) {
        let (global, per_h) = rmse(&p, &t).unwrap();
        let mean_sq_h = per_h.iter().map(|v| v * v).sum::<f64>() / per_h.len() as f64;
        prop_assert!((global * global - mean_sq_h).abs() <= 1e-9 * mean_sq_h.max(1.0));
        let w = window_mse(&p, &t).unwrap();
        let mean_w = w.iter().sum::<f64>() / w.len() as f64;
        prop_assert!((global * global - mean_w).abs() <= 1e-9 * mean_w.max(1.0));
    }
}

#[test]
fn knn_kl_recovers_unit_shift() {
    // KL(N(0,1) || N(1,1)) = 1/2.
    let n = 5000;
    for rep in 0..20 {
        let mut rng = Rng::new(1000 + rep);
        let x = rng.normal_matrix(n, 1);
        let y = rng.normal_matrix(n, 1).mapv(|v| v + 1.0);
        let kl = knn_kl(&x, &y, 5).unwrap();
        assert!((kl - 0.5).abs() < 0.08, "replicate {rep}: {kl}");
    }
}

fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    let mut v = Vec::with_capacity(n);
    let mut s = rng.normal() / (1.0 - phi * phi).sqrt();
    for _ in 0..n {
        s = phi * s + rng.normal();
        v.push(s);
    }
    v
}

#[test]
fn permutation_test_is_calibrated_under_reversibility() {
    // Gaussian AR(1) is time-reversible, so the null holds exactly.
    let runs = 200;
    let mut rejections = 0;
    for r in 0..runs {
        let series = ar1(300, 0.6, 5000 + r);
        let cfg = ArrowConfig {
            n_perm: 99,
            seed: r,
            ..ArrowConfig::default()
        };
        let res = block_permutation_test(&series, 2, Representation::Level, &cfg).unwrap();
        rejections += usize::from(res.significant);
    }
    let rate = rejections as f64 / runs as f64;
    assert!((0.01..=0.10).contains(&rate), "rejection rate {rate}");
}
