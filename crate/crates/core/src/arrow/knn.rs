//! k-nearest-neighbour KL divergence (Perez-Cruz estimator) with exact
//! brute-force neighbour search.
//!
//! `D(P||Q) ~ d/N * sum_i ln(nu_k(i) / rho_k(i)) + ln(M / (N - 1))` where
//! `rho_k(i)` is the distance from `x_i` to its k-th neighbour among the
//! other `N - 1` samples of `P` and `nu_k(i)` its k-th neighbour among the
//! `M` samples of `Q`. Zero distances (exact duplicates) are replaced by the
//! smallest positive k-th-neighbour distance seen in the same estimate, or
//! [`ZERO_DISTANCE_FLOOR`] if there is none.
//!
//! For embeddings of one series, rows that share samples are strongly
//! coupled. [`knn_kl_excluding`] drops every candidate whose start time lies
//! within a given radius of the query row (a Theiler window) and replaces
//! the count term by the per-point mean of `ln(M_i / (N_i - 1))` over the
//! candidates actually searched.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

pub const ZERO_DISTANCE_FLOOR: f64 = 1e-12;

#[inline]
pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let (a, b) = (a.as_slice().expect("contiguous"), b.as_slice().expect("contiguous"));
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-th smallest value (1-based k) of `buf`, reordering it.
pub(crate) fn kth_smallest(buf: &mut [f64], k: usize) -> f64 {
    let (_, v, _) = buf.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    *v
}

/// Sum of `ln(nu/rho)` over pairs of squared distances, with the
/// zero-distance floor applied.
pub(crate) fn log_ratio_sum(pairs: &[(f64, f64)]) -> f64 {
    let floor_sq = pairs
        .iter()
        .flat_map(|(r, n)| [*r, *n])
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let floor_sq = if floor_sq.is_finite() {
        floor_sq
    } else {
        ZERO_DISTANCE_FLOOR * ZERO_DISTANCE_FLOOR
    };
    let fix = |d: f64| if d > 0.0 { d } else { floor_sq };
    pairs.iter().map(|(r, n)| 0.5 * (fix(*n).ln() - fix(*r).ln())).sum()
}

/// Raw (unclamped) estimate of `KL(P || Q)` from samples `x ~ P`, `y ~ Q`.
pub fn knn_kl(x: &Array2<f64>, y: &Array2<f64>, k: usize) -> Result<f64> {
    let tx: Vec<usize> = (0..x.nrows()).collect();
    let ty: Vec<usize> = (0..y.nrows()).collect();
    knn_kl_excluding(x, &tx, y, &ty, k, 0)
}

/// [`knn_kl`] where candidate `j` is skipped for query `i` when
/// `|t_i - t_j| < exclusion`. The query itself is always skipped.
pub fn knn_kl_excluding(
    x: &Array2<f64>,
    tx: &[usize],
    y: &Array2<f64>,
    ty: &[usize],
    k: usize,
    exclusion: usize,
) -> Result<f64> {
    let (n, d) = x.dim();
    let (m, dy) = y.dim();
    if d != dy {
        return Err(Error::Shape(format!("knn_kl dims {d} vs {dy}")));
    }
    if tx.len() != n || ty.len() != m {
        return Err(Error::Shape("knn_kl time stamps do not match the samples".into()));
    }
    let x = x.as_standard_layout();
    let y = y.as_standard_layout();
    let mut within = Vec::with_capacity(n);
    let mut across = Vec::with_capacity(m);
    let mut pairs = Vec::with_capacity(n);
    let mut offset = 0.0;
    for i in 0..n {
        let xi = x.row(i);
        within.clear();
        across.clear();
        for j in 0..n {
            if j != i && tx[i].abs_diff(tx[j]) >= exclusion {
                within.push(sq_dist(xi, x.row(j)));
            }
        }
        for j in 0..m {
            if tx[i].abs_diff(ty[j]) >= exclusion {
                across.push(sq_dist(xi, y.row(j)));
            }
        }
        if k == 0 || within.len() < k || across.len() < k {
            return Err(Error::InsufficientData(format!(
                "knn_kl needs at least k={k} candidates per class, sample {i} has {} and {}",
                within.len(),
                across.len()
            )));
        }
        offset += (across.len() as f64 / within.len() as f64).ln();
        pairs.push((kth_smallest(&mut within, k), kth_smallest(&mut across, k)));
    }
    Ok(d as f64 / n as f64 * log_ratio_sum(&pairs) + offset / n as f64)
}

/// Symmetrized divergence `0.5 KL(F||B) + 0.5 KL(B||F)` (raw).
pub fn j_divergence(f: &Array2<f64>, b: &Array2<f64>, k: usize) -> Result<f64> {
    Ok(0.5 * knn_kl(f, b, k)? + 0.5 * knn_kl(b, f, k)?)
}

/// [`j_divergence`] for row-aligned embeddings sharing the start times `t`.
pub fn j_divergence_excluding(f: &Array2<f64>, b: &Array2<f64>, t: &[usize], k: usize, exclusion: usize) -> Result<f64> {
    Ok(0.5 * knn_kl_excluding(f, t, b, t, k, exclusion)? + 0.5 * knn_kl_excluding(b, t, f, t, k, exclusion)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn identical_samples_report_zero() {
        let mut r = Rng::new(1);
        let x = r.normal_matrix(500, 2);
        let kl = knn_kl(&x, &x, 5).unwrap();
        assert!(kl <= 0.05, "raw estimate {kl}");
        assert_eq!(kl.max(0.0), if kl > 0.0 { kl } else { 0.0 });
        assert!(j_divergence(&x, &x, 5).unwrap().max(0.0) < 0.05);
    }

    #[test]
    fn duplicates_never_divide_by_zero() {
        let x = Array2::zeros((20, 3));
        let y = Array2::zeros((20, 3));
        let kl = knn_kl(&x, &y, 5).unwrap();
        assert!(kl.is_finite());
        assert!((kl - (20.0f64 / 19.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn excluding_own_partner_from_a_copy_gives_zero() {
        let mut r = Rng::new(2);
        let x = r.normal_matrix(200, 3);
        let t: Vec<usize> = (0..200).collect();
        let kl = knn_kl_excluding(&x, &t, &x, &t, 4, 1).unwrap();
        assert!(kl.abs() < 1e-12, "{kl}");
    }

    #[test]
    fn exclusion_zero_is_plain_estimator() {
        let mut r = Rng::new(3);
        let (x, y) = (r.normal_matrix(80, 2), r.normal_matrix(60, 2));
        let tx: Vec<usize> = (0..80).map(|i| 3 * i).collect();
        let ty: Vec<usize> = (0..60).collect();
        let a = knn_kl(&x, &y, 3).unwrap();
        let b = knn_kl_excluding(&x, &tx, &y, &ty, 3, 0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        let x = Array2::zeros((5, 1));
        assert!(knn_kl(&x, &x, 5).is_err());
        assert!(knn_kl(&Array2::zeros((6, 1)), &Array2::zeros((4, 1)), 5).is_err());
        assert!(knn_kl(&Array2::zeros((6, 1)), &Array2::zeros((6, 2)), 1).is_err());
    }
}
