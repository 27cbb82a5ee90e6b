//! Permutation-invariant neighbour cache.
//!
//! Swapping a forward row with its reversed partner never changes the pooled
//! point set `F u B`, only the class labels. Each point's nearest neighbours
//! in the pool are therefore computed once; every replicate then walks these
//! sorted lists until it has seen `k` same-class and `k` other-class points.
//! A point whose cached list runs out falls back to an exact scan.
//!
//! Candidates whose row start time is within `exclusion` of the query's are
//! never neighbours. Every excluded row removes one point from each class
//! (its forward and reversed copies always sit in opposite classes), so the
//! count term of the estimator does not depend on the labelling.

use ndarray::Array2;

use super::knn::{kth_smallest, log_ratio_sum, sq_dist};
use crate::error::{Error, Result};

pub struct PooledNeighbors {
    points: Array2<f64>,
    times: Vec<usize>,
    exclusion: usize,
    pairs: usize,
    k: usize,
    lists: Vec<Vec<(f64, u32)>>,
    /// `ln(#other / #same)` candidates per pair; identical for both copies.
    log_counts: Vec<f64>,
}

impl PooledNeighbors {
    /// `times[i]` is the start time of row `i`; `exclusion = 0` disables the
    /// Theiler window.
    pub fn new(
        forward: &Array2<f64>,
        backward: &Array2<f64>,
        times: &[usize],
        k: usize,
        exclusion: usize,
    ) -> Result<Self> {
        let (n, d) = forward.dim();
        if backward.dim() != (n, d) || times.len() != n {
            return Err(Error::Shape("forward/backward embeddings or times differ in shape".into()));
        }
        let excluded: Vec<usize> = (0..n)
            .map(|i| times.iter().filter(|&&t| t.abs_diff(times[i]) < exclusion).count())
            .collect();
        // Same class: n - 1 others minus the excluded rows other than the
        // query's own; other class: n minus every excluded row.
        let counts: Vec<(usize, usize)> = excluded
            .iter()
            .map(|&e| (n - 1 - e.saturating_sub(1), n - e))
            .collect();
        if k == 0 || counts.iter().any(|&(same, other)| same < k || other < k) {
            return Err(Error::InsufficientData(format!(
                "need at least k={k} admissible neighbours per class among {n} embeddings"
            )));
        }
        let log_counts = counts.iter().map(|&(same, other)| (other as f64 / same as f64).ln()).collect();
        let mut points = Array2::zeros((2 * n, d));
        points.slice_mut(ndarray::s![..n, ..]).assign(forward);
        points.slice_mut(ndarray::s![n.., ..]).assign(backward);
        let total = 2 * n;
        let keep = (8 * k).max(64).min(total - 1);
        let mut buf: Vec<(f64, u32)> = Vec::with_capacity(total);
        let mut lists = Vec::with_capacity(total);
        for p in 0..total {
            buf.clear();
            let pr = points.row(p);
            for q in 0..total {
                if q != p && times[p % n].abs_diff(times[q % n]) >= exclusion {
                    buf.push((sq_dist(pr, points.row(q)), q as u32));
                }
            }
            if keep < buf.len() {
                buf.select_nth_unstable_by(keep, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                buf.truncate(keep);
            }
            buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            lists.push(buf.clone());
        }
        Ok(Self {
            points,
            times: times.to_vec(),
            exclusion,
            pairs: n,
            k,
            lists,
            log_counts,
        })
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    fn in_forward_class(&self, p: usize, swapped: &[bool]) -> bool {
        let base = p < self.pairs;
        let pair = if base { p } else { p - self.pairs };
        base != swapped[pair]
    }

    /// `(rho_k^2, nu_k^2)` for point `p` under the given labelling.
    fn kth_distances(&self, p: usize, swapped: &[bool]) -> (f64, f64) {
        let mine = self.in_forward_class(p, swapped);
        let (mut same, mut other) = (0, 0);
        let (mut rho, mut nu) = (None, None);
        for &(d, q) in &self.lists[p] {
            if self.in_forward_class(q as usize, swapped) == mine {
                same += 1;
                if same == self.k {
                    rho = Some(d);
                }
            } else {
                other += 1;
                if other == self.k {
                    nu = Some(d);
                }
            }
            if let (Some(r), Some(n)) = (rho, nu) {
                return (r, n);
            }
        }
        self.exact(p, swapped, mine)
    }

    fn exact(&self, p: usize, swapped: &[bool], mine: bool) -> (f64, f64) {
        let pr = self.points.row(p);
        let mut same = Vec::with_capacity(self.pairs);
        let mut other = Vec::with_capacity(self.pairs);
        let n = self.pairs;
        for q in 0..2 * n {
            if q == p || self.times[p % n].abs_diff(self.times[q % n]) < self.exclusion {
                continue;
            }
            let d = sq_dist(pr, self.points.row(q));
            if self.in_forward_class(q, swapped) == mine {
                same.push(d);
            } else {
                other.push(d);
            }
        }
        (kth_smallest(&mut same, self.k), kth_smallest(&mut other, self.k))
    }

    /// Raw J-divergence between the two classes for a swap pattern
    /// (`swapped[i]` exchanges forward row `i` with backward row `i`).
    pub fn j_divergence(&self, swapped: &[bool]) -> f64 {
        assert_eq!(swapped.len(), self.pairs);
        let n = self.pairs;
        let d = self.points.ncols() as f64;
        let mut fwd = Vec::with_capacity(n);
        let mut bwd = Vec::with_capacity(n);
        // Visit points in class order (row order within class) to mirror the
        // direct estimator's summation order.
        for i in 0..n {
            let p = if swapped[i] { i + n } else { i };
            fwd.push(self.kth_distances(p, swapped));
        }
        for i in 0..n {
            let p = if swapped[i] { i } else { i + n };
            bwd.push(self.kth_distances(p, swapped));
        }
        let nf = n as f64;
        let offset = self.log_counts.iter().sum::<f64>() / nf;
        let kl_fb = d / nf * log_ratio_sum(&fwd) + offset;
        let kl_bf = d / nf * log_ratio_sum(&bwd) + offset;
        0.5 * kl_fb + 0.5 * kl_bf
    }
}
