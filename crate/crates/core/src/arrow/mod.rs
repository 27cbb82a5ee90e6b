//! Arrow-of-time GO/NO-GO gate.
//!
//! For each representation (LEVEL, DIFF) and half-window `w`, forward
//! embeddings of length `2w` are compared with their time reversals through
//! a kNN estimate of the symmetrized KL divergence. Significance comes from a
//! block permutation test: row indices are cut into contiguous blocks of `w`
//! rows and each block's forward/backward rows are exchanged with
//! probability 1/2. A representation is significant at a scale when
//! `p < alpha`; the verdict is GO when some representation is significant at
//! `c_min` or more scales.

mod embed;
mod knn;
mod pooled;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, Rng};

pub use embed::{build_embeddings, Embeddings, Representation};
pub use knn::{j_divergence, j_divergence_excluding, knn_kl, knn_kl_excluding, ZERO_DISTANCE_FLOOR};
pub use pooled::PooledNeighbors;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrowConfig {
    pub windows: Vec<usize>,
    pub representations: Vec<Representation>,
    pub k_nn: usize,
    pub n_perm: usize,
    pub alpha: f64,
    pub c_min: usize,
    pub seed: u64,
    pub max_embed: usize,
    /// Skip neighbours whose rows overlap the query row in time (a Theiler
    /// window of `2w`). Without it overlapping rows, which are always split
    /// across classes in the observed labelling, make the test conservative.
    pub exclude_overlap: bool,
}

impl Default for ArrowConfig {
    fn default() -> Self {
        Self {
            windows: vec![2, 4, 8],
            representations: vec![Representation::Level, Representation::Diff],
            k_nn: 5,
            n_perm: 500,
            alpha: 0.05,
            c_min: 2,
            seed: 42,
            max_embed: 4000,
            exclude_overlap: true,
        }
    }
}

impl ArrowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.windows.is_empty() || self.windows.contains(&0) {
            return bad(format!("arrow windows must be non-empty and positive: {:?}", self.windows));
        }
        if self.representations.is_empty() {
            return bad("at least one representation is required".into());
        }
        if self.k_nn == 0 || self.n_perm == 0 {
            return bad("k_nn and n_perm must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if self.c_min == 0 || self.c_min > self.windows.len() {
            return bad(format!("c_min {} must be in 1..={}", self.c_min, self.windows.len()));
        }
        if self.max_embed <= self.k_nn {
            return bad("max_embed must exceed k_nn".into());
        }
        Ok(())
    }

    /// Theiler radius in row start times at half-window `w`.
    pub fn exclusion(&self, w: usize) -> usize {
        if self.exclude_overlap {
            2 * w
        } else {
            0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "GO")]
    Go,
    #[serde(rename = "NOGO")]
    NoGo,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Go => "GO",
            Verdict::NoGo => "NOGO",
        })
    }
}

impl std::str::FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace(['-', '_', '/'], "").as_str() {
            "GO" => Ok(Verdict::Go),
            "NOGO" => Ok(Verdict::NoGo),
            other => Err(Error::InvalidParam(format!("unknown verdict `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleResult {
    pub representation: Representation,
    pub w: usize,
    /// Observed J clamped at zero for reporting.
    pub j_obs: f64,
    /// Unclamped estimate; this is what the permutation test compares.
    pub j_raw: f64,
    pub p_perm: f64,
    pub n_embeddings: usize,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrowReport {
    pub series: String,
    pub scale_results: Vec<ScaleResult>,
    pub verdict: Verdict,
    pub delta_arrow: f64,
    pub significant_counts: BTreeMap<Representation, usize>,
    pub config: ArrowConfig,
}

/// Add-one permutation p-value.
pub fn permutation_p_value(observed: f64, null: &[f64]) -> f64 {
    let exceed = null.iter().filter(|&&j| j >= observed).count();
    (1 + exceed) as f64 / (null.len() + 1) as f64
}

fn scale_stream(rep: Representation, w: usize, purpose: u64) -> u64 {
    streams::derive(purpose, rep.index(), w as u64)
}

/// Observed J and its block-permutation p-value at one (representation, w).
pub fn block_permutation_test(
    series: &[f64],
    w: usize,
    rep: Representation,
    config: &ArrowConfig,
) -> Result<ScaleResult> {
    let mut sub_rng = Rng::stream(config.seed, scale_stream(rep, w, streams::SUBSAMPLE));
    let emb = build_embeddings(series, w, rep, Some(config.max_embed), &mut sub_rng)?;
    let n = emb.len();
    let pool = PooledNeighbors::new(&emb.forward, &emb.backward, &emb.times, config.k_nn, config.exclusion(w))
        .map_err(|e| match e {
            Error::InsufficientData(m) => Error::InsufficientData(format!("w={w} ({}): {m}", rep.label())),
            e => e,
        })?;
    let j_raw = pool.j_divergence(&vec![false; n]);

    let mut perm_rng = Rng::stream(config.seed, scale_stream(rep, w, streams::PERMUTATION));
    let n_blocks = n.div_ceil(w);
    let mut swapped = vec![false; n];
    let mut null = Vec::with_capacity(config.n_perm);
    for _ in 0..config.n_perm {
        let flips: Vec<bool> = (0..n_blocks).map(|_| perm_rng.bernoulli(0.5)).collect();
        for (i, s) in swapped.iter_mut().enumerate() {
            *s = flips[i / w];
        }
        null.push(pool.j_divergence(&swapped));
    }
    let p_perm = permutation_p_value(j_raw, &null);
    Ok(ScaleResult {
        representation: rep,
        w,
        j_obs: j_raw.max(0.0),
        j_raw,
        p_perm,
        n_embeddings: n,
        significant: p_perm < config.alpha,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs every (representation, w) test and combines them into a verdict.
pub fn arrow_verdict(name: &str, series: &[f64], config: &ArrowConfig) -> Result<ArrowReport> {
    config.validate()?;
    let mut scale_results = Vec::new();
    for &rep in &config.representations {
        for &w in &config.windows {
            scale_results.push(block_permutation_test(series, w, rep, config)?);
        }
    }
    let mut significant_counts = BTreeMap::new();
    for &rep in &config.representations {
        let c = scale_results
            .iter()
            .filter(|r| r.representation == rep && r.significant)
            .count();
        significant_counts.insert(rep, c);
    }
    let verdict = if significant_counts.values().any(|&c| c >= config.c_min) {
        Verdict::Go
    } else {
        Verdict::NoGo
    };
    let mut js: Vec<f64> = scale_results.iter().map(|r| r.j_obs).collect();
    let delta_arrow = median(&mut js);
    Ok(ArrowReport {
        series: name.to_string(),
        scale_results,
        verdict,
        delta_arrow,
        significant_counts,
        config: config.clone(),
    })
}
