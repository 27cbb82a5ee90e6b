use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Representation {
    Level,
    Diff,
}

impl Representation {
    pub fn label(self) -> &'static str {
        match self {
            Representation::Level => "LEVEL",
            Representation::Diff => "DIFF",
        }
    }

    pub(crate) fn index(self) -> u64 {
        match self {
            Representation::Level => 0,
            Representation::Diff => 1,
        }
    }

    /// The values that get embedded: raw series or first differences.
    pub fn transform(self, series: &[f64]) -> Vec<f64> {
        match self {
            Representation::Level => series.to_vec(),
            Representation::Diff => series.windows(2).map(|w| w[1] - w[0]).collect(),
        }
    }
}

/// Row-aligned forward embeddings and their time reversals.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub forward: Array2<f64>,
    pub backward: Array2<f64>,
    /// Start index of each row in the transformed series.
    pub times: Vec<usize>,
}

impl Embeddings {
    pub fn len(&self) -> usize {
        self.forward.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.nrows() == 0
    }
}

/// Forward rows `[s_t, ..., s_{t+2w-1}]` and their full reversals, built
/// from the representation of `series`. If there are more than `max_embed`
/// admissible rows, a uniform subset (kept in time order) is drawn from `rng`.
pub fn build_embeddings(
    series: &[f64],
    w: usize,
    rep: Representation,
    max_embed: Option<usize>,
    rng: &mut Rng,
) -> Result<Embeddings> {
    if w == 0 {
        return Err(Error::InvalidParam("embedding half-window must be positive".into()));
    }
    let values = rep.transform(series);
    let len = 2 * w;
    if values.len() < len {
        let extra = usize::from(rep == Representation::Diff);
        return Err(Error::TooShort {
            needed: len + extra,
            got: series.len(),
        });
    }
    let admissible = values.len() - len + 1;
    let rows: Vec<usize> = match max_embed {
        Some(cap) if admissible > cap => rng.sample_sorted(admissible, cap),
        _ => (0..admissible).collect(),
    };
    let mut forward = Array2::zeros((rows.len(), len));
    let mut backward = Array2::zeros((rows.len(), len));
    for (r, &t) in rows.iter().enumerate() {
        for j in 0..len {
            forward[[r, j]] = values[t + j];
            backward[[r, j]] = values[t + len - 1 - j];
        }
    }
    Ok(Embeddings {
        forward,
        backward,
        times: rows,
    })
}
