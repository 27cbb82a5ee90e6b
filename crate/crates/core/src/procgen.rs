//! Synthetic process generators.
//!
//! | case | process | expected gate |
//! |------|---------|---------------|
//! | A | nonlinear AR with cubic dissipation and state-dependent noise | GO |
//! | B | Gaussian random walk | NO-GO |
//! | C | shot-noise excitation with exponential relaxation | GO |
//! | D | noisy sinusoid | NO-GO |
//!
//! All recurrences start from zero. Cases A and C discard a burn-in of
//! [`BURN_IN`] steps; B and D are emitted from the first step.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, Rng};

pub const BURN_IN: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Case {
    A,
    B,
    C,
    D,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::A, Case::B, Case::C, Case::D];

    pub fn generate(self, t: usize, seed: u64) -> Result<TimeSeries> {
        match self {
            Case::A => gen_case_a(t, seed, &CaseAParams::default()),
            Case::B => gen_case_b(t, seed, &CaseBParams::default()),
            Case::C => gen_case_c(t, seed, &CaseCParams::default()),
            Case::D => gen_case_d(t, seed, &CaseDParams::default()),
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Case::A => "A",
            Case::B => "B",
            Case::C => "C",
            Case::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Case::A),
            "B" => Ok(Case::B),
            "C" => Ok(Case::C),
            "D" => Ok(Case::D),
            other => Err(Error::InvalidParam(format!("unknown case `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    File,
}

/// Univariate series with provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    pub name: String,
    pub source: Source,
    pub seed: Option<u64>,
    #[serde(skip)]
    pub timestamps: Option<Vec<NaiveDateTime>>,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, values: Vec<f64>, source: Source, seed: Option<u64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySeries);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::BadRow(i));
        }
        Ok(Self {
            values,
            name: name.into(),
            source,
            seed,
            timestamps: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Two-column `index,value` CSV with header.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 24);
        out.push_str("index,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{i},{v:?}\n"));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseAParams {
    pub alpha: f64,
    pub gamma_q: f64,
    pub gamma_c: f64,
    pub sigma0: f64,
    pub sigma1: f64,
}

impl Default for CaseAParams {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            gamma_q: 0.05,
            gamma_c: -0.08,
            sigma0: 0.3,
            sigma1: 0.35,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseBParams {
    pub sigma: f64,
}

impl Default for CaseBParams {
    fn default() -> Self {
        Self { sigma: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseCParams {
    pub decay: f64,
    pub p_shot: f64,
    pub shot_scale: f64,
    pub sigma_obs: f64,
}

impl Default for CaseCParams {
    fn default() -> Self {
        Self {
            decay: 0.95,
            p_shot: 0.04,
            shot_scale: 1.5,
            sigma_obs: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseDParams {
    pub amplitude: f64,
    pub period: usize,
    pub sigma: f64,
}

impl Default for CaseDParams {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            period: 40,
            sigma: 0.5,
        }
    }
}

fn check_len(t: usize) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidParam("series length must be at least 1".into()));
    }
    Ok(())
}

fn gen_rng(seed: u64) -> Rng {
    Rng::stream(seed, streams::GENERATE)
}

pub fn gen_case_a(t: usize, seed: u64, p: &CaseAParams) -> Result<TimeSeries> {
    check_len(t)?;
    // Zero noise scale is allowed for the degenerate zero-dynamics check.
    if p.sigma0 < 0.0 || p.sigma1 < 0.0 {
        return Err(Error::InvalidParam("case A noise scales must be non-negative".into()));
    }
    let mut rng = gen_rng(seed);
    let mut s = 0.0f64;
    let mut out = Vec::with_capacity(t);
    for step in 0..BURN_IN + t {
        let eps = rng.normal();
        let prev = s;
        s = p.alpha * prev.tanh()
            + p.gamma_q * prev * prev
            + p.gamma_c * prev * prev * prev
            + (p.sigma0 + p.sigma1 * prev.abs()) * eps;
        if !s.is_finite() {
            return Err(Error::NonFiniteGenerated {
                case: "A",
                index: step,
            });
        }
        if step >= BURN_IN {
            out.push(s);
        }
    }
    TimeSeries::new("A", out, Source::Synthetic, Some(seed))
}

pub fn gen_case_b(t: usize, seed: u64, p: &CaseBParams) -> Result<TimeSeries> {
    check_len(t)?;
    if p.sigma < 0.0 {
        return Err(Error::InvalidParam("case B sigma must be non-negative".into()));
    }
    let mut rng = gen_rng(seed);
    let mut out = Vec::with_capacity(t);
    let mut s = 0.0;
    out.push(s);
    for _ in 1..t {
        s += p.sigma * rng.normal();
        out.push(s);
    }
    TimeSeries::new("B", out, Source::Synthetic, Some(seed))
}

pub fn gen_case_c(t: usize, seed: u64, p: &CaseCParams) -> Result<TimeSeries> {
    check_len(t)?;
    if !(p.decay > 0.0 && p.decay < 1.0) || !(0.0..=1.0).contains(&p.p_shot) || p.shot_scale <= 0.0 {
        return Err(Error::InvalidParam(format!("bad case C parameters {p:?}")));
    }
    Ok(shot_noise(t, seed, p).0)
}

/// Case C series plus the number of shots emitted after burn-in.
pub fn shot_noise(t: usize, seed: u64, p: &CaseCParams) -> (TimeSeries, usize) {
    let mut rng = gen_rng(seed);
    let mut x = 0.0;
    let mut shots = 0;
    let mut out = Vec::with_capacity(t);
    for step in 0..BURN_IN + t {
        // Fixed draw order per step: shot indicator, jump size, observation noise.
        let fire = rng.bernoulli(p.p_shot);
        let jump = rng.exponential(p.shot_scale);
        let eps = rng.normal();
        let a = if fire { jump } else { 0.0 };
        x = p.decay * x + a;
        if step >= BURN_IN {
            shots += fire as usize;
            out.push(x + p.sigma_obs * eps);
        }
    }
    let series = TimeSeries::new("C", out, Source::Synthetic, Some(seed)).expect("finite by construction");
    (series, shots)
}

pub fn gen_case_d(t: usize, seed: u64, p: &CaseDParams) -> Result<TimeSeries> {
    check_len(t)?;
    if p.period < 2 || p.amplitude <= 0.0 || p.sigma < 0.0 {
        return Err(Error::InvalidParam(format!("bad case D parameters {p:?}")));
    }
    let mut rng = gen_rng(seed);
    let out = (0..t)
        .map(|i| {
            let phase = 2.0 * PI * (i % p.period) as f64 / p.period as f64;
            p.amplitude * phase.sin() + p.sigma * rng.normal()
        })
        .collect();
    TimeSeries::new("D", out, Source::Synthetic, Some(seed))
}
