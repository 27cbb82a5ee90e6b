//! Forecast metrics, the Diebold-Mariano test and the P1-P4 scorecard.
//!
//! All errors are computed in standardized units.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::arrow::Verdict;
use crate::error::{Error, Result};
use crate::mapinfer::ForecastResult;
use crate::models::Method;

fn same_shape(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<()> {
    if pred.dim() != truth.dim() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    Ok(())
}

/// Global RMSE over every entry and the column-wise (per-horizon) RMSE.
pub fn rmse(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<(f64, Vec<f64>)> {
    same_shape(pred, truth)?;
    let sq = (pred - truth).mapv(|e| e * e);
    let global = sq.mean().expect("non-empty").sqrt();
    let per_h = sq.mean_axis(Axis(0)).expect("non-empty").mapv(f64::sqrt).to_vec();
    Ok((global, per_h))
}

/// Mean squared error of each row (one loss per forecast window).
pub fn window_mse(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<Vec<f64>> {
    same_shape(pred, truth)?;
    let sq = (pred - truth).mapv(|e| e * e);
    Ok(sq.mean_axis(Axis(1)).expect("non-empty").to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    /// Negative when `loss_a` is smaller on average.
    pub stat: f64,
    pub p: f64,
    pub n: usize,
    /// `d` had zero variance but nonzero mean; `stat` is saturated.
    pub degenerate: bool,
}

/// Diebold-Mariano test of equal accuracy with the Harvey small-sample
/// correction; two-sided p from Student-t with `N - 1` degrees of freedom.
pub fn dm_test(loss_a: &[f64], loss_b: &[f64], h: usize) -> Result<DmResult> {
    let n = loss_a.len();
    if n != loss_b.len() {
        return Err(Error::Shape(format!("loss series of length {n} and {}", loss_b.len())));
    }
    if n < 10 {
        return Err(Error::InsufficientData(format!("DM test needs at least 10 losses, got {n}")));
    }
    if h == 0 {
        return Err(Error::InvalidParam("DM horizon must be at least 1".into()));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let autocov = |k: usize| -> f64 {
        (k..n).map(|t| (d[t] - mean) * (d[t - k] - mean)).sum::<f64>() / nf
    };
    let gamma0 = autocov(0);
    let mut lrv = gamma0 + 2.0 * (1..h.min(n)).map(autocov).sum::<f64>();
    if lrv <= 0.0 {
        // The truncated kernel is not guaranteed positive.
        lrv = gamma0;
    }
    if lrv <= f64::EPSILON * mean.abs().max(1e-300) || lrv == 0.0 {
        if mean == 0.0 {
            return Ok(DmResult { stat: 0.0, p: 1.0, n, degenerate: false });
        }
        log::warn!("DM loss differential has zero variance with mean {mean}");
        return Ok(DmResult {
            stat: mean.signum() * f64::MAX,
            p: 0.0,
            n,
            degenerate: true,
        });
    }
    let hf = h as f64;
    let harvey = ((nf + 1.0 - 2.0 * hf + hf * (hf - 1.0) / nf) / nf).max(0.0).sqrt();
    let stat = mean / (lrv / nf).sqrt() * harvey;
    let t = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| Error::InvalidParam(e.to_string()))?;
    let p = (2.0 * (1.0 - t.cdf(stat.abs()))).clamp(0.0, 1.0);
    Ok(DmResult { stat, p, n, degenerate: false })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

/// Pearson correlation with a two-sided t-test p-value. `None` when either
/// series has zero variance.
pub fn correlation(a: &[f64], b: &[f64]) -> Result<Option<Correlation>> {
    let n = a.len();
    if n != b.len() {
        return Err(Error::Shape(format!("series of length {n} and {}", b.len())));
    }
    if n < 3 {
        return Err(Error::InsufficientData(format!("correlation needs 3 points, got {n}")));
    }
    let nf = n as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / nf, b.iter().sum::<f64>() / nf);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(None);
    }
    let r = (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0);
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let df = nf - 2.0;
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidParam(e.to_string()))?;
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(Some(Correlation { r, p, n }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sample_count: usize,
    pub horizon: usize,
    pub rmse: BTreeMap<Method, f64>,
    pub rmse_per_horizon: BTreeMap<Method, Vec<f64>>,
    /// RMSE(inv-flow) / RMSE(mlp).
    pub ratio_inv_mlp: Option<f64>,
    /// inv-flow against mlp; negative favors inv-flow.
    pub dm: Option<DmResult>,
    /// inv-flow against inv-gauss.
    pub dm_flow_gauss: Option<DmResult>,
    /// RetroNLL of the inv-flow solutions against their per-window RMSE.
    pub retro_nll_rmse_corr: Option<Correlation>,
    pub mean_dispersion: Option<f64>,
}

impl EvalReport {
    /// `preds` maps each method to its predictions of `truth`; `retro` holds
    /// the inv-flow MAP results (same row order) when available.
    pub fn build(
        truth: &Array2<f64>,
        preds: &BTreeMap<Method, Array2<f64>>,
        retro: Option<&[ForecastResult]>,
    ) -> Result<Self> {
        let horizon = truth.ncols();
        let mut rmse_g = BTreeMap::new();
        let mut rmse_h = BTreeMap::new();
        let mut losses = BTreeMap::new();
        for (&m, p) in preds {
            let (g, h) = rmse(p, truth)?;
            rmse_g.insert(m, g);
            rmse_h.insert(m, h);
            losses.insert(m, window_mse(p, truth)?);
        }
        let ratio_inv_mlp = match (rmse_g.get(&Method::InvFlow), rmse_g.get(&Method::Mlp)) {
            (Some(a), Some(b)) if *b > 0.0 => Some(a / b),
            _ => None,
        };
        let dm_pair = |a: Method, b: Method| -> Result<Option<DmResult>> {
            match (losses.get(&a), losses.get(&b)) {
                (Some(la), Some(lb)) if la.len() >= 10 => Ok(Some(dm_test(la, lb, horizon)?)),
                _ => Ok(None),
            }
        };
        let dm = dm_pair(Method::InvFlow, Method::Mlp)?;
        let dm_flow_gauss = dm_pair(Method::InvFlow, Method::InvGauss)?;
        let (retro_nll_rmse_corr, mean_dispersion) = match (retro, losses.get(&Method::InvFlow)) {
            (Some(r), Some(l)) if r.len() == l.len() && r.len() >= 3 => {
                let nll: Vec<f64> = r.iter().map(|f| f.retro_nll).collect();
                let per_window: Vec<f64> = l.iter().map(|v| v.sqrt()).collect();
                let disp = r.iter().map(|f| f.dispersion).sum::<f64>() / r.len() as f64;
                (correlation(&nll, &per_window)?, Some(disp))
            }
            _ => (None, None),
        };
        Ok(Self {
            sample_count: truth.nrows(),
            horizon,
            rmse: rmse_g,
            rmse_per_horizon: rmse_h,
            ratio_inv_mlp,
            dm,
            dm_flow_gauss,
            retro_nll_rmse_corr,
            mean_dispersion,
        })
    }
}

/// Scorecard thresholds and the verdict each case is expected to get.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub p3_min_ratio: f64,
    pub p4_max_ratio: f64,
    pub expected_verdicts: BTreeMap<String, Verdict>,
}

impl Default for Thresholds {
    fn default() -> Self {
        let expected = [
            ("A", Verdict::Go),
            ("B", Verdict::NoGo),
            ("C", Verdict::Go),
            ("D", Verdict::NoGo),
            ("ERA5", Verdict::Go),
            ("ERA_ssrd", Verdict::Go),
        ];
        Self {
            p3_min_ratio: 0.95,
            p4_max_ratio: 1.05,
            expected_verdicts: expected.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

/// What the scorecard needs to know about one case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case: String,
    pub synthetic: bool,
    pub verdict: Verdict,
    pub eval: Option<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseCheck {
    pub case: String,
    pub observed: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub pass: bool,
    pub criterion: String,
    pub checks: Vec<CaseCheck>,
}

impl Prediction {
    fn new(criterion: String, checks: Vec<CaseCheck>) -> Self {
        let pass = !checks.is_empty() && checks.iter().all(|c| c.pass);
        Self { pass, criterion, checks }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scorecard {
    pub p1: Prediction,
    pub p2: Prediction,
    pub p3: Prediction,
    pub p4: Prediction,
    pub all_pass: bool,
}

fn rmse_of(e: &EvalReport, m: Method, case: &str) -> Result<f64> {
    e.rmse
        .get(&m)
        .copied()
        .ok_or_else(|| Error::Missing(format!("{m} RMSE for case {case}")))
}

/// Applies the four falsifiable predictions. Cases without an expected
/// verdict are grouped by their observed verdict.
fn eval_of(c: &CaseOutcome) -> Result<&EvalReport> {
    c.eval
        .as_ref()
        .ok_or_else(|| Error::Missing(format!("evaluation for case {}", c.case)))
}

pub fn scorecard(cases: &[CaseOutcome], th: &Thresholds) -> Result<Scorecard> {
    if cases.is_empty() {
        return Err(Error::Missing("no cases for the scorecard".into()));
    }
    let group = |c: &CaseOutcome| th.expected_verdicts.get(&c.case).copied().unwrap_or(c.verdict);

    let mut p1 = Vec::new();
    for c in cases {
        if let Some(&want) = th.expected_verdicts.get(&c.case) {
            p1.push(CaseCheck {
                case: c.case.clone(),
                observed: format!("{} (expected {want})", c.verdict),
                pass: c.verdict == want,
            });
        }
    }

    let (mut p2, mut p3, mut p4) = (Vec::new(), Vec::new(), Vec::new());
    for c in cases {
        let go = group(c) == Verdict::Go;
        if go && c.synthetic {
            let e = eval_of(c)?;
            let (f, g) = (rmse_of(e, Method::InvFlow, &c.case)?, rmse_of(e, Method::InvGauss, &c.case)?);
            p2.push(CaseCheck {
                case: c.case.clone(),
                observed: format!("flow {f:.3} vs gauss {g:.3}"),
                pass: f < g,
            });
        }
        let ratio = || -> Result<f64> {
            eval_of(c)?
                .ratio_inv_mlp
                .ok_or_else(|| Error::Missing(format!("inv-flow/mlp ratio for case {}", c.case)))
        };
        if go {
            let r = ratio()?;
            p4.push(CaseCheck {
                case: c.case.clone(),
                observed: format!("ratio {r:.3}"),
                pass: r <= th.p4_max_ratio,
            });
        } else {
            let r = ratio()?;
            p3.push(CaseCheck {
                case: c.case.clone(),
                observed: format!("ratio {r:.3}"),
                pass: r >= th.p3_min_ratio,
            });
        }
    }

    let p1 = Prediction::new("arrow verdict matches the expected GO/NOGO".into(), p1);
    let p2 = Prediction::new("RMSE(inv-flow) < RMSE(inv-gauss) on GO synthetic cases".into(), p2);
    let p3 = Prediction::new(format!("RMSE ratio inv-flow/MLP >= {} on NOGO cases", th.p3_min_ratio), p3);
    let p4 = Prediction::new(format!("RMSE ratio inv-flow/MLP <= {} on GO cases", th.p4_max_ratio), p4);
    let all_pass = p1.pass && p2.pass && p3.pass && p4.pass;
    Ok(Scorecard { p1, p2, p3, p4, all_pass })
}

impl Scorecard {
    /// Plain-text summary, one block per prediction.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for (name, p) in [("P1", &self.p1), ("P2", &self.p2), ("P3", &self.p3), ("P4", &self.p4)] {
            let verdict = if p.pass { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{name}  {verdict:<4}  {}", p.criterion);
            for c in &p.checks {
                let mark = if c.pass { "ok" } else { "x" };
                let _ = writeln!(s, "      {:<9} {:<2}  {}", c.case, mark, c.observed);
            }
        }
        let _ = writeln!(s, "overall: {}", if self.all_pass { "PASS" } else { "FAIL" });
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rmse_trivial_cases() {
        let t = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(rmse(&t, &t).unwrap().0, 0.0);
        let p = t.mapv(|v| v + 2.0);
        let (g, h) = rmse(&p, &t).unwrap();
        assert!((g - 2.0).abs() < 1e-15);
        assert!(h.iter().all(|v| (v - 2.0).abs() < 1e-15));
        assert!(rmse(&array![[1.0]], &t).is_err());
    }

    #[test]
    fn rmse_hand_computed() {
        let p = array![[0.5, -1.0], [2.0, 0.0], [1.0, 1.5]];
        let t = array![[0.0, 0.0], [1.0, 1.0], [1.0, -0.5]];
        // squared errors by column: (.25, 1, 0) and (1, 1, 4); 7.25 over 6
        let (g, h) = rmse(&p, &t).unwrap();
        assert!((g - (7.25f64 / 6.0).sqrt()).abs() < 1e-12);
        assert!((h[0] - (1.25f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((h[1] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dm_identical_losses() {
        let l: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let r = dm_test(&l, &l, 4).unwrap();
        assert_eq!((r.stat, r.p, r.degenerate), (0.0, 1.0, false));
    }

    #[test]
    fn dm_constant_shift_is_degenerate() {
        let a = vec![1.0; 12];
        let b = vec![0.5; 12];
        let r = dm_test(&a, &b, 1).unwrap();
        assert!(r.degenerate && r.p == 0.0 && r.stat > 0.0);
    }

    #[test]
    fn dm_rejects_short_or_mismatched() {
        assert!(dm_test(&[1.0; 5], &[1.0; 5], 1).is_err());
        assert!(dm_test(&[1.0; 12], &[1.0; 11], 1).is_err());
    }

    #[test]
    fn correlation_extremes() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((correlation(&x, &x).unwrap().unwrap().r - 1.0).abs() < 1e-12);
        assert!((correlation(&x, &neg).unwrap().unwrap().r + 1.0).abs() < 1e-12);
        assert!(correlation(&x, &[1.0; 10]).unwrap().is_none());
    }

    #[test]
    fn correlation_p_at_critical_value() {
        // Two-sided 5% critical r for 8 degrees of freedom is 0.6319.
        let x = [-1.0f64, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0];
        let r_target: f64 = 0.6319;
        let noise = [1.0f64, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 0.0, 0.0];
        // y = r x + sqrt(1 - r^2) e with e orthogonal to x, both unit-scaled.
        let ex: f64 = noise.iter().zip(&x).map(|(e, x)| e * x).sum::<f64>() / 10.0;
        let e: Vec<f64> = noise.iter().zip(&x).map(|(e, x)| e - ex * x).collect();
        let me = e.iter().sum::<f64>() / 10.0;
        let se = (e.iter().map(|v| (v - me).powi(2)).sum::<f64>() / 10.0).sqrt();
        let y: Vec<f64> = x
            .iter()
            .zip(&e)
            .map(|(x, e)| r_target * x + (1.0 - r_target * r_target).sqrt() * (e - me) / se)
            .collect();
        let c = correlation(&x, &y).unwrap().unwrap();
        assert!((c.r - r_target).abs() < 1e-9, "{}", c.r);
        assert!((c.p - 0.05).abs() < 5e-4, "{}", c.p);
    }

    fn report(flow: f64, gauss: f64, mlp: f64) -> EvalReport {
        let mut rmse = BTreeMap::new();
        rmse.insert(Method::InvFlow, flow);
        rmse.insert(Method::InvGauss, gauss);
        rmse.insert(Method::Mlp, mlp);
        EvalReport {
            sample_count: 256,
            horizon: 16,
            rmse,
            rmse_per_horizon: BTreeMap::new(),
            ratio_inv_mlp: Some(flow / mlp),
            dm: None,
            dm_flow_gauss: None,
            retro_nll_rmse_corr: None,
            mean_dispersion: None,
        }
    }

    fn outcome(case: &str, synthetic: bool, verdict: Verdict, e: EvalReport) -> CaseOutcome {
        CaseOutcome {
            case: case.into(),
            synthetic,
            verdict,
            eval: Some(e),
        }
    }

    fn published() -> Vec<CaseOutcome> {
        vec![
            outcome("A", true, Verdict::Go, report(1.038, 1.074, 1.156)),
            outcome("B", true, Verdict::NoGo, report(0.124, 0.2, 0.066)),
            outcome("C", true, Verdict::Go, report(0.782, 0.872, 0.772)),
            outcome("D", true, Verdict::NoGo, report(0.612, 0.7, 0.622)),
            outcome("ERA5", false, Verdict::Go, report(1.025, 1.1, 1.034)),
            outcome("ERA_ssrd", false, Verdict::Go, report(0.160, 0.25, 0.195)),
        ]
    }

    #[test]
    fn published_values_pass_everything() {
        let sc = scorecard(&published(), &Thresholds::default()).unwrap();
        assert!(sc.all_pass, "{}", sc.to_table());
        assert_eq!(sc.p1.checks.len(), 6);
        assert_eq!(sc.p2.checks.len(), 2);
        assert_eq!(sc.p3.checks.len(), 2);
        assert_eq!(sc.p4.checks.len(), 4);
    }

    #[test]
    fn go_ratio_above_threshold_fails_p4() {
        let mut cases = published();
        cases[0].eval = Some(report(1.2, 1.3, 1.0));
        let sc = scorecard(&cases, &Thresholds::default()).unwrap();
        assert!(!sc.p4.pass && sc.p1.pass && sc.p3.pass);
    }

    #[test]
    fn wrong_verdict_fails_p1_and_missing_eval_is_named() {
        let mut cases = published();
        cases[1].verdict = Verdict::Go;
        assert!(!scorecard(&cases, &Thresholds::default()).unwrap().p1.pass);
        cases[2].eval = None;
        let err = scorecard(&cases, &Thresholds::default()).unwrap_err().to_string();
        assert!(err.contains("case C"), "{err}");
        assert!(scorecard(&[], &Thresholds::default()).is_err());
    }

    #[test]
    fn thresholds_are_data() {
        let th = Thresholds {
            p4_max_ratio: 0.8,
            ..Thresholds::default()
        };
        assert!(!scorecard(&published(), &th).unwrap().p4.pass);
    }
}
