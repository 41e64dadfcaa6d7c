//! Evaluation measures and the ridge-regularized linear FIR baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{map_causal_windows, predict_series, DelayState, PrimePolicy, TdannModel};
use crate::optimizer::mse;
use crate::signal::{DelayMatrix, TimeSeries};

/// Sample Pearson correlation coefficient.
///
/// Accumulates co-moments in a single streaming pass. A zero-variance operand
/// is an error rather than a correlation of 0.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dimension("pearson operands", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("pearson needs at least 2 samples".into()));
    }
    let (mut mx, mut my) = (0.0, 0.0);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (k, (&a, &b)) in x.iter().zip(y).enumerate() {
        let n = (k + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    if !(sxx > 0.0) || !(syy > 0.0) {
        return Err(Error::DegenerateSignal(format!(
            "pearson operand has zero variance (sxx = {sxx}, syy = {syy})"
        )));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub gamma: f64,
    pub d: usize,
}

impl BaselineConfig {
    pub fn new(gamma: f64, d: usize) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::InvalidInput(format!("gamma must be finite and >= 0, got {gamma}")));
        }
        Ok(Self { gamma, d })
    }
}

/// Linear tapped-delay predictor `intercept + Σ_j weights[j]·u(t-j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirRidge {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl FirRidge {
    pub fn delay(&self) -> usize {
        self.weights.len() - 1
    }

    /// `[intercept, w_0, ..., w_d]`.
    pub fn to_vec(&self) -> Vec<f64> {
        std::iter::once(self.intercept).chain(self.weights.iter().copied()).collect()
    }

    pub fn predict_window(&self, window: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(window).map(|(w, x)| w * x).sum::<f64>()
    }

    pub fn predict_series(&self, input: &TimeSeries, prime: &DelayState) -> Result<TimeSeries> {
        if prime.len() != self.delay() {
            return Err(Error::dimension("delay state", self.delay(), prime.len()));
        }
        let out = map_causal_windows(input.samples(), prime, |w| self.predict_window(w));
        Ok(TimeSeries::new(out)?.with_label("baseline"))
    }
}

/// Minimizes `‖Xw + c - y‖² + γ‖w‖²` with the intercept `c` unpenalized.
pub fn fit_fir_ridge(x: &DelayMatrix, targets: &[f64], cfg: &BaselineConfig) -> Result<FirRidge> {
    BaselineConfig::new(cfg.gamma, cfg.d)?;
    if x.delay() != cfg.d {
        return Err(Error::dimension("ridge delay window", cfg.d + 1, x.cols()));
    }
    if targets.len() != x.rows() {
        return Err(Error::dimension("ridge targets", x.rows(), targets.len()));
    }
    if x.rows() == 0 {
        return Err(Error::InvalidInput("ridge fit needs at least one row".into()));
    }
    let n = x.rows() as f64;
    let k = x.cols();
    let mut col_mean = vec![0.0; k];
    for row in x.iter_rows() {
        for (m, v) in col_mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    col_mean.iter_mut().for_each(|m| *m /= n);
    let y_mean = targets.iter().sum::<f64>() / n;

    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    let mut centered = vec![0.0; k];
    for (row, &y) in x.iter_rows().zip(targets) {
        for ((c, v), m) in centered.iter_mut().zip(row).zip(&col_mean) {
            *c = v - m;
        }
        let yc = y - y_mean;
        for i in 0..k {
            rhs[i] += centered[i] * yc;
            for j in i..k {
                gram[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
        gram[(i, i)] += cfg.gamma;
    }

    let rank_error = || {
        Error::RankDeficient(format!(
            "delay regressors are collinear at gamma = {}; use gamma > 0",
            cfg.gamma
        ))
    };
    let chol = gram.clone().cholesky().ok_or_else(rank_error)?;
    let l = chol.l_dirty();
    let (lo, hi) = (0..k).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
        (lo.min(l[(i, i)]), hi.max(l[(i, i)]))
    });
    if cfg.gamma == 0.0 && (hi == 0.0 || lo / hi < 1e-7) {
        return Err(rank_error());
    }
    let w = chol.solve(&rhs);
    let intercept = y_mean - w.iter().zip(&col_mean).map(|(a, b)| a * b).sum::<f64>();
    Ok(FirRidge {
        intercept,
        weights: w.iter().copied().collect(),
    })
}

/// Which samples enter correlation and error figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationRange {
    /// Every sample, including those predicted from primed history.
    #[default]
    Full,
    /// Drop the first `d` samples.
    ExcludePrimed,
}

impl CorrelationRange {
    /// First 0-based index kept for a model with delay window `d`.
    pub fn first_index(self, d: usize) -> usize {
        match self {
            CorrelationRange::Full => 0,
            CorrelationRange::ExcludePrimed => d,
        }
    }
}

impl std::str::FromStr for CorrelationRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CorrelationRange::Full),
            "exclude-primed" => Ok(CorrelationRange::ExcludePrimed),
            other => Err(Error::InvalidInput(format!("unknown correlation range {other:?}"))),
        }
    }
}

/// Correlation and mse of `pred` against `truth` over the chosen range.
pub fn score(pred: &[f64], truth: &[f64], range: CorrelationRange, d: usize) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::dimension("prediction vs truth", truth.len(), pred.len()));
    }
    let start = range.first_index(d).min(pred.len());
    let corr = pearson(&truth[start..], &pred[start..])?;
    let err = mse(&pred[start..], &truth[start..])?;
    Ok((corr, err))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub d: usize,
    pub n_hidden: usize,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRange {
    /// 1-based, inclusive.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub dataset_ids: Vec<String>,
    pub model: ModelDescriptor,
    pub prime_policy: PrimePolicy,
    pub corr: f64,
    pub mse: f64,
    pub baseline_gamma: f64,
    pub baseline_d: usize,
    pub baseline_corr: f64,
    pub baseline_mse: f64,
    pub sample_range: SampleRange,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub prime: PrimePolicy,
    pub range: CorrelationRange,
    pub dataset_ids: Vec<String>,
}

/// Scores a trained network and a fitted baseline on one held-out pair.
pub fn evaluate(
    model: &TdannModel,
    baseline: &FirRidge,
    baseline_gamma: f64,
    test_input: &TimeSeries,
    test_output: &TimeSeries,
    opts: &EvalOptions,
) -> Result<EvaluationReport> {
    if test_input.len() != test_output.len() {
        return Err(Error::dimension("test pair", test_input.len(), test_output.len()));
    }
    let u = test_input.samples();
    let pred = predict_series(model, test_input, &DelayState::for_policy(opts.prime, u, model.delay())?)?;
    let (corr, err) = score(pred.samples(), test_output.samples(), opts.range, model.delay())?;
    let base = baseline.predict_series(
        test_input,
        &DelayState::for_policy(opts.prime, u, baseline.delay())?,
    )?;
    let (baseline_corr, baseline_mse) =
        score(base.samples(), test_output.samples(), opts.range, baseline.delay())?;
    Ok(EvaluationReport {
        dataset_ids: opts.dataset_ids.clone(),
        model: ModelDescriptor {
            d: model.delay(),
            n_hidden: model.n_hidden(),
            param_count: model.param_count(),
        },
        prime_policy: opts.prime,
        corr,
        mse: err,
        baseline_gamma,
        baseline_d: baseline.delay(),
        baseline_corr,
        baseline_mse,
        sample_range: SampleRange {
            start: opts.range.first_index(model.delay()).min(u.len() - 1) + 1,
            end: u.len(),
        },
    })
}
