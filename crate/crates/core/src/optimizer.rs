//! Levenberg-Marquardt training of tapped-delay regressors.
//!
//! Each epoch linearizes the predictions around the current parameters,
//! solves the damped normal equations
//!
//! ```text
//! (JᵀJ + λ·D) δ = Jᵀe,   e = targets - predictions
//! ```
//!
//! with `D = diag(JᵀJ)` (entries at or below `1e-12` replaced by 1), and
//! retries with a larger `λ` until the mean squared error decreases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::TdannModel;
use crate::signal::DelayMatrix;

/// Anything whose prediction for one delay window is differentiable in a flat
/// parameter vector.
pub trait Regressor: Clone {
    fn param_count(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    /// `p` always has `param_count()` entries.
    fn with_params(&self, p: &[f64]) -> Self;
    fn window_len(&self) -> usize;
    fn predict(&self, window: &[f64]) -> f64;
    /// Writes `∂prediction/∂θ` into `row` and returns the prediction.
    fn gradient(&self, window: &[f64], row: &mut [f64]) -> f64;
}

impl Regressor for TdannModel {
    fn param_count(&self) -> usize {
        TdannModel::param_count(self)
    }

    fn params(&self) -> Vec<f64> {
        TdannModel::params(self)
    }

    fn with_params(&self, p: &[f64]) -> Self {
        TdannModel::with_params(self, p).expect("parameter length checked by caller")
    }

    fn window_len(&self) -> usize {
        TdannModel::window_len(self)
    }

    fn predict(&self, window: &[f64]) -> f64 {
        self.forward_unchecked(window)
    }

    fn gradient(&self, window: &[f64], row: &mut [f64]) -> f64 {
        self.gradient_unchecked(window, row)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub lambda_max: f64,
    pub max_epochs: usize,
    /// Threshold on the infinity norm of the mse gradient.
    pub grad_tol: f64,
    /// Stop once mse falls to this value; 0 disables.
    pub mse_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            lambda_max: 1e10,
            max_epochs: 200,
            grad_tol: 1e-7,
            mse_tol: 0.0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.lambda_init) || !positive(self.lambda_max) {
            return Err(Error::InvalidInput("lambda_init and lambda_max must be > 0".into()));
        }
        if self.lambda_init > self.lambda_max {
            return Err(Error::InvalidInput("lambda_init exceeds lambda_max".into()));
        }
        if !(self.lambda_up.is_finite() && self.lambda_up > 1.0)
            || !(self.lambda_down.is_finite() && self.lambda_down > 1.0)
        {
            return Err(Error::InvalidInput("lambda_up and lambda_down must be > 1".into()));
        }
        if !(self.grad_tol >= 0.0) || !(self.mse_tol >= 0.0) {
            return Err(Error::InvalidInput("tolerances must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MseTolerance,
    MaxEpochs,
    /// No damping up to `lambda_max` produced a decrease.
    Stalled,
    /// Residuals at the starting point were not finite.
    NonFinite,
}

impl Termination {
    /// Whether the returned model is usable.
    pub fn is_failure(self) -> bool {
        matches!(self, Termination::NonFinite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared error at the end of the epoch.
    pub mse: f64,
    /// Damping used for the last trial step of the epoch.
    pub lambda: f64,
    /// Infinity norm of the mse gradient at the start of the epoch.
    pub gradient_inf_norm: f64,
    pub step_accepted: bool,
    pub rejected_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    pub epochs: Vec<EpochRecord>,
    pub termination: Termination,
    pub diagnostic: Option<String>,
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::dimension("mse operands", target.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("mse of empty vectors".into()));
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

fn mse_of<M: Regressor>(model: &M, x: &DelayMatrix, targets: &[f64]) -> f64 {
    let sum: f64 = x
        .iter_rows()
        .zip(targets)
        .map(|(w, t)| {
            let e = t - model.predict(w);
            e * e
        })
        .sum();
    sum / targets.len() as f64
}

const ROWS_PER_CHUNK: usize = 512;
const DIAG_FLOOR: f64 = 1e-12;

/// Normal-equation pieces at the current parameters.
struct Linearization {
    jtj: DMatrix<f64>,
    jte: DVector<f64>,
}

fn linearize<M: Regressor>(model: &M, x: &DelayMatrix, targets: &[f64]) -> Linearization {
    let p = model.param_count();
    let mut jtj = DMatrix::zeros(p, p);
    let mut jte = DVector::zeros(p);
    let mut row = vec![0.0; p];
    let mut start = 0;
    while start < x.rows() {
        let len = ROWS_PER_CHUNK.min(x.rows() - start);
        // one Jacobian row per column so the fill is contiguous
        let mut chunk = DMatrix::zeros(p, len);
        for r in 0..len {
            let window = x.row(start + r);
            let pred = model.gradient(window, &mut row);
            let e = targets[start + r] - pred;
            chunk.column_mut(r).copy_from_slice(&row);
            for (g, j) in jte.iter_mut().zip(&row) {
                *g += j * e;
            }
        }
        let chunk_t = chunk.transpose();
        jtj.gemm(1.0, &chunk, &chunk_t, 1.0);
        start += len;
    }
    Linearization { jtj, jte }
}

fn damped_step(lin: &Linearization, lambda: f64) -> Option<DVector<f64>> {
    let mut a = lin.jtj.clone();
    for i in 0..a.nrows() {
        let d = lin.jtj[(i, i)];
        a[(i, i)] += lambda * if d > DIAG_FLOOR { d } else { 1.0 };
    }
    let chol = a.cholesky()?;
    let step = chol.solve(&lin.jte);
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Trains `model` on rows of `x` against `targets`.
pub fn lm_train<M: Regressor>(
    model: &M,
    x: &DelayMatrix,
    targets: &[f64],
    cfg: &LmConfig,
) -> Result<(M, LmReport)> {
    cfg.validate()?;
    if x.cols() != model.window_len() {
        return Err(Error::dimension("training windows", model.window_len(), x.cols()));
    }
    if targets.len() != x.rows() {
        return Err(Error::dimension("training targets", x.rows(), targets.len()));
    }
    if targets.is_empty() {
        return Err(Error::InvalidInput("no training rows".into()));
    }
    if !targets.iter().all(|t| t.is_finite()) {
        return Err(Error::InvalidInput("training targets must be finite".into()));
    }

    let n = targets.len() as f64;
    let mut current = model.clone();
    let mut current_mse = mse_of(&current, x, targets);
    let initial_mse = current_mse;
    let mut report = LmReport {
        initial_mse,
        final_mse: current_mse,
        epochs: Vec::new(),
        termination: Termination::MaxEpochs,
        diagnostic: None,
    };
    if !current_mse.is_finite() {
        report.termination = Termination::NonFinite;
        report.diagnostic = Some(format!("initial mse is {current_mse}"));
        return Ok((current, report));
    }

    let mut lambda = cfg.lambda_init;
    for epoch in 1..=cfg.max_epochs {
        let lin = linearize(&current, x, targets);
        let grad_inf = 2.0 / n * lin.jte.amax();
        let mut record = EpochRecord {
            epoch,
            mse: current_mse,
            lambda,
            gradient_inf_norm: grad_inf,
            step_accepted: false,
            rejected_trials: 0,
        };
        if !grad_inf.is_finite() {
            report.epochs.push(record);
            report.termination = Termination::NonFinite;
            report.diagnostic = Some(format!("gradient norm is {grad_inf} at epoch {epoch}"));
            break;
        }
        if grad_inf <= cfg.grad_tol {
            report.epochs.push(record);
            report.termination = Termination::GradientTolerance;
            break;
        }
        if current_mse <= cfg.mse_tol {
            report.epochs.push(record);
            report.termination = Termination::MseTolerance;
            break;
        }

        let theta = current.params();
        let mut stalled = false;
        loop {
            record.lambda = lambda;
            let accepted = damped_step(&lin, lambda).and_then(|delta| {
                let trial_params: Vec<f64> =
                    theta.iter().zip(delta.iter()).map(|(t, s)| t + s).collect();
                let trial = current.with_params(&trial_params);
                let trial_mse = mse_of(&trial, x, targets);
                (trial_mse.is_finite() && trial_mse < current_mse).then_some((trial, trial_mse))
            });
            match accepted {
                Some((trial, trial_mse)) => {
                    current = trial;
                    current_mse = trial_mse;
                    record.step_accepted = true;
                    record.mse = trial_mse;
                    lambda = (lambda / cfg.lambda_down).max(f64::MIN_POSITIVE);
                    break;
                }
                None => {
                    record.rejected_trials += 1;
                    if lambda * cfg.lambda_up > cfg.lambda_max {
                        stalled = true;
                        break;
                    }
                    lambda *= cfg.lambda_up;
                }
            }
        }
        report.epochs.push(record);
        if stalled {
            report.termination = Termination::Stalled;
            break;
        }
    }
    report.final_mse = current_mse;
    Ok((current, report))
}
