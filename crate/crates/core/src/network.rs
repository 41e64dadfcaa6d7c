//! The time-delay network: one hidden layer fed by a tapped delay line over a
//! single input series, and a single output neuron.
//!
//! Windows are always ordered newest first: `[u(t), u(t-1), ..., u(t-d)]`.
//! The flattened parameter vector is `[w_in (row-major), b_hidden, w_out, b_out]`;
//! Jacobian columns, the optimizer and the model file all use this order.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{DelayMatrix, TimeSeries};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation's output `y = apply(x)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdannModel {
    d: usize,
    n_hidden: usize,
    /// `n_hidden x (d + 1)`, row-major.
    w_in: Vec<f64>,
    b_hidden: Vec<f64>,
    w_out: Vec<f64>,
    b_out: f64,
    hidden_activation: Activation,
    output_activation: Activation,
}

impl TdannModel {
    /// Assembles a sigmoid-hidden, linear-output model from explicit weights.
    /// `w_in[i]` holds hidden neuron `i`'s weights over lags `0..=d`.
    pub fn from_parts(
        d: usize,
        w_in: Vec<Vec<f64>>,
        b_hidden: Vec<f64>,
        w_out: Vec<f64>,
        b_out: f64,
    ) -> Result<Self> {
        let n_hidden = w_in.len();
        if n_hidden == 0 {
            return Err(Error::InvalidInput("model needs at least one hidden neuron".into()));
        }
        let mut flat = Vec::with_capacity(n_hidden * (d + 1));
        for row in &w_in {
            if row.len() != d + 1 {
                return Err(Error::dimension("w_in row", d + 1, row.len()));
            }
            flat.extend_from_slice(row);
        }
        if b_hidden.len() != n_hidden {
            return Err(Error::dimension("b_hidden", n_hidden, b_hidden.len()));
        }
        if w_out.len() != n_hidden {
            return Err(Error::dimension("w_out", n_hidden, w_out.len()));
        }
        let model = Self {
            d,
            n_hidden,
            w_in: flat,
            b_hidden,
            w_out,
            b_out,
            hidden_activation: Activation::Sigmoid,
            output_activation: Activation::Linear,
        };
        if !model.params().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("model parameters must be finite".into()));
        }
        Ok(model)
    }

    pub fn with_activations(mut self, hidden: Activation, output: Activation) -> Self {
        self.hidden_activation = hidden;
        self.output_activation = output;
        self
    }

    pub fn delay(&self) -> usize {
        self.d
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn window_len(&self) -> usize {
        self.d + 1
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn w_in_row(&self, i: usize) -> &[f64] {
        let k = self.d + 1;
        &self.w_in[i * k..(i + 1) * k]
    }

    pub fn b_hidden(&self) -> &[f64] {
        &self.b_hidden
    }

    pub fn w_out(&self) -> &[f64] {
        &self.w_out
    }

    pub fn b_out(&self) -> f64 {
        self.b_out
    }

    pub fn param_count(&self) -> usize {
        self.n_hidden * (self.d + 3) + 1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(&self.w_in);
        p.extend_from_slice(&self.b_hidden);
        p.extend_from_slice(&self.w_out);
        p.push(self.b_out);
        p
    }

    /// Copy of this model with the flattened parameter vector replaced.
    pub fn with_params(&self, p: &[f64]) -> Result<Self> {
        if p.len() != self.param_count() {
            return Err(Error::dimension("parameter vector", self.param_count(), p.len()));
        }
        let nw = self.w_in.len();
        let n = self.n_hidden;
        let mut out = self.clone();
        out.w_in.copy_from_slice(&p[..nw]);
        out.b_hidden.copy_from_slice(&p[nw..nw + n]);
        out.w_out.copy_from_slice(&p[nw + n..nw + 2 * n]);
        out.b_out = p[nw + 2 * n];
        Ok(out)
    }

    /// Output for one window, without length checks.
    #[inline]
    pub(crate) fn forward_unchecked(&self, window: &[f64]) -> f64 {
        let k = self.d + 1;
        let mut acc = self.b_out;
        for i in 0..self.n_hidden {
            let w = &self.w_in[i * k..(i + 1) * k];
            let z = self.b_hidden[i] + dot(w, window);
            acc += self.w_out[i] * self.hidden_activation.apply(z);
        }
        self.output_activation.apply(acc)
    }

    /// Fills `row` with the gradient of the output with respect to every
    /// parameter and returns the output itself.
    #[inline]
    pub(crate) fn gradient_unchecked(&self, window: &[f64], row: &mut [f64]) -> f64 {
        let k = self.d + 1;
        let n = self.n_hidden;
        let nw = n * k;
        let mut acc = self.b_out;
        // hidden activations are parked in the w_out block first
        for i in 0..n {
            let w = &self.w_in[i * k..(i + 1) * k];
            let h = self.hidden_activation.apply(self.b_hidden[i] + dot(w, window));
            row[nw + n + i] = h;
            acc += self.w_out[i] * h;
        }
        let y = self.output_activation.apply(acc);
        let dy = self.output_activation.derivative_from_output(y);
        for i in 0..n {
            let h = row[nw + n + i];
            let g = dy * self.w_out[i] * self.hidden_activation.derivative_from_output(h);
            for (dst, x) in row[i * k..(i + 1) * k].iter_mut().zip(window) {
                *dst = g * x;
            }
            row[nw + i] = g;
            row[nw + n + i] = dy * h;
        }
        row[nw + 2 * n] = dy;
        y
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws a fresh model: hidden weights uniform in `[-1/sqrt(d+1), 1/sqrt(d+1)]`,
/// output weights uniform in `[-1/sqrt(N), 1/sqrt(N)]`, zero biases.
pub fn init_model(d: usize, n_hidden: usize, seed: u64) -> Result<TdannModel> {
    if n_hidden == 0 {
        return Err(Error::InvalidInput("model needs at least one hidden neuron".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r_in = 1.0 / ((d + 1) as f64).sqrt();
    let r_out = 1.0 / (n_hidden as f64).sqrt();
    let w_in = (0..n_hidden * (d + 1))
        .map(|_| rng.random_range(-r_in..=r_in))
        .collect();
    let w_out = (0..n_hidden)
        .map(|_| rng.random_range(-r_out..=r_out))
        .collect();
    Ok(TdannModel {
        d,
        n_hidden,
        w_in,
        b_hidden: vec![0.0; n_hidden],
        w_out,
        b_out: 0.0,
        hidden_activation: Activation::Sigmoid,
        output_activation: Activation::Linear,
    })
}

pub fn forward(m: &TdannModel, window: &[f64]) -> Result<f64> {
    if window.len() != m.window_len() {
        return Err(Error::dimension("forward window", m.window_len(), window.len()));
    }
    Ok(m.forward_unchecked(window))
}

/// The `d` input samples preceding the first predicted sample, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayState {
    past: Vec<f64>,
}

impl DelayState {
    pub fn new(past: Vec<f64>) -> Result<Self> {
        if !past.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("delay state must be finite".into()));
        }
        Ok(Self { past })
    }

    pub fn zeros(d: usize) -> Self {
        Self { past: vec![0.0; d] }
    }

    /// Primes with the first `d` samples of `input` itself, the convention used
    /// when a recorded segment is replayed through a freshly loaded network.
    pub fn from_input_head(input: &[f64], d: usize) -> Result<Self> {
        if input.len() < d {
            return Err(Error::Range(format!(
                "cannot prime {d} delays from a {}-sample input",
                input.len()
            )));
        }
        Self::new(input[..d].iter().rev().copied().collect())
    }

    pub fn for_policy(policy: PrimePolicy, input: &[f64], d: usize) -> Result<Self> {
        match policy {
            PrimePolicy::Zeros => Ok(Self::zeros(d)),
            PrimePolicy::InputHead => Self::from_input_head(input, d),
        }
    }

    pub fn len(&self) -> usize {
        self.past.len()
    }

    pub fn is_empty(&self) -> bool {
        self.past.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.past
    }
}

/// How the tapped delay line is filled before the first prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimePolicy {
    Zeros,
    #[default]
    #[serde(rename = "from-input-head", alias = "input-head")]
    InputHead,
}

impl std::str::FromStr for PrimePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(PrimePolicy::Zeros),
            "from-input-head" | "input-head" => Ok(PrimePolicy::InputHead),
            other => Err(Error::InvalidInput(format!("unknown prime policy {other:?}"))),
        }
    }
}

impl std::fmt::Display for PrimePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PrimePolicy::Zeros => "zeros",
            PrimePolicy::InputHead => "from-input-head",
        })
    }
}

/// Runs `f` over every causal window of `input`, filling missing history
/// from `prime`. Output has the same length as `input`.
pub fn map_causal_windows<F>(input: &[f64], prime: &DelayState, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let d = prime.len();
    let mut window = vec![0.0; d + 1];
    let mut out = Vec::with_capacity(input.len());
    for t in 0..input.len() {
        for (j, slot) in window.iter_mut().enumerate() {
            *slot = if j <= t {
                input[t - j]
            } else {
                prime.past[j - t - 1]
            };
        }
        out.push(f(&window));
    }
    out
}

pub fn predict_series(m: &TdannModel, input: &TimeSeries, prime: &DelayState) -> Result<TimeSeries> {
    if prime.len() != m.delay() {
        return Err(Error::dimension("delay state", m.delay(), prime.len()));
    }
    let out = map_causal_windows(input.samples(), prime, |w| m.forward_unchecked(w));
    let mut ts = TimeSeries::new(out)?.with_label("prediction");
    if let Some(hz) = input.sample_rate_hz() {
        ts = ts.with_sample_rate(hz)?;
    }
    Ok(ts)
}

/// Analytic Jacobian of the predictions over `x` with respect to the flattened
/// parameter vector (one row per sample).
pub fn jacobian(m: &TdannModel, x: &DelayMatrix) -> Result<DMatrix<f64>> {
    if x.cols() != m.window_len() {
        return Err(Error::dimension("jacobian input columns", m.window_len(), x.cols()));
    }
    let p = m.param_count();
    let mut jac = DMatrix::zeros(x.rows(), p);
    let mut row = vec![0.0; p];
    for (r, window) in x.iter_rows().enumerate() {
        m.gradient_unchecked(window, &mut row);
        for (c, v) in row.iter().enumerate() {
            jac[(r, c)] = *v;
        }
    }
    Ok(jac)
}

/// On-disk representation of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub d: usize,
    pub n_hidden: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub window_order: String,
    pub w_in: Vec<Vec<f64>>,
    pub b_hidden: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
    #[serde(default)]
    pub training_metadata: serde_json::Map<String, serde_json::Value>,
}

const WINDOW_ORDER: &str = "newest_first";

impl ModelFile {
    pub fn new(model: &TdannModel, training_metadata: serde_json::Map<String, serde_json::Value>) -> Self {
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            d: model.d,
            n_hidden: model.n_hidden,
            hidden_activation: model.hidden_activation,
            output_activation: model.output_activation,
            window_order: WINDOW_ORDER.to_string(),
            w_in: (0..model.n_hidden).map(|i| model.w_in_row(i).to_vec()).collect(),
            b_hidden: model.b_hidden.clone(),
            w_out: model.w_out.clone(),
            b_out: model.b_out,
            training_metadata,
        }
    }

    pub fn to_model(&self) -> Result<TdannModel> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model schema_version {} (expected {MODEL_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.window_order != WINDOW_ORDER {
            return Err(Error::Schema(format!(
                "unsupported window_order {:?}",
                self.window_order
            )));
        }
        if self.n_hidden != self.w_in.len() {
            return Err(Error::dimension("n_hidden vs w_in rows", self.n_hidden, self.w_in.len()));
        }
        let m = TdannModel::from_parts(
            self.d,
            self.w_in.clone(),
            self.b_hidden.clone(),
            self.w_out.clone(),
            self.b_out,
        )?;
        Ok(m.with_activations(self.hidden_activation, self.output_activation))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // read the version first so a future schema fails with a clear message
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_SCHEMA_VERSION as u64 => Ok(serde_json::from_value(value)?),
            Some(v) => Err(Error::Schema(format!(
                "unsupported model schema_version {v} (expected {MODEL_SCHEMA_VERSION})"
            ))),
            None => Err(Error::Schema("model file lacks schema_version".into())),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
