//! Time-series primitives: detrending, slicing, concatenation, autocorrelation
//! and tapped-delay regressor construction.
//!
//! User-facing indices (`SegmentBounds`) are 1-based and inclusive; everything
//! else in this module works with ordinary slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A uniformly sampled, finite, non-empty real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    samples: Vec<f64>,
    sample_rate_hz: Option<f64>,
    label: String,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("time series must hold at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sample {} is not finite ({})",
                i + 1,
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz: None,
            label: String::new(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_sample_rate(mut self, hz: f64) -> Result<Self> {
        if !(hz.is_finite() && hz > 0.0) {
            return Err(Error::InvalidInput(format!("sample rate must be > 0, got {hz}")));
        }
        self.sample_rate_hz = Some(hz);
        Ok(self)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> Option<f64> {
        self.sample_rate_hz
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Replaces the samples while keeping label and rate metadata.
    fn map_samples(&self, samples: Vec<f64>) -> Result<Self> {
        let mut out = TimeSeries::new(samples)?;
        out.sample_rate_hz = self.sample_rate_hz;
        out.label = self.label.clone();
        Ok(out)
    }
}

/// Inclusive 1-based sample range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawBounds", into = "RawBounds")]
pub struct SegmentBounds {
    start: usize,
    end: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBounds {
    start: usize,
    end: usize,
}

impl TryFrom<RawBounds> for SegmentBounds {
    type Error = Error;

    fn try_from(raw: RawBounds) -> Result<Self> {
        SegmentBounds::new(raw.start, raw.end)
    }
}

impl From<SegmentBounds> for RawBounds {
    fn from(b: SegmentBounds) -> Self {
        RawBounds {
            start: b.start,
            end: b.end,
        }
    }
}

impl SegmentBounds {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start < 1 || start > end {
            return Err(Error::Range(format!(
                "segment bounds must satisfy 1 <= start <= end, got ({start}, {end})"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &SegmentBounds) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Removes the least-squares straight line from the series.
pub fn detrend(ts: &TimeSeries) -> Result<TimeSeries> {
    let y = ts.samples();
    let n = y.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "detrend needs at least 2 samples, got {n}"
        )));
    }
    let t_mean = (n as f64 - 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, &v) in y.iter().enumerate() {
        let dt = i as f64 - t_mean;
        sxy += dt * (v - y_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    let out = y
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - y_mean) - slope * (i as f64 - t_mean))
        .collect();
    ts.map_samples(out)
}

pub fn slice(ts: &TimeSeries, b: SegmentBounds) -> Result<TimeSeries> {
    if b.end() > ts.len() {
        return Err(Error::Range(format!(
            "segment ({}, {}) exceeds series length {}",
            b.start(),
            b.end(),
            ts.len()
        )));
    }
    ts.map_samples(ts.samples()[b.start() - 1..b.end()].to_vec())
}

pub fn concat(a: &TimeSeries, b: &TimeSeries) -> Result<TimeSeries> {
    let rate = match (a.sample_rate_hz(), b.sample_rate_hz()) {
        (Some(x), Some(y)) if x != y => {
            return Err(Error::InvalidInput(format!(
                "cannot concatenate series sampled at {x} Hz and {y} Hz"
            )))
        }
        (x, y) => x.or(y),
    };
    let mut samples = Vec::with_capacity(a.len() + b.len());
    samples.extend_from_slice(a.samples());
    samples.extend_from_slice(b.samples());
    let mut out = a.map_samples(samples)?;
    out.sample_rate_hz = rate;
    Ok(out)
}

/// Concatenates one or more series in order.
pub fn concat_all<'a, I>(parts: I) -> Result<TimeSeries>
where
    I: IntoIterator<Item = &'a TimeSeries>,
{
    let mut iter = parts.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::InvalidInput("nothing to concatenate".into()))?;
    iter.try_fold(first.clone(), |acc, next| concat(&acc, next))
}

/// Normalized biased autocorrelation `r(0..=max_lag)` of the mean-removed series.
pub fn autocorrelation(ts: &TimeSeries, max_lag: usize) -> Result<Vec<f64>> {
    let n = ts.len();
    if max_lag >= n {
        return Err(Error::Range(format!(
            "max_lag {max_lag} must be below series length {n}"
        )));
    }
    let mean = ts.samples().iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = ts.samples().iter().map(|v| v - mean).collect();
    let c0: f64 = centered.iter().map(|v| v * v).sum();
    let scale = ts.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // rounding noise of the mean removal counts as zero variance
    if c0 <= n as f64 * (16.0 * f64::EPSILON * scale).powi(2) || c0 == 0.0 {
        return Err(Error::DegenerateSignal(
            "autocorrelation of a zero-variance series".into(),
        ));
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    out.push(1.0);
    for k in 1..=max_lag {
        let ck: f64 = centered[k..]
            .iter()
            .zip(&centered[..n - k])
            .map(|(a, b)| a * b)
            .sum();
        out.push((ck / c0).clamp(-1.0, 1.0));
    }
    Ok(out)
}

/// Tapped-delay regressors. Row `t` holds `[u(t), u(t-1), ..., u(t-d)]`
/// for every `t` with a full history, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DelayMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Delay window `d` (one less than the column count).
    pub fn delay(&self) -> usize {
        self.cols - 1
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    /// Builds a matrix from explicit rows (all of equal length).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if cols == 0 {
            return Err(Error::InvalidInput("delay matrix needs at least one column".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dimension("delay matrix row", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }
}

pub fn build_delay_matrix(ts: &TimeSeries, d: usize) -> Result<DelayMatrix> {
    let u = ts.samples();
    if d >= u.len() {
        return Err(Error::Range(format!(
            "delay window {d} must be below series length {}",
            u.len()
        )));
    }
    let cols = d + 1;
    let rows = u.len() - d;
    let mut data = Vec::with_capacity(rows * cols);
    for t in d..u.len() {
        data.extend(u[t - d..=t].iter().rev());
    }
    Ok(DelayMatrix { rows, cols, data })
}
