//! Deterministic synthetic input/output pairs standing in for patient
//! recordings.
//!
//! Every generator draws `history` extra leading input samples, computes the
//! output from complete histories and then drops them, so each output sample
//! depends only on real input samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{map_causal_windows, DelayState, ModelFile, TdannModel};
use crate::signal::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoCardiacRhythm {
    /// Spiky beats: a narrow depolarization pulse and a broad repolarization wave.
    Normal,
    /// Rapid sinusoidal morphology.
    Flutter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticKind {
    /// `output(t) = Σ_k taps[k]·input(t-k)` over band-limited noise input.
    FirLinear {
        taps: Vec<f64>,
        /// AR(1) pole of the unit-variance input noise, in `[0, 1)`.
        #[serde(default = "default_pole")]
        input_pole: f64,
    },
    /// Output of a randomly drawn network with parameters uniform in
    /// `[-weight_scale, weight_scale]`.
    TeacherTdann {
        n_hidden: usize,
        d: usize,
        #[serde(default = "default_weight_scale")]
        weight_scale: f64,
        #[serde(default = "default_pole")]
        input_pole: f64,
    },
    /// Periodic beats passed through a smoothing-plus-delay transfer with a
    /// saturating nonlinearity.
    PseudoCardiac {
        rhythm: PseudoCardiacRhythm,
        beat_period: usize,
        /// Width (standard deviation, samples) of the depolarization pulse.
        #[serde(default = "default_pulse_width")]
        pulse_width: f64,
        /// Pure transport delay from input to output, in samples.
        #[serde(default = "default_transfer_delay")]
        transfer_delay: usize,
        /// Length of the moving-average smoothing kernel.
        #[serde(default = "default_smoothing")]
        smoothing: usize,
    },
}

fn default_pole() -> f64 {
    0.5
}
fn default_weight_scale() -> f64 {
    2.0
}
fn default_pulse_width() -> f64 {
    2.0
}
fn default_transfer_delay() -> usize {
    3
}
fn default_smoothing() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub length: usize,
    pub noise_rms: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Longest input history any output sample depends on.
    pub fn max_delay(&self) -> usize {
        match &self.kind {
            SyntheticKind::FirLinear { taps, .. } => taps.len().saturating_sub(1),
            SyntheticKind::TeacherTdann { d, .. } => *d,
            SyntheticKind::PseudoCardiac {
                transfer_delay,
                smoothing,
                ..
            } => transfer_delay + smoothing + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.noise_rms.is_finite() && self.noise_rms >= 0.0) {
            return bad(format!("noise_rms must be finite and >= 0, got {}", self.noise_rms));
        }
        let need = 10 * self.max_delay().max(1);
        if self.length < need {
            return bad(format!("length {} is below 10 x max delay ({need})", self.length));
        }
        match &self.kind {
            SyntheticKind::FirLinear { taps, input_pole } => {
                if taps.is_empty() || !taps.iter().all(|t| t.is_finite()) {
                    return bad("FIR taps must be non-empty and finite".into());
                }
                check_pole(*input_pole)?;
            }
            SyntheticKind::TeacherTdann {
                n_hidden,
                weight_scale,
                input_pole,
                ..
            } => {
                if *n_hidden == 0 {
                    return bad("teacher needs at least one hidden neuron".into());
                }
                if !(weight_scale.is_finite() && *weight_scale > 0.0) {
                    return bad("teacher weight_scale must be > 0".into());
                }
                check_pole(*input_pole)?;
            }
            SyntheticKind::PseudoCardiac {
                beat_period,
                pulse_width,
                smoothing,
                ..
            } => {
                if *beat_period < 4 {
                    return bad("beat_period must be at least 4 samples".into());
                }
                if !(pulse_width.is_finite() && *pulse_width > 0.0) {
                    return bad("pulse_width must be > 0".into());
                }
                if *smoothing == 0 {
                    return bad("smoothing kernel needs at least one tap".into());
                }
            }
        }
        Ok(())
    }
}

fn check_pole(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("input_pole must lie in [0, 1), got {p}")))
    }
}

/// What the output was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticSpec,
    /// Standard deviation of the noise-free output.
    pub clean_output_rms: f64,
    /// Present for teacher-network data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<ModelFile>,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub input: TimeSeries,
    pub output: TimeSeries,
    /// Output before noise was added.
    pub clean_output: Vec<f64>,
    pub ground_truth: GroundTruth,
}

/// Unit-variance AR(1) noise.
fn band_limited_noise(rng: &mut ChaCha8Rng, n: usize, pole: f64) -> Vec<f64> {
    let gain = (1.0 - pole * pole).sqrt();
    let mut prev: f64 = StandardNormal.sample(rng);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(prev);
        let e: f64 = StandardNormal.sample(rng);
        prev = pole * prev + gain * e;
    }
    out
}

fn draw_teacher(rng: &mut ChaCha8Rng, d: usize, n: usize, scale: f64) -> Result<TdannModel> {
    let dist = Uniform::new_inclusive(-scale, scale).expect("scale validated > 0");
    let mut draw = || dist.sample(rng);
    let w_in = (0..n).map(|_| (0..=d).map(|_| draw()).collect()).collect();
    let b_hidden = (0..n).map(|_| draw()).collect();
    let w_out = (0..n).map(|_| draw()).collect();
    let b_out = draw();
    TdannModel::from_parts(d, w_in, b_hidden, w_out, b_out)
}

fn pseudo_cardiac_input(rhythm: PseudoCardiacRhythm, n: usize, period: usize, width: f64) -> Vec<f64> {
    let p = period as f64;
    (0..n)
        .map(|t| {
            let phase = (t % period) as f64;
            match rhythm {
                PseudoCardiacRhythm::Normal => {
                    let centre = p * 0.2;
                    let t_wave = p * 0.55;
                    let qrs = (-0.5 * ((phase - centre) / width).powi(2)).exp();
                    let repol = 0.3 * (-0.5 * ((phase - t_wave) / (3.0 * width)).powi(2)).exp();
                    qrs + repol
                }
                PseudoCardiacRhythm::Flutter => {
                    let w = 2.0 * std::f64::consts::PI * phase / p;
                    0.8 * w.sin() + 0.2 * (2.0 * w).sin()
                }
            }
        })
        .collect()
}

/// Generates an input/output pair; deterministic in `spec.seed`.
pub fn generate(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let history = spec.max_delay();
    let total = spec.length + history;
    let mut teacher_file = None;

    let (raw_input, raw_output): (Vec<f64>, Vec<f64>) = match &spec.kind {
        SyntheticKind::FirLinear { taps, input_pole } => {
            let u = band_limited_noise(&mut rng, total, *input_pole);
            let y = (0..total)
                .map(|t| {
                    taps.iter()
                        .enumerate()
                        .filter(|(k, _)| *k <= t)
                        .map(|(k, w)| w * u[t - k])
                        .sum()
                })
                .collect();
            (u, y)
        }
        SyntheticKind::TeacherTdann {
            n_hidden,
            d,
            weight_scale,
            input_pole,
        } => {
            let teacher = draw_teacher(&mut rng, *d, *n_hidden, *weight_scale)?;
            let u = band_limited_noise(&mut rng, total, *input_pole);
            let y = map_causal_windows(&u, &DelayState::zeros(*d), |w| teacher.forward_unchecked(w));
            teacher_file = Some(ModelFile::new(&teacher, Default::default()));
            (u, y)
        }
        SyntheticKind::PseudoCardiac {
            rhythm,
            beat_period,
            pulse_width,
            transfer_delay,
            smoothing,
        } => {
            let u = pseudo_cardiac_input(*rhythm, total, *beat_period, *pulse_width);
            let smoothed: Vec<f64> = (0..total)
                .map(|t| {
                    let taps = (0..*smoothing).filter(|k| k + transfer_delay <= t);
                    taps.map(|k| u[t - transfer_delay - k]).sum::<f64>() / *smoothing as f64
                })
                .collect();
            let y = (0..total)
                .map(|t| {
                    let slope = if t >= 1 { smoothed[t] - smoothed[t - 1] } else { 0.0 };
                    (1.5 * smoothed[t]).tanh() - 2.0 * slope
                })
                .collect();
            (u, y)
        }
    };

    let clean: Vec<f64> = raw_output[history..].to_vec();
    let mean = clean.iter().sum::<f64>() / clean.len() as f64;
    let clean_output_rms = (clean.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / clean.len() as f64).sqrt();
    let noisy: Vec<f64> = clean
        .iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            v + spec.noise_rms * e
        })
        .collect();

    Ok(Synthetic {
        input: TimeSeries::new(raw_input[history..].to_vec())?.with_label("bsp"),
        output: TimeSeries::new(noisy)?.with_label("hsp"),
        clean_output: clean,
        ground_truth: GroundTruth {
            spec: spec.clone(),
            clean_output_rms,
            teacher: teacher_file,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::autocorrelation;

    fn fir(taps: Vec<f64>, noise: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            kind: SyntheticKind::FirLinear {
                taps,
                input_pole: 0.5,
            },
            length: 500,
            noise_rms: noise,
            seed,
        }
    }

    #[test]
    fn unit_tap_delays_input() {
        let s = generate(&fir(vec![0.0, 0.0, 1.0], 0.0, 4)).unwrap();
        let u = s.input.samples();
        let y = s.output.samples();
        for t in 2..u.len() {
            assert_eq!(y[t], u[t - 2]);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::TeacherTdann {
                n_hidden: 3,
                d: 2,
                weight_scale: 2.0,
                input_pole: 0.3,
            },
            length: 300,
            noise_rms: 0.1,
            seed: 11,
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.input, b.input);
        assert_eq!(a.output, b.output);
        assert_eq!(a.ground_truth, b.ground_truth);
        let c = generate(&SyntheticSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.output, c.output);
    }

    #[test]
    fn teacher_output_matches_teacher_model() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::TeacherTdann {
                n_hidden: 2,
                d: 3,
                weight_scale: 1.0,
                input_pole: 0.0,
            },
            length: 100,
            noise_rms: 0.0,
            seed: 1,
        };
        let s = generate(&spec).unwrap();
        let teacher = s.ground_truth.teacher.as_ref().unwrap().to_model().unwrap();
        let u = s.input.samples();
        for t in 3..u.len() {
            let w: Vec<f64> = (0..=3).map(|j| u[t - j]).collect();
            assert_eq!(s.output.samples()[t], teacher.forward_unchecked(&w));
        }
    }

    #[test]
    fn pseudo_cardiac_period_is_visible_in_autocorrelation() {
        for (rhythm, period) in [(PseudoCardiacRhythm::Normal, 60), (PseudoCardiacRhythm::Flutter, 23)] {
            let spec = SyntheticSpec {
                kind: SyntheticKind::PseudoCardiac {
                    rhythm,
                    beat_period: period,
                    pulse_width: 2.0,
                    transfer_delay: 3,
                    smoothing: 3,
                },
                length: 3000,
                noise_rms: 0.0,
                seed: 0,
            };
            let s = generate(&spec).unwrap();
            let r = autocorrelation(&s.input, 2 * period).unwrap();
            let search = period / 2..=3 * period / 2;
            let peak = search.clone().max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
            assert_eq!(peak, period, "{rhythm:?}");
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = fir(vec![1.0; 100], 0.0, 0);
        assert!(s.validate().is_err(), "length below 10 x delay");
        s.kind = SyntheticKind::FirLinear {
            taps: vec![],
            input_pole: 0.5,
        };
        assert!(s.validate().is_err());
        let s = fir(vec![1.0], -0.1, 0);
        assert!(s.validate().is_err());
        let s = fir(vec![1.0], f64::NAN, 0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = fir(vec![0.0, 0.0, 0.8], 0.08, 3);
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"kind\":\"fir_linear\""));
        let back: SyntheticSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
