//! Forward-model synthetic EEG: band-limited oscillatory sources mixed onto
//! the sensors, task-locked amplitude suppression (ERD), pink background
//! noise. Every sample is a pure function of the spec and its seeds.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{extract_epochs, Class, DataError, Marker, Recording, Window, DEFAULT_MONTAGE};
use crate::dsp::SPECTRAL_BAND_HZ;

pub const CUE_LABEL: &str = "start";
pub const END_LABEL: &str = "stop";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: field `{field}` {reason}")]
    InvalidField { field: String, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SynthError {
    SynthError::InvalidField { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub center_hz: f64,
    /// Full width of the flat passband around `center_hz`.
    pub bandwidth_hz: f64,
    /// Task amplitude is scaled by `1 - modulation`.
    pub modulation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mixing {
    /// Orthonormal columns times gains spread over `[1, max_condition]`.
    Random { seed: u64, max_condition: f64 },
    /// Row-major `[channel][source]`.
    Explicit { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeSpec {
    pub rate_per_s: f64,
    /// In units of the channel's standard deviation.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_channels: usize,
    pub channel_labels: Option<Vec<String>>,
    pub mixing: Mixing,
    pub sources: Vec<SourceSpec>,
    /// Ratio of source to pink-noise power within 6–32 Hz at rest.
    pub snr_db: f64,
    pub n_trials: usize,
    pub iti_s: f64,
    /// Uniform extra ITI in `[0, iti_jitter_s)`.
    pub iti_jitter_s: f64,
    pub task_s: f64,
    pub lead_in_s: f64,
    pub tail_s: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
    pub spikes: Option<SpikeSpec>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_channels: DEFAULT_MONTAGE.len(),
            channel_labels: None,
            mixing: Mixing::Random { seed: 1, max_condition: 5.0 },
            sources: vec![SourceSpec { center_hz: 11.0, bandwidth_hz: 2.0, modulation: 0.8 }],
            snr_db: 5.0,
            n_trials: 40,
            iti_s: 4.0,
            iti_jitter_s: 0.5,
            task_s: 4.0,
            lead_in_s: 2.0,
            tail_s: 1.0,
            sample_rate_hz: 256.0,
            seed: 0,
            spikes: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_channels == 0 {
            return Err(invalid("n_channels", "must be at least 1"));
        }
        if let Some(labels) = &self.channel_labels {
            if labels.len() != self.n_channels {
                return Err(invalid("channel_labels", format!("has {} entries for {} channels", labels.len(), self.n_channels)));
            }
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(invalid("sample_rate_hz", "must be positive"));
        }
        if self.sources.is_empty() {
            return Err(invalid("sources", "must list at least one source"));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.modulation) {
                return Err(invalid(format!("sources[{i}].modulation"), format!("must lie in [0, 1], got {}", s.modulation)));
            }
            if !(s.bandwidth_hz > 0.0 && s.center_hz - s.bandwidth_hz / 2.0 > 0.0) {
                return Err(invalid(format!("sources[{i}].bandwidth_hz"), "must be positive and keep the band above 0 Hz"));
            }
            if !(self.sample_rate_hz > 2.0 * (s.center_hz + s.bandwidth_hz)) {
                return Err(invalid(
                    "sample_rate_hz",
                    format!("must exceed 2·(center + bandwidth) = {} Hz", 2.0 * (s.center_hz + s.bandwidth_hz)),
                ));
            }
        }
        match &self.mixing {
            Mixing::Random { max_condition, .. } => {
                if !(*max_condition >= 1.0) {
                    return Err(invalid("mixing.max_condition", "must be at least 1"));
                }
                if self.sources.len() > self.n_channels {
                    return Err(invalid("sources", "more sources than channels"));
                }
            }
            Mixing::Explicit { rows } => {
                if rows.len() != self.n_channels || rows.iter().any(|r| r.len() != self.sources.len()) {
                    return Err(invalid("mixing.rows", "must be n_channels rows of one entry per source"));
                }
                if rows.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(invalid("mixing.rows", "must be finite"));
                }
            }
        }
        if !self.snr_db.is_finite() {
            return Err(invalid("snr_db", "must be finite"));
        }
        if self.n_trials == 0 {
            return Err(invalid("n_trials", "must be at least 1"));
        }
        for (name, v) in [("iti_s", self.iti_s), ("task_s", self.task_s)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, "must be positive"));
            }
        }
        for (name, v) in [("iti_jitter_s", self.iti_jitter_s), ("lead_in_s", self.lead_in_s), ("tail_s", self.tail_s)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, "must be non-negative"));
            }
        }
        if let Some(sp) = &self.spikes {
            if !(sp.rate_per_s >= 0.0 && sp.amplitude.is_finite()) {
                return Err(invalid("spikes", "rate must be non-negative and amplitude finite"));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        match &self.channel_labels {
            Some(l) => l.clone(),
            None if self.n_channels == DEFAULT_MONTAGE.len() => DEFAULT_MONTAGE.iter().map(|s| s.to_string()).collect(),
            None => (1..=self.n_channels).map(|i| format!("ch{i}")).collect(),
        }
    }

    /// Channel × source mixing matrix.
    pub fn mixing_matrix(&self) -> DMatrix<f64> {
        let k = self.sources.len();
        match &self.mixing {
            Mixing::Explicit { rows } => DMatrix::from_fn(self.n_channels, k, |i, j| rows[i][j]),
            Mixing::Random { seed, max_condition } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let d = self.n_channels;
                let g = DMatrix::from_fn(d, d, |_, _| normal(&mut rng));
                let qr = g.qr();
                let mut q = qr.q();
                let r = qr.r();
                for j in 0..d {
                    if r[(j, j)] < 0.0 {
                        q.column_mut(j).neg_mut();
                    }
                }
                let gains: Vec<f64> = if k == 1 {
                    vec![1.0]
                } else {
                    (0..k).map(|j| 1.0 + (max_condition - 1.0) * j as f64 / (k - 1) as f64).collect()
                };
                DMatrix::from_fn(d, k, |i, j| q[(i, j)] * gains[j])
            }
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Cue sample indices and the total session length.
fn layout(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (Vec<usize>, usize, usize) {
    let fs = spec.sample_rate_hz;
    let task_len = (spec.task_s * fs).round() as usize;
    let mut t = (spec.lead_in_s * fs).round() as usize;
    let mut cues = Vec::with_capacity(spec.n_trials);
    for _ in 0..spec.n_trials {
        let jitter = if spec.iti_jitter_s > 0.0 { rng.random_range(0.0..spec.iti_jitter_s) } else { 0.0 };
        t += ((spec.iti_s + jitter) * fs).round() as usize;
        cues.push(t);
        t += task_len;
    }
    t += (spec.tail_s * fs).round() as usize;
    (cues, task_len, t)
}

/// Gaussian noise shaped in the frequency domain; `gain(f)` multiplies each
/// bin's amplitude. Rescaled to unit population variance.
fn shaped_noise(rng: &mut ChaCha8Rng, n: usize, fs: f64, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..n).map(|_| Complex64::new(normal(rng), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs / n as f64;
        *v *= gain(f);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// Fraction of a unit-variance 1/f noise's power that falls in `band`.
fn pink_band_fraction(n: usize, fs: f64, band: (f64, f64)) -> f64 {
    let mut total = 0.0;
    let mut inside = 0.0;
    for k in 1..n {
        let f = k.min(n - k) as f64 * fs / n as f64;
        total += 1.0 / f;
        if f >= band.0 && f <= band.1 {
            inside += 1.0 / f;
        }
    }
    inside / total
}

/// Everything drawn for one session.
#[derive(Debug, Clone)]
pub struct Realization {
    pub recording: Recording,
    /// Source × time, after task suppression.
    pub sources: DMatrix<f64>,
    pub mixing: DMatrix<f64>,
    pub cues: Vec<usize>,
}

pub fn realize(spec: &SynthSpec) -> Result<Realization, SynthError> {
    spec.validate()?;
    let fs = spec.sample_rate_hz;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (cues, task_len, n) = layout(spec, &mut rng);
    let mixing = spec.mixing_matrix();

    let k = spec.sources.len();
    let mut sources = DMatrix::zeros(k, n);
    for (j, s) in spec.sources.iter().enumerate() {
        let (lo, hi) = (s.center_hz - s.bandwidth_hz / 2.0, s.center_hz + s.bandwidth_hz / 2.0);
        let x = shaped_noise(&mut rng, n, fs, |f| if f >= lo && f <= hi { 1.0 } else { 0.0 });
        let mut row = DVector::from_vec(x);
        for &c in &cues {
            row.rows_mut(c, task_len).scale_mut(1.0 - s.modulation);
        }
        sources.set_row(j, &row.transpose());
    }

    let signal_power: f64 = (0..k).map(|j| mixing.column(j).norm_squared()).sum();
    let noise_in_band = signal_power / 10f64.powf(spec.snr_db / 10.0);
    let frac = pink_band_fraction(n, fs, SPECTRAL_BAND_HZ);
    let per_channel_sd = (noise_in_band / frac / spec.n_channels as f64).sqrt();

    let mut samples = &mixing * &sources;
    for ch in 0..spec.n_channels {
        let noise = shaped_noise(&mut rng, n, fs, |f| if f > 0.0 { f.powf(-0.5) } else { 0.0 });
        for (v, e) in samples.row_mut(ch).iter_mut().zip(noise) {
            *v += per_channel_sd * e;
        }
    }
    if let Some(sp) = &spec.spikes {
        let count = (sp.rate_per_s * n as f64 / fs).round() as usize;
        for _ in 0..count {
            let ch = rng.random_range(0..spec.n_channels);
            let t = rng.random_range(0..n);
            let row = samples.row(ch);
            let sd = (row.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            samples[(ch, t)] += sp.amplitude * sd;
        }
    }

    let mut markers = Vec::with_capacity(2 * cues.len());
    for &c in &cues {
        markers.push(Marker::new(c, CUE_LABEL));
        markers.push(Marker::new(c + task_len, END_LABEL));
    }
    let recording = Recording::new(spec.labels(), fs, samples, markers)?;
    Ok(Realization { recording, sources, mixing, cues })
}

pub fn generate_session(spec: &SynthSpec) -> Result<Recording, SynthError> {
    Ok(realize(spec)?.recording)
}

/// Mixing columns of the modulated sources and each epoch's realized
/// source power, in the trial order [`extract_epochs`] produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Indices into `spec.sources` with nonzero modulation.
    pub source_indices: Vec<usize>,
    pub patterns: Vec<Vec<f64>>,
    pub labels: Vec<Class>,
    /// `[trial][relevant source]` population variance within the epoch.
    pub trial_powers: Vec<Vec<f64>>,
}

pub fn ground_truth(spec: &SynthSpec, task_window: Window, rest_window: Window) -> Result<GroundTruth, SynthError> {
    let real = realize(spec)?;
    let source_indices: Vec<usize> =
        spec.sources.iter().enumerate().filter(|(_, s)| s.modulation > 0.0).map(|(i, _)| i).collect();
    let src_labels = (0..spec.sources.len()).map(|i| format!("s{i}")).collect();
    let src_rec = Recording::new(src_labels, spec.sample_rate_hz, real.sources.clone(), real.recording.markers().to_vec())?;
    let epochs = extract_epochs(&src_rec, CUE_LABEL, task_window, rest_window)?.epochs;
    let trial_powers = epochs
        .trials()
        .iter()
        .map(|t| {
            source_indices
                .iter()
                .map(|&j| {
                    let row = t.row(j);
                    let mean = row.mean();
                    row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64
                })
                .collect()
        })
        .collect();
    Ok(GroundTruth {
        patterns: source_indices.iter().map(|&j| real.mixing.column(j).iter().copied().collect()).collect(),
        source_indices,
        labels: epochs.labels().to_vec(),
        trial_powers,
    })
}
