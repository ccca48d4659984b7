//! IIR filter design and application, decimation, filter banks and
//! Welch cross-spectra.
//!
//! Butterworth filters are designed in zero-pole-gain form from the analog
//! prototype, mapped with a prewarped bilinear transform and realised as
//! cascaded second-order sections. `order` follows the usual convention of
//! the prototype order, so an order-2 bandpass has four poles.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Class, DataError, EpochSet, Recording};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid band [{low_hz}, {high_hz}] Hz for fs = {fs_hz} Hz (need 0 < low < high < fs/2)")]
    InvalidBand { low_hz: f64, high_hz: f64, fs_hz: f64 },
    #[error("filter order must be at least 1")]
    InvalidOrder,
    #[error("decimation factor must be at least 1")]
    InvalidFactor,
    #[error("filter bank width must be positive, got {0}")]
    InvalidWidth(f64),
    #[error("epochs of {n_samples} samples are shorter than one {window_len}-sample spectral window")]
    EpochTooShort { n_samples: usize, window_len: usize },
    #[error("spectral resolution must be positive, got {0}")]
    InvalidResolution(f64),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterKind {
    Bandpass,
    Lowpass,
}

/// One second-order section, `b = [b0, b1, b2]`, `a = [1, a1, a2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

/// Digital IIR filter. `b`/`a` hold the expanded transfer function
/// (`a[0] == 1`); `sections` is the factored form used for filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IirFilter {
    pub kind: FilterKind,
    pub order: usize,
    pub band_hz: (f64, f64),
    pub fs_hz: f64,
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub sections: Vec<Biquad>,
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    let k = 2.0 * fs;
    (k + s) / (k - s)
}

fn prewarp(f_hz: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f_hz / fs).tan()
}

/// Left-half-plane poles of the normalised analog Butterworth prototype.
fn prototype_poles(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

/// Groups poles into conjugate pairs (or pairs of reals) and attaches zeros.
fn build_sections(poles: &[Complex64], zeros: &[f64]) -> Vec<Biquad> {
    const EPS: f64 = 1e-12;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > EPS).collect();
    complex.sort_by(|x, y| x.arg().total_cmp(&y.arg()));
    let mut reals: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= EPS).map(|p| p.re).collect();
    reals.sort_by(f64::total_cmp);

    let mut zeros = zeros.iter().copied();
    let mut sections = Vec::new();
    for p in complex {
        let (z1, z2) = (zeros.next().unwrap_or(0.0), zeros.next());
        let b = match z2 {
            Some(z2) => [1.0, -(z1 + z2), z1 * z2],
            None => [1.0, -z1, 0.0],
        };
        sections.push(Biquad { b, a: [1.0, -2.0 * p.re, p.norm_sqr()] });
    }
    for pair in reals.chunks(2) {
        let z1 = zeros.next().unwrap_or(0.0);
        if let [p1, p2] = *pair {
            let z2 = zeros.next().unwrap_or(0.0);
            sections.push(Biquad {
                b: [1.0, -(z1 + z2), z1 * z2],
                a: [1.0, -(p1 + p2), p1 * p2],
            });
        } else {
            sections.push(Biquad { b: [1.0, -z1, 0.0], a: [1.0, -pair[0], 0.0] });
        }
    }
    sections
}

fn poly_mul(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len() + y.len() - 1];
    for (i, xi) in x.iter().enumerate() {
        for (j, yj) in y.iter().enumerate() {
            out[i + j] += xi * yj;
        }
    }
    out
}

fn trim_trailing_zeros(mut v: Vec<f64>) -> Vec<f64> {
    while v.len() > 1 && v.last() == Some(&0.0) {
        v.pop();
    }
    v
}

fn poly_eval(coeffs: &[f64], z_inv: Complex64) -> Complex64 {
    // Σ c_k z^{-k} by Horner in z^{-1}.
    coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z_inv + c)
}

impl IirFilter {
    fn from_zpk(
        kind: FilterKind,
        order: usize,
        band_hz: (f64, f64),
        fs_hz: f64,
        poles: Vec<Complex64>,
        zeros: Vec<f64>,
        unit_gain_at_hz: f64,
    ) -> Self {
        let mut sections = build_sections(&poles, &zeros);
        let mut filter = Self {
            kind,
            order,
            band_hz,
            fs_hz,
            b: vec![1.0],
            a: vec![1.0],
            sections: Vec::new(),
        };
        let expand = |sections: &[Biquad]| {
            let mut b = vec![1.0];
            let mut a = vec![1.0];
            for s in sections {
                b = poly_mul(&b, &s.b);
                a = poly_mul(&a, &s.a);
            }
            (trim_trailing_zeros(b), trim_trailing_zeros(a))
        };
        let (b, a) = expand(&sections);
        filter.b = b;
        filter.a = a;
        let gain = filter.response(unit_gain_at_hz).norm();
        sections[0].b.iter_mut().for_each(|c| *c /= gain);
        let (b, a) = expand(&sections);
        filter.b = b;
        filter.a = a;
        filter.sections = sections;
        filter
    }

    /// Complex frequency response `H(e^{jω})` evaluated from `b` and `a`.
    pub fn response(&self, f_hz: f64) -> Complex64 {
        let omega = 2.0 * PI * f_hz / self.fs_hz;
        let z_inv = Complex64::from_polar(1.0, -omega);
        poly_eval(&self.b, z_inv) / poly_eval(&self.a, z_inv)
    }

    pub fn magnitude_db(&self, f_hz: f64) -> f64 {
        20.0 * self.response(f_hz).norm().log10()
    }

    /// Roots of the denominator polynomial via the companion matrix.
    pub fn poles_from_coefficients(&self) -> Vec<Complex64> {
        let n = self.a.len() - 1;
        if n == 0 {
            return Vec::new();
        }
        let companion = DMatrix::from_fn(n, n, |i, j| {
            if i == 0 {
                -self.a[j + 1] / self.a[0]
            } else if i == j + 1 {
                1.0
            } else {
                0.0
            }
        });
        companion.complex_eigenvalues().iter().copied().collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles_from_coefficients().iter().all(|p| p.norm() < 1.0)
    }

    /// Causal filtering from zero initial state (transposed direct form II
    /// per section).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[1] * out + z2;
                z2 = s.b[2] * input - s.a[2] * out;
                *v = out;
            }
        }
        y
    }

    /// Filters every row of a `channel × time` matrix.
    pub fn apply_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        let mut row = vec![0.0; x.ncols()];
        for r in 0..x.nrows() {
            for (t, v) in row.iter_mut().enumerate() {
                *v = x[(r, t)];
            }
            for (t, v) in self.apply(&row).into_iter().enumerate() {
                out[(r, t)] = v;
            }
        }
        out
    }
}

/// Butterworth bandpass with prewarped edges; unit gain at the band's
/// (warped) geometric centre.
pub fn design_butterworth_bandpass(
    order: usize,
    low_hz: f64,
    high_hz: f64,
    fs_hz: f64,
) -> Result<IirFilter, DspError> {
    if order == 0 {
        return Err(DspError::InvalidOrder);
    }
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs_hz / 2.0) {
        return Err(DspError::InvalidBand { low_hz, high_hz, fs_hz });
    }
    let w1 = prewarp(low_hz, fs_hz);
    let w2 = prewarp(high_hz, fs_hz);
    let bw = w2 - w1;
    let w0_sq = w1 * w2;
    let mut poles = Vec::with_capacity(2 * order);
    for p in prototype_poles(order) {
        let half = p * bw / 2.0;
        let disc = (half * half - w0_sq).sqrt();
        poles.push(bilinear(half + disc, fs_hz));
        poles.push(bilinear(half - disc, fs_hz));
    }
    // n zeros at s = 0 (z = 1) and n at s = ∞ (z = -1).
    let zeros: Vec<f64> = (0..order).flat_map(|_| [1.0, -1.0]).collect();
    let centre_hz = fs_hz / PI * (w0_sq.sqrt() / (2.0 * fs_hz)).atan();
    Ok(IirFilter::from_zpk(
        FilterKind::Bandpass,
        order,
        (low_hz, high_hz),
        fs_hz,
        poles,
        zeros,
        centre_hz,
    ))
}

/// Butterworth lowpass with prewarped cutoff; unit DC gain.
pub fn design_butterworth_lowpass(order: usize, cutoff_hz: f64, fs_hz: f64) -> Result<IirFilter, DspError> {
    if order == 0 {
        return Err(DspError::InvalidOrder);
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0) {
        return Err(DspError::InvalidBand { low_hz: 0.0, high_hz: cutoff_hz, fs_hz });
    }
    let wc = prewarp(cutoff_hz, fs_hz);
    let poles = prototype_poles(order).into_iter().map(|p| bilinear(p * wc, fs_hz)).collect();
    let zeros = vec![-1.0; order];
    Ok(IirFilter::from_zpk(FilterKind::Lowpass, order, (0.0, cutoff_hz), fs_hz, poles, zeros, 0.0))
}

/// Anything that can be run through a filter channel by channel.
pub trait Filterable: Sized {
    fn filtered(&self, filter: &IirFilter) -> Self;
}

impl Filterable for Recording {
    fn filtered(&self, filter: &IirFilter) -> Self {
        self.with_samples(filter.apply_rows(self.samples()))
            .expect("filtering preserves recording shape")
    }
}

impl Filterable for EpochSet {
    fn filtered(&self, filter: &IirFilter) -> Self {
        self.map_trials(|t| filter.apply_rows(t))
    }
}

/// Causal, zero-initial-state filtering of every channel (and trial).
pub fn filter_forward<T: Filterable>(filter: &IirFilter, x: &T) -> T {
    x.filtered(filter)
}

pub const ANTI_ALIAS_ORDER: usize = 8;

/// Anti-alias lowpass (order 8 at 0.8 × new Nyquist) then keep every
/// `factor`-th sample. Marker indices are divided by `factor`; markers that
/// land past the shortened recording are dropped.
pub fn decimate(rec: &Recording, factor: usize) -> Result<Recording, DspError> {
    if factor == 0 {
        return Err(DspError::InvalidFactor);
    }
    if factor == 1 {
        return Ok(rec.clone());
    }
    let fs = rec.sample_rate_hz();
    let new_fs = fs / factor as f64;
    let lowpass = design_butterworth_lowpass(ANTI_ALIAS_ORDER, 0.8 * new_fs / 2.0, fs)?;
    let smoothed = lowpass.apply_rows(rec.samples());
    let n_out = rec.n_samples() / factor;
    let samples = DMatrix::from_fn(rec.n_channels(), n_out, |c, t| smoothed[(c, t * factor)]);
    let markers: Vec<_> = rec
        .markers()
        .iter()
        .map(|m| crate::data::Marker::new(m.sample_index / factor, m.label.clone()))
        .filter(|m| m.sample_index < n_out)
        .collect();
    if markers.len() < rec.markers().len() {
        log::warn!("decimation dropped {} trailing markers", rec.markers().len() - markers.len());
    }
    Ok(Recording::new(rec.channel_labels().to_vec(), new_fs, samples, markers)?)
}

/// Contiguous `[low, high]` partition in steps of `width_hz`; a final band
/// narrower than 1 Hz is merged into its predecessor.
pub fn filter_bank_bands(low_hz: f64, high_hz: f64, width_hz: f64) -> Result<Vec<(f64, f64)>, DspError> {
    if !(width_hz > 0.0 && width_hz.is_finite()) {
        return Err(DspError::InvalidWidth(width_hz));
    }
    if !(low_hz < high_hz) {
        return Err(DspError::InvalidBand { low_hz, high_hz, fs_hz: f64::NAN });
    }
    let mut bands: Vec<(f64, f64)> = Vec::new();
    let mut k = 0usize;
    loop {
        let start = low_hz + k as f64 * width_hz;
        if start >= high_hz {
            break;
        }
        let end = (low_hz + (k + 1) as f64 * width_hz).min(high_hz);
        bands.push((start, end));
        k += 1;
    }
    if bands.len() > 1 {
        let last = bands[bands.len() - 1];
        if last.1 - last.0 < 1.0 {
            bands.pop();
            bands.last_mut().expect("predecessor exists").1 = last.1;
        }
    }
    Ok(bands)
}

/// One order-2 Butterworth bandpass per band of [`filter_bank_bands`].
pub fn make_filter_bank(low_hz: f64, high_hz: f64, width_hz: f64, fs_hz: f64) -> Result<Vec<IirFilter>, DspError> {
    filter_bank_bands(low_hz, high_hz, width_hz)?
        .into_iter()
        .map(|(lo, hi)| design_butterworth_bandpass(2, lo, hi, fs_hz))
        .collect()
}

/// Hann-windowed, 50 % overlap Welch estimator restricted to a set of bins.
#[derive(Clone)]
pub struct Welch {
    fs_hz: f64,
    window: Vec<f64>,
    step: usize,
    bins: Vec<usize>,
    scale: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Welch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Welch")
            .field("fs_hz", &self.fs_hz)
            .field("window_len", &self.window.len())
            .field("bins", &self.bins)
            .finish()
    }
}

impl Welch {
    /// Window length `round(fs / resolution)`; bins whose centre lies in
    /// `[band.0, band.1]`.
    pub fn new(fs_hz: f64, resolution_hz: f64, band_hz: (f64, f64)) -> Result<Self, DspError> {
        if !(resolution_hz > 0.0 && resolution_hz.is_finite()) {
            return Err(DspError::InvalidResolution(resolution_hz));
        }
        let len = (fs_hz / resolution_hz).round() as usize;
        if len < 2 {
            return Err(DspError::InvalidResolution(resolution_hz));
        }
        Ok(Self::with_window_len(fs_hz, len, band_hz))
    }

    pub fn with_window_len(fs_hz: f64, len: usize, band_hz: (f64, f64)) -> Self {
        // Periodic Hann.
        let window: Vec<f64> = (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect();
        let df = fs_hz / len as f64;
        let tol = 1e-9 * df;
        let bins = (0..=len / 2)
            .filter(|&k| {
                let f = k as f64 * df;
                f >= band_hz.0 - tol && f <= band_hz.1 + tol
            })
            .collect();
        let energy: f64 = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(len);
        Self { fs_hz, step: (len / 2).max(1), window, bins, scale: 1.0 / (fs_hz * energy), fft }
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn frequencies_hz(&self) -> Vec<f64> {
        let df = self.fs_hz / self.window.len() as f64;
        self.bins.iter().map(|&k| k as f64 * df).collect()
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    fn segment_starts(&self, n_samples: usize) -> impl Iterator<Item = usize> + '_ {
        let len = self.window.len();
        (0..).map(move |i| i * self.step).take_while(move |&s| s + len <= n_samples)
    }

    /// One-sided density weight for bin `k` (DC and Nyquist are not doubled).
    fn side_factor(&self, k: usize) -> f64 {
        let len = self.window.len();
        if k == 0 || (len % 2 == 0 && k == len / 2) {
            1.0
        } else {
            2.0
        }
    }

    /// Windowed spectra of each row for one segment, restricted to the bins.
    fn segment_spectra(&self, x: &DMatrix<f64>, start: usize, buf: &mut [Complex64]) -> DMatrix<Complex64> {
        let mut out = DMatrix::zeros(x.nrows(), self.bins.len());
        for r in 0..x.nrows() {
            for (n, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(x[(r, start + n)] * self.window[n], 0.0);
            }
            self.fft.process(buf);
            for (j, &k) in self.bins.iter().enumerate() {
                out[(r, j)] = buf[k];
            }
        }
        out
    }

    /// Per-bin cross-spectral matrices of one trial, averaged over segments.
    pub fn cross_spectrum(&self, x: &DMatrix<f64>) -> Result<Vec<DMatrix<Complex64>>, DspError> {
        let d = x.nrows();
        let mut acc = vec![DMatrix::<Complex64>::zeros(d, d); self.bins.len()];
        let count = self.accumulate(x, &mut acc)?;
        for m in &mut acc {
            *m /= Complex64::from(count as f64);
        }
        Ok(acc)
    }

    /// Adds segment cross-spectra of `x` to `acc`; returns the segment count.
    fn accumulate(&self, x: &DMatrix<f64>, acc: &mut [DMatrix<Complex64>]) -> Result<usize, DspError> {
        let len = self.window.len();
        if x.ncols() < len {
            return Err(DspError::EpochTooShort { n_samples: x.ncols(), window_len: len });
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        let mut count = 0;
        for start in self.segment_starts(x.ncols()) {
            let spec = self.segment_spectra(x, start, &mut buf);
            for (j, &k) in self.bins.iter().enumerate() {
                let col = spec.column(j);
                let w = self.side_factor(k) * self.scale;
                acc[j] += (&col * col.adjoint()) * Complex64::from(w);
            }
            count += 1;
        }
        Ok(count)
    }

    /// Power spectral density of a single signal at the selected bins.
    pub fn psd(&self, x: &[f64]) -> Result<Vec<f64>, DspError> {
        let len = self.window.len();
        if x.len() < len {
            return Err(DspError::EpochTooShort { n_samples: x.len(), window_len: len });
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        let mut acc = vec![0.0; self.bins.len()];
        let mut count = 0;
        for start in self.segment_starts(x.len()) {
            for (n, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(x[start + n] * self.window[n], 0.0);
            }
            self.fft.process(&mut buf);
            for (j, &k) in self.bins.iter().enumerate() {
                acc[j] += self.side_factor(k) * self.scale * buf[k].norm_sqr();
            }
            count += 1;
        }
        acc.iter_mut().for_each(|v| *v /= count as f64);
        Ok(acc)
    }
}

/// Class-averaged cross-spectral matrices `V_c(ω)`.
#[derive(Debug, Clone)]
pub struct CrossSpectrumSet {
    pub frequencies_hz: Vec<f64>,
    pub window_len: usize,
    /// Indexed by [`Class::index`], then by frequency bin.
    pub matrices: [Vec<DMatrix<Complex64>>; 2],
    pub n_trials: [usize; 2],
}

impl CrossSpectrumSet {
    pub fn class(&self, class: Class) -> &[DMatrix<Complex64>] {
        &self.matrices[class.index()]
    }

    /// Real parts, the form consumed by the real symmetric eigensolver.
    pub fn real_parts(&self, class: Class) -> Vec<DMatrix<f64>> {
        self.class(class).iter().map(|m| m.map(|z| z.re)).collect()
    }
}

pub const SPECTRAL_BAND_HZ: (f64, f64) = (6.0, 32.0);

/// Welch cross-spectra (Hann, 1/resolution-second windows, 50 % overlap)
/// averaged over segments and trials per class, bins in 6–32 Hz.
pub fn cross_spectra(epochs: &EpochSet, resolution_hz: f64) -> Result<CrossSpectrumSet, DspError> {
    cross_spectra_in_band(epochs, resolution_hz, SPECTRAL_BAND_HZ)
}

pub fn cross_spectra_in_band(
    epochs: &EpochSet,
    resolution_hz: f64,
    band_hz: (f64, f64),
) -> Result<CrossSpectrumSet, DspError> {
    let welch = Welch::new(epochs.sample_rate_hz(), resolution_hz, band_hz)?;
    let d = epochs.n_channels();
    let nb = welch.n_bins();
    let mut matrices = [vec![DMatrix::<Complex64>::zeros(d, d); nb], vec![DMatrix::<Complex64>::zeros(d, d); nb]];
    let mut segments = [0usize; 2];
    let mut n_trials = [0usize; 2];
    for (trial, &class) in epochs.trials().iter().zip(epochs.labels()) {
        let c = class.index();
        segments[c] += welch.accumulate(trial, &mut matrices[c])?;
        n_trials[c] += 1;
    }
    for c in 0..2 {
        if segments[c] > 0 {
            for m in &mut matrices[c] {
                *m /= Complex64::from(segments[c] as f64);
            }
        }
    }
    Ok(CrossSpectrumSet {
        frequencies_hz: welch.frequencies_hz(),
        window_len: welch.window_len(),
        matrices,
        n_trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Marker;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn sine(f: f64, fs: f64, n: usize, amp: f64, phase: f64) -> Vec<f64> {
        (0..n).map(|t| amp * (2.0 * PI * f * t as f64 / fs + phase).sin()).collect()
    }

    #[test]
    fn bandpass_edges_are_minus_three_db() {
        let f = design_butterworth_bandpass(2, 6.0, 32.0, 256.0).unwrap();
        for edge in [6.0, 32.0] {
            let db = f.magnitude_db(edge);
            assert!((-3.5..=-2.5).contains(&db), "{edge} Hz: {db} dB");
        }
        assert_eq!(f.b.len(), 5);
        assert_eq!(f.a.len(), 5);
        assert_eq!(f.a[0], 1.0);
    }

    #[test]
    fn bandpass_rejects_dc_exactly() {
        let f = design_butterworth_bandpass(2, 6.0, 32.0, 256.0).unwrap();
        assert_eq!(f.response(0.0).norm(), 0.0);
    }

    #[test]
    fn bandpass_unity_at_geometric_centre() {
        let f = design_butterworth_bandpass(2, 6.0, 32.0, 256.0).unwrap();
        // Independent evaluation of Σ b_k e^{-jωk} / Σ a_k e^{-jωk}.
        let w = 2.0 * PI * 13.9 / 256.0;
        let eval = |c: &[f64]| {
            c.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (k, &v)| {
                acc + v * Complex64::new((w * k as f64).cos(), -(w * k as f64).sin())
            })
        };
        let db = 20.0 * (eval(&f.b) / eval(&f.a)).norm().log10();
        assert!(db.abs() < 0.5, "{db}");
    }

    #[test]
    fn invalid_bands_rejected() {
        assert!(design_butterworth_bandpass(2, 6.0, 130.0, 256.0).is_err());
        assert!(design_butterworth_bandpass(2, 32.0, 6.0, 256.0).is_err());
        assert!(design_butterworth_bandpass(2, 0.0, 6.0, 256.0).is_err());
        assert!(design_butterworth_bandpass(0, 6.0, 32.0, 256.0).is_err());
        assert!(design_butterworth_lowpass(8, 128.0, 256.0).is_err());
    }

    #[test]
    fn designed_filters_are_stable() {
        let mut filters = vec![
            design_butterworth_bandpass(2, 6.0, 32.0, 256.0).unwrap(),
            design_butterworth_lowpass(8, 51.2, 256.0).unwrap(),
            design_butterworth_lowpass(3, 10.0, 128.0).unwrap(),
        ];
        filters.extend(make_filter_bank(6.0, 32.0, 4.0, 128.0).unwrap());
        for f in &filters {
            let from_coeffs = f.poles_from_coefficients();
            assert_eq!(from_coeffs.len(), f.a.len() - 1);
            for p in &from_coeffs {
                assert!(p.norm() < 1.0 - 1e-6, "{:?} pole {p}", f.band_hz);
            }
        }
    }

    #[test]
    fn lowpass_unit_dc_and_half_power_cutoff() {
        let f = design_butterworth_lowpass(8, 51.2, 256.0).unwrap();
        assert!((f.response(0.0).norm() - 1.0).abs() < 1e-12);
        assert!((f.magnitude_db(51.2) + 3.0103).abs() < 0.01);
        assert!(f.magnitude_db(100.0) < -40.0);
    }

    #[test]
    fn zero_in_zero_out_and_impulse_decays() {
        let f = design_butterworth_bandpass(2, 6.0, 32.0, 256.0).unwrap();
        assert!(f.apply(&[0.0; 100]).iter().all(|&v| v == 0.0));
        let mut imp = vec![0.0; 4096];
        imp[0] = 1.0;
        let h = f.apply(&imp);
        let energy: f64 = h.iter().map(|v| v * v).sum();
        assert!(energy.is_finite() && energy > 0.0);
        assert!(h[4000..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn steady_state_sine_matches_response() {
        let fs = 256.0;
        let f = design_butterworth_bandpass(2, 6.0, 32.0, fs).unwrap();
        let y = f.apply(&sine(20.0, fs, 4096, 1.0, 0.0));
        let tail = &y[2048..];
        let rms = (tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64).sqrt();
        let amp = rms * 2f64.sqrt();
        let expected = f.response(20.0).norm();
        assert!((amp / expected - 1.0).abs() < 0.01, "{amp} vs {expected}");
    }

    #[test]
    fn decimate_halves_rate_and_keeps_passband_tone() {
        let fs = 256.0;
        let n = 4096;
        let samples = DMatrix::from_row_slice(1, n, &sine(10.0, fs, n, 1.0, 0.3));
        let rec = Recording::new(vec!["Cz".into()], fs, samples, vec![Marker::new(1001, "start")]).unwrap();
        let dec = decimate(&rec, 2).unwrap();
        assert_eq!(dec.sample_rate_hz(), 128.0);
        assert_eq!(dec.n_samples(), n / 2);
        assert_eq!(dec.markers()[0].sample_index, 500);
        let tail: Vec<f64> = dec.samples().row(0).iter().skip(1024).copied().collect();
        let amp = (tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64).sqrt() * 2f64.sqrt();
        assert!((amp - 1.0).abs() < 0.02, "{amp}");

        let odd = Recording::new(vec!["Cz".into()], fs, DMatrix::zeros(1, 7), vec![]).unwrap();
        assert_eq!(decimate(&odd, 2).unwrap().n_samples(), 3);
    }

    #[test]
    fn decimate_factor_one_is_identity() {
        let rec = Recording::new(vec!["Cz".into()], 256.0, DMatrix::from_fn(1, 50, |_, t| t as f64), vec![]).unwrap();
        assert_eq!(decimate(&rec, 1).unwrap(), rec);
        assert!(matches!(decimate(&rec, 0), Err(DspError::InvalidFactor)));
    }

    #[test]
    fn default_bank_partition() {
        let bands = filter_bank_bands(6.0, 32.0, 4.0).unwrap();
        assert_eq!(
            bands,
            vec![(6.0, 10.0), (10.0, 14.0), (14.0, 18.0), (18.0, 22.0), (22.0, 26.0), (26.0, 30.0), (30.0, 32.0)]
        );
        assert_eq!(make_filter_bank(6.0, 32.0, 4.0, 128.0).unwrap().len(), 7);
        assert_eq!(make_filter_bank(6.0, 10.0, 4.0, 128.0).unwrap().len(), 1);
        let single = make_filter_bank(6.0, 32.0, 26.0, 128.0).unwrap();
        assert_eq!(single, vec![design_butterworth_bandpass(2, 6.0, 32.0, 128.0).unwrap()]);
        assert!(make_filter_bank(6.0, 32.0, 0.0, 128.0).is_err());
    }

    #[test]
    fn narrow_final_band_merges() {
        assert_eq!(filter_bank_bands(6.0, 30.5, 4.0).unwrap().last(), Some(&(26.0, 30.5)));
    }

    fn epochs_from(trials: Vec<DMatrix<f64>>, fs: f64) -> EpochSet {
        let n = trials.len();
        let labels = (0..n).map(|i| Class::from_bool(i % 2 == 1)).collect();
        let d = trials[0].nrows();
        EpochSet::new(trials, labels, (0..n).collect(), (0..d).map(|i| format!("ch{i}")).collect(), fs).unwrap()
    }

    #[test]
    fn cross_spectrum_of_common_sine_is_rank_one() {
        let fs = 128.0;
        let s = sine(11.0, fs, 384, 1.0, 0.4);
        let trial = DMatrix::from_fn(2, 384, |c, t| if c == 0 { s[t] } else { 2.0 * s[t] });
        let cs = cross_spectra(&epochs_from(vec![trial.clone(), trial], fs), 1.0).unwrap();
        let j = cs.frequencies_hz.iter().position(|&f| f == 11.0).unwrap();
        for class in [Class::Rest, Class::Task] {
            let v = &cs.class(class)[j];
            let scale = v[(0, 0)].re;
            assert!(scale > 0.0);
            for (r, c, e) in [(0, 1, 2.0), (1, 0, 2.0), (1, 1, 4.0)] {
                assert!((v[(r, c)] / scale - Complex64::from(e)).norm() < 1e-9);
            }
        }
        assert_eq!(cs.frequencies_hz.first(), Some(&6.0));
        assert_eq!(cs.frequencies_hz.last(), Some(&32.0));
    }

    #[test]
    fn white_noise_cross_spectra_become_diagonal() {
        let fs = 128.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let trials: Vec<DMatrix<f64>> = (0..500)
            .map(|_| DMatrix::from_fn(2, 384, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let cs = cross_spectra(&epochs_from(trials, fs), 1.0).unwrap();
        // Each class averages 250 trials × 5 segments; |V01|/sqrt(V00 V11) of an
        // average of K independent coherent products has standard error ≈ 1/sqrt(K).
        // Overlapping segments are correlated, so K = 250 * 3 is a conservative count.
        let se = 1.0 / (250.0f64 * 3.0).sqrt();
        for class in [Class::Rest, Class::Task] {
            for v in cs.class(class) {
                let coherence = v[(0, 1)].norm() / (v[(0, 0)].re * v[(1, 1)].re).sqrt();
                assert!(coherence < 5.0 * se, "{coherence}");
                assert!((v[(0, 1)] - v[(1, 0)].conj()).norm() <= 1e-10 * v[(0, 0)].re);
            }
        }
    }

    #[test]
    fn zero_epochs_give_zero_matrices() {
        let trials = vec![DMatrix::zeros(3, 256); 4];
        let cs = cross_spectra(&epochs_from(trials, 128.0), 1.0).unwrap();
        assert!(cs.matrices.iter().flatten().all(|m| m.iter().all(|z| z.norm() == 0.0)));
    }

    #[test]
    fn short_epochs_rejected() {
        let trials = vec![DMatrix::zeros(2, 100); 2];
        assert!(matches!(
            cross_spectra(&epochs_from(trials, 128.0), 1.0),
            Err(DspError::EpochTooShort { n_samples: 100, window_len: 128 })
        ));
    }

    #[test]
    fn psd_integrates_to_variance() {
        let fs = 128.0;
        let x = sine(11.0, fs, 1024, 3.0, 0.1);
        let welch = Welch::new(fs, 1.0, (0.0, 64.0)).unwrap();
        let total: f64 = welch.psd(&x).unwrap().iter().sum::<f64>() * 1.0;
        assert!((total - 4.5).abs() < 0.05, "{total}");
    }

    proptest::proptest! {
        #[test]
        fn filtering_is_linear(
            x in proptest::collection::vec(-10.0f64..10.0, 64),
            y in proptest::collection::vec(-10.0f64..10.0, 64),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let f = design_butterworth_bandpass(2, 6.0, 32.0, 256.0).unwrap();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
            let lhs = f.apply(&mix);
            let fx = f.apply(&x);
            let fy = f.apply(&y);
            let scale = lhs.iter().map(|v| v.abs()).fold(1.0, f64::max);
            for i in 0..64 {
                proptest::prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn bank_tiles_band(low in 1.0f64..10.0, span in 2.0f64..40.0, width in 0.5f64..12.0) {
            let high = low + span;
            let bands = filter_bank_bands(low, high, width).unwrap();
            proptest::prop_assert_eq!(bands[0].0, low);
            proptest::prop_assert_eq!(bands.last().unwrap().1, high);
            for w in bands.windows(2) {
                proptest::prop_assert_eq!(w[0].1, w[1].0);
            }
        }
    }
}
