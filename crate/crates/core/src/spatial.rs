//! Spatial filter trainers: CSP, filter-bank CSP, spectrally weighted CSP and
//! source power comodulation (SPoC).
//!
//! All four reduce to the generalized eigenproblem in [`crate::linalg`]:
//!
//! ```text
//! CSP / FBCSP / SpecCSP   C_task w = λ (C_task + C_rest) w     λ ∈ [0, 1]
//! SPoC                    C_z    w = λ C̄ w                     C_z = mean_e z(e) C(e)
//! ```
//!
//! and keep `n_pairs` filters from each end of the spectrum. Each filter is
//! sign-normalized so the largest-magnitude coefficient of its pattern is
//! positive.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Class, DataError, EpochSet};
use crate::dsp::{self, cross_spectra_in_band, DspError, IirFilter, SPECTRAL_BAND_HZ};
use crate::linalg::{covariance, generalized_eig_sym, LinalgError};
use crate::serde_util::matrix_rows;

#[derive(Debug, Error)]
pub enum SpatialError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("{requested} filter pairs requested but only {channels} channels available")]
    TooManyPairs { requested: usize, channels: usize },
    #[error("component count must be a positive even number not above the channel count, got {0}")]
    InvalidComponents(usize),
    #[error("need at least {needed} trials of class {class}, have {have}")]
    TooFewTrials { class: Class, needed: usize, have: usize },
    #[error("zero label variance")]
    ZeroLabelVariance,
    #[error("filter bank is empty")]
    EmptyBank,
    #[error("band {index} ({low_hz}-{high_hz} Hz): {source}")]
    Band {
        index: usize,
        low_hz: f64,
        high_hz: f64,
        #[source]
        source: Box<SpatialError>,
    },
    #[error("non-finite spectral weights for component {component} at iteration {iteration} (zero band power)")]
    NonFiniteWeights { component: usize, iteration: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Csp,
    Fbcsp,
    #[serde(rename = "speccsp")]
    SpecCsp,
    Spoc,
}

impl Method {
    pub const COMPARED: [Method; 3] = [Method::SpecCsp, Method::Spoc, Method::Fbcsp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Csp => "csp",
            Method::Fbcsp => "fbcsp",
            Method::SpecCsp => "speccsp",
            Method::Spoc => "spoc",
        }
    }

    /// Column heading used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Method::Csp => "CSP",
            Method::Fbcsp => "FBCSP",
            Method::SpecCsp => "SpecCSP",
            Method::Spoc => "SPoC",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csp" => Ok(Method::Csp),
            "fbcsp" => Ok(Method::Fbcsp),
            "speccsp" => Ok(Method::SpecCsp),
            "spoc" => Ok(Method::Spoc),
            other => Err(format!("unknown method '{other}' (expected csp, fbcsp, speccsp or spoc)")),
        }
    }
}

/// Filters for one frequency band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandModel {
    /// Band the epochs were restricted to, if any.
    pub band_hz: Option<(f64, f64)>,
    /// Band filter applied to epochs before projection (FBCSP only).
    pub filter: Option<IirFilter>,
    /// `channel × component` spatial filters.
    #[serde(with = "matrix_rows")]
    pub filters: DMatrix<f64>,
    /// `channel × component` patterns `A = C W (Wᵀ C W)⁻¹`.
    #[serde(with = "matrix_rows")]
    pub patterns: DMatrix<f64>,
    /// Generalized eigenvalue of each kept component.
    pub eigenvalues: Vec<f64>,
}

impl BandModel {
    pub fn n_components(&self) -> usize {
        self.filters.ncols()
    }

    /// Component time courses `Wᵀ x` of one trial (band filter applied first).
    pub fn project(&self, trial: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.filter {
            Some(f) => self.filters.transpose() * f.apply_rows(trial),
            None => self.filters.transpose() * trial,
        }
    }
}

/// Per-component spectral weights learned by SpecCSP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralWeights {
    pub frequencies_hz: Vec<f64>,
    pub window_len: usize,
    pub band_hz: (f64, f64),
    /// `weights[k][j]`: weight of frequency bin `j` for component `k`.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialModel {
    pub method: Method,
    pub n_pairs: usize,
    pub channel_labels: Vec<String>,
    pub sample_rate_hz: f64,
    pub bands: Vec<BandModel>,
    pub spectral: Option<SpectralWeights>,
}

impl SpatialModel {
    pub fn n_features(&self) -> usize {
        self.bands.iter().map(BandModel::n_components).sum()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }

    /// `(band, component)` of the most discriminative component: largest
    /// `|λ − ½|` for the CSP family, largest `|λ|` for SPoC.
    pub fn top_component(&self) -> (usize, usize) {
        let centre = if self.method == Method::Spoc { 0.0 } else { 0.5 };
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (b, band) in self.bands.iter().enumerate() {
            for (k, &l) in band.eigenvalues.iter().enumerate() {
                let score = (l - centre).abs();
                if score > best.2 {
                    best = (b, k, score);
                }
            }
        }
        (best.0, best.1)
    }

    pub fn top_pattern(&self) -> DVector<f64> {
        let (b, k) = self.top_component();
        self.bands[b].patterns.column(k).into_owned()
    }

    pub fn top_filter(&self) -> DVector<f64> {
        let (b, k) = self.top_component();
        self.bands[b].filters.column(k).into_owned()
    }
}

/// Average per-trial covariance of each class.
pub fn class_covariances(epochs: &EpochSet, normalize_trace: bool) -> Result<[DMatrix<f64>; 2], SpatialError> {
    let d = epochs.n_channels();
    let mut sums = [DMatrix::zeros(d, d), DMatrix::zeros(d, d)];
    let mut counts = [0usize; 2];
    for (trial, &class) in epochs.trials().iter().zip(epochs.labels()) {
        sums[class.index()] += covariance(trial, normalize_trace)?.matrix;
        counts[class.index()] += 1;
    }
    for c in 0..2 {
        if counts[c] > 0 {
            sums[c] /= counts[c] as f64;
        }
    }
    Ok(sums)
}

/// Indices kept from a descending spectrum of length `d`: the first and the
/// last `n_pairs`.
fn end_indices(d: usize, n_pairs: usize) -> Vec<usize> {
    (0..n_pairs).chain(d - n_pairs..d).collect()
}

/// `A = C W (Wᵀ C W)⁻¹`.
fn patterns_of(c: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let cw = c * w;
    let gram = w.transpose() * &cw;
    let inv = gram
        .clone()
        .try_inverse()
        .unwrap_or_else(|| gram.pseudo_inverse(1e-12).expect("pseudo-inverse of a symmetric matrix"));
    cw * inv
}

/// Flips each filter/pattern pair so the largest-magnitude pattern entry is positive.
fn fix_signs(filters: &mut DMatrix<f64>, patterns: &mut DMatrix<f64>) {
    for k in 0..filters.ncols() {
        let col = patterns.column(k);
        let (idx, _) = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &v)| if v.abs() > best.1 { (i, v.abs()) } else { best });
        if patterns[(idx, k)] < 0.0 {
            filters.column_mut(k).neg_mut();
            patterns.column_mut(k).neg_mut();
        }
    }
}

fn check_pairs(n_pairs: usize, channels: usize) -> Result<(), SpatialError> {
    if n_pairs == 0 || 2 * n_pairs > channels {
        return Err(SpatialError::TooManyPairs { requested: n_pairs, channels });
    }
    Ok(())
}

/// CSP on given class covariances.
fn csp_band(c_task: &DMatrix<f64>, c_rest: &DMatrix<f64>, n_pairs: usize) -> Result<BandModel, SpatialError> {
    let composite = c_task + c_rest;
    let eig = generalized_eig_sym(c_task, &composite)?;
    let keep = end_indices(c_task.nrows(), n_pairs);
    let mut filters = eig.eigenvectors.select_columns(&keep);
    let eigenvalues = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut patterns = patterns_of(&composite, &filters);
    fix_signs(&mut filters, &mut patterns);
    Ok(BandModel { band_hz: None, filter: None, filters, patterns, eigenvalues })
}

/// Common spatial patterns on the epochs as given.
pub fn train_csp(epochs: &EpochSet, n_pairs: usize, normalize_trace: bool) -> Result<SpatialModel, SpatialError> {
    epochs.require_both_classes()?;
    check_pairs(n_pairs, epochs.n_channels())?;
    let [c_rest, c_task] = class_covariances(epochs, normalize_trace)?;
    let band = csp_band(&c_task, &c_rest, n_pairs)?;
    Ok(SpatialModel {
        method: Method::Csp,
        n_pairs,
        channel_labels: epochs.channel_labels().to_vec(),
        sample_rate_hz: epochs.sample_rate_hz(),
        bands: vec![band],
        spectral: None,
    })
}

/// One CSP per filter-bank band; every band's components are kept.
pub fn train_fbcsp(
    epochs: &EpochSet,
    bank: &[IirFilter],
    n_pairs: usize,
    normalize_trace: bool,
) -> Result<SpatialModel, SpatialError> {
    if bank.is_empty() {
        return Err(SpatialError::EmptyBank);
    }
    epochs.require_both_classes()?;
    check_pairs(n_pairs, epochs.n_channels())?;
    let bands = bank
        .iter()
        .enumerate()
        .map(|(index, filter)| {
            let filtered = dsp::filter_forward(filter, epochs);
            let tag = |source: SpatialError| SpatialError::Band {
                index,
                low_hz: filter.band_hz.0,
                high_hz: filter.band_hz.1,
                source: Box::new(source),
            };
            let [c_rest, c_task] = class_covariances(&filtered, normalize_trace).map_err(tag)?;
            let mut band = csp_band(&c_task, &c_rest, n_pairs).map_err(tag)?;
            band.band_hz = Some(filter.band_hz);
            band.filter = Some(filter.clone());
            Ok(band)
        })
        .collect::<Result<Vec<_>, SpatialError>>()?;
    Ok(SpatialModel {
        method: Method::Fbcsp,
        n_pairs,
        channel_labels: epochs.channel_labels().to_vec(),
        sample_rate_hz: epochs.sample_rate_hz(),
        bands,
        spectral: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecCspParams {
    /// Exponent on the favoured class's band power.
    pub p: f64,
    /// Exponent on the class power ratio.
    pub q: f64,
    pub n_iterations: usize,
    pub resolution_hz: f64,
    pub band_hz: (f64, f64),
}

impl Default for SpecCspParams {
    fn default() -> Self {
        Self { p: 0.0, q: 1.0, n_iterations: 3, resolution_hz: 1.0, band_hz: SPECTRAL_BAND_HZ }
    }
}

/// Spectral weights of every component after each iteration.
#[derive(Debug, Clone, Default)]
pub struct SpecCspTrace {
    pub weights: Vec<Vec<Vec<f64>>>,
}

/// Spectrally weighted CSP by alternating optimization.
///
/// Every component `k` keeps its own weights `β_k(ω)` (uniform at start).
/// Each iteration:
/// 1. for each `k`, solve CSP on `C_c = Σ_ω β_k(ω) Re V_c(ω)` and take the
///    filter at `k`'s position in the spectrum;
/// 2. set `β_k(ω) ∝ s₊(ω)^p · (s₊(ω)/s₋(ω))^q` with `s_c(ω) = wᵀ Re V_c(ω) w`,
///    where `+` is the class the filter maximizes (task for the top end,
///    rest for the bottom end), normalized to sum 1.
pub fn train_speccsp(epochs: &EpochSet, n_pairs: usize, params: &SpecCspParams) -> Result<SpatialModel, SpatialError> {
    train_speccsp_traced(epochs, n_pairs, params).map(|(m, _)| m)
}

pub fn train_speccsp_traced(
    epochs: &EpochSet,
    n_pairs: usize,
    params: &SpecCspParams,
) -> Result<(SpatialModel, SpecCspTrace), SpatialError> {
    epochs.require_both_classes()?;
    let d = epochs.n_channels();
    check_pairs(n_pairs, d)?;
    let spectra = cross_spectra_in_band(epochs, params.resolution_hz, params.band_hz)?;
    let v_task = spectra.real_parts(Class::Task);
    let v_rest = spectra.real_parts(Class::Rest);
    let n_bins = v_task.len();
    let n_comp = 2 * n_pairs;
    let positions = end_indices(d, n_pairs);

    let weighted = |beta: &[f64], v: &[DMatrix<f64>]| {
        beta.iter().zip(v).fold(DMatrix::zeros(d, d), |acc, (&b, m)| acc + m * b)
    };

    let mut betas = vec![vec![1.0 / n_bins as f64; n_bins]; n_comp];
    let mut filters = DMatrix::zeros(d, n_comp);
    let mut patterns = DMatrix::zeros(d, n_comp);
    let mut eigenvalues = vec![0.0; n_comp];
    let mut trace = SpecCspTrace::default();

    for iteration in 0..params.n_iterations.max(1) {
        // Spatial step.
        for k in 0..n_comp {
            let c_task = weighted(&betas[k], &v_task);
            let c_rest = weighted(&betas[k], &v_rest);
            let composite = &c_task + &c_rest;
            let eig = generalized_eig_sym(&c_task, &composite)?;
            let w = eig.eigenvectors.column(positions[k]).into_owned();
            let a = &composite * &w / (w.dot(&(&composite * &w)));
            filters.set_column(k, &w);
            patterns.set_column(k, &a);
            eigenvalues[k] = eig.eigenvalues[positions[k]];
        }
        // Spectral step.
        for k in 0..n_comp {
            let w = filters.column(k);
            let power = |v: &DMatrix<f64>| w.dot(&(v * w));
            let favours_task = k < n_pairs;
            let mut beta: Vec<f64> = (0..n_bins)
                .map(|j| {
                    let (s_task, s_rest) = (power(&v_task[j]), power(&v_rest[j]));
                    let (plus, minus) = if favours_task { (s_task, s_rest) } else { (s_rest, s_task) };
                    plus.max(0.0).powf(params.p) * (plus.max(0.0) / minus).powf(params.q)
                })
                .collect();
            let total: f64 = beta.iter().sum();
            if !(total.is_finite() && total > 0.0) || beta.iter().any(|b| !b.is_finite()) {
                return Err(SpatialError::NonFiniteWeights { component: k, iteration });
            }
            beta.iter_mut().for_each(|b| *b /= total);
            betas[k] = beta;
        }
        trace.weights.push(betas.clone());
    }
    fix_signs(&mut filters, &mut patterns);
    let model = SpatialModel {
        method: Method::SpecCsp,
        n_pairs,
        channel_labels: epochs.channel_labels().to_vec(),
        sample_rate_hz: epochs.sample_rate_hz(),
        bands: vec![BandModel {
            band_hz: Some(params.band_hz),
            filter: None,
            filters,
            patterns,
            eigenvalues,
        }],
        spectral: Some(SpectralWeights {
            frequencies_hz: spectra.frequencies_hz.clone(),
            window_len: spectra.window_len,
            band_hz: params.band_hz,
            weights: betas,
        }),
    };
    Ok((model, trace))
}

/// SPoC with binary targets: task = +1, rest = −1, z-scored across trials.
/// Keeps `n_components / 2` filters from each end of the spectrum.
pub fn train_spoc(epochs: &EpochSet, n_components: usize, normalize_trace: bool) -> Result<SpatialModel, SpatialError> {
    let d = epochs.n_channels();
    if n_components == 0 || n_components % 2 != 0 || n_components > d {
        return Err(SpatialError::InvalidComponents(n_components));
    }
    let raw: Vec<f64> = epochs.labels().iter().map(|c| if c.is_task() { 1.0 } else { -1.0 }).collect();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) {
        return Err(SpatialError::ZeroLabelVariance);
    }
    for class in [Class::Rest, Class::Task] {
        let have = epochs.count(class);
        if have < 2 {
            return Err(SpatialError::TooFewTrials { class, needed: 2, have });
        }
    }
    let z: Vec<f64> = raw.iter().map(|v| (v - mean) / sd).collect();

    let mut c_z = DMatrix::zeros(d, d);
    let mut c_mean = DMatrix::zeros(d, d);
    for (trial, &ze) in epochs.trials().iter().zip(&z) {
        let c = covariance(trial, normalize_trace)?.matrix;
        c_z += &c * ze;
        c_mean += c;
    }
    c_z /= n;
    c_mean /= n;

    let eig = generalized_eig_sym(&c_z, &c_mean)?;
    let keep = end_indices(d, n_components / 2);
    let mut filters = eig.eigenvectors.select_columns(&keep);
    let eigenvalues = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut patterns = patterns_of(&c_mean, &filters);
    fix_signs(&mut filters, &mut patterns);
    Ok(SpatialModel {
        method: Method::Spoc,
        n_pairs: n_components / 2,
        channel_labels: epochs.channel_labels().to_vec(),
        sample_rate_hz: epochs.sample_rate_hz(),
        bands: vec![BandModel { band_hz: None, filter: None, filters, patterns, eigenvalues }],
        spectral: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn cos(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(b) / (a.norm() * b.norm())
    }

    /// Alternating rest/task trials; `gen(class, rng)` produces each trial.
    fn make_epochs<F>(n_per_class: usize, d: usize, n: usize, fs: f64, seed: u64, mut gen: F) -> EpochSet
    where
        F: FnMut(Class, &mut ChaCha8Rng) -> DMatrix<f64>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n_per_class {
            let class = Class::from_bool(i % 2 == 1);
            data.push(gen(class, &mut rng));
            labels.push(class);
        }
        let onsets = (0..data.len()).map(|i| i * n).collect();
        EpochSet::new(data, labels, onsets, (0..d).map(|i| format!("ch{i}")).collect(), fs).unwrap()
    }

    fn noise(rng: &mut ChaCha8Rng, d: usize, n: usize, scales: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(d, n, |r, _| scales[r] * { let g: f64 = StandardNormal.sample(rng); g })
    }

    #[test]
    fn csp_finds_the_channel_whose_variance_triples() {
        let e = make_epochs(40, 2, 256, 128.0, 1, |c, rng| {
            let s1 = if c.is_task() { 3f64.sqrt() } else { 1.0 };
            noise(rng, 2, 256, &[s1, 1.0])
        });
        let m = train_csp(&e, 1, false).unwrap();
        let top = m.bands[0].filters.column(0).into_owned();
        assert!(cos(&top, &DVector::from_vec(vec![1.0, 0.0])).abs() >= 0.99);
        assert!(m.bands[0].eigenvalues[0] > 0.7);
    }

    #[test]
    fn csp_without_contrast_has_half_eigenvalues() {
        let e = make_epochs(200, 4, 256, 128.0, 2, |_, rng| noise(rng, 4, 256, &[1.0; 4]));
        let m = train_csp(&e, 2, true).unwrap();
        assert!(m.bands[0].eigenvalues.iter().all(|l| (l - 0.5).abs() < 0.03), "{:?}", m.bands[0].eigenvalues);
    }

    #[test]
    fn csp_rejects_bad_inputs() {
        let e = make_epochs(5, 3, 64, 128.0, 3, |_, rng| noise(rng, 3, 64, &[1.0; 3]));
        assert!(matches!(train_csp(&e, 2, true), Err(SpatialError::TooManyPairs { .. })));
        let single = e.with_labels(vec![Class::Task; e.len()]).unwrap();
        assert!(matches!(train_csp(&single, 1, true), Err(SpatialError::Data(_))));
    }

    fn random_epochs(seed: u64) -> EpochSet {
        make_epochs(30, 5, 200, 128.0, seed, |c, rng| {
            let s = if c.is_task() { [2.0, 1.0, 0.5, 1.0, 1.5] } else { [1.0, 1.5, 1.0, 0.7, 1.0] };
            let mix = DMatrix::from_row_slice(5, 5, &[
                1.0, 0.3, 0.0, 0.2, 0.1, 0.2, 1.0, 0.4, 0.0, 0.0, 0.0, 0.1, 1.0, 0.3, 0.2, 0.1, 0.0, 0.2, 1.0, 0.5,
                0.3, 0.2, 0.0, 0.1, 1.0,
            ]);
            mix * noise(rng, 5, 200, &s)
        })
    }

    #[test]
    fn csp_filters_are_b_orthonormal() {
        let e = random_epochs(4);
        let m = train_csp(&e, 2, true).unwrap();
        let [c_rest, c_task] = class_covariances(&e, true).unwrap();
        let w = &m.bands[0].filters;
        let gram = w.transpose() * (c_task + c_rest) * w;
        assert!((gram - DMatrix::identity(4, 4)).abs().max() < 1e-8);
    }

    #[test]
    fn relabeling_mirrors_the_spectrum() {
        let e = random_epochs(5);
        let flipped = e
            .with_labels(e.labels().iter().map(|c| Class::from_bool(!c.is_task())).collect())
            .unwrap();
        let a = train_csp(&e, 2, true).unwrap();
        let b = train_csp(&flipped, 2, true).unwrap();
        let (la, lb) = (&a.bands[0].eigenvalues, &b.bands[0].eigenvalues);
        for k in 0..4 {
            assert!((la[k] - (1.0 - lb[3 - k])).abs() < 1e-9);
            let fa = a.bands[0].filters.column(k).into_owned();
            let fb = b.bands[0].filters.column(3 - k).into_owned();
            assert!(cos(&fa, &fb).abs() > 1.0 - 1e-8);
        }
    }

    #[test]
    fn csp_components_invariant_to_channel_mixing() {
        let e = random_epochs(6);
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let t = DMatrix::from_fn(5, 5, |r, c| {
            let g: f64 = StandardNormal.sample(&mut rng);
            if r == c { 2.0 + 0.3 * g } else { 0.3 * g }
        });
        let mixed = e.map_trials(|x| &t * x);
        let a = train_csp(&e, 2, false).unwrap();
        let b = train_csp(&mixed, 2, false).unwrap();
        let trial = e.trial(0);
        let ya = a.bands[0].project(trial);
        let yb = b.bands[0].project(&(&t * trial));
        for k in 0..4 {
            let ra = ya.row(k).transpose();
            let rb = yb.row(k).transpose();
            assert!(cos(&ra, &rb).abs() >= 0.99);
        }
    }

    #[test]
    fn sign_convention_makes_peak_pattern_positive() {
        let m = train_csp(&random_epochs(7), 2, true).unwrap();
        for col in m.bands[0].patterns.column_iter() {
            let peak = col.iter().copied().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
            assert!(peak > 0.0);
        }
    }

    #[test]
    fn fbcsp_dimensions_and_single_band_reduction() {
        let e = make_epochs(20, 11, 384, 128.0, 8, |c, rng| {
            let mut s = [1.0; 11];
            s[4] = if c.is_task() { 0.5 } else { 1.0 };
            noise(rng, 11, 384, &s)
        });
        let bank = dsp::make_filter_bank(6.0, 32.0, 4.0, 128.0).unwrap();
        let m = train_fbcsp(&e, &bank, 3, true).unwrap();
        assert_eq!(m.bands.len(), 7);
        assert_eq!(m.n_features(), 42);

        let broadband = dsp::make_filter_bank(6.0, 32.0, 26.0, 128.0).unwrap();
        let fb = train_fbcsp(&e, &broadband, 3, true).unwrap();
        let csp = train_csp(&dsp::filter_forward(&broadband[0], &e), 3, true).unwrap();
        assert!((&fb.bands[0].filters - &csp.bands[0].filters).abs().max() < 1e-12);
        assert!(matches!(train_fbcsp(&e, &[], 3, true), Err(SpatialError::EmptyBank)));
    }

    /// Trials whose channel-0 content is an 11 Hz tone of class-dependent
    /// amplitude on top of white noise.
    fn tone_epochs(seed: u64, task_amp: f64, rest_amp: f64, n_per_class: usize) -> EpochSet {
        let fs = 128.0;
        make_epochs(n_per_class, 4, 384, fs, seed, |c, rng| {
            let amp = if c.is_task() { task_amp } else { rest_amp };
            let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let mut x = noise(rng, 4, 384, &[0.5; 4]);
            for t in 0..384 {
                let s = amp * (std::f64::consts::TAU * 11.0 * t as f64 / fs + phase).sin();
                x[(0, t)] += s;
                x[(1, t)] += 0.5 * s;
            }
            x
        })
    }

    #[test]
    fn speccsp_weights_concentrate_at_discriminative_frequency() {
        let e = tone_epochs(9, 0.3, 2.0, 40);
        let (m, trace) = train_speccsp_traced(&e, 1, &SpecCspParams::default()).unwrap();
        let sw = m.spectral.as_ref().unwrap();
        let (_, k) = m.top_component();
        let mass: f64 = sw
            .frequencies_hz
            .iter()
            .zip(&sw.weights[k])
            .filter(|(f, _)| (10.0..=12.0).contains(*f))
            .map(|(_, w)| w)
            .sum();
        assert!(mass >= 0.5, "{mass}");
        assert_eq!(trace.weights.len(), 3);
        for it in &trace.weights {
            for beta in it {
                assert!(beta.iter().all(|&b| b >= 0.0));
                assert!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn speccsp_zero_exponents_keep_uniform_weights() {
        let e = tone_epochs(10, 0.3, 2.0, 30);
        let params = SpecCspParams { p: 0.0, q: 0.0, ..SpecCspParams::default() };
        let m = train_speccsp(&e, 1, &params).unwrap();
        let sw = m.spectral.unwrap();
        let u = 1.0 / sw.frequencies_hz.len() as f64;
        assert!(sw.weights.iter().flatten().all(|w| (w - u).abs() < 1e-15));
    }

    #[test]
    fn speccsp_iterations_agree_on_easy_data() {
        let e = tone_epochs(11, 0.3, 2.0, 40);
        let one = SpecCspParams { n_iterations: 1, ..SpecCspParams::default() };
        let a = train_speccsp(&e, 1, &one).unwrap();
        let b = train_speccsp(&e, 1, &SpecCspParams::default()).unwrap();
        assert!(cos(&a.top_filter(), &b.top_filter()).abs() >= 0.98);
    }

    #[test]
    fn speccsp_zero_power_aborts() {
        let e = make_epochs(5, 2, 256, 128.0, 12, |_, _| DMatrix::zeros(2, 256));
        assert!(train_speccsp(&e, 1, &SpecCspParams::default()).is_err());
    }

    #[test]
    fn spoc_recovers_exact_comodulation() {
        // Channel-0 power is exactly 1 + z: 2 for task trials, 0 for rest trials.
        let e = make_epochs(30, 3, 256, 128.0, 13, |c, rng| {
            let mut x = noise(rng, 3, 256, &[0.0, 1.0, 1.0]);
            if c.is_task() {
                let s: Vec<f64> = (0..256).map(|_| StandardNormal.sample(rng)).collect();
                let m = s.iter().sum::<f64>() / 256.0;
                let v = s.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 256.0;
                for t in 0..256 {
                    x[(0, t)] = (s[t] - m) * (2.0 / v).sqrt();
                }
            }
            x
        });
        let m = train_spoc(&e, 2, false).unwrap();
        let band = &m.bands[0];
        assert!((band.eigenvalues[0] - 1.0).abs() < 1e-6, "{:?}", band.eigenvalues);
        let top = band.filters.column(0).into_owned();
        assert!(cos(&top, &DVector::from_vec(vec![1.0, 0.0, 0.0])).abs() > 0.999);
    }

    #[test]
    fn spoc_constant_labels_error() {
        let e = make_epochs(5, 2, 64, 128.0, 14, |_, rng| noise(rng, 2, 64, &[1.0, 1.0]));
        let same = e.with_labels(vec![Class::Rest; e.len()]).unwrap();
        assert!(matches!(train_spoc(&same, 2, true), Err(SpatialError::ZeroLabelVariance)));
        assert!(matches!(train_spoc(&e, 3, true), Err(SpatialError::InvalidComponents(3))));
    }

    #[test]
    fn spoc_top_filter_dominates_random_directions() {
        let e = random_epochs(15);
        let m = train_spoc(&e, 2, true).unwrap();
        // Rebuild C_z and C̄ independently of the trainer.
        let n = e.len() as f64;
        let z: Vec<f64> = e.labels().iter().map(|c| if c.is_task() { 1.0 } else { -1.0 }).collect();
        let mz = z.iter().sum::<f64>() / n;
        let sz = (z.iter().map(|v| (v - mz).powi(2)).sum::<f64>() / n).sqrt();
        let mut cz = DMatrix::zeros(5, 5);
        let mut cm = DMatrix::zeros(5, 5);
        for (t, zv) in e.trials().iter().zip(&z) {
            let c = covariance(t, true).unwrap().matrix;
            cz += &c * ((zv - mz) / sz);
            cm += c;
        }
        let objective = |w: &DVector<f64>| (w.transpose() * &cz * w)[0] / (w.transpose() * &cm * w)[0];
        let (b, k) = m.top_component();
        let best = objective(&m.bands[b].filters.column(k).into_owned()).abs();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..10_000 {
            let w = DVector::from_fn(5, |_, _| StandardNormal.sample(&mut rng));
            assert!(objective(&w).abs() <= best + 1e-12);
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Csp, Method::Fbcsp, Method::SpecCsp, Method::Spoc] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("lda".parse::<Method>().is_err());
    }
}
