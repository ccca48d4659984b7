//! Log-variance features, shrinkage LDA and the end-to-end calibration
//! pipeline:
//!
//! ```text
//! bandpass 6–32 Hz → decimate to 128 Hz → epochs → spatial model
//!     → log-variance features → standardize → shrinkage LDA
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{extract_epochs, Class, DataError, EpochSet, Recording, Window, DEFAULT_REST_WINDOW, DEFAULT_TASK_WINDOW};
use crate::dsp::{self, DspError, Welch};
use crate::linalg::{shrink, Covariance, LinalgError, Shrinkage};
use crate::spatial::{self, Method, SpatialError, SpatialModel, SpecCspParams};

pub const FORMAT_TAG: &str = "mibci-pipeline/1";

/// Floor applied to component variances before taking the log.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("preprocessing stage: {0}")]
    Preprocessing(#[from] DspError),
    #[error("epoching stage: {0}")]
    Epoching(#[from] DataError),
    #[error("spatial filtering stage: {0}")]
    Spatial(#[from] SpatialError),
    #[error("feature stage: {0}")]
    Features(String),
    #[error("classifier stage: {0}")]
    Classifier(String),
    #[error("classifier stage: {0}")]
    ClassifierLinalg(#[from] LinalgError),
    #[error("montage mismatch: model expects {expected:?} at {expected_fs} Hz, got {found:?} at {found_fs} Hz")]
    MontageMismatch { expected: Vec<String>, expected_fs: f64, found: Vec<String>, found_fs: f64 },
    #[error("model format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

fn log_floored(v: f64, floored: &mut usize) -> f64 {
    if v > VARIANCE_FLOOR && v.is_finite() {
        v.ln()
    } else {
        *floored += 1;
        VARIANCE_FLOOR.ln()
    }
}

fn population_variance(row: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = row.clone().count() as f64;
    let mean = row.clone().sum::<f64>() / n;
    row.map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Per trial, per band: project through the band's filters, take each
/// component's variance and its natural log; bands are concatenated in order.
/// SpecCSP components use their spectrally weighted power instead of the
/// plain variance.
pub fn features_logvar(epochs: &EpochSet, spatial: &SpatialModel) -> Result<Vec<FeatureVector>, PipelineError> {
    if epochs.n_channels() != spatial.n_channels() {
        return Err(PipelineError::Features(format!(
            "epochs have {} channels, spatial model expects {}",
            epochs.n_channels(),
            spatial.n_channels()
        )));
    }
    let welch = match &spatial.spectral {
        Some(sw) => {
            let w = Welch::with_window_len(epochs.sample_rate_hz(), sw.window_len, sw.band_hz);
            if w.frequencies_hz() != sw.frequencies_hz {
                return Err(PipelineError::Features("spectral bins do not match the epoch sample rate".into()));
            }
            Some((w, sw))
        }
        None => None,
    };
    let mut floored = 0usize;
    let mut out = Vec::with_capacity(epochs.len());
    for trial in epochs.trials() {
        let mut values = Vec::with_capacity(spatial.n_features());
        for band in &spatial.bands {
            let y = band.project(trial);
            for k in 0..y.nrows() {
                let row = y.row(k);
                let power = match &welch {
                    Some((w, sw)) => {
                        let psd = w.psd(&row.iter().copied().collect::<Vec<_>>())?;
                        psd.iter().zip(&sw.weights[k]).map(|(p, b)| p * b).sum()
                    }
                    None => population_variance(row.iter().copied()),
                };
                values.push(log_floored(power, &mut floored));
            }
        }
        out.push(FeatureVector(values));
    }
    if floored > 0 {
        log::warn!("{floored} zero-variance components floored at ln({VARIANCE_FLOOR:e})");
    }
    Ok(out)
}

/// Fisher linear discriminant; predicts task iff `w·f + b > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub shrinkage_gamma: f64,
    /// Set when a fixed γ left the pooled covariance singular and the
    /// Ledoit-Wolf coefficient was used instead.
    pub singular_fallback: bool,
}

impl LdaModel {
    pub fn score(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    /// Ties (score exactly 0) go to rest.
    pub fn classify(&self, f: &[f64]) -> Class {
        Class::from_bool(self.score(f) > 0.0)
    }
}

fn is_singular(m: &DMatrix<f64>) -> bool {
    let tr = m.trace();
    let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
    !(tr > 0.0) || min <= 1e-12 * tr
}

/// Shrinkage LDA: `w = S⁻¹(μ_task − μ_rest)`, `b = −w·(μ_task + μ_rest)/2`,
/// with `S` the pooled within-class covariance shrunk by `gamma`.
pub fn train_lda(features: &[FeatureVector], labels: &[Class], gamma: Shrinkage) -> Result<LdaModel, PipelineError> {
    if features.len() != labels.len() {
        return Err(PipelineError::Classifier("feature and label counts differ".into()));
    }
    let p = features.first().map_or(0, FeatureVector::dim);
    if p == 0 {
        return Err(PipelineError::Classifier("feature dimension must be at least 1".into()));
    }
    if features.iter().any(|f| f.dim() != p || f.0.iter().any(|v| !v.is_finite())) {
        return Err(PipelineError::Classifier("features must be finite and of equal dimension".into()));
    }
    let mut means = [DVector::zeros(p), DVector::zeros(p)];
    let mut counts = [0usize; 2];
    for (f, c) in features.iter().zip(labels) {
        means[c.index()] += DVector::from_column_slice(&f.0);
        counts[c.index()] += 1;
    }
    if counts.contains(&0) {
        return Err(PipelineError::Classifier(format!(
            "both classes required, have {} task / {} rest",
            counts[1], counts[0]
        )));
    }
    for c in 0..2 {
        means[c] /= counts[c] as f64;
    }
    let centered = DMatrix::from_fn(features.len(), p, |i, j| features[i].0[j] - means[labels[i].index()][j]);
    let pooled = Covariance::from_centered(&centered);

    let (mut shrunk, mut g) = shrink(&pooled, gamma)?;
    let mut fallback = false;
    if matches!(gamma, Shrinkage::Fixed(_)) && is_singular(&shrunk.matrix) {
        log::warn!("pooled covariance singular at gamma = {g}; falling back to automatic shrinkage");
        (shrunk, g) = shrink(&pooled, Shrinkage::Auto)?;
        fallback = true;
    }
    let chol = Cholesky::new(shrunk.matrix)
        .ok_or_else(|| PipelineError::Classifier("pooled covariance is singular".into()))?;
    let diff = &means[1] - &means[0];
    let w = chol.solve(&diff);
    if !(w.norm() > 0.0) || w.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::Classifier("degenerate discriminant (identical class means)".into()));
    }
    let bias = -w.dot(&(&means[1] + &means[0])) / 2.0;
    Ok(LdaModel { weights: w.iter().copied().collect(), bias, shrinkage_gamma: g, singular_fallback: fallback })
}

/// Zero-mean, unit-variance scaling fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &[FeatureVector]) -> Self {
        let p = features.first().map_or(0, FeatureVector::dim);
        let n = features.len() as f64;
        let means: Vec<f64> = (0..p).map(|j| features.iter().map(|f| f.0[j]).sum::<f64>() / n).collect();
        let scales = (0..p)
            .map(|j| {
                let sd = (features.iter().map(|f| (f.0[j] - means[j]).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        Self { means, scales }
    }

    pub fn apply(&self, f: &FeatureVector) -> FeatureVector {
        FeatureVector(f.0.iter().zip(&self.means).zip(&self.scales).map(|((v, m), s)| (v - m) / s).collect())
    }
}

/// Continuous-signal preprocessing applied before epoching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub band_hz: (f64, f64),
    pub filter_order: usize,
    pub decimation: usize,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self { band_hz: (6.0, 32.0), filter_order: 2, decimation: 2 }
    }
}

/// Bandpass then decimate a continuous recording.
pub fn preprocess(rec: &Recording, pre: &Preprocessing) -> Result<Recording, PipelineError> {
    let bp = dsp::design_butterworth_bandpass(pre.filter_order, pre.band_hz.0, pre.band_hz.1, rec.sample_rate_hz())?;
    let filtered = dsp::filter_forward(&bp, rec);
    Ok(dsp::decimate(&filtered, pre.decimation)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub preprocessing: Preprocessing,
    pub cue_label: String,
    pub task_window: Window,
    pub rest_window: Window,
    /// Filter pairs per band for CSP, FBCSP and SpecCSP.
    pub n_pairs: usize,
    pub bank_width_hz: f64,
    pub speccsp: SpecCspParams,
    pub spoc_components: usize,
    /// Scale each trial covariance to trace = channel count.
    pub normalize_trace: bool,
    pub lda_shrinkage: Shrinkage,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preprocessing: Preprocessing::default(),
            cue_label: "start".to_string(),
            task_window: DEFAULT_TASK_WINDOW,
            rest_window: DEFAULT_REST_WINDOW,
            n_pairs: 3,
            bank_width_hz: 4.0,
            speccsp: SpecCspParams::default(),
            spoc_components: 6,
            normalize_trace: true,
            lda_shrinkage: Shrinkage::Auto,
        }
    }
}

impl PipelineConfig {
    /// Preprocess the recording and cut epochs with this configuration.
    pub fn epochs(&self, rec: &Recording) -> Result<EpochSet, PipelineError> {
        let pre = preprocess(rec, &self.preprocessing)?;
        Ok(extract_epochs(&pre, &self.cue_label, self.task_window, self.rest_window)?.epochs)
    }
}

/// Deployable classifier: preprocessing descriptor, spatial model,
/// standardization and LDA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineModel {
    pub format: String,
    pub method: Method,
    pub preprocessing: Preprocessing,
    pub cue_label: String,
    pub task_window: Window,
    pub rest_window: Window,
    pub spatial: SpatialModel,
    pub standardizer: Standardizer,
    pub lda: LdaModel,
}

impl PipelineModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipeline model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let model: PipelineModel = serde_json::from_str(text).map_err(|e| PipelineError::Format(e.to_string()))?;
        if model.format != FORMAT_TAG {
            return Err(PipelineError::Format(format!("unsupported format '{}', expected '{FORMAT_TAG}'", model.format)));
        }
        let p = model.spatial.n_features();
        if model.standardizer.means.len() != p || model.standardizer.scales.len() != p || model.lda.weights.len() != p {
            return Err(PipelineError::Format("feature dimensions disagree across stages".into()));
        }
        Ok(model)
    }
}

/// Fits the method's spatial model on already preprocessed epochs.
pub fn train_spatial(epochs: &EpochSet, method: Method, config: &PipelineConfig) -> Result<SpatialModel, SpatialError> {
    match method {
        Method::Csp => spatial::train_csp(epochs, config.n_pairs, config.normalize_trace),
        Method::Fbcsp => {
            let (lo, hi) = config.preprocessing.band_hz;
            let bank = dsp::make_filter_bank(lo, hi, config.bank_width_hz, epochs.sample_rate_hz())?;
            spatial::train_fbcsp(epochs, &bank, config.n_pairs, config.normalize_trace)
        }
        Method::SpecCsp => spatial::train_speccsp(epochs, config.n_pairs, &config.speccsp),
        Method::Spoc => spatial::train_spoc(epochs, config.spoc_components, config.normalize_trace),
    }
}

/// Trains spatial model, standardization and LDA on preprocessed epochs.
pub fn train_on_epochs(epochs: &EpochSet, method: Method, config: &PipelineConfig) -> Result<PipelineModel, PipelineError> {
    let spatial = train_spatial(epochs, method, config)?;
    let raw = features_logvar(epochs, &spatial)?;
    let standardizer = Standardizer::fit(&raw);
    let features: Vec<FeatureVector> = raw.iter().map(|f| standardizer.apply(f)).collect();
    let lda = train_lda(&features, epochs.labels(), config.lda_shrinkage)?;
    Ok(PipelineModel {
        format: FORMAT_TAG.to_string(),
        method,
        preprocessing: config.preprocessing,
        cue_label: config.cue_label.clone(),
        task_window: config.task_window,
        rest_window: config.rest_window,
        spatial,
        standardizer,
        lda,
    })
}

/// Full chain from a continuous recording.
pub fn train_pipeline(rec: &Recording, method: Method, config: &PipelineConfig) -> Result<PipelineModel, PipelineError> {
    let epochs = config.epochs(rec)?;
    train_on_epochs(&epochs, method, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Class,
    pub score: f64,
}

/// Scores preprocessed epochs (same montage and rate as training).
pub fn predict(model: &PipelineModel, epochs: &EpochSet) -> Result<Vec<Prediction>, PipelineError> {
    if epochs.channel_labels() != model.spatial.channel_labels.as_slice()
        || epochs.sample_rate_hz() != model.spatial.sample_rate_hz
    {
        return Err(PipelineError::MontageMismatch {
            expected: model.spatial.channel_labels.clone(),
            expected_fs: model.spatial.sample_rate_hz,
            found: epochs.channel_labels().to_vec(),
            found_fs: epochs.sample_rate_hz(),
        });
    }
    let features = features_logvar(epochs, &model.spatial)?;
    Ok(features
        .iter()
        .map(|f| {
            let z = model.standardizer.apply(f);
            let score = model.lda.score(&z.0);
            Prediction { label: Class::from_bool(score > 0.0), score }
        })
        .collect())
}
