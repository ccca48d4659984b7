//! Browser bindings for the static demo page in `www/`. Every export takes
//! plain numbers and returns a JSON string; the `*_view` functions hold the
//! logic so it can be tested natively.

use mibci::data::Class;
use mibci::dsp::design_butterworth_bandpass;
use mibci::eval::{cross_validate_epochs, CvParams};
use mibci::pipeline::{predict, train_on_epochs, PipelineConfig};
use mibci::spatial::Method;
use mibci::synth::{generate_session, ground_truth, SynthSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct FilterView {
    pub frequencies_hz: Vec<f64>,
    pub magnitude_db: Vec<f64>,
    pub edge_db: (f64, f64),
    pub poles: Vec<(f64, f64)>,
    pub stable: bool,
}

pub fn filter_view(order: usize, low_hz: f64, high_hz: f64, fs_hz: f64, n_points: usize) -> Result<FilterView, String> {
    let f = design_butterworth_bandpass(order, low_hz, high_hz, fs_hz).map_err(|e| e.to_string())?;
    let n = n_points.clamp(16, 4096);
    let frequencies_hz: Vec<f64> = (0..n).map(|i| 0.5 * fs_hz * i as f64 / (n - 1) as f64).collect();
    let magnitude_db = frequencies_hz.iter().map(|&x| f.magnitude_db(x).max(-120.0)).collect();
    Ok(FilterView {
        frequencies_hz,
        magnitude_db,
        edge_db: (f.magnitude_db(low_hz), f.magnitude_db(high_hz)),
        poles: f.poles_from_coefficients().iter().map(|p| (p.re, p.im)).collect(),
        stable: f.is_stable(),
    })
}

fn demo_spec(modulation: f64, snr_db: f64, n_trials: usize, seed: u32) -> SynthSpec {
    let mut spec = SynthSpec { snr_db, n_trials, seed: seed as u64, ..SynthSpec::default() };
    spec.sources[0].modulation = modulation;
    spec
}

#[derive(Debug, Serialize)]
pub struct TrainView {
    pub method: String,
    pub channels: Vec<String>,
    pub true_pattern: Vec<f64>,
    pub estimated_pattern: Vec<f64>,
    pub abs_cosine: f64,
    pub training_accuracy: f64,
    pub spectral_frequencies_hz: Vec<f64>,
    pub spectral_weights: Vec<f64>,
}

pub fn train_view(method: &str, modulation: f64, snr_db: f64, n_trials: usize, seed: u32) -> Result<TrainView, String> {
    let method: Method = method.parse().map_err(|e: String| e)?;
    let spec = demo_spec(modulation, snr_db, n_trials, seed);
    let cfg = PipelineConfig::default();
    let rec = generate_session(&spec).map_err(|e| e.to_string())?;
    let epochs = cfg.epochs(&rec).map_err(|e| e.to_string())?;
    let model = train_on_epochs(&epochs, method, &cfg).map_err(|e| e.to_string())?;
    let preds = predict(&model, &epochs).map_err(|e| e.to_string())?;
    let correct = preds.iter().zip(epochs.labels()).filter(|(p, t)| p.label == **t).count();

    let truth = ground_truth(&spec, cfg.task_window, cfg.rest_window).map_err(|e| e.to_string())?;
    let true_pattern = truth.patterns.first().cloned().unwrap_or_else(|| spec.mixing_matrix().column(0).iter().copied().collect());
    let est = model.spatial.top_pattern();
    let dot: f64 = est.iter().zip(&true_pattern).map(|(a, b)| a * b).sum();
    let norm = est.norm() * true_pattern.iter().map(|v| v * v).sum::<f64>().sqrt();
    // Flip so the estimate is drawn with the same polarity as the truth.
    let sign = if dot < 0.0 { -1.0 } else { 1.0 };

    let (spectral_frequencies_hz, spectral_weights) = match &model.spatial.spectral {
        Some(sw) => (sw.frequencies_hz.clone(), sw.weights[model.spatial.top_component().1].clone()),
        None => (vec![], vec![]),
    };
    Ok(TrainView {
        method: method.display_name().to_string(),
        channels: model.spatial.channel_labels.clone(),
        true_pattern,
        estimated_pattern: est.iter().map(|v| sign * v).collect(),
        abs_cosine: dot.abs() / norm,
        training_accuracy: correct as f64 / preds.len() as f64,
        spectral_frequencies_hz,
        spectral_weights,
    })
}

#[derive(Debug, Serialize)]
pub struct CvMethodView {
    pub method: String,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub tpr: f64,
    pub tnr: f64,
}

pub fn cv_view(
    modulation: f64,
    snr_db: f64,
    n_trials: usize,
    seed: u32,
    folds: usize,
    margin: usize,
) -> Result<Vec<CvMethodView>, String> {
    let spec = demo_spec(modulation, snr_db, n_trials, seed);
    let cfg = PipelineConfig::default();
    let rec = generate_session(&spec).map_err(|e| e.to_string())?;
    let epochs = cfg.epochs(&rec).map_err(|e| e.to_string())?;
    Method::COMPARED
        .iter()
        .map(|&m| {
            let cv = cross_validate_epochs(&epochs, m, CvParams { n_folds: folds, margin }, &cfg).map_err(|e| e.to_string())?;
            let pooled = mibci::eval::ConfusionMetrics::pooled(&cv.folds);
            Ok(CvMethodView {
                method: m.display_name().to_string(),
                fold_accuracy: cv.folds.iter().map(|f| f.accuracy).collect(),
                mean_accuracy: cv.mean_accuracy,
                sd_accuracy: cv.sd_accuracy,
                tpr: pooled.tpr,
                tnr: pooled.tnr,
            })
        })
        .collect()
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e)).map(|v| serde_json::to_string(&v).expect("view serializes"))
}

/// Magnitude response (dB) of a Butterworth bandpass on `[0, fs/2]`.
#[wasm_bindgen]
pub fn filter_response(order: usize, low_hz: f64, high_hz: f64, fs_hz: f64, n_points: usize) -> Result<String, JsError> {
    to_js(filter_view(order, low_hz, high_hz, fs_hz, n_points))
}

/// Synthesizes a session, trains `method` on it, and returns the recovered
/// pattern next to the true one.
#[wasm_bindgen]
pub fn train_synthetic(method: &str, modulation: f64, snr_db: f64, n_trials: usize, seed: u32) -> Result<String, JsError> {
    to_js(train_view(method, modulation, snr_db, n_trials, seed))
}

/// Chronological cross-validation of SpecCSP, SPoC and FBCSP on one
/// synthetic session.
#[wasm_bindgen]
pub fn cross_validate_synthetic(
    modulation: f64,
    snr_db: f64,
    n_trials: usize,
    seed: u32,
    folds: usize,
    margin: usize,
) -> Result<String, JsError> {
    to_js(cv_view(modulation, snr_db, n_trials, seed, folds, margin))
}

/// Class label names in the order used by the scores.
#[wasm_bindgen]
pub fn class_names() -> String {
    serde_json::to_string(&[format!("{:?}", Class::Rest), format!("{:?}", Class::Task)]).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_view_edges() {
        let v = filter_view(2, 6.0, 32.0, 256.0, 257).unwrap();
        assert_eq!(v.frequencies_hz.len(), 257);
        assert!((v.edge_db.0 + 3.0).abs() < 0.5 && (v.edge_db.1 + 3.0).abs() < 0.5);
        assert!(v.stable);
        assert_eq!(v.poles.len(), 4);
        assert!(filter_view(2, 32.0, 6.0, 256.0, 64).is_err());
    }

    #[test]
    fn train_view_recovers_pattern() {
        let v = train_view("speccsp", 0.8, 5.0, 20, 1).unwrap();
        assert_eq!(v.channels.len(), 11);
        assert!(v.abs_cosine > 0.9, "{}", v.abs_cosine);
        assert!(!v.spectral_weights.is_empty());
        assert!(train_view("nope", 0.8, 5.0, 20, 1).is_err());
    }

    #[test]
    fn cv_view_covers_three_methods() {
        let v = cv_view(0.8, 5.0, 20, 2, 5, 2).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|m| m.fold_accuracy.len() == 5));
        let json = serde_json::to_string(&v).unwrap();
        assert!(json.contains("FBCSP"));
    }
}
