//! Chronological cross-validation, confusion metrics, reports and the
//! cross-method statistics.

mod folds;
mod metrics;
pub mod report;
mod stats;

pub use folds::{check_class_balance, plan_folds, Fold, FoldPlan};
pub use metrics::{confusion, ConfusionMetrics};
pub use report::{format_mean_sd, EvalReport, Failure, Granularity, SessionResult, StatsUnit};
pub use stats::{bonferroni_pairwise, paired_t, rm_anova, AnovaResult, PairwiseResult};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Class, EpochSet, Recording};
use crate::pipeline::{predict, train_on_epochs, PipelineConfig, PipelineError};
use crate::spatial::Method;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("fold plan: {0}")]
    Plan(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("statistics: {0}")]
    Stats(String),
    #[error("report: {0}")]
    Report(String),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: PipelineError,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvParams {
    pub n_folds: usize,
    pub margin: usize,
}

impl Default for CvParams {
    fn default() -> Self {
        Self { n_folds: 10, margin: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub method: Method,
    pub plan: FoldPlan,
    pub folds: Vec<ConfusionMetrics>,
    pub mean_accuracy: f64,
    /// Sample SD (n − 1) across folds.
    pub sd_accuracy: f64,
}

/// `(mean, sample SD)` ignoring NaN entries.
pub fn mean_sd(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (mean, sd)
}

/// Cross-validation on preprocessed epochs. Each fold refits the spatial
/// model, standardization and LDA on `epochs.select(train)` only.
pub fn cross_validate_epochs(
    epochs: &EpochSet,
    method: Method,
    cv: CvParams,
    config: &PipelineConfig,
) -> Result<CvResult, EvalError> {
    let plan = plan_folds(epochs.len(), cv.n_folds, cv.margin)?;
    check_class_balance(&plan, epochs.labels())?;
    let mut folds = Vec::with_capacity(plan.n_folds());
    for fold in &plan.folds {
        let tag = |source| EvalError::Fold { fold: fold.index + 1, source };
        let model = train_on_epochs(&epochs.select(&fold.train), method, config).map_err(tag)?;
        let test = epochs.select(&fold.test_indices());
        let predicted: Vec<Class> = predict(&model, &test).map_err(tag)?.iter().map(|p| p.label).collect();
        folds.push(confusion(test.labels(), &predicted)?);
    }
    let (mean_accuracy, sd_accuracy) = mean_sd(folds.iter().map(|m| m.accuracy));
    Ok(CvResult { method, plan, folds, mean_accuracy, sd_accuracy })
}

/// Preprocesses and epochs the recording, then cross-validates.
pub fn cross_validate(rec: &Recording, method: Method, cv: CvParams, config: &PipelineConfig) -> Result<CvResult, EvalError> {
    let epochs = config.epochs(rec)?;
    cross_validate_epochs(&epochs, method, cv, config)
}
