//! Confusion counts and rates; the positive class is the task epoch.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::Class;

/// Rates with a zero denominator are NaN (serialized as `null`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    #[serde(with = "nan_as_null")]
    pub accuracy: f64,
    #[serde(with = "nan_as_null")]
    pub tpr: f64,
    #[serde(with = "nan_as_null")]
    pub tnr: f64,
    #[serde(with = "nan_as_null")]
    pub fpr: f64,
    #[serde(with = "nan_as_null")]
    pub fnr: f64,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// `(a / n, 1 − a / n)`; the complement is formed by subtraction so the two
/// rates sum to exactly 1.
fn rate_pair(a: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let r = a as f64 / n as f64;
    (r, 1.0 - r)
}

impl ConfusionMetrics {
    pub fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        let total = tp + tn + fp + fn_;
        let (tpr, fnr) = rate_pair(tp, tp + fn_);
        let (tnr, fpr) = rate_pair(tn, tn + fp);
        let accuracy = if total == 0 { f64::NAN } else { (tp + tn) as f64 / total as f64 };
        Self { tp, tn, fp, fn_, accuracy, tpr, tnr, fpr, fnr }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Sum of counts, rates recomputed.
    pub fn pooled<'a>(items: impl IntoIterator<Item = &'a ConfusionMetrics>) -> Self {
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for m in items {
            tp += m.tp;
            tn += m.tn;
            fp += m.fp;
            fn_ += m.fn_;
        }
        Self::from_counts(tp, tn, fp, fn_)
    }
}

pub fn confusion(truth: &[Class], predicted: &[Class]) -> Result<ConfusionMetrics, EvalError> {
    if truth.len() != predicted.len() {
        return Err(EvalError::Metrics(format!("{} labels vs {} predictions", truth.len(), predicted.len())));
    }
    if truth.is_empty() {
        return Err(EvalError::Metrics("no labels".into()));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (t, p) in truth.iter().zip(predicted) {
        match (t, p) {
            (Class::Task, Class::Task) => tp += 1,
            (Class::Rest, Class::Rest) => tn += 1,
            (Class::Rest, Class::Task) => fp += 1,
            (Class::Task, Class::Rest) => fn_ += 1,
        }
    }
    Ok(ConfusionMetrics::from_counts(tp, tn, fp, fn_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Class::{Rest as R, Task as T};

    #[test]
    fn all_correct() {
        let m = confusion(&[T, R, T], &[T, R, T]).unwrap();
        assert_eq!((m.accuracy, m.fpr, m.fnr), (1.0, 0.0, 0.0));
    }

    #[test]
    fn complement() {
        let m = confusion(&[T, R, T, R], &[R, T, R, T]).unwrap();
        assert_eq!((m.accuracy, m.tpr, m.tnr), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_counted() {
        let m = confusion(&[T, T, R, R], &[T, R, T, R]).unwrap();
        assert_eq!((m.tp, m.fn_, m.fp, m.tn), (1, 1, 1, 1));
        assert!([m.accuracy, m.tpr, m.tnr, m.fpr, m.fnr].iter().all(|&r| r == 0.5));
    }

    #[test]
    fn zero_denominator_is_nan() {
        let m = confusion(&[R, R], &[R, T]).unwrap();
        assert!(m.tpr.is_nan() && m.fnr.is_nan());
        assert_eq!(m.tnr, 0.5);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"tpr\":null"));
        let back: ConfusionMetrics = serde_json::from_str(&json).unwrap();
        assert!(back.tpr.is_nan());
    }

    #[test]
    fn errors() {
        assert!(confusion(&[T], &[T, R]).is_err());
        assert!(confusion(&[], &[]).is_err());
    }

    #[test]
    fn exhaustive_complements_sum_to_one() {
        for n in 1..=400 {
            for a in 0..=n {
                let (r, c) = rate_pair(a, n);
                assert_eq!(r + c, 1.0, "{a}/{n}");
            }
        }
    }

    proptest! {
        #[test]
        fn identities(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..300)) {
            let truth: Vec<Class> = pairs.iter().map(|p| Class::from_bool(p.0)).collect();
            let pred: Vec<Class> = pairs.iter().map(|p| Class::from_bool(p.1)).collect();
            let m = confusion(&truth, &pred).unwrap();
            let pos = truth.iter().filter(|c| c.is_task()).count();
            prop_assert_eq!(m.tp + m.fn_, pos);
            prop_assert_eq!(m.tn + m.fp, truth.len() - pos);
            if pos > 0 { prop_assert_eq!(m.tpr + m.fnr, 1.0); }
            if pos < truth.len() { prop_assert_eq!(m.tnr + m.fpr, 1.0); }
            prop_assert_eq!(m.accuracy, (m.tp + m.tn) as f64 / truth.len() as f64);
        }
    }
}
