//! Chronological blockwise fold plans with a guard margin.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::Class;

/// Smallest train set that can hold two trials of each class.
const MIN_TRAIN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    /// 0-based, half-open, chronological.
    pub test: Range<usize>,
    pub train: Vec<usize>,
}

impl Fold {
    pub fn test_indices(&self) -> Vec<usize> {
        self.test.clone().collect()
    }

    /// Smallest `|i − j|` over train/test pairs (`usize::MAX` if train is empty).
    pub fn min_distance(&self) -> usize {
        self.train
            .iter()
            .map(|&i| {
                if i < self.test.start {
                    self.test.start - i
                } else if i >= self.test.end {
                    i + 1 - self.test.end
                } else {
                    0
                }
            })
            .min()
            .unwrap_or(usize::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_trials: usize,
    pub margin: usize,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    /// Folds whose train set comes within `margin` trials of the test block.
    pub fn leakage_violations(&self) -> Vec<usize> {
        self.folds.iter().filter(|f| f.min_distance() <= self.margin).map(|f| f.index).collect()
    }
}

/// Contiguous test blocks (the first `n_trials % n_folds` one trial longer);
/// train = everything else except `margin` trials on either side of the block.
pub fn plan_folds(n_trials: usize, n_folds: usize, margin: usize) -> Result<FoldPlan, EvalError> {
    if n_folds < 2 {
        return Err(EvalError::Plan(format!("need at least 2 folds, got {n_folds}")));
    }
    if n_trials < n_folds {
        return Err(EvalError::Plan(format!("{n_trials} trials cannot fill {n_folds} folds")));
    }
    let base = n_trials / n_folds;
    let extra = n_trials % n_folds;
    let mut folds = Vec::with_capacity(n_folds);
    let mut start = 0;
    for index in 0..n_folds {
        let len = base + usize::from(index < extra);
        let test = start..start + len;
        let lo = test.start.saturating_sub(margin);
        let hi = (test.end + margin).min(n_trials);
        let train: Vec<usize> = (0..lo).chain(hi..n_trials).collect();
        if train.len() < MIN_TRAIN {
            return Err(EvalError::Plan(format!(
                "fold {} keeps only {} train trials with margin {margin}; at least 2 per class are needed",
                index + 1,
                train.len()
            )));
        }
        folds.push(Fold { index, test, train });
        start += len;
    }
    Ok(FoldPlan { n_trials, margin, folds })
}

/// Every fold's train set must contain two trials of each class.
pub fn check_class_balance(plan: &FoldPlan, labels: &[Class]) -> Result<(), EvalError> {
    if labels.len() != plan.n_trials {
        return Err(EvalError::Plan(format!("plan covers {} trials, got {} labels", plan.n_trials, labels.len())));
    }
    for fold in &plan.folds {
        for class in [Class::Rest, Class::Task] {
            let have = fold.train.iter().filter(|&&i| labels[i] == class).count();
            if have < 2 {
                return Err(EvalError::Plan(format!(
                    "fold {} train set has {have} {class:?} trials; at least 2 are needed",
                    fold.index + 1
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eighty_ten_five() {
        let plan = plan_folds(80, 10, 5).unwrap();
        let f1 = &plan.folds[0];
        assert_eq!(f1.test, 0..8);
        assert_eq!(f1.train, (13..80).collect::<Vec<_>>());
        let f5 = &plan.folds[4];
        assert_eq!(f5.test, 32..40);
        assert_eq!(f5.train, (0..27).chain(45..80).collect::<Vec<_>>());
    }

    #[test]
    fn zero_margin_is_complement() {
        let plan = plan_folds(80, 10, 0).unwrap();
        for f in &plan.folds {
            let mut all: Vec<usize> = f.train.iter().copied().chain(f.test.clone()).collect();
            all.sort_unstable();
            assert_eq!(all, (0..80).collect::<Vec<_>>());
        }
    }

    #[test]
    fn over_constrained() {
        assert!(matches!(plan_folds(10, 10, 5), Err(EvalError::Plan(_))));
        assert!(plan_folds(5, 10, 0).is_err());
    }

    #[test]
    fn class_balance() {
        let plan = plan_folds(20, 2, 0).unwrap();
        let labels: Vec<Class> = (0..20).map(|i| Class::from_bool(i % 2 == 1)).collect();
        check_class_balance(&plan, &labels).unwrap();
        let skewed: Vec<Class> = (0..20).map(|i| Class::from_bool(i >= 10)).collect();
        assert!(check_class_balance(&plan, &skewed).is_err());
    }

    proptest! {
        #[test]
        fn partition_and_margin(n in 10usize..200, k in 2usize..12, margin in 0usize..8) {
            if let Ok(plan) = plan_folds(n, k, margin) {
                let mut tested: Vec<usize> = plan.folds.iter().flat_map(|f| f.test.clone()).collect();
                prop_assert_eq!(tested.len(), n);
                tested.dedup();
                prop_assert_eq!(tested, (0..n).collect::<Vec<_>>());
                prop_assert!(plan.leakage_violations().is_empty());
                for w in plan.folds.windows(2) {
                    prop_assert!(w[0].test.end == w[1].test.start);
                }
                for f in &plan.folds {
                    let sizes = (n / k, n.div_ceil(k));
                    prop_assert!(f.test.len() == sizes.0 || f.test.len() == sizes.1);
                }
            }
        }
    }
}
