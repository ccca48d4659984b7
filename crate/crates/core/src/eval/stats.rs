//! One-way repeated-measures ANOVA and Bonferroni-corrected paired t-tests.
//! Rows of the input matrix are units (sessions), columns are methods.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df: (usize, usize),
    pub p: f64,
    /// Zero error variance: F is 0 (no method effect) or infinite.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub pair: (usize, usize),
    pub t: f64,
    pub p_raw: f64,
    pub p_corrected: f64,
}

fn check(values: &DMatrix<f64>) -> Result<(), EvalError> {
    if values.ncols() < 2 {
        return Err(EvalError::Stats(format!("need at least 2 methods, got {}", values.ncols())));
    }
    if values.nrows() < 2 {
        return Err(EvalError::Stats(format!("need at least 2 units, got {} (df = 0)", values.nrows())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Stats("missing or non-finite cells".into()));
    }
    Ok(())
}

/// `F = MS_method / MS_(method×unit)`.
pub fn rm_anova(values: &DMatrix<f64>) -> Result<AnovaResult, EvalError> {
    check(values)?;
    let (n, k) = values.shape();
    let grand = values.mean();
    let unit_means: Vec<f64> = values.row_iter().map(|r| r.mean()).collect();
    let method_means: Vec<f64> = values.column_iter().map(|c| c.mean()).collect();
    let ss_method = n as f64 * method_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_error = 0.0;
    let mut ss_total = 0.0;
    for i in 0..n {
        for j in 0..k {
            let x = values[(i, j)];
            ss_error += (x - unit_means[i] - method_means[j] + grand).powi(2);
            ss_total += (x - grand).powi(2);
        }
    }
    let df = (k - 1, (k - 1) * (n - 1));
    let tiny = 1e-12 * ss_total.max(f64::MIN_POSITIVE);
    if ss_error <= tiny {
        let no_effect = ss_method <= tiny;
        return Ok(AnovaResult {
            f: if no_effect { 0.0 } else { f64::INFINITY },
            df,
            p: if no_effect { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    let f = (ss_method / df.0 as f64) / (ss_error / df.1 as f64);
    let dist = FisherSnedecor::new(df.0 as f64, df.1 as f64).map_err(|e| EvalError::Stats(e.to_string()))?;
    Ok(AnovaResult { f, df, p: dist.sf(f), degenerate: false })
}

/// Paired t (column `a` minus column `b`) and two-sided p.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<(f64, f64), EvalError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(EvalError::Stats("paired t needs two equal columns of at least 2 units".into()));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let scale = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if sd <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Ok(if mean.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        });
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| EvalError::Stats(e.to_string()))?;
    Ok((t, 2.0 * dist.sf(t.abs())))
}

/// Every column pair `(i, j)`, `i < j`; `p_corrected = min(1, p · n_pairs)`.
pub fn bonferroni_pairwise(values: &DMatrix<f64>) -> Result<Vec<PairwiseResult>, EvalError> {
    check(values)?;
    let k = values.ncols();
    let m = (k * (k - 1) / 2) as f64;
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let a: Vec<f64> = values.column(i).iter().copied().collect();
            let b: Vec<f64> = values.column(j).iter().copied().collect();
            let (t, p) = paired_t(&a, &b)?;
            out.push(PairwiseResult { pair: (i, j), t, p_raw: p, p_corrected: (p * m).min(1.0) });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// `default_rng(42).standard_normal((6, 3)) + [0, 0.5, 1.0]`.
    fn seed42() -> DMatrix<f64> {
        DMatrix::from_row_slice(
            6,
            3,
            &[
                0.30471707975443135, -0.5399841062404955, 1.7504511958064572,
                0.9405647163912139, -1.4510351886538364, -0.3021795068623181,
                0.12784040316728537, 0.1837574076564178, 0.9831988424957112,
                -0.85304392757358, 1.3793979748628287, 1.7777919354289482,
                0.06603069756121605, 1.6272412069680329, 1.4675093422520455,
                -0.8592924628832382, 0.8687507840824988, 0.0411173991710011,
            ],
        )
    }

    #[test]
    fn seed42_reference() {
        // Two-way OLS ANOVA (method + unit) and paired t-tests from an external
        // statistics package.
        let r = rm_anova(&seed42()).unwrap();
        assert_eq!(r.df, (2, 10));
        assert!((r.f - 1.526213830676376).abs() < 1e-6);
        assert!((r.p - 0.2639632854380029).abs() < 1e-6);
        let pw = bonferroni_pairwise(&seed42()).unwrap();
        let expected = [
            ((0, 1), -0.5355001302128107, 0.6152560846626651, 1.0),
            ((0, 2), -1.9239883808322111, 0.11235269798796556, 0.3370580939638967),
            ((1, 2), -1.377024889156619, 0.22696116750498704, 0.6808835025149611),
        ];
        for (got, (pair, t, p, pc)) in pw.iter().zip(expected) {
            assert_eq!(got.pair, pair);
            assert!((got.t - t).abs() < 1e-6);
            assert!((got.p_raw - p).abs() < 1e-6);
            assert!((got.p_corrected - pc).abs() < 1e-6);
        }
    }

    #[test]
    fn two_methods_f_is_t_squared() {
        let x = seed42().columns(0, 2).into_owned();
        let f = rm_anova(&x).unwrap().f;
        let t = bonferroni_pairwise(&x).unwrap()[0].t;
        assert!((f - t * t).abs() < 1e-9);
        assert!((f - 0.2867603894579371).abs() < 1e-9);
    }

    #[test]
    fn identical_columns() {
        let col = [0.6, 0.7, 0.55, 0.8];
        let x = DMatrix::from_fn(4, 3, |i, _| col[i]);
        let r = rm_anova(&x).unwrap();
        assert_eq!((r.f, r.p), (0.0, 1.0));
        assert!(bonferroni_pairwise(&x).unwrap().iter().all(|p| p.p_corrected == 1.0));
    }

    #[test]
    fn pure_method_shift_is_degenerate() {
        let x = DMatrix::from_fn(4, 2, |i, j| i as f64 + 0.1 * j as f64);
        let r = rm_anova(&x).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 0.0);
    }

    #[test]
    fn shape_errors() {
        assert!(rm_anova(&DMatrix::from_element(1, 3, 0.5)).is_err());
        assert!(rm_anova(&DMatrix::from_element(5, 1, 0.5)).is_err());
        assert!(bonferroni_pairwise(&DMatrix::from_element(1, 3, 0.5)).is_err());
    }

    #[test]
    fn three_methods_scale_raw_p_by_three() {
        for p in bonferroni_pairwise(&seed42()).unwrap() {
            assert_eq!(p.p_corrected, (p.p_raw * 3.0).min(1.0));
        }
    }

    proptest! {
        #[test]
        fn affine_invariance(cells in prop::collection::vec(-3.0f64..3.0, 15), shift in -10.0f64..10.0, scale in 0.1f64..10.0) {
            let x = DMatrix::from_row_slice(5, 3, &cells);
            let base = rm_anova(&x).unwrap();
            prop_assume!(!base.degenerate);
            let y = x.map(|v| scale * v + shift);
            let f = rm_anova(&y).unwrap().f;
            prop_assert!((f - base.f).abs() <= 1e-9 * base.f.max(1.0));
        }
    }
}
