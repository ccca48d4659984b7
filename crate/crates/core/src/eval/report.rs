//! Evaluation reports: per-fold CSV, subject × method accuracy tables,
//! error-rate table and a full-precision JSON document.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{bonferroni_pairwise, mean_sd, rm_anova, AnovaResult, ConfusionMetrics, CvResult, EvalError, PairwiseResult};
use crate::spatial::Method;

pub const REPORT_FORMAT: &str = "mibci-report/1";
pub const FOLDS_HEADER: &str = "session,method,fold,acc,tpr,tnr,fpr,fnr";
pub const COMPARED_METRICS: [&str; 5] = ["accuracy", "tpr", "tnr", "fpr", "fnr"];

/// Subject id of a session name: the part before the first `_`.
pub fn subject_of(session: &str) -> &str {
    session.split('_').next().unwrap_or(session)
}

/// Percent, one decimal: `"65.2 ± 11.3"`.
pub fn format_mean_sd(values: &[f64]) -> String {
    let (m, s) = mean_sd(values.iter().copied());
    let pct = |v: f64| if v.is_nan() { "n/a".to_string() } else { format!("{:.1}", 100.0 * v) };
    format!("{} ± {}", pct(m), pct(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StatsUnit {
    #[default]
    Session,
    Subject,
}

/// Which values a table's `±` spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    /// Session mean accuracies.
    Sessions,
    /// Individual fold accuracies.
    Folds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub session: String,
    pub subject: String,
    pub method: Method,
    pub folds: Vec<ConfusionMetrics>,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    /// Counts summed over folds.
    pub pooled: ConfusionMetrics,
}

impl SessionResult {
    pub fn from_cv(session: &str, cv: &CvResult) -> Self {
        Self {
            session: session.to_string(),
            subject: subject_of(session).to_string(),
            method: cv.method,
            folds: cv.folds.clone(),
            mean_accuracy: cv.mean_accuracy,
            sd_accuracy: cv.sd_accuracy,
            pooled: ConfusionMetrics::pooled(&cv.folds),
        }
    }

    /// Session-level value of one of [`COMPARED_METRICS`].
    pub fn metric(&self, name: &str) -> f64 {
        match name {
            "accuracy" => self.mean_accuracy,
            "tpr" => self.pooled.tpr,
            "tnr" => self.pooled.tnr,
            "fpr" => self.pooled.fpr,
            "fnr" => self.pooled.fnr,
            _ => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub session: String,
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub anova: AnovaResult,
    pub pairwise: Vec<PairwiseResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonStats {
    pub unit: StatsUnit,
    pub methods: Vec<Method>,
    pub units: Vec<String>,
    pub metrics: Vec<MetricComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub methods: Vec<Method>,
    pub results: Vec<SessionResult>,
    pub failures: Vec<Failure>,
    pub statistics: Option<ComparisonStats>,
    pub notes: Vec<String>,
}

impl EvalReport {
    /// Results are kept in the given order; statistics are attached when at
    /// least two methods have results.
    pub fn new(methods: Vec<Method>, results: Vec<SessionResult>, failures: Vec<Failure>, unit: StatsUnit) -> Self {
        let mut report = Self {
            format: REPORT_FORMAT.to_string(),
            methods,
            results,
            failures,
            statistics: None,
            notes: vec!["repeated-measures ANOVA without sphericity correction".to_string()],
        };
        if report.methods.len() >= 2 {
            match compare(std::slice::from_ref(&report), unit) {
                Ok(s) => report.statistics = Some(s),
                Err(e) => report.notes.push(format!("statistics omitted: {e}")),
            }
        } else {
            report.notes.push("statistics omitted: fewer than 2 methods".to_string());
        }
        report
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let r: EvalReport = serde_json::from_str(text).map_err(|e| EvalError::Report(e.to_string()))?;
        if r.format != REPORT_FORMAT {
            return Err(EvalError::Report(format!("unsupported format '{}'", r.format)));
        }
        Ok(r)
    }

    pub fn folds_csv(&self) -> String {
        let mut out = String::from(FOLDS_HEADER);
        out.push('\n');
        for r in &self.results {
            for (i, m) in r.folds.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    r.session,
                    r.method.name(),
                    i + 1,
                    m.accuracy,
                    m.tpr,
                    m.tnr,
                    m.fpr,
                    m.fnr
                )
                .unwrap();
            }
        }
        out
    }

    fn subjects(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.results.iter().filter(|r| seen.insert(r.subject.clone())).map(|r| r.subject.clone()).collect()
    }

    fn accuracies<'a>(&'a self, method: Method, subject: Option<&'a str>, g: Granularity) -> Vec<f64> {
        self.results
            .iter()
            .filter(|r| r.method == method && subject.is_none_or(|s| r.subject == s))
            .flat_map(|r| match g {
                Granularity::Sessions => vec![r.mean_accuracy],
                Granularity::Folds => r.folds.iter().map(|f| f.accuracy).collect(),
            })
            .collect()
    }

    /// Rows = subjects plus an overall `Mean` row, columns = methods.
    pub fn table_csv(&self, g: Granularity) -> String {
        let mut out = String::from("subject");
        for m in &self.methods {
            write!(out, ",{}", m.display_name()).unwrap();
        }
        out.push('\n');
        let mut rows: Vec<Option<String>> = self.subjects().into_iter().map(Some).collect();
        rows.push(None);
        for subject in rows {
            out.push_str(subject.as_deref().unwrap_or("Mean"));
            for &m in &self.methods {
                write!(out, ",{}", format_mean_sd(&self.accuracies(m, subject.as_deref(), g))).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Rows = methods, columns = session-level accuracy and error rates.
    pub fn rates_csv(&self) -> String {
        let mut out = String::from("method,accuracy,tpr,tnr,fpr,fnr\n");
        for &m in &self.methods {
            out.push_str(m.display_name());
            for metric in COMPARED_METRICS {
                let v: Vec<f64> = self.results.iter().filter(|r| r.method == m).map(|r| r.metric(metric)).collect();
                write!(out, ",{}", format_mean_sd(&v)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Human-readable summary for stdout.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let width = 16;
        let _ = write!(out, "{:<10}", "subject");
        for m in &self.methods {
            let _ = write!(out, "{:>width$}", m.display_name());
        }
        out.push('\n');
        for line in self.table_csv(Granularity::Sessions).lines().skip(1) {
            let mut cells = line.split(',');
            let _ = write!(out, "{:<10}", cells.next().unwrap_or(""));
            for c in cells {
                let _ = write!(out, "{c:>width$}");
            }
            out.push('\n');
        }
        if let Some(stats) = &self.statistics {
            for mc in &stats.metrics {
                let _ = writeln!(
                    out,
                    "{}: F({}, {}) = {:.3}, p = {:.4}",
                    mc.metric, mc.anova.df.0, mc.anova.df.1, mc.anova.f, mc.anova.p
                );
                for p in &mc.pairwise {
                    let _ = writeln!(
                        out,
                        "  {} vs {}: t = {:.3}, p(bonf) = {:.4}",
                        stats.methods[p.pair.0].display_name(),
                        stats.methods[p.pair.1].display_name(),
                        p.t,
                        p.p_corrected
                    );
                }
            }
        }
        for f in &self.failures {
            let _ = writeln!(out, "FAILED {} [{}]: {}", f.session, f.method.name(), f.error);
        }
        out
    }
}

/// Repeated-measures ANOVA and Bonferroni pairwise tests on accuracy and
/// each error rate, across the methods common to all `reports`.
pub fn compare(reports: &[EvalReport], unit: StatsUnit) -> Result<ComparisonStats, EvalError> {
    let mut methods: Vec<Method> = Vec::new();
    let mut by_method: BTreeMap<Method, BTreeMap<String, &SessionResult>> = BTreeMap::new();
    for r in reports.iter().flat_map(|rep| &rep.results) {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
        if by_method.entry(r.method).or_default().insert(r.session.clone(), r).is_some() {
            return Err(EvalError::Report(format!("session '{}' appears twice for {}", r.session, r.method.name())));
        }
    }
    if methods.len() < 2 {
        return Err(EvalError::Stats(format!("need at least 2 methods, got {}", methods.len())));
    }
    let sessions: Vec<String> = by_method[&methods[0]].keys().cloned().collect();
    for m in &methods[1..] {
        let other: Vec<String> = by_method[m].keys().cloned().collect();
        if other != sessions {
            return Err(EvalError::Report(format!(
                "session sets differ between {} and {}",
                methods[0].name(),
                m.name()
            )));
        }
    }
    let units: Vec<String> = match unit {
        StatsUnit::Session => sessions.clone(),
        StatsUnit::Subject => {
            let set: BTreeSet<String> = sessions.iter().map(|s| subject_of(s).to_string()).collect();
            set.into_iter().collect()
        }
    };
    let mut metrics = Vec::new();
    for metric in COMPARED_METRICS {
        let values = DMatrix::from_fn(units.len(), methods.len(), |i, j| {
            let per_session = &by_method[&methods[j]];
            let cells: Vec<f64> = match unit {
                StatsUnit::Session => vec![per_session[&units[i]].metric(metric)],
                StatsUnit::Subject => per_session
                    .values()
                    .filter(|r| r.subject == units[i])
                    .map(|r| r.metric(metric))
                    .collect(),
            };
            mean_sd(cells).0
        });
        let anova = rm_anova(&values).map_err(|e| EvalError::Stats(format!("{metric}: {e}")))?;
        let pairwise = bonferroni_pairwise(&values)?;
        metrics.push(MetricComparison { metric: metric.to_string(), anova, pairwise });
    }
    Ok(ComparisonStats { unit, methods, units, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(session: &str, method: Method, accs: &[f64]) -> SessionResult {
        let folds: Vec<ConfusionMetrics> = accs
            .iter()
            .map(|&a| {
                let correct = (a * 8.0).round() as usize;
                ConfusionMetrics::from_counts(correct / 2, correct - correct / 2, 4 - (correct - correct / 2), 4 - correct / 2)
            })
            .collect();
        let (m, s) = mean_sd(folds.iter().map(|f| f.accuracy));
        SessionResult {
            session: session.to_string(),
            subject: subject_of(session).to_string(),
            method,
            pooled: ConfusionMetrics::pooled(&folds),
            folds,
            mean_accuracy: m,
            sd_accuracy: s,
        }
    }

    #[test]
    fn mean_sd_formatting() {
        assert_eq!(format_mean_sd(&[0.5, 0.625, 0.75]), "62.5 ± 12.5");
        assert_eq!(format_mean_sd(&[0.652]), "65.2 ± n/a");
        // mean 0.652, sample SD 0.113
        assert_eq!(format_mean_sd(&[0.652 - 0.113, 0.652, 0.652 + 0.113]), "65.2 ± 11.3");
    }

    #[test]
    fn table_layout() {
        let results = vec![
            result("s01_01", Method::Fbcsp, &[0.5, 0.75]),
            result("s01_02", Method::Fbcsp, &[0.625, 0.625]),
            result("s02_01", Method::Fbcsp, &[1.0, 0.875]),
        ];
        let report = EvalReport::new(vec![Method::Fbcsp], results, vec![], StatsUnit::Session);
        assert!(report.statistics.is_none());
        let t = report.table_csv(Granularity::Sessions);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "subject,FBCSP");
        assert_eq!(lines[1], "s01,62.5 ± 0.0");
        assert_eq!(lines[2], "s02,93.8 ± n/a");
        assert_eq!(lines.len(), 4);
        assert!(report.table_csv(Granularity::Folds).contains("s01,62.5 ± 10.2"));
        let folds = report.folds_csv();
        assert!(folds.starts_with("session,method,fold,acc,tpr,tnr,fpr,fnr\ns01_01,fbcsp,1,0.5,"));
        assert_eq!(folds.lines().count(), 7);
    }

    #[test]
    fn identical_methods_give_unit_p() {
        let mut results = Vec::new();
        for (s, a) in [("a_1", 0.5), ("a_2", 0.625), ("b_1", 0.875)] {
            for m in [Method::SpecCsp, Method::Spoc] {
                results.push(result(s, m, &[a, a]));
            }
        }
        let report = EvalReport::new(vec![Method::SpecCsp, Method::Spoc], results, vec![], StatsUnit::Session);
        let stats = report.statistics.as_ref().unwrap();
        assert_eq!(stats.metrics.len(), 5);
        assert!(stats.metrics.iter().flat_map(|m| &m.pairwise).all(|p| p.p_corrected == 1.0));
        let back = EvalReport::from_json(&report.to_json()).unwrap();
        assert_eq!(back.folds_csv(), report.folds_csv());
    }

    #[test]
    fn mismatched_sessions_and_single_session() {
        let a = vec![result("x_1", Method::Spoc, &[0.5]), result("x_2", Method::Fbcsp, &[0.5])];
        let r = EvalReport { results: a, ..EvalReport::new(vec![], vec![], vec![], StatsUnit::Session) };
        assert!(matches!(compare(&[r], StatsUnit::Session), Err(EvalError::Report(_))));
        let b = vec![result("x_1", Method::Spoc, &[0.5]), result("x_1", Method::Fbcsp, &[0.75])];
        let r = EvalReport { results: b, ..EvalReport::new(vec![], vec![], vec![], StatsUnit::Session) };
        assert!(matches!(compare(&[r], StatsUnit::Session), Err(EvalError::Stats(_))));
    }

    #[test]
    fn subject_units_average_sessions() {
        let mut results = Vec::new();
        for (s, a, b) in [("a_1", 0.5, 0.625), ("a_2", 0.75, 0.625), ("b_1", 0.5, 0.875), ("c_1", 0.625, 0.75)] {
            results.push(result(s, Method::Spoc, &[a]));
            results.push(result(s, Method::Fbcsp, &[b]));
        }
        let r = EvalReport::new(vec![Method::Spoc, Method::Fbcsp], results, vec![], StatsUnit::Subject);
        let s = r.statistics.unwrap();
        assert_eq!(s.units, vec!["a", "b", "c"]);
    }
}
