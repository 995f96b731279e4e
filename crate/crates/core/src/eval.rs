//! Precision-first evaluation: confusion counts, precision/recall/F1 with
//! explicit undefined values, multi-seed stability reports and feature
//! importance tables.

use std::fmt;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::ForestModel;
use crate::rng::mix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Positive class is 1.
pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionCounts> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        match (t, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fn_ += 1,
            _ => {
                return Err(Error::Value {
                    row: i + 1,
                    message: format!("labels must be 0/1, got ({t}, {p})"),
                })
            }
        }
    }
    Ok(c)
}

/// A ratio that is undefined when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Value(f64),
    Undefined,
}

impl Metric {
    pub fn ratio(num: u64, den: u64) -> Metric {
        if den == 0 {
            Metric::Undefined
        } else {
            Metric::Value(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::Undefined => None,
        }
    }

    pub fn is_undefined(self) -> bool {
        self == Metric::Undefined
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Value(v) => write!(f, "{v:.6}"),
            Metric::Undefined => f.write_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub counts: ConfusionCounts,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

/// F1 is computed as 2tp / (2tp + fp + fn), which equals the harmonic mean
/// of precision and recall wherever both are defined and non-zero.
pub fn metrics(c: &ConfusionCounts) -> MetricReport {
    MetricReport {
        counts: *c,
        precision: Metric::ratio(c.tp, c.tp + c.fp),
        recall: Metric::ratio(c.tp, c.tp + c.fn_),
        f1: Metric::ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

/// Scores probabilities at the 0.5 decision threshold.
pub fn evaluate_probabilities(y_true: &[u8], probabilities: &[f64]) -> Result<MetricReport> {
    let pred: Vec<u8> = probabilities.iter().map(|&p| (p >= 0.5) as u8).collect();
    Ok(metrics(&confusion(y_true, &pred)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Number of runs where the metric was defined.
    pub defined_runs: usize,
}

impl MetricSummary {
    /// Summary over the defined values; `None` when every run is undefined.
    pub fn of(values: &[Metric]) -> Option<MetricSummary> {
        let v: Vec<f64> = values.iter().filter_map(|m| m.value()).collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MetricSummary {
            mean,
            std,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            defined_runs: v.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub runs: Vec<RunResult>,
    pub precision: Option<MetricSummary>,
    pub recall: Option<MetricSummary>,
    pub f1: Option<MetricSummary>,
    /// Index into `runs` of the highest-precision run (lowest index on ties).
    pub best_run: Option<usize>,
}

impl StabilityReport {
    pub fn from_runs(runs: Vec<RunResult>) -> StabilityReport {
        let col = |f: fn(&MetricReport) -> Metric| runs.iter().map(|r| f(&r.report)).collect::<Vec<_>>();
        let precision = MetricSummary::of(&col(|r| r.precision));
        let recall = MetricSummary::of(&col(|r| r.recall));
        let f1 = MetricSummary::of(&col(|r| r.f1));
        let mut best_run: Option<usize> = None;
        for (i, r) in runs.iter().enumerate() {
            if let Some(p) = r.report.precision.value() {
                let better = match best_run.and_then(|b| runs[b].report.precision.value()) {
                    Some(bp) => p > bp,
                    None => true,
                };
                if better {
                    best_run = Some(i);
                }
            }
        }
        StabilityReport {
            runs,
            precision,
            recall,
            f1,
            best_run,
        }
    }

    pub fn best(&self) -> Option<&RunResult> {
        self.best_run.map(|i| &self.runs[i])
    }

    /// `statistic,precision,recall,f1` rows for mean, std, min, max and the
    /// best run's values.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("statistic,precision,recall,f1\n");
        let cell = |s: &Option<MetricSummary>, f: fn(&MetricSummary) -> f64| {
            s.as_ref().map_or("undefined".to_string(), |s| format!("{:.6}", f(s)))
        };
        let stats: [(&str, fn(&MetricSummary) -> f64); 4] =
            [("mean", |s| s.mean), ("std", |s| s.std), ("min", |s| s.min), ("max", |s| s.max)];
        for (name, f) in stats {
            let _ = writeln!(
                out,
                "{name},{},{},{}",
                cell(&self.precision, f),
                cell(&self.recall, f),
                cell(&self.f1, f)
            );
        }
        match self.best() {
            Some(b) => {
                let _ = writeln!(out, "best,{},{},{}", b.report.precision, b.report.recall, b.report.f1);
            }
            None => out.push_str("best,undefined,undefined,undefined\n"),
        }
        out
    }
}

pub const METRICS_CSV_HEADER: &str = "run,seed,tp,fp,tn,fn,precision,recall,f1";

pub fn metrics_csv(runs: &[RunResult]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in runs {
        let c = &r.report.counts;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.run, r.seed, c.tp, c.fp, c.tn, c.fn_, r.report.precision, r.report.recall, r.report.f1
        );
    }
    out
}

/// Runs `runner` with seeds `mix(base_seed, i)` for i = 1..=n_runs. Runs may
/// execute concurrently; results are ordered by run index.
pub fn stability<F>(runner: F, n_runs: usize, base_seed: u64) -> Result<StabilityReport>
where
    F: Fn(u64) -> Result<MetricReport> + Sync,
{
    if n_runs < 2 {
        return Err(Error::InvalidParam("stability needs at least 2 runs".into()));
    }
    let results: Vec<Result<RunResult>> = (1..=n_runs)
        .into_par_iter()
        .map(|run| {
            let seed = mix(base_seed, run as u64);
            runner(seed)
                .map(|report| RunResult { run, seed, report })
                .map_err(|e| Error::Run {
                    run,
                    source: Box::new(e),
                })
        })
        .collect();
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(StabilityReport::from_runs(runs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureOrigin {
    Handcrafted,
    Learned,
}

impl fmt::Display for FeatureOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureOrigin::Handcrafted => "handcrafted",
            FeatureOrigin::Learned => "learned",
        })
    }
}

/// Models that can report per-feature importance.
pub trait FeatureImportance {
    /// (feature name, importance, origin) in model feature order.
    fn feature_importances(&self) -> Vec<(String, f64, FeatureOrigin)>;
}

impl FeatureImportance for ForestModel {
    fn feature_importances(&self) -> Vec<(String, f64, FeatureOrigin)> {
        self.feature_names()
            .iter()
            .cloned()
            .zip(self.gini_importance())
            .map(|(n, v)| (n, v, FeatureOrigin::Handcrafted))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub rank: usize,
    pub feature: String,
    pub importance: f64,
    pub origin: FeatureOrigin,
}

/// Top `top_n` features by importance, descending, ties by name.
pub fn importance_report<M: FeatureImportance + ?Sized>(m: &M, top_n: usize) -> Vec<ImportanceRow> {
    let mut entries = m.feature_importances();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries
        .into_iter()
        .take(top_n)
        .enumerate()
        .map(|(i, (feature, importance, origin))| ImportanceRow {
            rank: i + 1,
            feature,
            importance,
            origin,
        })
        .collect()
}

pub const IMPORTANCE_CSV_HEADER: &str = "rank,feature,importance,origin";

pub fn importance_csv(rows: &[ImportanceRow]) -> String {
    let mut out = String::from(IMPORTANCE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{:.17e},{}", r.rank, r.feature, r.importance, r.origin);
    }
    out
}
