//! Contingency counting, metrics and the false-positive-corrected scoring.
//!
//! Ratios whose denominator is zero are reported as `None` (serialized as
//! `null`, written as `undefined` in CSV) rather than as 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ContingencyCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn binary_contingency(pred: &[u8], truth: &[u8]) -> Result<ContingencyCounts> {
    if pred.len() != truth.len() {
        return Err(usage(format!("{} predictions for {} truth values", pred.len(), truth.len())));
    }
    let mut c = ContingencyCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn metrics(c: &ContingencyCounts) -> MetricReport {
    MetricReport {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

/// Micro-averaged one-vs-rest metrics over single-label tag predictions.
///
/// Every wrong prediction is one false positive (for the predicted tag) and
/// one false negative (for the true tag), so precision, recall and F1 all
/// reduce to the fraction of correct predictions.
pub fn multiclass_micro(preds: &[u32], truth: &[u32]) -> Result<MetricReport> {
    if preds.len() != truth.len() {
        return Err(usage(format!("{} predictions for {} truth tags", preds.len(), truth.len())));
    }
    if preds.iter().chain(truth).any(|&t| t == 0) {
        return Err(usage("alarm tags must be >= 1"));
    }
    let correct = preds.iter().zip(truth).filter(|(p, t)| p == t).count() as u64;
    let wrong = preds.len() as u64 - correct;
    Ok(MetricReport {
        accuracy: ratio(correct, preds.len() as u64),
        precision: ratio(correct, correct + wrong),
        recall: ratio(correct, correct + wrong),
        f1: ratio(2 * correct, 2 * correct + 2 * wrong),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpafCounts {
    pub predicted_alarms: u64,
    pub true_positives: u64,
    pub false_positives: u64,
    /// False positives among the predicted alarms.
    pub fraction: Option<f64>,
}

pub fn fpaf(regression_pred: &[u8], truth: &[u8]) -> Result<FpafCounts> {
    let c = binary_contingency(regression_pred, truth)?;
    let predicted = c.tp + c.fp;
    Ok(FpafCounts {
        predicted_alarms: predicted,
        true_positives: c.tp,
        false_positives: c.fp,
        fraction: ratio(c.fp, predicted),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpafReport {
    pub predicted_alarms: u64,
    pub regression_tp: u64,
    pub regression_fp: u64,
    pub classifier_correct: u64,
    pub fpaf_fraction: Option<f64>,
    pub final_accuracy: Option<f64>,
}

/// Scores the two-stage output against all regression-flagged windows.
///
/// `classifier_preds` and `truth_tags` cover exactly the flagged windows in
/// order; a flagged window counts as correct only if it is a true alarm and
/// its tag was predicted correctly, so false-positive forecasts always count
/// against the final accuracy.
pub fn final_accuracy(
    regression_pred: &[u8],
    truth_binary: &[u8],
    classifier_preds: &[u32],
    truth_tags: &[u32],
) -> Result<FpafReport> {
    let f = fpaf(regression_pred, truth_binary)?;
    if classifier_preds.len() as u64 != f.predicted_alarms || truth_tags.len() != classifier_preds.len() {
        return Err(usage(format!(
            "classifier output covers {} windows, {} were flagged",
            classifier_preds.len(),
            f.predicted_alarms
        )));
    }
    let flagged_truth = regression_pred
        .iter()
        .zip(truth_binary)
        .filter(|(&p, _)| p == 1)
        .map(|(_, &t)| t);
    let correct = flagged_truth
        .zip(classifier_preds.iter().zip(truth_tags))
        .filter(|&(t, (p, c))| t == 1 && *c > 0 && p == c)
        .count() as u64;
    Ok(FpafReport {
        predicted_alarms: f.predicted_alarms,
        regression_tp: f.true_positives,
        regression_fp: f.false_positives,
        classifier_correct: correct,
        fpaf_fraction: f.fraction,
        final_accuracy: ratio(correct, f.predicted_alarms),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmRow {
    pub tag: u32,
    pub occurrences: u64,
    pub correct: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerAlarmReport {
    pub total_alarms: u64,
    pub rows: Vec<AlarmRow>,
}

/// Per-tag hit rate. `forecast_tags[g]` is the tag assigned to window `g`, or
/// 0 when it was not forecast as an alarm.
pub fn per_alarm_breakdown(forecast_tags: &[u32], truth: &[u32]) -> Result<PerAlarmReport> {
    if forecast_tags.len() != truth.len() {
        return Err(usage(format!("{} forecasts for {} truth tags", forecast_tags.len(), truth.len())));
    }
    let mut tally: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for (&p, &t) in forecast_tags.iter().zip(truth) {
        if t == 0 {
            continue;
        }
        let e = tally.entry(t).or_default();
        e.0 += 1;
        e.1 += u64::from(p == t);
    }
    let rows: Vec<AlarmRow> = tally
        .into_iter()
        .map(|(tag, (occurrences, correct))| AlarmRow {
            tag,
            occurrences,
            correct,
            accuracy: correct as f64 / occurrences as f64,
        })
        .collect();
    Ok(PerAlarmReport {
        total_alarms: rows.iter().map(|r| r.occurrences).sum(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    /// `counts[a - 1][b - 1]` = instances with true tag `a` predicted as `b`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k).map(|b| self.counts.iter().map(|r| r[b]).sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.row_sums().iter().sum()
    }
}

pub fn confusion_matrix(preds: &[u32], truth: &[u32], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(usage(format!("{} predictions for {} truth tags", preds.len(), truth.len())));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &t) in preds.iter().zip(truth) {
        if p == 0 || t == 0 || p as usize > k || t as usize > k {
            return Err(usage(format!("tag pair ({t}, {p}) outside 1..={k}")));
        }
        counts[t as usize - 1][p as usize - 1] += 1;
    }
    Ok(ConfusionMatrix { k, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContingencyFractions {
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tp: f64,
}

/// Per model, the mean over turbines of FP, FN and TP each divided by that
/// turbine's FP + FN + TP. Turbines with no alarm instances are skipped.
pub fn contingency_fractions(
    reports: &[BTreeMap<String, ContingencyCounts>],
) -> Result<BTreeMap<String, Option<ContingencyFractions>>> {
    if reports.is_empty() {
        return Err(usage("no turbine reports to average"));
    }
    let mut acc: BTreeMap<String, (f64, f64, f64, usize)> = BTreeMap::new();
    for report in reports {
        for (model, c) in report {
            let e = acc.entry(model.clone()).or_default();
            let den = (c.fp + c.fn_ + c.tp) as f64;
            if den > 0.0 {
                e.0 += c.fp as f64 / den;
                e.1 += c.fn_ as f64 / den;
                e.2 += c.tp as f64 / den;
                e.3 += 1;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|(model, (fp, fn_, tp, n))| {
            let n = n as f64;
            (model, (n > 0.0).then(|| ContingencyFractions { fp: fp / n, fn_: fn_ / n, tp: tp / n }))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSection {
    pub counts: ContingencyCounts,
    pub metrics: MetricReport,
}

/// Evaluation of one test turbine at one forecast offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurbineReport {
    pub turbine: String,
    pub fw: usize,
    pub regression: RegressionSection,
    /// Micro-averaged metrics per classifier on flagged true-alarm windows.
    pub classifiers: BTreeMap<String, MetricReport>,
    pub fpaf: FpafReport,
    pub final_accuracy: Option<f64>,
    pub chosen_model: String,
    pub per_alarm: Vec<AlarmRow>,
    pub confusion: ConfusionMatrix,
    /// TP/FP/FN per model (LSTM plus each classifier) for contingency fractions.
    pub contingency: BTreeMap<String, ContingencyCounts>,
}

pub fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x}"))
}

impl TurbineReport {
    /// Flattens the report into `field,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("field,value\n");
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k},{v}");
        };
        put("turbine", self.turbine.clone());
        put("fw", self.fw.to_string());
        let c = &self.regression.counts;
        for (k, v) in [("tp", c.tp), ("fp", c.fp), ("fn", c.fn_), ("tn", c.tn)] {
            put(&format!("regression.{k}"), v.to_string());
        }
        put_metrics(&mut put, "regression", &self.regression.metrics);
        for (name, m) in &self.classifiers {
            put_metrics(&mut put, &format!("classifiers.{name}"), m);
        }
        let f = &self.fpaf;
        put("fpaf.predicted_alarms", f.predicted_alarms.to_string());
        put("fpaf.regression_tp", f.regression_tp.to_string());
        put("fpaf.regression_fp", f.regression_fp.to_string());
        put("fpaf.classifier_correct", f.classifier_correct.to_string());
        put("fpaf.fraction", fmt_metric(f.fpaf_fraction));
        put("final_accuracy", fmt_metric(self.final_accuracy));
        put("chosen_model", self.chosen_model.clone());
        for r in &self.per_alarm {
            put(&format!("per_alarm.{}.occurrences", r.tag), r.occurrences.to_string());
            put(&format!("per_alarm.{}.correct", r.tag), r.correct.to_string());
            put(&format!("per_alarm.{}.accuracy", r.tag), format!("{}", r.accuracy));
        }
        put("confusion.k", self.confusion.k.to_string());
        for (a, row) in self.confusion.counts.iter().enumerate() {
            for (b, &n) in row.iter().enumerate().filter(|(_, &n)| n > 0) {
                put(&format!("confusion.{}.{}", a + 1, b + 1), n.to_string());
            }
        }
        out
    }
}

fn put_metrics(put: &mut impl FnMut(&str, String), prefix: &str, m: &MetricReport) {
    put(&format!("{prefix}.accuracy"), fmt_metric(m.accuracy));
    put(&format!("{prefix}.precision"), fmt_metric(m.precision));
    put(&format!("{prefix}.recall"), fmt_metric(m.recall));
    put(&format!("{prefix}.f1"), fmt_metric(m.f1));
}

/// Final-accuracy grid: one row per forecast offset, one column per test
/// turbine plus their average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub turbines: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub fw: usize,
    pub values: Vec<Option<f64>>,
    pub average: Option<f64>,
}

impl SummaryTable {
    pub fn new(turbines: Vec<String>) -> Self {
        Self { turbines, rows: Vec::new() }
    }

    pub fn push(&mut self, fw: usize, values: Vec<Option<f64>>) {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let average = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        self.rows.push(SummaryRow { fw, values, average });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fw");
        for t in &self.turbines {
            out.push(',');
            out.push_str(t);
        }
        out.push_str(",Average\n");
        for r in &self.rows {
            let _ = write!(out, "FW{}", r.fw);
            for v in &r.values {
                let _ = write!(out, ",{}", fmt_metric(*v));
            }
            let _ = writeln!(out, ",{}", fmt_metric(r.average));
        }
        out
    }
}
