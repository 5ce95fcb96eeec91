//! Confusion matrix, per-class precision/recall/F1, averages and
//! one-vs-rest AUROC.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let k = classes.len();
        ConfusionMatrix { classes, counts: vec![vec![0; k]; k] }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|row| row[k]).sum()
    }
}

pub fn default_class_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class{i}")).collect()
}

pub fn confusion(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    confusion_named(preds, labels, default_class_names(num_classes))
}

pub fn confusion_named(preds: &[usize], labels: &[usize], classes: Vec<String>) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(invalid(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let mut cm = ConfusionMatrix::new(classes);
    let k = cm.num_classes();
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= k || t >= k {
            return Err(invalid(format!("class index out of range for {k} classes: pred {p}, label {t}")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Nothing was predicted as this class; precision reported as 0.
    pub precision_undefined: bool,
    /// The class has no samples; recall reported as 0.
    pub recall_undefined: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AurocSummary {
    /// `None` where the class has no positives or no negatives.
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean over defined classes.
    pub macro_avg: f64,
    /// Support-weighted mean over defined classes.
    pub weighted_avg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub auroc: Option<AurocSummary>,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Unweighted mean of per-class values.
pub fn macro_average(per_class: &[ClassMetrics]) -> Averages {
    let n = per_class.len().max(1) as f64;
    Averages {
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / n,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / n,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / n,
    }
}

/// Support-weighted mean of per-class values.
pub fn weighted_average(per_class: &[ClassMetrics]) -> Averages {
    let total: u64 = per_class.iter().map(|c| c.support).sum();
    if total == 0 {
        return Averages::default();
    }
    let w = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|c| c.support as f64 * f(c)).sum::<f64>() / total as f64;
    Averages { precision: w(|c| c.precision), recall: w(|c| c.recall), f1: w(|c| c.f1) }
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half, via average ranks. `None` without both classes.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // ranks doubled so tied averages stay integral
    let mut rank_sum2 = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg2 = (i + 1 + j + 1) as u64;
        rank_sum2 += avg2 * order[i..=j].iter().filter(|&&s| positive[s]).count() as u64;
        i = j + 1;
    }
    let n_pos = n_pos as u64;
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Some(u2 as f64 / (2 * n_pos * n_neg as u64) as f64)
}

/// One-vs-rest AUROC for each class from `N × K` score rows.
pub fn auroc_summary(scores: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<AurocSummary> {
    if scores.len() != labels.len() {
        return Err(invalid(format!("{} score rows for {} labels", scores.len(), labels.len())));
    }
    if let Some(row) = scores.iter().find(|r| r.len() != num_classes) {
        return Err(invalid(format!("score row of length {} for {num_classes} classes", row.len())));
    }
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|k| {
            let s: Vec<f64> = scores.iter().map(|r| r[k]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
            binary_auroc(&s, &pos)
        })
        .collect();
    let mut support = vec![0u64; num_classes];
    for &l in labels {
        if l < num_classes {
            support[l] += 1;
        }
    }
    let defined: Vec<(usize, f64)> = per_class.iter().enumerate().filter_map(|(k, a)| a.map(|a| (k, a))).collect();
    let macro_avg = if defined.is_empty() { 0.0 } else { defined.iter().map(|(_, a)| a).sum::<f64>() / defined.len() as f64 };
    let wsum: u64 = defined.iter().map(|&(k, _)| support[k]).sum();
    let weighted_avg =
        if wsum == 0 { 0.0 } else { defined.iter().map(|&(k, a)| support[k] as f64 * a).sum::<f64>() / wsum as f64 };
    Ok(AurocSummary { per_class, macro_avg, weighted_avg })
}

/// Builds the report; AUROC needs the per-sample score rows and true labels.
pub fn report(cm: &ConfusionMatrix, scored: Option<(&[Vec<f64>], &[usize])>) -> Result<MetricsReport> {
    let k = cm.num_classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let (precision, precision_undefined) = ratio(tp, cm.col_sum(c));
            let (recall, recall_undefined) = ratio(tp, cm.row_sum(c));
            ClassMetrics {
                name: cm.classes[c].clone(),
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: cm.row_sum(c),
                precision_undefined,
                recall_undefined,
            }
        })
        .collect();
    let total = cm.total();
    let auroc = match scored {
        Some((scores, labels)) => {
            if labels.len() as u64 != total {
                return Err(invalid(format!("{} scored samples but confusion matrix holds {total}", labels.len())));
            }
            Some(auroc_summary(scores, labels, k)?)
        }
        None => None,
    };
    Ok(MetricsReport {
        classes: cm.classes.clone(),
        accuracy: ratio(cm.trace(), total).0,
        macro_avg: macro_average(&per_class),
        weighted_avg: weighted_average(&per_class),
        per_class,
        auroc,
        total,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!("unknown report format {s:?}")),
        }
    }
}

pub fn render_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Text => render_text(report),
    }
}

pub fn parse_json_report(text: &str) -> Result<MetricsReport> {
    Ok(serde_json::from_str(text)?)
}

fn render_csv(r: &MetricsReport) -> String {
    let mut out = String::from("class,precision,recall,f1,support\n");
    for c in &r.per_class {
        let _ = writeln!(out, "{},{:.6},{:.6},{:.6},{}", c.name, c.precision, c.recall, c.f1, c.support);
    }
    for (name, a) in [("macro avg", r.macro_avg), ("weighted avg", r.weighted_avg)] {
        let _ = writeln!(out, "{name},{:.6},{:.6},{:.6},{}", a.precision, a.recall, a.f1, r.total);
    }
    out
}

fn render_text(r: &MetricsReport) -> String {
    let width = r.classes.iter().map(String::len).chain([12]).max().unwrap_or(12);
    let mut out = format!("{:<width$} {:>9} {:>9} {:>9} {:>9}\n", "", "precision", "recall", "f1", "support");
    for c in &r.per_class {
        let flag = if c.precision_undefined || c.recall_undefined { " *" } else { "" };
        let _ = writeln!(
            out,
            "{:<width$} {:>9.4} {:>9.4} {:>9.4} {:>9}{flag}",
            c.name, c.precision, c.recall, c.f1, c.support
        );
    }
    out.push('\n');
    let _ = writeln!(out, "{:<width$} {:>9} {:>9} {:>9.4} {:>9}", "accuracy", "", "", r.accuracy, r.total);
    for (name, a) in [("macro avg", r.macro_avg), ("weighted avg", r.weighted_avg)] {
        let _ = writeln!(out, "{name:<width$} {:>9.4} {:>9.4} {:>9.4} {:>9}", a.precision, a.recall, a.f1, r.total);
    }
    if let Some(a) = &r.auroc {
        let _ = writeln!(out, "{:<width$} {:>9.4} (weighted {:.4})", "auroc (ovr)", a.macro_avg, a.weighted_avg);
    }
    if r.per_class.iter().any(|c| c.precision_undefined || c.recall_undefined) {
        out.push_str("* zero denominator, value reported as 0\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_confusion() {
        let cm = confusion(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 1]]);
        assert_eq!(confusion(&[], &[], 3).unwrap().total(), 0);
    }

    #[test]
    fn binary_auroc_pairs() {
        let scores = [0.9, 0.8, 0.95, 0.7, 0.4];
        let pos = [true, true, false, false, false];
        assert!((binary_auroc(&scores, &pos).unwrap() - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(binary_auroc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(binary_auroc(&[0.5], &[true]), None);
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 1];
        let scores: Vec<Vec<f64>> = labels.iter().map(|&l| (0..3).map(|k| if k == l { 0.9 } else { 0.05 }).collect()).collect();
        let cm = confusion(&labels, &labels, 3).unwrap();
        let r = report(&cm, Some((&scores, &labels))).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_avg, Averages { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(r.auroc.unwrap().macro_avg, 1.0);
    }

    #[test]
    fn empty_column_is_flagged() {
        let cm = confusion(&[0, 0], &[0, 1], 2).unwrap();
        let r = report(&cm, None).unwrap();
        assert!(r.per_class[1].precision_undefined);
        assert_eq!(r.per_class[1].precision, 0.0);
        assert!(render_report(&r, ReportFormat::Text).contains("zero denominator"));
    }

    #[test]
    fn renderings() {
        let cm = confusion(&[0, 1, 2, 2], &[0, 1, 2, 1], 3).unwrap();
        let r = report(&cm, None).unwrap();
        assert_eq!(parse_json_report(&render_report(&r, ReportFormat::Json)).unwrap(), r);
        let csv = render_report(&r, ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 1 + 3 + 2);
        assert_eq!(render_report(&r, ReportFormat::Text), render_report(&r, ReportFormat::Text));
    }
}
