//! Binary classification metrics with Disaster (label 1) as the positive class.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus_io::Label;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("predictions ({preds}) and truth ({truth}) differ in length")]
    LengthMismatch { preds: usize, truth: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("no results for vectorizer `{0}`")]
    EmptyGroup(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(preds: &[Label], truth: &[Label]) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            truth: truth.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut m = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, true) => m.fn_ += 1,
            (false, false) => m.tn += 1,
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub matrix: ConfusionMatrix,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall, accuracy and F1 (harmonic mean of precision and
/// recall). Any zero denominator yields 0 for that metric.
pub fn metrics(matrix: &ConfusionMatrix) -> Result<MetricsReport> {
    if matrix.total() == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let precision = ratio(matrix.tp, matrix.tp + matrix.fp);
    let recall = ratio(matrix.tp, matrix.tp + matrix.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricsReport {
        precision,
        recall,
        f1,
        accuracy: ratio(matrix.tp + matrix.tn, matrix.total()),
        matrix: *matrix,
    })
}

pub fn evaluate(preds: &[Label], truth: &[Label]) -> Result<MetricsReport> {
    metrics(&confusion(preds, truth)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: String,
    pub vectorizer: String,
    pub f1: f64,
}

impl ModelResult {
    pub fn new(model: impl Into<String>, vectorizer: impl Into<String>, f1: f64) -> Self {
        Self {
            model: model.into(),
            vectorizer: vectorizer.into(),
            f1,
        }
    }
}

/// Mean F1 per vectorizer, sorted by descending mean (ties by name).
pub fn mean_f1_by_vectorizer(results: &[ModelResult]) -> Result<Vec<(String, f64)>> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in results {
        groups.entry(&r.vectorizer).or_default().push(r.f1);
    }
    let mut table = Vec::with_capacity(groups.len());
    for (name, scores) in groups {
        if scores.is_empty() {
            return Err(EvalError::EmptyGroup(name.to_string()));
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        table.push((name.to_string(), mean));
    }
    table.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(table)
}

fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "| {} |", padded.join(" | "));
    };
    line(&mut out, headers);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
    for row in rows {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&mut out, &cells);
    }
    out
}

/// Top `limit` (model, vectorizer) pairs by F1, as an aligned text table.
pub fn format_results_table(results: &[ModelResult], limit: usize) -> String {
    let mut sorted: Vec<&ModelResult> = results.iter().collect();
    sorted.sort_by(|a, b| b.f1.total_cmp(&a.f1));
    let rows: Vec<Vec<String>> = sorted
        .into_iter()
        .take(limit)
        .map(|r| vec![r.model.clone(), r.vectorizer.clone(), format!("{:.5}", r.f1)])
        .collect();
    render_table(&["Model", "Vectorizer", "F1-Score"], &rows)
}

pub fn format_mean_table(table: &[(String, f64)]) -> String {
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|(v, f)| vec![v.clone(), format!("{f:.5}")])
        .collect();
    render_table(&["Vectorizer", "Mean F1-Score"], &rows)
}

impl MetricsReport {
    /// Plain-text rendering: confusion matrix followed by the scalar metrics.
    pub fn to_text(&self) -> String {
        let m = &self.matrix;
        let mut out = render_table(
            &["", "pred 0", "pred 1"],
            &[
                vec!["true 0".into(), m.tn.to_string(), m.fp.to_string()],
                vec!["true 1".into(), m.fn_.to_string(), m.tp.to_string()],
            ],
        );
        let _ = writeln!(
            out,
            "precision {:.5}  recall {:.5}  f1 {:.5}  accuracy {:.5}",
            self.precision, self.recall, self.f1, self.accuracy
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confusion_examples() {
        let m = confusion(&[1, 1, 0], &[1, 1, 0]).unwrap();
        assert_eq!(m, ConfusionMatrix { tp: 2, fp: 0, fn_: 0, tn: 1 });
        let m = confusion(&[1, 1, 1, 0], &[1, 0, 1, 1]).unwrap();
        assert_eq!(m, ConfusionMatrix { tp: 2, fp: 1, fn_: 1, tn: 0 });
        let m = confusion(&[0, 1, 0], &[1, 0, 1]).unwrap();
        assert_eq!((m.tp, m.tn), (0, 0));
        assert_eq!(confusion(&[1], &[]), Err(EvalError::LengthMismatch { preds: 1, truth: 0 }));
        assert_eq!(confusion(&[], &[]), Err(EvalError::Empty));
    }

    #[test]
    fn metrics_examples() {
        let r = metrics(&ConfusionMatrix { tp: 2, fp: 1, fn_: 1, tn: 0 }).unwrap();
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);

        let r = metrics(&ConfusionMatrix { tp: 5, fp: 0, fn_: 0, tn: 3 }).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.accuracy), (1.0, 1.0, 1.0, 1.0));

        let r = metrics(&ConfusionMatrix { tp: 0, fp: 2, fn_: 3, tn: 1 }).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));

        let r = metrics(&ConfusionMatrix { tp: 0, fp: 0, fn_: 0, tn: 4 }).unwrap();
        assert_eq!(r.f1, 0.0);
        assert_eq!(r.accuracy, 1.0);

        assert_eq!(metrics(&ConfusionMatrix::default()), Err(EvalError::EmptyMatrix));
    }

    #[test]
    fn mean_table_examples() {
        let t = mean_f1_by_vectorizer(&[ModelResult::new("nb", "tfidf", 0.8)]).unwrap();
        assert_eq!(t, [("tfidf".to_string(), 0.8)]);

        let t = mean_f1_by_vectorizer(&[
            ModelResult::new("nb", "tfidf", 0.8),
            ModelResult::new("logreg", "tfidf", 0.6),
        ])
        .unwrap();
        assert!((t[0].1 - 0.7).abs() < 1e-15);

        let reported = [
            ModelResult::new("x", "cbow", 0.612),
            ModelResult::new("x", "count", 0.70751),
            ModelResult::new("x", "tfidf", 0.71902),
            ModelResult::new("x", "skipgram", 0.62456),
        ];
        let order: Vec<String> = mean_f1_by_vectorizer(&reported)
            .unwrap()
            .into_iter()
            .map(|(v, _)| v)
            .collect();
        assert_eq!(order, ["tfidf", "count", "skipgram", "cbow"]);
        assert!(mean_f1_by_vectorizer(&[]).unwrap().is_empty());
    }

    #[test]
    fn tables_render() {
        let text = format_mean_table(&[("tfidf".into(), 0.71902), ("count".into(), 0.70751)]);
        assert!(text.contains("| tfidf      | 0.71902       |"), "{text}");
        let report = metrics(&ConfusionMatrix { tp: 2, fp: 1, fn_: 1, tn: 3 }).unwrap();
        assert!(report.to_text().contains("true 1"));
        let top = format_results_table(
            &[ModelResult::new("nb", "tfidf", 0.5), ModelResult::new("svm", "count", 0.9)],
            1,
        );
        assert!(top.contains("svm") && !top.contains("nb "));
    }

    proptest! {
        #[test]
        fn metric_invariants(labels in prop::collection::vec((0u8..2, 0u8..2), 1..60)) {
            let preds: Vec<Label> = labels.iter().map(|l| l.0).collect();
            let truth: Vec<Label> = labels.iter().map(|l| l.1).collect();
            let r = evaluate(&preds, &truth).unwrap();
            let m = r.matrix;
            prop_assert_eq!(m.total(), labels.len());
            prop_assert_eq!(r.accuracy, (m.tp + m.tn) as f64 / m.total() as f64);
            if r.precision + r.recall > 0.0 {
                let h = 2.0 * r.precision * r.recall / (r.precision + r.recall);
                prop_assert!((r.f1 - h).abs() < 1e-12);
                let harmonic = 2.0 / (1.0 / r.recall + 1.0 / r.precision);
                if r.precision > 0.0 && r.recall > 0.0 {
                    prop_assert!((r.f1 - harmonic).abs() < 1e-12);
                }
            } else {
                prop_assert_eq!(r.f1, 0.0);
            }
            // swapping the roles of preds and truth swaps precision and recall
            let swapped = evaluate(&truth, &preds).unwrap();
            prop_assert!((swapped.precision - r.recall).abs() < 1e-15);
            prop_assert!((swapped.f1 - r.f1).abs() < 1e-12);

            if truth.contains(&1) {
                prop_assert_eq!(evaluate(&truth, &truth).unwrap().f1, 1.0);
            }
        }
    }
}
