use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> ClassMetrics {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics { precision, recall, f1 }
    }
}

/// Accuracy, per-class precision/recall/F1 and the confusion counts with
/// sarcastic as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub non_sarcastic: ClassMetrics,
    pub sarcastic: ClassMetrics,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MetricsReport {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn compute_metrics(predictions: &[Label], golds: &[Label]) -> Result<MetricsReport> {
    if predictions.len() != golds.len() {
        return Err(Error::data(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::data("no predictions to score"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &g) in predictions.iter().zip(golds) {
        if !p.is_binary() || !g.is_binary() {
            return Err(Error::data("metrics need binary labels"));
        }
        match (p == Label::Sarcastic, g == Label::Sarcastic) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(MetricsReport {
        accuracy: (tp + tn) as f64 / golds.len() as f64,
        sarcastic: ClassMetrics::from_counts(tp, fp, fn_),
        non_sarcastic: ClassMetrics::from_counts(tn, fn_, fp),
        tp,
        fp,
        tn,
        fn_,
    })
}

/// One row of the results table: a model, which inputs it saw (text, context,
/// user features) and its scores.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub model: String,
    pub text: bool,
    pub context: bool,
    pub user: bool,
    pub report: MetricsReport,
}

/// Markdown table: model, feature flags T/C/U, accuracy, then precision,
/// recall and F1 for the non-sarcastic and the sarcastic class, 4 decimals.
pub fn metrics_table(rows: &[TableRow]) -> String {
    let mut out = String::from(
        "| Model | T | C | U | Acc. | Non-sarcastic Pre. | Non-sarcastic Rec. | Non-sarcastic F1 | Sarcastic Pre. | Sarcastic Rec. | Sarcastic F1 |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
    let mark = |b: bool| if b { "x" } else { "" };
    for r in rows {
        let (m, ns, s) = (&r.report, &r.report.non_sarcastic, &r.report.sarcastic);
        out.push_str(&format!(
            "| {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            r.model,
            mark(r.text),
            mark(r.context),
            mark(r.user),
            m.accuracy,
            ns.precision,
            ns.recall,
            ns.f1,
            s.precision,
            s.recall,
            s.f1
        ));
    }
    out
}
