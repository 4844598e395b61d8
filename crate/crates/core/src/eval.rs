//! Balanced accuracy and the percent-change summary statistic.

use crate::error::{Error, Result};
use crate::textio::write_string;
use std::path::Path;

/// (TPR + TNR) / 2 with predicted class 1 at `p >= threshold`.
pub fn balanced_accuracy(probs: &[f64], outcomes: &[u8], threshold: f64) -> Result<f64> {
    assert_eq!(probs.len(), outcomes.len());
    let mut tp = 0u64;
    let mut tn = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (&p, &y) in probs.iter().zip(outcomes.iter()) {
        let pred = p >= threshold;
        match (pred, y) {
            (true, 1) => tp += 1,
            (false, 1) => fn_ += 1,
            (false, 0) => tn += 1,
            (true, 0) => fp += 1,
            _ => unreachable!("outcomes validated to {{0,1}}"),
        }
    }
    if tp + fn_ == 0 {
        return Err(Error::SingleClass { missing: 1 });
    }
    if tn + fp == 0 {
        return Err(Error::SingleClass { missing: 0 });
    }
    let tpr = tp as f64 / (tp + fn_) as f64;
    let tnr = tn as f64 / (tn + fp) as f64;
    Ok((tpr + tnr) / 2.0)
}

/// One summary-table row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    /// Test balanced accuracy in percent.
    pub bacc_pct: f64,
    /// Worst-group MC violation.
    pub worst_alpha: f64,
    /// Mean of (% increase in balanced accuracy, % decrease in worst
    /// alpha) versus the baseline; positive means improvement.
    pub combined: f64,
}

/// Combined score of a method against the baseline:
/// (100 (acc_m - acc_b)/acc_b + 100 (alpha_b - alpha_m)/alpha_b) / 2.
pub fn summarize(base: (f64, f64), method: (f64, f64)) -> Result<f64> {
    let (acc_b, alpha_b) = base;
    let (acc_m, alpha_m) = method;
    if acc_b <= 0.0 {
        return Err(Error::ZeroDenominator("baseline balanced accuracy".into()));
    }
    if alpha_b <= 0.0 {
        return Err(Error::ZeroDenominator("baseline worst-group alpha".into()));
    }
    let acc_change = 100.0 * (acc_m - acc_b) / acc_b;
    let alpha_change = 100.0 * (alpha_b - alpha_m) / alpha_b;
    Ok((acc_change + alpha_change) / 2.0)
}

/// Writes the summary both as aligned text and as a tab-separated file.
pub fn write_summary(rows: &[SummaryRow], text_path: &Path, tsv_path: &Path) -> Result<()> {
    let name_width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut text = format!(
        "{:name_width$}  {:>10}  {:>12}  {:>10}\n",
        "method", "bacc_pct", "worst_alpha", "combined"
    );
    let mut tsv = String::from("method\tbacc_pct\tworst_alpha\tcombined\n");
    for r in rows {
        text.push_str(&format!(
            "{:name_width$}  {:>10.4} {:>13.6}  {:>10.4}\n",
            r.method, r.bacc_pct, r.worst_alpha, r.combined
        ));
        tsv.push_str(&format!(
            "{}\t{:.6}\t{:.8}\t{:.6}\n",
            r.method, r.bacc_pct, r.worst_alpha, r.combined
        ));
    }
    write_string(text_path, &text)?;
    write_string(tsv_path, &tsv)
}
