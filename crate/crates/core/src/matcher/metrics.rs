use serde::Serialize;

use crate::error::{Error, Result};

/// Binary classification metrics at a threshold plus ranking AUC.
/// Undefined ratios are reported as 0 and named in `flags`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub flags: Vec<String>,
}

/// Column order of [`Metrics::csv_row`].
pub const METRICS_CSV_HEADER: &str = "precision,recall,f1,accuracy,auc,tp,fp,tn,fn";

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let mut flags = Vec::new();
        let mut ratio = |num: usize, den: usize, name: &str| {
            if den == 0 {
                flags.push(format!("{name} undefined"));
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp, "precision");
        let recall = ratio(tp, tp + fn_, "recall");
        let accuracy = ratio(tp + tn, tp + fp + tn + fn_, "accuracy");
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            flags.push("f1 undefined".into());
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            accuracy,
            auc: 0.0,
            tp,
            fp,
            tn,
            fn_,
            flags,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.precision, self.recall, self.f1, self.accuracy, self.auc, self.tp, self.fp, self.tn, self.fn_
        )
    }
}

/// Area under the ROC curve by the trapezoid rule, sweeping the threshold
/// over distinct scores (tied scores move together). `None` when one class
/// is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / pos as f64;
        let fpr = fp as f64 / neg as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Some(area)
}

/// Metrics of `scores` against `labels`; positive decision iff score > `gamma`.
pub fn compute_metrics(scores: &[f64], labels: &[bool], gamma: f64) -> Result<Metrics> {
    if scores.is_empty() {
        return Err(Error::Empty("test set"));
    }
    if scores.len() != labels.len() {
        return Err(Error::shape("metrics", format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > gamma, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let mut m = Metrics::from_counts(tp, fp, tn, fn_);
    match roc_auc(scores, labels) {
        Some(a) => m.auc = a,
        None => m.flags.push("auc undefined".into()),
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_example() {
        let m = Metrics::from_counts(3, 1, 0, 1);
        assert_eq!((m.precision, m.recall, m.f1), (0.75, 0.75, 0.75));
    }

    #[test]
    fn separated_and_tied_auc() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]), Some(1.0));
        assert_eq!(roc_auc(&[0.4; 6], &[true, false, true, false, false, true]), Some(0.5));
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, false]), Some(0.0));
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, true]), None);
    }

    #[test]
    fn auc_matches_pairwise_count() {
        let scores = [0.3, 0.7, 0.7, 0.1, 0.5, 0.9, 0.5];
        let labels = [false, true, false, false, true, true, false];
        let mut wins = 0.0;
        let mut total = 0.0;
        for i in 0..7 {
            for j in 0..7 {
                if labels[i] && !labels[j] {
                    total += 1.0;
                    wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((roc_auc(&scores, &labels).unwrap() - wins / total).abs() < 1e-15);
    }

    #[test]
    fn undefined_ratios_flagged() {
        let m = compute_metrics(&[0.1, 0.2], &[false, false], 0.5).unwrap();
        assert_eq!(m.precision, 0.0);
        assert!(m.flags.iter().any(|f| f.contains("precision")));
        assert!(m.flags.iter().any(|f| f.contains("auc")));
        assert!(compute_metrics(&[], &[], 0.5).is_err());
    }
}
