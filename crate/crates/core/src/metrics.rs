//! Threshold-sweep ROC, AUC and equal error rate.

use serde::Serialize;

use crate::error::{Error, Result};

/// One operating point; scores `>= threshold` are called abnormal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Roc {
    pub auc: f64,
    pub eer: f64,
    /// From `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<RocPoint>,
}

/// ROC curve over every distinct score, trapezoidal AUC (ties count half,
/// matching the Mann-Whitney statistic) and the EER at the linearly
/// interpolated crossing of FPR and FNR.
pub fn roc_auc_eer(scores: &[f64], labels: &[bool]) -> Result<Roc> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::UndefinedMetric(format!("non-finite score {s}")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC needs both classes; got {pos} abnormal and {neg} normal frames"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(Roc {
        auc,
        eer: eer(&points),
        points,
    })
}

/// `g = FPR - FNR` rises from -1 to 1 along the sweep; interpolate its zero.
fn eer(points: &[RocPoint]) -> f64 {
    let g = |p: &RocPoint| p.fpr - (1.0 - p.tpr);
    for w in points.windows(2) {
        let (g0, g1) = (g(&w[0]), g(&w[1]));
        if g0 == 0.0 {
            return w[0].fpr;
        }
        if g0 < 0.0 && g1 >= 0.0 {
            let a = -g0 / (g1 - g0);
            let fpr = w[0].fpr + a * (w[1].fpr - w[0].fpr);
            let fnr = 1.0 - (w[0].tpr + a * (w[1].tpr - w[0].tpr));
            return (fpr + fnr) / 2.0;
        }
    }
    // the sweep ends at (1, 1), where g = 1, so a crossing always exists
    unreachable!("ROC sweep without an FPR/FNR crossing")
}

/// Summary record written by `eval`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub auc: f64,
    pub eer: f64,
    pub n_frames: usize,
}

impl Metrics {
    pub fn from_scores(scores: &[f64], labels: &[bool]) -> Result<Self> {
        let roc = roc_auc_eer(scores, labels)?;
        Ok(Metrics {
            auc: roc.auc,
            eer: roc.eer,
            n_frames: scores.len(),
        })
    }

    /// Single-line JSON record.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}
