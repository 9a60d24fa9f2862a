// Brute-force ROC oracles.

use rand::Rng;

use super::rng;

/// P(pos > neg) + P(tie) / 2 by enumerating every pair.
pub fn pair_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// (fpr, tpr) at each distinct threshold, counted directly.
pub fn brute_roc(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut ts: Vec<f64> = scores.to_vec();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for t in ts {
        let tp = scores
            .iter()
            .zip(labels)
            .filter(|(s, l)| **l && **s >= t)
            .count() as f64;
        let fp = scores
            .iter()
            .zip(labels)
            .filter(|(s, l)| !**l && **s >= t)
            .count() as f64;
        pts.push((fp / neg, tp / pos));
    }
    pts
}

/// Some segment of the curve must pass through (eer, 1 - eer).
pub fn eer_on_curve(pts: &[(f64, f64)], eer: f64) -> bool {
    pts.windows(2).any(|w| {
        let ((f0, t0), (f1, t1)) = (w[0], w[1]);
        let (g0, g1) = (f0 - (1.0 - t0), f1 - (1.0 - t1));
        if g0 > 0.0 || g1 < 0.0 {
            return false;
        }
        let a = if g1 == g0 { 0.0 } else { -g0 / (g1 - g0) };
        let fpr = f0 + a * (f1 - f0);
        let fnr = 1.0 - (t0 + a * (t1 - t0));
        (fpr - fnr).abs() < 1e-6 && (fpr - eer).abs() < 1e-6
    })
}

/// Scores on a coarse grid so ties are common.
pub fn random_series(seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut r = rng(seed);
    let n = r.random_range(2..=1000);
    let levels = r.random_range(2..50);
    let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.3)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = labels
        .iter()
        .map(|&l| (r.random_range(0..levels) + if l { 3 } else { 0 }) as f64 / levels as f64)
        .collect();
    (scores, labels)
}
