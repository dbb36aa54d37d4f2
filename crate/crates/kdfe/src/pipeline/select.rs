//! Univariate feature scoring and top-k selection.

use super::frame::Matrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsScorer {
    AnovaF,
    Chi2,
    MutualInfo,
}

/// One-way ANOVA F per feature between the two classes. A feature with zero
/// within-class variance but distinct class means separates perfectly and
/// scores the +inf sentinel; constant features score 0.
pub fn anova_f_scores(x: &Matrix, y: &[bool]) -> Vec<f64> {
    let n = y.len() as f64;
    let n1 = y.iter().filter(|v| **v).count() as f64;
    let n0 = n - n1;
    let mut scores = Vec::with_capacity(x.cols);
    for c in 0..x.cols {
        let (mut s0, mut s1) = (0.0, 0.0);
        for r in 0..x.rows {
            if y[r] {
                s1 += x.get(r, c);
            } else {
                s0 += x.get(r, c);
            }
        }
        let (m0, m1) = (s0 / n0, s1 / n1);
        let grand = (s0 + s1) / n;
        let ssb = n0 * (m0 - grand) * (m0 - grand) + n1 * (m1 - grand) * (m1 - grand);
        let mut ssw = 0.0;
        for r in 0..x.rows {
            let m = if y[r] { m1 } else { m0 };
            let d = x.get(r, c) - m;
            ssw += d * d;
        }
        let score = if ssw == 0.0 {
            if ssb == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (ssb / 1.0) / (ssw / (n - 2.0))
        };
        scores.push(score);
    }
    scores
}

/// Frequency-style chi-squared: per feature, observed class sums against
/// expectations proportional to class priors, chi2 = sum (O-E)^2 / E.
/// Features must be non-negative (they are min-max scaled upstream).
pub fn chi2_scores(x: &Matrix, y: &[bool]) -> Vec<f64> {
    let n = y.len() as f64;
    let n1 = y.iter().filter(|v| **v).count() as f64;
    let priors = [(n - n1) / n, n1 / n];
    let mut scores = Vec::with_capacity(x.cols);
    for c in 0..x.cols {
        let (mut o0, mut o1) = (0.0, 0.0);
        for r in 0..x.rows {
            if y[r] {
                o1 += x.get(r, c);
            } else {
                o0 += x.get(r, c);
            }
        }
        let total = o0 + o1;
        if total == 0.0 {
            scores.push(0.0);
            continue;
        }
        let mut chi2 = 0.0;
        for (observed, prior) in [(o0, priors[0]), (o1, priors[1])] {
            let expected = total * prior;
            if expected > 0.0 {
                chi2 += (observed - expected) * (observed - expected) / expected;
            }
        }
        scores.push(chi2);
    }
    scores
}

const MI_BINS: usize = 10;

/// Discrete mutual information with the label after equal-width binning into
/// at most ten bins over the observed range. Constant features score 0.
pub fn mutual_info_scores(x: &Matrix, y: &[bool]) -> Vec<f64> {
    let n = y.len() as f64;
    let mut scores = Vec::with_capacity(x.cols);
    for c in 0..x.cols {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in 0..x.rows {
            let v = x.get(r, c);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !(hi > lo) {
            scores.push(0.0);
            continue;
        }
        let mut joint = [[0.0f64; 2]; MI_BINS];
        for r in 0..x.rows {
            let v = x.get(r, c);
            let bin = (((v - lo) / (hi - lo)) * MI_BINS as f64) as usize;
            let bin = bin.min(MI_BINS - 1);
            joint[bin][usize::from(y[r])] += 1.0;
        }
        let mut mi = 0.0;
        let py = [
            y.iter().filter(|v| !**v).count() as f64 / n,
            y.iter().filter(|v| **v).count() as f64 / n,
        ];
        for row in joint.iter() {
            let px = (row[0] + row[1]) / n;
            if px == 0.0 {
                continue;
            }
            for (cls, &count) in row.iter().enumerate() {
                if count == 0.0 {
                    continue;
                }
                let pxy = count / n;
                mi += pxy * (pxy / (px * py[cls])).ln();
            }
        }
        scores.push(mi.max(0.0));
    }
    scores
}

pub fn score_features(x: &Matrix, y: &[bool], scorer: FsScorer) -> Vec<f64> {
    match scorer {
        FsScorer::AnovaF => anova_f_scores(x, y),
        FsScorer::Chi2 => chi2_scores(x, y),
        FsScorer::MutualInfo => mutual_info_scores(x, y),
    }
}

/// Column indices of the top-k features (score descending, ties by column
/// index), returned in ascending column order for stable subsetting. Asking
/// for more features than exist keeps them all with a warning.
pub fn select_k_best(x: &Matrix, y: &[bool], scorer: FsScorer, k: usize) -> (Vec<usize>, Vec<f64>) {
    let scores = score_features(x, y, scorer);
    if k >= scores.len() {
        if k > scores.len() {
            log::warn!(
                "requested {k} features but only {} exist; keeping all",
                scores.len()
            );
        }
        return ((0..scores.len()).collect(), scores);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut selected: Vec<usize> = order[..k].to_vec();
    selected.sort_unstable();
    (selected, scores)
}
