//! Classification metrics on held-out scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("AUROC is undefined when only one class is present")]
    SingleClass,
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
}

/// Support-weighted classification metrics plus probabilistic scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: f64,
    pub log_loss: f64,
    pub brier: f64,
}

/// Rank-based AUROC with half credit for ties (average ranks), equal to
/// pair counting: P(score+ > score-) + 0.5 P(tie).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // Average ranks over tie groups (1-based ranks).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0; // mean of ranks i+1 ..= j
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Brute-force pair-counting AUROC (the independent oracle used in tests).
pub fn auroc_pair_counting(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    let positives: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l)
        .map(|(s, _)| *s)
        .collect();
    let negatives: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| !**l)
        .map(|(s, _)| *s)
        .collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(MetricsError::SingleClass);
    }
    let mut credit = 0.0;
    for p in &positives {
        for n in &negatives {
            credit += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(credit / (positives.len() * negatives.len()) as f64)
}

const LOG_LOSS_CLIP: f64 = 1e-15;

/// Metrics at the given decision threshold (scores strictly above it predict
/// positive, so an exact tie falls to the lower class index). Precision,
/// recall, and F1 are support-weighted over both classes.
pub fn compute_metrics(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<MetricsRecord, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    let predictions: Vec<bool> = scores.iter().map(|s| *s > threshold).collect();
    let n = labels.len() as f64;
    let mut correct = 0.0;
    for (p, l) in predictions.iter().zip(labels) {
        if p == l {
            correct += 1.0;
        }
    }
    let accuracy = correct / n;

    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut f1 = 0.0;
    for class in [false, true] {
        let support = labels.iter().filter(|l| **l == class).count() as f64;
        if support == 0.0 {
            continue;
        }
        let tp = predictions
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p == class && **l == class)
            .count() as f64;
        let predicted = predictions.iter().filter(|p| **p == class).count() as f64;
        let class_precision = if predicted == 0.0 { 0.0 } else { tp / predicted };
        let class_recall = tp / support;
        let class_f1 = if class_precision + class_recall == 0.0 {
            0.0
        } else {
            2.0 * class_precision * class_recall / (class_precision + class_recall)
        };
        let weight = support / n;
        precision += weight * class_precision;
        recall += weight * class_recall;
        f1 += weight * class_f1;
    }

    let auroc = auroc(scores, labels)?;

    let mut log_loss = 0.0;
    let mut brier = 0.0;
    for (s, l) in scores.iter().zip(labels) {
        let p = s.clamp(LOG_LOSS_CLIP, 1.0 - LOG_LOSS_CLIP);
        log_loss -= if *l { p.ln() } else { (1.0 - p).ln() };
        let target = f64::from(*l as u8);
        brier += (s - target) * (s - target);
    }
    log_loss /= n;
    brier /= n;

    Ok(MetricsRecord {
        accuracy,
        precision,
        recall,
        f1,
        auroc,
        log_loss,
        brier,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn auroc_hand_checked_example() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        assert!((auroc(&scores, &labels).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn perfectly_ordered_scores_give_one() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let labels = [false, false, true, true];
        assert_eq!(auroc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn all_equal_scores_give_half() {
        let scores = [0.5; 6];
        let labels = [true, false, true, false, false, true];
        assert_eq!(auroc(&scores, &labels).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_error() {
        assert!(matches!(
            auroc(&[0.1, 0.2], &[true, true]),
            Err(MetricsError::SingleClass)
        ));
    }

    #[test]
    fn rank_method_equals_pair_counting_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..300 {
            let n = rng.random_range(2..50);
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            labels[n - 1] = false;
            // Coarse grid scores force plenty of ties.
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0..8) as f64) / 8.0)
                .collect();
            let fast = auroc(&scores, &labels).unwrap();
            let slow = auroc_pair_counting(&scores, &labels).unwrap();
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }

    #[test]
    fn weighted_metrics_hand_checked() {
        // scores -> predictions (>0.5): [T, F, F, F]; labels [T, T, F, F].
        let scores = [0.9, 0.2, 0.3, 0.1];
        let labels = [true, true, false, false];
        let m = compute_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(m.accuracy, 0.75);
        // Class true: precision 1/1, recall 1/2, f1 2/3.
        // Class false: precision 2/3, recall 1, f1 0.8.
        // Weights 0.5 each.
        assert!((m.precision - (0.5 * 1.0 + 0.5 * (2.0 / 3.0))).abs() < 1e-12);
        assert!((m.recall - (0.5 * 0.5 + 0.5 * 1.0)).abs() < 1e-12);
        assert!((m.f1 - (0.5 * (2.0 / 3.0) + 0.5 * 0.8)).abs() < 1e-12);
    }

    #[test]
    fn log_loss_clipping_keeps_values_finite() {
        let m = compute_metrics(&[0.0, 1.0], &[true, false], 0.5).unwrap();
        assert!(m.log_loss.is_finite());
        assert!(m.log_loss > 30.0); // two maximally wrong predictions
        assert_eq!(m.brier, 1.0);
    }

    #[test]
    fn metric_ranges_on_random_inputs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let n = rng.random_range(4..60);
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let m = compute_metrics(&scores, &labels, 0.5).unwrap();
            for v in [m.accuracy, m.precision, m.recall, m.f1, m.auroc, m.brier] {
                assert!((0.0..=1.0).contains(&v));
            }
            assert!(m.log_loss >= 0.0 && m.log_loss.is_finite());
        }
    }
}
