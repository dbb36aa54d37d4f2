//! Split, imputation, scaling, and class balancing.
//!
//! Every statistic used to transform held-out rows is fitted on training rows
//! alone; the oversamplers run on training data only.

use super::frame::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("class {class} has {count} members; need at least 2 to stratify")]
    TinyClass { class: u8, count: usize },
    #[error("both classes must be present")]
    SingleClass,
}

/// Deterministic stratified split: per class, round((1-ratio)·n) rows go to
/// the test side. Class proportions end up within one sample of the global
/// proportion and the same seed always produces the same split.
pub fn stratified_split(
    y: &[bool],
    train_ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), PreprocessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [false, true] {
        let mut indices: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if indices.len() < 2 {
            return Err(if indices.is_empty() {
                PreprocessError::SingleClass
            } else {
                PreprocessError::TinyClass {
                    class: u8::from(class),
                    count: indices.len(),
                }
            });
        }
        indices.shuffle(&mut rng);
        let n_test = (((1.0 - train_ratio) * indices.len() as f64).round() as usize)
            .clamp(1, indices.len() - 1);
        test.extend_from_slice(&indices[..n_test]);
        train.extend_from_slice(&indices[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Contiguous stratified k-fold assignment (no shuffling): each class's index
/// list is chunked into k runs, mirroring order-preserving stratified CV.
pub fn stratified_kfold(y: &[bool], k: usize) -> Vec<Vec<usize>> {
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in [false, true] {
        let indices: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        let n = indices.len();
        let base = n / k;
        let extra = n % k;
        let mut start = 0;
        for (fold_idx, fold) in folds.iter_mut().enumerate() {
            let size = base + usize::from(fold_idx < extra);
            fold.extend_from_slice(&indices[start..start + size]);
            start += size;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    folds
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imputation {
    Mean,
    Median,
}

/// Per-column fill statistics fitted on training rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Imputer {
    pub strategy: Imputation,
    pub fill: Vec<f64>,
}

impl Imputer {
    pub fn fit(train: &Matrix, strategy: Imputation) -> Imputer {
        let mut fill = Vec::with_capacity(train.cols);
        for c in 0..train.cols {
            let mut present: Vec<f64> = (0..train.rows)
                .map(|r| train.get(r, c))
                .filter(|v| !v.is_nan())
                .collect();
            let value = if present.is_empty() {
                0.0 // all-absent column
            } else {
                match strategy {
                    Imputation::Mean => present.iter().sum::<f64>() / present.len() as f64,
                    Imputation::Median => {
                        present.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        let mid = present.len() / 2;
                        if present.len() % 2 == 1 {
                            present[mid]
                        } else {
                            0.5 * (present[mid - 1] + present[mid])
                        }
                    }
                }
            };
            fill.push(value);
        }
        Imputer { strategy, fill }
    }

    pub fn transform(&self, m: &mut Matrix) {
        for r in 0..m.rows {
            for c in 0..m.cols {
                if m.get(r, c).is_nan() {
                    m.set(r, c, self.fill[c]);
                }
            }
        }
    }
}

/// Min-max scaling to [0, 1] with training statistics; constant training
/// columns map to 0 and out-of-range held-out values are clamped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(train: &Matrix) -> MinMaxScaler {
        let mut min = vec![f64::INFINITY; train.cols];
        let mut max = vec![f64::NEG_INFINITY; train.cols];
        for r in 0..train.rows {
            let row = train.row(r);
            for c in 0..train.cols {
                min[c] = min[c].min(row[c]);
                max[c] = max[c].max(row[c]);
            }
        }
        MinMaxScaler { min, max }
    }

    pub fn transform(&self, m: &mut Matrix) {
        for r in 0..m.rows {
            for c in 0..m.cols {
                let span = self.max[c] - self.min[c];
                let v = if span == 0.0 || !span.is_finite() {
                    0.0
                } else {
                    ((m.get(r, c) - self.min[c]) / span).clamp(0.0, 1.0)
                };
                m.set(r, c, v);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Balancing {
    Smote,
    Adasyn,
    None,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the k nearest points to `query` among `candidates` (excluding
/// `exclude`), ties broken by index.
fn k_nearest(
    m: &Matrix,
    candidates: &[usize],
    query: usize,
    exclude: usize,
    k: usize,
) -> Vec<usize> {
    let q = m.row(query);
    let mut distances: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&i| i != exclude)
        .map(|&i| (squared_distance(q, m.row(i)), i))
        .collect();
    distances.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    distances.truncate(k);
    distances.into_iter().map(|(_, i)| i).collect()
}

fn interpolate(m: &Matrix, a: usize, b: usize, lambda: f64) -> Vec<f64> {
    m.row(a)
        .iter()
        .zip(m.row(b))
        .map(|(x, y)| x + lambda * (y - x))
        .collect()
}

fn append_rows(m: &Matrix, extra: &[Vec<f64>]) -> Matrix {
    let mut data = m.data.clone();
    for row in extra {
        data.extend_from_slice(row);
    }
    Matrix {
        column_names: m.column_names.clone(),
        data,
        rows: m.rows + extra.len(),
        cols: m.cols,
    }
}

/// Oversamples the minority class. SMOTE interpolates towards random minority
/// neighbors until the class counts are exactly equal; ADASYN distributes the
/// same budget proportionally to each minority point's majority-neighbor
/// density (largest-remainder apportionment). A singleton minority falls back
/// to duplication with a warning.
pub fn oversample(
    x: &Matrix,
    y: &[bool],
    method: Balancing,
    rng: &mut ChaCha8Rng,
) -> (Matrix, Vec<bool>) {
    if method == Balancing::None {
        return (x.clone(), y.to_vec());
    }
    let positives: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let negatives: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    let (minority, majority, minority_label) = if positives.len() <= negatives.len() {
        (positives, negatives, true)
    } else {
        (negatives, positives, false)
    };
    let budget = majority.len() - minority.len();
    if budget == 0 || minority.is_empty() {
        return (x.clone(), y.to_vec());
    }
    if minority.len() == 1 {
        log::warn!("minority class is a singleton; duplicating instead of interpolating");
        let row = x.row(minority[0]).to_vec();
        let extra: Vec<Vec<f64>> = (0..budget).map(|_| row.clone()).collect();
        let new_x = append_rows(x, &extra);
        let mut new_y = y.to_vec();
        new_y.extend(std::iter::repeat(minority_label).take(budget));
        return (new_x, new_y);
    }

    let k = 5.min(minority.len() - 1);
    let mut extra: Vec<Vec<f64>> = Vec::with_capacity(budget);
    match method {
        Balancing::Smote => {
            for _ in 0..budget {
                let seed_point = minority[rng.random_range(0..minority.len())];
                let neighbors = k_nearest(x, &minority, seed_point, seed_point, k);
                let neighbor = neighbors[rng.random_range(0..neighbors.len())];
                let lambda: f64 = rng.random();
                extra.push(interpolate(x, seed_point, neighbor, lambda));
            }
        }
        Balancing::Adasyn => {
            let all: Vec<usize> = (0..y.len()).collect();
            let k_all = 5.min(y.len() - 1);
            let ratios: Vec<f64> = minority
                .iter()
                .map(|&i| {
                    let neighbors = k_nearest(x, &all, i, i, k_all);
                    let majority_neighbors =
                        neighbors.iter().filter(|&&j| y[j] != minority_label).count();
                    majority_neighbors as f64 / k_all as f64
                })
                .collect();
            let total: f64 = ratios.iter().sum();
            let weights: Vec<f64> = if total == 0.0 {
                // No majority neighbors anywhere (perfectly separated):
                // fall back to uniform quotas.
                vec![1.0 / minority.len() as f64; minority.len()]
            } else {
                ratios.iter().map(|r| r / total).collect()
            };
            // Largest-remainder apportionment to hit the budget exactly.
            let raw: Vec<f64> = weights.iter().map(|w| w * budget as f64).collect();
            let mut quotas: Vec<usize> = raw.iter().map(|g| g.floor() as usize).collect();
            let assigned: usize = quotas.iter().sum();
            let mut remainders: Vec<(f64, usize)> = raw
                .iter()
                .enumerate()
                .map(|(i, g)| (g - g.floor(), i))
                .collect();
            remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            for (_, i) in remainders.into_iter().take(budget - assigned) {
                quotas[i] += 1;
            }
            for (mi, &seed_point) in minority.iter().enumerate() {
                if quotas[mi] == 0 {
                    continue;
                }
                let neighbors = k_nearest(x, &minority, seed_point, seed_point, k);
                for _ in 0..quotas[mi] {
                    let neighbor = neighbors[rng.random_range(0..neighbors.len())];
                    let lambda: f64 = rng.random();
                    extra.push(interpolate(x, seed_point, neighbor, lambda));
                }
            }
        }
        Balancing::None => unreachable!(),
    }
    let new_x = append_rows(x, &extra);
    let mut new_y = y.to_vec();
    new_y.extend(std::iter::repeat(minority_label).take(extra.len()));
    (new_x, new_y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> Matrix {
        let cols = rows[0].len();
        let names = (0..cols).map(|i| format!("c{i}")).collect();
        let mut m = Matrix::zeros(rows.len(), cols, names);
        for (r, row) in rows.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                m.set(r, c, *v);
            }
        }
        m
    }

    #[test]
    fn split_is_exact_for_divisible_counts() {
        let y: Vec<bool> = (0..100).map(|i| i < 20).collect();
        let (train, test) = stratified_split(&y, 0.8, 42).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        assert_eq!(train.iter().filter(|&&i| y[i]).count(), 16);
        assert_eq!(test.iter().filter(|&&i| y[i]).count(), 4);
        // Disjoint and exhaustive.
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let y: Vec<bool> = (0..50).map(|i| i % 5 == 0).collect();
        assert_eq!(
            stratified_split(&y, 0.8, 42).unwrap(),
            stratified_split(&y, 0.8, 42).unwrap()
        );
        assert_ne!(
            stratified_split(&y, 0.8, 42).unwrap(),
            stratified_split(&y, 0.8, 43).unwrap()
        );
    }

    #[test]
    fn split_single_class_is_error() {
        let y = vec![false; 10];
        assert!(matches!(
            stratified_split(&y, 0.8, 42),
            Err(PreprocessError::SingleClass)
        ));
    }

    #[test]
    fn kfold_partitions_preserving_both_classes() {
        let y: Vec<bool> = (0..50).map(|i| i % 5 == 0).collect();
        let folds = stratified_kfold(&y, 5);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        for fold in &folds {
            assert_eq!(fold.iter().filter(|&&i| y[i]).count(), 2);
        }
    }

    #[test]
    fn mean_imputation_hand_checked() {
        let mut m = matrix(&[&[1.0], &[f64::NAN], &[3.0]]);
        let imputer = Imputer::fit(&m, Imputation::Mean);
        imputer.transform(&mut m);
        assert_eq!(m.get(1, 0), 2.0);
    }

    #[test]
    fn median_is_order_statistic_not_mean() {
        let m = matrix(&[&[1.0], &[2.0], &[100.0]]);
        let imputer = Imputer::fit(&m, Imputation::Median);
        assert_eq!(imputer.fill, vec![2.0]);
    }

    #[test]
    fn test_rows_use_train_statistics_only() {
        let train = matrix(&[&[1.0], &[3.0]]);
        let imputer = Imputer::fit(&train, Imputation::Mean);
        let mut test = matrix(&[&[f64::NAN], &[1000.0]]);
        imputer.transform(&mut test);
        assert_eq!(test.get(0, 0), 2.0); // train mean, not influenced by 1000
    }

    #[test]
    fn all_absent_column_fills_zero() {
        let m = matrix(&[&[f64::NAN], &[f64::NAN]]);
        let imputer = Imputer::fit(&m, Imputation::Mean);
        assert_eq!(imputer.fill, vec![0.0]);
    }

    #[test]
    fn minmax_direct_formula() {
        let mut m = matrix(&[&[2.0], &[4.0], &[6.0]]);
        let scaler = MinMaxScaler::fit(&m);
        scaler.transform(&mut m);
        assert_eq!(
            (m.get(0, 0), m.get(1, 0), m.get(2, 0)),
            (0.0, 0.5, 1.0)
        );
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let mut m = matrix(&[&[7.0], &[7.0]]);
        let scaler = MinMaxScaler::fit(&m);
        scaler.transform(&mut m);
        assert_eq!((m.get(0, 0), m.get(1, 0)), (0.0, 0.0));
    }

    #[test]
    fn out_of_range_test_values_clamp() {
        let train = matrix(&[&[0.0], &[10.0]]);
        let scaler = MinMaxScaler::fit(&train);
        let mut test = matrix(&[&[20.0], &[-5.0]]);
        scaler.transform(&mut test);
        assert_eq!((test.get(0, 0), test.get(1, 0)), (1.0, 0.0));
    }

    #[test]
    fn smote_synthetics_lie_on_segments_and_balance_exactly() {
        let x = matrix(&[
            &[0.0, 0.0],
            &[1.0, 1.0],
            &[5.0, 5.0],
            &[6.0, 5.0],
            &[5.0, 6.0],
            &[6.0, 6.0],
        ]);
        let y = vec![true, true, false, false, false, false];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (bx, by) = oversample(&x, &y, Balancing::Smote, &mut rng);
        assert_eq!(by.iter().filter(|v| **v).count(), 4);
        assert_eq!(by.iter().filter(|v| !**v).count(), 4);
        // Minority points are (0,0) and (1,1); synthetics lie on the segment,
        // so both coordinates are equal and within [0,1].
        for r in x.rows..bx.rows {
            let row = bx.row(r);
            assert!((row[0] - row[1]).abs() < 1e-12, "{row:?}");
            assert!((0.0..=1.0).contains(&row[0]));
        }
    }

    #[test]
    fn adasyn_balances_within_neighborhood_quota() {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            rows.push(vec![i as f64 * 0.1, 0.0]);
            y.push(false);
        }
        for i in 0..6 {
            rows.push(vec![i as f64 * 0.1, 0.4]);
            y.push(true);
        }
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let x = matrix(&refs);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, by) = oversample(&x, &y, Balancing::Adasyn, &mut rng);
        let pos = by.iter().filter(|v| **v).count();
        let neg = by.iter().filter(|v| !**v).count();
        assert_eq!(pos, neg); // largest-remainder hits the budget exactly
    }

    #[test]
    fn none_returns_input_unchanged() {
        let x = matrix(&[&[0.0], &[1.0], &[2.0]]);
        let y = vec![true, false, false];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (bx, by) = oversample(&x, &y, Balancing::None, &mut rng);
        assert_eq!(bx, x);
        assert_eq!(by, y);
    }

    #[test]
    fn singleton_minority_duplicates_with_fallback() {
        let x = matrix(&[&[0.0], &[5.0], &[6.0], &[7.0]]);
        let y = vec![true, false, false, false];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (bx, by) = oversample(&x, &y, Balancing::Smote, &mut rng);
        assert_eq!(by.iter().filter(|v| **v).count(), 3);
        for r in x.rows..bx.rows {
            assert_eq!(bx.row(r), x.row(0));
        }
    }
}
