//! k-nearest-neighbour classifier. The score is the positive fraction among
//! the k nearest training points (Euclidean distance, ties by training row
//! index); queries run in parallel.

use crate::pipeline::frame::Matrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub train: Matrix,
    pub labels: Vec<bool>,
}

impl KnnModel {
    pub fn fit(train: &Matrix, labels: &[bool], k: usize) -> KnnModel {
        KnnModel {
            k,
            train: train.clone(),
            labels: labels.to_vec(),
        }
    }

    pub fn predict_scores(&self, x: &Matrix) -> Vec<f64> {
        knn_scores_multi(&self.train, &self.labels, x, &[self.k])
            .pop()
            .unwrap()
    }
}

/// Positive-neighbour fractions for several k values sharing one distance
/// computation (top-max(k) neighbours found once per query).
pub fn knn_scores_multi(
    train: &Matrix,
    labels: &[bool],
    queries: &Matrix,
    ks: &[usize],
) -> Vec<Vec<f64>> {
    let k_max = ks.iter().copied().max().unwrap_or(1).min(train.rows);
    let per_query: Vec<Vec<f64>> = (0..queries.rows)
        .into_par_iter()
        .map(|q| {
            let query = queries.row(q);
            // Bounded insertion keeps the k_max nearest in sorted order.
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k_max + 1);
            for t in 0..train.rows {
                let row = train.row(t);
                let mut dist = 0.0;
                for (a, b) in query.iter().zip(row) {
                    let d = a - b;
                    dist += d * d;
                }
                if best.len() < k_max || (dist, t) < *best.last().unwrap() {
                    let pos = best.partition_point(|entry| *entry < (dist, t));
                    best.insert(pos, (dist, t));
                    if best.len() > k_max {
                        best.pop();
                    }
                }
            }
            ks.iter()
                .map(|&k| {
                    let k = k.min(best.len());
                    let positives = best[..k].iter().filter(|(_, t)| labels[*t]).count();
                    positives as f64 / k.max(1) as f64
                })
                .collect()
        })
        .collect();
    let mut out = vec![Vec::with_capacity(queries.rows); ks.len()];
    for scores in per_query {
        for (i, s) in scores.into_iter().enumerate() {
            out[i].push(s);
        }
    }
    out
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
    fn score_is_fraction_of_positive_neighbours() {
        let train = matrix(&[&[0.0], &[0.1], &[0.2], &[1.0]]);
        let labels = vec![true, true, false, false];
        let model = KnnModel::fit(&train, &labels, 3);
        let scores = model.predict_scores(&matrix(&[&[0.05]]));
        assert!((scores[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn equidistant_tie_resolves_by_training_index() {
        // Query at 0.5 is equidistant from rows 0 and 1; with k = 1 the
        // lower-index row (positive) wins deterministically.
        let train = matrix(&[&[0.0], &[1.0]]);
        let labels = vec![true, false];
        let model = KnnModel::fit(&train, &labels, 1);
        let scores = model.predict_scores(&matrix(&[&[0.5]]));
        assert_eq!(scores[0], 1.0);
    }

    #[test]
    fn multi_k_scores_match_individual_fits() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let train = matrix(&refs);
        let labels: Vec<bool> = (0..30).map(|_| rng.random_bool(0.5)).collect();
        let queries = matrix(&[&[0.5, 0.5], &[0.1, 0.9]]);
        let multi = knn_scores_multi(&train, &labels, &queries, &[3, 5, 7]);
        for (i, &k) in [3usize, 5, 7].iter().enumerate() {
            let single = KnnModel::fit(&train, &labels, k).predict_scores(&queries);
            assert_eq!(multi[i], single);
        }
    }
}
