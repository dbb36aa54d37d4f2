//! RBF-kernel support vector classifier trained with simplified SMO
//! (random second-choice multiplier, tolerance 1e-3, capped passes).
//! Gamma follows the "scale" convention: 1 / (n_features * Var(X)).

use crate::pipeline::frame::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const SMO_TOLERANCE: f64 = 1e-3;
pub const SMO_MAX_PASSES: usize = 10_000;
/// Consecutive change-free passes required before stopping.
const STABLE_PASSES: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RbfSvmModel {
    pub support_vectors: Matrix,
    pub coefficients: Vec<f64>, // alpha_i * y_i for the support vectors
    pub bias: f64,
    pub gamma: f64,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let mut d2 = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        d2 += d * d;
    }
    (-gamma * d2).exp()
}

pub fn scale_gamma(x: &Matrix) -> f64 {
    let var = x.overall_variance();
    if var > 0.0 && x.cols > 0 {
        1.0 / (x.cols as f64 * var)
    } else {
        1.0
    }
}

pub fn fit_rbf_svm(x: &Matrix, y: &[bool], c: f64, seed: u64) -> RbfSvmModel {
    let n = x.rows;
    let gamma = scale_gamma(x);
    let signs: Vec<f64> = y.iter().map(|l| if *l { 1.0 } else { -1.0 }).collect();
    let mut alphas = vec![0.0f64; n];
    let mut b = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Decision values maintained incrementally: f_i = sum_j a_j y_j K(i,j) + b.
    let mut f = vec![0.0f64; n];
    let decision_error = |f: &[f64], b: f64, i: usize, signs: &[f64]| f[i] + b - signs[i];

    let mut stable = 0;
    for _pass in 0..SMO_MAX_PASSES {
        let mut changed = 0;
        for i in 0..n {
            let e_i = decision_error(&f, b, i, &signs);
            let violates = (signs[i] * e_i < -SMO_TOLERANCE && alphas[i] < c)
                || (signs[i] * e_i > SMO_TOLERANCE && alphas[i] > 0.0);
            if !violates {
                continue;
            }
            // Random j != i.
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let e_j = decision_error(&f, b, j, &signs);
            let (alpha_i_old, alpha_j_old) = (alphas[i], alphas[j]);
            let (lo, hi) = if signs[i] != signs[j] {
                (
                    (alpha_j_old - alpha_i_old).max(0.0),
                    (c + alpha_j_old - alpha_i_old).min(c),
                )
            } else {
                (
                    (alpha_i_old + alpha_j_old - c).max(0.0),
                    (alpha_i_old + alpha_j_old).min(c),
                )
            };
            if lo >= hi {
                continue;
            }
            let k_ii = 1.0; // rbf(x_i, x_i)
            let k_jj = 1.0;
            let k_ij = rbf(x.row(i), x.row(j), gamma);
            let eta = 2.0 * k_ij - k_ii - k_jj;
            if eta >= 0.0 {
                continue;
            }
            let mut alpha_j = alpha_j_old - signs[j] * (e_i - e_j) / eta;
            alpha_j = alpha_j.clamp(lo, hi);
            if (alpha_j - alpha_j_old).abs() < 1e-5 {
                continue;
            }
            let alpha_i = alpha_i_old + signs[i] * signs[j] * (alpha_j_old - alpha_j);
            alphas[i] = alpha_i;
            alphas[j] = alpha_j;

            let di = signs[i] * (alpha_i - alpha_i_old);
            let dj = signs[j] * (alpha_j - alpha_j_old);
            for t in 0..n {
                f[t] += di * rbf(x.row(t), x.row(i), gamma) + dj * rbf(x.row(t), x.row(j), gamma);
            }
            let e_i_new = decision_error(&f, b, i, &signs);
            let e_j_new = decision_error(&f, b, j, &signs);
            let b1 = b - e_i_new;
            let b2 = b - e_j_new;
            b = if alpha_i > 0.0 && alpha_i < c {
                b1
            } else if alpha_j > 0.0 && alpha_j < c {
                b2
            } else {
                0.5 * (b1 + b2)
            };
            changed += 1;
        }
        if changed == 0 {
            stable += 1;
            if stable >= STABLE_PASSES {
                break;
            }
        } else {
            stable = 0;
        }
    }

    let support: Vec<usize> = (0..n).filter(|&i| alphas[i] > 1e-8).collect();
    let support_vectors = x.slice_rows(&support);
    let coefficients = support.iter().map(|&i| alphas[i] * signs[i]).collect();
    RbfSvmModel {
        support_vectors,
        coefficients,
        bias: b,
        gamma,
    }
}

impl RbfSvmModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        let mut z = self.bias;
        for (i, coeff) in self.coefficients.iter().enumerate() {
            z += coeff * rbf(self.support_vectors.row(i), row, self.gamma);
        }
        z
    }

    /// Distance-to-margin sigmoid calibration.
    pub fn predict_scores(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows)
            .map(|r| 1.0 / (1.0 + (-self.decision(x.row(r))).exp()))
            .collect()
    }
}
