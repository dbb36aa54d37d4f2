//! Logistic regression and linear max-margin classification, both trained by
//! full-batch (sub)gradient descent with Armijo backtracking line search.
//!
//! Objectives (n = sample count, C = inverse regularization strength):
//!
//! * logistic: J = (1/n) [ Σ log(1 + exp(-s_i z_i)) + ||w||² / (2C) ]
//! * svm:      J = (1/n) [ Σ hinge(1 - s_i z_i)^p  + ||w||² / (2C) ]
//!
//! with z = w·x + b, s = ±1, p = 1 (hinge) or 2 (squared hinge). The bias is
//! unregularized. The objective/gradient pairs are public so they can be
//! checked against finite differences.

use crate::pipeline::frame::Matrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvmLoss {
    Hinge,
    SquaredHinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearKind {
    Logistic,
    Svm(SvmLoss),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
}

fn signed(label: bool) -> f64 {
    if label {
        1.0
    } else {
        -1.0
    }
}

fn margins(w: &[f64], b: f64, x: &Matrix) -> Vec<f64> {
    (0..x.rows)
        .map(|r| {
            let row = x.row(r);
            let mut z = b;
            for (wi, xi) in w.iter().zip(row) {
                z += wi * xi;
            }
            z
        })
        .collect()
}

/// Logistic objective and its gradient at (w, b).
pub fn logistic_objective_grad(
    w: &[f64],
    b: f64,
    x: &Matrix,
    y: &[bool],
    c: f64,
) -> (f64, Vec<f64>, f64) {
    let n = x.rows as f64;
    let z = margins(w, b, x);
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; w.len()];
    let mut grad_b = 0.0;
    for r in 0..x.rows {
        let s = signed(y[r]);
        let m = s * z[r];
        // log(1 + exp(-m)) computed stably.
        loss += if m > 0.0 {
            (-m).exp().ln_1p()
        } else {
            -m + m.exp().ln_1p()
        };
        // d/dm = -sigmoid(-m); chain through z = m/s.
        let sigma = 1.0 / (1.0 + m.exp());
        let coeff = -s * sigma;
        let row = x.row(r);
        for (g, xi) in grad_w.iter_mut().zip(row) {
            *g += coeff * xi;
        }
        grad_b += coeff;
    }
    let mut reg = 0.0;
    for (g, wi) in grad_w.iter_mut().zip(w) {
        reg += wi * wi;
        *g = (*g + wi / c) / n;
    }
    ((loss + reg / (2.0 * c)) / n, grad_w, grad_b / n)
}

/// Max-margin objective and its (sub)gradient at (w, b).
pub fn svm_objective_grad(
    w: &[f64],
    b: f64,
    x: &Matrix,
    y: &[bool],
    c: f64,
    loss_kind: SvmLoss,
) -> (f64, Vec<f64>, f64) {
    let n = x.rows as f64;
    let z = margins(w, b, x);
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; w.len()];
    let mut grad_b = 0.0;
    for r in 0..x.rows {
        let s = signed(y[r]);
        let violation = 1.0 - s * z[r];
        if violation <= 0.0 {
            continue;
        }
        let (term, coeff) = match loss_kind {
            SvmLoss::Hinge => (violation, -s),
            SvmLoss::SquaredHinge => (violation * violation, -2.0 * violation * s),
        };
        loss += term;
        let row = x.row(r);
        for (g, xi) in grad_w.iter_mut().zip(row) {
            *g += coeff * xi;
        }
        grad_b += coeff;
    }
    let mut reg = 0.0;
    for (g, wi) in grad_w.iter_mut().zip(w) {
        reg += wi * wi;
        *g = (*g + wi / c) / n;
    }
    ((loss + reg / (2.0 * c)) / n, grad_w, grad_b / n)
}

fn objective_grad(
    kind: LinearKind,
    w: &[f64],
    b: f64,
    x: &Matrix,
    y: &[bool],
    c: f64,
) -> (f64, Vec<f64>, f64) {
    match kind {
        LinearKind::Logistic => logistic_objective_grad(w, b, x, y, c),
        LinearKind::Svm(loss) => svm_objective_grad(w, b, x, y, c, loss),
    }
}

const GRAD_TOL: f64 = 1e-6;

/// Full-batch descent with backtracking; `max_epochs` caps the iterations
/// (non-convergence is recorded on the model, training continues with the
/// best iterate).
pub fn fit_linear(
    x: &Matrix,
    y: &[bool],
    kind: LinearKind,
    c: f64,
    max_epochs: usize,
) -> LinearModel {
    let mut w = vec![0.0; x.cols];
    let mut b = 0.0;
    let (mut value, mut grad_w, mut grad_b) = objective_grad(kind, &w, b, x, y, c);
    let mut converged = false;
    for _ in 0..max_epochs {
        let grad_norm2: f64 = grad_w.iter().map(|g| g * g).sum::<f64>() + grad_b * grad_b;
        if grad_norm2.sqrt() < GRAD_TOL {
            converged = true;
            break;
        }
        // Armijo backtracking along the negative gradient.
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let w_next: Vec<f64> = w.iter().zip(&grad_w).map(|(wi, g)| wi - step * g).collect();
            let b_next = b - step * grad_b;
            let (next_value, next_gw, next_gb) = objective_grad(kind, &w_next, b_next, x, y, c);
            if next_value <= value - 1e-4 * step * grad_norm2 {
                w = w_next;
                b = b_next;
                value = next_value;
                grad_w = next_gw;
                grad_b = next_gb;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            // No descent step found at machine precision: treat as converged.
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("linear fit hit the epoch cap (kind {kind:?}, C {c})");
    }
    LinearModel {
        kind,
        weights: w,
        bias: b,
        converged,
    }
}

impl LinearModel {
    /// Sigmoid of the linear score for both model kinds (distance-to-margin
    /// sigmoid for the max-margin classifier).
    pub fn predict_scores(&self, x: &Matrix) -> Vec<f64> {
        margins(&self.weights, self.bias, x)
            .into_iter()
            .map(|z| 1.0 / (1.0 + (-z).exp()))
            .collect()
    }
}
