//! Pearson correlation and one-way ANOVA F-tests with exact p-values.
//!
//! The F-distribution survival function is evaluated through the regularized
//! incomplete beta function (Lentz continued fraction), so no external stats
//! dependency is needed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least two values per vector, got {0}")]
    TooFewValues(usize),
    #[error("vectors must have equal length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined for zero-variance input")]
    ZeroVariance,
    #[error("ANOVA needs at least two groups")]
    TooFewGroups,
    #[error("ANOVA needs more observations than groups (degenerate degrees of freedom)")]
    DegenerateDof,
    #[error("every ANOVA group needs at least one value")]
    EmptyGroup,
}

/// One-way ANOVA outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p: f64,
}

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

/// ln Γ(z) for z > 0, Lanczos approximation (Numerical Recipes coefficients).
pub fn ln_gamma(z: f64) -> f64 {
    debug_assert!(z > 0.0);
    const COEF: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut sum = 1.000000000190015;
    for (i, c) in COEF.iter().enumerate() {
        sum += c / (z + i as f64 + 1.0);
    }
    let tmp = z + 5.5;
    (z + 0.5) * tmp.ln() - tmp + (2.5066282746310005 * sum / z).ln()
}

/// Regularized incomplete beta I_x(a, b) via the modified Lentz continued
/// fraction, with the symmetry relation for fast convergence. Absolute
/// accuracy is driven below 1e-12.
pub fn inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) || a <= 0.0 || b <= 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - inc_beta(1.0 - x, b, a);
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_gamma(a) - ln_gamma(b) + ln_gamma(a + b);
    let front = ln_front.exp();

    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-30;
    let mut c = 1.0;
    let mut d = 0.0;
    let mut f = 1.0;
    for m in 0..400 {
        let mf = m as f64;
        // odd step
        let num = -(a + mf) * (a + b + mf) * x / ((a + 2.0 * mf) * (a + 2.0 * mf + 1.0));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        f *= c * d;
        // even step
        let num = (mf + 1.0) * (b - mf - 1.0) * x / ((a + 2.0 * mf + 1.0) * (a + 2.0 * mf + 2.0));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    front / (a * f)
}

/// Survival function of the F distribution: P(F' > f | df1, df2).
pub fn f_survival(f: f64, df1: usize, df2: usize) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    let d1 = df1 as f64;
    let d2 = df2 as f64;
    inc_beta(d2 / (d2 + d1 * f), d2 / 2.0, d1 / 2.0)
}

// ---------------------------------------------------------------------------
// Pearson correlation
// ---------------------------------------------------------------------------

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewValues(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

// ---------------------------------------------------------------------------
// One-way ANOVA
// ---------------------------------------------------------------------------

/// One-way ANOVA over two or more groups.
///
/// Zero within-group variance with nonzero between-group variance yields an
/// infinite F and the p = 0 sentinel.
pub fn anova_f(groups: &[&[f64]]) -> Result<AnovaResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups);
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(StatsError::EmptyGroup);
    }
    let k = groups.len();
    let n: usize = groups.iter().map(|g| g.len()).sum();
    if n <= k {
        return Err(StatsError::DegenerateDof);
    }
    let grand: f64 = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (m - grand) * (m - grand);
        ssw += g.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    let df_between = k - 1;
    let df_within = n - k;
    let msb = ssb / df_between as f64;
    let msw = ssw / df_within as f64;
    let (f, p) = if msw == 0.0 {
        if msb == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let f = msb / msw;
        (f, f_survival(f, df_between, df_within))
    };
    Ok(AnovaResult {
        f,
        df_between,
        df_within,
        p,
    })
}

// ---------------------------------------------------------------------------
// Correlation matrices
// ---------------------------------------------------------------------------

/// Symmetric Pearson matrix over named columns. Cells with absent values are
/// excluded pairwise; undefined correlations (constant columns) are NaN.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    /// `columns[i]` holds column i's cells; `None` means absent.
    pub fn from_columns(labels: Vec<String>, columns: &[Vec<Option<f64>>]) -> Self {
        assert_eq!(labels.len(), columns.len());
        let k = columns.len();
        let mut values = vec![vec![f64::NAN; k]; k];
        for i in 0..k {
            values[i][i] = 1.0;
            for j in (i + 1)..k {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for (a, b) in columns[i].iter().zip(&columns[j]) {
                    if let (Some(x), Some(y)) = (a, b) {
                        xs.push(*x);
                        ys.push(*y);
                    }
                }
                let r = pearson(&xs, &ys).unwrap_or(f64::NAN);
                values[i][j] = r;
                values[j][i] = r;
            }
        }
        CorrelationMatrix { labels, values }
    }

    /// Indices of the `k` columns most correlated (by |r|) with `target`,
    /// strongest first; NaN correlations rank last.
    pub fn top_by_target(&self, target: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.labels.len()).filter(|&i| i != target).collect();
        idx.sort_by(|&a, &b| {
            let ra = self.values[a][target].abs();
            let rb = self.values[b][target].abs();
            match (ra.is_nan(), rb.is_nan()) {
                (true, true) => a.cmp(&b),
                (true, false) => std::cmp::Ordering::Greater,
                (false, true) => std::cmp::Ordering::Less,
                (false, false) => rb.partial_cmp(&ra).unwrap().then(a.cmp(&b)),
            }
        });
        idx.truncate(k);
        idx
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("COLUMN");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(l);
            for v in &self.values[i] {
                out.push(',');
                if v.is_nan() {
                    out.push_str("undefined");
                } else {
                    out.push_str(&format!("{v:.6}"));
                }
            }
            out.push('\n');
        }
        out
    }
}
