//! Raw typed columns and their encoding into a numeric matrix.
//!
//! Dates become day numbers. Low-cardinality categoricals expand to one
//! binary column per value (missing included as its own category, columns
//! named parent-id plus a suffix letter); high-cardinality ones are replaced
//! by the training-split mean of the target for the value, with unseen values
//! falling back to the global target mean. All encoder statistics are fitted
//! on training rows only.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Missing cells are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub column_names: Vec<String>,
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize, column_names: Vec<String>) -> Self {
        assert_eq!(column_names.len(), cols);
        Matrix {
            column_names,
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn slice_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            column_names: self.column_names.clone(),
            data,
            rows: indices.len(),
            cols: self.cols,
        }
    }

    pub fn select_columns(&self, columns: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(
            self.rows,
            columns.len(),
            columns
                .iter()
                .map(|&c| self.column_names[c].clone())
                .collect(),
        );
        for r in 0..self.rows {
            let src = self.row(r);
            for (j, &c) in columns.iter().enumerate() {
                out.set(r, j, src[c]);
            }
        }
        out
    }

    /// Variance over every present (non-NaN) entry; used for the RBF gamma.
    pub fn overall_variance(&self) -> f64 {
        let mut n = 0.0;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for &v in &self.data {
            if v.is_nan() {
                continue;
            }
            n += 1.0;
            let d = v - mean;
            mean += d / n;
            m2 += d * (v - mean);
        }
        if n < 2.0 {
            0.0
        } else {
            m2 / n
        }
    }
}

#[derive(Debug, Clone)]
pub enum RawColumn {
    /// NaN = missing.
    Numeric { id: String, values: Vec<f64> },
    Categorical {
        id: String,
        values: Vec<Option<String>>,
    },
    Date {
        id: String,
        values: Vec<Option<NaiveDate>>,
    },
}

impl RawColumn {
    pub fn len(&self) -> usize {
        match self {
            RawColumn::Numeric { values, .. } => values.len(),
            RawColumn::Categorical { values, .. } => values.len(),
            RawColumn::Date { values, .. } => values.len(),
        }
    }

    pub fn id(&self) -> &str {
        match self {
            RawColumn::Numeric { id, .. } => id,
            RawColumn::Categorical { id, .. } => id,
            RawColumn::Date { id, .. } => id,
        }
    }
}

/// Typed columns plus the target.
#[derive(Debug, Clone)]
pub struct RawFrame {
    pub columns: Vec<RawColumn>,
    pub y: Vec<bool>,
}

impl RawFrame {
    pub fn rows(&self) -> usize {
        self.y.len()
    }
}

const MISSING_CATEGORY: &str = "MISSING";

fn suffix_letter(i: usize) -> String {
    // a..z, then aa, ab, ...
    let mut i = i;
    let mut out = String::new();
    loop {
        out.insert(0, (b'a' + (i % 26) as u8) as char);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    out
}

fn day_number(d: NaiveDate) -> f64 {
    (d - NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()).num_days() as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum ColumnPlan {
    Passthrough {
        name: String,
    },
    OneHot {
        id: String,
        categories: Vec<String>,
    },
    TargetMean {
        id: String,
        means: BTreeMap<String, f64>,
        global_mean: f64,
    },
}

/// Fitted categorical encoding; apply with [`encode`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoricalEncoder {
    plans: Vec<ColumnPlan>,
    pub output_columns: Vec<String>,
}

/// Fits the encoder on the training rows only.
pub fn fit_encoder(
    frame: &RawFrame,
    train_indices: &[usize],
    cardinality_threshold: usize,
) -> CategoricalEncoder {
    let mut plans = Vec::new();
    let mut output_columns = Vec::new();
    for column in &frame.columns {
        match column {
            RawColumn::Numeric { id, .. } | RawColumn::Date { id, .. } => {
                plans.push(ColumnPlan::Passthrough { name: id.clone() });
                output_columns.push(id.clone());
            }
            RawColumn::Categorical { id, values } => {
                let mut distinct: BTreeMap<&str, (usize, usize)> = BTreeMap::new(); // count, positives
                let mut any_missing = false;
                for &i in train_indices {
                    match &values[i] {
                        Some(v) => {
                            let entry = distinct.entry(v.as_str()).or_insert((0, 0));
                            entry.0 += 1;
                            entry.1 += usize::from(frame.y[i]);
                        }
                        None => any_missing = true,
                    }
                }
                if distinct.len() <= cardinality_threshold {
                    let mut categories: Vec<String> =
                        distinct.keys().map(|s| s.to_string()).collect();
                    if any_missing {
                        categories.push(MISSING_CATEGORY.to_string());
                    }
                    categories.sort();
                    for (i, _) in categories.iter().enumerate() {
                        output_columns.push(format!("{id}{}", suffix_letter(i)));
                    }
                    plans.push(ColumnPlan::OneHot {
                        id: id.clone(),
                        categories,
                    });
                } else {
                    let positives = train_indices.iter().filter(|&&i| frame.y[i]).count();
                    let global_mean = positives as f64 / train_indices.len().max(1) as f64;
                    let means = distinct
                        .into_iter()
                        .map(|(v, (n, pos))| (v.to_string(), pos as f64 / n as f64))
                        .collect();
                    plans.push(ColumnPlan::TargetMean {
                        id: id.clone(),
                        means,
                        global_mean,
                    });
                    output_columns.push(id.clone());
                }
            }
        }
    }
    CategoricalEncoder {
        plans,
        output_columns,
    }
}

/// Applies a fitted encoder to every row of the frame.
pub fn encode(frame: &RawFrame, encoder: &CategoricalEncoder) -> Matrix {
    let rows = frame.rows();
    let mut matrix = Matrix::zeros(rows, encoder.output_columns.len(), encoder.output_columns.clone());
    let mut col_offset = 0;
    for (plan, column) in encoder.plans.iter().zip(&frame.columns) {
        match (plan, column) {
            (ColumnPlan::Passthrough { .. }, RawColumn::Numeric { values, .. }) => {
                for (r, v) in values.iter().enumerate() {
                    matrix.set(r, col_offset, *v);
                }
                col_offset += 1;
            }
            (ColumnPlan::Passthrough { .. }, RawColumn::Date { values, .. }) => {
                for (r, v) in values.iter().enumerate() {
                    matrix.set(r, col_offset, v.map(day_number).unwrap_or(f64::NAN));
                }
                col_offset += 1;
            }
            (ColumnPlan::OneHot { categories, .. }, RawColumn::Categorical { values, .. }) => {
                for (r, v) in values.iter().enumerate() {
                    let label = v.as_deref().unwrap_or(MISSING_CATEGORY);
                    for (j, category) in categories.iter().enumerate() {
                        matrix.set(
                            r,
                            col_offset + j,
                            if label == category { 1.0 } else { 0.0 },
                        );
                    }
                }
                col_offset += categories.len();
            }
            (
                ColumnPlan::TargetMean {
                    means, global_mean, ..
                },
                RawColumn::Categorical { values, .. },
            ) => {
                for (r, v) in values.iter().enumerate() {
                    let value = match v {
                        Some(s) => means.get(s).copied().unwrap_or(*global_mean),
                        None => *global_mean,
                    };
                    matrix.set(r, col_offset, value);
                }
                col_offset += 1;
            }
            _ => unreachable!("plan/column mismatch"),
        }
    }
    matrix
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_with(column: RawColumn, y: Vec<bool>) -> RawFrame {
        RawFrame {
            columns: vec![column],
            y,
        }
    }

    #[test]
    fn gender_expands_to_two_suffix_columns() {
        let frame = frame_with(
            RawColumn::Categorical {
                id: "3".to_string(),
                values: vec![Some("F".into()), Some("M".into()), Some("F".into())],
            },
            vec![true, false, false],
        );
        let encoder = fit_encoder(&frame, &[0, 1, 2], 10);
        assert_eq!(encoder.output_columns, vec!["3a", "3b"]);
        let m = encode(&frame, &encoder);
        assert_eq!(m.row(0), [1.0, 0.0]);
        assert_eq!(m.row(1), [0.0, 1.0]);
    }

    #[test]
    fn route_with_missing_gets_missing_category_first() {
        let values = vec![
            None,
            Some("OLS".to_string()),
            Some("OSD".to_string()),
            Some("PAR".to_string()),
            Some("REC".to_string()),
        ];
        let frame = frame_with(
            RawColumn::Categorical {
                id: "12".to_string(),
                values,
            },
            vec![true, false, false, true, false],
        );
        let encoder = fit_encoder(&frame, &[0, 1, 2, 3, 4], 10);
        // 4 observed values + MISSING -> 5 columns 12a..12e, alphabetical.
        assert_eq!(
            encoder.output_columns,
            vec!["12a", "12b", "12c", "12d", "12e"]
        );
        let m = encode(&frame, &encoder);
        assert_eq!(m.row(0), [1.0, 0.0, 0.0, 0.0, 0.0]); // MISSING sorts first
    }

    #[test]
    fn high_cardinality_mean_encodes_with_train_statistics() {
        let values: Vec<Option<String>> = (0..40)
            .map(|i| Some(format!("V{}", i % 20)))
            .collect();
        let y: Vec<bool> = (0..40).map(|i| i % 4 == 0).collect();
        let frame = frame_with(
            RawColumn::Categorical {
                id: "11".to_string(),
                values,
            },
            y.clone(),
        );
        let train: Vec<usize> = (0..20).collect();
        let encoder = fit_encoder(&frame, &train, 10);
        assert_eq!(encoder.output_columns, vec!["11"]);
        let m = encode(&frame, &encoder);
        // V0 appears at train rows 0 and 20 -> train mean over row 0 only.
        let expected = f64::from(y[0] as u8);
        assert_eq!(m.get(0, 0), expected);
        // Per-category mean oracle: category V1 at train row 1.
        assert_eq!(m.get(1, 0), f64::from(y[1] as u8));
    }

    #[test]
    fn unseen_category_falls_back_to_global_mean() {
        let frame = frame_with(
            RawColumn::Categorical {
                id: "8".to_string(),
                values: (0..30)
                    .map(|i| Some(if i < 15 { format!("T{i}") } else { "NEW".to_string() }))
                    .collect(),
            },
            (0..30).map(|i| i % 3 == 0).collect(),
        );
        let train: Vec<usize> = (0..15).collect();
        let encoder = fit_encoder(&frame, &train, 10);
        let m = encode(&frame, &encoder);
        let global = train.iter().filter(|&&i| i % 3 == 0).count() as f64 / 15.0;
        assert_eq!(m.get(20, 0), global);
    }

    #[test]
    fn dates_become_day_numbers() {
        let frame = frame_with(
            RawColumn::Date {
                id: "7".to_string(),
                values: vec![
                    Some(NaiveDate::from_ymd_opt(1970, 1, 2).unwrap()),
                    None,
                ],
            },
            vec![true, false],
        );
        let encoder = fit_encoder(&frame, &[0, 1], 10);
        let m = encode(&frame, &encoder);
        assert_eq!(m.get(0, 0), 1.0);
        assert!(m.get(1, 0).is_nan());
    }

    #[test]
    fn suffix_letters_extend_beyond_z() {
        assert_eq!(suffix_letter(0), "a");
        assert_eq!(suffix_letter(25), "z");
        assert_eq!(suffix_letter(26), "aa");
        assert_eq!(suffix_letter(27), "ab");
    }
}
