//! Step two: patient-centric transformation of the step-one feature set.
//!
//! Two aggregations collapse the event rows to one row per patient: sliding
//! n-gram counts over the ordered feature-id sequence (`FC` columns plus the
//! per-patient window total `FC_TOTAL`) and per-feature sums of the stored
//! decimal values (`S` columns). An `S` cell is absent when the patient has
//! no event for that feature; `FC` cells are plain counts, zero included.

use crate::model::{OutcomeSet, PatientId};
use crate::step1::{AkdfeRow, EventAkdfeFeatureSet, FeatureDefinition};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Step2Error {
    #[error("n-gram length must be at least 1")]
    ZeroN,
    #[error(
        "patient sets differ: {only_left:?} only on one side, {only_right:?} only on the other"
    )]
    PatientMismatch {
        only_left: Vec<PatientId>,
        only_right: Vec<PatientId>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column catalog error: {0}")]
    Catalog(String),
}

/// N-gram configuration plus the per-run diagnostics the transformation
/// records: the largest per-patient event count (the upper bound for `n`)
/// and the largest number of same-timestamp events seen for any patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NGramConfig {
    pub n: usize,
}

impl Default for NGramConfig {
    fn default() -> Self {
        NGramConfig { n: 1 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NGramStats {
    pub n_gram_max: usize,
    pub patient_same_event_max: usize,
}

pub const FC_TOTAL: &str = "FC_TOTAL";

/// Feature-count columns over a fixed patient universe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FcColumns {
    pub patients: Vec<PatientId>,
    /// Column names; `FC_TOTAL` is always last.
    pub names: Vec<String>,
    /// Originating feature-id tuple per column (empty for `FC_TOTAL`).
    pub tokens: Vec<Vec<u32>>,
    /// counts[patient][column]
    pub counts: Vec<Vec<u32>>,
    pub stats: NGramStats,
}

/// Sum columns over the same patient universe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SColumns {
    pub patients: Vec<PatientId>,
    pub names: Vec<String>,
    pub feature_ids: Vec<u32>,
    /// sums[patient][column]; absent when the patient has no such event.
    pub sums: Vec<Vec<Option<f64>>>,
}

fn fc_name(token: &[u32]) -> String {
    let mut out = String::from("FC");
    for (i, fid) in token.iter().enumerate() {
        if i > 0 {
            out.push('_');
        }
        out.push_str(&fid.to_string());
    }
    out
}

fn group_rows<'a>(
    rows: &'a [AkdfeRow],
    patients: &[PatientId],
) -> BTreeMap<&'a PatientId, Vec<&'a AkdfeRow>> {
    let universe: BTreeSet<&PatientId> = patients.iter().collect();
    let mut grouped: BTreeMap<&PatientId, Vec<&AkdfeRow>> = BTreeMap::new();
    for row in rows {
        if universe.contains(&row.patient_id) {
            grouped.entry(&row.patient_id).or_default().push(row);
        }
    }
    grouped
}

/// Slides a window of `n` over each patient's ordered feature-id sequence and
/// counts the distinct n-gram tokens. The input rows must already carry the
/// step-one ordering (patient, timestamp, feature id); patients with fewer
/// than `n` events contribute zero n-grams.
pub fn generate_ngrams(
    fs: &EventAkdfeFeatureSet,
    patients: &[PatientId],
    cfg: NGramConfig,
) -> Result<FcColumns, Step2Error> {
    if cfg.n == 0 {
        return Err(Step2Error::ZeroN);
    }
    let grouped = group_rows(&fs.rows, patients);

    let mut n_gram_max = 0usize;
    let mut same_event_max = 0usize;
    let mut tokens: BTreeSet<Vec<u32>> = BTreeSet::new();
    let mut per_patient: BTreeMap<&PatientId, BTreeMap<Vec<u32>, u32>> = BTreeMap::new();
    let mut totals: BTreeMap<&PatientId, u32> = BTreeMap::new();
    for (pid, rows) in &grouped {
        n_gram_max = n_gram_max.max(rows.len());
        let mut same = 1usize;
        for pair in rows.windows(2) {
            if pair[0].observation_start_date == pair[1].observation_start_date {
                same += 1;
                same_event_max = same_event_max.max(same);
            } else {
                same = 1;
            }
        }
        same_event_max = same_event_max.max(if rows.is_empty() { 0 } else { 1 });
        let seq: Vec<u32> = rows.iter().map(|r| r.feature_id).collect();
        let mut counts: BTreeMap<Vec<u32>, u32> = BTreeMap::new();
        if seq.len() >= cfg.n {
            for window in seq.windows(cfg.n) {
                *counts.entry(window.to_vec()).or_insert(0) += 1;
            }
        }
        totals.insert(pid, counts.values().sum());
        for token in counts.keys() {
            tokens.insert(token.clone());
        }
        per_patient.insert(pid, counts);
    }

    let tokens: Vec<Vec<u32>> = tokens.into_iter().collect();
    let mut names: Vec<String> = tokens.iter().map(|t| fc_name(t)).collect();
    names.push(FC_TOTAL.to_string());
    let token_index: BTreeMap<&Vec<u32>, usize> =
        tokens.iter().enumerate().map(|(i, t)| (t, i)).collect();

    let mut counts = vec![vec![0u32; tokens.len() + 1]; patients.len()];
    for (row_idx, pid) in patients.iter().enumerate() {
        if let Some(patient_counts) = per_patient.get(pid) {
            for (token, count) in patient_counts {
                counts[row_idx][token_index[token]] = *count;
            }
            counts[row_idx][tokens.len()] = totals[pid];
        }
    }
    let mut tokens_with_total = tokens;
    tokens_with_total.push(Vec::new());
    Ok(FcColumns {
        patients: patients.to_vec(),
        names,
        tokens: tokens_with_total,
        counts,
        stats: NGramStats {
            n_gram_max,
            patient_same_event_max: same_event_max,
        },
    })
}

/// Per-feature sums of the stored decimal values. Rows without a decimal
/// contribute 0 to an existing sum; a patient with no rows for a feature has
/// an absent cell.
pub fn sum_feature_values(
    fs: &EventAkdfeFeatureSet,
    patients: &[PatientId],
) -> Result<SColumns, Step2Error> {
    let grouped = group_rows(&fs.rows, patients);
    let feature_ids: Vec<u32> = fs.definitions.iter().map(|d| d.feature_id).collect();
    let mut sorted_ids = feature_ids;
    sorted_ids.sort_unstable();
    let index: BTreeMap<u32, usize> = sorted_ids.iter().enumerate().map(|(i, f)| (*f, i)).collect();

    let mut sums = vec![vec![None; sorted_ids.len()]; patients.len()];
    for (row_idx, pid) in patients.iter().enumerate() {
        if let Some(rows) = grouped.get(pid) {
            for row in rows {
                if let Some(col) = index.get(&row.feature_id) {
                    let cell = &mut sums[row_idx][*col];
                    let add = row.value_decimal.unwrap_or(0.0);
                    *cell = Some(cell.unwrap_or(0.0) + add);
                }
            }
        }
    }
    Ok(SColumns {
        patients: patients.to_vec(),
        names: sorted_ids.iter().map(|f| format!("S{f}")).collect(),
        feature_ids: sorted_ids,
        sums,
    })
}

/// One row per patient: FC columns, S columns, and the outcome label, plus a
/// catalog mapping every column back to its originating feature definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcdMatrix {
    pub patients: Vec<PatientId>,
    pub column_names: Vec<String>,
    /// cells[patient][column]; FC cells are always present.
    pub cells: Vec<Vec<Option<f64>>>,
    pub y: Vec<bool>,
    /// column name -> originating feature ids (empty for `FC_TOTAL`).
    pub column_catalog: BTreeMap<String, Vec<u32>>,
    pub stats: NGramStats,
}

impl PcdMatrix {
    /// Column count including the outcome.
    pub fn width(&self) -> usize {
        self.column_names.len() + 1
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }
}

fn patient_mismatch(a: &[PatientId], b: &[PatientId]) -> Option<Step2Error> {
    let sa: BTreeSet<&PatientId> = a.iter().collect();
    let sb: BTreeSet<&PatientId> = b.iter().collect();
    if sa == sb {
        return None;
    }
    Some(Step2Error::PatientMismatch {
        only_left: sa.difference(&sb).map(|p| (*p).clone()).collect(),
        only_right: sb.difference(&sa).map(|p| (*p).clone()).collect(),
    })
}

/// Joins FC and S columns with the outcome labels into the one-row-per-patient
/// matrix. The three patient sets must be identical.
pub fn assemble_pcd(
    fc: &FcColumns,
    s: &SColumns,
    outcomes: &OutcomeSet,
) -> Result<PcdMatrix, Step2Error> {
    if let Some(err) = patient_mismatch(&fc.patients, &s.patients) {
        return Err(err);
    }
    let outcome_patients: Vec<PatientId> =
        outcomes.iter().map(|l| l.patient_id.clone()).collect();
    if let Some(err) = patient_mismatch(&fc.patients, &outcome_patients) {
        return Err(err);
    }

    let mut column_names = fc.names.clone();
    column_names.extend(s.names.iter().cloned());
    let mut column_catalog = BTreeMap::new();
    for (name, token) in fc.names.iter().zip(&fc.tokens) {
        column_catalog.insert(name.clone(), token.clone());
    }
    for (name, fid) in s.names.iter().zip(&s.feature_ids) {
        column_catalog.insert(name.clone(), vec![*fid]);
    }

    let s_index: BTreeMap<&PatientId, usize> =
        s.patients.iter().enumerate().map(|(i, p)| (p, i)).collect();
    let mut cells = Vec::with_capacity(fc.patients.len());
    let mut y = Vec::with_capacity(fc.patients.len());
    for (i, pid) in fc.patients.iter().enumerate() {
        let mut row: Vec<Option<f64>> = fc.counts[i]
            .iter()
            .map(|c| Some(f64::from(*c)))
            .collect();
        row.extend(s.sums[s_index[pid]].iter().copied());
        cells.push(row);
        y.push(outcomes.get(pid).expect("patient sets checked").y);
    }
    Ok(PcdMatrix {
        patients: fc.patients.clone(),
        column_names,
        cells,
        y,
        column_catalog,
        stats: fc.stats,
    })
}

/// Convenience wrapper: n-grams + sums + assembly over the outcome cohort.
pub fn patient_centric_transform(
    fs: &EventAkdfeFeatureSet,
    outcomes: &OutcomeSet,
    cfg: NGramConfig,
) -> Result<PcdMatrix, Step2Error> {
    let patients: Vec<PatientId> = outcomes.iter().map(|l| l.patient_id.clone()).collect();
    let fc = generate_ngrams(fs, &patients, cfg)?;
    let s = sum_feature_values(fs, &patients)?;
    assemble_pcd(&fc, &s, outcomes)
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

pub fn export_pcd_csv(m: &PcdMatrix, path: &Path) -> Result<(), Step2Error> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["PATIENT_ID".to_string()];
    header.extend(m.column_names.iter().cloned());
    header.push("Y".to_string());
    writer.write_record(&header)?;
    for (i, pid) in m.patients.iter().enumerate() {
        let mut record = vec![pid.as_str().to_string()];
        for cell in &m.cells[i] {
            record.push(cell.map(|v| v.to_string()).unwrap_or_default());
        }
        record.push(if m.y[i] { "1" } else { "0" }.to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ColumnCatalogEntry {
    column: String,
    feature_ids: Vec<u32>,
    codes: Vec<String>,
}

/// Column catalog JSON: every FC/S column with its originating feature codes.
pub fn export_column_catalog_json(
    m: &PcdMatrix,
    definitions: &[FeatureDefinition],
    path: &Path,
) -> Result<(), Step2Error> {
    let by_id: BTreeMap<u32, &FeatureDefinition> =
        definitions.iter().map(|d| (d.feature_id, d)).collect();
    let entries: Vec<ColumnCatalogEntry> = m
        .column_names
        .iter()
        .map(|name| {
            let fids = m.column_catalog.get(name).cloned().unwrap_or_default();
            let codes = fids
                .iter()
                .map(|f| {
                    by_id
                        .get(f)
                        .map(|d| d.code.clone())
                        .ok_or_else(|| Step2Error::Catalog(format!("unknown feature id {f}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ColumnCatalogEntry {
                column: name.clone(),
                feature_ids: fids,
                codes,
            })
        })
        .collect::<Result<_, Step2Error>>()?;
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, &entries).map_err(|e| Step2Error::Catalog(e.to_string()))?;
    Ok(())
}
