//! Event data model: records, tables, outcome labels, ingestion and ordering.
//!
//! Events are stored one row per event (a patient spans many rows). Two file
//! tracks exist: the plain track has 11 feature columns, the risk-enriched
//! track adds `ROUTE_OF_ADMINISTRATION_TYPE` and `DRUG_REGISTRATION_RISK_VALUE`
//! for 13. Every file also carries a leading `PATIENT_ID` column.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Days after the index date that still count as inside the outcome window.
pub const OUTCOME_WINDOW_DAYS: i64 = 365;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema mismatch: missing columns {missing:?}, unexpected columns {unexpected:?}")]
    Schema {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("no outcome label for patient {0}")]
    MissingLabel(PatientId),
    #[error("duplicate outcome label for patient {0}")]
    DuplicateLabel(PatientId),
    #[error("invalid outcome label for patient {patient}: {message}")]
    InvalidLabel { patient: PatientId, message: String },
    #[error("operation requires a sorted event table")]
    Unsorted,
}

/// Opaque patient identifier (pseudonymised code in real data).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub String);

impl PatientId {
    pub fn new(id: impl Into<String>) -> Self {
        PatientId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubstanceId(pub u32);

impl fmt::Display for SubstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::F => "F",
            Gender::M => "M",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "F" => Some(Gender::F),
            "M" => Some(Gender::M),
            _ => None,
        }
    }
}

/// Medication route of administration. Missing values are an explicit category
/// so they can surface as their own one-hot sub-feature downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Route {
    Ols,
    Osd,
    Par,
    Rec,
    Topical,
    Missing,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::Ols => "OLS",
            Route::Osd => "OSD",
            Route::Par => "PAR",
            Route::Rec => "REC",
            Route::Topical => "TOPICAL",
            Route::Missing => "MISSING",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "OLS" => Some(Route::Ols),
            "OSD" => Some(Route::Osd),
            "PAR" => Some(Route::Par),
            "REC" => Some(Route::Rec),
            "TOPICAL" => Some(Route::Topical),
            "" | "MISSING" => Some(Route::Missing),
            _ => None,
        }
    }
}

/// Which column set a file carries: the plain track or the risk-enriched one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Track {
    WithoutJanusmed,
    WithJanusmed,
}

impl Track {
    pub fn as_str(self) -> &'static str {
        match self {
            Track::WithoutJanusmed => "without",
            Track::WithJanusmed => "with",
        }
    }
}

/// One event row. Field names mirror the file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    #[serde(rename = "PATIENT_ID")]
    pub patient_id: PatientId,
    #[serde(rename = "PATIENT_STUDY_AGE_DECADE")]
    pub patient_study_age_decade: u32,
    #[serde(rename = "EVENT_CONCEPT_TYPE_ID")]
    pub concept_type_id: u16,
    #[serde(rename = "GENDER")]
    pub gender: Gender,
    #[serde(rename = "PATIENT_AGE_AT_OBSERVATION")]
    pub patient_age_at_observation: u32,
    #[serde(rename = "CENSOR_DATE")]
    pub censor_date: Option<NaiveDate>,
    #[serde(rename = "DRUG_USE_INDEX_GROUP")]
    pub drug_use_index_group: u32,
    #[serde(rename = "OBSERVATION_START_DATE")]
    pub observation_start_date: NaiveDate,
    #[serde(rename = "VALUE_CHAR")]
    pub value_char: String,
    #[serde(rename = "VALUE_DECIMAL")]
    pub value_decimal: Option<f64>,
    #[serde(rename = "DRUG_DOSAGE_FORM_CODE")]
    pub drug_dosage_form_code: Option<String>,
    #[serde(rename = "DRUG_SUBSTANS_ID")]
    pub drug_substance_id: Option<SubstanceId>,
    #[serde(rename = "ROUTE_OF_ADMINISTRATION_TYPE")]
    pub route_of_administration: Option<Route>,
    #[serde(rename = "DRUG_REGISTRATION_RISK_VALUE")]
    pub drug_registration_risk_value: Option<u32>,
}

impl EventRecord {
    /// Total order used by [`sort_events`]: (patient, date, concept, value).
    pub fn sort_key(&self) -> (&PatientId, NaiveDate, u16, &str) {
        (
            &self.patient_id,
            self.observation_start_date,
            self.concept_type_id,
            &self.value_char,
        )
    }
}

const PATIENT_ID_COL: &str = "PATIENT_ID";

/// Feature columns of the plain track, in file order (Table ids 1-11).
pub const WITHOUT_COLUMNS: [&str; 11] = [
    "PATIENT_STUDY_AGE_DECADE",
    "EVENT_CONCEPT_TYPE_ID",
    "GENDER",
    "PATIENT_AGE_AT_OBSERVATION",
    "CENSOR_DATE",
    "DRUG_USE_INDEX_GROUP",
    "OBSERVATION_START_DATE",
    "VALUE_CHAR",
    "VALUE_DECIMAL",
    "DRUG_DOSAGE_FORM_CODE",
    "DRUG_SUBSTANS_ID",
];

/// Extra feature columns of the risk-enriched track (Table ids 12-13).
pub const JANUSMED_COLUMNS: [&str; 2] = [
    "ROUTE_OF_ADMINISTRATION_TYPE",
    "DRUG_REGISTRATION_RISK_VALUE",
];

fn track_columns(track: Track) -> Vec<&'static str> {
    let mut cols = vec![PATIENT_ID_COL];
    cols.extend(WITHOUT_COLUMNS);
    if track == Track::WithJanusmed {
        cols.extend(JANUSMED_COLUMNS);
    }
    cols
}

/// Ordered collection of event rows for one track.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventTable {
    rows: Vec<EventRecord>,
    track: Track,
    sorted: bool,
}

impl EventTable {
    /// Builds an unsorted table, validating row invariants against the track.
    pub fn new(rows: Vec<EventRecord>, track: Track) -> Result<Self, ModelError> {
        for (i, row) in rows.iter().enumerate() {
            validate_record(row, track).map_err(|message| ModelError::Row {
                line: i as u64 + 2, // header is line 1
                message,
            })?;
        }
        Ok(EventTable {
            rows,
            track,
            sorted: false,
        })
    }

    pub fn rows(&self) -> &[EventRecord] {
        &self.rows
    }

    pub fn track(&self) -> Track {
        self.track
    }

    pub fn is_sorted(&self) -> bool {
        self.sorted
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct patient ids, in first-appearance order.
    pub fn patient_ids(&self) -> Vec<PatientId> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for row in &self.rows {
            if seen.insert(&row.patient_id) {
                out.push(row.patient_id.clone());
            }
        }
        out
    }

    /// Contiguous per-patient row slices. Requires a sorted table.
    pub fn patient_slices(&self) -> Result<Vec<(&PatientId, &[EventRecord])>, ModelError> {
        if !self.sorted {
            return Err(ModelError::Unsorted);
        }
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.rows.len() {
            if i == self.rows.len() || self.rows[i].patient_id != self.rows[start].patient_id {
                out.push((&self.rows[start].patient_id, &self.rows[start..i]));
                start = i;
            }
        }
        Ok(out)
    }

    /// Appends derived rows (risk-level or route-view events), invalidating
    /// the sort flag. Rows are validated against the table's track.
    pub fn extend_rows(&mut self, extra: Vec<EventRecord>) -> Result<(), ModelError> {
        for row in &extra {
            validate_record(row, self.track).map_err(|message| ModelError::Row {
                line: 0,
                message,
            })?;
        }
        self.rows.extend(extra);
        self.sorted = false;
        Ok(())
    }

    /// Projects a risk-enriched table onto the plain track by dropping the
    /// enrichment fields.
    pub fn project_without_janusmed(&self) -> EventTable {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.route_of_administration = None;
                r.drug_registration_risk_value = None;
                r
            })
            .collect();
        EventTable {
            rows,
            track: Track::WithoutJanusmed,
            sorted: self.sorted,
        }
    }
}

fn validate_record(row: &EventRecord, track: Track) -> Result<(), String> {
    if let Some(censor) = row.censor_date {
        if row.observation_start_date > censor {
            return Err(format!(
                "OBSERVATION_START_DATE {} after CENSOR_DATE {}",
                row.observation_start_date, censor
            ));
        }
    }
    if row.value_char.is_empty() {
        return Err("empty VALUE_CHAR".to_string());
    }
    if !(1000..=9999).contains(&row.concept_type_id) {
        return Err(format!(
            "EVENT_CONCEPT_TYPE_ID {} is not a 4-digit code",
            row.concept_type_id
        ));
    }
    if track == Track::WithoutJanusmed
        && (row.route_of_administration.is_some() || row.drug_registration_risk_value.is_some())
    {
        return Err("risk-enrichment fields present on the plain track".to_string());
    }
    Ok(())
}

/// Stable sort by (patient id, observation date, concept id, value); rows that
/// tie on the full key keep their input order.
pub fn sort_events(table: EventTable) -> EventTable {
    let EventTable { mut rows, track, .. } = table;
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    EventTable {
        rows,
        track,
        sorted: true,
    }
}

/// Binary outcome label for one patient, anchored at the index date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeLabel {
    pub patient_id: PatientId,
    pub y: bool,
    pub days_to_first_occurrence: Option<u32>,
    pub total_outcomes: u32,
    pub index_date: NaiveDate,
}

impl OutcomeLabel {
    /// `y` is derived, not stored: true iff the first occurrence falls within
    /// the outcome window (day 365 after the index counts as inside).
    pub fn new(
        patient_id: PatientId,
        days_to_first_occurrence: Option<u32>,
        total_outcomes: u32,
        index_date: NaiveDate,
    ) -> Result<Self, ModelError> {
        let y = matches!(days_to_first_occurrence, Some(d) if i64::from(d) <= OUTCOME_WINDOW_DAYS);
        if y && total_outcomes == 0 {
            return Err(ModelError::InvalidLabel {
                patient: patient_id,
                message: "positive label requires TOTAL_OUTCOMES >= 1".to_string(),
            });
        }
        Ok(OutcomeLabel {
            patient_id,
            y,
            days_to_first_occurrence,
            total_outcomes,
            index_date,
        })
    }
}

/// One label per patient; construction rejects duplicates.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutcomeSet {
    labels: BTreeMap<PatientId, OutcomeLabel>,
}

impl OutcomeSet {
    pub fn from_labels(
        labels: impl IntoIterator<Item = OutcomeLabel>,
    ) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        for label in labels {
            let id = label.patient_id.clone();
            if map.insert(id.clone(), label).is_some() {
                return Err(ModelError::DuplicateLabel(id));
            }
        }
        Ok(OutcomeSet { labels: map })
    }

    pub fn get(&self, patient: &PatientId) -> Option<&OutcomeLabel> {
        self.labels.get(patient)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &OutcomeLabel> {
        self.labels.values()
    }

    pub fn positives(&self) -> usize {
        self.labels.values().filter(|l| l.y).count()
    }
}

/// An event table where every row can be resolved to its patient's label.
#[derive(Debug, Clone)]
pub struct LabeledEventTable {
    pub table: EventTable,
    pub outcomes: OutcomeSet,
}

/// Joins labels onto an event table. Every patient in the table must have
/// exactly one label; a missing label is an error, never a silent drop.
pub fn attach_outcomes(
    table: EventTable,
    outcomes: OutcomeSet,
) -> Result<LabeledEventTable, ModelError> {
    for id in table.patient_ids() {
        if outcomes.get(&id).is_none() {
            return Err(ModelError::MissingLabel(id));
        }
    }
    Ok(LabeledEventTable { table, outcomes })
}

impl LabeledEventTable {
    pub fn y_for_row(&self, row: &EventRecord) -> bool {
        self.outcomes
            .get(&row.patient_id)
            .map(|l| l.y)
            .expect("attach_outcomes guarantees a label per patient")
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion / export
// ---------------------------------------------------------------------------

struct HeaderMap {
    idx: Vec<usize>, // position of each expected column in the file
}

fn check_header(header: &csv::StringRecord, track: Track) -> Result<HeaderMap, ModelError> {
    let expected = track_columns(track);
    let present: Vec<&str> = header.iter().collect();
    let missing: Vec<String> = expected
        .iter()
        .filter(|c| !present.contains(c))
        .map(|c| c.to_string())
        .collect();
    let unexpected: Vec<String> = present
        .iter()
        .filter(|c| !expected.contains(c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(ModelError::Schema {
            missing,
            unexpected,
        });
    }
    let idx = expected
        .iter()
        .map(|c| present.iter().position(|p| p == c).unwrap())
        .collect();
    Ok(HeaderMap { idx })
}

fn row_err(line: u64, message: impl Into<String>) -> ModelError {
    ModelError::Row {
        line,
        message: message.into(),
    }
}

fn parse_date(s: &str, line: u64, col: &str) -> Result<NaiveDate, ModelError> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| row_err(line, format!("unparseable date {s:?} in {col}")))
}

fn parse_opt_date(s: &str, line: u64, col: &str) -> Result<Option<NaiveDate>, ModelError> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_date(s, line, col).map(Some)
    }
}

fn parse_u32(s: &str, line: u64, col: &str) -> Result<u32, ModelError> {
    s.parse()
        .map_err(|_| row_err(line, format!("unparseable integer {s:?} in {col}")))
}

/// Reads one track's CSV file into an unsorted, validated table.
pub fn ingest_event_table(path: &Path, track: Track) -> Result<EventTable, ModelError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let map = check_header(reader.headers()?, track)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let record = record?;
        let field = |n: usize| record.get(map.idx[n]).unwrap_or("");

        let patient_id = PatientId::new(field(0));
        if patient_id.as_str().is_empty() {
            return Err(row_err(line, "empty PATIENT_ID"));
        }
        let value_decimal = {
            let s = field(9);
            if s.is_empty() {
                None
            } else {
                let v: f64 = s
                    .parse()
                    .map_err(|_| row_err(line, format!("unparseable number {s:?} in VALUE_DECIMAL")))?;
                if !v.is_finite() {
                    return Err(row_err(line, "non-finite VALUE_DECIMAL"));
                }
                Some(v)
            }
        };
        let (route, risk_value) = if track == Track::WithJanusmed {
            let route_s = field(12);
            let route = Route::parse(route_s)
                .ok_or_else(|| row_err(line, format!("unknown route code {route_s:?}")))?;
            let rv = field(13);
            let risk_value = if rv.is_empty() {
                None
            } else {
                Some(parse_u32(rv, line, "DRUG_REGISTRATION_RISK_VALUE")?)
            };
            (Some(route), risk_value)
        } else {
            (None, None)
        };

        let row = EventRecord {
            patient_id,
            patient_study_age_decade: parse_u32(field(1), line, "PATIENT_STUDY_AGE_DECADE")?,
            concept_type_id: parse_u32(field(2), line, "EVENT_CONCEPT_TYPE_ID")? as u16,
            gender: Gender::parse(field(3))
                .ok_or_else(|| row_err(line, format!("unknown gender {:?}", field(3))))?,
            patient_age_at_observation: parse_u32(field(4), line, "PATIENT_AGE_AT_OBSERVATION")?,
            censor_date: parse_opt_date(field(5), line, "CENSOR_DATE")?,
            drug_use_index_group: parse_u32(field(6), line, "DRUG_USE_INDEX_GROUP")?,
            observation_start_date: parse_date(field(7), line, "OBSERVATION_START_DATE")?,
            value_char: field(8).to_string(),
            value_decimal,
            drug_dosage_form_code: match field(10) {
                "" => None,
                s => Some(s.to_string()),
            },
            drug_substance_id: match field(11) {
                "" => None,
                s => Some(SubstanceId(parse_u32(s, line, "DRUG_SUBSTANS_ID")?)),
            },
            route_of_administration: route,
            drug_registration_risk_value: risk_value,
        };
        validate_record(&row, track).map_err(|message| row_err(line, message))?;
        rows.push(row);
    }
    Ok(EventTable {
        rows,
        track,
        sorted: false,
    })
}

fn fmt_f64(v: f64) -> String {
    // Shortest round-trippable representation; keeps export/ingest bit-equal.
    let mut buf = v.to_string();
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("NaN") {
        buf.push_str(".0");
    }
    buf
}

fn record_fields(row: &EventRecord, track: Track) -> Vec<String> {
    let mut fields = vec![
        row.patient_id.as_str().to_string(),
        row.patient_study_age_decade.to_string(),
        row.concept_type_id.to_string(),
        row.gender.as_str().to_string(),
        row.patient_age_at_observation.to_string(),
        row.censor_date.map(|d| d.to_string()).unwrap_or_default(),
        row.drug_use_index_group.to_string(),
        row.observation_start_date.to_string(),
        row.value_char.clone(),
        row.value_decimal.map(fmt_f64).unwrap_or_default(),
        row.drug_dosage_form_code.clone().unwrap_or_default(),
        row.drug_substance_id
            .map(|s| s.to_string())
            .unwrap_or_default(),
    ];
    if track == Track::WithJanusmed {
        fields.push(
            row.route_of_administration
                .map(|r| r.as_str().to_string())
                .unwrap_or_default(),
        );
        fields.push(
            row.drug_registration_risk_value
                .map(|v| v.to_string())
                .unwrap_or_default(),
        );
    }
    fields
}

/// Writes the table back out with exactly the track's column set.
pub fn export_event_table(table: &EventTable, path: &Path) -> Result<(), ModelError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(track_columns(table.track))?;
    for row in &table.rows {
        writer.write_record(record_fields(row, table.track))?;
    }
    writer.flush()?;
    Ok(())
}

/// JSON export mirroring the CSV schema (one object per row).
pub fn export_event_table_json(table: &EventTable, path: &Path) -> Result<(), ModelError> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, table.rows())
        .map_err(|e| ModelError::Row { line: 0, message: e.to_string() })?;
    Ok(())
}

const OUTCOME_COLUMNS: [&str; 5] = [
    "PATIENT_ID",
    "Y",
    "DAYS_TO_FIRST_OCCURRENCE",
    "TOTAL_OUTCOMES",
    "INDEX_DATE",
];

pub fn ingest_outcomes(path: &Path) -> Result<OutcomeSet, ModelError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<&str> = reader.headers()?.iter().collect();
    if header != OUTCOME_COLUMNS {
        return Err(ModelError::Schema {
            missing: OUTCOME_COLUMNS
                .iter()
                .filter(|c| !header.contains(c))
                .map(|c| c.to_string())
                .collect(),
            unexpected: header
                .iter()
                .filter(|c| !OUTCOME_COLUMNS.contains(c))
                .map(|c| c.to_string())
                .collect(),
        });
    }
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let record = record?;
        let patient_id = PatientId::new(record.get(0).unwrap_or(""));
        let y_field = record.get(1).unwrap_or("");
        let days = match record.get(2).unwrap_or("") {
            "" => None,
            s => Some(parse_u32(s, line, "DAYS_TO_FIRST_OCCURRENCE")?),
        };
        let total = parse_u32(record.get(3).unwrap_or(""), line, "TOTAL_OUTCOMES")?;
        let index_date = parse_date(record.get(4).unwrap_or(""), line, "INDEX_DATE")?;
        let label = OutcomeLabel::new(patient_id.clone(), days, total, index_date)?;
        // The stored Y must agree with the derived one.
        let y_stored = match y_field {
            "0" => false,
            "1" => true,
            other => return Err(row_err(line, format!("unparseable Y {other:?}"))),
        };
        if y_stored != label.y {
            return Err(row_err(
                line,
                format!(
                    "Y={} inconsistent with DAYS_TO_FIRST_OCCURRENCE={:?}",
                    y_field, days
                ),
            ));
        }
        labels.push(label);
    }
    OutcomeSet::from_labels(labels)
}

pub fn export_outcomes(outcomes: &OutcomeSet, path: &Path) -> Result<(), ModelError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(OUTCOME_COLUMNS)?;
    for label in outcomes.iter() {
        writer.write_record([
            label.patient_id.as_str().to_string(),
            if label.y { "1" } else { "0" }.to_string(),
            label
                .days_to_first_occurrence
                .map(|d| d.to_string())
                .unwrap_or_default(),
            label.total_outcomes.to_string(),
            label.index_date.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    pub(crate) fn record(patient: &str, day: &str, concept: u16, value: &str) -> EventRecord {
        EventRecord {
            patient_id: PatientId::new(patient),
            patient_study_age_decade: 6,
            concept_type_id: concept,
            gender: Gender::F,
            patient_age_at_observation: 63,
            censor_date: Some(date("2019-12-31")),
            drug_use_index_group: 2,
            observation_start_date: date(day),
            value_char: value.to_string(),
            value_decimal: None,
            drug_dosage_form_code: None,
            drug_substance_id: None,
            route_of_administration: None,
            drug_registration_risk_value: None,
        }
    }

    fn write_file(dir: &tempfile::TempDir, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn without_header() -> String {
        let mut cols = vec!["PATIENT_ID"];
        cols.extend(WITHOUT_COLUMNS);
        cols.join(",")
    }

    fn with_header() -> String {
        let mut cols = vec!["PATIENT_ID"];
        cols.extend(WITHOUT_COLUMNS);
        cols.extend(JANUSMED_COLUMNS);
        cols.join(",")
    }

    #[test]
    fn thirteen_column_file_on_plain_track_names_both_extras() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "e.csv", &format!("{}\n", with_header()));
        let err = ingest_event_table(&path, Track::WithoutJanusmed).unwrap_err();
        match err {
            ModelError::Schema { missing, unexpected } => {
                assert!(missing.is_empty());
                assert_eq!(
                    unexpected,
                    vec![
                        "ROUTE_OF_ADMINISTRATION_TYPE".to_string(),
                        "DRUG_REGISTRATION_RISK_VALUE".to_string()
                    ]
                );
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_with_valid_header_gives_zero_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "e.csv", &format!("{}\n", without_header()));
        let table = ingest_event_table(&path, Track::WithoutJanusmed).unwrap();
        assert_eq!(table.len(), 0);
    }

    #[test]
    fn three_rows_round_trip_bit_equal() {
        let dir = tempfile::tempdir().unwrap();
        let body = "\
p1,6,2065,F,63,2019-12-31,2,2014-03-01,I499,,,
p1,6,2001,F,63,2019-12-31,2,2014-04-02,C01BD01,2.5,TAB,1003
p2,7,2100,M,71,,1,2015-05-03,I489,,,
";
        let contents = format!("{}\n{}", without_header(), body);
        let path = write_file(&dir, "e.csv", &contents);
        let table = ingest_event_table(&path, Track::WithoutJanusmed).unwrap();
        assert_eq!(table.len(), 3);
        let out = dir.path().join("out.csv");
        export_event_table(&table, &out).unwrap();
        let written = std::fs::read_to_string(&out).unwrap();
        assert_eq!(written, contents);
    }

    #[test]
    fn row_level_error_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let contents = format!(
            "{}\np1,6,2065,F,63,2019-12-31,2,not-a-date,I499,,,\n",
            without_header()
        );
        let path = write_file(&dir, "e.csv", &contents);
        match ingest_event_table(&path, Track::WithoutJanusmed).unwrap_err() {
            ModelError::Row { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("OBSERVATION_START_DATE"), "{message}");
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_route_code_is_value_error() {
        let dir = tempfile::tempdir().unwrap();
        let contents = format!(
            "{}\np1,6,2001,F,63,2019-12-31,2,2014-03-01,C01BD01,,,1003,IV,1\n",
            with_header()
        );
        let path = write_file(&dir, "e.csv", &contents);
        match ingest_event_table(&path, Track::WithJanusmed).unwrap_err() {
            ModelError::Row { message, .. } => assert!(message.contains("route"), "{message}"),
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn sort_orders_by_patient_then_date() {
        let rows = vec![
            record("p2", "2014-01-01", 2065, "I499"),
            record("p1", "2014-01-02", 2065, "I499"),
            record("p1", "2014-01-01", 2065, "I499"),
        ];
        let table = EventTable::new(rows, Track::WithoutJanusmed).unwrap();
        let sorted = sort_events(table);
        let keys: Vec<(&str, NaiveDate)> = sorted
            .rows()
            .iter()
            .map(|r| (r.patient_id.as_str(), r.observation_start_date))
            .collect();
        assert_eq!(
            keys,
            vec![
                ("p1", date("2014-01-01")),
                ("p1", date("2014-01-02")),
                ("p2", date("2014-01-01")),
            ]
        );
        assert!(sorted.is_sorted());
    }

    #[test]
    fn sort_is_stable_on_full_key_ties() {
        let mut a = record("p1", "2014-01-01", 2065, "I499");
        a.value_decimal = Some(1.0);
        let mut b = record("p1", "2014-01-01", 2065, "I499");
        b.value_decimal = Some(2.0);
        let table = EventTable::new(vec![a, b], Track::WithoutJanusmed).unwrap();
        let sorted = sort_events(table);
        assert_eq!(sorted.rows()[0].value_decimal, Some(1.0));
        assert_eq!(sorted.rows()[1].value_decimal, Some(2.0));
    }

    #[test]
    fn sort_matches_reference_sort_on_random_rows() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut rows = Vec::new();
        for i in 0..1000 {
            let p = format!("p{}", rng.random_range(0..50));
            let day = format!("2014-0{}-{:02}", rng.random_range(1..10), rng.random_range(1..29));
            let concept = [2065u16, 2100, 2001][rng.random_range(0..3)];
            let mut r = record(&p, &day, concept, "I499");
            r.value_decimal = Some(i as f64);
            rows.push(r);
        }
        // Reference: independent stable sort of (key, original position) pairs.
        let mut oracle: Vec<(usize, EventRecord)> = rows.iter().cloned().enumerate().collect();
        oracle.sort_by(|(ia, a), (ib, b)| {
            a.sort_key().cmp(&b.sort_key()).then(ia.cmp(ib))
        });
        let sorted = sort_events(EventTable::new(rows, Track::WithoutJanusmed).unwrap());
        for (got, (_, want)) in sorted.rows().iter().zip(oracle.iter()) {
            assert_eq!(got, want);
        }
    }

    #[test]
    fn sorting_is_idempotent() {
        let rows = vec![
            record("p2", "2014-01-01", 2065, "I499"),
            record("p1", "2014-01-02", 2100, "I489"),
            record("p1", "2014-01-01", 2065, "I499"),
        ];
        let once = sort_events(EventTable::new(rows, Track::WithoutJanusmed).unwrap());
        let twice = sort_events(once.clone());
        assert_eq!(once.rows(), twice.rows());
    }

    #[test]
    fn outcome_window_boundary_is_inclusive() {
        let id = PatientId::new("p1");
        let at_365 =
            OutcomeLabel::new(id.clone(), Some(365), 1, date("2015-01-01")).unwrap();
        assert!(at_365.y);
        let at_366 = OutcomeLabel::new(id, Some(366), 1, date("2015-01-01")).unwrap();
        assert!(!at_366.y);
    }

    #[test]
    fn attach_outcomes_requires_label_per_patient() {
        let rows = vec![record("p1", "2014-01-01", 2065, "I499")];
        let table = sort_events(EventTable::new(rows, Track::WithoutJanusmed).unwrap());
        let err = attach_outcomes(table, OutcomeSet::default()).unwrap_err();
        match err {
            ModelError::MissingLabel(p) => assert_eq!(p.as_str(), "p1"),
            other => panic!("expected missing label, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_labels_rejected() {
        let l1 = OutcomeLabel::new(PatientId::new("p1"), None, 0, date("2015-01-01")).unwrap();
        let l2 = OutcomeLabel::new(PatientId::new("p1"), Some(10), 2, date("2015-01-01")).unwrap();
        match OutcomeSet::from_labels([l1, l2]).unwrap_err() {
            ModelError::DuplicateLabel(p) => assert_eq!(p.as_str(), "p1"),
            other => panic!("expected duplicate label, got {other:?}"),
        }
    }

    #[test]
    fn labeled_table_exposes_positive_counts() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            let id = format!("p{i}");
            rows.push(record(&id, "2014-01-01", 2065, "I499"));
            rows.push(record(&id, "2014-02-01", 2100, "I489"));
            let days = if i < 3 { Some(100) } else { None };
            labels.push(
                OutcomeLabel::new(PatientId::new(&id), days, u32::from(i < 3), date("2015-01-01"))
                    .unwrap(),
            );
        }
        let n_rows = rows.len();
        let table = sort_events(EventTable::new(rows, Track::WithoutJanusmed).unwrap());
        let labeled =
            attach_outcomes(table, OutcomeSet::from_labels(labels).unwrap()).unwrap();
        assert_eq!(labeled.table.len(), n_rows); // row-count conservation
        let positive_rows = labeled
            .table
            .rows()
            .iter()
            .filter(|r| labeled.y_for_row(r))
            .count();
        assert_eq!(positive_rows, 6); // 3 positive patients x 2 rows
        let positive_patients: std::collections::HashSet<_> = labeled
            .table
            .rows()
            .iter()
            .filter(|r| labeled.y_for_row(r))
            .map(|r| r.patient_id.clone())
            .collect();
        assert_eq!(positive_patients.len(), 3);
    }

    #[test]
    fn plain_track_projection_drops_enrichment_fields() {
        let mut r = record("p1", "2014-01-01", 2001, "C01BD01");
        r.route_of_administration = Some(Route::Ols);
        r.drug_registration_risk_value = Some(2);
        let table = EventTable::new(vec![r], Track::WithJanusmed).unwrap();
        let plain = table.project_without_janusmed();
        assert_eq!(plain.track(), Track::WithoutJanusmed);
        assert!(plain.rows()[0].route_of_administration.is_none());
        assert!(plain.rows()[0].drug_registration_risk_value.is_none());
    }
}
