//! Per-patient-day medication risk levels over a sliding exposure window.
//!
//! For a given day, the concurrent medications are the distinct non-topical
//! substances dispensed or administered within the preceding window
//! (inclusive at exactly `window` days back). Their risk values are summed
//! and banded into four levels. The daily level sequence is materialized as
//! run-length-compressed risk events (concept 2006, values `RL_0`..`RL_3`).

use crate::model::{EventRecord, EventTable, ModelError, Route, SubstanceId};
use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

/// Concept id of emitted risk-level events.
pub const RISK_CONCEPT_ID: u16 = 2006;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("empty period: {start} after {end}")]
    EmptyPeriod { start: NaiveDate, end: NaiveDate },
    #[error("event table error: {0}")]
    Model(#[from] ModelError),
}

/// Aggregated risk level, ordered L0 < LI < LII < LIII.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskLevel {
    L0,
    LI,
    LII,
    LIII,
}

impl RiskLevel {
    pub fn as_code(self) -> &'static str {
        match self {
            RiskLevel::L0 => "RL_0",
            RiskLevel::LI => "RL_1",
            RiskLevel::LII => "RL_2",
            RiskLevel::LIII => "RL_3",
        }
    }

    pub fn as_number(self) -> u32 {
        match self {
            RiskLevel::L0 => 0,
            RiskLevel::LI => 1,
            RiskLevel::LII => 2,
            RiskLevel::LIII => 3,
        }
    }
}

/// Substance-to-risk-value lookup; unlisted substances carry risk 0.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RiskTable {
    values: BTreeMap<SubstanceId, u32>,
}

impl RiskTable {
    pub fn new(values: impl IntoIterator<Item = (SubstanceId, u32)>) -> Self {
        RiskTable {
            values: values.into_iter().collect(),
        }
    }

    pub fn risk_value(&self, substance: SubstanceId) -> u32 {
        self.values.get(&substance).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (SubstanceId, u32)> + '_ {
        self.values.iter().map(|(s, v)| (*s, *v))
    }

    /// CSV format: `SUBSTANCE_ID,RISK_VALUE` with a header row.
    pub fn from_csv(path: &Path) -> Result<Self, RiskError> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut values = BTreeMap::new();
        for (i, record) in reader.records().enumerate() {
            let line = i as u64 + 2;
            let record = record?;
            let id: u32 = record
                .get(0)
                .unwrap_or("")
                .parse()
                .map_err(|_| RiskError::Row {
                    line,
                    message: "unparseable SUBSTANCE_ID".to_string(),
                })?;
            let value: u32 = record
                .get(1)
                .unwrap_or("")
                .parse()
                .map_err(|_| RiskError::Row {
                    line,
                    message: "unparseable RISK_VALUE".to_string(),
                })?;
            values.insert(SubstanceId(id), value);
        }
        Ok(RiskTable { values })
    }

    pub fn to_csv(&self, path: &Path) -> Result<(), RiskError> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["SUBSTANCE_ID", "RISK_VALUE"])?;
        for (s, v) in &self.values {
            writer.write_record([s.0.to_string(), v.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Exposure look-back length in days, inclusive at the far edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureWindow {
    pub length_days: u32,
}

impl Default for ExposureWindow {
    fn default() -> Self {
        ExposureWindow { length_days: 120 }
    }
}

/// Sum-to-level banding policy. The published aggregation algorithm is not
/// public, so the thresholds are a configurable stand-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskBands {
    pub li_min: u32,
    pub lii_min: u32,
    pub liii_min: u32,
}

impl Default for RiskBands {
    fn default() -> Self {
        RiskBands {
            li_min: 1,
            lii_min: 2,
            liii_min: 3,
        }
    }
}

fn is_medication_event(e: &EventRecord) -> bool {
    e.drug_substance_id.is_some()
}

/// Distinct non-topical substances from medication events within
/// `[day - window, day]`. Set semantics: a substance dispensed twice in the
/// window is counted once.
pub fn concurrent_medications(
    events: &[EventRecord],
    day: NaiveDate,
    window: ExposureWindow,
) -> BTreeSet<SubstanceId> {
    let earliest = day - Days::new(u64::from(window.length_days));
    events
        .iter()
        .filter(|e| is_medication_event(e))
        .filter(|e| e.route_of_administration != Some(Route::Topical))
        .filter(|e| e.observation_start_date >= earliest && e.observation_start_date <= day)
        .filter_map(|e| e.drug_substance_id)
        .collect()
}

/// Sums the set's risk values and bands the total. Adding a substance can
/// never lower the level.
pub fn aggregate_risk(
    substances: &BTreeSet<SubstanceId>,
    table: &RiskTable,
    bands: RiskBands,
) -> RiskLevel {
    let total: u32 = substances.iter().map(|s| table.risk_value(*s)).sum();
    if total >= bands.liii_min {
        RiskLevel::LIII
    } else if total >= bands.lii_min {
        RiskLevel::LII
    } else if total >= bands.li_min {
        RiskLevel::LI
    } else {
        RiskLevel::L0
    }
}

/// One run of consecutive days at the same level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RiskRun {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub level: RiskLevel,
}

/// Daily risk levels for one patient over `[start, end]`, compressed to runs.
///
/// A sweep over window entry/exit breakpoints: a medication event is inside
/// the look-back window of day `d` for `d` in `[event, event + window]`, so
/// the level can only change at event dates and at `event + window + 1`.
pub fn patient_risk_runs(
    events: &[EventRecord],
    start: NaiveDate,
    end: NaiveDate,
    table: &RiskTable,
    window: ExposureWindow,
    bands: RiskBands,
) -> Result<Vec<RiskRun>, RiskError> {
    if start > end {
        return Err(RiskError::EmptyPeriod { start, end });
    }
    // delta per date: substance enters (+1) or leaves (-1) the window.
    let mut deltas: BTreeMap<NaiveDate, Vec<(SubstanceId, i32)>> = BTreeMap::new();
    for e in events {
        if !is_medication_event(e) || e.route_of_administration == Some(Route::Topical) {
            continue;
        }
        let substance = e.drug_substance_id.unwrap();
        let enter = e.observation_start_date;
        let leave = enter + Days::new(u64::from(window.length_days) + 1);
        deltas.entry(enter).or_default().push((substance, 1));
        deltas.entry(leave).or_default().push((substance, -1));
    }

    let mut active: BTreeMap<SubstanceId, u32> = BTreeMap::new();
    let mut total: u32 = 0;
    let apply = |changes: &[(SubstanceId, i32)],
                     active: &mut BTreeMap<SubstanceId, u32>,
                     total: &mut u32| {
        for (substance, delta) in changes {
            let count = active.entry(*substance).or_insert(0);
            if *delta > 0 {
                if *count == 0 {
                    *total += table.risk_value(*substance);
                }
                *count += 1;
            } else {
                *count -= 1;
                if *count == 0 {
                    *total -= table.risk_value(*substance);
                }
            }
        }
    };

    // Bring the window state up to the period start.
    for (date, changes) in deltas.range(..=start) {
        let _ = date;
        apply(changes, &mut active, &mut total);
    }
    let band = |total: u32| {
        let set_total = total; // already the sum over distinct active substances
        if set_total >= bands.liii_min {
            RiskLevel::LIII
        } else if set_total >= bands.lii_min {
            RiskLevel::LII
        } else if set_total >= bands.li_min {
            RiskLevel::LI
        } else {
            RiskLevel::L0
        }
    };

    let mut runs: Vec<RiskRun> = Vec::new();
    let mut current_level = band(total);
    let mut run_start = start;
    for (date, changes) in deltas.range((
        std::ops::Bound::Excluded(start),
        std::ops::Bound::Included(end),
    )) {
        apply(changes, &mut active, &mut total);
        let level = band(total);
        if level != current_level {
            runs.push(RiskRun {
                start: run_start,
                end: *date - Days::new(1),
                level: current_level,
            });
            current_level = level;
            run_start = *date;
        }
    }
    runs.push(RiskRun {
        start: run_start,
        end,
        level: current_level,
    });
    Ok(runs)
}

/// Emits run-length-compressed risk events (concept 2006) for every patient
/// in a sorted table. Each patient's period is clamped to their censor date
/// so no event postdates censoring.
pub fn annotate_daily_risk(
    table: &EventTable,
    period_start: NaiveDate,
    period_end: NaiveDate,
    risk_table: &RiskTable,
    window: ExposureWindow,
    bands: RiskBands,
) -> Result<Vec<EventRecord>, RiskError> {
    if period_start > period_end {
        return Err(RiskError::EmptyPeriod {
            start: period_start,
            end: period_end,
        });
    }
    let mut out = Vec::new();
    for (_, events) in table.patient_slices()? {
        let template = &events[0];
        let end = match template.censor_date {
            Some(censor) => censor.min(period_end),
            None => period_end,
        };
        if period_start > end {
            continue;
        }
        let runs = patient_risk_runs(events, period_start, end, risk_table, window, bands)?;
        for run in runs {
            out.push(EventRecord {
                patient_id: template.patient_id.clone(),
                patient_study_age_decade: template.patient_study_age_decade,
                concept_type_id: RISK_CONCEPT_ID,
                gender: template.gender,
                patient_age_at_observation: age_at(events, run.start),
                censor_date: template.censor_date,
                drug_use_index_group: template.drug_use_index_group,
                observation_start_date: run.start,
                value_char: run.level.as_code().to_string(),
                value_decimal: Some(f64::from(run.level.as_number())),
                drug_dosage_form_code: None,
                drug_substance_id: None,
                route_of_administration: if table.track() == crate::model::Track::WithJanusmed {
                    Some(Route::Missing)
                } else {
                    None
                },
                drug_registration_risk_value: None,
            });
        }
    }
    Ok(out)
}

/// Patient age at `day`, interpolated from the nearest observed event age.
fn age_at(events: &[EventRecord], day: NaiveDate) -> u32 {
    let nearest = events
        .iter()
        .min_by_key(|e| (e.observation_start_date - day).num_days().abs())
        .expect("patient slices are non-empty");
    let shift_years = (day - nearest.observation_start_date).num_days() / 365;
    nearest
        .patient_age_at_observation
        .saturating_add_signed(shift_years as i32)
}
