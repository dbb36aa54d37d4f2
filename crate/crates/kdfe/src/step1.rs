//! Step one: iterative generation of compound event features.
//!
//! Sub-processes run in a configured order. Each one proposes candidate
//! features (built from observed events or from earlier survivors), candidates
//! are ranked by patient coverage, and only the top `limit` survive (plus
//! everything tied with the coverage at the cutoff rank). Survivor values are
//! materialized as event rows in the step-one feature set; the catalog keeps
//! every survivor's definition, provenance, and value statistics.

use crate::dsl::{
    self, evaluate_feature, matching_events, parse_feature_code, render_feature_code, FeatureExpr,
    OpCode, Registry, Term,
};
use crate::model::{EventRecord, EventTable, ModelError, OutcomeSet, PatientId};
use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Step1Error {
    #[error("step one requires a sorted event table")]
    Unsorted,
    #[error("patient {0} has events but no outcome label")]
    MissingLabel(PatientId),
    #[error("dsl error: {0}")]
    Dsl(#[from] dsl::DslError),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("catalog error: {0}")]
    Catalog(String),
}

/// The candidate-generating sub-processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubprocessKind {
    /// One indicator per observed concept=value, plus wildcard (`=ALL`),
    /// umbrella-concept, and hierarchy-prefix variants.
    Selectors,
    /// Append `1070` to indicator survivors.
    Counts,
    /// Append `1040` to indicator survivors.
    Presence,
    /// Append `1060-1033` to indicator survivors.
    DaysToReference,
    /// For ordered indicator pairs (a, b): `a-1060-b-1050-1030`.
    PairwiseGaps,
}

impl SubprocessKind {
    pub const DEFAULT_ORDER: [SubprocessKind; 5] = [
        SubprocessKind::Selectors,
        SubprocessKind::Counts,
        SubprocessKind::Presence,
        SubprocessKind::DaysToReference,
        SubprocessKind::PairwiseGaps,
    ];
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Step1Config {
    pub limit: usize,
    pub order: Vec<SubprocessKind>,
}

impl Default for Step1Config {
    fn default() -> Self {
        Step1Config {
            limit: 200,
            order: SubprocessKind::DEFAULT_ORDER.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataType {
    Decimal,
    Character,
    Date,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureDefinition {
    pub feature_id: u32,
    /// Rendered feature code (the parse of `code` is the expression).
    pub code: String,
    pub generation: u32,
    pub parent_ids: Vec<u32>,
    pub elementary_count: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeatureMetadata {
    pub feature_id: u32,
    pub value_mean: Option<f64>,
    pub value_std: Option<f64>,
    pub coverage: f64,
    pub data_type: DataType,
}

/// One materialized feature value (the step-one analogue of an event row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AkdfeRow {
    pub patient_id: PatientId,
    pub feature_id: u32,
    pub gender: crate::model::Gender,
    pub patient_age_at_observation: u32,
    pub censor_date: Option<NaiveDate>,
    pub observation_start_date: NaiveDate,
    pub value_char: Option<String>,
    pub value_decimal: Option<f64>,
}

impl AkdfeRow {
    fn sort_key(&self) -> (&PatientId, NaiveDate, u32, &str) {
        (
            &self.patient_id,
            self.observation_start_date,
            self.feature_id,
            self.value_char.as_deref().unwrap_or(""),
        )
    }
}

/// The step-one output: materialized rows plus the feature catalog.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventAkdfeFeatureSet {
    pub rows: Vec<AkdfeRow>,
    pub definitions: Vec<FeatureDefinition>,
    pub metadata: Vec<FeatureMetadata>,
    pub cohort_size: usize,
}

impl EventAkdfeFeatureSet {
    pub fn definition(&self, feature_id: u32) -> Option<&FeatureDefinition> {
        self.definitions.iter().find(|d| d.feature_id == feature_id)
    }
}

/// Sample mean/std (n-1 denominator, std 0 for a single value) and patient
/// coverage over the full cohort.
pub fn extract_metadata(
    feature_id: u32,
    values: &[f64],
    covered_patients: usize,
    cohort_size: usize,
    data_type: DataType,
) -> FeatureMetadata {
    let coverage = if cohort_size == 0 {
        0.0
    } else {
        covered_patients as f64 / cohort_size as f64
    };
    if values.is_empty() {
        return FeatureMetadata {
            feature_id,
            value_mean: None,
            value_std: None,
            coverage,
            data_type,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    FeatureMetadata {
        feature_id,
        value_mean: Some(mean),
        value_std: Some(std),
        coverage,
        data_type,
    }
}

// ---------------------------------------------------------------------------
// Candidates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Candidate {
    pub expr: FeatureExpr,
    pub parent_ids: Vec<u32>,
    pub elementary_count: usize,
    pub data_type: DataType,
}

fn selector_expr(hierarchy_level: Option<u32>, concept_id: u16, value: &str) -> FeatureExpr {
    let terms = vec![Term::Selector {
        hierarchy_level,
        concept_id,
        value: value.to_string(),
    }];
    let mut expr = FeatureExpr {
        terms,
        source_text: String::new(),
    };
    expr.source_text = render_feature_code(&expr);
    expr
}

fn append_ops(base: &FeatureExpr, ops: &[OpCode]) -> FeatureExpr {
    let mut terms = base.terms.clone();
    terms.extend(ops.iter().map(|op| Term::Operator(*op)));
    let mut expr = FeatureExpr {
        terms,
        source_text: String::new(),
    };
    expr.source_text = render_feature_code(&expr);
    expr
}

fn join_pair(a: &FeatureExpr, b: &FeatureExpr) -> FeatureExpr {
    let mut terms = a.terms.clone();
    terms.push(Term::Operator(OpCode::LastEvent));
    terms.extend(b.terms.iter().cloned());
    terms.push(Term::Operator(OpCode::FirstEvent));
    terms.push(Term::Operator(OpCode::DaysBetween));
    let mut expr = FeatureExpr {
        terms,
        source_text: String::new(),
    };
    expr.source_text = render_feature_code(&expr);
    expr
}

/// Generates the stage's candidates. `indicator_survivors` are the
/// accumulated bare-selector survivors from earlier stages (with catalog ids).
pub fn run_subprocess(
    kind: SubprocessKind,
    table: &EventTable,
    registry: &Registry,
    indicator_survivors: &[(u32, FeatureExpr, usize)],
) -> Vec<Candidate> {
    match kind {
        SubprocessKind::Selectors => {
            let mut seen = BTreeSet::new();
            let mut out = Vec::new();
            let mut push = |level: Option<u32>, concept: u16, value: &str, out: &mut Vec<Candidate>| {
                let expr = selector_expr(level, concept, value);
                if seen.insert(expr.source_text.clone()) {
                    out.push(Candidate {
                        expr,
                        parent_ids: Vec::new(),
                        elementary_count: 1,
                        data_type: DataType::Character,
                    });
                }
            };
            // Observed (concept, value) pairs in deterministic order.
            let mut observed: BTreeSet<(u16, &str)> = BTreeSet::new();
            for row in table.rows() {
                observed.insert((row.concept_type_id, row.value_char.as_str()));
            }
            for (concept, value) in observed {
                let mut scopes = vec![concept];
                scopes.extend(registry.umbrellas_of(concept));
                scopes.sort_unstable();
                scopes.dedup();
                for scope in scopes {
                    push(None, scope, value, &mut out);
                    push(None, scope, "ALL", &mut out);
                    if let Some(len) = registry.level_prefix(scope, 0) {
                        if value.len() >= len && registry.concept(scope).map_or(false, |c| !c.level_prefix_lengths.is_empty()) {
                            push(Some(0), scope, &value[..len], &mut out);
                        }
                    }
                }
            }
            out
        }
        SubprocessKind::Counts => indicator_survivors
            .iter()
            .map(|(id, expr, elem)| Candidate {
                expr: append_ops(expr, &[OpCode::CountObservations]),
                parent_ids: vec![*id],
                elementary_count: *elem,
                data_type: DataType::Decimal,
            })
            .collect(),
        SubprocessKind::Presence => indicator_survivors
            .iter()
            .map(|(id, expr, elem)| Candidate {
                expr: append_ops(expr, &[OpCode::HaveObservation]),
                parent_ids: vec![*id],
                elementary_count: *elem,
                data_type: DataType::Decimal,
            })
            .collect(),
        SubprocessKind::DaysToReference => indicator_survivors
            .iter()
            .map(|(id, expr, elem)| Candidate {
                expr: append_ops(expr, &[OpCode::LastEvent, OpCode::DaysBeforeDate]),
                parent_ids: vec![*id],
                elementary_count: *elem,
                data_type: DataType::Decimal,
            })
            .collect(),
        SubprocessKind::PairwiseGaps => {
            let mut out = Vec::new();
            for (a_id, a_expr, a_elem) in indicator_survivors {
                for (b_id, b_expr, b_elem) in indicator_survivors {
                    if a_id == b_id {
                        continue;
                    }
                    out.push(Candidate {
                        expr: join_pair(a_expr, b_expr),
                        parent_ids: vec![*a_id, *b_id],
                        elementary_count: a_elem + b_elem,
                        data_type: DataType::Decimal,
                    });
                }
            }
            out
        }
    }
}

// ---------------------------------------------------------------------------
// Coverage ranking
// ---------------------------------------------------------------------------

/// Indices of the top-`limit` candidates by coverage (descending), keeping
/// every candidate tied with the coverage at the cutoff rank. Ties elsewhere
/// break by candidate order for determinism.
pub fn coverage_rank_select(coverages: &[f64], limit: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..coverages.len()).collect();
    order.sort_by(|&a, &b| {
        coverages[b]
            .partial_cmp(&coverages[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    if order.len() <= limit || limit == 0 {
        if limit == 0 {
            order.truncate(0);
        }
        return order;
    }
    let cutoff = coverages[order[limit - 1]];
    let mut end = limit;
    while end < order.len() && coverages[order[end]] == cutoff {
        end += 1;
    }
    order.truncate(end);
    order
}

// ---------------------------------------------------------------------------
// Stage statistics (fast paths for ranking; materialization goes through the
// DSL evaluator, and the equivalence is covered by tests)
// ---------------------------------------------------------------------------

struct PatientView<'a> {
    id: &'a PatientId,
    events: &'a [EventRecord],
    index_date: NaiveDate,
}

#[derive(Clone, Copy, Default)]
struct IndicatorStat {
    count: u32,
    first: Option<NaiveDate>,
    last: Option<NaiveDate>,
}

struct CandidateStats {
    coverage: Vec<f64>,
    metadata: Vec<(Option<f64>, Option<f64>, usize)>, // mean, std, covered
}

fn selector_of(expr: &FeatureExpr) -> (&Option<u32>, u16, &str) {
    match &expr.terms[0] {
        Term::Selector {
            hierarchy_level,
            concept_id,
            value,
        } => (hierarchy_level, *concept_id, value),
        Term::Operator(_) => unreachable!("indicator exprs start with a selector"),
    }
}

fn indicator_matches(
    registry: &Registry,
    level: &Option<u32>,
    concept: u16,
    value: &str,
    event: &EventRecord,
) -> bool {
    if !registry.concept_matches(concept, event.concept_type_id) {
        return false;
    }
    if value == "ALL" {
        return true;
    }
    match level {
        None => event.value_char == value,
        Some(l) => registry
            .level_prefix(concept, *l)
            .map_or(false, |len| {
                event.value_char.len() >= len && event.value_char[..len] == *value
            }),
    }
}

/// Per-patient (count, first date, last date) for each indicator expression.
fn indicator_stats(
    patients: &[PatientView<'_>],
    indicators: &[&FeatureExpr],
    registry: &Registry,
) -> Vec<Vec<IndicatorStat>> {
    patients
        .par_iter()
        .map(|patient| {
            let mut stats = vec![IndicatorStat::default(); indicators.len()];
            for event in patient.events {
                for (i, expr) in indicators.iter().enumerate() {
                    let (level, concept, value) = selector_of(expr);
                    if indicator_matches(registry, level, concept, value, event) {
                        let s = &mut stats[i];
                        s.count += 1;
                        if s.first.is_none() {
                            s.first = Some(event.observation_start_date);
                        }
                        s.last = Some(event.observation_start_date);
                    }
                }
            }
            stats
        })
        .collect()
}

struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
    covered: usize,
}

impl Welford {
    fn new() -> Self {
        Welford {
            n: 0.0,
            mean: 0.0,
            m2: 0.0,
            covered: 0,
        }
    }

    fn push_patient(&mut self, values_sum: f64, values_n: u32) {
        if values_n == 0 {
            return;
        }
        self.covered += 1;
        // Indicator features contribute one value per matching event; all are
        // 1.0, so pushing the aggregate keeps mean/std exact.
        for _ in 0..values_n {
            let v = values_sum / f64::from(values_n);
            self.n += 1.0;
            let delta = v - self.mean;
            self.mean += delta / self.n;
            self.m2 += delta * (v - self.mean);
        }
    }

    fn push_value(&mut self, v: f64) {
        self.covered += 1;
        self.n += 1.0;
        let delta = v - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (v - self.mean);
    }

    fn finish(&self, cohort: usize) -> (f64, (Option<f64>, Option<f64>, usize)) {
        let coverage = if cohort == 0 {
            0.0
        } else {
            self.covered as f64 / cohort as f64
        };
        if self.n == 0.0 {
            return (coverage, (None, None, self.covered));
        }
        let std = if self.n < 2.0 {
            0.0
        } else {
            (self.m2 / (self.n - 1.0)).sqrt()
        };
        (coverage, (Some(self.mean), Some(std), self.covered))
    }
}

fn stage_stats(
    kind: SubprocessKind,
    candidates: &[Candidate],
    patients: &[PatientView<'_>],
    registry: &Registry,
    cohort_size: usize,
) -> CandidateStats {
    let accumulate: Vec<Welford> = match kind {
        SubprocessKind::Selectors => {
            let exprs: Vec<&FeatureExpr> = candidates.iter().map(|c| &c.expr).collect();
            let stats = indicator_stats(patients, &exprs, registry);
            let mut acc: Vec<Welford> = (0..candidates.len()).map(|_| Welford::new()).collect();
            for patient_stats in &stats {
                for (i, s) in patient_stats.iter().enumerate() {
                    acc[i].push_patient(f64::from(s.count), s.count);
                }
            }
            acc
        }
        SubprocessKind::Counts | SubprocessKind::Presence | SubprocessKind::DaysToReference => {
            let parents: Vec<&FeatureExpr> = candidates
                .iter()
                .map(|c| {
                    // Strip the appended operator terms to recover the parent
                    // indicator for the fast path.
                    &c.expr
                })
                .collect();
            // The parent selector is the expression's first (only) selector.
            let stats = indicator_stats(patients, &parents, registry);
            let mut acc: Vec<Welford> = (0..candidates.len()).map(|_| Welford::new()).collect();
            for (patient, patient_stats) in patients.iter().zip(&stats) {
                for (i, s) in patient_stats.iter().enumerate() {
                    if s.count == 0 {
                        continue;
                    }
                    let value = match kind {
                        SubprocessKind::Counts => f64::from(s.count),
                        SubprocessKind::Presence => 1.0,
                        SubprocessKind::DaysToReference => {
                            (patient.index_date - s.last.unwrap()).num_days().abs() as f64
                        }
                        _ => unreachable!(),
                    };
                    acc[i].push_value(value);
                }
            }
            acc
        }
        SubprocessKind::PairwiseGaps => {
            // Distinct parent indicators, then O(1) per pair per patient.
            let mut parent_exprs: Vec<FeatureExpr> = Vec::new();
            let mut parent_index: HashMap<String, usize> = HashMap::new();
            let mut pair_of: Vec<(usize, usize)> = Vec::with_capacity(candidates.len());
            for c in candidates {
                let (a, b) = split_pair(&c.expr);
                let ai = *parent_index.entry(a.source_text.clone()).or_insert_with(|| {
                    parent_exprs.push(a.clone());
                    parent_exprs.len() - 1
                });
                let bi = *parent_index.entry(b.source_text.clone()).or_insert_with(|| {
                    parent_exprs.push(b.clone());
                    parent_exprs.len() - 1
                });
                pair_of.push((ai, bi));
            }
            let refs: Vec<&FeatureExpr> = parent_exprs.iter().collect();
            let stats = indicator_stats(patients, &refs, registry);
            let accs: Vec<Welford> = pair_of
                .par_iter()
                .map(|(ai, bi)| {
                    let mut acc = Welford::new();
                    for patient_stats in &stats {
                        let (a, b) = (&patient_stats[*ai], &patient_stats[*bi]);
                        if let (Some(last_a), Some(first_b)) = (a.last, b.first) {
                            acc.push_value((last_a - first_b).num_days().abs() as f64);
                        }
                    }
                    acc
                })
                .collect();
            accs
        }
    };
    let mut coverage = Vec::with_capacity(candidates.len());
    let mut metadata = Vec::with_capacity(candidates.len());
    for acc in accumulate {
        let (cov, meta) = acc.finish(cohort_size);
        coverage.push(cov);
        metadata.push(meta);
    }
    CandidateStats { coverage, metadata }
}

/// Splits a pairwise-gap expression `a-1060-b-1050-1030` into (a, b).
fn split_pair(expr: &FeatureExpr) -> (FeatureExpr, FeatureExpr) {
    let reducer_pos = expr
        .terms
        .iter()
        .position(|t| matches!(t, Term::Operator(op) if op.is_reducer()))
        .expect("pair expressions contain a reducer");
    let a_terms = expr.terms[..reducer_pos].to_vec();
    let b_terms = expr.terms[reducer_pos + 1..expr.terms.len() - 2].to_vec();
    let mk = |terms: Vec<Term>| {
        let mut e = FeatureExpr {
            terms,
            source_text: String::new(),
        };
        e.source_text = render_feature_code(&e);
        e
    };
    (mk(a_terms), mk(b_terms))
}

// ---------------------------------------------------------------------------
// The step-one pipeline
// ---------------------------------------------------------------------------

/// Runs the configured sub-process sequence over a sorted event table.
///
/// Survivors accumulate across stages; stages that build on indicators draw
/// from the accumulated indicator survivors. An empty candidate or survivor
/// set logs a warning and the pipeline continues.
pub fn run_step1(
    table: &EventTable,
    outcomes: &OutcomeSet,
    registry: &Registry,
    cfg: &Step1Config,
) -> Result<EventAkdfeFeatureSet, Step1Error> {
    if !table.is_sorted() {
        return Err(Step1Error::Unsorted);
    }
    let cohort_size = outcomes.len();
    let patients: Vec<PatientView<'_>> = table
        .patient_slices()?
        .into_iter()
        .map(|(id, events)| {
            let index_date = outcomes
                .get(id)
                .map(|l| l.index_date)
                .ok_or_else(|| Step1Error::MissingLabel(id.clone()))?;
            Ok(PatientView {
                id,
                events,
                index_date,
            })
        })
        .collect::<Result<_, Step1Error>>()?;

    let mut definitions: Vec<FeatureDefinition> = Vec::new();
    let mut metadata: Vec<FeatureMetadata> = Vec::new();
    let mut rows: Vec<AkdfeRow> = Vec::new();
    let mut known_codes: BTreeSet<String> = BTreeSet::new();
    // (feature id, expr, elementary count) of indicator survivors so far.
    let mut indicator_survivors: Vec<(u32, FeatureExpr, usize)> = Vec::new();
    let mut next_feature_id: u32 = 1;

    for (stage_idx, kind) in cfg.order.iter().enumerate() {
        let generation = stage_idx as u32 + 1;
        let mut candidates = run_subprocess(*kind, table, registry, &indicator_survivors);
        candidates.retain(|c| !known_codes.contains(&c.expr.source_text));
        if candidates.is_empty() {
            log::warn!("sub-process {kind:?} generated no new candidates; continuing");
            continue;
        }
        let stats = stage_stats(*kind, &candidates, &patients, registry, cohort_size);
        let selected = coverage_rank_select(&stats.coverage, cfg.limit);
        if selected.is_empty() {
            log::warn!("sub-process {kind:?} selected no survivors; continuing");
            continue;
        }
        // Keep candidate order deterministic in the catalog.
        let mut selected = selected;
        selected.sort_unstable();
        for idx in selected {
            let candidate = &candidates[idx];
            let feature_id = next_feature_id;
            next_feature_id += 1;
            known_codes.insert(candidate.expr.source_text.clone());
            let (mean, std, covered) = stats.metadata[idx];
            let meta = FeatureMetadata {
                feature_id,
                value_mean: mean,
                value_std: std,
                coverage: stats.coverage[idx],
                data_type: candidate.data_type,
            };
            debug_assert_eq!(
                covered as f64 / cohort_size.max(1) as f64,
                stats.coverage[idx]
            );
            metadata.push(meta);
            rows.extend(materialize(
                feature_id,
                &candidate.expr,
                &patients,
                registry,
            )?);
            if candidate.expr.is_indicator() {
                indicator_survivors.push((
                    feature_id,
                    candidate.expr.clone(),
                    candidate.elementary_count,
                ));
            }
            definitions.push(FeatureDefinition {
                feature_id,
                code: candidate.expr.source_text.clone(),
                generation,
                parent_ids: candidate.parent_ids.clone(),
                elementary_count: candidate.elementary_count,
            });
        }
    }

    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(EventAkdfeFeatureSet {
        rows,
        definitions,
        metadata,
        cohort_size,
    })
}

/// Materializes one feature's values as rows, via the DSL evaluator.
fn materialize(
    feature_id: u32,
    expr: &FeatureExpr,
    patients: &[PatientView<'_>],
    registry: &Registry,
) -> Result<Vec<AkdfeRow>, Step1Error> {
    let per_patient: Vec<Vec<AkdfeRow>> = patients
        .par_iter()
        .map(|patient| -> Result<Vec<AkdfeRow>, Step1Error> {
            let mut out = Vec::new();
            if expr.is_indicator() {
                for event in matching_events(expr, patient.events, registry) {
                    out.push(AkdfeRow {
                        patient_id: patient.id.clone(),
                        feature_id,
                        gender: event.gender,
                        patient_age_at_observation: event.patient_age_at_observation,
                        censor_date: event.censor_date,
                        observation_start_date: event.observation_start_date,
                        value_char: Some(event.value_char.clone()),
                        value_decimal: Some(1.0),
                    });
                }
            } else {
                let outcome =
                    evaluate_feature(expr, patient.events, patient.index_date, registry)?;
                if let (Some(value), Some(as_of)) = (outcome.value, outcome.as_of) {
                    out.push(AkdfeRow {
                        patient_id: patient.id.clone(),
                        feature_id,
                        gender: as_of.gender,
                        patient_age_at_observation: as_of.patient_age_at_observation,
                        censor_date: as_of.censor_date,
                        observation_start_date: as_of.observation_start_date,
                        value_char: None,
                        value_decimal: Some(value),
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_, Step1Error>>()?;
    Ok(per_patient.into_iter().flatten().collect())
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

const ROW_COLUMNS: [&str; 8] = [
    "PATIENT_ID",
    "FEATURE_ID",
    "GENDER",
    "PATIENT_AGE_AT_OBSERVATION",
    "CENSOR_DATE",
    "OBSERVATION_START_DATE",
    "VALUE_CHAR",
    "VALUE_DECIMAL",
];

pub fn export_feature_set_csv(set: &EventAkdfeFeatureSet, path: &Path) -> Result<(), Step1Error> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(ROW_COLUMNS)?;
    for row in &set.rows {
        writer.write_record([
            row.patient_id.as_str().to_string(),
            row.feature_id.to_string(),
            row.gender.as_str().to_string(),
            row.patient_age_at_observation.to_string(),
            row.censor_date.map(|d| d.to_string()).unwrap_or_default(),
            row.observation_start_date.to_string(),
            row.value_char.clone().unwrap_or_default(),
            row.value_decimal.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogEntry {
    feature_id: u32,
    code: String,
    generation: u32,
    parent_ids: Vec<u32>,
    elementary_count: usize,
    metadata: FeatureMetadata,
}

/// Catalog JSON: id, code text, generation, parents, and value statistics.
pub fn export_catalog_json(set: &EventAkdfeFeatureSet, path: &Path) -> Result<(), Step1Error> {
    let by_id: BTreeMap<u32, &FeatureMetadata> =
        set.metadata.iter().map(|m| (m.feature_id, m)).collect();
    let entries: Vec<CatalogEntry> = set
        .definitions
        .iter()
        .map(|d| {
            let meta = by_id
                .get(&d.feature_id)
                .ok_or_else(|| Step1Error::Catalog(format!("no metadata for {}", d.feature_id)))?;
            Ok(CatalogEntry {
                feature_id: d.feature_id,
                code: d.code.clone(),
                generation: d.generation,
                parent_ids: d.parent_ids.clone(),
                elementary_count: d.elementary_count,
                metadata: **meta,
            })
        })
        .collect::<Result<_, Step1Error>>()?;
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, &entries)
        .map_err(|e| Step1Error::Catalog(e.to_string()))?;
    Ok(())
}

/// Validates catalog internal consistency: parents resolve inside the catalog
/// and elementary counts equal the selector-term counts.
pub fn validate_catalog(set: &EventAkdfeFeatureSet) -> Result<(), Step1Error> {
    let ids: BTreeSet<u32> = set.definitions.iter().map(|d| d.feature_id).collect();
    for def in &set.definitions {
        for parent in &def.parent_ids {
            if !ids.contains(parent) {
                return Err(Step1Error::Catalog(format!(
                    "feature {} references unknown parent {}",
                    def.feature_id, parent
                )));
            }
        }
        let expr = parse_feature_code(&def.code)?;
        if expr.selector_count() != def.elementary_count {
            return Err(Step1Error::Catalog(format!(
                "feature {} elementary_count {} != selector terms {}",
                def.feature_id,
                def.elementary_count,
                expr.selector_count()
            )));
        }
    }
    for row in &set.rows {
        if !ids.contains(&row.feature_id) {
            return Err(Step1Error::Catalog(format!(
                "row references unknown feature {}",
                row.feature_id
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sort_events, EventTable, Gender, OutcomeLabel, Track};
    use crate::synth::{generate_cohort, generate_events, EventRateConfig, SynthConfig};

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn event(patient: &str, day: &str, concept: u16, value: &str) -> EventRecord {
        EventRecord {
            patient_id: PatientId::new(patient),
            patient_study_age_decade: 6,
            concept_type_id: concept,
            gender: Gender::F,
            patient_age_at_observation: 63,
            censor_date: None,
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

    fn outcome(patient: &str) -> OutcomeLabel {
        OutcomeLabel::new(PatientId::new(patient), None, 0, date("2015-01-01")).unwrap()
    }

    #[test]
    fn selectors_include_exact_and_hierarchy_codes() {
        let table = sort_events(
            EventTable::new(
                vec![
                    event("p1", "2014-01-01", 2065, "I499"),
                    event("p1", "2014-02-01", 2101, "I48"),
                ],
                Track::WithoutJanusmed,
            )
            .unwrap(),
        );
        let registry = Registry::default();
        let candidates = run_subprocess(SubprocessKind::Selectors, &table, &registry, &[]);
        let codes: BTreeSet<&str> = candidates
            .iter()
            .map(|c| c.expr.source_text.as_str())
            .collect();
        assert!(codes.contains("2065=I499"), "{codes:?}");
        assert!(codes.contains("H0_2065=I49"), "{codes:?}");
        assert!(codes.contains("2100=I499")); // umbrella with exact value
        assert!(codes.contains("2105=ALL"));
        assert!(codes.contains("2101=I48"));
    }

    #[test]
    fn counts_over_one_selector_yields_one_candidate() {
        let table = sort_events(
            EventTable::new(
                vec![event("p1", "2014-01-01", 2065, "I499")],
                Track::WithoutJanusmed,
            )
            .unwrap(),
        );
        let registry = Registry::default();
        let survivors = vec![(1u32, selector_expr(None, 2065, "I499"), 1usize)];
        let candidates = run_subprocess(SubprocessKind::Counts, &table, &registry, &survivors);
        assert_eq!(candidates.len(), 1);
        assert_eq!(candidates[0].expr.source_text, "2065=I499-1070");
        assert_eq!(candidates[0].parent_ids, vec![1]);
    }

    #[test]
    fn pairwise_gaps_candidate_count_is_bounded_by_ordered_pairs() {
        let table = sort_events(
            EventTable::new(
                vec![event("p1", "2014-01-01", 2065, "I499")],
                Track::WithoutJanusmed,
            )
            .unwrap(),
        );
        let registry = Registry::default();
        for k in [2usize, 3, 5] {
            let survivors: Vec<(u32, FeatureExpr, usize)> = (0..k)
                .map(|i| {
                    (
                        i as u32 + 1,
                        selector_expr(None, 2110, &format!("V{i}")),
                        1,
                    )
                })
                .collect();
            let candidates =
                run_subprocess(SubprocessKind::PairwiseGaps, &table, &registry, &survivors);
            assert!(candidates.len() <= k * (k - 1));
            assert_eq!(candidates.len(), k * (k - 1)); // one variant per ordered pair
            let example = &candidates[0].expr.source_text;
            assert!(example.contains("-1060-") && example.ends_with("-1050-1030"), "{example}");
        }
    }

    #[test]
    fn coverage_selection_keeps_cutoff_ties() {
        let selected = coverage_rank_select(&[0.9, 0.5, 0.5], 2);
        assert_eq!(selected.len(), 3);
    }

    #[test]
    fn coverage_selection_keeps_all_when_fewer_than_limit() {
        let coverages: Vec<f64> = (0..150).map(|i| i as f64 / 150.0).collect();
        assert_eq!(coverage_rank_select(&coverages, 200).len(), 150);
    }

    #[test]
    fn coverage_selection_exact_limit_with_distinct_coverages() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let mut coverages: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        // Shuffle so input order is not the rank order.
        for i in (1..coverages.len()).rev() {
            coverages.swap(i, rng.random_range(0..=i));
        }
        let selected = coverage_rank_select(&coverages, 200);
        assert_eq!(selected.len(), 200);
        let min_selected = selected
            .iter()
            .map(|&i| coverages[i])
            .fold(f64::INFINITY, f64::min);
        let max_rejected = (0..coverages.len())
            .filter(|i| !selected.contains(i))
            .map(|i| coverages[i])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(min_selected > max_rejected);
    }

    #[test]
    fn metadata_hand_computed() {
        let meta = extract_metadata(1, &[2.0, 4.0], 2, 4, DataType::Decimal);
        assert_eq!(meta.value_mean, Some(3.0));
        // Sample std, n-1 denominator: sqrt(((2-3)^2 + (4-3)^2) / 1) = sqrt(2).
        assert_eq!(meta.value_std, Some(2.0f64.sqrt()));
        assert_eq!(meta.coverage, 0.5);
    }

    #[test]
    fn metadata_no_values() {
        let meta = extract_metadata(1, &[], 0, 4, DataType::Decimal);
        assert!(meta.value_mean.is_none());
        assert!(meta.value_std.is_none());
        assert_eq!(meta.coverage, 0.0);
    }

    #[test]
    fn metadata_full_coverage() {
        let meta = extract_metadata(1, &[1.0, 1.0, 1.0, 1.0], 4, 4, DataType::Character);
        assert_eq!(meta.coverage, 1.0);
    }

    fn single_patient_setup() -> (EventTable, OutcomeSet) {
        let table = sort_events(
            EventTable::new(
                vec![
                    event("p1", "2014-01-01", 2065, "I499"),
                    event("p1", "2014-02-01", 2110, "I109"),
                ],
                Track::WithoutJanusmed,
            )
            .unwrap(),
        );
        let outcomes = OutcomeSet::from_labels([outcome("p1")]).unwrap();
        (table, outcomes)
    }

    #[test]
    fn single_patient_selectors_only() {
        let (table, outcomes) = single_patient_setup();
        let registry = Registry::default();
        let cfg = Step1Config {
            limit: 200,
            order: vec![SubprocessKind::Selectors],
        };
        let set = run_step1(&table, &outcomes, &registry, &cfg).unwrap();
        validate_catalog(&set).unwrap();
        // Each exact-value feature materializes one row per matching event;
        // with single occurrences that is exactly one row each.
        for def in &set.definitions {
            let expr = parse_feature_code(&def.code).unwrap();
            if let Term::Selector { value, .. } = &expr.terms[0] {
                if value != "ALL" && !def.code.starts_with('H') {
                    let n = set
                        .rows
                        .iter()
                        .filter(|r| r.feature_id == def.feature_id)
                        .count();
                    assert_eq!(n, 1, "feature {}", def.code);
                }
            }
        }
        assert!(set.definitions.iter().any(|d| d.code == "2065=I499"));
        assert!(set.definitions.iter().any(|d| d.code == "H0_2065=I49"));
        assert!(set.definitions.iter().all(|d| d.parent_ids.is_empty()));
    }

    fn small_synth() -> (EventTable, OutcomeSet) {
        let cfg = SynthConfig {
            n_patients: 60,
            events_per_patient: EventRateConfig {
                mean_medications: 5.0,
                mean_diagnoses: 3.0,
                mean_hospitalizations: 0.5,
            },
            seed: 5,
            ..SynthConfig::default()
        };
        let roster = generate_cohort(&cfg).unwrap();
        let (table, outcomes) = generate_events(&roster, &cfg).unwrap();
        (sort_events(table), outcomes)
    }

    #[test]
    fn full_pipeline_is_deterministic_and_consistent() {
        let (table, outcomes) = small_synth();
        let registry = Registry::default();
        let cfg = Step1Config::default();
        let a = run_step1(&table, &outcomes, &registry, &cfg).unwrap();
        let b = run_step1(&table, &outcomes, &registry, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        validate_catalog(&a).unwrap();
        assert!(!a.rows.is_empty());
        // Generations are stage numbers; selector features come first.
        assert!(a.definitions.iter().any(|d| d.generation == 1));
        // Every metadata coverage is a valid fraction.
        for m in &a.metadata {
            assert!((0.0..=1.0).contains(&m.coverage));
        }
    }

    #[test]
    fn per_stage_survivors_bounded_by_limit_plus_ties() {
        let (table, outcomes) = small_synth();
        let registry = Registry::default();
        let cfg = Step1Config {
            limit: 10,
            order: SubprocessKind::DEFAULT_ORDER.to_vec(),
        };
        let set = run_step1(&table, &outcomes, &registry, &cfg).unwrap();
        let by_id: BTreeMap<u32, f64> = set
            .metadata
            .iter()
            .map(|m| (m.feature_id, m.coverage))
            .collect();
        for generation in 1..=5u32 {
            let stage: Vec<&FeatureDefinition> = set
                .definitions
                .iter()
                .filter(|d| d.generation == generation)
                .collect();
            if stage.len() > 10 {
                // Everything beyond the limit must tie with the cutoff coverage.
                let mut coverages: Vec<f64> =
                    stage.iter().map(|d| by_id[&d.feature_id]).collect();
                coverages.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let cutoff = coverages[9];
                assert!(
                    coverages[10..].iter().all(|c| *c == cutoff),
                    "generation {generation}"
                );
            }
        }
    }

    #[test]
    fn scalar_rows_match_dsl_evaluator() {
        let (table, outcomes) = small_synth();
        let registry = Registry::default();
        let set = run_step1(&table, &outcomes, &registry, &Step1Config::default()).unwrap();
        let slices: BTreeMap<&PatientId, &[EventRecord]> =
            table.patient_slices().unwrap().into_iter().collect();
        let mut checked = 0;
        for def in &set.definitions {
            let expr = parse_feature_code(&def.code).unwrap();
            if expr.is_indicator() {
                continue;
            }
            for row in set.rows.iter().filter(|r| r.feature_id == def.feature_id) {
                let events = slices[&row.patient_id];
                let index = outcomes.get(&row.patient_id).unwrap().index_date;
                let out = evaluate_feature(&expr, events, index, &registry).unwrap();
                assert_eq!(out.value, row.value_decimal, "feature {}", def.code);
                checked += 1;
                if checked > 500 {
                    return;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn stage_coverage_matches_evaluator_brute_force() {
        let (table, outcomes) = small_synth();
        let registry = Registry::default();
        let set = run_step1(&table, &outcomes, &registry, &Step1Config::default()).unwrap();
        let slices: Vec<(&PatientId, &[EventRecord])> = table.patient_slices().unwrap();
        for def in set.definitions.iter().take(40) {
            let expr = parse_feature_code(&def.code).unwrap();
            let mut covered = 0;
            for (pid, events) in &slices {
                let index = outcomes.get(pid).unwrap().index_date;
                let present = if expr.is_indicator() {
                    !matching_events(&expr, events, &registry).is_empty()
                } else {
                    let out = evaluate_feature(&expr, events, index, &registry).unwrap();
                    out.value.is_some() && out.as_of.is_some()
                };
                if present {
                    covered += 1;
                }
            }
            let expected = covered as f64 / outcomes.len() as f64;
            let meta = set
                .metadata
                .iter()
                .find(|m| m.feature_id == def.feature_id)
                .unwrap();
            assert!(
                (meta.coverage - expected).abs() < 1e-12,
                "feature {}: {} vs {}",
                def.code,
                meta.coverage,
                expected
            );
        }
    }

    #[test]
    fn exports_round_trip_files() {
        let (table, outcomes) = small_synth();
        let registry = Registry::default();
        let set = run_step1(&table, &outcomes, &registry, &Step1Config::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("akdfe.csv");
        let json_path = dir.path().join("catalog.json");
        export_feature_set_csv(&set, &csv_path).unwrap();
        export_catalog_json(&set, &json_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("PATIENT_ID,FEATURE_ID,GENDER"));
        let entries: Vec<CatalogEntry> =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(entries.len(), set.definitions.len());
    }
}
