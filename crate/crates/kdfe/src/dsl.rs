//! The compound feature-code language.
//!
//! A code is a `-`-separated pipeline of terms. A term containing `=` is a
//! selector (`[H<level>_]<concept>=<value>`, value `ALL` is a wildcard); a
//! bare four-digit term is one of the six operator codes. Examples:
//!
//! * `2065=I499` — indicator: the patient has an I499 event.
//! * `H0_2065=I49` — indicator at the first parent level (3-char prefix).
//! * `2105=ALL-1070` — number of diagnosis events.
//! * `2007=DF_JM_1-1060-2105=ALL-1050-1030` — days between the last oral-drug
//!   event and the first diagnosis event.
//!
//! Evaluation is a left-to-right stack machine over a `(stream, anchors)`
//! state. Selectors filter the current stream (or start a fresh one after the
//! stream has been consumed by a reducer or scalar operator); `1050`/`1060`
//! reduce the stream to its first/last event and push that event as an
//! anchor; `1030` and `1033` emit day distances between anchors and the
//! reference date; `1040` and `1070` emit presence and cardinality. A `1040`
//! in mid-pipeline acts as a presence gate: an empty stream there makes the
//! whole feature absent rather than emitting 0.

use crate::model::EventRecord;
use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DslError {
    #[error("syntax error in segment {segment}: {message}")]
    Syntax { segment: usize, message: String },
    #[error("unknown opcode {0}")]
    UnknownOpcode(u16),
    #[error("invalid feature expression: {0}")]
    InvalidExpr(String),
    #[error("unknown concept {0}")]
    UnknownConcept(u16),
    #[error("events must be sorted before evaluation")]
    UnsortedInput,
    #[error("registry load error: {0}")]
    Registry(String),
}

/// The six operator codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u16", try_from = "u16")]
pub enum OpCode {
    DaysBetween,       // 1030
    DaysBeforeDate,    // 1033
    HaveObservation,   // 1040
    FirstEvent,        // 1050
    LastEvent,         // 1060
    CountObservations, // 1070
}

impl OpCode {
    pub const ALL: [OpCode; 6] = [
        OpCode::DaysBetween,
        OpCode::DaysBeforeDate,
        OpCode::HaveObservation,
        OpCode::FirstEvent,
        OpCode::LastEvent,
        OpCode::CountObservations,
    ];

    pub fn code(self) -> u16 {
        match self {
            OpCode::DaysBetween => 1030,
            OpCode::DaysBeforeDate => 1033,
            OpCode::HaveObservation => 1040,
            OpCode::FirstEvent => 1050,
            OpCode::LastEvent => 1060,
            OpCode::CountObservations => 1070,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.code() == code)
    }

    /// Reducers collapse the stream to a single anchor event.
    pub fn is_reducer(self) -> bool {
        matches!(self, OpCode::FirstEvent | OpCode::LastEvent)
    }

    /// Scalar producers are the only operators allowed in final position.
    pub fn is_scalar(self) -> bool {
        !self.is_reducer()
    }
}

impl From<OpCode> for u16 {
    fn from(op: OpCode) -> u16 {
        op.code()
    }
}

impl TryFrom<u16> for OpCode {
    type Error = String;
    fn try_from(code: u16) -> Result<Self, String> {
        OpCode::from_code(code).ok_or_else(|| format!("unknown opcode {code}"))
    }
}

/// One pipeline term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Selector {
        hierarchy_level: Option<u32>,
        concept_id: u16,
        value: String,
    },
    Operator(OpCode),
}

/// Parsed feature code: a non-empty term pipeline plus the original text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureExpr {
    pub terms: Vec<Term>,
    pub source_text: String,
}

impl FeatureExpr {
    pub fn selector_count(&self) -> usize {
        self.terms
            .iter()
            .filter(|t| matches!(t, Term::Selector { .. }))
            .count()
    }

    /// True when the final term is a selector (plain indicator feature).
    pub fn is_indicator(&self) -> bool {
        matches!(self.terms.last(), Some(Term::Selector { .. }))
    }
}

impl fmt::Display for FeatureExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_feature_code(self))
    }
}

// ---------------------------------------------------------------------------
// Parsing and rendering
// ---------------------------------------------------------------------------

fn parse_selector(segment: &str, idx: usize) -> Result<Term, DslError> {
    let eq = segment.find('=').expect("caller checked for '='");
    let head = &segment[..eq];
    let value = &segment[eq + 1..];
    if value.is_empty() {
        return Err(DslError::Syntax {
            segment: idx,
            message: "empty selector value".to_string(),
        });
    }
    let (hierarchy_level, concept_text) = if let Some(rest) = head.strip_prefix('H') {
        let underscore = rest.find('_').ok_or_else(|| DslError::Syntax {
            segment: idx,
            message: format!("malformed hierarchy prefix in {head:?}"),
        })?;
        let digits = &rest[..underscore];
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(DslError::Syntax {
                segment: idx,
                message: format!("malformed hierarchy prefix in {head:?}"),
            });
        }
        (Some(digits.parse::<u32>().unwrap()), &rest[underscore + 1..])
    } else {
        (None, head)
    };
    if concept_text.len() != 4 || !concept_text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(DslError::Syntax {
            segment: idx,
            message: format!("concept id {concept_text:?} is not a 4-digit code"),
        });
    }
    Ok(Term::Selector {
        hierarchy_level,
        concept_id: concept_text.parse().unwrap(),
        value: value.to_string(),
    })
}

fn validate_expr(terms: &[Term]) -> Result<(), DslError> {
    if terms.is_empty() {
        return Err(DslError::InvalidExpr("empty expression".to_string()));
    }
    match terms.last().unwrap() {
        Term::Selector { .. } => {}
        Term::Operator(op) if op.is_scalar() => {}
        Term::Operator(op) => {
            return Err(DslError::InvalidExpr(format!(
                "final term {} must be a scalar operator or selector",
                op.code()
            )));
        }
    }
    for i in 0..terms.len() {
        if let Term::Operator(op) = &terms[i] {
            if op.is_reducer() {
                let ok = i > 0 && matches!(terms[i - 1], Term::Selector { .. });
                if !ok {
                    return Err(DslError::InvalidExpr(format!(
                        "reducer {} must immediately follow a selector",
                        op.code()
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Parses a feature code. `render_feature_code(parse_feature_code(x)) == x`
/// for every valid code.
pub fn parse_feature_code(text: &str) -> Result<FeatureExpr, DslError> {
    if text.is_empty() {
        return Err(DslError::Syntax {
            segment: 0,
            message: "empty feature code".to_string(),
        });
    }
    let mut terms = Vec::new();
    for (idx, segment) in text.split('-').enumerate() {
        if segment.is_empty() {
            return Err(DslError::Syntax {
                segment: idx,
                message: "empty segment".to_string(),
            });
        }
        if segment.contains('=') {
            terms.push(parse_selector(segment, idx)?);
        } else if segment.len() == 4 && segment.bytes().all(|b| b.is_ascii_digit()) {
            let code: u16 = segment.parse().unwrap();
            let op = OpCode::from_code(code).ok_or(DslError::UnknownOpcode(code))?;
            terms.push(Term::Operator(op));
        } else {
            return Err(DslError::Syntax {
                segment: idx,
                message: format!("segment {segment:?} is neither a selector nor a 4-digit opcode"),
            });
        }
    }
    validate_expr(&terms)?;
    Ok(FeatureExpr {
        terms,
        source_text: text.to_string(),
    })
}

/// Canonical text of an expression; `parse(render(e))` is structurally `e`.
pub fn render_feature_code(expr: &FeatureExpr) -> String {
    let mut out = String::new();
    for (i, term) in expr.terms.iter().enumerate() {
        if i > 0 {
            out.push('-');
        }
        match term {
            Term::Selector {
                hierarchy_level,
                concept_id,
                value,
            } => {
                if let Some(level) = hierarchy_level {
                    out.push_str(&format!("H{level}_"));
                }
                out.push_str(&format!("{concept_id}={value}"));
            }
            Term::Operator(op) => out.push_str(&op.code().to_string()),
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Registries
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptDef {
    pub id: u16,
    pub name: String,
    pub description: String,
    /// Leaf concepts this umbrella concept also matches (empty for leaves).
    #[serde(default)]
    pub members: Vec<u16>,
    /// Value prefix length per hierarchy level; `[3]` gives the usual
    /// H0 = 3-character diagnosis category.
    #[serde(default)]
    pub level_prefix_lengths: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArityClass {
    StreamReducer,
    StreamScalar,
    AnchorPair,
    AnchorReference,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorDef {
    pub opcode: u16,
    pub name: String,
    pub description: String,
    pub arity_class: ArityClass,
}

/// Concept and operator registries used for matching and decoding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Registry {
    pub concepts: BTreeMap<u16, ConceptDef>,
    pub operators: BTreeMap<u16, OperatorDef>,
}

impl Registry {
    pub fn from_json_file(path: &Path) -> Result<Self, DslError> {
        let text = std::fs::read_to_string(path).map_err(|e| DslError::Registry(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| DslError::Registry(e.to_string()))
    }

    pub fn to_json_file(&self, path: &Path) -> Result<(), DslError> {
        let file = std::fs::File::create(path).map_err(|e| DslError::Registry(e.to_string()))?;
        serde_json::to_writer_pretty(file, self).map_err(|e| DslError::Registry(e.to_string()))
    }

    pub fn concept(&self, id: u16) -> Option<&ConceptDef> {
        self.concepts.get(&id)
    }

    /// Does an event of `event_concept` fall under selector concept `id`?
    pub fn concept_matches(&self, id: u16, event_concept: u16) -> bool {
        if id == event_concept {
            return true;
        }
        self.concepts
            .get(&id)
            .map(|def| def.members.contains(&event_concept))
            .unwrap_or(false)
    }

    /// Prefix length for hierarchy level `level` of concept `id`; level 0
    /// defaults to 3 characters when the registry does not say otherwise.
    pub fn level_prefix(&self, id: u16, level: u32) -> Option<usize> {
        let def = self.concepts.get(&id);
        match def {
            Some(d) if !d.level_prefix_lengths.is_empty() => {
                d.level_prefix_lengths.get(level as usize).copied()
            }
            _ => (level == 0).then_some(3),
        }
    }

    /// Concept ids listed as umbrellas containing `leaf`.
    pub fn umbrellas_of(&self, leaf: u16) -> Vec<u16> {
        self.concepts
            .values()
            .filter(|d| d.members.contains(&leaf))
            .map(|d| d.id)
            .collect()
    }
}

fn concept(
    id: u16,
    name: &str,
    description: &str,
    members: &[u16],
    levels: &[usize],
) -> ConceptDef {
    ConceptDef {
        id,
        name: name.to_string(),
        description: description.to_string(),
        members: members.to_vec(),
        level_prefix_lengths: levels.to_vec(),
    }
}

impl Default for Registry {
    fn default() -> Self {
        let concepts = [
            concept(
                2001,
                "Medication dispensation",
                "Prescription drug dispensed at a pharmacy (value is the ATC code)",
                &[],
                &[],
            ),
            concept(
                2002,
                "Medication administration",
                "Medication administered in a healthcare setting (value is the ATC code)",
                &[],
                &[],
            ),
            concept(
                2006,
                "Janusmed risk level",
                "Aggregated concurrent-medication risk level (values RL_0 to RL_3)",
                &[],
                &[],
            ),
            concept(
                2007,
                "Route of administration",
                "Drug event viewed by dosage-form group (values DF_JM_0 to DF_JM_4)",
                &[],
                &[],
            ),
            concept(
                2010,
                "All medication",
                "Any medication handling event",
                &[2001, 2002],
                &[],
            ),
            concept(
                2065,
                "Diagnosis for ventricular arrhythmia",
                "Ventricular arrhythmia diagnosis (ICD-10 I49 family)",
                &[],
                &[3],
            ),
            concept(
                2100,
                "Diagnosis for arrhythmia",
                "Any arrhythmia diagnosis",
                &[2065, 2101],
                &[3],
            ),
            concept(
                2101,
                "Diagnosis for other arrhythmia",
                "Arrhythmia diagnosis outside the I49 family",
                &[],
                &[3],
            ),
            concept(
                2105,
                "All diagnosis",
                "Any diagnosis event",
                &[2065, 2100, 2101, 2110],
                &[3],
            ),
            concept(
                2110,
                "Other diagnosis",
                "Diagnosis outside the arrhythmia families",
                &[],
                &[3],
            ),
            concept(
                2200,
                "Hospitalization",
                "Inpatient episode; the decimal value is the length of stay in days",
                &[],
                &[],
            ),
        ];
        let operators = [
            OperatorDef {
                opcode: 1030,
                name: "Days between".to_string(),
                description: "Days between the two most recent anchor events".to_string(),
                arity_class: ArityClass::AnchorPair,
            },
            OperatorDef {
                opcode: 1033,
                name: "Days before a date".to_string(),
                description: "Days from the current anchor to the reference date".to_string(),
                arity_class: ArityClass::AnchorReference,
            },
            OperatorDef {
                opcode: 1040,
                name: "Have observation (1/0)".to_string(),
                description: "1 if the current stream is non-empty, else 0".to_string(),
                arity_class: ArityClass::StreamScalar,
            },
            OperatorDef {
                opcode: 1050,
                name: "First event of many".to_string(),
                description: "Reduce the stream to its earliest event".to_string(),
                arity_class: ArityClass::StreamReducer,
            },
            OperatorDef {
                opcode: 1060,
                name: "Last event of many".to_string(),
                description: "Reduce the stream to its latest event".to_string(),
                arity_class: ArityClass::StreamReducer,
            },
            OperatorDef {
                opcode: 1070,
                name: "Number of observations".to_string(),
                description: "Cardinality of the current stream".to_string(),
                arity_class: ArityClass::StreamScalar,
            },
        ];
        Registry {
            concepts: concepts.into_iter().map(|c| (c.id, c)).collect(),
            operators: operators.into_iter().map(|o| (o.opcode, o)).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Result of evaluating a feature over one patient's events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOutcome<'a> {
    /// Absent when a required anchor does not exist or a mid-pipeline
    /// presence gate saw an empty stream.
    pub value: Option<f64>,
    /// The event contextualizing the value (used as the feature-event date
    /// when values are materialized as rows).
    pub as_of: Option<&'a EventRecord>,
}

/// Canonical form of a risk-level value: `RL_1,000` (comma-decimal locale)
/// and `RL_1.0` both normalize to `RL_1`. Non-risk values are left alone.
pub fn normalize_value(v: &str) -> Option<String> {
    let rest = v.strip_prefix("RL_")?;
    let n: f64 = rest.replace(',', ".").parse().ok()?;
    if !n.is_finite() || n < 0.0 {
        return None;
    }
    Some(format!("RL_{}", n.round() as u32))
}

fn values_equal(selector_value: &str, event_value: &str) -> bool {
    if selector_value == event_value {
        return true;
    }
    match (normalize_value(selector_value), normalize_value(event_value)) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    }
}

fn selector_matches(
    registry: &Registry,
    hierarchy_level: Option<u32>,
    concept_id: u16,
    value: &str,
    event: &EventRecord,
) -> bool {
    if !registry.concept_matches(concept_id, event.concept_type_id) {
        return false;
    }
    if value == "ALL" {
        return true;
    }
    match hierarchy_level {
        None => values_equal(value, &event.value_char),
        Some(level) => match registry.level_prefix(concept_id, level) {
            Some(len) => event.value_char.len() >= len && event.value_char[..len] == *value,
            None => false,
        },
    }
}

fn check_sorted(events: &[EventRecord]) -> Result<(), DslError> {
    for pair in events.windows(2) {
        if pair[0].sort_key() > pair[1].sort_key() {
            return Err(DslError::UnsortedInput);
        }
    }
    Ok(())
}

fn days_between(a: NaiveDate, b: NaiveDate) -> f64 {
    (a - b).num_days().abs() as f64
}

/// Evaluates `expr` against one patient's sorted events.
///
/// `reference_date` is the patient's index date. The result is a pure
/// function of `(expr, events, reference_date)`.
pub fn evaluate_feature<'a>(
    expr: &FeatureExpr,
    events: &'a [EventRecord],
    reference_date: NaiveDate,
    registry: &Registry,
) -> Result<EvalOutcome<'a>, DslError> {
    check_sorted(events)?;
    let all: Vec<&EventRecord> = events.iter().collect();
    let mut stream: Vec<&EventRecord> = all.clone();
    let mut anchors: Vec<&EventRecord> = Vec::new();
    // Set once a reducer or scalar operator has used up the current stream;
    // the next selector then starts from the full event sequence again.
    let mut consumed = false;
    let mut outcome = EvalOutcome {
        value: None,
        as_of: None,
    };
    let last = expr.terms.len() - 1;
    for (i, term) in expr.terms.iter().enumerate() {
        let is_final = i == last;
        match term {
            Term::Selector {
                hierarchy_level,
                concept_id,
                value,
            } => {
                let base = if consumed { &all } else { &stream };
                let filtered: Vec<&EventRecord> = base
                    .iter()
                    .filter(|e| selector_matches(registry, *hierarchy_level, *concept_id, value, e))
                    .copied()
                    .collect();
                stream = filtered;
                consumed = false;
                if is_final {
                    // Bare-selector indicator: 1 if any match, else 0.
                    outcome.value = Some(if stream.is_empty() { 0.0 } else { 1.0 });
                    outcome.as_of = stream.last().copied();
                }
            }
            Term::Operator(op) => match op {
                OpCode::FirstEvent | OpCode::LastEvent => {
                    let picked = if *op == OpCode::FirstEvent {
                        stream.first().copied()
                    } else {
                        stream.last().copied()
                    };
                    match picked {
                        Some(e) => {
                            anchors.push(e);
                            stream = vec![e];
                        }
                        None => stream = Vec::new(),
                    }
                    consumed = true;
                }
                OpCode::DaysBetween => {
                    if anchors.len() < 2 {
                        return Ok(EvalOutcome {
                            value: None,
                            as_of: None,
                        });
                    }
                    let a = anchors[anchors.len() - 1];
                    let b = anchors[anchors.len() - 2];
                    let v = days_between(a.observation_start_date, b.observation_start_date);
                    if is_final {
                        let later = if a.observation_start_date >= b.observation_start_date {
                            a
                        } else {
                            b
                        };
                        outcome.value = Some(v);
                        outcome.as_of = Some(later);
                    }
                    consumed = true;
                }
                OpCode::DaysBeforeDate => {
                    let anchor = match anchors.last() {
                        Some(a) => *a,
                        None => {
                            return Ok(EvalOutcome {
                                value: None,
                                as_of: None,
                            })
                        }
                    };
                    let v = days_between(reference_date, anchor.observation_start_date);
                    if is_final {
                        outcome.value = Some(v);
                        outcome.as_of = Some(anchor);
                    }
                    consumed = true;
                }
                OpCode::HaveObservation => {
                    if is_final {
                        outcome.value = Some(if stream.is_empty() { 0.0 } else { 1.0 });
                        outcome.as_of = stream.last().copied();
                    } else if stream.is_empty() {
                        // Mid-pipeline presence gate: nothing observed makes
                        // the whole feature absent.
                        return Ok(EvalOutcome {
                            value: None,
                            as_of: None,
                        });
                    }
                    consumed = true;
                }
                OpCode::CountObservations => {
                    if is_final {
                        outcome.value = Some(stream.len() as f64);
                        outcome.as_of = stream.last().copied();
                    }
                    consumed = true;
                }
            },
        }
    }
    Ok(outcome)
}

/// The events a bare-selector feature materializes: every matching event.
pub fn matching_events<'a>(
    expr: &FeatureExpr,
    events: &'a [EventRecord],
    registry: &Registry,
) -> Vec<&'a EventRecord> {
    let mut stream: Vec<&EventRecord> = events.iter().collect();
    for term in &expr.terms {
        if let Term::Selector {
            hierarchy_level,
            concept_id,
            value,
        } = term
        {
            stream.retain(|e| selector_matches(registry, *hierarchy_level, *concept_id, value, e));
        }
    }
    stream
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

/// Renders an expression as prose, naming each concept, value, and operator
/// in pipeline order.
pub fn describe_feature(expr: &FeatureExpr, registry: &Registry) -> Result<String, DslError> {
    let mut clauses = Vec::new();
    for term in &expr.terms {
        match term {
            Term::Selector {
                hierarchy_level,
                concept_id,
                value,
            } => {
                let def = registry
                    .concept(*concept_id)
                    .ok_or(DslError::UnknownConcept(*concept_id))?;
                let target = if value == "ALL" {
                    def.name.clone()
                } else {
                    format!("{} = {}", def.name, value)
                };
                match hierarchy_level {
                    Some(level) => {
                        clauses.push(format!("First parent level (H{level}) for the {target}"))
                    }
                    None => clauses.push(target),
                }
            }
            Term::Operator(op) => {
                let def = registry
                    .operators
                    .get(&op.code())
                    .ok_or(DslError::UnknownOpcode(op.code()))?;
                clauses.push(def.name.clone());
            }
        }
    }
    Ok(format!("{}.", clauses.join(", then ")))
}

// ---------------------------------------------------------------------------
// Random valid-code sampler (round-trip and fuzz testing)
// ---------------------------------------------------------------------------

/// Samples a random valid feature expression. Every returned expression
/// passes `parse_feature_code` on its rendered text.
pub fn sample_expr<R: Rng>(rng: &mut R, registry: &Registry) -> FeatureExpr {
    const VALUE_CHARS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_,.";
    let concept_ids: Vec<u16> = registry.concepts.keys().copied().collect();
    let selector = |rng: &mut R| -> Term {
        let concept_id = concept_ids[rng.random_range(0..concept_ids.len())];
        let hierarchy_level = if rng.random_bool(0.2) { Some(0) } else { None };
        let value = if rng.random_bool(0.25) {
            "ALL".to_string()
        } else {
            let len = rng.random_range(1..=8);
            (0..len)
                .map(|_| VALUE_CHARS[rng.random_range(0..VALUE_CHARS.len())] as char)
                .collect()
        };
        Term::Selector {
            hierarchy_level,
            concept_id,
            value,
        }
    };
    let mut terms = vec![selector(rng)];
    for _ in 0..rng.random_range(0..3) {
        let reducer_ok = matches!(terms.last(), Some(Term::Selector { .. }));
        if reducer_ok && rng.random_bool(0.5) {
            let op = if rng.random_bool(0.5) {
                OpCode::FirstEvent
            } else {
                OpCode::LastEvent
            };
            terms.push(Term::Operator(op));
            if rng.random_bool(0.6) {
                terms.push(selector(rng));
            }
        } else {
            terms.push(selector(rng));
        }
    }
    // Close with a valid final term.
    match terms.last().unwrap() {
        Term::Selector { .. } => {
            if rng.random_bool(0.7) {
                let finals = [
                    OpCode::DaysBetween,
                    OpCode::DaysBeforeDate,
                    OpCode::HaveObservation,
                    OpCode::CountObservations,
                ];
                terms.push(Term::Operator(finals[rng.random_range(0..finals.len())]));
            }
        }
        Term::Operator(op) if op.is_reducer() => {
            let finals = [
                OpCode::DaysBetween,
                OpCode::DaysBeforeDate,
                OpCode::CountObservations,
            ];
            terms.push(Term::Operator(finals[rng.random_range(0..finals.len())]));
        }
        Term::Operator(_) => {}
    }
    let mut expr = FeatureExpr {
        terms,
        source_text: String::new(),
    };
    expr.source_text = render_feature_code(&expr);
    expr
}
