//! Feature engineering and evaluation engine for event-based patient data.
//!
//! The crate turns per-event records into patient-centric feature matrices and
//! scores the resulting feature sets with a fixed machine-learning grid:
//!
//! * [`model`] — event data model, CSV/JSON ingestion, deterministic ordering.
//! * [`dsl`] — the compound feature-code language (parse, render, evaluate, decode).
//! * [`risk`] — sliding-window medication risk levels.
//! * [`step1`] — iterative generation of compound event features with
//!   coverage-based selection.
//! * [`step2`] — patient-centric transformation (n-gram counts and value sums).
//! * [`pipeline`] — preprocessing, feature selection, models, metrics, and the
//!   evaluation grid.
//! * [`stats`] — Pearson correlation and one-way ANOVA with exact p-values.
//! * [`synth`] — seeded synthetic cohort and event-stream generator.
//! * [`experiment`] — experiment orchestration, hypothesis tests, reports.

pub mod dsl;
pub mod experiment;
pub mod model;
pub mod pipeline;
pub mod risk;
pub mod stats;
pub mod step1;
pub mod step2;
pub mod synth;
