//! Educational trajectory analytics.
//!
//! The pipeline joins secondary-school and university enrollment records,
//! builds six percentile features per student, clusters students into
//! seven named archetypes, projects them onto a two-dimensional PCA space,
//! measures cross-regional migration and fits a ladder of logit models.

pub mod clustering;
pub mod config;
pub mod features;
pub mod ingest;
pub mod migration;
pub mod pipeline;
pub mod regression;
pub mod report;
pub mod space;
pub mod synth;
