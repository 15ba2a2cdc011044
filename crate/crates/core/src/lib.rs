//! Elicitation and analysis of stakeholder preferences over machine-learning
//! evaluation metrics.
//!
//! Respondents compare two hiring models on a small applicant roster and
//! pick the better one. A conditional logit fitted per respondent yields a
//! preference vector over seven metrics; preference vectors are clustered,
//! and clusters are related to demographics by lift.

pub mod association;
pub mod choice_model;
pub mod clustering;
pub mod datastore;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod simulation;
pub mod taskgen;

pub use choice_model::{Alternative, ChoiceRecord, FitConfig, FitOutcome, PreferenceVector};
pub use datastore::StudyBundle;
pub use error::{Error, Result};
pub use metrics::{Metric, MetricVector};
