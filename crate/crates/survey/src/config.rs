//! Deployment configuration for the survey service.

use metric_prefs::association::Attribute;
use metric_prefs::metrics::Scenario;
use metric_prefs::taskgen::{AttentionCheck, DEFAULT_APPLICANTS, DEFAULT_DIFFERING_ROWS, DEFAULT_TASKS};
use metric_prefs::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_CONSENT_TEXT: &str = include_str!("../assets/consent.txt");
pub const DEFAULT_SCENARIO_TEXT: &str = include_str!("../assets/scenario.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyConfig {
    /// Choice tasks per session.
    pub tasks: usize,
    /// Applicants per scenario.
    pub applicants: usize,
    /// Rows on which the two models disagree.
    pub differing_rows: usize,
    /// Master seed. Session `i` (in creation order) uses `seed::derive(seed, i)`.
    pub seed: u64,
    pub consent_text: String,
    pub scenario_text: String,
    pub attention_check: AttentionCheck,
    /// Demographics item asked twice; differing answers flag the respondent
    /// as contradictory.
    pub repeated_attribute: Attribute,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        Self {
            tasks: DEFAULT_TASKS,
            applicants: DEFAULT_APPLICANTS,
            differing_rows: DEFAULT_DIFFERING_ROWS,
            seed: 0,
            consent_text: DEFAULT_CONSENT_TEXT.to_string(),
            scenario_text: DEFAULT_SCENARIO_TEXT.to_string(),
            attention_check: AttentionCheck::standard(),
            repeated_attribute: Attribute::AgeBand,
        }
    }
}

impl SurveyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 {
            return Err(Error::invalid("tasks must be at least 1"));
        }
        if self.applicants < Scenario::MIN_APPLICANTS {
            return Err(Error::invalid(format!("applicants must be at least {}", Scenario::MIN_APPLICANTS)));
        }
        if self.differing_rows == 0 || self.differing_rows >= self.applicants {
            return Err(Error::invalid("differing_rows must satisfy 1 <= differing_rows < applicants"));
        }
        let check = &self.attention_check;
        if check.options.len() < 2 || check.correct >= check.options.len() {
            return Err(Error::invalid("attention_check needs at least two options and a valid correct index"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        SurveyConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_toml_style_json_fills_defaults() {
        let c: SurveyConfig = serde_json::from_str(r#"{"tasks": 5, "seed": 9}"#).unwrap();
        assert_eq!(c.tasks, 5);
        assert_eq!(c.applicants, DEFAULT_APPLICANTS);
        assert_eq!(c.scenario_text, DEFAULT_SCENARIO_TEXT);
    }

    #[test]
    fn rejects_bad_shapes() {
        for c in [
            SurveyConfig { tasks: 0, ..SurveyConfig::default() },
            SurveyConfig { differing_rows: 10, ..SurveyConfig::default() },
            SurveyConfig { applicants: 1, ..SurveyConfig::default() },
        ] {
            assert!(c.validate().is_err());
        }
        let mut c = SurveyConfig::default();
        c.attention_check.correct = 9;
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_scenario_states_the_attention_answer() {
        let c = SurveyConfig::default();
        assert!(c.scenario_text.contains("\"Likely to be hired\" or \"Not likely to be hired\""));
    }
}
