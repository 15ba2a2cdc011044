//! Per-session state machine, independent of the HTTP layer.
//!
//! A session moves through consent, scenario, attention, tasks,
//! demographics and done, in that order. Tasks are shown with their rows
//! shuffled and their model columns possibly swapped; choices are stored in
//! canonical orientation.

use std::collections::BTreeMap;

use metric_prefs::association::{Attribute, ParticipantProfile};
use metric_prefs::datastore::{Choice, QualityFlags, RespondentResponses};
use metric_prefs::metrics::{Expertise, Race};
use metric_prefs::taskgen::{generate_session, ChoiceTask, SessionPlan};
use metric_prefs::{seed, Alternative, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SurveyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Consent,
    Scenario,
    Attention,
    Tasks,
    Demographics,
    Done,
    /// Consent declined. Terminal; never exported.
    Withdrawn,
}

/// Model column as displayed to the respondent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DisplayedModel {
    #[serde(rename = "model_1")]
    Model1,
    #[serde(rename = "model_2")]
    Model2,
}

/// How one task is displayed. Displayed row `i` shows canonical row
/// `row_order[i]`. When `columns_swapped`, "model_1" shows alternative B.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Presentation {
    pub row_order: Vec<usize>,
    pub columns_swapped: bool,
}

impl Presentation {
    pub fn random(rng: &mut impl Rng, rows: usize) -> Self {
        let mut row_order: Vec<usize> = (0..rows).collect();
        row_order.shuffle(rng);
        Self {
            row_order,
            columns_swapped: rng.random_bool(0.5),
        }
    }

    pub fn canonical(&self, shown: DisplayedModel) -> Alternative {
        match (shown, self.columns_swapped) {
            (DisplayedModel::Model1, false) | (DisplayedModel::Model2, true) => Alternative::A,
            _ => Alternative::B,
        }
    }

    pub fn displayed(&self, alternative: Alternative) -> DisplayedModel {
        match (alternative, self.columns_swapped) {
            (Alternative::A, false) | (Alternative::B, true) => DisplayedModel::Model1,
            _ => DisplayedModel::Model2,
        }
    }

    /// Displayed position of canonical row `row`.
    pub fn displayed_row(&self, row: usize) -> Option<usize> {
        self.row_order.iter().position(|&r| r == row)
    }
}

/// Presentations for every task of a plan. They depend only on the plan seed,
/// so an exported bundle can reconstruct what each respondent saw.
pub fn presentations(plan: &SessionPlan) -> Vec<Presentation> {
    let mut rng = seed::rng(seed::derive_named(plan.seed, "presentation"));
    plan.tasks.iter().map(|t| Presentation::random(&mut rng, t.scenario.len())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRow {
    pub race: Race,
    pub expertise: Expertise,
    pub actual: bool,
    pub model_1: bool,
    pub model_2: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskView {
    pub task_id: String,
    /// Zero-based position in the session.
    pub index: usize,
    pub total: usize,
    pub rows: Vec<TaskRow>,
    /// Displayed row positions where the models disagree, ascending.
    pub highlighted: Vec<usize>,
}

impl TaskView {
    pub fn new(task: &ChoiceTask, presentation: &Presentation, index: usize, total: usize) -> Self {
        let people = task.scenario.applicants();
        let (first, second) = if presentation.columns_swapped {
            (&task.preds_b, &task.preds_a)
        } else {
            (&task.preds_a, &task.preds_b)
        };
        let rows = presentation
            .row_order
            .iter()
            .map(|&r| TaskRow {
                race: people[r].race,
                expertise: people[r].expertise,
                actual: people[r].actual,
                model_1: first.0[r],
                model_2: second.0[r],
            })
            .collect();
        let mut highlighted: Vec<usize> = task
            .differing_rows
            .iter()
            .filter_map(|&r| presentation.displayed_row(r))
            .collect();
        highlighted.sort_unstable();
        Self {
            task_id: task.task_id.clone(),
            index,
            total,
            rows,
            highlighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Question {
    pub attribute: Attribute,
    pub options: Vec<String>,
}

impl Question {
    fn for_attribute(attribute: Attribute) -> Self {
        Self {
            attribute,
            options: attribute.vocabulary().iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Payload of `GET /sessions/{id}/next`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Step {
    Consent {
        consent_text: String,
    },
    Scenario {
        scenario_text: String,
    },
    Attention {
        item_id: String,
        prompt: String,
        options: Vec<String>,
    },
    Task {
        #[serde(flatten)]
        view: TaskView,
        labels: BTreeMap<String, String>,
    },
    Demographics {
        questions: Vec<Question>,
        repeated_question: Question,
    },
    Done,
    Withdrawn,
}

/// Rejection of a session operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionError {
    /// Out of phase or stale; state is unchanged.
    Conflict(String),
    /// Payload problems keyed by field name.
    Invalid(BTreeMap<String, String>),
}

impl SessionError {
    fn field(name: &str, message: impl Into<String>) -> Self {
        SessionError::Invalid(BTreeMap::from([(name.to_string(), message.into())]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub respondent_id: String,
    pub plan: SessionPlan,
    pub presentations: Vec<Presentation>,
    phase: Phase,
    next_task: usize,
    attention_answer: Option<usize>,
    choices: Vec<Choice>,
    profile: Option<ParticipantProfile>,
    flags: QualityFlags,
    started_at: String,
    completed_at: Option<String>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl Session {
    /// Creates a session whose plan is drawn from `plan_seed`.
    pub fn new(session_id: String, respondent_id: String, plan_seed: u64, config: &SurveyConfig) -> Result<Self> {
        let mut plan = generate_session(plan_seed, config.applicants, config.differing_rows, config.tasks)?;
        plan.session_id = session_id.clone();
        plan.attention_check = config.attention_check.clone();
        let presentations = presentations(&plan);
        Ok(Self {
            session_id,
            respondent_id,
            plan,
            presentations,
            phase: Phase::Consent,
            next_task: 0,
            attention_answer: None,
            choices: Vec::new(),
            profile: None,
            flags: QualityFlags::default(),
            started_at: now(),
            completed_at: None,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn flags(&self) -> QualityFlags {
        self.flags
    }

    pub fn choices(&self) -> &[Choice] {
        &self.choices
    }

    pub fn profile(&self) -> Option<&ParticipantProfile> {
        self.profile.as_ref()
    }

    fn require(&self, phase: Phase) -> std::result::Result<(), SessionError> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(SessionError::Conflict(format!(
                "session is in phase {:?}, not {:?}",
                self.phase, phase
            )))
        }
    }

    pub fn next_step(&self, config: &SurveyConfig) -> Step {
        match self.phase {
            Phase::Consent => Step::Consent {
                consent_text: config.consent_text.clone(),
            },
            Phase::Scenario => Step::Scenario {
                scenario_text: config.scenario_text.clone(),
            },
            Phase::Attention => {
                let check = &self.plan.attention_check;
                Step::Attention {
                    item_id: check.item_id.clone(),
                    prompt: check.prompt.clone(),
                    options: check.options.clone(),
                }
            }
            Phase::Tasks => {
                let i = self.next_task;
                Step::Task {
                    view: TaskView::new(&self.plan.tasks[i], &self.presentations[i], i, self.plan.tasks.len()),
                    labels: BTreeMap::from([
                        ("true".to_string(), "TRUE (likely to be hired)".to_string()),
                        ("false".to_string(), "FALSE (NOT likely to be hired)".to_string()),
                    ]),
                }
            }
            Phase::Demographics => Step::Demographics {
                questions: Attribute::ALL.into_iter().map(Question::for_attribute).collect(),
                repeated_question: Question::for_attribute(config.repeated_attribute),
            },
            Phase::Done => Step::Done,
            Phase::Withdrawn => Step::Withdrawn,
        }
    }

    pub fn consent(&mut self, agree: bool) -> std::result::Result<Phase, SessionError> {
        self.require(Phase::Consent)?;
        self.phase = if agree { Phase::Scenario } else { Phase::Withdrawn };
        Ok(self.phase)
    }

    pub fn acknowledge_scenario(&mut self) -> std::result::Result<Phase, SessionError> {
        self.require(Phase::Scenario)?;
        self.phase = Phase::Attention;
        Ok(self.phase)
    }

    pub fn answer_attention(&mut self, item_id: &str, answer: usize) -> std::result::Result<Phase, SessionError> {
        self.require(Phase::Attention)?;
        let check = &self.plan.attention_check;
        if item_id != check.item_id {
            return Err(SessionError::Conflict(format!("attention item {item_id} is not the issued item")));
        }
        if answer >= check.options.len() {
            return Err(SessionError::field(
                "answer",
                format!("must be an option index below {}", check.options.len()),
            ));
        }
        self.attention_answer = Some(answer);
        self.phase = Phase::Tasks;
        Ok(self.phase)
    }

    /// Records a choice for the currently issued task.
    pub fn choose(&mut self, task_id: &str, shown: DisplayedModel) -> std::result::Result<Phase, SessionError> {
        self.require(Phase::Tasks)?;
        let issued = &self.plan.tasks[self.next_task];
        if task_id != issued.task_id {
            return Err(SessionError::Conflict(format!(
                "task {task_id} is not the issued task {}",
                issued.task_id
            )));
        }
        self.choices.push(Choice {
            task_id: issued.task_id.clone(),
            chosen: self.presentations[self.next_task].canonical(shown),
        });
        self.next_task += 1;
        if self.next_task == self.plan.tasks.len() {
            self.phase = Phase::Demographics;
        }
        Ok(self.phase)
    }

    /// Stores the questionnaire and computes the quality flags. Unanswered
    /// items are allowed and recorded as missing.
    pub fn submit_demographics(
        &mut self,
        answers: BTreeMap<Attribute, String>,
        repeated_answer: Option<String>,
        config: &SurveyConfig,
    ) -> std::result::Result<Phase, SessionError> {
        self.require(Phase::Demographics)?;
        let mut problems = BTreeMap::new();
        for (attribute, value) in &answers {
            if !attribute.accepts(value) {
                problems.insert(format!("profile.{attribute}"), format!("{value:?} is not an allowed answer"));
            }
        }
        if let Some(v) = &repeated_answer {
            if !config.repeated_attribute.accepts(v) {
                problems.insert("repeated_answer".to_string(), format!("{v:?} is not an allowed answer"));
            }
        }
        if !problems.is_empty() {
            return Err(SessionError::Invalid(problems));
        }
        let first = answers.get(&config.repeated_attribute);
        self.flags = QualityFlags {
            attention_failed: !self
                .attention_answer
                .is_some_and(|a| self.plan.attention_check.is_correct(a)),
            contradictory: first != repeated_answer.as_ref(),
        };
        self.profile = Some(ParticipantProfile {
            participant_id: self.respondent_id.clone(),
            values: answers,
        });
        self.completed_at = Some(now());
        self.phase = Phase::Done;
        Ok(self.phase)
    }

    /// Response record in bundle form.
    pub fn responses(&self) -> RespondentResponses {
        RespondentResponses {
            respondent_id: self.respondent_id.clone(),
            session_id: self.session_id.clone(),
            attention_answer: self.attention_answer,
            flags: self.flags,
            choices: self.choices.clone(),
            started_at: Some(self.started_at.clone()),
            completed_at: self.completed_at.clone(),
        }
    }
}
