//! Scenario, choice-task and session generation.
//!
//! A choice task shows two hypothetical models over one scenario. The models
//! agree with the actual outcome everywhere except on `d` randomly chosen
//! rows, where their predictions are drawn at random and forced to differ.
//! Generation is a pure function of its seed.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{metric_vector, Applicant, Expertise, MetricVector, PredictionVector, Race, Scenario};
use crate::seed;

pub const DEFAULT_APPLICANTS: usize = 10;
pub const DEFAULT_DIFFERING_ROWS: usize = 2;
pub const DEFAULT_TASKS: usize = 20;
/// Rejection budget for both scenario and task sampling.
pub const MAX_DRAWS: usize = 10_000;
/// Fresh scenarios tried per session slot before giving up.
const MAX_SCENARIOS_PER_SLOT: u64 = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceTask {
    pub task_id: String,
    pub scenario: Scenario,
    pub preds_a: PredictionVector,
    pub preds_b: PredictionVector,
    pub differing_rows: BTreeSet<usize>,
    /// Candidate prediction pairs rejected before this one was accepted.
    #[serde(default)]
    pub rejected_draws: usize,
}

impl ChoiceTask {
    pub fn metrics(&self) -> Result<(MetricVector, MetricVector)> {
        Ok((
            metric_vector(&self.scenario, &self.preds_a)?,
            metric_vector(&self.scenario, &self.preds_b)?,
        ))
    }

    /// Checks the construction invariants. Returns a description of the first
    /// violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        let n = self.scenario.len();
        if self.preds_a.len() != n || self.preds_b.len() != n {
            return Err(format!("task {}: prediction length differs from scenario", self.task_id));
        }
        if self.differing_rows.iter().any(|&r| r >= n) {
            return Err(format!("task {}: differing row out of range", self.task_id));
        }
        for (i, a) in self.scenario.applicants().iter().enumerate() {
            let (pa, pb) = (self.preds_a.0[i], self.preds_b.0[i]);
            if self.differing_rows.contains(&i) {
                if pa == pb {
                    return Err(format!("task {}: row {i} marked differing but equal", self.task_id));
                }
            } else if pa != a.actual || pb != a.actual {
                return Err(format!("task {}: row {i} should match the actual outcome", self.task_id));
            }
        }
        let (ma, mb) = self.metrics().map_err(|e| e.to_string())?;
        if !ma.is_fully_defined() || !mb.is_fully_defined() {
            return Err(format!("task {}: undefined metric", self.task_id));
        }
        if ma == mb {
            return Err(format!("task {}: identical metric vectors", self.task_id));
        }
        Ok(())
    }
}

/// A fixed-answer comprehension item shown after the scenario text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionCheck {
    pub item_id: String,
    pub prompt: String,
    pub options: Vec<String>,
    pub correct: usize,
}

impl AttentionCheck {
    /// The default item; its answer is stated in the default scenario text.
    pub fn standard() -> Self {
        Self {
            item_id: "attention-1".into(),
            prompt: "According to the scenario, how does the AI system report its prediction for each applicant?"
                .into(),
            options: vec![
                "As a salary offer in US dollars".into(),
                "As \u{201c}Likely to be hired\u{201d} or \u{201c}Not likely to be hired\u{201d}".into(),
                "As a score from 1 to 100".into(),
                "It does not make predictions".into(),
            ],
            correct: 1,
        }
    }

    pub fn is_correct(&self, option: usize) -> bool {
        option == self.correct
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub session_id: String,
    pub seed: u64,
    pub applicants: usize,
    pub differing_rows: usize,
    pub attention_check: AttentionCheck,
    pub tasks: Vec<ChoiceTask>,
}

fn draw_applicant(rng: &mut impl Rng) -> Applicant {
    Applicant {
        race: if rng.random_bool(0.5) { Race::Black } else { Race::White },
        expertise: if rng.random_bool(0.5) { Expertise::High } else { Expertise::Low },
        actual: rng.random_bool(0.5),
    }
}

fn has_hire_in_both_races(applicants: &[Applicant]) -> bool {
    [Race::Black, Race::White]
        .iter()
        .all(|&r| applicants.iter().any(|a| a.race == r && a.actual))
}

pub fn generate_scenario(rng_seed: u64, n: usize) -> Result<Scenario> {
    if n < Scenario::MIN_APPLICANTS {
        return Err(Error::invalid(format!("n must be at least 2, got {n}")));
    }
    let mut rng = seed::rng(rng_seed);
    for _ in 0..MAX_DRAWS {
        let applicants: Vec<Applicant> = (0..n).map(|_| draw_applicant(&mut rng)).collect();
        // Each race present with at least one hire keeps DI and EO definable.
        if has_hire_in_both_races(&applicants) {
            return Scenario::new(format!("scn-{rng_seed:016x}"), applicants);
        }
    }
    Err(Error::Generation(format!(
        "no admissible {n}-applicant scenario within {MAX_DRAWS} draws"
    )))
}

pub fn generate_task(rng_seed: u64, scenario: &Scenario, d: usize) -> Result<ChoiceTask> {
    scenario.validate()?;
    let n = scenario.len();
    if d == 0 || d >= n {
        return Err(Error::invalid(format!("differing rows must satisfy 1 <= d < n (d={d}, n={n})")));
    }
    let mut rng = seed::rng(rng_seed);
    let actual = scenario.actual_predictions();
    for attempt in 0..MAX_DRAWS {
        let rows: BTreeSet<usize> = index::sample(&mut rng, n, d).into_iter().collect();
        let mut a = actual.clone();
        let mut b = actual.clone();
        for &r in &rows {
            let v = rng.random_bool(0.5);
            a.0[r] = v;
            b.0[r] = !v;
        }
        let ma = metric_vector(scenario, &a)?;
        let mb = metric_vector(scenario, &b)?;
        if ma.is_fully_defined() && mb.is_fully_defined() && ma != mb {
            return Ok(ChoiceTask {
                task_id: format!("task-{rng_seed:016x}"),
                scenario: scenario.clone(),
                preds_a: a,
                preds_b: b,
                differing_rows: rows,
                rejected_draws: attempt,
            });
        }
    }
    Err(Error::Generation(format!(
        "scenario {} admits no informative task with d={d} within {MAX_DRAWS} draws",
        scenario.id
    )))
}

/// One session slot: a fresh scenario and a task over it. A scenario that
/// cannot host a task (e.g. nobody was actually rejected, so specificity is
/// never defined) is replaced by the next derived scenario.
fn generate_slot(slot_seed: u64, n: usize, d: usize) -> Result<ChoiceTask> {
    let mut last = None;
    for retry in 0..MAX_SCENARIOS_PER_SLOT {
        let scenario = generate_scenario(seed::derive(slot_seed, 2 * retry), n)?;
        match generate_task(seed::derive(slot_seed, 2 * retry + 1), &scenario, d) {
            Ok(task) => return Ok(task),
            Err(e @ Error::Generation(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Generation("no scenario admitted a task".into())))
}

pub fn generate_session(rng_seed: u64, n: usize, d: usize, t: usize) -> Result<SessionPlan> {
    if t == 0 {
        return Err(Error::invalid("a session needs at least one task"));
    }
    if n < Scenario::MIN_APPLICANTS {
        return Err(Error::invalid(format!("n must be at least 2, got {n}")));
    }
    if d == 0 || d >= n {
        return Err(Error::invalid(format!("differing rows must satisfy 1 <= d < n (d={d}, n={n})")));
    }
    let tasks = (0..t as u64)
        .map(|i| generate_slot(seed::derive(rng_seed, i), n, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(SessionPlan {
        session_id: format!("sess-{rng_seed:016x}"),
        seed: rng_seed,
        applicants: n,
        differing_rows: d,
        attention_check: AttentionCheck::standard(),
        tasks,
    })
}
