//! Synthetic respondents with known preferences, for validating the
//! estimator and the full analysis pipeline.
//!
//! Per-respondent randomness is derived from the master seed and the
//! respondent's global index with [`seed::derive`], so serial and parallel
//! simulation produce identical datasets.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{Attribute, ParticipantProfile};
use crate::choice_model::{
    choice_probability, cosine_similarity, dominant_metric, log_sigmoid, normalize, utility, Alternative, Beta,
    ChoiceRecord, PreferenceVector,
};
use crate::datastore::{choice_records, Choice, GroundTruth, QualityFlags, RespondentResponses};
use crate::error::{Error, Result};
use crate::metrics::{Metric, METRIC_COUNT};
use crate::seed;
use crate::taskgen::{generate_session, ChoiceTask, SessionPlan};

/// Categorical answer weights per attribute. Attributes without an entry
/// are left missing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProfileSampler {
    pub weights: BTreeMap<Attribute, Vec<(String, f64)>>,
}

impl ProfileSampler {
    pub fn validate(&self) -> Result<()> {
        for (attr, options) in &self.weights {
            if options.is_empty() || options.iter().any(|(_, w)| w.is_nan() || *w < 0.0) || options.iter().all(|(_, w)| *w == 0.0) {
                return Err(Error::invalid(format!("{attr}: weights must be non-negative with a positive total")));
            }
            if let Some((v, _)) = options.iter().find(|(v, _)| !attr.accepts(v)) {
                return Err(Error::invalid(format!("{attr}: {v:?} is not in the vocabulary")));
            }
        }
        Ok(())
    }

    pub fn sample(&self, participant_id: &str, rng: &mut impl Rng) -> ParticipantProfile {
        let mut p = ParticipantProfile::new(participant_id);
        for (attr, options) in &self.weights {
            let total: f64 = options.iter().map(|(_, w)| w).sum();
            let mut target = rng.random::<f64>() * total;
            let mut pick = &options[options.len() - 1].0;
            for (v, w) in options {
                if target < *w {
                    pick = v;
                    break;
                }
                target -= w;
            }
            p.values.insert(*attr, pick.clone());
        }
        p
    }

    fn tilted(mut self, attribute: Attribute, value: &str, factor: f64) -> Self {
        if let Some(options) = self.weights.get_mut(&attribute) {
            for (v, w) in options.iter_mut() {
                if v == value {
                    *w *= factor;
                }
            }
        }
        self
    }
}

/// Population-level answer weights loosely following a crowd-worker panel.
pub fn baseline_profile_sampler() -> ProfileSampler {
    let w = |pairs: &[(&str, f64)]| pairs.iter().map(|(v, w)| (v.to_string(), *w)).collect::<Vec<_>>();
    let weights = BTreeMap::from([
        (Attribute::AgeBand, w(&[("18-24", 3.3), ("25-34", 62.1), ("35-44", 20.3), ("45-54", 8.2), ("55-64", 5.4), ("65+", 0.6)])),
        (Attribute::Gender, w(&[("female", 33.2), ("male", 66.8)])),
        (
            Attribute::Race,
            w(&[("White", 89.0), ("African American", 3.1), ("Asian", 2.0), ("Hispanic", 1.7), ("Native American or Alaska Native", 4.2)]),
        ),
        (
            Attribute::IncomeBand,
            w(&[
                ("less than $25,000", 6.3),
                ("$25,000 to $49,999", 28.2),
                ("$50,000 to $74,999", 32.7),
                ("$75,000 to $99,999", 25.2),
                ("$100,000 to $149,999", 6.0),
                ("$150,000 or more", 1.6),
            ]),
        ),
        (Attribute::WorkStatus, w(&[("full-time", 96.3), ("part-time", 2.9), ("student with full-time job", 0.8)])),
        (Attribute::Occupation, w(&[("professional", 36.9), ("managerial", 34.2), ("self-employed", 18.8), ("sales", 5.0), ("service", 5.1)])),
        (
            Attribute::Education,
            w(&[
                ("less than high school", 2.2),
                ("high school graduate", 12.1),
                ("some college", 3.8),
                ("2-year degree", 1.6),
                ("4-year degree", 66.2),
                ("professional degree", 14.2),
            ]),
        ),
        (
            Attribute::ProgrammingYears,
            w(&[("none", 15.0), ("less than 1 year", 10.0), ("1 to 2 years", 15.0), ("3 to 5 years", 24.5), ("6 to 10 years", 22.0), ("more than 10 years", 13.5)]),
        ),
        (Attribute::PoliticalAffiliation, w(&[("Democrat", 49.0), ("Republican", 39.5), ("Independent", 11.4)])),
    ]);
    ProfileSampler { weights }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub name: String,
    /// Preference direction; the effective coefficients are `true_beta * scale`.
    #[serde(with = "crate::choice_model::named_beta")]
    pub true_beta: Beta,
    /// Choice determinism: larger means less noisy choices.
    pub scale: f64,
    pub profile_sampler: ProfileSampler,
}

impl Archetype {
    /// Builds an archetype whose effective coefficient vector has norm `strength`.
    pub fn with_strength(name: &str, direction: Beta, strength: f64, profile_sampler: ProfileSampler) -> Self {
        let norm = direction.iter().map(|b| b * b).sum::<f64>().sqrt();
        Self {
            name: name.to_string(),
            true_beta: direction.map(|b| b / norm),
            scale: strength,
            profile_sampler,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid(format!("archetype {}: scale must be positive", self.name)));
        }
        if self.true_beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid(format!("archetype {}: non-finite coefficient", self.name)));
        }
        self.profile_sampler.validate()
    }

    pub fn effective_prefs(&self) -> PreferenceVector {
        PreferenceVector::from_beta(self.true_beta.map(|b| b * self.scale))
    }
}

/// Five validation archetypes with `|beta| * scale = 5`, shaped after common
/// preference patterns: specificity-first, precision-first, opportunity and
/// consistency minded, fairness averse, and parity-first.
pub fn default_archetypes() -> Vec<Archetype> {
    let base = baseline_profile_sampler();
    vec![
        Archetype::with_strength("specificity-first", [0.2, 1.0, 0.0, -0.5, 0.0, 0.0, 0.0], 5.0, base.clone()),
        Archetype::with_strength(
            "precision-first",
            [0.2, -0.4, 0.0, 1.0, 0.0, 0.0, 0.0],
            5.0,
            base.clone().tilted(Attribute::Gender, "female", 1.2),
        ),
        Archetype::with_strength(
            "opportunity-minded",
            [0.0, 0.0, 0.3, 0.0, -0.4, 1.0, 0.5],
            5.0,
            base.clone().tilted(Attribute::ProgrammingYears, "6 to 10 years", 2.5).tilted(Attribute::Education, "high school graduate", 0.4),
        ),
        Archetype::with_strength(
            "fairness-averse",
            [-0.3, -0.3, -0.3, 0.0, 0.0, -0.5, -1.0],
            5.0,
            base.clone().tilted(Attribute::Race, "White", 0.4).tilted(Attribute::IncomeBand, "$75,000 to $99,999", 1.6),
        ),
        Archetype::with_strength(
            "parity-first",
            [0.0, 0.5, -0.5, 0.0, 1.0, -0.5, 0.0],
            5.0,
            base.tilted(Attribute::AgeBand, "45-54", 3.0).tilted(Attribute::IncomeBand, "$75,000 to $99,999", 2.5),
        ),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChoiceMode {
    /// Draw according to the logit choice probability.
    #[default]
    Stochastic,
    /// Pick the higher-utility alternative; ties go to A.
    Deterministic,
}

pub fn simulate_choice(true_prefs: &PreferenceVector, task: &ChoiceTask, rng_seed: u64, mode: ChoiceMode) -> Result<ChoiceRecord> {
    let (ma, mb) = task.metrics()?;
    let chosen = match mode {
        ChoiceMode::Stochastic => {
            let p = choice_probability(true_prefs, &ma, &mb)?;
            if seed::rng(rng_seed).random::<f64>() < p {
                Alternative::A
            } else {
                Alternative::B
            }
        }
        ChoiceMode::Deterministic => {
            if utility(true_prefs, &ma)? >= utility(true_prefs, &mb)? {
                Alternative::A
            } else {
                Alternative::B
            }
        }
    };
    ChoiceRecord::new(task.task_id.clone(), ma, mb, chosen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub respondents_per_archetype: usize,
    pub tasks_per_respondent: usize,
    pub applicants: usize,
    pub differing_rows: usize,
    pub mode: ChoiceMode,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            respondents_per_archetype: 150,
            tasks_per_respondent: crate::taskgen::DEFAULT_TASKS,
            applicants: crate::taskgen::DEFAULT_APPLICANTS,
            differing_rows: crate::taskgen::DEFAULT_DIFFERING_ROWS,
            mode: ChoiceMode::Stochastic,
            seed: 0,
        }
    }
}

/// A synthetic study: sessions, responses and profiles in the bundle
/// schemas, plus the generating coefficients of every respondent.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub sessions: Vec<SessionPlan>,
    pub responses: Vec<RespondentResponses>,
    pub profiles: Vec<ParticipantProfile>,
    pub truth: Vec<GroundTruth>,
}

impl SimulatedDataset {
    pub fn records(&self) -> Result<BTreeMap<String, Vec<ChoiceRecord>>> {
        choice_records(&self.sessions, &self.responses)
    }
}

struct Respondent {
    session: SessionPlan,
    response: RespondentResponses,
    profile: ParticipantProfile,
    truth: GroundTruth,
}

fn simulate_respondent(archetype: &Archetype, index: u64, config: &PopulationConfig) -> Result<Respondent> {
    let rs = seed::derive(config.seed, index);
    let id = format!("resp-{index:05}");
    let session = generate_session(seed::derive(rs, 0), config.applicants, config.differing_rows, config.tasks_per_respondent)?;
    let prefs = archetype.effective_prefs();
    let choice_seed = seed::derive(rs, 1);
    let choices = session
        .tasks
        .iter()
        .enumerate()
        .map(|(t, task)| {
            let r = simulate_choice(&prefs, task, seed::derive(choice_seed, t as u64), config.mode)?;
            Ok(Choice {
                task_id: r.task_id,
                chosen: r.chosen,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let profile = archetype.profile_sampler.sample(&id, &mut seed::rng(seed::derive(rs, 2)));
    Ok(Respondent {
        response: RespondentResponses {
            respondent_id: id.clone(),
            session_id: session.session_id.clone(),
            attention_answer: Some(session.attention_check.correct),
            flags: QualityFlags::default(),
            choices,
            started_at: None,
            completed_at: None,
        },
        session,
        profile,
        truth: GroundTruth {
            respondent_id: id,
            archetype: archetype.name.clone(),
            prefs,
        },
    })
}

/// Simulates `respondents_per_archetype` respondents for each archetype,
/// archetype-major. Respondent `i` (global index) uses seed
/// `derive(config.seed, i)`.
pub fn simulate_population(archetypes: &[Archetype], config: &PopulationConfig, parallel: bool) -> Result<SimulatedDataset> {
    if archetypes.is_empty() || config.respondents_per_archetype == 0 || config.tasks_per_respondent == 0 {
        return Err(Error::invalid("archetypes, respondents and tasks must all be at least 1"));
    }
    for a in archetypes {
        a.validate()?;
    }
    let jobs: Vec<(u64, &Archetype)> = archetypes
        .iter()
        .flat_map(|a| std::iter::repeat_n(a, config.respondents_per_archetype))
        .enumerate()
        .map(|(i, a)| (i as u64, a))
        .collect();
    let run = |&(i, a): &(u64, &Archetype)| simulate_respondent(a, i, config);
    let people: Vec<Respondent> = if parallel {
        jobs.par_iter().map(run).collect::<Result<_>>()?
    } else {
        jobs.iter().map(run).collect::<Result<_>>()?
    };
    let mut out = SimulatedDataset {
        sessions: Vec::with_capacity(people.len()),
        responses: Vec::with_capacity(people.len()),
        profiles: Vec::with_capacity(people.len()),
        truth: Vec::with_capacity(people.len()),
    };
    for p in people {
        out.sessions.push(p.session);
        out.responses.push(p.response);
        out.profiles.push(p.profile);
        out.truth.push(p.truth);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub resolution: f64,
    /// Refuse searches with more lattice points than this.
    pub max_points: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lower: -10.0,
            upper: 10.0,
            resolution: 0.05,
            max_points: 10_000_000,
        }
    }
}

impl GridSpec {
    pub fn points_per_axis(&self) -> u64 {
        ((self.upper - self.lower) / self.resolution).round() as u64 + 1
    }

    fn value(&self, i: u64) -> f64 {
        self.lower + i as f64 * self.resolution
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFit {
    pub prefs: PreferenceVector,
    pub penalized_log_likelihood: f64,
    pub points_evaluated: u64,
}

/// Exhaustive lattice maximization of the ridge-penalized log-likelihood
/// over at most three coefficients; all others are held at zero. First
/// maximum in lexicographic lattice order wins.
pub fn grid_oracle_fit(records: &[ChoiceRecord], dims: &[Metric], grid: &GridSpec, ridge_lambda: f64) -> Result<GridFit> {
    if records.is_empty() {
        return Err(Error::invalid("grid search needs at least one record"));
    }
    if dims.is_empty() || dims.len() > 3 {
        return Err(Error::invalid(format!("grid search supports 1 to 3 coefficients, got {}", dims.len())));
    }
    if (1..dims.len()).any(|i| dims[..i].contains(&dims[i])) {
        return Err(Error::invalid("grid dimensions must be distinct"));
    }
    if !(grid.resolution > 0.0 && grid.upper > grid.lower) {
        return Err(Error::invalid("grid needs upper > lower and a positive resolution"));
    }
    let m = grid.points_per_axis();
    let total = m.checked_pow(dims.len() as u32).unwrap_or(u64::MAX);
    if total > grid.max_points {
        return Err(Error::invalid(format!("grid has {total} points, budget is {}", grid.max_points)));
    }

    // Per record: metric difference toward the chosen alternative, on `dims`.
    let z: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let a = r.metrics_a.defined()?;
            let b = r.metrics_b.defined()?;
            let sign = if r.chosen == Alternative::A { 1.0 } else { -1.0 };
            Ok(dims.iter().map(|d| sign * (a[d.index()] - b[d.index()])).collect())
        })
        .collect::<Result<_>>()?;

    let mut best = (f64::NEG_INFINITY, vec![0u64; dims.len()]);
    let mut idx = vec![0u64; dims.len()];
    let mut partial = vec![vec![0.0; z.len()]; dims.len() + 1];
    search(grid, &z, ridge_lambda, 0, 0.0, &mut idx, &mut partial, &mut best);

    let mut beta = [0.0; METRIC_COUNT];
    for (d, &i) in dims.iter().zip(&best.1) {
        beta[d.index()] = grid.value(i);
    }
    Ok(GridFit {
        prefs: PreferenceVector::from_beta(beta),
        penalized_log_likelihood: best.0,
        points_evaluated: total,
    })
}

#[allow(clippy::too_many_arguments)]
fn search(
    grid: &GridSpec,
    z: &[Vec<f64>],
    lambda: f64,
    level: usize,
    penalty: f64,
    idx: &mut Vec<u64>,
    partial: &mut Vec<Vec<f64>>,
    best: &mut (f64, Vec<u64>),
) {
    let depth = idx.len();
    for i in 0..grid.points_per_axis() {
        let b = grid.value(i);
        idx[level] = i;
        let (head, tail) = partial.split_at_mut(level + 1);
        for (r, zr) in z.iter().enumerate() {
            tail[0][r] = head[level][r] + b * zr[level];
        }
        let pen = penalty + b * b;
        if level + 1 == depth {
            let ll: f64 = partial[depth].iter().map(|&s| log_sigmoid(s)).sum();
            let value = ll - 0.5 * lambda * pen;
            if value > best.0 {
                *best = (value, idx.clone());
            }
        } else {
            search(grid, z, lambda, level + 1, pen, idx, partial, best);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentRecovery {
    pub respondent_id: String,
    pub archetype: String,
    /// `None` when either coefficient vector is zero.
    pub cosine: Option<f64>,
    /// `None` when the true vector is zero.
    pub argmax_match: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecovery {
    pub respondents: usize,
    pub cosine_defined: usize,
    pub median_cosine: Option<f64>,
    pub argmax_compared: usize,
    pub argmax_agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_predicted: Option<f64>,
    pub observed_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub overall: GroupRecovery,
    pub per_archetype: BTreeMap<String, GroupRecovery>,
    /// Fitted probability of choosing A, binned in tenths, against the
    /// observed share of A choices.
    pub calibration: Vec<CalibrationBin>,
    pub per_respondent: Vec<RespondentRecovery>,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

fn summarize(rows: &[&RespondentRecovery]) -> GroupRecovery {
    let mut cos: Vec<f64> = rows.iter().filter_map(|r| r.cosine).collect();
    let matches: Vec<bool> = rows.iter().filter_map(|r| r.argmax_match).collect();
    GroupRecovery {
        respondents: rows.len(),
        cosine_defined: cos.len(),
        median_cosine: median(&mut cos),
        argmax_compared: matches.len(),
        argmax_agreement: (!matches.is_empty()).then(|| matches.iter().filter(|&&m| m).count() as f64 / matches.len() as f64),
    }
}

/// Compares fitted coefficients with the generating ones.
pub fn recovery_report(truth: &[GroundTruth], records: &BTreeMap<String, Vec<ChoiceRecord>>, fits: &BTreeMap<String, PreferenceVector>) -> Result<RecoveryReport> {
    let mut per_respondent = Vec::with_capacity(truth.len());
    let mut bins = vec![(0usize, 0.0f64, 0usize); 10];
    for t in truth {
        let fitted = fits
            .get(&t.respondent_id)
            .ok_or_else(|| Error::invalid(format!("no fit for respondent {}", t.respondent_id)))?;
        let true_dom = dominant_metric(&t.prefs.beta);
        per_respondent.push(RespondentRecovery {
            respondent_id: t.respondent_id.clone(),
            archetype: t.archetype.clone(),
            cosine: cosine_similarity(&t.prefs.beta, &fitted.beta),
            argmax_match: true_dom.map(|d| dominant_metric(&fitted.beta) == Some(d)),
        });
        for r in records.get(&t.respondent_id).map(Vec::as_slice).unwrap_or(&[]) {
            let p = choice_probability(fitted, &r.metrics_a, &r.metrics_b)?;
            let b = ((p * 10.0) as usize).min(9);
            bins[b].0 += 1;
            bins[b].1 += p;
            bins[b].2 += usize::from(r.chosen == Alternative::A);
        }
    }
    let all: Vec<&RespondentRecovery> = per_respondent.iter().collect();
    let mut groups: BTreeMap<String, Vec<&RespondentRecovery>> = BTreeMap::new();
    for r in &per_respondent {
        groups.entry(r.archetype.clone()).or_default().push(r);
    }
    Ok(RecoveryReport {
        overall: summarize(&all),
        per_archetype: groups.into_iter().map(|(k, v)| (k, summarize(&v))).collect(),
        calibration: bins
            .into_iter()
            .enumerate()
            .map(|(i, (count, psum, a))| CalibrationBin {
                lower: i as f64 / 10.0,
                upper: (i + 1) as f64 / 10.0,
                count,
                mean_predicted: (count > 0).then(|| psum / count as f64),
                observed_rate: (count > 0).then(|| a as f64 / count as f64),
            })
            .collect(),
        per_respondent,
    })
}

/// Normalized coefficient vectors as clustering input.
pub fn normalized_points<'a>(prefs: impl IntoIterator<Item = &'a PreferenceVector>) -> Vec<Vec<f64>> {
    prefs.into_iter().map(|p| normalize(p).beta.to_vec()).collect()
}
