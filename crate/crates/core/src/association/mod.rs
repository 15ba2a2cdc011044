//! Lift analysis between demographic attribute values and preference clusters.
//!
//! Every participant contributes one coarse value per binarized attribute and
//! one cluster label. For a value `A` and a cluster `B`,
//! `lift = P(A and B) / (P(A) * P(B)) = count(A, B) * n / (count(A) * count(B))`.

pub mod reference;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datastore::derived;
use crate::error::{Error, Result};

/// Questionnaire attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    AgeBand,
    Gender,
    Race,
    IncomeBand,
    WorkStatus,
    Occupation,
    Education,
    ProgrammingYears,
    PoliticalAffiliation,
}

impl Attribute {
    pub const ALL: [Attribute; 9] = [
        Attribute::AgeBand,
        Attribute::Gender,
        Attribute::Race,
        Attribute::IncomeBand,
        Attribute::WorkStatus,
        Attribute::Occupation,
        Attribute::Education,
        Attribute::ProgrammingYears,
        Attribute::PoliticalAffiliation,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Attribute::AgeBand => "age_band",
            Attribute::Gender => "gender",
            Attribute::Race => "race",
            Attribute::IncomeBand => "income_band",
            Attribute::WorkStatus => "work_status",
            Attribute::Occupation => "occupation",
            Attribute::Education => "education",
            Attribute::ProgrammingYears => "programming_years",
            Attribute::PoliticalAffiliation => "political_affiliation",
        }
    }

    /// Closed answer set for the attribute.
    pub fn vocabulary(self) -> &'static [&'static str] {
        match self {
            Attribute::AgeBand => &["18-24", "25-34", "35-44", "45-54", "55-64", "65+"],
            Attribute::Gender => &["female", "male", "non-binary", "not listed"],
            Attribute::Race => &[
                "White",
                "African American",
                "Asian",
                "Hispanic",
                "Native American or Alaska Native",
                "Native Hawaiian or Pacific Islander",
            ],
            Attribute::IncomeBand => &[
                "less than $25,000",
                "$25,000 to $49,999",
                "$50,000 to $74,999",
                "$75,000 to $99,999",
                "$100,000 to $149,999",
                "$150,000 or more",
            ],
            Attribute::WorkStatus => &[
                "full-time",
                "part-time",
                "student with full-time job",
                "student",
                "unemployed",
                "retired",
            ],
            Attribute::Occupation => &[
                "professional",
                "managerial",
                "self-employed",
                "clerical or administrative",
                "sales",
                "service",
                "skilled trade",
                "other",
            ],
            Attribute::Education => &[
                "less than high school",
                "high school graduate",
                "some college",
                "2-year degree",
                "4-year degree",
                "professional degree",
            ],
            Attribute::ProgrammingYears => &[
                "none",
                "less than 1 year",
                "1 to 2 years",
                "3 to 5 years",
                "6 to 10 years",
                "more than 10 years",
            ],
            Attribute::PoliticalAffiliation => &["Democrat", "Republican", "Independent", "other"],
        }
    }

    pub fn accepts(self, value: &str) -> bool {
        self.vocabulary().contains(&value)
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.key() == s)
            .ok_or_else(|| Error::invalid(format!("unknown attribute {s:?}")))
    }
}

/// One participant's questionnaire answers. An absent attribute is missing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantProfile {
    pub participant_id: String,
    #[serde(flatten)]
    pub values: BTreeMap<Attribute, String>,
}

impl ParticipantProfile {
    pub fn new(participant_id: impl Into<String>) -> Self {
        Self {
            participant_id: participant_id.into(),
            values: BTreeMap::new(),
        }
    }

    pub fn with(mut self, attribute: Attribute, value: impl Into<String>) -> Self {
        self.values.insert(attribute, value.into());
        self
    }

    pub fn get(&self, attribute: Attribute) -> Option<&str> {
        self.values.get(&attribute).map(String::as_str)
    }

    /// Attributes whose value is outside the closed vocabulary.
    pub fn vocabulary_violations(&self) -> Vec<(Attribute, String)> {
        self.values
            .iter()
            .filter(|(a, v)| !a.accepts(v))
            .map(|(a, v)| (*a, v.clone()))
            .collect()
    }
}

/// Maps one questionnaire attribute onto coarse groups for the lift table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeBinarization {
    /// Column-group name in the lift table, e.g. "Education level".
    pub name: String,
    pub source: Attribute,
    pub map: BTreeMap<String, String>,
}

/// Coarse value assigned to participants with no answer for the attribute.
pub const MISSING: &str = "(missing)";

impl AttributeBinarization {
    pub fn validate(&self) -> Result<()> {
        for v in self.source.vocabulary() {
            if !self.map.contains_key(*v) {
                return Err(Error::invalid(format!(
                    "binarization {:?} has no mapping for {} value {v:?}",
                    self.name, self.source
                )));
            }
        }
        for k in self.map.keys() {
            if !self.source.accepts(k) {
                return Err(Error::invalid(format!(
                    "binarization {:?} maps {k:?}, which is not a {} value",
                    self.name, self.source
                )));
            }
        }
        Ok(())
    }

    pub fn coarse(&self, profile: &ParticipantProfile) -> Result<String> {
        match profile.get(self.source) {
            None => Ok(MISSING.to_string()),
            Some(raw) => self.map.get(raw).cloned().ok_or_else(|| {
                Error::invalid(format!(
                    "participant {} has {} value {raw:?} outside the vocabulary",
                    profile.participant_id, self.source
                ))
            }),
        }
    }

    /// Coarse values in a stable order.
    pub fn groups(&self) -> Vec<String> {
        self.map.values().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    }
}

/// The default coarse groupings shipped with the toolkit.
pub fn default_binarizations() -> Vec<AttributeBinarization> {
    let maps: Vec<AttributeBinarization> =
        serde_json::from_str(include_str!("../../assets/binarizations.json")).expect("bundled binarizations parse");
    debug_assert!(maps.iter().all(|b| b.validate().is_ok()));
    maps
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftThresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for LiftThresholds {
    fn default() -> Self {
        Self { low: 0.75, high: 1.25 }
    }
}

impl LiftThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.low > 0.0 && self.low <= 1.0 && self.high >= 1.0 && self.high.is_finite()) {
            return Err(Error::invalid(format!(
                "thresholds must satisfy 0 < low <= 1 <= high (got {}, {})",
                self.low, self.high
            )));
        }
        Ok(())
    }

    pub fn flag(&self, lift: f64) -> LiftFlag {
        if lift > self.high {
            LiftFlag::High
        } else if lift < self.low {
            LiftFlag::Low
        } else {
            LiftFlag::None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiftFlag {
    High,
    Low,
    None,
}

/// `count_ab * n / (count_a * count_b)`.
pub fn lift(count_ab: u64, count_a: u64, count_b: u64, n_total: u64) -> Result<f64> {
    if count_a == 0 || count_b == 0 {
        return Err(Error::invalid("lift is undefined when either marginal count is zero"));
    }
    if count_ab > count_a.min(count_b) || count_a > n_total || count_b > n_total {
        return Err(Error::invalid(format!(
            "inconsistent counts: ab={count_ab}, a={count_a}, b={count_b}, n={n_total}"
        )));
    }
    Ok(count_ab as f64 * n_total as f64 / (count_a as f64 * count_b as f64))
}

/// Value-by-cluster counts for one binarized attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contingency {
    pub attribute: String,
    pub values: Vec<String>,
    pub clusters: Vec<String>,
    /// `counts[value][cluster]`.
    pub counts: Vec<Vec<u64>>,
}

impl Contingency {
    pub fn cluster_size(&self, cluster: usize) -> u64 {
        self.counts.iter().map(|row| row[cluster]).sum()
    }

    pub fn value_total(&self, value: usize) -> u64 {
        self.counts[value].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn rows(&self, thresholds: &LiftThresholds) -> Result<Vec<LiftRow>> {
        let n = self.total();
        let mut rows = Vec::new();
        for (c, cluster) in self.clusters.iter().enumerate() {
            let size = self.cluster_size(c);
            for (v, value) in self.values.iter().enumerate() {
                let total = self.value_total(v);
                let count = self.counts[v][c];
                // A value or cluster nobody has contributes no row.
                if total == 0 || size == 0 {
                    continue;
                }
                let l = derived(lift(count, total, size, n)?);
                rows.push(LiftRow {
                    attribute: self.attribute.clone(),
                    value: value.clone(),
                    cluster: cluster.clone(),
                    count,
                    cluster_size: size,
                    value_total: total,
                    n_total: n,
                    percentage: derived(100.0 * count as f64 / size as f64),
                    lift: l,
                    flag: thresholds.flag(l),
                });
            }
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftRow {
    pub attribute: String,
    pub value: String,
    pub cluster: String,
    pub count: u64,
    pub cluster_size: u64,
    pub value_total: u64,
    pub n_total: u64,
    /// Share of the cluster holding this value, in percent.
    pub percentage: f64,
    pub lift: f64,
    pub flag: LiftFlag,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LiftTable {
    pub rows: Vec<LiftRow>,
}

impl LiftTable {
    pub fn from_contingencies(tables: &[Contingency], thresholds: &LiftThresholds) -> Result<Self> {
        thresholds.validate()?;
        let mut rows = Vec::new();
        for t in tables {
            rows.extend(t.rows(thresholds)?);
        }
        Ok(Self { rows })
    }

    pub fn find(&self, attribute: &str, value: &str, cluster: &str) -> Option<&LiftRow> {
        self.rows
            .iter()
            .find(|r| r.attribute == attribute && r.value == value && r.cluster == cluster)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &LiftRow> {
        self.rows.iter().filter(|r| r.flag != LiftFlag::None)
    }
}

/// Participants left out of a lift table, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LiftExclusions {
    /// Clustered respondents without a profile; they are not counted.
    pub missing_profile: Vec<String>,
    /// Profiles of respondents that were not clustered.
    pub unassigned_profile: Vec<String>,
}

impl LiftExclusions {
    pub fn is_empty(&self) -> bool {
        self.missing_profile.is_empty() && self.unassigned_profile.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftReport {
    pub table: LiftTable,
    pub contingencies: Vec<Contingency>,
    pub exclusions: LiftExclusions,
}

/// Builds the full attribute-value by cluster lift table.
///
/// `assignments` maps respondent id to cluster label. Respondents without a
/// profile are reported in the exclusions and left out of every count.
pub fn lift_table(
    assignments: &BTreeMap<String, String>,
    profiles: &[ParticipantProfile],
    binarizations: &[AttributeBinarization],
    thresholds: &LiftThresholds,
) -> Result<LiftReport> {
    thresholds.validate()?;
    for b in binarizations {
        b.validate()?;
    }
    let by_id: BTreeMap<&str, &ParticipantProfile> =
        profiles.iter().map(|p| (p.participant_id.as_str(), p)).collect();
    let mut exclusions = LiftExclusions::default();
    let mut members: Vec<(&str, &ParticipantProfile)> = Vec::new();
    for (id, cluster) in assignments {
        match by_id.get(id.as_str()) {
            Some(p) => members.push((cluster.as_str(), p)),
            None => exclusions.missing_profile.push(id.clone()),
        }
    }
    exclusions.unassigned_profile = profiles
        .iter()
        .filter(|p| !assignments.contains_key(&p.participant_id))
        .map(|p| p.participant_id.clone())
        .collect();

    let clusters: Vec<String> = members.iter().map(|(c, _)| c.to_string()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut contingencies = Vec::new();
    for b in binarizations {
        let coarse: Vec<String> = members.iter().map(|(_, p)| b.coarse(p)).collect::<Result<_>>()?;
        let mut values = b.groups();
        if coarse.iter().any(|c| c == MISSING) {
            values.push(MISSING.to_string());
        }
        let mut counts = vec![vec![0u64; clusters.len()]; values.len()];
        for ((cluster, _), value) in members.iter().zip(&coarse) {
            let v = values.iter().position(|x| x == value).expect("value listed");
            let c = clusters.iter().position(|x| x == cluster).expect("cluster listed");
            counts[v][c] += 1;
        }
        contingencies.push(Contingency {
            attribute: b.name.clone(),
            values,
            clusters: clusters.clone(),
            counts,
        });
    }
    let table = LiftTable::from_contingencies(&contingencies, thresholds)?;
    Ok(LiftReport {
        table,
        contingencies,
        exclusions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lift_reference_cells() {
        assert!((lift(4, 164, 41, 837).unwrap() - 0.498).abs() < 5e-4);
        assert!((lift(14, 394, 22, 837).unwrap() - 1.352).abs() < 5e-4);
        assert_eq!(lift(6, 12, 50, 100).unwrap(), 1.0);
    }

    #[test]
    fn lift_rejects_zero_marginals() {
        assert!(lift(0, 0, 5, 10).is_err());
        assert!(lift(0, 5, 0, 10).is_err());
        assert!(lift(6, 5, 7, 10).is_err());
        assert!(lift(1, 11, 7, 10).is_err());
    }

    #[test]
    fn flags_follow_thresholds() {
        let t = LiftThresholds::default();
        assert_eq!(t.flag(1.251), LiftFlag::High);
        assert_eq!(t.flag(1.25), LiftFlag::None);
        assert_eq!(t.flag(0.75), LiftFlag::None);
        assert_eq!(t.flag(0.749), LiftFlag::Low);
        assert!(LiftThresholds { low: 1.2, high: 1.1 }.validate().is_err());
    }

    #[test]
    fn default_binarizations_are_total() {
        let maps = default_binarizations();
        assert_eq!(maps.len(), 8);
        for b in &maps {
            b.validate().unwrap();
        }
    }

    #[test]
    fn partial_binarization_is_rejected() {
        let mut b = default_binarizations().remove(1);
        b.map.remove("some college");
        assert!(b.validate().is_err());
    }

    fn profile(id: &str, edu: &str, race: &str) -> ParticipantProfile {
        ParticipantProfile::new(id).with(Attribute::Education, edu).with(Attribute::Race, race)
    }

    fn edu_race() -> Vec<AttributeBinarization> {
        default_binarizations()
            .into_iter()
            .filter(|b| matches!(b.source, Attribute::Education | Attribute::Race))
            .collect()
    }

    #[test]
    fn single_cluster_has_unit_lift() {
        let profiles = vec![
            profile("a", "4-year degree", "White"),
            profile("b", "some college", "Asian"),
            profile("c", "4-year degree", "Hispanic"),
        ];
        let assignments = profiles.iter().map(|p| (p.participant_id.clone(), "A".to_string())).collect();
        let report = lift_table(&assignments, &profiles, &edu_race(), &LiftThresholds::default()).unwrap();
        assert!(report.table.rows.iter().all(|r| r.lift == 1.0));
        assert!(report.exclusions.is_empty());
    }

    #[test]
    fn value_confined_to_one_cluster() {
        // "2 years or less" only in cluster B of size 2; n = 5 -> lift = 5 / 2.
        let profiles = vec![
            profile("a", "4-year degree", "White"),
            profile("b", "4-year degree", "White"),
            profile("c", "4-year degree", "White"),
            profile("d", "some college", "White"),
            profile("e", "high school graduate", "White"),
        ];
        let assignments: BTreeMap<String, String> = [("a", "A"), ("b", "A"), ("c", "A"), ("d", "B"), ("e", "B")]
            .iter()
            .map(|(i, c)| (i.to_string(), c.to_string()))
            .collect();
        let report = lift_table(&assignments, &profiles, &edu_race(), &LiftThresholds::default()).unwrap();
        let row = report.table.find("Education level", "2 years or less", "B").unwrap();
        assert_eq!(row.lift, 2.5);
        assert_eq!(row.flag, LiftFlag::High);
        assert_eq!(row.percentage, 100.0);
    }

    #[test]
    fn missing_profiles_are_reported() {
        let profiles = vec![profile("a", "4-year degree", "White"), profile("z", "4-year degree", "White")];
        let assignments: BTreeMap<String, String> =
            [("a", "A"), ("b", "A")].iter().map(|(i, c)| (i.to_string(), c.to_string())).collect();
        let report = lift_table(&assignments, &profiles, &edu_race(), &LiftThresholds::default()).unwrap();
        assert_eq!(report.exclusions.missing_profile, vec!["b"]);
        assert_eq!(report.exclusions.unassigned_profile, vec!["z"]);
        assert_eq!(report.table.rows[0].n_total, 1);
    }

    #[test]
    fn missing_answers_get_their_own_value() {
        let profiles = vec![profile("a", "4-year degree", "White"), ParticipantProfile::new("b").with(Attribute::Race, "Asian")];
        let assignments: BTreeMap<String, String> =
            [("a", "A"), ("b", "A")].iter().map(|(i, c)| (i.to_string(), c.to_string())).collect();
        let report = lift_table(&assignments, &profiles, &edu_race(), &LiftThresholds::default()).unwrap();
        assert!(report.table.find("Education level", MISSING, "A").is_some());
    }

    #[test]
    fn out_of_vocabulary_value_is_an_error() {
        let profiles = vec![profile("a", "PhD", "White")];
        let assignments = [("a".to_string(), "A".to_string())].into();
        assert!(lift_table(&assignments, &profiles, &edu_race(), &LiftThresholds::default()).is_err());
        assert_eq!(profiles[0].vocabulary_violations().len(), 1);
    }

    #[test]
    fn profile_json_is_flat() {
        let p = profile("r1", "4-year degree", "White");
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"participant_id":"r1","race":"White","education":"4-year degree"}"#);
        assert_eq!(serde_json::from_str::<ParticipantProfile>(&json).unwrap(), p);
    }

    fn arb_table() -> impl Strategy<Value = Contingency> {
        (2usize..4, 1usize..5).prop_flat_map(|(nv, nc)| {
            prop::collection::vec(prop::collection::vec(1u64..50, nc), nv).prop_map(move |counts| Contingency {
                attribute: "x".into(),
                values: (0..nv).map(|v| format!("v{v}")).collect(),
                clusters: (0..nc).map(|c| format!("c{c}")).collect(),
                counts,
            })
        })
    }

    proptest! {
        #[test]
        fn lift_is_symmetric(ab in 0u64..50, extra_a in 0u64..50, extra_b in 0u64..50, rest in 0u64..50) {
            let (a, b) = (ab + extra_a, ab + extra_b);
            prop_assume!(a > 0 && b > 0);
            let n = ab + extra_a + extra_b + rest;
            prop_assert_eq!(lift(ab, a, b, n).unwrap(), lift(ab, b, a, n).unwrap());
        }

        #[test]
        fn weighted_lift_averages_to_one(t in arb_table()) {
            let n = t.total() as f64;
            for c in 0..t.clusters.len() {
                let size = t.cluster_size(c);
                let avg: f64 = (0..t.values.len())
                    .map(|v| t.value_total(v) as f64 / n * lift(t.counts[v][c], t.value_total(v), size, t.total()).unwrap())
                    .sum();
                prop_assert!((avg - 1.0).abs() < 1e-12);
                let counted: u64 = (0..t.values.len()).map(|v| t.counts[v][c]).sum();
                prop_assert_eq!(counted, size);
            }
        }
    }
}
