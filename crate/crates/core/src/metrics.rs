//! Performance and fairness metrics of a hypothetical model's predictions
//! over a scenario of job applicants.
//!
//! Seven metrics are computed: accuracy, specificity, sensitivity, precision,
//! disparate impact (DI), equalized odds (EO) and the counterfactual-fairness
//! proxy (CF). A metric whose denominator is zero is reported as undefined
//! rather than given a conventional number.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Race {
    Black,
    White,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Expertise {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Applicant {
    pub race: Race,
    pub expertise: Expertise,
    /// Actual matching outcome; `true` means the applicant was hired.
    pub actual: bool,
}

/// An ordered roster of applicants. Row index is the join key for predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    applicants: Vec<Applicant>,
}

impl Scenario {
    pub const MIN_APPLICANTS: usize = 2;

    pub fn new(id: impl Into<String>, applicants: Vec<Applicant>) -> Result<Self> {
        if applicants.len() < Self::MIN_APPLICANTS {
            return Err(Error::invalid(format!(
                "a scenario needs at least {} applicants, got {}",
                Self::MIN_APPLICANTS,
                applicants.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            applicants,
        })
    }

    pub fn applicants(&self) -> &[Applicant] {
        &self.applicants
    }

    pub fn len(&self) -> usize {
        self.applicants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.applicants.is_empty()
    }

    /// The prediction vector that agrees with the actual outcome on every row.
    pub fn actual_predictions(&self) -> PredictionVector {
        PredictionVector(self.applicants.iter().map(|a| a.actual).collect())
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.applicants.len() < Self::MIN_APPLICANTS {
            return Err(Error::invalid(format!(
                "scenario {} has {} applicants (minimum {})",
                self.id,
                self.applicants.len(),
                Self::MIN_APPLICANTS
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionVector(pub Vec<bool>);

impl PredictionVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }
}

impl From<Vec<bool>> for PredictionVector {
    fn from(v: Vec<bool>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// The seven metrics, in canonical feature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "Acc")]
    Accuracy,
    #[serde(rename = "Spe")]
    Specificity,
    #[serde(rename = "Sen")]
    Sensitivity,
    #[serde(rename = "Pre")]
    Precision,
    #[serde(rename = "DI")]
    DisparateImpact,
    #[serde(rename = "EO")]
    EqualizedOdds,
    #[serde(rename = "CF")]
    CounterfactualFairness,
}

pub const METRIC_COUNT: usize = 7;

impl Metric {
    pub const ALL: [Metric; METRIC_COUNT] = [
        Metric::Accuracy,
        Metric::Specificity,
        Metric::Sensitivity,
        Metric::Precision,
        Metric::DisparateImpact,
        Metric::EqualizedOdds,
        Metric::CounterfactualFairness,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Metric::Accuracy => "Acc",
            Metric::Specificity => "Spe",
            Metric::Sensitivity => "Sen",
            Metric::Precision => "Pre",
            Metric::DisparateImpact => "DI",
            Metric::EqualizedOdds => "EO",
            Metric::CounterfactualFairness => "CF",
        }
    }

    pub fn from_short_name(name: &str) -> Option<Metric> {
        Metric::ALL
            .into_iter()
            .find(|m| m.short_name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Metric values of one model on one scenario. `None` marks an undefined metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "NamedMetrics", into = "NamedMetrics")]
pub struct MetricVector {
    values: [Option<f64>; METRIC_COUNT],
}

impl MetricVector {
    pub fn new(values: [Option<f64>; METRIC_COUNT]) -> Self {
        Self { values }
    }

    pub fn from_defined(values: [f64; METRIC_COUNT]) -> Self {
        Self {
            values: values.map(Some),
        }
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.values[metric.index()]
    }

    pub fn raw(&self) -> &[Option<f64>; METRIC_COUNT] {
        &self.values
    }

    pub fn is_fully_defined(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    pub fn undefined(&self) -> impl Iterator<Item = Metric> + '_ {
        Metric::ALL
            .into_iter()
            .filter(|m| self.values[m.index()].is_none())
    }

    /// All seven values, or the first undefined metric as an error.
    pub fn defined(&self) -> Result<[f64; METRIC_COUNT]> {
        let mut out = [0.0; METRIC_COUNT];
        for m in Metric::ALL {
            out[m.index()] = self.values[m.index()].ok_or(Error::UndefinedMetric(m))?;
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct NamedMetrics {
    #[serde(rename = "Acc")]
    acc: Option<f64>,
    #[serde(rename = "Spe")]
    spe: Option<f64>,
    #[serde(rename = "Sen")]
    sen: Option<f64>,
    #[serde(rename = "Pre")]
    pre: Option<f64>,
    #[serde(rename = "DI")]
    di: Option<f64>,
    #[serde(rename = "EO")]
    eo: Option<f64>,
    #[serde(rename = "CF")]
    cf: Option<f64>,
}

impl From<NamedMetrics> for MetricVector {
    fn from(n: NamedMetrics) -> Self {
        Self::new([n.acc, n.spe, n.sen, n.pre, n.di, n.eo, n.cf])
    }
}

impl From<MetricVector> for NamedMetrics {
    fn from(m: MetricVector) -> Self {
        let [acc, spe, sen, pre, di, eo, cf] = m.values;
        Self {
            acc,
            spe,
            sen,
            pre,
            di,
            eo,
            cf,
        }
    }
}

fn check_lengths(scenario: &Scenario, preds: &PredictionVector) -> Result<()> {
    if scenario.len() != preds.len() {
        return Err(Error::LengthMismatch {
            expected: scenario.len(),
            found: preds.len(),
        });
    }
    Ok(())
}

pub fn confusion(scenario: &Scenario, preds: &PredictionVector) -> Result<ConfusionCounts> {
    check_lengths(scenario, preds)?;
    let mut c = ConfusionCounts::default();
    for (a, &p) in scenario.applicants().iter().zip(preds.as_slice()) {
        match (a.actual, p) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn ratio_of_rates(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    match (num, den) {
        (Some(n), Some(d)) if d > 0.0 => Some(n / d),
        _ => None,
    }
}

pub fn metric_vector(scenario: &Scenario, preds: &PredictionVector) -> Result<MetricVector> {
    let c = confusion(scenario, preds)?;
    let n = scenario.len();

    // Per race: [applicants, predicted TRUE, actually hired, hired and predicted TRUE]
    let mut group = [[0usize; 4]; 2];
    let mut high_and_selected = 0;
    for (a, &p) in scenario.applicants().iter().zip(preds.as_slice()) {
        let g = &mut group[a.race as usize];
        g[0] += 1;
        g[1] += usize::from(p);
        g[2] += usize::from(a.actual);
        g[3] += usize::from(a.actual && p);
        if a.expertise == Expertise::High && p {
            high_and_selected += 1;
        }
    }
    let [black, white] = group;

    let di = ratio_of_rates(ratio(black[1], black[0]), ratio(white[1], white[0]));
    let eo = ratio_of_rates(ratio(black[3], black[2]), ratio(white[3], white[2]));

    Ok(MetricVector::new([
        ratio(c.tp + c.tn, n),
        ratio(c.tn, c.tn + c.fp),
        ratio(c.tp, c.tp + c.fn_),
        ratio(c.tp, c.tp + c.fp),
        di,
        eo,
        // Denominator is every applicant, not just the high-expertise ones.
        ratio(high_and_selected, n),
    ]))
}
