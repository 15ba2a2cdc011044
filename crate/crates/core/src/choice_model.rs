//! Conditional-logit utility model over metric vectors.
//!
//! A respondent's utility for a model is `alpha + sum_k beta_k * x_k` over the
//! seven metric values. With i.i.d. extreme-value noise the probability of
//! picking A over B is the logistic function of the utility difference, so
//! the shared intercept cancels and only `beta` is estimable. Estimation
//! maximizes the ridge-penalized log-likelihood of one respondent's choices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Metric, MetricVector, METRIC_COUNT};
use crate::taskgen::ChoiceTask;

pub type Beta = [f64; METRIC_COUNT];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceVector {
    pub alpha: f64,
    #[serde(with = "named_beta")]
    pub beta: Beta,
}

impl Default for PreferenceVector {
    fn default() -> Self {
        Self::zero()
    }
}

impl PreferenceVector {
    pub fn zero() -> Self {
        Self {
            alpha: 0.0,
            beta: [0.0; METRIC_COUNT],
        }
    }

    pub fn from_beta(beta: Beta) -> Self {
        Self { alpha: 0.0, beta }
    }

    pub fn get(&self, metric: Metric) -> f64 {
        self.beta[metric.index()]
    }

    pub fn set(&mut self, metric: Metric, value: f64) {
        self.beta[metric.index()] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.beta.iter().all(|b| b.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.beta.iter().map(|b| b * b).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            alpha: self.alpha,
            beta: self.beta.map(|b| b * factor),
        }
    }
}

pub(crate) mod named_beta {
    use super::Beta;
    use crate::metrics::Metric;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(beta: &Beta, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<Metric, f64> = Metric::ALL.iter().map(|&m| (m, beta[m.index()])).collect();
        map.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Beta, D::Error> {
        let map = BTreeMap::<Metric, f64>::deserialize(d)?;
        let mut beta = [0.0; 7];
        for m in Metric::ALL {
            beta[m.index()] = *map
                .get(&m)
                .ok_or_else(|| D::Error::custom(format!("missing coefficient {m}")))?;
        }
        Ok(beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Alternative {
    A,
    B,
}

impl Alternative {
    pub fn other(self) -> Self {
        match self {
            Alternative::A => Alternative::B,
            Alternative::B => Alternative::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub task_id: String,
    pub metrics_a: MetricVector,
    pub metrics_b: MetricVector,
    pub chosen: Alternative,
}

impl ChoiceRecord {
    pub fn new(
        task_id: impl Into<String>,
        metrics_a: MetricVector,
        metrics_b: MetricVector,
        chosen: Alternative,
    ) -> Result<Self> {
        metrics_a.defined()?;
        metrics_b.defined()?;
        Ok(Self {
            task_id: task_id.into(),
            metrics_a,
            metrics_b,
            chosen,
        })
    }

    pub fn from_task(task: &ChoiceTask, chosen: Alternative) -> Result<Self> {
        let (a, b) = task.metrics()?;
        Self::new(task.task_id.clone(), a, b, chosen)
    }

    /// Metric difference oriented toward the chosen alternative.
    pub(crate) fn chosen_minus_other(&self) -> Result<Beta> {
        let a = self.metrics_a.defined()?;
        let b = self.metrics_b.defined()?;
        let sign = if self.chosen == Alternative::A { 1.0 } else { -1.0 };
        Ok(std::array::from_fn(|k| sign * (a[k] - b[k])))
    }
}

pub fn utility(prefs: &PreferenceVector, m: &MetricVector) -> Result<f64> {
    let x = m.defined()?;
    Ok(prefs.alpha + prefs.beta.iter().zip(x).map(|(b, x)| b * x).sum::<f64>())
}

/// Probability that `m_a` is chosen over `m_b`.
pub fn choice_probability(prefs: &PreferenceVector, m_a: &MetricVector, m_b: &MetricVector) -> Result<f64> {
    let ua = utility(prefs, m_a)?;
    let ub = utility(prefs, m_b)?;
    let top = ua.max(ub);
    let (ea, eb) = ((ua - top).exp(), (ub - top).exp());
    Ok(ea / (ea + eb))
}

/// `log(1 / (1 + exp(-z)))` without overflow.
pub(crate) fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &Beta, b: &Beta) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn log_likelihood(prefs: &PreferenceVector, records: &[ChoiceRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("log-likelihood needs at least one record"));
    }
    records.iter().try_fold(0.0, |acc, r| {
        let (chosen, other) = match r.chosen {
            Alternative::A => (&r.metrics_a, &r.metrics_b),
            Alternative::B => (&r.metrics_b, &r.metrics_a),
        };
        Ok(acc + log_sigmoid(utility(prefs, chosen)? - utility(prefs, other)?))
    })
}

/// `log_likelihood - (lambda / 2) * |beta|^2`. The intercept is not penalized.
pub fn penalized_log_likelihood(prefs: &PreferenceVector, records: &[ChoiceRecord], lambda: f64) -> Result<f64> {
    let ll = log_likelihood(prefs, records)?;
    Ok(ll - 0.5 * lambda * prefs.norm().powi(2))
}

/// Gradient of [`penalized_log_likelihood`] with respect to `beta`.
pub fn penalized_gradient(prefs: &PreferenceVector, records: &[ChoiceRecord], lambda: f64) -> Result<Beta> {
    if records.is_empty() {
        return Err(Error::invalid("gradient needs at least one record"));
    }
    let mut g = prefs.beta.map(|b| -lambda * b);
    for r in records {
        let z = r.chosen_minus_other()?;
        let w = sigmoid(-dot(&prefs.beta, &z));
        for k in 0..METRIC_COUNT {
            g[k] += w * z[k];
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub ridge_lambda: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Coefficients to estimate; the rest stay at zero.
    pub free_metrics: Vec<Metric>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            ridge_lambda: 0.01,
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            free_metrics: Metric::ALL.to_vec(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(Error::invalid(format!("ridge_lambda must be >= 0, got {}", self.ridge_lambda)));
        }
        if self.gradient_tolerance.is_nan() || self.gradient_tolerance <= 0.0 {
            return Err(Error::invalid("gradient_tolerance must be positive"));
        }
        if self.free_metrics.is_empty() {
            return Err(Error::invalid("at least one free metric is required"));
        }
        let mut seen = [false; METRIC_COUNT];
        for m in &self.free_metrics {
            if std::mem::replace(&mut seen[m.index()], true) {
                return Err(Error::invalid(format!("metric {m} listed twice")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub prefs: PreferenceVector,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub penalized_log_likelihood: f64,
    pub converged: bool,
}

/// Restricted problem: features projected on the free coordinates.
struct Problem {
    dims: Vec<usize>,
    rows: Vec<Vec<f64>>,
    lambda: f64,
}

impl Problem {
    fn objective(&self, w: &DVector<f64>) -> f64 {
        let ll: f64 = self
            .rows
            .iter()
            .map(|z| log_sigmoid(z.iter().zip(w.iter()).map(|(a, b)| a * b).sum()))
            .sum();
        ll - 0.5 * self.lambda * w.norm_squared()
    }

    fn gradient_and_neg_hessian(&self, w: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.dims.len();
        let mut g = -self.lambda * w;
        let mut h = DMatrix::<f64>::identity(p, p) * self.lambda;
        for z in &self.rows {
            let s: f64 = z.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            let miss = sigmoid(-s);
            let curv = miss * sigmoid(s);
            for i in 0..p {
                g[i] += miss * z[i];
                for j in 0..p {
                    h[(i, j)] += curv * z[i] * z[j];
                }
            }
        }
        (g, h)
    }

    fn to_prefs(&self, w: &DVector<f64>) -> PreferenceVector {
        let mut beta = [0.0; METRIC_COUNT];
        for (i, &d) in self.dims.iter().enumerate() {
            beta[d] = w[i];
        }
        PreferenceVector::from_beta(beta)
    }
}

/// Backtracking line search along an ascent direction. Returns the accepted
/// point and its objective, or `None` if no step improves the objective.
fn line_search(problem: &Problem, w: &DVector<f64>, f: f64, g: &DVector<f64>, dir: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    const ARMIJO: f64 = 1e-4;
    let slope = g.dot(dir);
    if slope.is_nan() || slope <= 0.0 {
        return None;
    }
    let mut step = 1.0;
    for _ in 0..60 {
        let cand = w + dir * step;
        let fc = problem.objective(&cand);
        if fc >= f + ARMIJO * step * slope {
            return Some((cand, fc));
        }
        step *= 0.5;
    }
    None
}

/// Maximum penalized-likelihood estimate of one respondent's `beta`.
///
/// Damped Newton ascent from `beta = 0` with Armijo backtracking; falls back
/// to the gradient direction when the Newton system is not positive definite
/// (possible only with `ridge_lambda = 0`). The intercept stays at zero.
pub fn fit(records: &[ChoiceRecord], config: &FitConfig) -> Result<FitOutcome> {
    if records.is_empty() {
        return Err(Error::invalid("cannot fit an empty set of records"));
    }
    config.validate()?;
    let dims: Vec<usize> = config.free_metrics.iter().map(|m| m.index()).collect();
    let rows = records
        .iter()
        .map(|r| r.chosen_minus_other().map(|z| dims.iter().map(|&d| z[d]).collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let problem = Problem {
        dims,
        rows,
        lambda: config.ridge_lambda,
    };

    let mut w = DVector::zeros(problem.dims.len());
    let mut f = problem.objective(&w);
    let mut iterations = 0;
    loop {
        let (g, neg_h) = problem.gradient_and_neg_hessian(&w);
        let gnorm = g.norm();
        let outcome = |w: &DVector<f64>, converged| FitOutcome {
            prefs: problem.to_prefs(w),
            iterations,
            gradient_norm: gnorm,
            penalized_log_likelihood: f,
            converged,
        };
        if gnorm < config.gradient_tolerance {
            return Ok(outcome(&w, true));
        }
        if iterations >= config.max_iterations {
            return Err(Error::NotConverged {
                best: Box::new(outcome(&w, false)),
            });
        }
        let newton = neg_h.cholesky().map(|c| c.solve(&g));
        let step = match newton {
            // Inside the quadratic region the predicted gain is below the
            // objective's rounding noise, so Armijo cannot discriminate.
            Some(d) if g.dot(&d) < 1e-12 * (1.0 + f.abs()) => {
                let next = &w + d;
                let fnext = problem.objective(&next);
                Some((next, fnext))
            }
            newton => newton
                .and_then(|d| line_search(&problem, &w, f, &g, &d))
                .or_else(|| line_search(&problem, &w, f, &g, &g)),
        };
        match step {
            Some((next, fnext)) => {
                w = next;
                f = fnext;
            }
            None => {
                // Flat to machine precision along every ascent direction.
                return Err(Error::NotConverged {
                    best: Box::new(outcome(&w, false)),
                });
            }
        }
        iterations += 1;
    }
}

/// Divides `beta` by its largest absolute component. The zero vector is
/// returned unchanged; `alpha` is untouched.
pub fn normalize(prefs: &PreferenceVector) -> PreferenceVector {
    let max = prefs.beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    if max == 0.0 {
        return *prefs;
    }
    PreferenceVector {
        alpha: prefs.alpha,
        beta: prefs.beta.map(|b| b / max),
    }
}

/// The metric with the largest absolute coefficient (lowest index on ties),
/// or `None` for the zero vector.
pub fn dominant_metric(beta: &Beta) -> Option<Metric> {
    let (idx, max) = beta
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bm), (i, b)| if b.abs() > bm { (i, b.abs()) } else { (bi, bm) });
    (max > 0.0).then(|| Metric::ALL[idx])
}

/// Cosine similarity, or `None` when either vector is zero.
pub fn cosine_similarity(a: &Beta, b: &Beta) -> Option<f64> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot(a, b) / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn mv(v: [f64; 7]) -> MetricVector {
        MetricVector::from_defined(v)
    }

    fn single(metric: Metric, value: f64) -> PreferenceVector {
        let mut p = PreferenceVector::zero();
        p.set(metric, value);
        p
    }

    fn random_metrics(rng: &mut impl Rng) -> MetricVector {
        mv(std::array::from_fn(|k| {
            if k == 4 || k == 5 {
                rng.random_range(0.0..2.5)
            } else {
                rng.random_range(0.0..1.0)
            }
        }))
    }

    fn random_records(seed_: u64, n: usize) -> Vec<ChoiceRecord> {
        let mut rng = seed::rng(seed_);
        (0..n)
            .map(|i| {
                let chosen = if rng.random_bool(0.5) { Alternative::A } else { Alternative::B };
                ChoiceRecord::new(format!("t{i}"), random_metrics(&mut rng), random_metrics(&mut rng), chosen).unwrap()
            })
            .collect()
    }

    #[test]
    fn utility_examples() {
        let m = mv([0.8, 0.5, 1.0, 0.8, 1.0, 1.0, 0.4]);
        assert_eq!(utility(&PreferenceVector::zero(), &m).unwrap(), 0.0);
        let acc = mv([0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(utility(&single(Metric::Accuracy, 1.0), &acc).unwrap(), 0.9);
        let ones = PreferenceVector::from_beta([1.0; 7]);
        assert!((utility(&ones, &m).unwrap() - 5.5).abs() < 1e-12);
    }

    #[test]
    fn utility_rejects_undefined() {
        let m = MetricVector::new([Some(1.0), None, Some(1.0), Some(1.0), Some(1.0), Some(1.0), Some(1.0)]);
        assert!(matches!(
            utility(&PreferenceVector::zero(), &m),
            Err(Error::UndefinedMetric(Metric::Specificity))
        ));
        assert!(ChoiceRecord::new("x", m, m, Alternative::A).is_err());
    }

    #[test]
    fn choice_probability_examples() {
        let m = mv([0.9, 0.5, 0.5, 0.5, 1.0, 1.0, 0.2]);
        let mut p = PreferenceVector::from_beta([3.0, -1.0, 2.0, 0.5, 1.0, -4.0, 7.0]);
        p.alpha = 12.0;
        assert_eq!(choice_probability(&p, &m, &m).unwrap(), 0.5);

        let a = mv([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let b = mv([0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let prob = choice_probability(&single(Metric::Accuracy, 1.0), &a, &b).unwrap();
        assert!((prob - 1.0 / (1.0 + (-0.5f64).exp())).abs() < 1e-15);
        assert!((prob - 0.62246).abs() < 5e-6);
    }

    #[test]
    fn choice_probability_saturates_without_overflow() {
        let a = mv([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let b = mv([0.0; 7]);
        let p = single(Metric::Accuracy, 100.0);
        let pa = choice_probability(&p, &a, &b).unwrap();
        let pb = choice_probability(&p, &b, &a).unwrap();
        assert!(pa.is_finite() && pa >= 1.0 - 1e-40);
        assert!(pb > 0.0 && pb < 1e-40);
        let huge = single(Metric::Accuracy, 1e6);
        assert_eq!(choice_probability(&huge, &a, &b).unwrap(), 1.0);
    }

    #[test]
    fn log_likelihood_examples() {
        let recs = random_records(1, 13);
        let ll = log_likelihood(&PreferenceVector::zero(), &recs).unwrap();
        assert!((ll - 13.0 * 0.5f64.ln()).abs() < 1e-12);

        let p = PreferenceVector::from_beta([1.0, 2.0, -1.0, 0.5, 0.2, -0.3, 1.5]);
        let one = &recs[..1];
        let prob_a = choice_probability(&p, &one[0].metrics_a, &one[0].metrics_b).unwrap();
        let chosen = if one[0].chosen == Alternative::A { prob_a } else { 1.0 - prob_a };
        assert!((log_likelihood(&p, one).unwrap() - chosen.ln()).abs() < 1e-12);

        assert!(log_likelihood(&p, &[]).is_err());
    }

    #[test]
    fn log_likelihood_matches_product_oracle() {
        let recs = random_records(7, 20);
        let p = PreferenceVector::from_beta([0.7, -0.4, 1.1, 0.3, -0.8, 0.6, 1.2]);
        // Independent evaluation: multiply raw probabilities, then take the log.
        let product: f64 = recs
            .iter()
            .map(|r| {
                let u = |m: &MetricVector| -> f64 {
                    let x = m.defined().unwrap();
                    (0..7).map(|k| p.beta[k] * x[k]).sum()
                };
                let (ua, ub) = (u(&r.metrics_a).exp(), u(&r.metrics_b).exp());
                match r.chosen {
                    Alternative::A => ua / (ua + ub),
                    Alternative::B => ub / (ua + ub),
                }
            })
            .product();
        let ll = log_likelihood(&p, &recs).unwrap();
        assert!(((ll - product.ln()) / ll).abs() < 1e-12);
    }

    fn precision_chooser(n: usize, seed_: u64) -> Vec<ChoiceRecord> {
        let mut out = Vec::new();
        let mut s = 0;
        while out.len() < n {
            let scenario = crate::taskgen::generate_scenario(seed::derive(seed_, s), 10).unwrap();
            s += 1;
            let Ok(task) = crate::taskgen::generate_task(seed::derive(seed_ + 1, s), &scenario, 2) else {
                continue;
            };
            let (a, b) = task.metrics().unwrap();
            let (pa, pb) = (a.get(Metric::Precision).unwrap(), b.get(Metric::Precision).unwrap());
            if pa == pb {
                continue;
            }
            let chosen = if pa > pb { Alternative::A } else { Alternative::B };
            out.push(ChoiceRecord::from_task(&task, chosen).unwrap());
        }
        out
    }

    #[test]
    fn precision_chooser_is_reproduced() {
        let recs = precision_chooser(200, 11);
        let fitted = fit(&recs, &FitConfig::default()).unwrap();
        assert!(fitted.converged);
        assert!(fitted.gradient_norm < 1e-8);
        assert_eq!(fitted.prefs.alpha, 0.0);
        // Separable data: the fit explains every choice.
        for r in &recs {
            let p_a = choice_probability(&fitted.prefs, &r.metrics_a, &r.metrics_b).unwrap();
            let p_chosen = if r.chosen == Alternative::A { p_a } else { 1.0 - p_a };
            assert!(p_chosen > 0.5);
        }
        // Precision and specificity differences share a sign on most tasks,
        // so the weight splits between them.
        let mut by_size: Vec<Metric> = Metric::ALL.to_vec();
        by_size.sort_by(|a, b| fitted.prefs.get(*b).abs().total_cmp(&fitted.prefs.get(*a).abs()));
        assert!(by_size[..2].contains(&Metric::Precision), "{:?}", fitted.prefs);
        assert!(fitted.prefs.get(Metric::Precision) > 0.0);
    }

    #[test]
    fn disparate_impact_chooser_recovers_disparate_impact() {
        let recs: Vec<ChoiceRecord> = crate::taskgen::generate_session(21, 10, 2, 200)
            .unwrap()
            .tasks
            .iter()
            .filter_map(|t| {
                let (a, b) = t.metrics().unwrap();
                let (da, db) = (a.get(Metric::DisparateImpact).unwrap(), b.get(Metric::DisparateImpact).unwrap());
                (da != db).then(|| ChoiceRecord::from_task(t, if da > db { Alternative::A } else { Alternative::B }).unwrap())
            })
            .collect();
        let fitted = fit(&recs, &FitConfig::default()).unwrap();
        assert_eq!(dominant_metric(&fitted.prefs.beta), Some(Metric::DisparateImpact));
    }

    fn random_chooser_median_norm(t: usize) -> f64 {
        let mut norms: Vec<f64> = (0..20)
            .map(|s| {
                let mut rng = seed::rng(seed::derive(500, s));
                let plan = crate::taskgen::generate_session(seed::derive(600, s), 10, 2, t).unwrap();
                let recs: Vec<ChoiceRecord> = plan
                    .tasks
                    .iter()
                    .map(|t| {
                        let c = if rng.random_bool(0.5) { Alternative::A } else { Alternative::B };
                        ChoiceRecord::from_task(t, c).unwrap()
                    })
                    .collect();
                fit(&recs, &FitConfig::default()).unwrap().prefs.norm()
            })
            .collect();
        norms.sort_by(f64::total_cmp);
        0.5 * (norms[9] + norms[10])
    }

    #[test]
    fn random_chooser_shrinks_toward_zero() {
        // Accuracy, specificity and sensitivity differences are nearly
        // collinear, so the estimate is noisy along that direction and the
        // norm shrinks slowly with t.
        let (m50, m500, m5000) = (random_chooser_median_norm(50), random_chooser_median_norm(500), random_chooser_median_norm(5000));
        assert!(m5000 < m500 && m500 < m50, "{m50} {m500} {m5000}");
        assert!(m5000 < 1.5, "{m5000}");
    }

    #[test]
    fn unpenalized_separable_fit_reports_best_so_far() {
        let recs = precision_chooser(20, 3);
        let cfg = FitConfig {
            ridge_lambda: 0.0,
            max_iterations: 3,
            ..FitConfig::default()
        };
        match fit(&recs, &cfg) {
            Err(Error::NotConverged { best }) => {
                assert!(!best.converged);
                assert!(best.prefs.is_finite());
                let at_zero = penalized_log_likelihood(&PreferenceVector::zero(), &recs, 0.0).unwrap();
                assert!(best.penalized_log_likelihood > at_zero);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn fit_rejects_bad_config() {
        let recs = random_records(2, 5);
        assert!(fit(&[], &FitConfig::default()).is_err());
        let neg = FitConfig {
            ridge_lambda: -1.0,
            ..FitConfig::default()
        };
        assert!(matches!(fit(&recs, &neg), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn restricted_fit_leaves_other_coefficients_zero() {
        let recs = random_records(4, 30);
        let cfg = FitConfig {
            free_metrics: vec![Metric::Accuracy, Metric::CounterfactualFairness],
            ..FitConfig::default()
        };
        let out = fit(&recs, &cfg).unwrap();
        for m in Metric::ALL {
            if !cfg.free_metrics.contains(&m) {
                assert_eq!(out.prefs.get(m), 0.0);
            }
        }
    }

    #[test]
    fn normalize_examples() {
        let p = PreferenceVector::from_beta([0.5, -1.0, 0.2, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(normalize(&p), p);
        assert_eq!(normalize(&PreferenceVector::zero()), PreferenceVector::zero());
        let q = PreferenceVector {
            alpha: 3.0,
            beta: [2.0, -4.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        };
        let n = normalize(&q);
        assert_eq!(n.alpha, 3.0);
        assert_eq!(n.beta, [0.5, -1.0, 0.25, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn preference_json_is_keyed_by_metric() {
        let p = PreferenceVector::from_beta([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(
            json,
            r#"{"alpha":0.0,"beta":{"Acc":0.1,"Spe":0.2,"Sen":0.3,"Pre":0.4,"DI":0.5,"EO":0.6,"CF":0.7}}"#
        );
        assert_eq!(serde_json::from_str::<PreferenceVector>(&json).unwrap(), p);
    }

    fn arb_beta() -> impl Strategy<Value = Beta> {
        prop::array::uniform7(-5.0f64..5.0)
    }

    fn arb_metrics() -> impl Strategy<Value = MetricVector> {
        prop::array::uniform7(0.0f64..2.0).prop_map(MetricVector::from_defined)
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(beta in arb_beta(), a in arb_metrics(), b in arb_metrics()) {
            let p = PreferenceVector::from_beta(beta);
            let sum = choice_probability(&p, &a, &b).unwrap() + choice_probability(&p, &b, &a).unwrap();
            prop_assert!((sum - 1.0).abs() <= 1e-15);
        }

        #[test]
        fn probability_ignores_intercept(beta in arb_beta(), alpha in -50.0f64..50.0, a in arb_metrics(), b in arb_metrics()) {
            let p0 = PreferenceVector::from_beta(beta);
            let p1 = PreferenceVector { alpha, beta };
            let (x, y) = (choice_probability(&p0, &a, &b).unwrap(), choice_probability(&p1, &a, &b).unwrap());
            prop_assert!((x - y).abs() <= 1e-12);
        }

        #[test]
        fn probability_is_translation_invariant(beta in arb_beta(), shift in 0.0f64..3.0, a in arb_metrics(), b in arb_metrics()) {
            // Shifting every metric by the same amount adds the same constant to both utilities.
            let p = PreferenceVector::from_beta(beta);
            let shifted = |m: &MetricVector| MetricVector::from_defined(m.defined().unwrap().map(|x| x + shift));
            let x = choice_probability(&p, &a, &b).unwrap();
            let y = choice_probability(&p, &shifted(&a), &shifted(&b)).unwrap();
            prop_assert!((x - y).abs() <= 1e-9);
        }

        #[test]
        fn fit_never_worse_than_zero(seed_ in any::<u64>(), n in 1usize..25) {
            let recs = random_records(seed_, n);
            let out = fit(&recs, &FitConfig::default()).unwrap();
            let at_zero = penalized_log_likelihood(&PreferenceVector::zero(), &recs, 0.01).unwrap();
            prop_assert!(out.penalized_log_likelihood >= at_zero);
            let recomputed = penalized_log_likelihood(&out.prefs, &recs, 0.01).unwrap();
            prop_assert!((recomputed - out.penalized_log_likelihood).abs() < 1e-9);
        }

        #[test]
        fn normalize_keeps_direction(beta in arb_beta()) {
            let p = PreferenceVector::from_beta(beta);
            prop_assume!(p.norm() > 0.0);
            let n = normalize(&p);
            let max = n.beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
            prop_assert!((max - 1.0).abs() < 1e-15);
            prop_assert!((cosine_similarity(&beta, &n.beta).unwrap() - 1.0).abs() < 1e-12);
            prop_assert_eq!(dominant_metric(&beta), dominant_metric(&n.beta));
            for (b, nb) in beta.iter().zip(&n.beta) {
                prop_assert_eq!(b.signum(), nb.signum());
            }
        }
    }
}
