//! Analysis stages over study bundles: simulate, fit, cluster, lift.
//!
//! Each stage records its configuration and seed in the bundle manifest and
//! produces the same bytes whether it runs serially or in parallel.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{default_binarizations, lift_table, reference, AttributeBinarization, LiftExclusions, LiftThresholds};
use crate::choice_model::{fit, normalize, FitConfig, FitOutcome};
use crate::clustering::{label_by_size, ClusteringResult, KChoice};
use crate::datastore::{
    choice_records, derived, ClusterSummary, ClustersFile, FitRecord, FitsFile, Manifest, StudyBundle,
};
use crate::error::{Error, Result};
use crate::metrics::METRIC_COUNT;
use crate::seed;
use crate::simulation::{default_archetypes, simulate_population, Archetype, PopulationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Serial,
    #[default]
    Parallel,
}

impl Parallelism {
    pub fn enabled(self) -> bool {
        self == Parallelism::Parallel
    }
}

/// Simulates a study with known preferences, including the ground-truth sidecar.
pub fn simulate(archetypes: &[Archetype], config: &PopulationConfig, par: Parallelism) -> Result<StudyBundle> {
    let ds = simulate_population(archetypes, config, par.enabled())?;
    let mut manifest = Manifest::default();
    #[derive(Serialize)]
    struct Recorded<'a> {
        population: &'a PopulationConfig,
        archetypes: &'a [Archetype],
    }
    manifest.record_stage("simulate", Some(config.seed), &Recorded { population: config, archetypes })?;
    Ok(StudyBundle {
        manifest,
        sessions: ds.sessions,
        responses: ds.responses,
        profiles: ds.profiles,
        ground_truth: Some(ds.truth),
        ..StudyBundle::default()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FitSummary {
    pub fitted: usize,
    pub not_converged: usize,
    /// Respondents skipped because of exclusion flags.
    pub excluded: usize,
}

fn fit_record(respondent_id: &str, outcome: FitOutcome) -> FitRecord {
    FitRecord {
        respondent_id: respondent_id.to_string(),
        normalized: normalize(&outcome.prefs),
        prefs: outcome.prefs,
        iterations: outcome.iterations,
        gradient_norm: derived(outcome.gradient_norm),
        penalized_log_likelihood: derived(outcome.penalized_log_likelihood),
        converged: outcome.converged,
    }
}

/// Fits every included respondent and replaces `fits.json`. Downstream
/// clusters and lift tables are dropped because they no longer match,
/// unless the fits are unchanged.
pub fn fit_stage(bundle: &mut StudyBundle, config: &FitConfig, par: Parallelism) -> Result<FitSummary> {
    config.validate()?;
    let included: Vec<_> = bundle.included_responses().cloned().collect();
    let excluded = bundle.responses.len() - included.len();
    let records = choice_records(&bundle.sessions, &included)?;
    let jobs: Vec<_> = records.iter().filter(|(_, r)| !r.is_empty()).collect();
    let run = |(id, recs): &(&String, &Vec<_>)| -> Result<FitRecord> {
        match fit(recs, config) {
            Ok(o) => Ok(fit_record(id, o)),
            Err(Error::NotConverged { best }) => Ok(fit_record(id, *best)),
            Err(e) => Err(e),
        }
    };
    let fits: Vec<FitRecord> = if par.enabled() {
        jobs.par_iter().map(run).collect::<Result<_>>()?
    } else {
        jobs.iter().map(run).collect::<Result<_>>()?
    };
    let summary = FitSummary {
        fitted: fits.len(),
        not_converged: fits.iter().filter(|f| !f.converged).count(),
        excluded,
    };
    let new = FitsFile { config: config.clone(), fits };
    if bundle.fits.as_ref() != Some(&new) {
        bundle.fits = Some(new);
        bundle.clusters = None;
        bundle.lift_table = None;
    }
    bundle.manifest.record_stage("fit", None, config)?;
    Ok(summary)
}

fn clusters_file(result: &ClusteringResult, ids: &[String], selection: KChoice, seed_: u64) -> ClustersFile {
    let labeled = label_by_size(result);
    let sizes = labeled.sizes();
    ClustersFile {
        k: labeled.k,
        selection,
        seed: seed_,
        distortion: derived(labeled.distortion),
        distortion_curve: labeled.distortion_curve.iter().map(|(&k, &d)| (k, derived(d))).collect(),
        clusters: labeled
            .centroids
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut centroid = [0.0; METRIC_COUNT];
                for (dst, src) in centroid.iter_mut().zip(c) {
                    *dst = derived(*src);
                }
                ClusterSummary {
                    label: ClusteringResult::label(i),
                    size: sizes[i],
                    centroid,
                }
            })
            .collect(),
        assignments: ids.iter().cloned().zip(labeled.labels()).collect(),
    }
}

/// Clusters the normalized fitted coefficients. Cluster "A" is the largest.
pub fn cluster_stage(bundle: &mut StudyBundle, selection: KChoice, seed_: u64, par: Parallelism) -> Result<&ClustersFile> {
    let fits = bundle
        .fits
        .as_ref()
        .ok_or_else(|| Error::invalid("bundle has no fits; run the fit stage first"))?;
    let ids: Vec<String> = fits.fits.iter().map(|f| f.respondent_id.clone()).collect();
    let points: Vec<Vec<f64>> = fits.fits.iter().map(|f| f.normalized.beta.to_vec()).collect();
    let result = selection.cluster(&points, seed_, par.enabled())?;
    let new = clusters_file(&result, &ids, selection, seed_);
    if bundle.clusters.as_ref() != Some(&new) {
        bundle.clusters = Some(new);
        bundle.lift_table = None;
    }
    bundle.manifest.record_stage("cluster", Some(seed_), &selection)?;
    Ok(bundle.clusters.as_ref().expect("just set"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftConfig {
    pub thresholds: LiftThresholds,
    pub binarizations: Vec<AttributeBinarization>,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self {
            thresholds: LiftThresholds::default(),
            binarizations: default_binarizations(),
        }
    }
}

/// Builds the lift table from cluster assignments and profiles.
pub fn lift_stage(bundle: &mut StudyBundle, config: &LiftConfig) -> Result<LiftExclusions> {
    let clusters = bundle
        .clusters
        .as_ref()
        .ok_or_else(|| Error::invalid("bundle has no clusters; run the cluster stage first"))?;
    let report = lift_table(&clusters.assignments, &bundle.profiles, &config.binarizations, &config.thresholds)?;
    bundle.lift_table = Some(report.table);
    bundle.manifest.record_stage("lift", None, config)?;
    Ok(report.exclusions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub master_seed: u64,
    pub population: PopulationConfig,
    pub fit: FitConfig,
    pub clusters: KChoice,
    pub lift: LiftConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            population: PopulationConfig::default(),
            fit: FitConfig::default(),
            clusters: KChoice::Auto { k_min: 2, k_max: 10 },
            lift: LiftConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn simulate_seed(&self) -> u64 {
        seed::derive_named(self.master_seed, "simulate")
    }

    pub fn cluster_seed(&self) -> u64 {
        seed::derive_named(self.master_seed, "cluster")
    }
}

/// simulate, fit, cluster and lift under one master seed, with the default
/// archetypes.
pub fn run_pipeline(config: &PipelineConfig, par: Parallelism) -> Result<StudyBundle> {
    let population = PopulationConfig {
        seed: config.simulate_seed(),
        ..config.population.clone()
    };
    let mut bundle = simulate(&default_archetypes(), &population, par)?;
    fit_stage(&mut bundle, &config.fit, par)?;
    cluster_stage(&mut bundle, config.clusters, config.cluster_seed(), par)?;
    lift_stage(&mut bundle, &config.lift)?;
    Ok(bundle)
}

/// A bundle holding the 837 reference participants and their five cluster
/// assignments, with no sessions or fits. Centroids are unknown and stored
/// as zeros.
pub fn reference_bundle() -> StudyBundle {
    let (profiles, assignments) = reference::participants();
    let clusters = reference::CLUSTERS
        .iter()
        .zip(reference::CLUSTER_SIZES)
        .map(|(label, size)| ClusterSummary {
            label: label.to_string(),
            size: size as usize,
            centroid: [0.0; METRIC_COUNT],
        })
        .collect();
    StudyBundle {
        profiles,
        clusters: Some(ClustersFile {
            k: reference::CLUSTERS.len(),
            selection: KChoice::Fixed { k: reference::CLUSTERS.len() },
            seed: 0,
            distortion: 0.0,
            distortion_curve: BTreeMap::new(),
            clusters,
            assignments,
        }),
        ..StudyBundle::default()
    }
}
