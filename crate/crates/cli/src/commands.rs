//! Subcommand implementations. Each returns an [`Output`]; `main` prints it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use metric_prefs::association::{AttributeBinarization, LiftFlag, LiftThresholds};
use metric_prefs::clustering::KChoice;
use metric_prefs::datastore::{choice_records, read_bundle, validate_bundle, write_bundle, MANIFEST};
use metric_prefs::pipeline::{cluster_stage, fit_stage, lift_stage, simulate, LiftConfig, Parallelism};
use metric_prefs::simulation::{default_archetypes, recovery_report, Archetype, PopulationConfig};
use metric_prefs::taskgen::{generate_session, DEFAULT_APPLICANTS, DEFAULT_DIFFERING_ROWS, DEFAULT_TASKS};
use metric_prefs::{FitConfig, PreferenceVector, StudyBundle};
use metric_prefs_survey::{Survey, SurveyConfig};
use serde_json::{json, Value};

use crate::options::{ClusterOpts, FitOpts, GenSessionOpts, KArg, LiftOpts, ServeOpts, SimulateOpts};
use crate::CliError;

/// What a subcommand prints: optional detail lines, then a one-line summary.
pub struct Output {
    pub detail: Option<String>,
    pub summary: String,
    pub json: Value,
    /// Exit with the data-error code after printing.
    pub failed: bool,
}

impl Output {
    fn ok(summary: String, json: Value) -> Self {
        Self {
            detail: None,
            summary,
            json,
            failed: false,
        }
    }
}

fn load(dir: &Path) -> Result<StudyBundle, CliError> {
    if !dir.join(MANIFEST).is_file() {
        return Err(CliError::Usage(format!("no bundle at {} ({MANIFEST} not found)", dir.display())));
    }
    Ok(read_bundle(dir)?)
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn gen_session(dir: &Path, opts: GenSessionOpts) -> Result<Output, CliError> {
    let seed = opts.seed.unwrap_or(0);
    let tasks = opts.tasks.unwrap_or(DEFAULT_TASKS);
    let applicants = opts.applicants.unwrap_or(DEFAULT_APPLICANTS);
    let differing_rows = opts.differing_rows.unwrap_or(DEFAULT_DIFFERING_ROWS);
    let plan = generate_session(seed, applicants, differing_rows, tasks)?;
    let mut bundle = if dir.join(MANIFEST).is_file() {
        read_bundle(dir)?
    } else {
        StudyBundle::default()
    };
    let id = plan.session_id.clone();
    match bundle.sessions.iter_mut().find(|s| s.session_id == id) {
        Some(existing) => *existing = plan,
        None => bundle.sessions.push(plan),
    }
    let recorded = json!({ "tasks": tasks, "applicants": applicants, "differing_rows": differing_rows });
    bundle.manifest.record_stage(&format!("gen-session/{id}"), Some(seed), &recorded)?;
    write_bundle(&bundle, dir)?;
    Ok(Output::ok(
        format!(
            "gen-session: session {id} with {tasks} tasks ({applicants} applicants, {differing_rows} differing rows) written to {}",
            dir.display()
        ),
        json!({ "command": "gen-session", "session_id": id, "seed": seed, "tasks": tasks, "applicants": applicants, "differing_rows": differing_rows }),
    ))
}

pub fn simulate_cmd(dir: &Path, opts: SimulateOpts, par: Parallelism) -> Result<Output, CliError> {
    let defaults = PopulationConfig::default();
    let config = PopulationConfig {
        respondents_per_archetype: opts.respondents_per_archetype.unwrap_or(defaults.respondents_per_archetype),
        tasks_per_respondent: opts.tasks.unwrap_or(defaults.tasks_per_respondent),
        applicants: opts.applicants.unwrap_or(defaults.applicants),
        differing_rows: opts.differing_rows.unwrap_or(defaults.differing_rows),
        mode: opts.mode.unwrap_or(defaults.mode),
        seed: opts.seed.unwrap_or(0),
    };
    let archetypes: Vec<Archetype> = match &opts.archetypes {
        Some(path) => read_json_file(path)?,
        None => default_archetypes(),
    };
    let bundle = simulate(&archetypes, &config, par)?;
    write_bundle(&bundle, dir)?;
    let choices: usize = bundle.responses.iter().map(|r| r.choices.len()).sum();
    Ok(Output::ok(
        format!(
            "simulate: {} respondents ({} archetypes x {}), {choices} choices, seed {}, written to {}",
            bundle.responses.len(),
            archetypes.len(),
            config.respondents_per_archetype,
            config.seed,
            dir.display()
        ),
        json!({ "command": "simulate", "respondents": bundle.responses.len(), "archetypes": archetypes.len(), "choices": choices, "seed": config.seed }),
    ))
}

pub fn fit_cmd(dir: &Path, opts: FitOpts, par: Parallelism) -> Result<Output, CliError> {
    let mut bundle = load(dir)?;
    let defaults = FitConfig::default();
    let config = FitConfig {
        ridge_lambda: opts.ridge.unwrap_or(defaults.ridge_lambda),
        max_iterations: opts.max_iterations.unwrap_or(defaults.max_iterations),
        gradient_tolerance: opts.tolerance.unwrap_or(defaults.gradient_tolerance),
        ..defaults
    };
    let summary = fit_stage(&mut bundle, &config, par)?;
    write_bundle(&bundle, dir)?;
    Ok(Output::ok(
        format!(
            "fit: {} respondents fitted ({} not converged, {} excluded), ridge {}",
            summary.fitted, summary.not_converged, summary.excluded, config.ridge_lambda
        ),
        json!({ "command": "fit", "fitted": summary.fitted, "not_converged": summary.not_converged, "excluded": summary.excluded, "ridge": config.ridge_lambda }),
    ))
}

pub fn cluster_cmd(dir: &Path, opts: ClusterOpts, par: Parallelism) -> Result<Output, CliError> {
    let selection = match (opts.k.unwrap_or(KArg::Auto), opts.k_range) {
        (KArg::Auto, range) => {
            let (k_min, k_max) = range.map_or((2, 10), |r| (r.min, r.max));
            KChoice::Auto { k_min, k_max }
        }
        (KArg::Fixed(k), None) => KChoice::Fixed { k },
        (KArg::Fixed(_), Some(_)) => return Err(CliError::Usage("--k-range only applies with --k auto".into())),
    };
    let seed = opts.seed.unwrap_or(0);
    let mut bundle = load(dir)?;
    if bundle.fits.is_none() {
        return Err(CliError::Usage("bundle has no fits.json; run `fit` first".into()));
    }
    let clusters = cluster_stage(&mut bundle, selection, seed, par)?;
    let sizes: BTreeMap<String, usize> = clusters.clusters.iter().map(|c| (c.label.clone(), c.size)).collect();
    let k = clusters.k;
    let how = match selection {
        KChoice::Auto { k_min, k_max } => format!("elbow over {k_min}..{k_max}"),
        KChoice::Fixed { .. } => "fixed".to_string(),
    };
    let size_text: Vec<String> = sizes.iter().map(|(l, n)| format!("{l}={n}")).collect();
    write_bundle(&bundle, dir)?;
    Ok(Output::ok(
        format!("cluster: k={k} ({how}), sizes {}, seed {seed}", size_text.join(" ")),
        json!({ "command": "cluster", "k": k, "selection": selection, "sizes": sizes, "seed": seed }),
    ))
}

fn flag_name(flag: LiftFlag) -> &'static str {
    match flag {
        LiftFlag::High => "high",
        LiftFlag::Low => "low",
        LiftFlag::None => "",
    }
}

pub fn lift_cmd(dir: &Path, opts: LiftOpts) -> Result<Output, CliError> {
    let defaults = LiftConfig::default();
    let thresholds = opts.thresholds.map_or(defaults.thresholds, |t| LiftThresholds { low: t.low, high: t.high });
    let binarizations: Vec<AttributeBinarization> = match &opts.binarizations {
        Some(path) => read_json_file(path)?,
        None => defaults.binarizations,
    };
    let mut bundle = load(dir)?;
    if bundle.clusters.is_none() {
        return Err(CliError::Usage("bundle has no clusters.json; run `cluster` first".into()));
    }
    let exclusions = lift_stage(&mut bundle, &LiftConfig { thresholds, binarizations })?;
    write_bundle(&bundle, dir)?;
    let table = bundle.lift_table.as_ref().expect("lift stage sets the table");

    let mut detail = format!("{:<20} {:<22} {:<7} {:>6} {:>8} {:>7}  flag\n", "attribute", "value", "cluster", "count", "percent", "lift");
    for r in &table.rows {
        writeln!(
            detail,
            "{:<20} {:<22} {:<7} {:>6} {:>7.1}% {:>7.3}  {}",
            r.attribute,
            r.value,
            r.cluster,
            r.count,
            r.percentage,
            r.lift,
            flag_name(r.flag)
        )
        .expect("write to string");
    }
    let flagged = table.flagged().count();
    Ok(Output {
        detail: Some(detail.trim_end().to_string()),
        summary: format!(
            "lift: {} cells, {flagged} outside [{}, {}], {} clustered respondents without a profile",
            table.rows.len(),
            thresholds.low,
            thresholds.high,
            exclusions.missing_profile.len()
        ),
        json: json!({ "command": "lift", "cells": table.rows.len(), "flagged": flagged, "thresholds": thresholds, "exclusions": exclusions, "rows": table.rows }),
        failed: false,
    })
}

pub fn report(dir: &Path) -> Result<Output, CliError> {
    let bundle = load(dir)?;
    let mut lines = Vec::new();
    let mut out = serde_json::Map::new();
    out.insert("command".into(), json!("report"));

    let included = bundle.included_responses().count();
    let choices: usize = bundle.responses.iter().map(|r| r.choices.len()).sum();
    lines.push(format!("sessions: {}", bundle.sessions.len()));
    lines.push(format!(
        "respondents: {} ({} included, {} excluded), {choices} choices, {} profiles",
        bundle.responses.len(),
        included,
        bundle.responses.len() - included,
        bundle.profiles.len()
    ));
    out.insert(
        "respondents".into(),
        json!({ "total": bundle.responses.len(), "included": included, "choices": choices, "profiles": bundle.profiles.len(), "sessions": bundle.sessions.len() }),
    );

    if let Some(fits) = &bundle.fits {
        let converged = fits.fits.iter().filter(|f| f.converged).count();
        lines.push(format!(
            "fits: {} ({converged} converged), ridge {}",
            fits.fits.len(),
            fits.config.ridge_lambda
        ));
        out.insert("fits".into(), json!({ "count": fits.fits.len(), "converged": converged }));
    }
    if let Some(c) = &bundle.clusters {
        lines.push(format!("clusters: k={} (seed {})", c.k, c.seed));
        for s in &c.clusters {
            let centroid: Vec<String> = s.centroid.iter().map(|x| format!("{x:+.3}")).collect();
            lines.push(format!("  {} size {:>4}  centroid [{}]", s.label, s.size, centroid.join(" ")));
        }
        out.insert("clusters".into(), json!({ "k": c.k, "clusters": c.clusters }));
    }
    if let Some(t) = &bundle.lift_table {
        let flagged: Vec<_> = t.flagged().collect();
        lines.push(format!("lift: {} cells, {} flagged", t.rows.len(), flagged.len()));
        for r in &flagged {
            lines.push(format!("  {} {} = {}: lift {:.3} ({})", r.cluster, r.attribute, r.value, r.lift, flag_name(r.flag)));
        }
        out.insert("lift".into(), json!({ "cells": t.rows.len(), "flagged": flagged }));
    }
    if let (Some(truth), Some(fits)) = (&bundle.ground_truth, &bundle.fits) {
        let fitted: BTreeMap<String, PreferenceVector> = fits.fits.iter().map(|f| (f.respondent_id.clone(), f.prefs)).collect();
        let truth: Vec<_> = truth.iter().filter(|t| fitted.contains_key(&t.respondent_id)).cloned().collect();
        let included: Vec<_> = bundle.included_responses().cloned().collect();
        let records = choice_records(&bundle.sessions, &included)?;
        let rep = recovery_report(&truth, &records, &fitted)?;
        let fmt = |x: Option<f64>| x.map_or("undefined".to_string(), |v| format!("{v:.3}"));
        lines.push(format!(
            "recovery: median cosine {}, argmax agreement {}",
            fmt(rep.overall.median_cosine),
            fmt(rep.overall.argmax_agreement)
        ));
        for (name, g) in &rep.per_archetype {
            lines.push(format!(
                "  {name}: median cosine {}, argmax agreement {}",
                fmt(g.median_cosine),
                fmt(g.argmax_agreement)
            ));
        }
        out.insert("recovery".into(), json!({ "overall": rep.overall, "per_archetype": rep.per_archetype }));
    }
    Ok(Output {
        detail: Some(lines.join("\n")),
        summary: format!("report: {} respondents in {}", bundle.responses.len(), dir.display()),
        json: Value::Object(out),
        failed: false,
    })
}

pub fn validate_cmd(dir: &Path) -> Result<Output, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("no bundle directory at {}", dir.display())));
    }
    let report = validate_bundle(dir)?;
    let n = report.violations.len();
    let detail = (n > 0).then(|| report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n"));
    Ok(Output {
        detail,
        summary: if n == 0 {
            format!("validate: {} is valid", dir.display())
        } else {
            format!("validate: {n} violation(s) in {}", dir.display())
        },
        json: json!({ "command": "validate", "valid": n == 0, "violations": report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>() }),
        failed: n > 0,
    })
}

pub fn serve_cmd(opts: ServeOpts) -> Result<(), CliError> {
    let defaults = SurveyConfig::default();
    let read_text = |path: &Option<std::path::PathBuf>, fallback: String| -> Result<String, CliError> {
        match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display()))),
            None => Ok(fallback),
        }
    };
    let config = SurveyConfig {
        tasks: opts.tasks.unwrap_or(defaults.tasks),
        applicants: opts.applicants.unwrap_or(defaults.applicants),
        differing_rows: opts.differing_rows.unwrap_or(defaults.differing_rows),
        seed: opts.seed.unwrap_or(defaults.seed),
        consent_text: read_text(&opts.consent_file, defaults.consent_text.clone())?,
        scenario_text: read_text(&opts.scenario_file, defaults.scenario_text.clone())?,
        ..defaults
    };
    let addr_text = opts.addr.unwrap_or_else(|| "127.0.0.1:8080".to_string());
    let addr: SocketAddr = addr_text
        .parse()
        .map_err(|e| CliError::Usage(format!("invalid --addr {addr_text:?}: {e}")))?;
    let survey = Arc::new(Survey::new(config).map_err(|e| CliError::Usage(e.to_string()))?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Data(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Data(format!("cannot listen on {addr}: {e}")))?;
        let bound = listener.local_addr().map_err(|e| CliError::Data(e.to_string()))?;
        println!("serve: listening on http://{bound}");
        std::io::stdout().flush().map_err(|e| CliError::Data(e.to_string()))?;
        metric_prefs_survey::serve(survey, listener)
            .await
            .map_err(|e| CliError::Data(format!("server: {e}")))
    })
}
