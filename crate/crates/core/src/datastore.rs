//! Study bundles: a versioned directory of JSON and CSV files holding
//! sessions, responses, profiles, fits, clusters and the lift table.
//!
//! Files are canonical. Keys are sorted, JSON is pretty-printed with a
//! trailing newline, derived reals are rounded to 6 significant digits when
//! they are computed, and fitted coefficients keep full precision in their
//! shortest round-trip form.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::association::{lift, Attribute, LiftRow, LiftTable, ParticipantProfile};
use crate::choice_model::{named_beta, Alternative, Beta, ChoiceRecord, FitConfig, PreferenceVector};
use crate::clustering::KChoice;
use crate::error::{Error, Result};
use crate::taskgen::SessionPlan;

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const MANIFEST: &str = "manifest.json";
pub const SESSIONS: &str = "sessions.json";
pub const RESPONSES: &str = "responses.json";
pub const PROFILES: &str = "profiles.csv";
pub const FITS: &str = "fits.json";
pub const CLUSTERS: &str = "clusters.json";
pub const LIFT_TABLE: &str = "lift_table.csv";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const EXCLUSIONS: &str = "exclusions.json";

/// Every file name a bundle may contain.
pub const BUNDLE_FILES: [&str; 9] = [MANIFEST, SESSIONS, RESPONSES, PROFILES, FITS, CLUSTERS, LIFT_TABLE, GROUND_TRUTH, EXCLUSIONS];

/// Rounds to 6 significant digits. Used for every derived real that is
/// persisted, so files do not depend on last-bit floating point noise.
pub fn derived(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    /// Seed per stage.
    pub seeds: BTreeMap<String, u64>,
    /// Configuration per stage.
    pub config: BTreeMap<String, serde_json::Value>,
    /// SHA-256 of the canonical JSON of each stage configuration.
    pub config_hashes: BTreeMap<String, String>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            seeds: BTreeMap::new(),
            config: BTreeMap::new(),
            config_hashes: BTreeMap::new(),
        }
    }
}

impl Manifest {
    pub fn record_stage<T: Serialize>(&mut self, stage: &str, seed: Option<u64>, config: &T) -> Result<()> {
        let value = serde_json::to_value(config).map_err(|e| Error::invalid(format!("{stage} config: {e}")))?;
        let canonical = serde_json::to_string(&value).expect("value serializes");
        self.config_hashes.insert(stage.to_string(), hex::encode(Sha256::digest(canonical.as_bytes())));
        self.config.insert(stage.to_string(), value);
        match seed {
            Some(s) => self.seeds.insert(stage.to_string(), s),
            None => self.seeds.remove(stage),
        };
        Ok(())
    }

    pub fn stage_config<T: DeserializeOwned>(&self, stage: &str) -> Result<Option<T>> {
        self.config
            .get(stage)
            .map(|v| serde_json::from_value(v.clone()).map_err(|e| Error::invalid(format!("{stage} config in manifest: {e}"))))
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub task_id: String,
    /// Alternative in canonical orientation.
    pub chosen: Alternative,
}

/// Exclusion flags. Flagged respondents stay in the bundle; analysis
/// stages skip them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QualityFlags {
    pub attention_failed: bool,
    pub contradictory: bool,
}

impl QualityFlags {
    pub fn excluded(&self) -> bool {
        self.attention_failed || self.contradictory
    }

    pub fn reasons(&self) -> Vec<String> {
        let mut r = Vec::new();
        if self.attention_failed {
            r.push("attention_failed".to_string());
        }
        if self.contradictory {
            r.push("contradictory".to_string());
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RespondentResponses {
    pub respondent_id: String,
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_answer: Option<usize>,
    pub flags: QualityFlags,
    pub choices: Vec<Choice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at: Option<String>,
}

/// Generating coefficients of a simulated respondent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub respondent_id: String,
    pub archetype: String,
    pub prefs: PreferenceVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub respondent_id: String,
    pub prefs: PreferenceVector,
    /// `prefs` scaled to unit max-abs coefficient.
    pub normalized: PreferenceVector,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub penalized_log_likelihood: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitsFile {
    pub config: FitConfig,
    pub fits: Vec<FitRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub label: String,
    pub size: usize,
    #[serde(with = "named_beta")]
    pub centroid: Beta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersFile {
    pub k: usize,
    pub selection: KChoice,
    pub seed: u64,
    pub distortion: f64,
    /// Distortion per candidate `k`; empty for a fixed `k`.
    pub distortion_curve: BTreeMap<usize, f64>,
    pub clusters: Vec<ClusterSummary>,
    /// Respondent id to cluster label.
    pub assignments: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionEntry {
    pub respondent_id: String,
    pub session_id: String,
    pub reasons: Vec<String>,
}

/// Sidecar written by survey exports.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExclusionReport {
    /// Completed respondents flagged for exclusion (still present in responses).
    pub excluded: Vec<ExclusionEntry>,
    /// Sessions that were started but not completed; not exported.
    pub incomplete_sessions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyBundle {
    pub manifest: Manifest,
    pub sessions: Vec<SessionPlan>,
    pub responses: Vec<RespondentResponses>,
    pub profiles: Vec<ParticipantProfile>,
    pub fits: Option<FitsFile>,
    pub clusters: Option<ClustersFile>,
    pub lift_table: Option<LiftTable>,
    pub ground_truth: Option<Vec<GroundTruth>>,
    pub exclusions: Option<ExclusionReport>,
}

/// A bundle location problem found by validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub file: String,
    /// 1-based line, when the offending record could be located.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.file, l, self.message),
            None => write!(f, "{}: {}", self.file, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Validation(self.violations))
        }
    }
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("bundle types serialize");
    out.push(b'\n');
    out
}

fn profile_header() -> Vec<&'static str> {
    std::iter::once("participant_id").chain(Attribute::ALL.iter().map(|a| a.key())).collect()
}

pub fn profiles_csv(profiles: &[ParticipantProfile]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(profile_header()).expect("in-memory write");
    for p in profiles {
        let row = std::iter::once(p.participant_id.as_str()).chain(Attribute::ALL.iter().map(|a| p.get(*a).unwrap_or("")));
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn lift_table_csv(table: &LiftTable) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if table.rows.is_empty() {
        w.write_record(["attribute", "value", "cluster", "count", "cluster_size", "value_total", "n_total", "percentage", "lift", "flag"])
            .expect("in-memory write");
    }
    for r in &table.rows {
        w.serialize(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn parse_profiles(path: &Path, bytes: &[u8]) -> Result<Vec<ParticipantProfile>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(csv_err)?.clone();
    let mut columns = Vec::with_capacity(header.len());
    for (i, h) in header.iter().enumerate() {
        if i == 0 {
            if h != "participant_id" {
                return Err(Error::invalid(format!("{}: first column must be participant_id, found {h:?}", path.display())));
            }
            continue;
        }
        columns.push(h.parse::<Attribute>().map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?);
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let mut p = ParticipantProfile::new(&rec[0]);
        for (attr, value) in columns.iter().zip(rec.iter().skip(1)) {
            if !value.is_empty() {
                p.values.insert(*attr, value.to_string());
            }
        }
        out.push(p);
    }
    Ok(out)
}

fn parse_lift_table(path: &Path, bytes: &[u8]) -> Result<LiftTable> {
    let mut r = csv::Reader::from_reader(bytes);
    let rows = r
        .deserialize::<LiftRow>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|source| Error::Csv { path: path.to_path_buf(), source })?;
    Ok(LiftTable { rows })
}

fn parse_json<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

fn check_version(path: &Path, bytes: &[u8]) -> Result<()> {
    #[derive(Deserialize)]
    struct Probe {
        format_version: u32,
    }
    let probe: Probe = parse_json(path, bytes)?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: probe.format_version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

impl StudyBundle {
    /// Canonical file contents keyed by file name.
    pub fn to_files(&self) -> BTreeMap<&'static str, Vec<u8>> {
        let mut files = BTreeMap::new();
        files.insert(MANIFEST, json_bytes(&self.manifest));
        files.insert(SESSIONS, json_bytes(&self.sessions));
        files.insert(RESPONSES, json_bytes(&self.responses));
        files.insert(PROFILES, profiles_csv(&self.profiles));
        if let Some(f) = &self.fits {
            files.insert(FITS, json_bytes(f));
        }
        if let Some(c) = &self.clusters {
            files.insert(CLUSTERS, json_bytes(c));
        }
        if let Some(t) = &self.lift_table {
            files.insert(LIFT_TABLE, lift_table_csv(t));
        }
        if let Some(g) = &self.ground_truth {
            files.insert(GROUND_TRUTH, json_bytes(g));
        }
        if let Some(e) = &self.exclusions {
            files.insert(EXCLUSIONS, json_bytes(e));
        }
        files
    }

    /// Parses bundle files. `manifest.json` and `sessions.json` are required.
    pub fn from_files(files: &BTreeMap<String, Vec<u8>>, root: &Path) -> Result<Self> {
        let path = |name: &str| root.join(name);
        let required = |name: &str| {
            files.get(name).ok_or_else(|| Error::Io {
                path: path(name),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing bundle file"),
            })
        };
        let manifest_bytes = required(MANIFEST)?;
        check_version(&path(MANIFEST), manifest_bytes)?;
        Ok(Self {
            manifest: parse_json(&path(MANIFEST), manifest_bytes)?,
            sessions: parse_json(&path(SESSIONS), required(SESSIONS)?)?,
            responses: files.get(RESPONSES).map(|b| parse_json(&path(RESPONSES), b)).transpose()?.unwrap_or_default(),
            profiles: files.get(PROFILES).map(|b| parse_profiles(&path(PROFILES), b)).transpose()?.unwrap_or_default(),
            fits: files.get(FITS).map(|b| parse_json(&path(FITS), b)).transpose()?,
            clusters: files.get(CLUSTERS).map(|b| parse_json(&path(CLUSTERS), b)).transpose()?,
            lift_table: files.get(LIFT_TABLE).map(|b| parse_lift_table(&path(LIFT_TABLE), b)).transpose()?,
            ground_truth: files.get(GROUND_TRUTH).map(|b| parse_json(&path(GROUND_TRUTH), b)).transpose()?,
            exclusions: files.get(EXCLUSIONS).map(|b| parse_json(&path(EXCLUSIONS), b)).transpose()?,
        })
    }

    /// Respondents not flagged for exclusion.
    pub fn included_responses(&self) -> impl Iterator<Item = &RespondentResponses> {
        self.responses.iter().filter(|r| !r.flags.excluded())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes every file of the bundle and removes bundle files it does not
/// contain, so that reading the directory back yields the same bundle.
/// Files whose content is unchanged are not rewritten.
pub fn write_bundle(bundle: &StudyBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = bundle.to_files();
    for name in BUNDLE_FILES {
        let path = dir.join(name);
        match files.get(name) {
            Some(bytes) => {
                if fs::read(&path).ok().as_deref() == Some(bytes.as_slice()) {
                    continue;
                }
                let tmp = dir.join(format!(".{name}.tmp"));
                fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
                fs::rename(&tmp, &path).map_err(io_err(&path))?;
            }
            None => {
                if path.exists() {
                    fs::remove_file(&path).map_err(io_err(&path))?;
                }
            }
        }
    }
    Ok(())
}

fn read_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    if !dir.is_dir() {
        return Err(Error::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "bundle directory not found"),
        });
    }
    let mut files = BTreeMap::new();
    for name in BUNDLE_FILES {
        let path = dir.join(name);
        if path.exists() {
            files.insert(name.to_string(), fs::read(&path).map_err(io_err(&path))?);
        }
    }
    Ok(files)
}

pub fn read_bundle(dir: &Path) -> Result<StudyBundle> {
    StudyBundle::from_files(&read_files(dir)?, dir)
}

/// Validates the bundle in `dir`. Only an unreadable directory is an error;
/// everything else is reported as a violation.
pub fn validate_bundle(dir: &Path) -> Result<ValidationReport> {
    Ok(validate_files(&read_files(dir)?))
}

/// Groups each respondent's choices into records, joined with the task
/// definitions from their session.
pub fn choice_records(sessions: &[SessionPlan], responses: &[RespondentResponses]) -> Result<BTreeMap<String, Vec<ChoiceRecord>>> {
    let by_id: BTreeMap<&str, &SessionPlan> = sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
    let mut out = BTreeMap::new();
    for r in responses {
        let session = by_id
            .get(r.session_id.as_str())
            .ok_or_else(|| Error::invalid(format!("respondent {} references unknown session {}", r.respondent_id, r.session_id)))?;
        let records = r
            .choices
            .iter()
            .map(|c| {
                let task = session
                    .tasks
                    .iter()
                    .find(|t| t.task_id == c.task_id)
                    .ok_or_else(|| Error::invalid(format!("respondent {} references unknown task {}", r.respondent_id, c.task_id)))?;
                ChoiceRecord::from_task(task, c.chosen)
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(r.respondent_id.clone(), records);
    }
    Ok(out)
}

/// Finds 1-based lines of JSON `"key": "value"` pairs in pretty-printed text.
struct Locator<'a> {
    lines: Vec<&'a str>,
}

impl<'a> Locator<'a> {
    fn new(text: &'a str) -> Self {
        Self { lines: text.lines().collect() }
    }

    fn pair(&self, key: &str, value: &str, after: usize) -> Option<usize> {
        let needle = format!("{}: {}", serde_json::to_string(key).ok()?, serde_json::to_string(value).ok()?);
        self.lines
            .iter()
            .enumerate()
            .skip(after.saturating_sub(1))
            .find(|(_, l)| l.contains(&needle))
            .map(|(i, _)| i + 1)
    }

    /// Line of the `n`-th (0-based) occurrence of `"key":`.
    fn nth_key(&self, key: &str, n: usize) -> Option<usize> {
        let needle = format!("{}:", serde_json::to_string(key).ok()?);
        self.lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.trim_start().starts_with(&needle))
            .nth(n)
            .map(|(i, _)| i + 1)
    }
}

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn push(&mut self, file: &str, line: Option<usize>, message: impl Into<String>) {
        self.violations.push(Violation {
            file: file.to_string(),
            line,
            message: message.into(),
        });
    }

    fn parse<T: DeserializeOwned>(&mut self, file: &str, bytes: &[u8]) -> Option<T> {
        match serde_json::from_slice(bytes) {
            Ok(v) => Some(v),
            Err(e) => {
                let line = (e.line() > 0).then_some(e.line());
                self.push(file, line, format!("schema violation: {e}"));
                None
            }
        }
    }
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap_or("")
}

/// Schema and referential-integrity checks over raw bundle files.
pub fn validate_files<K: AsRef<str> + Ord>(files: &BTreeMap<K, Vec<u8>>) -> ValidationReport {
    let files: BTreeMap<&str, &[u8]> = files.iter().map(|(k, v)| (k.as_ref(), v.as_slice())).collect();
    let mut ck = Checker { violations: Vec::new() };

    for name in files.keys() {
        if !BUNDLE_FILES.contains(name) {
            ck.push(name, None, "unknown file in bundle");
        }
    }

    match files.get(MANIFEST) {
        None => ck.push(MANIFEST, None, "missing"),
        Some(b) => {
            if let Some(m) = ck.parse::<Manifest>(MANIFEST, b) {
                if m.format_version != FORMAT_VERSION {
                    let line = Locator::new(text(b)).nth_key("format_version", 0);
                    ck.push(MANIFEST, line, format!("format_version {} is not supported (expected {FORMAT_VERSION})", m.format_version));
                }
            }
        }
    }

    // Sessions.
    let mut tasks_by_session: BTreeMap<String, (BTreeSet<String>, usize)> = BTreeMap::new();
    match files.get(SESSIONS) {
        None => ck.push(SESSIONS, None, "missing"),
        Some(b) => {
            if let Some(sessions) = ck.parse::<Vec<SessionPlan>>(SESSIONS, b) {
                let loc = Locator::new(text(b));
                for (i, s) in sessions.iter().enumerate() {
                    let sline = loc.nth_key("session_id", i);
                    if tasks_by_session.contains_key(&s.session_id) {
                        ck.push(SESSIONS, sline, format!("duplicate session_id {}", s.session_id));
                        continue;
                    }
                    let mut ids = BTreeSet::new();
                    for t in &s.tasks {
                        let tline = loc.pair("task_id", &t.task_id, sline.unwrap_or(1));
                        if !ids.insert(t.task_id.clone()) {
                            ck.push(SESSIONS, tline, format!("duplicate task_id {} in session {}", t.task_id, s.session_id));
                        }
                        if let Err(msg) = t.check() {
                            ck.push(SESSIONS, tline, format!("task {}: {msg}", t.task_id));
                        }
                    }
                    tasks_by_session.insert(s.session_id.clone(), (ids, s.attention_check.options.len()));
                }
            }
        }
    }

    // Responses.
    let mut respondents: BTreeSet<String> = BTreeSet::new();
    if let Some(b) = files.get(RESPONSES) {
        if let Some(responses) = ck.parse::<Vec<RespondentResponses>>(RESPONSES, b) {
            let loc = Locator::new(text(b));
            let mut choice_index = 0;
            for (i, r) in responses.iter().enumerate() {
                let rline = loc.nth_key("respondent_id", i);
                if !respondents.insert(r.respondent_id.clone()) {
                    ck.push(RESPONSES, rline, format!("duplicate respondent_id {}", r.respondent_id));
                }
                let session = tasks_by_session.get(&r.session_id);
                if session.is_none() && files.contains_key(SESSIONS) {
                    let line = loc.pair("session_id", &r.session_id, rline.unwrap_or(1));
                    ck.push(RESPONSES, line, format!("respondent {} references unknown session {}", r.respondent_id, r.session_id));
                }
                if let (Some(a), Some((_, n_options))) = (r.attention_answer, session) {
                    if a >= *n_options {
                        ck.push(RESPONSES, rline, format!("respondent {}: attention answer {a} out of range", r.respondent_id));
                    }
                }
                let mut seen = BTreeSet::new();
                for c in &r.choices {
                    let cline = loc.nth_key("task_id", choice_index);
                    choice_index += 1;
                    if !seen.insert(c.task_id.as_str()) {
                        ck.push(RESPONSES, cline, format!("respondent {} answers task {} twice", r.respondent_id, c.task_id));
                    }
                    if let Some((ids, _)) = session {
                        if !ids.contains(&c.task_id) {
                            ck.push(RESPONSES, cline, format!("respondent {} references unknown task_id {}", r.respondent_id, c.task_id));
                        }
                    }
                }
            }
        }
    }

    // Profiles.
    if let Some(b) = files.get(PROFILES) {
        match parse_profiles(Path::new(PROFILES), b) {
            Err(e) => ck.push(PROFILES, Some(1), format!("schema violation: {e}")),
            Ok(profiles) => {
                let mut ids = BTreeSet::new();
                for (i, p) in profiles.iter().enumerate() {
                    let line = Some(i + 2);
                    if !ids.insert(&p.participant_id) {
                        ck.push(PROFILES, line, format!("duplicate participant_id {}", p.participant_id));
                    }
                    for (attr, value) in p.vocabulary_violations() {
                        ck.push(PROFILES, line, format!("participant {}: {value:?} is not a valid {attr} answer", p.participant_id));
                    }
                    if !respondents.is_empty() && !respondents.contains(&p.participant_id) {
                        ck.push(PROFILES, line, format!("profile {} has no respondent", p.participant_id));
                    }
                }
            }
        }
    }

    // Fits.
    let mut fitted: BTreeSet<String> = BTreeSet::new();
    if let Some(b) = files.get(FITS) {
        if let Some(f) = ck.parse::<FitsFile>(FITS, b) {
            let loc = Locator::new(text(b));
            for (i, fit) in f.fits.iter().enumerate() {
                let line = loc.nth_key("respondent_id", i);
                if !fitted.insert(fit.respondent_id.clone()) {
                    ck.push(FITS, line, format!("duplicate fit for {}", fit.respondent_id));
                }
                if !respondents.contains(&fit.respondent_id) {
                    ck.push(FITS, line, format!("fit references unknown respondent {}", fit.respondent_id));
                }
                if !fit.prefs.is_finite() {
                    ck.push(FITS, line, format!("non-finite coefficients for {}", fit.respondent_id));
                }
            }
        }
    }

    // Clusters.
    let mut cluster_sizes: BTreeMap<String, usize> = BTreeMap::new();
    if let Some(b) = files.get(CLUSTERS) {
        if let Some(c) = ck.parse::<ClustersFile>(CLUSTERS, b) {
            let loc = Locator::new(text(b));
            if c.clusters.len() != c.k {
                ck.push(CLUSTERS, loc.nth_key("k", 0), format!("k = {} but {} clusters listed", c.k, c.clusters.len()));
            }
            for s in &c.clusters {
                if cluster_sizes.insert(s.label.clone(), s.size).is_some() {
                    ck.push(CLUSTERS, loc.pair("label", &s.label, 1), format!("duplicate cluster label {}", s.label));
                }
            }
            let mut counted: BTreeMap<&str, usize> = BTreeMap::new();
            let assign_start = loc.nth_key("assignments", 0).unwrap_or(1);
            for (id, label) in &c.assignments {
                *counted.entry(label).or_default() += 1;
                let line = loc.pair(id, label, assign_start);
                if !cluster_sizes.contains_key(label) {
                    ck.push(CLUSTERS, line, format!("{id} assigned to unknown cluster {label}"));
                }
                if files.contains_key(FITS) && !fitted.contains(id) {
                    ck.push(CLUSTERS, line, format!("assignment references unfitted respondent {id}"));
                }
            }
            for (label, size) in &cluster_sizes {
                let n = counted.get(label.as_str()).copied().unwrap_or(0);
                if n != *size {
                    ck.push(CLUSTERS, loc.pair("label", label, 1), format!("cluster {label} lists size {size} but has {n} members"));
                }
            }
        }
    }

    // Lift table.
    if let Some(b) = files.get(LIFT_TABLE) {
        match parse_lift_table(Path::new(LIFT_TABLE), b) {
            Err(e) => ck.push(LIFT_TABLE, None, format!("schema violation: {e}")),
            Ok(t) => {
                let mut sums: BTreeMap<(&str, &str), (u64, u64)> = BTreeMap::new();
                for (i, r) in t.rows.iter().enumerate() {
                    let line = Some(i + 2);
                    if !cluster_sizes.is_empty() && !cluster_sizes.contains_key(&r.cluster) {
                        ck.push(LIFT_TABLE, line, format!("row references unknown cluster {}", r.cluster));
                    }
                    match lift(r.count, r.value_total, r.cluster_size, r.n_total) {
                        Ok(l) if derived(l) == r.lift => {}
                        Ok(l) => ck.push(LIFT_TABLE, line, format!("lift {} does not match counts (expected {})", r.lift, derived(l))),
                        Err(e) => ck.push(LIFT_TABLE, line, e.to_string()),
                    }
                    let e = sums.entry((&r.attribute, &r.cluster)).or_insert((0, r.cluster_size));
                    e.0 += r.count;
                }
                for ((attr, cluster), (sum, size)) in sums {
                    if sum != size {
                        ck.push(LIFT_TABLE, None, format!("{attr} counts in cluster {cluster} sum to {sum}, cluster size is {size}"));
                    }
                }
            }
        }
    }

    // Ground truth.
    if let Some(b) = files.get(GROUND_TRUTH) {
        if let Some(g) = ck.parse::<Vec<GroundTruth>>(GROUND_TRUTH, b) {
            let loc = Locator::new(text(b));
            let mut ids = BTreeSet::new();
            for (i, t) in g.iter().enumerate() {
                let line = loc.nth_key("respondent_id", i);
                if !ids.insert(&t.respondent_id) {
                    ck.push(GROUND_TRUTH, line, format!("duplicate entry for {}", t.respondent_id));
                }
                if !respondents.contains(&t.respondent_id) {
                    ck.push(GROUND_TRUTH, line, format!("unknown respondent {}", t.respondent_id));
                }
            }
        }
    }

    if let Some(b) = files.get(EXCLUSIONS) {
        if let Some(e) = ck.parse::<ExclusionReport>(EXCLUSIONS, b) {
            let loc = Locator::new(text(b));
            for (i, x) in e.excluded.iter().enumerate() {
                if !respondents.contains(&x.respondent_id) {
                    ck.push(EXCLUSIONS, loc.nth_key("respondent_id", i), format!("unknown respondent {}", x.respondent_id));
                }
            }
        }
    }

    ValidationReport { violations: ck.violations }
}

/// Validates an in-memory bundle through its canonical files.
pub fn validate(bundle: &StudyBundle) -> ValidationReport {
    validate_files(&bundle.to_files())
}
