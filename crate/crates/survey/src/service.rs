//! Session registry and bundle export.

use std::collections::BTreeMap;
use std::io::{Cursor, Write};
use std::sync::{Arc, Mutex};

use metric_prefs::datastore::{ExclusionEntry, ExclusionReport, Manifest};
use metric_prefs::{seed, Error, Result, StudyBundle};
use rand::Rng;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipWriter};

use crate::config::SurveyConfig;
use crate::session::Session;

struct Entry {
    seq: u64,
    session: Arc<Mutex<Session>>,
}

/// All sessions of one deployment. Operations on different sessions run
/// concurrently; operations on one session are serialized by its lock.
pub struct Survey {
    config: SurveyConfig,
    next_seq: Mutex<u64>,
    sessions: Mutex<BTreeMap<String, Entry>>,
}

impl Survey {
    pub fn new(config: SurveyConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            next_seq: Mutex::new(0),
            sessions: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn config(&self) -> &SurveyConfig {
        &self.config
    }

    /// Starts a session with a random 128-bit id. The task plan comes from
    /// the master seed and the creation index, not from the id.
    pub fn create_session(&self) -> Result<String> {
        let seq = {
            let mut next = self.next_seq.lock().expect("sequence lock");
            let seq = *next;
            *next += 1;
            seq
        };
        let session_id = format!("{:032x}", rand::rng().random::<u128>());
        let session = Session::new(
            session_id.clone(),
            format!("resp-{seq:05}"),
            seed::derive(self.config.seed, seq),
            &self.config,
        )?;
        self.sessions.lock().expect("registry lock").insert(
            session_id.clone(),
            Entry {
                seq,
                session: Arc::new(Mutex::new(session)),
            },
        );
        Ok(session_id)
    }

    pub fn session(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.lock().expect("registry lock").get(id).map(|e| e.session.clone())
    }

    /// Snapshot of every session in creation order. The registry lock is held
    /// for the whole copy, so no session can be created or advanced midway.
    fn snapshot(&self) -> Vec<Session> {
        let registry = self.sessions.lock().expect("registry lock");
        let mut entries: Vec<&Entry> = registry.values().collect();
        entries.sort_by_key(|e| e.seq);
        let guards: Vec<_> = entries.iter().map(|e| e.session.lock().expect("session lock")).collect();
        guards.iter().map(|g| (**g).clone()).collect()
    }

    /// Completed sessions as a study bundle, with an exclusions report listing
    /// flagged respondents and unfinished sessions.
    pub fn export(&self) -> Result<StudyBundle> {
        let mut bundle = StudyBundle::default();
        let mut exclusions = ExclusionReport::default();
        for s in self.snapshot() {
            if s.phase() != crate::session::Phase::Done {
                exclusions.incomplete_sessions.push(s.session_id.clone());
                continue;
            }
            let responses = s.responses();
            if responses.flags.excluded() {
                exclusions.excluded.push(ExclusionEntry {
                    respondent_id: responses.respondent_id.clone(),
                    session_id: responses.session_id.clone(),
                    reasons: responses.flags.reasons(),
                });
            }
            bundle.profiles.push(s.profile().cloned().expect("completed sessions have a profile"));
            bundle.responses.push(responses);
            bundle.sessions.push(s.plan);
        }
        let mut manifest = Manifest::default();
        manifest.record_stage("survey", Some(self.config.seed), &self.config)?;
        bundle.manifest = manifest;
        bundle.exclusions = Some(exclusions);
        Ok(bundle)
    }

    /// The export as a zip archive holding the bundle files at its root.
    pub fn export_zip(&self) -> Result<Vec<u8>> {
        bundle_zip(&self.export()?)
    }
}

/// Zips the bundle files with fixed timestamps, so equal bundles give equal
/// archives.
pub fn bundle_zip(bundle: &StudyBundle) -> Result<Vec<u8>> {
    let zip_err = |e: zip::result::ZipError| Error::invalid(format!("zip: {e}"));
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let options = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default());
    for (name, bytes) in bundle.to_files() {
        zip.start_file(name, options).map_err(zip_err)?;
        zip.write_all(&bytes).map_err(|e| Error::invalid(format!("zip: {e}")))?;
    }
    Ok(zip.finish().map_err(zip_err)?.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use metric_prefs::datastore::validate;

    #[test]
    fn session_ids_are_unique_and_opaque() {
        let s = Survey::new(SurveyConfig { tasks: 1, ..SurveyConfig::default() }).unwrap();
        let a = s.create_session().unwrap();
        let b = s.create_session().unwrap();
        assert_ne!(a, b);
        assert_eq!(a.len(), 32);
        assert!(s.session("missing").is_none());
    }

    #[test]
    fn plans_follow_creation_order() {
        let cfg = SurveyConfig { tasks: 2, seed: 3, ..SurveyConfig::default() };
        let s1 = Survey::new(cfg.clone()).unwrap();
        let s2 = Survey::new(cfg).unwrap();
        let a = s1.session(&s1.create_session().unwrap()).unwrap();
        let b = s2.session(&s2.create_session().unwrap()).unwrap();
        assert_eq!(a.lock().unwrap().plan.tasks, b.lock().unwrap().plan.tasks);
    }

    #[test]
    fn empty_export_is_valid() {
        let s = Survey::new(SurveyConfig::default()).unwrap();
        s.create_session().unwrap();
        let b = s.export().unwrap();
        assert!(b.sessions.is_empty());
        assert_eq!(b.exclusions.as_ref().unwrap().incomplete_sessions.len(), 1);
        assert!(validate(&b).is_valid(), "{:?}", validate(&b));
    }

    #[test]
    fn zip_is_deterministic() {
        let s = Survey::new(SurveyConfig::default()).unwrap();
        let b = s.export().unwrap();
        assert_eq!(bundle_zip(&b).unwrap(), bundle_zip(&b).unwrap());
    }
}
