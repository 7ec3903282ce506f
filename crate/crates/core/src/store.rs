//! Directory-per-record persistence.
//!
//! ```text
//! <root>/questionnaires/<id>.json
//! <root>/sessions/<id>/manifest.json
//! <root>/sessions/<id>/welcome.wav
//! <root>/sessions/<id>/answer-<n>.wav      n = position + 1
//! <root>/sessions/.staging-<id>-<nonce>/   in-progress saves, never listed
//! ```
//!
//! A session directory only appears under its final name once its manifest
//! is complete; the staging directory is renamed into place as the last
//! step. Only `advice` changes after publication, via atomic replace.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{write_wav, AudioClip};
use crate::fsutil::{is_safe_id, sync_parent, write_atomic};
use crate::language::LanguageTag;
use crate::providers::EmotionLabel;
use crate::questionnaire::{PromptCache, Questionnaire, QuestionnaireError};
use crate::session::record::{SeriesPoint, SessionRecord, SessionStatus};

pub const MANIFEST_FILE: &str = "manifest.json";
const STAGING_PREFIX: &str = ".staging-";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{0} already exists")]
    AlreadyExists(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: corrupt manifest: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("injected fault at save step {0}")]
    InjectedFault(usize),
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub questionnaire_id: String,
    pub device_id: String,
    pub started_at: DateTime<Utc>,
    pub status: SessionStatus,
    pub detected_language: LanguageTag,
    pub final_label: Option<EmotionLabel>,
}

impl From<&SessionRecord> for SessionSummary {
    fn from(r: &SessionRecord) -> Self {
        SessionSummary {
            id: r.id.clone(),
            questionnaire_id: r.questionnaire_id.clone(),
            device_id: r.device_id.clone(),
            started_at: r.started_at,
            status: r.status,
            detected_language: r.detected_language.clone(),
            final_label: r.final_label,
        }
    }
}

/// Inclusive bounds on `started_at`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionFilter {
    pub questionnaire_id: Option<String>,
    pub device_id: Option<String>,
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl SessionFilter {
    fn matches(&self, s: &SessionSummary) -> bool {
        self.questionnaire_id.as_ref().map_or(true, |q| *q == s.questionnaire_id)
            && self.device_id.as_ref().map_or(true, |d| *d == s.device_id)
            && self.from.map_or(true, |f| s.started_at >= f)
            && self.to.map_or(true, |t| s.started_at <= t)
    }
}

/// Fails the n-th save step (0-based, counted across all saves) and leaves
/// the filesystem exactly as a crash at that point would.
#[derive(Debug, Default)]
struct FaultPlan {
    fail_at: Mutex<Option<usize>>,
    steps: AtomicUsize,
}

impl FaultPlan {
    fn check(&self) -> Result<(), StoreError> {
        let step = self.steps.fetch_add(1, Ordering::SeqCst);
        if *self.fail_at.lock().unwrap() == Some(step) {
            return Err(StoreError::InjectedFault(step));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    locks: Arc<Mutex<HashMap<String, Arc<Mutex<()>>>>>,
    faults: Arc<FaultPlan>,
}

impl Store {
    /// Opens or creates a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["questionnaires", "sessions"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
        }
        let probe = root.join(format!(".probe-{}", uuid::Uuid::new_v4().simple()));
        fs::write(&probe, b"").map_err(|e| StoreError::io(&root, e))?;
        let _ = fs::remove_file(&probe);
        Ok(Store {
            root,
            locks: Arc::default(),
            faults: Arc::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn sessions_dir(&self) -> PathBuf {
        self.root.join("sessions")
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.sessions_dir().join(id)
    }

    fn questionnaire_path(&self, id: &str) -> PathBuf {
        self.root.join("questionnaires").join(format!("{id}.json"))
    }

    /// Directory for pre-rendered prompts of one questionnaire and language.
    pub fn prompt_dir(&self, questionnaire_id: &str, language: &LanguageTag) -> PathBuf {
        self.root.join("prompts").join(questionnaire_id).join(language.as_str())
    }

    /// Every readable prompt cache of `q` that covers all of its questions.
    pub fn prompt_caches(&self, q: &Questionnaire) -> Vec<PromptCache> {
        let Ok(entries) = fs::read_dir(self.root.join("prompts").join(&q.id)) else {
            return Vec::new();
        };
        let mut caches: Vec<PromptCache> = entries
            .filter_map(|e| PromptCache::load(&e.ok()?.path()).ok())
            .filter(|c| c.questionnaire_id == q.id && c.covers(q))
            .collect();
        caches.sort_by(|a, b| a.language.cmp(&b.language));
        caches
    }

    /// Arms the fault injector: the `step`-th save step from now fails.
    /// `None` disarms it.
    pub fn inject_fault_at(&self, step: Option<usize>) {
        self.faults.steps.store(0, Ordering::SeqCst);
        *self.faults.fail_at.lock().unwrap() = step;
    }

    /// Save steps performed since the injector was last armed.
    pub fn steps_taken(&self) -> usize {
        self.faults.steps.load(Ordering::SeqCst)
    }

    fn lock_for(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap();
        locks.entry(id.to_string()).or_default().clone()
    }

    /// Removes staging directories left by interrupted saves.
    pub fn sweep_staging(&self) -> Result<usize, StoreError> {
        let dir = self.sessions_dir();
        let mut removed = 0;
        for entry in fs::read_dir(&dir).map_err(|e| StoreError::io(&dir, e))? {
            let entry = entry.map_err(|e| StoreError::io(&dir, e))?;
            if entry.file_name().to_string_lossy().starts_with(STAGING_PREFIX) {
                fs::remove_dir_all(entry.path()).map_err(|e| StoreError::io(&entry.path(), e))?;
                removed += 1;
            }
        }
        Ok(removed)
    }

    pub fn save_questionnaire(&self, q: &Questionnaire) -> Result<(), StoreError> {
        q.validate().map_err(|e| StoreError::InvalidRecord(e.to_string()))?;
        let lock = self.lock_for(&format!("questionnaire:{}", q.id));
        let _guard = lock.lock().unwrap();
        let path = self.questionnaire_path(&q.id);
        if path.exists() {
            return Err(StoreError::AlreadyExists(format!("questionnaire {}", q.id)));
        }
        write_atomic(&path, q.to_json().as_bytes()).map_err(|e| StoreError::io(&path, e))
    }

    pub fn load_questionnaire(&self, id: &str) -> Result<Questionnaire, StoreError> {
        if !is_safe_id(id) {
            return Err(StoreError::NotFound(format!("questionnaire {id}")));
        }
        let path = self.questionnaire_path(id);
        match fs::read_to_string(&path) {
            Ok(json) => Questionnaire::from_json(&json).map_err(|e: QuestionnaireError| StoreError::Corrupt {
                path,
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound(format!("questionnaire {id}"))),
            Err(e) => Err(StoreError::io(&path, e)),
        }
    }

    /// All questionnaires sorted by id.
    pub fn list_questionnaires(&self) -> Result<Vec<Questionnaire>, StoreError> {
        let dir = self.root.join("questionnaires");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| StoreError::io(&dir, e))? {
            let entry = entry.map_err(|e| StoreError::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".json") {
                if is_safe_id(id) {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        ids.iter().map(|id| self.load_questionnaire(id)).collect()
    }

    /// Starts a staged save for session `id`.
    pub fn begin_session(&self, id: &str) -> Result<SessionWriter, StoreError> {
        if !is_safe_id(id) {
            return Err(StoreError::InvalidRecord(format!("session id {id:?} is not a safe identifier")));
        }
        if self.session_dir(id).exists() {
            return Err(StoreError::AlreadyExists(format!("session {id}")));
        }
        self.faults.check()?;
        let staging = self
            .sessions_dir()
            .join(format!("{STAGING_PREFIX}{id}-{}", uuid::Uuid::new_v4().simple()));
        fs::create_dir(&staging).map_err(|e| StoreError::io(&staging, e))?;
        Ok(SessionWriter {
            store: self.clone(),
            id: id.to_string(),
            staging,
            written: Vec::new(),
            done: false,
        })
    }

    /// Saves a record and its attachments in one staged publication.
    pub fn save_session(&self, record: &SessionRecord, attachments: &[(String, AudioClip)]) -> Result<String, StoreError> {
        record.validate(None).map_err(StoreError::InvalidRecord)?;
        let mut writer = self.begin_session(&record.id)?;
        for (name, clip) in attachments {
            writer.write_attachment(name, clip)?;
        }
        writer.finish(record)
    }

    pub fn load_session(&self, id: &str) -> Result<SessionRecord, StoreError> {
        if !is_safe_id(id) {
            return Err(StoreError::NotFound(format!("session {id}")));
        }
        let path = self.session_dir(id).join(MANIFEST_FILE);
        let json = match fs::read_to_string(&path) {
            Ok(json) => json,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(format!("session {id}"))),
            Err(e) => return Err(StoreError::io(&path, e)),
        };
        serde_json::from_str(&json).map_err(|e| StoreError::Corrupt {
            path,
            reason: e.to_string(),
        })
    }

    /// Summaries newest first; equal timestamps order by id.
    pub fn list_sessions(&self, filter: &SessionFilter) -> Result<Vec<SessionSummary>, StoreError> {
        let dir = self.sessions_dir();
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| StoreError::io(&dir, e))? {
            let entry = entry.map_err(|e| StoreError::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !is_safe_id(&name) || !entry.path().join(MANIFEST_FILE).is_file() {
                continue;
            }
            let summary = SessionSummary::from(&self.load_session(&name)?);
            if filter.matches(&summary) {
                out.push(summary);
            }
        }
        out.sort_by(|a, b| b.started_at.cmp(&a.started_at).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }

    /// Sets the advice text. Writing the same text again is a no-op.
    pub fn attach_advice(&self, id: &str, advice: &str) -> Result<SessionRecord, StoreError> {
        if advice.trim().is_empty() {
            return Err(StoreError::InvalidRecord("advice must not be empty".into()));
        }
        let lock = self.lock_for(id);
        let _guard = lock.lock().unwrap();
        let mut record = self.load_session(id)?;
        if record.advice.as_deref() == Some(advice) {
            return Ok(record);
        }
        record.advice = Some(advice.to_string());
        let path = self.session_dir(id).join(MANIFEST_FILE);
        write_atomic(&path, manifest_json(&record).as_bytes()).map_err(|e| StoreError::io(&path, e))?;
        Ok(record)
    }

    pub fn emotion_series(&self, id: &str) -> Result<Vec<SeriesPoint>, StoreError> {
        Ok(self.load_session(id)?.emotion_series())
    }

    /// Raw bytes of a session attachment such as `answer-1.wav`.
    pub fn read_attachment(&self, id: &str, name: &str) -> Result<Vec<u8>, StoreError> {
        let record = self.load_session(id)?;
        if !record.attachment_names().contains(&name) {
            return Err(StoreError::NotFound(format!("attachment {name} of session {id}")));
        }
        let path = self.session_dir(id).join(name);
        fs::read(&path).map_err(|e| StoreError::io(&path, e))
    }
}

fn manifest_json(record: &SessionRecord) -> String {
    serde_json::to_string_pretty(record).expect("session record serializes")
}

/// An in-progress session save. Nothing is visible until [`finish`].
///
/// Dropping an unfinished writer removes its staging directory, except
/// after an injected fault, which simulates a crash.
///
/// [`finish`]: SessionWriter::finish
#[derive(Debug)]
pub struct SessionWriter {
    store: Store,
    id: String,
    staging: PathBuf,
    written: Vec<String>,
    done: bool,
}

impl SessionWriter {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn write_attachment(&mut self, name: &str, clip: &AudioClip) -> Result<(), StoreError> {
        if !is_safe_id(name) || !name.ends_with(".wav") {
            return Err(StoreError::InvalidRecord(format!("attachment name {name:?}")));
        }
        if self.written.iter().any(|w| w == name) {
            return Err(StoreError::AlreadyExists(format!("attachment {name}")));
        }
        self.step()?;
        let path = self.staging.join(name);
        fs::write(&path, write_wav(clip)).map_err(|e| StoreError::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Writes the manifest and publishes the session directory.
    pub fn finish(mut self, record: &SessionRecord) -> Result<String, StoreError> {
        if record.id != self.id {
            return Err(StoreError::InvalidRecord(format!("record id {} differs from writer id {}", record.id, self.id)));
        }
        record.validate(None).map_err(StoreError::InvalidRecord)?;
        for name in record.attachment_names() {
            if !self.written.iter().any(|w| w == name) {
                return Err(StoreError::InvalidRecord(format!("attachment {name} referenced but not written")));
            }
        }
        self.step()?;
        let manifest = self.staging.join(MANIFEST_FILE);
        let file = fs::File::create(&manifest).map_err(|e| StoreError::io(&manifest, e))?;
        io::Write::write_all(&mut &file, manifest_json(record).as_bytes()).map_err(|e| StoreError::io(&manifest, e))?;
        file.sync_all().map_err(|e| StoreError::io(&manifest, e))?;

        self.step()?;
        let lock = self.store.lock_for(&self.id);
        let _guard = lock.lock().unwrap();
        let target = self.store.session_dir(&self.id);
        if target.exists() {
            return Err(StoreError::AlreadyExists(format!("session {}", self.id)));
        }
        fs::rename(&self.staging, &target).map_err(|e| StoreError::io(&target, e))?;
        self.done = true;
        sync_parent(&target).map_err(|e| StoreError::io(&target, e))?;
        Ok(self.id.clone())
    }

    fn step(&mut self) -> Result<(), StoreError> {
        self.store.faults.check().inspect_err(|_| {
            // A crash leaves the staging directory behind.
            self.done = true;
        })
    }
}

impl Drop for SessionWriter {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}
