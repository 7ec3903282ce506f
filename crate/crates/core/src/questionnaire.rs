//! Question sets: extraction from plain text, manifest validation and
//! pre-rendered prompt audio.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{parse_wav, write_wav, AudioClip, AudioError};
use crate::fsutil::{is_safe_id, sync_parent, write_atomic};
use crate::language::LanguageTag;
use crate::providers::{ProviderError, TextToSpeech, Translator};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldProblem {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn problem(field: impl Into<String>, message: impl Into<String>) -> FieldProblem {
    FieldProblem {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Error)]
pub enum QuestionnaireError {
    #[error("invalid questionnaire manifest: {}", join_problems(.problems))]
    InvalidManifest { problems: Vec<FieldProblem> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

fn join_problems(problems: &[FieldProblem]) -> String {
    problems.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl QuestionnaireError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        QuestionnaireError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Field diagnostics when this is a validation failure.
    pub fn problems(&self) -> &[FieldProblem] {
        match self {
            QuestionnaireError::InvalidManifest { problems } => problems,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub id: String,
    pub title: String,
    pub specialist_language: LanguageTag,
    pub welcome_text: String,
    pub questions: Vec<Question>,
}

/// Splits text into sentences and keeps those ending in `?`.
///
/// Sentences end at `.`, `!`, `?` or a paragraph break (a line holding only
/// whitespace). Inner whitespace runs collapse to one space. Segments with
/// no letters or digits are dropped. Ids are `q1..qN` in document order.
pub fn extract_questions(document: &str) -> Vec<Question> {
    let text = document.replace("\r\n", "\n").replace('\r', "\n");
    let mut texts = Vec::new();
    for paragraph in paragraphs(&text) {
        let mut segment = String::new();
        for c in paragraph.chars() {
            segment.push(c);
            match c {
                '?' => {
                    let q = collapse_whitespace(&segment);
                    if q.chars().any(char::is_alphanumeric) {
                        texts.push(q);
                    }
                    segment.clear();
                }
                '.' | '!' => segment.clear(),
                _ => {}
            }
        }
    }
    texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| Question {
            id: format!("q{}", i + 1),
            text,
            position: i,
        })
        .collect()
}

fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for line in text.split('\n') {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Deserialize)]
struct RawManifest {
    id: Option<String>,
    title: Option<String>,
    specialist_language: Option<String>,
    welcome_text: Option<String>,
    questions: Option<Vec<RawQuestion>>,
}

#[derive(Debug, Deserialize)]
struct RawQuestion {
    id: Option<String>,
    text: Option<String>,
    position: Option<i64>,
}

impl Questionnaire {
    /// Validates every invariant and orders questions by position.
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        specialist_language: LanguageTag,
        welcome_text: impl Into<String>,
        questions: Vec<Question>,
    ) -> Result<Self, QuestionnaireError> {
        let mut q = Questionnaire {
            id: id.into(),
            title: title.into(),
            specialist_language,
            welcome_text: welcome_text.into(),
            questions,
        };
        q.questions.sort_by_key(|q| q.position);
        let problems = q.problems();
        if problems.is_empty() {
            Ok(q)
        } else {
            Err(QuestionnaireError::InvalidManifest { problems })
        }
    }

    /// Builds a questionnaire from the questions found in `document`.
    pub fn from_document(
        id: impl Into<String>,
        title: impl Into<String>,
        specialist_language: LanguageTag,
        welcome_text: impl Into<String>,
        document: &str,
    ) -> Result<Self, QuestionnaireError> {
        Self::new(id, title, specialist_language, welcome_text, extract_questions(document))
    }

    pub fn validate(&self) -> Result<(), QuestionnaireError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(QuestionnaireError::InvalidManifest { problems })
        }
    }

    fn problems(&self) -> Vec<FieldProblem> {
        let mut out = Vec::new();
        if !is_safe_id(&self.id) {
            out.push(problem("id", "must be 1-128 characters from [A-Za-z0-9._-], not starting with '.'"));
        }
        if self.welcome_text.trim().is_empty() {
            out.push(problem("welcome_text", "must not be empty"));
        }
        if self.questions.is_empty() {
            out.push(problem("questions", "at least one question is required"));
        }
        let mut ids = BTreeSet::new();
        let mut positions = BTreeSet::new();
        for (i, q) in self.questions.iter().enumerate() {
            let field = |name: &str| format!("questions[{i}].{name} ({})", q.id);
            if q.id.trim().is_empty() {
                out.push(problem(format!("questions[{i}].id"), "must not be empty"));
            } else if !ids.insert(q.id.as_str()) {
                out.push(problem(field("id"), "duplicate question id"));
            }
            let text = q.text.trim();
            if text.is_empty() {
                out.push(problem(field("text"), "must not be empty"));
            } else if !text.ends_with('?') {
                out.push(problem(field("text"), "must end with '?'"));
            }
            if !positions.insert(q.position) {
                out.push(problem(field("position"), "duplicate position"));
            }
        }
        let n = self.questions.len();
        if positions.len() == n && positions.iter().copied().ne(0..n) {
            out.push(problem("questions", format!("positions must be exactly 0..{}", n.saturating_sub(1))));
        }
        out
    }

    /// Parses and validates a manifest, reporting every bad field at once.
    pub fn from_json(json: &str) -> Result<Self, QuestionnaireError> {
        let raw: RawManifest = serde_json::from_str(json).map_err(|e| QuestionnaireError::InvalidManifest {
            problems: vec![problem("(document)", e.to_string())],
        })?;
        let mut problems = Vec::new();
        let mut required = |name: &str, v: Option<String>| {
            v.unwrap_or_else(|| {
                problems.push(problem(name, "missing"));
                String::new()
            })
        };
        let id = required("id", raw.id);
        let title = required("title", raw.title);
        let lang_raw = required("specialist_language", raw.specialist_language);
        let welcome_text = required("welcome_text", raw.welcome_text);
        let raw_questions = raw.questions.unwrap_or_else(|| {
            problems.push(problem("questions", "missing"));
            Vec::new()
        });

        let specialist_language = match LanguageTag::parse(&lang_raw) {
            Ok(tag) => Some(tag),
            Err(e) => {
                if !lang_raw.is_empty() {
                    problems.push(problem("specialist_language", e.to_string()));
                }
                None
            }
        };

        let mut questions = Vec::with_capacity(raw_questions.len());
        for (i, rq) in raw_questions.into_iter().enumerate() {
            let id = rq.id.unwrap_or_else(|| {
                problems.push(problem(format!("questions[{i}].id"), "missing"));
                String::new()
            });
            let text = rq.text.unwrap_or_else(|| {
                problems.push(problem(format!("questions[{i}].text ({id})"), "missing"));
                String::new()
            });
            let position = match rq.position {
                Some(p) if p >= 0 => p as usize,
                Some(p) => {
                    problems.push(problem(format!("questions[{i}].position ({id})"), format!("{p} is negative")));
                    continue;
                }
                None => {
                    problems.push(problem(format!("questions[{i}].position ({id})"), "missing"));
                    continue;
                }
            };
            questions.push(Question { id, text, position });
        }

        let candidate = Questionnaire {
            id,
            title,
            specialist_language: specialist_language.clone().unwrap_or_else(|| LanguageTag::parse("en").unwrap()),
            welcome_text,
            questions,
        };
        for p in candidate.problems() {
            if !problems.iter().any(|known| known.field == p.field) {
                problems.push(p);
            }
        }
        if !problems.is_empty() {
            return Err(QuestionnaireError::InvalidManifest { problems });
        }
        let mut q = candidate;
        q.questions.sort_by_key(|q| q.position);
        Ok(q)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("questionnaire serializes")
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }
}

pub fn load_questionnaire(path: &Path) -> Result<Questionnaire, QuestionnaireError> {
    let json = fs::read_to_string(path).map_err(|e| QuestionnaireError::io(path, e))?;
    Questionnaire::from_json(&json)
}

pub fn save_questionnaire(q: &Questionnaire, path: &Path) -> Result<(), QuestionnaireError> {
    q.validate()?;
    write_atomic(path, q.to_json().as_bytes()).map_err(|e| QuestionnaireError::io(path, e))
}

const PROMPT_INDEX: &str = "prompts.json";
const WELCOME_FILE: &str = "welcome.wav";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub question_id: String,
    pub file: String,
    /// The text actually spoken, after translation.
    pub text: String,
}

/// Pre-rendered prompt audio for one questionnaire in one language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCache {
    pub questionnaire_id: String,
    pub language: LanguageTag,
    pub rate: f64,
    pub welcome: PromptEntry,
    pub prompts: Vec<PromptEntry>,
    #[serde(skip)]
    dir: PathBuf,
}

impl PromptCache {
    pub fn load(dir: &Path) -> Result<Self, QuestionnaireError> {
        let path = dir.join(PROMPT_INDEX);
        let json = fs::read_to_string(&path).map_err(|e| QuestionnaireError::io(&path, e))?;
        let mut cache: PromptCache = serde_json::from_str(&json).map_err(|e| QuestionnaireError::InvalidManifest {
            problems: vec![problem(PROMPT_INDEX, e.to_string())],
        })?;
        cache.dir = dir.to_path_buf();
        Ok(cache)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Question id to audio file path.
    pub fn entries(&self) -> BTreeMap<&str, PathBuf> {
        self.prompts
            .iter()
            .map(|p| (p.question_id.as_str(), self.dir.join(&p.file)))
            .collect()
    }

    pub fn covers(&self, q: &Questionnaire) -> bool {
        q.questions.iter().all(|question| self.entry(&question.id).is_some())
    }

    pub fn entry(&self, question_id: &str) -> Option<&PromptEntry> {
        self.prompts.iter().find(|p| p.question_id == question_id)
    }

    pub fn prompt_clip(&self, question_id: &str) -> Result<Option<AudioClip>, QuestionnaireError> {
        match self.entry(question_id) {
            Some(entry) => self.read_clip(&entry.file).map(Some),
            None => Ok(None),
        }
    }

    pub fn welcome_clip(&self) -> Result<AudioClip, QuestionnaireError> {
        self.read_clip(&self.welcome.file)
    }

    fn read_clip(&self, file: &str) -> Result<AudioClip, QuestionnaireError> {
        let path = self.dir.join(file);
        let bytes = fs::read(&path).map_err(|e| QuestionnaireError::io(&path, e))?;
        Ok(parse_wav(&bytes)?)
    }
}

/// Renders the welcome text and every question in `language` into `dest`.
///
/// Text is translated from the specialist language first when the two
/// differ. Files are rendered into a hidden staging directory that replaces
/// `dest` only once complete; on error `dest` is left untouched.
pub fn prerender_prompts(
    q: &Questionnaire,
    tts: &dyn TextToSpeech,
    translator: &dyn Translator,
    language: &LanguageTag,
    rate: f64,
    dest: &Path,
) -> Result<PromptCache, QuestionnaireError> {
    q.validate()?;
    let staging = hidden_sibling(dest, "staging");
    fs::create_dir_all(&staging).map_err(|e| QuestionnaireError::io(&staging, e))?;
    let result = render_into(q, tts, translator, language, rate, &staging).and_then(|mut cache| {
        publish_dir(&staging, dest)?;
        cache.dir = dest.to_path_buf();
        Ok(cache)
    });
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

fn render_into(
    q: &Questionnaire,
    tts: &dyn TextToSpeech,
    translator: &dyn Translator,
    language: &LanguageTag,
    rate: f64,
    dir: &Path,
) -> Result<PromptCache, QuestionnaireError> {
    let render = |text: &str, file: String| -> Result<PromptEntry, QuestionnaireError> {
        let spoken = if *language == q.specialist_language {
            text.to_string()
        } else {
            translator.translate(text, &q.specialist_language, language)?
        };
        let clip = tts.synthesize(&spoken, language, rate)?;
        let path = dir.join(&file);
        fs::write(&path, write_wav(&clip)).map_err(|e| QuestionnaireError::io(&path, e))?;
        Ok(PromptEntry {
            question_id: String::new(),
            file,
            text: spoken,
        })
    };

    let welcome = render(&q.welcome_text, WELCOME_FILE.to_string())?;
    let mut prompts = Vec::with_capacity(q.questions.len());
    for question in &q.questions {
        let mut entry = render(&question.text, format!("prompt-{}.wav", question.position))?;
        entry.question_id = question.id.clone();
        prompts.push(entry);
    }
    let cache = PromptCache {
        questionnaire_id: q.id.clone(),
        language: language.clone(),
        rate,
        welcome,
        prompts,
        dir: dir.to_path_buf(),
    };
    let index = dir.join(PROMPT_INDEX);
    let json = serde_json::to_string_pretty(&cache).expect("prompt index serializes");
    fs::write(&index, json).map_err(|e| QuestionnaireError::io(&index, e))?;
    Ok(cache)
}

fn hidden_sibling(path: &Path, tag: &str) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.{tag}-{}", uuid::Uuid::new_v4().simple()))
}

fn publish_dir(staging: &Path, dest: &Path) -> Result<(), QuestionnaireError> {
    if let Some(parent) = dest.parent() {
        fs::create_dir_all(parent).map_err(|e| QuestionnaireError::io(parent, e))?;
    }
    if dest.exists() {
        let retired = hidden_sibling(dest, "retired");
        fs::rename(dest, &retired).map_err(|e| QuestionnaireError::io(dest, e))?;
        if let Err(e) = fs::rename(staging, dest) {
            let _ = fs::rename(&retired, dest);
            return Err(QuestionnaireError::io(dest, e));
        }
        let _ = fs::remove_dir_all(&retired);
    } else {
        fs::rename(staging, dest).map_err(|e| QuestionnaireError::io(dest, e))?;
    }
    sync_parent(dest).map_err(|e| QuestionnaireError::io(dest, e))
}
