//! Headless drivers behind the `carevoice` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use carevoice_core::audio::{parse_wav, AudioClip};
use carevoice_core::bench::{run_bench, scripted_answers, BenchReport, DEFAULT_ANSWERS};
use carevoice_core::language::LanguageTag;
use carevoice_core::providers::Providers;
use carevoice_core::questionnaire::{prerender_prompts, Questionnaire};
use carevoice_core::session::{run_session, ScriptedAudio, SessionContext, SessionPolicy, SessionRecord, Turn};
use carevoice_core::store::{SessionFilter, SessionSummary, Store};
use serde::Serialize;

use crate::results::ResultsDocument;

pub type CommandError = Box<dyn std::error::Error + Send + Sync>;
pub type CommandResult<T> = Result<T, CommandError>;

/// Subdirectory of the data root that holds benchmark sessions.
pub const BENCH_STORE_DIR: &str = "bench";

#[derive(Debug, Clone)]
pub struct ImportDoc {
    pub path: PathBuf,
    pub id: Option<String>,
    pub title: Option<String>,
    pub specialist_language: LanguageTag,
    pub welcome_text: String,
    pub dry_run: bool,
    pub prerender: Vec<LanguageTag>,
}

/// Extracts the questions of a plain-text document and saves them as a
/// questionnaire, optionally rendering prompt audio for some languages.
pub fn import_doc(store: &Store, providers: &Providers, policy: &SessionPolicy, args: &ImportDoc) -> CommandResult<Questionnaire> {
    let document = fs::read_to_string(&args.path).map_err(|e| format!("{}: {e}", args.path.display()))?;
    let stem = args
        .path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "questionnaire".into());
    let id = args.id.clone().unwrap_or_else(|| slug(&stem));
    let title = args.title.clone().unwrap_or(stem);
    let q = Questionnaire::from_document(id, title, args.specialist_language.clone(), args.welcome_text.clone(), &document)?;
    if args.dry_run {
        return Ok(q);
    }
    store.save_questionnaire(&q)?;
    for language in &args.prerender {
        let dest = store.prompt_dir(&q.id, language);
        prerender_prompts(&q, providers.tts.as_ref(), providers.translator.as_ref(), language, policy.speech_rate, &dest)?;
    }
    Ok(q)
}

/// Lowercase id made of `[a-z0-9-]`.
pub fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    let out = out.trim_end_matches('-');
    if out.is_empty() {
        "questionnaire".into()
    } else {
        out.chars().take(64).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub questionnaire_id: String,
    pub device_id: String,
    /// WAV files for the welcome turn, in take order.
    pub welcome: Vec<PathBuf>,
    /// `(1-based question number, WAV file)`, in take order per question.
    pub answers: Vec<(usize, PathBuf)>,
    /// Replies synthesized with the configured TTS, one per question in
    /// order, plus a greeting for the welcome turn. Ignored when empty.
    pub replies: Vec<String>,
    pub reply_language: Option<LanguageTag>,
}

fn read_clip(path: &Path) -> CommandResult<AudioClip> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(parse_wav(&bytes).map_err(|e| format!("{}: {e}", path.display()))?)
}

/// Runs one session from audio files (and optional synthesized replies)
/// and persists it. An aborted session is persisted and reported as an
/// error.
pub fn run(store: &Store, providers: &Providers, policy: &SessionPolicy, args: &RunArgs) -> CommandResult<SessionRecord> {
    let q = store.load_questionnaire(&args.questionnaire_id)?;
    let mut audio = ScriptedAudio::new();
    for path in &args.welcome {
        audio.push_take(Turn::Welcome, read_clip(path)?);
    }
    for (n, path) in &args.answers {
        if *n == 0 || *n > q.questions.len() {
            return Err(format!("answer {n} is outside 1..={}", q.questions.len()).into());
        }
        audio.push_take(Turn::Question(n - 1), read_clip(path)?);
    }
    if !args.replies.is_empty() {
        let language = args
            .reply_language
            .clone()
            .unwrap_or_else(|| q.specialist_language.clone());
        let replies: Vec<&str> = args.replies.iter().map(String::as_str).collect();
        for (turn, clip) in scripted_answers(&q, providers.tts.as_ref(), &language, &replies)? {
            if turn != Turn::Welcome || args.welcome.is_empty() {
                audio.push_take(turn, clip);
            }
        }
    }
    let prompts = store.prompt_caches(&q);
    let ctx = SessionContext {
        questionnaire: &q,
        providers,
        policy,
        device_id: &args.device_id,
        prompts: &prompts,
    };
    Ok(run_session(&ctx, &mut audio, store, &mut ())?)
}

#[derive(Debug, Clone)]
pub enum BenchSource {
    Stored(String),
    Document(PathBuf),
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub source: BenchSource,
    pub language: LanguageTag,
    pub answers: Vec<String>,
    pub repetitions: usize,
}

/// Repeats a scripted session and reports per-question stage timings.
/// Sessions go to a separate store under the data root.
pub fn bench(data_root: &Path, providers: &Providers, policy: &SessionPolicy, args: &BenchArgs) -> CommandResult<BenchReport> {
    if args.repetitions == 0 {
        return Err("repetitions must be at least 1".into());
    }
    let q = match &args.source {
        BenchSource::Stored(id) => Store::open(data_root)?.load_questionnaire(id)?,
        BenchSource::Document(path) => {
            let document = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            Questionnaire::from_document("bench", "bench", LanguageTag::parse("en")?, "Hello, please say a few words.", &document)?
        }
    };
    let store = Store::open(data_root.join(BENCH_STORE_DIR))?;
    let answers: Vec<&str> = if args.answers.is_empty() {
        DEFAULT_ANSWERS.to_vec()
    } else {
        args.answers.iter().map(String::as_str).collect()
    };
    let script = scripted_answers(&q, providers.tts.as_ref(), &args.language, &answers)?;
    let ctx = SessionContext {
        questionnaire: &q,
        providers,
        policy,
        device_id: "bench",
        prompts: &[],
    };
    Ok(run_bench(&ctx, &script, &store, args.repetitions)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WavSummary {
    pub sample_rate_hz: u32,
    pub bit_depth: u16,
    pub channels: u16,
    pub frames: usize,
    pub duration_seconds: f64,
    pub rms: f64,
    pub metadata: std::collections::BTreeMap<String, String>,
}

pub fn inspect_wav(path: &Path) -> CommandResult<WavSummary> {
    let clip = read_clip(path)?;
    let f = clip.format();
    Ok(WavSummary {
        sample_rate_hz: f.sample_rate_hz(),
        bit_depth: f.bit_depth(),
        channels: f.channels(),
        frames: clip.frame_count(),
        duration_seconds: clip.duration_seconds(),
        rms: carevoice_core::audio::rms_level(&clip),
        metadata: clip.metadata().clone(),
    })
}

pub fn inspect_session(store: &Store, id: &str) -> CommandResult<ResultsDocument> {
    Ok(ResultsDocument::from(&store.load_session(id)?))
}

pub fn list_sessions(store: &Store, filter: &SessionFilter) -> CommandResult<Vec<SessionSummary>> {
    Ok(store.list_sessions(filter)?)
}
