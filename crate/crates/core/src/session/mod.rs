//! The questionnaire state machine.
//!
//! A session plays a welcome prompt, detects the user's language from the
//! reply, then walks the questions in order: translate, synthesize, play,
//! record, transcribe, translate back, score. Unanswered questions are
//! replayed up to `max_repeats` times and then flagged as no-response.

pub mod record;

use std::collections::{BTreeMap, VecDeque};
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::capture::{
    playback, record_answer, CaptureError, ChunkSource, FileChunkSource, FrameSink, NullSink, RecordPolicy,
    RecordingOutcome, SilentSource,
};
use crate::language::LanguageTag;
use crate::providers::{select_language, ProviderError, Providers};
use crate::questionnaire::{PromptCache, Question, Questionnaire};
use crate::store::{SessionWriter, Store, StoreError};

pub use record::{
    aggregate, final_emotion, mean_scores, AnswerRecord, SeriesPoint, SessionRecord, SessionStatus, SCHEMA_VERSION,
    WELCOME_AUDIO,
};

pub const MAX_REPEATS_LIMIT: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionPolicy {
    pub max_repeats: u32,
    pub record: RecordPolicy,
    pub emotion_language: LanguageTag,
    pub speech_rate: f64,
}

impl Default for SessionPolicy {
    fn default() -> Self {
        SessionPolicy {
            max_repeats: 2,
            record: RecordPolicy::default(),
            emotion_language: LanguageTag::parse("en").unwrap(),
            speech_rate: 1.0,
        }
    }
}

impl SessionPolicy {
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.max_repeats > MAX_REPEATS_LIMIT {
            return Err(SessionError::InvalidPolicy(format!(
                "max_repeats {} exceeds {MAX_REPEATS_LIMIT}",
                self.max_repeats
            )));
        }
        if !(self.speech_rate > 0.0 && self.speech_rate.is_finite()) {
            return Err(SessionError::InvalidPolicy(format!("speech_rate {} must be positive", self.speech_rate)));
        }
        self.record
            .validate()
            .map_err(|e| SessionError::InvalidPolicy(e.to_string()))
    }
}

/// What stopped a session early.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AbortCause {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("audio device: {0}")]
    Audio(String),
    #[error("storage: {0}")]
    Storage(String),
}

#[derive(Debug, Error)]
pub enum SessionError {
    /// The partial record was persisted before this was returned.
    #[error("session {} aborted: {cause}", record.id)]
    Aborted { record: Box<SessionRecord>, cause: AbortCause },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid session policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid questionnaire: {0}")]
    InvalidQuestionnaire(String),
}

/// Which prompt a recording answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Turn {
    Welcome,
    /// 0-based question position.
    Question(usize),
}

/// Speaker and microphone as seen by the session.
pub trait AudioIo: Send {
    fn play(&mut self, clip: &AudioClip) -> Result<(), CaptureError>;
    fn listen(&mut self, turn: Turn, policy: &RecordPolicy) -> Result<RecordingOutcome, CaptureError>;
}

/// Live device path: one chunk source and one frame sink for every turn.
pub struct DeviceAudio {
    pub source: Box<dyn ChunkSource>,
    pub sink: Box<dyn FrameSink>,
}

impl AudioIo for DeviceAudio {
    fn play(&mut self, clip: &AudioClip) -> Result<(), CaptureError> {
        playback(clip, self.sink.as_mut()).map(|_| ())
    }

    fn listen(&mut self, _turn: Turn, policy: &RecordPolicy) -> Result<RecordingOutcome, CaptureError> {
        record_answer(self.source.as_mut(), policy)
    }
}

/// Prerecorded replies. Each `listen` for a turn consumes that turn's next
/// take through the real record loop; a turn with no takes left hears
/// silence.
#[derive(Default)]
pub struct ScriptedAudio {
    takes: BTreeMap<Turn, VecDeque<AudioClip>>,
    played: Vec<AudioClip>,
    listens: Vec<Turn>,
    sink: NullSink,
}

impl ScriptedAudio {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_take(mut self, turn: Turn, clip: AudioClip) -> Self {
        self.push_take(turn, clip);
        self
    }

    pub fn push_take(&mut self, turn: Turn, clip: AudioClip) {
        self.takes.entry(turn).or_default().push_back(clip);
    }

    /// Every clip played so far, in order.
    pub fn played(&self) -> &[AudioClip] {
        &self.played
    }

    /// Turns listened to so far, in order.
    pub fn listens(&self) -> &[Turn] {
        &self.listens
    }
}

impl AudioIo for ScriptedAudio {
    fn play(&mut self, clip: &AudioClip) -> Result<(), CaptureError> {
        playback(clip, &mut self.sink)?;
        self.played.push(clip.clone());
        Ok(())
    }

    fn listen(&mut self, turn: Turn, policy: &RecordPolicy) -> Result<RecordingOutcome, CaptureError> {
        self.listens.push(turn);
        match self.takes.get_mut(&turn).and_then(VecDeque::pop_front) {
            Some(take) => record_answer(&mut FileChunkSource::new(&take), policy),
            None => record_answer(&mut SilentSource, policy),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tts,
    Playback,
    Record,
    Stt,
    Translate,
    Emotion,
    Store,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Tts,
        Stage::Playback,
        Stage::Record,
        Stage::Stt,
        Stage::Translate,
        Stage::Emotion,
        Stage::Store,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Tts => "tts",
            Stage::Playback => "playback",
            Stage::Record => "record",
            Stage::Stt => "stt",
            Stage::Translate => "translate",
            Stage::Emotion => "emotion",
            Stage::Store => "store",
        }
    }
}

/// Receives the wall time of every pipeline stage as it completes.
pub trait StageObserver {
    fn stage(&mut self, turn: Turn, stage: Stage, elapsed: Duration);
}

impl StageObserver for () {
    fn stage(&mut self, _: Turn, _: Stage, _: Duration) {}
}

/// Sums stage times per turn.
#[derive(Debug, Clone, Default)]
pub struct StageTimings {
    pub totals: BTreeMap<(Turn, Stage), Duration>,
}

impl StageTimings {
    pub fn get(&self, turn: Turn, stage: Stage) -> Duration {
        self.totals.get(&(turn, stage)).copied().unwrap_or_default()
    }
}

impl StageObserver for StageTimings {
    fn stage(&mut self, turn: Turn, stage: Stage, elapsed: Duration) {
        *self.totals.entry((turn, stage)).or_default() += elapsed;
    }
}

/// Everything a session needs besides audio I/O.
pub struct SessionContext<'a> {
    pub questionnaire: &'a Questionnaire,
    pub providers: &'a Providers,
    pub policy: &'a SessionPolicy,
    pub device_id: &'a str,
    /// Pre-rendered prompts, used when their language matches.
    pub prompts: &'a [PromptCache],
}

struct Engine<'a, 'o> {
    ctx: &'a SessionContext<'a>,
    observer: &'o mut dyn StageObserver,
}

impl Engine<'_, '_> {
    fn timed<T>(&mut self, turn: Turn, stage: Stage, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.observer.stage(turn, stage, start.elapsed());
        out
    }

    fn cached_prompt(&self, language: &LanguageTag, turn: Turn) -> Option<AudioClip> {
        let cache = self
            .ctx
            .prompts
            .iter()
            .find(|c| c.language == *language && c.questionnaire_id == self.ctx.questionnaire.id)?;
        match turn {
            Turn::Welcome => cache.welcome_clip().ok(),
            Turn::Question(pos) => {
                let q = self.ctx.questionnaire.questions.get(pos)?;
                cache.prompt_clip(&q.id).ok().flatten()
            }
        }
    }

    fn translate(&mut self, turn: Turn, text: &str, from: &LanguageTag, to: &LanguageTag) -> Result<String, ProviderError> {
        if from == to {
            return Ok(text.to_string());
        }
        let translator = self.ctx.providers.translator.clone();
        self.timed(turn, Stage::Translate, || translator.translate(text, from, to))
    }

    fn synthesize(&mut self, turn: Turn, text: &str, language: &LanguageTag) -> Result<AudioClip, ProviderError> {
        let tts = self.ctx.providers.tts.clone();
        let rate = self.ctx.policy.speech_rate;
        self.timed(turn, Stage::Tts, || tts.synthesize(text, language, rate))
    }

    fn play(&mut self, turn: Turn, audio: &mut dyn AudioIo, clip: &AudioClip) -> Result<(), AbortCause> {
        self.timed(turn, Stage::Playback, || audio.play(clip))
            .map_err(|e| AbortCause::Audio(e.to_string()))
    }

    fn listen(&mut self, turn: Turn, audio: &mut dyn AudioIo) -> Result<RecordingOutcome, AbortCause> {
        let policy = &self.ctx.policy.record;
        self.timed(turn, Stage::Record, || audio.listen(turn, policy))
            .map_err(|e| AbortCause::Audio(e.to_string()))
    }
}

/// Result of the welcome exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageDetection {
    pub language: LanguageTag,
    pub fallback: bool,
    /// Welcome replies heard, including silent ones.
    pub attempts: u32,
    pub reply: Option<AudioClip>,
}

/// Plays the welcome text in the specialist language and picks the user's
/// language from the reply. Silence or undetectable speech is retried up to
/// `max_repeats` times before falling back to the specialist language.
pub fn detect_user_language(
    ctx: &SessionContext<'_>,
    audio: &mut dyn AudioIo,
    observer: &mut dyn StageObserver,
) -> Result<LanguageDetection, AbortCause> {
    Engine { ctx, observer }.detect_user_language(audio)
}

impl Engine<'_, '_> {
    fn detect_user_language(&mut self, audio: &mut dyn AudioIo) -> Result<LanguageDetection, AbortCause> {
        let q = self.ctx.questionnaire;
        let turn = Turn::Welcome;
        let prompt = match self.cached_prompt(&q.specialist_language, turn) {
            Some(clip) => clip,
            None => self.synthesize(turn, &q.welcome_text, &q.specialist_language)?,
        };
        let detector = self.ctx.providers.detector.clone();
        let mut attempts = 0;
        for _ in 0..=self.ctx.policy.max_repeats {
            self.play(turn, audio, &prompt)?;
            attempts += 1;
            let RecordingOutcome::Answered { clip, .. } = self.listen(turn, audio)? else {
                continue;
            };
            match self.timed(turn, Stage::Stt, || detector.detect_language(&clip)) {
                Ok(guesses) => {
                    return Ok(LanguageDetection {
                        language: select_language(&guesses)?,
                        fallback: false,
                        attempts,
                        reply: Some(clip),
                    })
                }
                Err(ProviderError::NoSpeech) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(LanguageDetection {
            language: q.specialist_language.clone(),
            fallback: true,
            attempts,
            reply: None,
        })
    }
}

/// An answer plus the audio to attach under `record.audio_ref`.
#[derive(Debug, Clone, PartialEq)]
pub struct AskedAnswer {
    pub record: AnswerRecord,
    pub clip: Option<AudioClip>,
}

/// Asks one question in `user_language` until it is answered or the
/// repeats run out. The prompt is synthesized once and replayed.
pub fn ask_question(
    ctx: &SessionContext<'_>,
    question: &Question,
    user_language: &LanguageTag,
    audio: &mut dyn AudioIo,
    observer: &mut dyn StageObserver,
) -> Result<AskedAnswer, AbortCause> {
    Engine { ctx, observer }.ask_question(question, user_language, audio)
}

impl Engine<'_, '_> {
    fn ask_question(
        &mut self,
        question: &Question,
        user_language: &LanguageTag,
        audio: &mut dyn AudioIo,
    ) -> Result<AskedAnswer, AbortCause> {
        let specialist = &self.ctx.questionnaire.specialist_language;
        let turn = Turn::Question(question.position);
        let prompt = match self.cached_prompt(user_language, turn) {
            Some(clip) => clip,
            None => {
                let text = self.translate(turn, &question.text, specialist, user_language)?;
                self.synthesize(turn, &text, user_language)?
            }
        };

        let stt = self.ctx.providers.stt.clone();
        let max_repeats = self.ctx.policy.max_repeats;
        for attempt in 0..=max_repeats {
            self.play(turn, audio, &prompt)?;
            let RecordingOutcome::Answered { clip, truncated } = self.listen(turn, audio)? else {
                continue;
            };
            let transcript = match self.timed(turn, Stage::Stt, || stt.transcribe(&clip, user_language)) {
                Ok(t) if !t.text.trim().is_empty() => t,
                Ok(_) | Err(ProviderError::NoSpeech) => continue,
                Err(e) => return Err(e.into()),
            };

            let emotion_language = &self.ctx.policy.emotion_language;
            let specialist_text = self.translate(turn, &transcript.text, user_language, specialist)?;
            let emotion_text = if emotion_language == specialist {
                specialist_text.clone()
            } else {
                self.translate(turn, &transcript.text, user_language, emotion_language)?
            };
            let analyzer = self.ctx.providers.emotion.clone();
            let scores = self.timed(turn, Stage::Emotion, || analyzer.analyze_emotion(&emotion_text))?;
            scores.validate()?;

            return Ok(AskedAnswer {
                record: AnswerRecord {
                    question_id: question.id.clone(),
                    position: question.position,
                    question_text: question.text.clone(),
                    audio_ref: Some(AnswerRecord::audio_name(question.position)),
                    transcript_user: Some(transcript),
                    transcript_specialist: Some(specialist_text),
                    transcript_emotion_lang: Some(emotion_text),
                    emotion: Some(scores),
                    repeats_used: attempt,
                    no_response: false,
                    truncated,
                },
                clip: Some(clip),
            });
        }
        Ok(AskedAnswer {
            record: AnswerRecord::no_response(&question.id, question.position, &question.text, max_repeats),
            clip: None,
        })
    }
}

/// Runs a full session and persists it through `store` before returning.
///
/// Provider or device failures abort the session: the answers gathered so
/// far are kept, the rest are padded with no-response entries, and the
/// record is stored with status `aborted`.
pub fn run_session(
    ctx: &SessionContext<'_>,
    audio: &mut dyn AudioIo,
    store: &Store,
    observer: &mut dyn StageObserver,
) -> Result<SessionRecord, SessionError> {
    ctx.policy.validate()?;
    ctx.questionnaire
        .validate()
        .map_err(|e| SessionError::InvalidQuestionnaire(e.to_string()))?;

    let id = uuid::Uuid::new_v4().to_string();
    let started_at = Utc::now();
    let mut writer = store.begin_session(&id)?;
    let mut engine = Engine { ctx, observer };
    let q = ctx.questionnaire;

    let mut answers = Vec::with_capacity(q.questions.len());
    let mut detection = None;
    let outcome: Result<(), AbortCause> = (|| {
        let detected = engine.detect_user_language(audio)?;
        if let Some(reply) = &detected.reply {
            let turn = Turn::Welcome;
            engine
                .timed(turn, Stage::Store, || writer.write_attachment(WELCOME_AUDIO, reply))
                .map_err(|e| AbortCause::Storage(format!("welcome reply: {e}")))?;
        }
        let language = detected.language.clone();
        detection = Some(detected);
        for question in &q.questions {
            let asked = engine.ask_question(question, &language, audio)?;
            if let (Some(name), Some(clip)) = (&asked.record.audio_ref, &asked.clip) {
                let turn = Turn::Question(question.position);
                engine
                    .timed(turn, Stage::Store, || writer.write_attachment(name, clip))
                    .map_err(|e| AbortCause::Storage(format!("{name}: {e}")))?;
            }
            answers.push(asked.record);
        }
        Ok(())
    })();

    for question in &q.questions[answers.len()..] {
        answers.push(AnswerRecord::no_response(&question.id, question.position, &question.text, 0));
    }
    let (mean_emotion, final_label) = aggregate(&answers);
    let (detected_language, language_fallback, welcome_audio_ref) = match &detection {
        Some(d) => (
            d.language.clone(),
            d.fallback,
            d.reply.as_ref().map(|_| WELCOME_AUDIO.to_string()),
        ),
        None => (q.specialist_language.clone(), true, None),
    };
    let record = SessionRecord {
        schema_version: SCHEMA_VERSION,
        id,
        questionnaire_id: q.id.clone(),
        device_id: ctx.device_id.to_string(),
        started_at,
        finished_at: Utc::now(),
        status: if outcome.is_ok() {
            SessionStatus::Completed
        } else {
            SessionStatus::Aborted
        },
        abort_reason: outcome.as_ref().err().map(ToString::to_string),
        specialist_language: q.specialist_language.clone(),
        detected_language,
        language_fallback,
        welcome_audio_ref,
        answers,
        mean_emotion,
        final_label,
        advice: None,
    };
    record
        .validate(Some(q.questions.len()))
        .map_err(|e| SessionError::Store(StoreError::InvalidRecord(e)))?;

    let last_turn = Turn::Question(q.questions.len().saturating_sub(1));
    let publish = |writer: SessionWriter| writer.finish(&record);
    engine.timed(last_turn, Stage::Store, || publish(writer))?;

    match outcome {
        Ok(()) => Ok(record),
        Err(cause) => Err(SessionError::Aborted {
            record: Box::new(record),
            cause,
        }),
    }
}
