use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::language::LanguageTag;
use crate::providers::{EmotionLabel, EmotionScores, Transcript};

/// Version of the persisted session manifest layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    pub position: usize,
    /// Question as authored, in the specialist language.
    pub question_text: String,
    /// Attachment name inside the session directory.
    pub audio_ref: Option<String>,
    pub transcript_user: Option<Transcript>,
    pub transcript_specialist: Option<String>,
    pub transcript_emotion_lang: Option<String>,
    pub emotion: Option<EmotionScores>,
    pub repeats_used: u32,
    pub no_response: bool,
    /// The recording hit the chunk cap before the user stopped.
    #[serde(default)]
    pub truncated: bool,
}

impl AnswerRecord {
    pub fn no_response(question_id: impl Into<String>, position: usize, question_text: impl Into<String>, repeats_used: u32) -> Self {
        AnswerRecord {
            question_id: question_id.into(),
            position,
            question_text: question_text.into(),
            audio_ref: None,
            transcript_user: None,
            transcript_specialist: None,
            transcript_emotion_lang: None,
            emotion: None,
            repeats_used,
            no_response: true,
            truncated: false,
        }
    }

    /// Attachment name for the answer at `position`.
    pub fn audio_name(position: usize) -> String {
        format!("answer-{}.wav", position + 1)
    }

    pub fn validate(&self) -> Result<(), String> {
        let all_null = self.audio_ref.is_none()
            && self.transcript_user.is_none()
            && self.transcript_specialist.is_none()
            && self.transcript_emotion_lang.is_none()
            && self.emotion.is_none();
        let all_set = self.audio_ref.is_some()
            && self.transcript_user.is_some()
            && self.transcript_specialist.is_some()
            && self.transcript_emotion_lang.is_some()
            && self.emotion.is_some();
        if self.no_response && !all_null {
            return Err(format!("answer {}: no_response set but fields are populated", self.question_id));
        }
        if !self.no_response && !all_set {
            return Err(format!("answer {}: answered but some fields are missing", self.question_id));
        }
        if let Some(e) = &self.emotion {
            e.validate().map_err(|e| format!("answer {}: {e}", self.question_id))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub schema_version: u32,
    pub id: String,
    pub questionnaire_id: String,
    pub device_id: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub status: SessionStatus,
    pub abort_reason: Option<String>,
    pub specialist_language: LanguageTag,
    pub detected_language: LanguageTag,
    /// No usable welcome reply; the specialist language was assumed.
    pub language_fallback: bool,
    pub welcome_audio_ref: Option<String>,
    pub answers: Vec<AnswerRecord>,
    pub mean_emotion: Option<EmotionScores>,
    pub final_label: Option<EmotionLabel>,
    pub advice: Option<String>,
}

pub const WELCOME_AUDIO: &str = "welcome.wav";

impl SessionRecord {
    /// Checks record-level invariants. `question_count` is the length of
    /// the questionnaire the session ran.
    pub fn validate(&self, question_count: Option<usize>) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema_version {}", self.schema_version));
        }
        if let Some(n) = question_count {
            if self.answers.len() != n {
                return Err(format!("{} answers for {n} questions", self.answers.len()));
            }
        }
        for (i, a) in self.answers.iter().enumerate() {
            if a.position != i {
                return Err(format!("answer {} has position {} at index {i}", a.question_id, a.position));
            }
            a.validate()?;
        }
        let (mean, label) = aggregate(&self.answers);
        if self.mean_emotion.is_some() != mean.is_some() {
            return Err("mean_emotion must be set iff some answer is scored".into());
        }
        if self.final_label != label {
            return Err("final_label does not match mean_emotion".into());
        }
        if self.status == SessionStatus::Aborted && self.abort_reason.is_none() {
            return Err("aborted session needs abort_reason".into());
        }
        Ok(())
    }

    /// Attachment names referenced by this record.
    pub fn attachment_names(&self) -> Vec<&str> {
        self.welcome_audio_ref
            .iter()
            .chain(self.answers.iter().filter_map(|a| a.audio_ref.as_ref()))
            .map(String::as_str)
            .collect()
    }

    /// Per-question emotion in position order; `None` for unanswered.
    pub fn emotion_series(&self) -> Vec<SeriesPoint> {
        self.answers
            .iter()
            .map(|a| SeriesPoint {
                position: a.position,
                question_id: a.question_id.clone(),
                emotion: a.emotion,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub position: usize,
    pub question_id: String,
    pub emotion: Option<EmotionScores>,
}

/// Field-wise mean over scored answers and its argmax label; both `None`
/// without scored answers.
///
/// The mean is taken relative to the first vector, so identical inputs
/// reproduce that vector exactly.
pub fn aggregate(answers: &[AnswerRecord]) -> (Option<EmotionScores>, Option<EmotionLabel>) {
    let scored: Vec<EmotionScores> = answers.iter().filter_map(|a| a.emotion).collect();
    match mean_scores(&scored) {
        Some(mean) => (Some(mean), Some(final_emotion(&mean))),
        None => (None, None),
    }
}

pub fn mean_scores(scores: &[EmotionScores]) -> Option<EmotionScores> {
    let first = *scores.first()?;
    let n = scores.len() as f64;
    let field = |get: fn(&EmotionScores) -> f64| {
        let base = get(&first);
        let offset: f64 = scores.iter().map(|s| get(s) - base).sum();
        base + offset / n
    };
    Some(EmotionScores {
        joy: field(|s| s.joy).clamp(0.0, 1.0),
        anger: field(|s| s.anger).clamp(0.0, 1.0),
        sadness: field(|s| s.sadness).clamp(0.0, 1.0),
        fear: field(|s| s.fear).clamp(0.0, 1.0),
        disgust: field(|s| s.disgust).clamp(0.0, 1.0),
        sentiment: field(|s| s.sentiment).clamp(-1.0, 1.0),
    })
}

/// Argmax label over the five emotions, ties in canonical order.
pub fn final_emotion(scores: &EmotionScores) -> EmotionLabel {
    scores.dominant()
}
