//! The results document served to the specialist console.

use carevoice_core::language::LanguageTag;
use carevoice_core::providers::{EmotionLabel, EmotionScores};
use carevoice_core::session::{final_emotion, SeriesPoint, SessionRecord, SessionStatus};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Everything the console charts and tables need, with no further
/// aggregation left to the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub session_id: String,
    pub questionnaire_id: String,
    pub device_id: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub status: SessionStatus,
    pub abort_reason: Option<String>,
    pub specialist_language: LanguageTag,
    pub detected_language: LanguageTag,
    pub language_fallback: bool,
    pub mean_emotion: Option<EmotionScores>,
    pub final_label: Option<EmotionLabel>,
    pub emotion_series: Vec<SeriesPoint>,
    pub answers: Vec<AnswerResult>,
    pub advice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResult {
    pub position: usize,
    pub question_id: String,
    pub question_text: String,
    pub transcript_user: Option<String>,
    pub user_language: Option<LanguageTag>,
    pub transcript_specialist: Option<String>,
    pub transcript_emotion_lang: Option<String>,
    pub emotion: Option<EmotionScores>,
    pub label: Option<EmotionLabel>,
    pub repeats_used: u32,
    pub no_response: bool,
    pub truncated: bool,
    pub audio_ref: Option<String>,
}

impl From<&SessionRecord> for ResultsDocument {
    fn from(r: &SessionRecord) -> Self {
        ResultsDocument {
            session_id: r.id.clone(),
            questionnaire_id: r.questionnaire_id.clone(),
            device_id: r.device_id.clone(),
            started_at: r.started_at,
            finished_at: r.finished_at,
            status: r.status,
            abort_reason: r.abort_reason.clone(),
            specialist_language: r.specialist_language.clone(),
            detected_language: r.detected_language.clone(),
            language_fallback: r.language_fallback,
            mean_emotion: r.mean_emotion,
            final_label: r.final_label,
            emotion_series: r.emotion_series(),
            answers: r
                .answers
                .iter()
                .map(|a| AnswerResult {
                    position: a.position,
                    question_id: a.question_id.clone(),
                    question_text: a.question_text.clone(),
                    transcript_user: a.transcript_user.as_ref().map(|t| t.text.clone()),
                    user_language: a.transcript_user.as_ref().map(|t| t.language.clone()),
                    transcript_specialist: a.transcript_specialist.clone(),
                    transcript_emotion_lang: a.transcript_emotion_lang.clone(),
                    emotion: a.emotion,
                    label: a.emotion.as_ref().map(final_emotion),
                    repeats_used: a.repeats_used,
                    no_response: a.no_response,
                    truncated: a.truncated,
                    audio_ref: a.audio_ref.clone(),
                })
                .collect(),
            advice: r.advice.clone(),
        }
    }
}
