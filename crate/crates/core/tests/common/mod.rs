#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};

use carevoice_core::audio::{AudioClip, DRIVER_FORMAT};
use carevoice_core::language::LanguageTag;
use carevoice_core::providers::{
    EmotionAnalyzer, EmotionScores, LanguageDetector, LanguageGuess, MockProviders, ProviderError, Providers,
    SpeechToText, TextToSpeech, Transcript, Translator,
};
use carevoice_core::session::{aggregate, AnswerRecord, SessionRecord, SessionStatus, SCHEMA_VERSION, WELCOME_AUDIO};

pub fn tag(s: &str) -> LanguageTag {
    LanguageTag::parse(s).unwrap()
}

/// The three reference answers: French speech, English translation and
/// the published score rows (joy, anger, sadness, fear, disgust).
pub const REFERENCE_ANSWERS: [(&str, &str, [f64; 5]); 3] = [
    (
        "Je suis si heureux de vivre ici",
        "I'm so happy to live here",
        [0.87, 0.01, 0.04, 0.01, 0.01],
    ),
    ("Je déteste ce monde", "I hate this world", [0.09, 0.05, 0.72, 0.07, 0.06]),
    (
        "Je ne peux pas tolérer ça. Je ne comprends pas pourquoi les gens font ça.",
        "I can't tolerate this. I don't understand why people do that.",
        [0.02, 0.85, 0.04, 0.02, 0.02],
    ),
];

pub fn scores(v: [f64; 5]) -> EmotionScores {
    EmotionScores::new(v[0], v[1], v[2], v[3], v[4], 0.0).unwrap()
}

pub fn tone(seconds: f64, text: &str) -> AudioClip {
    let frames = DRIVER_FORMAT.frames_for(seconds);
    let norm: Vec<f64> = (0..frames)
        .flat_map(|i| {
            let v = 0.25 * (2.0 * std::f64::consts::PI * 330.0 * i as f64 / 48_000.0).sin();
            [v, v]
        })
        .collect();
    AudioClip::from_normalized(DRIVER_FORMAT, &norm).unwrap().with_tag("text", text)
}

pub fn answered(position: usize, user: &str, english: &str, v: [f64; 5]) -> AnswerRecord {
    AnswerRecord {
        question_id: format!("q{}", position + 1),
        position,
        question_text: format!("Question {}?", position + 1),
        audio_ref: Some(AnswerRecord::audio_name(position)),
        transcript_user: Some(Transcript {
            text: user.into(),
            language: tag("fr"),
            confidence: 1.0,
        }),
        transcript_specialist: Some(english.into()),
        transcript_emotion_lang: Some(english.into()),
        emotion: Some(scores(v)),
        repeats_used: 0,
        no_response: false,
        truncated: false,
    }
}

pub fn at(minutes: i64) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap() + chrono::Duration::minutes(minutes)
}

pub fn record_with(id: &str, questionnaire_id: &str, started_at: DateTime<Utc>, answers: Vec<AnswerRecord>) -> SessionRecord {
    let (mean_emotion, final_label) = aggregate(&answers);
    SessionRecord {
        schema_version: SCHEMA_VERSION,
        id: id.into(),
        questionnaire_id: questionnaire_id.into(),
        device_id: "kiosk-1".into(),
        started_at,
        finished_at: started_at + chrono::Duration::seconds(90),
        status: SessionStatus::Completed,
        abort_reason: None,
        specialist_language: tag("en"),
        detected_language: tag("fr"),
        language_fallback: false,
        welcome_audio_ref: Some(WELCOME_AUDIO.into()),
        answers,
        mean_emotion,
        final_label,
        advice: None,
    }
}

/// The reference session: three answered questions scored with the
/// published rows.
pub fn reference_record(id: &str) -> SessionRecord {
    let answers = REFERENCE_ANSWERS
        .iter()
        .enumerate()
        .map(|(i, (fr, en, v))| answered(i, fr, en, *v))
        .collect();
    record_with(id, "wellbeing", at(0), answers)
}

/// Attachments for every audio reference in `record`.
pub fn attachments_for(record: &SessionRecord) -> Vec<(String, AudioClip)> {
    record
        .attachment_names()
        .into_iter()
        .enumerate()
        .map(|(i, name)| (name.to_string(), tone(0.05 + i as f64 * 0.01, name)))
        .collect()
}

/// Wraps a provider and counts calls per capability. `fail_stt_on` makes
/// the n-th transcription (1-based) report the provider as unavailable.
#[derive(Default)]
pub struct Counting {
    pub inner: MockProviders,
    pub tts: AtomicUsize,
    pub stt: AtomicUsize,
    pub translate: AtomicUsize,
    pub detect: AtomicUsize,
    pub emotion: AtomicUsize,
    pub fail_stt_on: Option<usize>,
}

impl Counting {
    pub fn new(inner: MockProviders) -> Arc<Self> {
        Arc::new(Counting {
            inner,
            ..Default::default()
        })
    }

    pub fn failing_stt_on(inner: MockProviders, n: usize) -> Arc<Self> {
        Arc::new(Counting {
            inner,
            fail_stt_on: Some(n),
            ..Default::default()
        })
    }

    /// (tts, stt, translate, detect, emotion)
    pub fn counts(&self) -> [usize; 5] {
        [&self.tts, &self.stt, &self.translate, &self.detect, &self.emotion].map(|c| c.load(Ordering::SeqCst))
    }
}

impl TextToSpeech for Counting {
    fn synthesize(&self, text: &str, language: &LanguageTag, rate: f64) -> Result<AudioClip, ProviderError> {
        self.tts.fetch_add(1, Ordering::SeqCst);
        self.inner.synthesize(text, language, rate)
    }
}

impl SpeechToText for Counting {
    fn transcribe(&self, clip: &AudioClip, language: &LanguageTag) -> Result<Transcript, ProviderError> {
        let n = self.stt.fetch_add(1, Ordering::SeqCst) + 1;
        if self.fail_stt_on == Some(n) {
            return Err(ProviderError::Unavailable("scripted outage".into()));
        }
        self.inner.transcribe(clip, language)
    }
}

impl Translator for Counting {
    fn translate(&self, text: &str, source: &LanguageTag, target: &LanguageTag) -> Result<String, ProviderError> {
        self.translate.fetch_add(1, Ordering::SeqCst);
        self.inner.translate(text, source, target)
    }
}

impl LanguageDetector for Counting {
    fn detect_language(&self, clip: &AudioClip) -> Result<Vec<LanguageGuess>, ProviderError> {
        self.detect.fetch_add(1, Ordering::SeqCst);
        self.inner.detect_language(clip)
    }
}

impl EmotionAnalyzer for Counting {
    fn analyze_emotion(&self, text: &str) -> Result<EmotionScores, ProviderError> {
        self.emotion.fetch_add(1, Ordering::SeqCst);
        self.inner.analyze_emotion(text)
    }
}

pub fn counting_providers(c: &Arc<Counting>) -> Providers {
    Providers::uniform(c.clone())
}
