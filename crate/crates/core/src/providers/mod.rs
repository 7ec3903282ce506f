//! Speech and language capabilities behind uniform contracts.
//!
//! Five capabilities are used by the session engine: transcription,
//! synthesis, translation, spoken-language detection and emotion analysis.
//! Each has an offline mock (see [`mock`]) and an HTTP client speaking the
//! neutral JSON protocol (see [`remote`]). [`Providers`] bundles one
//! implementation of each.

pub mod lexicon;
pub mod mock;
pub mod remote;

use std::cmp::Ordering;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::language::{InvalidLanguageTag, LanguageTag};

pub use lexicon::{EmotionLexicon, EmotionFixtures, TranslationLexicon};
pub use mock::MockProviders;
pub use remote::RemoteProviders;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("no speech in audio")]
    NoSpeech,
    #[error("empty text")]
    EmptyText,
    #[error("empty language guess list")]
    EmptyGuessList,
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("invalid provider response: {0}")]
    InvalidResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

impl From<InvalidLanguageTag> for ProviderError {
    fn from(e: InvalidLanguageTag) -> Self {
        ProviderError::InvalidRequest(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageGuess {
    pub code: LanguageTag,
    pub confidence: f64,
}

impl LanguageGuess {
    pub fn new(code: LanguageTag, confidence: f64) -> Result<Self, ProviderError> {
        check_unit("confidence", confidence)?;
        Ok(LanguageGuess { code, confidence })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub text: String,
    pub language: LanguageTag,
    pub confidence: f64,
}

/// Five emotion confidences in `[0, 1]` plus a sentiment axis in `[-1, 1]`.
///
/// The five emotions are independent scores and need not sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EmotionScores {
    pub joy: f64,
    pub anger: f64,
    pub sadness: f64,
    pub fear: f64,
    pub disgust: f64,
    #[serde(default)]
    pub sentiment: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EmotionLabel {
    Joy,
    Anger,
    Sadness,
    Fear,
    Disgust,
}

impl EmotionLabel {
    /// Canonical order, also the tie-break order for argmax.
    pub const ALL: [EmotionLabel; 5] = [
        EmotionLabel::Joy,
        EmotionLabel::Anger,
        EmotionLabel::Sadness,
        EmotionLabel::Fear,
        EmotionLabel::Disgust,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Joy => "joy",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Disgust => "disgust",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        EmotionLabel::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(name))
    }
}

impl EmotionScores {
    pub fn new(
        joy: f64,
        anger: f64,
        sadness: f64,
        fear: f64,
        disgust: f64,
        sentiment: f64,
    ) -> Result<Self, ProviderError> {
        let scores = EmotionScores {
            joy,
            anger,
            sadness,
            fear,
            disgust,
            sentiment,
        };
        scores.validate()?;
        Ok(scores)
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        for (label, v) in EmotionLabel::ALL.iter().zip(self.emotions()) {
            check_unit(label.name(), v)?;
        }
        if !(-1.0..=1.0).contains(&self.sentiment) {
            return Err(ProviderError::InvalidResponse(format!(
                "sentiment {} outside [-1, 1]",
                self.sentiment
            )));
        }
        Ok(())
    }

    /// The five emotion fields in canonical order.
    pub fn emotions(&self) -> [f64; 5] {
        [self.joy, self.anger, self.sadness, self.fear, self.disgust]
    }

    pub fn get(&self, label: EmotionLabel) -> f64 {
        self.emotions()[label as usize]
    }

    /// Argmax over the five emotions; ties go to the earliest in canonical
    /// order.
    pub fn dominant(&self) -> EmotionLabel {
        let values = self.emotions();
        let mut best = 0;
        for i in 1..values.len() {
            if values[i] > values[best] {
                best = i;
            }
        }
        EmotionLabel::ALL[best]
    }
}

fn check_unit(what: &str, v: f64) -> Result<(), ProviderError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ProviderError::InvalidResponse(format!("{what} {v} outside [0, 1]")))
    }
}

pub trait SpeechToText: Send + Sync {
    fn transcribe(&self, clip: &AudioClip, language: &LanguageTag) -> Result<Transcript, ProviderError>;
}

pub trait TextToSpeech: Send + Sync {
    /// `rate` scales speaking speed; 2.0 speaks twice as fast.
    fn synthesize(&self, text: &str, language: &LanguageTag, rate: f64) -> Result<AudioClip, ProviderError>;
}

pub trait Translator: Send + Sync {
    fn translate(&self, text: &str, source: &LanguageTag, target: &LanguageTag) -> Result<String, ProviderError>;
}

pub trait LanguageDetector: Send + Sync {
    /// Guesses sorted by confidence, highest first.
    fn detect_language(&self, clip: &AudioClip) -> Result<Vec<LanguageGuess>, ProviderError>;
}

pub trait EmotionAnalyzer: Send + Sync {
    fn analyze_emotion(&self, text: &str) -> Result<EmotionScores, ProviderError>;
}

/// Highest-confidence language; ties go to the lexicographically smallest
/// code.
pub fn select_language(guesses: &[LanguageGuess]) -> Result<LanguageTag, ProviderError> {
    guesses
        .iter()
        .min_by(|a, b| compare_guesses(a, b))
        .map(|g| g.code.clone())
        .ok_or(ProviderError::EmptyGuessList)
}

/// Orders guesses by descending confidence, then ascending code.
pub fn compare_guesses(a: &LanguageGuess, b: &LanguageGuess) -> Ordering {
    b.confidence
        .partial_cmp(&a.confidence)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.code.cmp(&b.code))
}

/// One implementation of every capability.
#[derive(Clone)]
pub struct Providers {
    pub stt: Arc<dyn SpeechToText>,
    pub tts: Arc<dyn TextToSpeech>,
    pub translator: Arc<dyn Translator>,
    pub detector: Arc<dyn LanguageDetector>,
    pub emotion: Arc<dyn EmotionAnalyzer>,
}

impl Providers {
    /// Uses one object for all five capabilities.
    pub fn uniform<P>(provider: Arc<P>) -> Self
    where
        P: SpeechToText + TextToSpeech + Translator + LanguageDetector + EmotionAnalyzer + 'static,
    {
        Providers {
            stt: provider.clone(),
            tts: provider.clone(),
            translator: provider.clone(),
            detector: provider.clone(),
            emotion: provider,
        }
    }
}

impl std::fmt::Debug for Providers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Providers").finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    #[default]
    Mock,
    Remote,
}

impl std::str::FromStr for ProviderMode {
    type Err = ProviderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mock" => Ok(ProviderMode::Mock),
            "remote" => Ok(ProviderMode::Remote),
            other => Err(ProviderError::Config(format!(
                "unknown provider mode {other:?} (expected \"mock\" or \"remote\")"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    pub remote_base_url: Option<String>,
    /// JSON map from exact text to emotion scores (mock mode).
    pub fixtures: Option<PathBuf>,
    /// Directory of `<source>-<target>.tsv` translation lexicons (mock mode).
    pub lexicon_dir: Option<PathBuf>,
    /// `token<TAB>emotion<TAB>weight` file (mock mode).
    pub emotion_lexicon: Option<PathBuf>,
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Providers, ProviderError> {
        match self.mode {
            ProviderMode::Mock => {
                let mut mock = MockProviders::with_builtin_data();
                if let Some(dir) = &self.lexicon_dir {
                    mock = mock.with_translations(TranslationLexicon::load_dir(dir)?);
                }
                if let Some(path) = &self.fixtures {
                    mock = mock.with_fixtures(EmotionFixtures::load(path)?);
                }
                if let Some(path) = &self.emotion_lexicon {
                    mock = mock.with_emotion_lexicon(EmotionLexicon::load(path)?);
                }
                Ok(Providers::uniform(Arc::new(mock)))
            }
            ProviderMode::Remote => {
                let url = self.remote_base_url.as_deref().ok_or_else(|| {
                    ProviderError::Config("remote mode requires a base URL".into())
                })?;
                Ok(Providers::uniform(Arc::new(RemoteProviders::new(url)?)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn guess(code: &str, c: f64) -> LanguageGuess {
        LanguageGuess::new(LanguageTag::parse(code).unwrap(), c).unwrap()
    }

    #[test]
    fn select_picks_argmax() {
        assert_eq!(select_language(&[guess("fr", 0.9), guess("en", 0.05)]).unwrap(), "fr");
    }

    #[test]
    fn select_breaks_ties_by_code() {
        assert_eq!(select_language(&[guess("fr", 0.5), guess("en", 0.5)]).unwrap(), "en");
    }

    #[test]
    fn select_rejects_empty() {
        assert_eq!(select_language(&[]), Err(ProviderError::EmptyGuessList));
    }

    #[test]
    fn guess_confidence_is_bounded() {
        assert!(LanguageGuess::new(LanguageTag::parse("fr").unwrap(), 1.2).is_err());
        assert!(LanguageGuess::new(LanguageTag::parse("fr").unwrap(), f64::NAN).is_err());
    }

    #[test]
    fn dominant_uses_canonical_tie_break() {
        let equal = EmotionScores::new(0.2, 0.2, 0.2, 0.2, 0.2, 0.0).unwrap();
        assert_eq!(equal.dominant(), EmotionLabel::Joy);
        let fear = EmotionScores::new(0.1, 0.1, 0.3, 0.3, 0.0, 0.0).unwrap();
        assert_eq!(fear.dominant(), EmotionLabel::Sadness);
    }

    #[test]
    fn scores_are_range_checked() {
        assert!(EmotionScores::new(1.1, 0.0, 0.0, 0.0, 0.0, 0.0).is_err());
        assert!(EmotionScores::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.5).is_err());
        assert!(EmotionScores::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0).is_ok());
    }

    #[test]
    fn label_serializes_upper_case() {
        assert_eq!(serde_json::to_string(&EmotionLabel::Sadness).unwrap(), "\"SADNESS\"");
    }

    #[test]
    fn remote_mode_requires_url() {
        let cfg = ProviderConfig {
            mode: ProviderMode::Remote,
            ..Default::default()
        };
        assert!(matches!(cfg.build(), Err(ProviderError::Config(_))));
    }
}
