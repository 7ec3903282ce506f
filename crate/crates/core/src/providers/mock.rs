//! Deterministic offline providers.
//!
//! Synthesis writes the ground truth (`text`, `language`) into the clip's
//! metadata, so transcription and language detection can invert it exactly
//! after the clip has travelled through WAV files and the record loop.

use std::f64::consts::PI;

use super::{
    compare_guesses, EmotionAnalyzer, EmotionFixtures, EmotionLexicon, EmotionScores, LanguageDetector,
    LanguageGuess, ProviderError, SpeechToText, TextToSpeech, Transcript, TranslationLexicon, Translator,
};
use crate::audio::{rms_level, AudioClip, DRIVER_FORMAT};
use crate::language::LanguageTag;

pub const TEXT_TAG: &str = "text";
pub const LANGUAGE_TAG: &str = "language";

/// Confidence given to the language a clip was synthesized in.
pub const TAGGED_LANGUAGE_CONFIDENCE: f64 = 0.9;

const SECONDS_PER_CHAR: f64 = 0.08;
const TONE_AMPLITUDE: f64 = 0.3;

#[derive(Debug, Clone)]
pub struct MockProviders {
    languages: Vec<LanguageTag>,
    silence_threshold: f64,
    translations: TranslationLexicon,
    fixtures: EmotionFixtures,
    emotion_lexicon: Option<EmotionLexicon>,
}

impl Default for MockProviders {
    fn default() -> Self {
        MockProviders {
            languages: ["en", "es", "fr"]
                .into_iter()
                .map(|l| LanguageTag::parse(l).unwrap())
                .collect(),
            silence_threshold: 0.01,
            translations: TranslationLexicon::new(),
            fixtures: EmotionFixtures::default(),
            emotion_lexicon: None,
        }
    }
}

impl MockProviders {
    /// Empty lexicons and fixtures: translation passes text through and
    /// emotion analysis returns zeros.
    pub fn new() -> Self {
        Self::default()
    }

    /// Ships the bundled French/Spanish lexicons, emotion lexicon and the
    /// reference emotion fixtures.
    pub fn with_builtin_data() -> Self {
        let mut translations = TranslationLexicon::new();
        let fr = LanguageTag::parse("fr").unwrap();
        let es = LanguageTag::parse("es").unwrap();
        let en = LanguageTag::parse("en").unwrap();
        translations
            .add_tsv(&fr, &en, include_str!("../../data/lexicons/fr-en.tsv"))
            .expect("bundled lexicon parses");
        translations
            .add_tsv(&es, &en, include_str!("../../data/lexicons/es-en.tsv"))
            .expect("bundled lexicon parses");
        MockProviders::default()
            .with_translations(translations)
            .with_fixtures(
                EmotionFixtures::parse(include_str!("../../data/emotion_fixtures.json"))
                    .expect("bundled fixtures parse"),
            )
            .with_emotion_lexicon(
                EmotionLexicon::parse(include_str!("../../data/emotion_lexicon.tsv"))
                    .expect("bundled emotion lexicon parses"),
            )
    }

    pub fn with_languages(mut self, languages: Vec<LanguageTag>) -> Self {
        self.languages = languages;
        self
    }

    pub fn with_translations(mut self, lexicon: TranslationLexicon) -> Self {
        self.translations = lexicon;
        self
    }

    pub fn with_fixtures(mut self, fixtures: EmotionFixtures) -> Self {
        self.fixtures = fixtures;
        self
    }

    pub fn with_emotion_lexicon(mut self, lexicon: EmotionLexicon) -> Self {
        self.emotion_lexicon = Some(lexicon);
        self
    }

    fn check_speech(&self, clip: &AudioClip) -> Result<(), ProviderError> {
        if clip.is_empty() || rms_level(clip) < self.silence_threshold {
            return Err(ProviderError::NoSpeech);
        }
        Ok(())
    }
}

/// Duration of synthesized speech: proportional to character count and
/// inversely proportional to rate.
pub fn speech_seconds(text: &str, rate: f64) -> f64 {
    text.chars().count() as f64 * SECONDS_PER_CHAR / rate
}

impl TextToSpeech for MockProviders {
    fn synthesize(&self, text: &str, language: &LanguageTag, rate: f64) -> Result<AudioClip, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(ProviderError::InvalidRequest(format!("speech rate {rate} must be positive")));
        }
        let chars: Vec<char> = text.chars().collect();
        let frames = DRIVER_FORMAT.frames_for(speech_seconds(text, rate)).max(1);
        let rate_hz = f64::from(DRIVER_FORMAT.sample_rate_hz());

        // One tone per character, pitched by code point.
        let mut norm = Vec::with_capacity(frames * 2);
        for i in 0..frames {
            let c = chars[(i * chars.len() / frames).min(chars.len() - 1)];
            let freq = 220.0 + f64::from(u32::from(c) % 24) * 20.0;
            let v = TONE_AMPLITUDE * (2.0 * PI * freq * i as f64 / rate_hz).sin();
            norm.push(v);
            norm.push(v);
        }
        let clip = AudioClip::from_normalized(DRIVER_FORMAT, &norm)
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        Ok(clip.with_tag(TEXT_TAG, text).with_tag(LANGUAGE_TAG, language.as_str()))
    }
}

impl SpeechToText for MockProviders {
    fn transcribe(&self, clip: &AudioClip, language: &LanguageTag) -> Result<Transcript, ProviderError> {
        self.check_speech(clip)?;
        let Some(text) = clip.tag(TEXT_TAG) else {
            return Ok(Transcript {
                text: String::new(),
                language: language.clone(),
                confidence: 0.0,
            });
        };
        let confidence = if clip.tag(LANGUAGE_TAG) == Some(language.as_str()) {
            1.0
        } else {
            0.5
        };
        Ok(Transcript {
            text: text.to_string(),
            language: language.clone(),
            confidence,
        })
    }
}

impl LanguageDetector for MockProviders {
    /// The tagged language gets 0.9; the remaining 0.1 is split evenly over
    /// the other supported languages. Untagged speech is uniform.
    fn detect_language(&self, clip: &AudioClip) -> Result<Vec<LanguageGuess>, ProviderError> {
        self.check_speech(clip)?;
        let tagged = clip.tag(LANGUAGE_TAG).and_then(|t| LanguageTag::parse(t).ok());

        let mut guesses: Vec<LanguageGuess> = match tagged {
            Some(tagged) => {
                let others: Vec<&LanguageTag> = self.languages.iter().filter(|l| **l != tagged).collect();
                let share = if others.is_empty() {
                    0.0
                } else {
                    (1.0 - TAGGED_LANGUAGE_CONFIDENCE) / others.len() as f64
                };
                std::iter::once(LanguageGuess {
                    code: tagged.clone(),
                    confidence: TAGGED_LANGUAGE_CONFIDENCE,
                })
                .chain(others.into_iter().map(|l| LanguageGuess {
                    code: l.clone(),
                    confidence: share,
                }))
                .collect()
            }
            None => {
                let share = 1.0 / self.languages.len().max(1) as f64;
                self.languages
                    .iter()
                    .map(|l| LanguageGuess {
                        code: l.clone(),
                        confidence: share,
                    })
                    .collect()
            }
        };
        if guesses.is_empty() {
            return Err(ProviderError::Config("mock detector has no languages".into()));
        }
        guesses.sort_by(compare_guesses);
        Ok(guesses)
    }
}

impl Translator for MockProviders {
    fn translate(&self, text: &str, source: &LanguageTag, target: &LanguageTag) -> Result<String, ProviderError> {
        Ok(self.translations.translate(text, source, target))
    }
}

impl EmotionAnalyzer for MockProviders {
    /// Exact fixture matches win; otherwise the emotion lexicon scores the
    /// text, or all zeros without a lexicon.
    fn analyze_emotion(&self, text: &str) -> Result<EmotionScores, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        if let Some(scores) = self.fixtures.get(text) {
            return Ok(scores);
        }
        Ok(self
            .emotion_lexicon
            .as_ref()
            .map(|lex| lex.score(text))
            .unwrap_or_default())
    }
}
