//! HTTP client for the neutral provider protocol.
//!
//! Each capability is one `POST` endpoint taking and returning JSON. Audio
//! travels as base64-encoded WAV. Every trait call issues exactly one
//! request, except translation between equal languages, which issues none.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    compare_guesses, EmotionAnalyzer, EmotionScores, LanguageDetector, LanguageGuess, ProviderError, SpeechToText,
    TextToSpeech, Transcript, Translator,
};
use crate::audio::{parse_wav, write_wav, AudioClip};
use crate::language::LanguageTag;

static OUTBOUND_REQUESTS: AtomicU64 = AtomicU64::new(0);

/// Requests issued by every [`RemoteProviders`] in this process.
pub fn outbound_request_count() -> u64 {
    OUTBOUND_REQUESTS.load(Ordering::SeqCst)
}

/// Request and response bodies.
pub mod wire {
    use serde::{Deserialize, Serialize};

    use crate::language::LanguageTag;
    use crate::providers::LanguageGuess;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct SttRequest {
        pub audio_wav_base64: String,
        pub language: LanguageTag,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct SttResponse {
        pub text: String,
        pub confidence: f64,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct TtsRequest {
        pub text: String,
        pub language: LanguageTag,
        pub rate: f64,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct TtsResponse {
        pub audio_wav_base64: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct TranslateRequest {
        pub text: String,
        pub source: LanguageTag,
        pub target: LanguageTag,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct TranslateResponse {
        pub text: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct DetectRequest {
        pub audio_wav_base64: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct DetectResponse {
        pub guesses: Vec<LanguageGuess>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct EmotionRequest {
        pub text: String,
    }

    /// Body of a 422 response. `error` is `"no_speech"` or `"empty_text"`.
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ErrorBody {
        pub error: String,
    }
}

pub fn encode_audio(clip: &AudioClip) -> String {
    STANDARD.encode(write_wav(clip))
}

pub fn decode_audio(b64: &str) -> Result<AudioClip, ProviderError> {
    let bytes = STANDARD
        .decode(b64)
        .map_err(|e| ProviderError::InvalidResponse(format!("audio is not base64: {e}")))?;
    parse_wav(&bytes).map_err(|e| ProviderError::InvalidResponse(format!("audio is not a WAV file: {e}")))
}

#[derive(Debug, Clone)]
pub struct RemoteProviders {
    base_url: String,
    agent: ureq::Agent,
}

impl RemoteProviders {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

    pub fn new(base_url: &str) -> Result<Self, ProviderError> {
        Self::with_timeout(base_url, Self::DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(base_url: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let trimmed = base_url.trim().trim_end_matches('/');
        if !(trimmed.starts_with("http://") || trimmed.starts_with("https://")) || trimmed.len() <= "http://".len() {
            return Err(ProviderError::Config(format!(
                "remote base URL {base_url:?} must start with http:// or https://"
            )));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteProviders {
            base_url: trimmed.to_string(),
            agent,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, endpoint: &str, body: &Req) -> Result<Resp, ProviderError> {
        let url = format!("{}/{endpoint}", self.base_url);
        OUTBOUND_REQUESTS.fetch_add(1, Ordering::SeqCst);
        let mut response = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| ProviderError::Unavailable(format!("POST {url}: {e}")))?;
        let status = response.status().as_u16();
        match status {
            200..=299 => response
                .body_mut()
                .read_json::<Resp>()
                .map_err(|e| ProviderError::InvalidResponse(format!("POST {url}: {e}"))),
            422 => {
                let err = response.body_mut().read_json::<wire::ErrorBody>().ok();
                match err.as_ref().map(|e| e.error.as_str()) {
                    Some("no_speech") => Err(ProviderError::NoSpeech),
                    Some("empty_text") => Err(ProviderError::EmptyText),
                    _ => Err(ProviderError::InvalidRequest(format!("POST {url}: status 422"))),
                }
            }
            _ => Err(ProviderError::Unavailable(format!("POST {url}: status {status}"))),
        }
    }
}

impl SpeechToText for RemoteProviders {
    fn transcribe(&self, clip: &AudioClip, language: &LanguageTag) -> Result<Transcript, ProviderError> {
        let resp: wire::SttResponse = self.post(
            "stt",
            &wire::SttRequest {
                audio_wav_base64: encode_audio(clip),
                language: language.clone(),
            },
        )?;
        if !(0.0..=1.0).contains(&resp.confidence) {
            return Err(ProviderError::InvalidResponse(format!(
                "transcript confidence {} outside [0, 1]",
                resp.confidence
            )));
        }
        Ok(Transcript {
            text: resp.text,
            language: language.clone(),
            confidence: resp.confidence,
        })
    }
}

impl TextToSpeech for RemoteProviders {
    fn synthesize(&self, text: &str, language: &LanguageTag, rate: f64) -> Result<AudioClip, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let resp: wire::TtsResponse = self.post(
            "tts",
            &wire::TtsRequest {
                text: text.to_string(),
                language: language.clone(),
                rate,
            },
        )?;
        let clip = decode_audio(&resp.audio_wav_base64)?;
        if clip.is_empty() {
            return Err(ProviderError::InvalidResponse("synthesized clip is empty".into()));
        }
        Ok(clip)
    }
}

impl Translator for RemoteProviders {
    fn translate(&self, text: &str, source: &LanguageTag, target: &LanguageTag) -> Result<String, ProviderError> {
        if source == target {
            return Ok(text.to_string());
        }
        let resp: wire::TranslateResponse = self.post(
            "translate",
            &wire::TranslateRequest {
                text: text.to_string(),
                source: source.clone(),
                target: target.clone(),
            },
        )?;
        Ok(resp.text)
    }
}

impl LanguageDetector for RemoteProviders {
    fn detect_language(&self, clip: &AudioClip) -> Result<Vec<LanguageGuess>, ProviderError> {
        let resp: wire::DetectResponse = self.post(
            "detect",
            &wire::DetectRequest {
                audio_wav_base64: encode_audio(clip),
            },
        )?;
        let mut guesses = resp.guesses;
        if guesses.is_empty() {
            return Err(ProviderError::InvalidResponse("empty language guess list".into()));
        }
        for g in &guesses {
            LanguageGuess::new(g.code.clone(), g.confidence)?;
        }
        guesses.sort_by(compare_guesses);
        Ok(guesses)
    }
}

impl EmotionAnalyzer for RemoteProviders {
    fn analyze_emotion(&self, text: &str) -> Result<EmotionScores, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let scores: EmotionScores = self.post("emotion", &wire::EmotionRequest { text: text.to_string() })?;
        scores.validate()?;
        Ok(scores)
    }
}
