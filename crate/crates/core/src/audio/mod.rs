//! PCM audio clips, the WAV container, format conversion and level metering.
//!
//! Every clip carries an explicit [`AudioFormat`]. Samples are stored
//! interleaved as `i32` regardless of bit depth; the range check against the
//! declared depth happens once, at construction.

mod convert;
mod wav;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use convert::{convert, round_half_away};
pub use wav::{parse_wav, write_wav, META_CHUNK_ID, WAV_HEADER_LEN};

/// Format of the device audio driver: 48 kHz, 24-bit, stereo.
pub const DRIVER_FORMAT: AudioFormat = AudioFormat {
    sample_rate_hz: 48_000,
    bit_depth: 24,
    channels: 2,
};

/// Typical authoring format for recorded prompts: 44.1 kHz, 16-bit, mono.
pub const SOURCE_FORMAT: AudioFormat = AudioFormat {
    sample_rate_hz: 44_100,
    bit_depth: 16,
    channels: 1,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AudioError {
    #[error("malformed WAV file: {0}")]
    MalformedFile(String),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("invalid clip: {0}")]
    InvalidClip(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawFormat", into = "RawFormat")]
pub struct AudioFormat {
    sample_rate_hz: u32,
    bit_depth: u16,
    channels: u16,
}

#[derive(Serialize, Deserialize)]
struct RawFormat {
    sample_rate_hz: u32,
    bit_depth: u16,
    channels: u16,
}

impl TryFrom<RawFormat> for AudioFormat {
    type Error = AudioError;

    fn try_from(raw: RawFormat) -> Result<Self, Self::Error> {
        AudioFormat::new(raw.sample_rate_hz, raw.bit_depth, raw.channels)
    }
}

impl From<AudioFormat> for RawFormat {
    fn from(f: AudioFormat) -> Self {
        RawFormat {
            sample_rate_hz: f.sample_rate_hz,
            bit_depth: f.bit_depth,
            channels: f.channels,
        }
    }
}

impl AudioFormat {
    pub fn new(sample_rate_hz: u32, bit_depth: u16, channels: u16) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::InvalidClip("sample rate must be positive".into()));
        }
        if bit_depth != 16 && bit_depth != 24 {
            return Err(AudioError::UnsupportedFormat(format!(
                "bit depth {bit_depth} (expected 16 or 24)"
            )));
        }
        if channels != 1 && channels != 2 {
            return Err(AudioError::UnsupportedFormat(format!(
                "{channels} channels (expected 1 or 2)"
            )));
        }
        Ok(AudioFormat {
            sample_rate_hz,
            bit_depth,
            channels,
        })
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn bit_depth(&self) -> u16 {
        self.bit_depth
    }

    pub fn channels(&self) -> u16 {
        self.channels
    }

    pub fn bytes_per_sample(&self) -> usize {
        usize::from(self.bit_depth / 8)
    }

    /// Bytes per interleaved frame.
    pub fn block_align(&self) -> usize {
        self.bytes_per_sample() * usize::from(self.channels)
    }

    /// Largest representable sample, `2^(bits-1) - 1`.
    pub fn max_sample(&self) -> i32 {
        (1i32 << (self.bit_depth - 1)) - 1
    }

    pub fn min_sample(&self) -> i32 {
        -(1i32 << (self.bit_depth - 1))
    }

    /// Magnitude used to normalize samples to `[-1, 1]`.
    pub fn full_scale(&self) -> f64 {
        f64::from(1u32 << (self.bit_depth - 1))
    }

    /// Number of frames spanning `seconds` at this rate, rounded.
    pub fn frames_for(&self, seconds: f64) -> usize {
        (seconds * f64::from(self.sample_rate_hz)).round().max(0.0) as usize
    }
}

/// Interleaved integer PCM with a format and optional text tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioClip {
    format: AudioFormat,
    samples: Vec<i32>,
    metadata: BTreeMap<String, String>,
}

impl AudioClip {
    pub fn new(format: AudioFormat, samples: Vec<i32>) -> Result<Self, AudioError> {
        let channels = usize::from(format.channels);
        if samples.len() % channels != 0 {
            return Err(AudioError::InvalidClip(format!(
                "{} samples is not a multiple of {channels} channels",
                samples.len()
            )));
        }
        let (lo, hi) = (format.min_sample(), format.max_sample());
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| **s < lo || **s > hi)
        {
            return Err(AudioError::InvalidClip(format!(
                "sample {i} = {s} outside {}-bit range",
                format.bit_depth
            )));
        }
        Ok(AudioClip {
            format,
            samples,
            metadata: BTreeMap::new(),
        })
    }

    /// All-zero clip of `frames` frames.
    pub fn silence(format: AudioFormat, frames: usize) -> Self {
        AudioClip {
            format,
            samples: vec![0; frames * usize::from(format.channels)],
            metadata: BTreeMap::new(),
        }
    }

    /// Builds a clip from normalized samples in `[-1, 1]`, rounding half away
    /// from zero and clamping to the representable range.
    pub fn from_normalized(format: AudioFormat, samples: &[f64]) -> Result<Self, AudioError> {
        let scale = format.full_scale();
        let (lo, hi) = (format.min_sample(), format.max_sample());
        let ints = samples
            .iter()
            .map(|s| (round_half_away(s * scale) as i32).clamp(lo, hi))
            .collect();
        AudioClip::new(format, ints)
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, String>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn with_tag(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn format(&self) -> AudioFormat {
        self.format
    }

    pub fn samples(&self) -> &[i32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<i32> {
        self.samples
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn frame_count(&self) -> usize {
        self.samples.len() / usize::from(self.format.channels)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frame_count() as f64 / f64::from(self.format.sample_rate_hz)
    }

    /// Samples of one channel, de-interleaved.
    pub fn channel(&self, index: usize) -> impl Iterator<Item = i32> + '_ {
        self.samples
            .iter()
            .skip(index)
            .step_by(usize::from(self.format.channels))
            .copied()
    }

    /// Frames `start..start+len`, clipped to the clip bounds. Metadata is kept.
    pub fn slice_frames(&self, start: usize, len: usize) -> AudioClip {
        let ch = usize::from(self.format.channels);
        let from = (start * ch).min(self.samples.len());
        let to = ((start + len) * ch).min(self.samples.len());
        AudioClip {
            format: self.format,
            samples: self.samples[from..to].to_vec(),
            metadata: self.metadata.clone(),
        }
    }

    /// Concatenates clips sharing one format. Metadata is merged with the
    /// earliest clip winning on key conflicts.
    pub fn concat<'a, I>(format: AudioFormat, clips: I) -> Result<AudioClip, AudioError>
    where
        I: IntoIterator<Item = &'a AudioClip>,
    {
        let mut out = AudioClip::silence(format, 0);
        for clip in clips {
            if clip.format != format {
                return Err(AudioError::InvalidClip(format!(
                    "cannot concatenate {:?} onto {:?}",
                    clip.format, format
                )));
            }
            out.samples.extend_from_slice(&clip.samples);
            for (k, v) in &clip.metadata {
                out.metadata.entry(k.clone()).or_insert_with(|| v.clone());
            }
        }
        Ok(out)
    }

    pub(crate) fn from_parts_unchecked(
        format: AudioFormat,
        samples: Vec<i32>,
        metadata: BTreeMap<String, String>,
    ) -> Self {
        debug_assert_eq!(samples.len() % usize::from(format.channels), 0);
        AudioClip {
            format,
            samples,
            metadata,
        }
    }
}

/// Root-mean-square of all samples (channels pooled), normalized to full
/// scale and clamped to `[0, 1]`. A zero-frame clip has level 0.
pub fn rms_level(clip: &AudioClip) -> f64 {
    if clip.samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = clip.samples.iter().map(|&s| f64::from(s).powi(2)).sum();
    let rms = (sum / clip.samples.len() as f64).sqrt();
    (rms / clip.format.full_scale()).min(1.0)
}
