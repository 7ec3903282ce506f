//! The chunked record loop, silence detection, the noise gate and playback.
//!
//! A listening turn pulls fixed-length chunks from a [`ChunkSource`] until the
//! speaker stops. A silent first chunk means the user did not answer; after
//! at least one voiced chunk, the first silent chunk ends the answer.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{convert, rms_level, AudioClip, AudioError, AudioFormat, DRIVER_FORMAT};

const GATE_WINDOW_SECONDS: f64 = 0.02;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("chunk source failed after {} recorded frames: {reason}", partial.as_ref().map_or(0, AudioClip::frame_count))]
    SourceFailure {
        partial: Option<AudioClip>,
        reason: String,
    },
    #[error("sink failed after {delivered} frames: {reason}")]
    SinkFailure { delivered: usize, reason: String },
    #[error("invalid record policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Failure reported by an audio device or its stand-in.
#[derive(Debug, Clone, Error)]
#[error("{0}")]
pub struct DeviceError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseGateConfig {
    pub highpass_cutoff_hz: f64,
    /// Windows whose normalized RMS falls below this level are zeroed.
    pub gate_threshold: f64,
    pub enabled: bool,
}

impl Default for NoiseGateConfig {
    fn default() -> Self {
        NoiseGateConfig {
            highpass_cutoff_hz: 100.0,
            gate_threshold: 0.005,
            enabled: true,
        }
    }
}

impl NoiseGateConfig {
    pub fn disabled() -> Self {
        NoiseGateConfig {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), CaptureError> {
        let nyquist = f64::from(DRIVER_FORMAT.sample_rate_hz()) / 2.0;
        if !(self.highpass_cutoff_hz > 0.0 && self.highpass_cutoff_hz < nyquist) {
            return Err(CaptureError::InvalidPolicy(format!(
                "high-pass cutoff {} Hz must lie in (0, {nyquist})",
                self.highpass_cutoff_hz
            )));
        }
        if !(0.0..=1.0).contains(&self.gate_threshold) {
            return Err(CaptureError::InvalidPolicy(format!(
                "gate threshold {} outside [0, 1]",
                self.gate_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordPolicy {
    pub chunk_seconds: f64,
    pub silence_rms_threshold: f64,
    pub max_chunks: u32,
    pub noise_gate: NoiseGateConfig,
}

impl Default for RecordPolicy {
    fn default() -> Self {
        RecordPolicy {
            chunk_seconds: 4.0,
            silence_rms_threshold: 0.01,
            max_chunks: 15,
            noise_gate: NoiseGateConfig::default(),
        }
    }
}

impl RecordPolicy {
    pub fn validate(&self) -> Result<(), CaptureError> {
        if !(self.chunk_seconds > 0.0 && self.chunk_seconds.is_finite()) {
            return Err(CaptureError::InvalidPolicy(format!(
                "chunk length {} s must be positive",
                self.chunk_seconds
            )));
        }
        if !(self.silence_rms_threshold > 0.0 && self.silence_rms_threshold < 1.0) {
            return Err(CaptureError::InvalidPolicy(format!(
                "silence threshold {} must lie strictly between 0 and 1",
                self.silence_rms_threshold
            )));
        }
        if self.max_chunks == 0 {
            return Err(CaptureError::InvalidPolicy("max_chunks must be positive".into()));
        }
        self.noise_gate.validate()
    }

    pub fn chunk_frames(&self) -> usize {
        DRIVER_FORMAT.frames_for(self.chunk_seconds).max(1)
    }

    /// Upper bound on the length of any recording made under this policy.
    pub fn max_duration_seconds(&self) -> f64 {
        self.chunk_seconds * f64::from(self.max_chunks)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordingOutcome {
    Answered { clip: AudioClip, truncated: bool },
    NoAnswer,
}

/// Yields successive fixed-length chunks of microphone input.
pub trait ChunkSource: Send {
    fn next_chunk(&mut self, frames: usize) -> Result<AudioClip, DeviceError>;
}

/// Accepts interleaved frames for the speaker.
pub trait FrameSink: Send {
    fn write_frame(&mut self, frame: &[i32]) -> Result<(), DeviceError>;
}

/// Strict threshold test: a chunk whose level equals the threshold is voiced.
pub fn detect_silence(chunk: &AudioClip, threshold: f64) -> bool {
    rms_level(chunk) < threshold
}

pub fn record_answer(
    source: &mut dyn ChunkSource,
    policy: &RecordPolicy,
) -> Result<RecordingOutcome, CaptureError> {
    record_answer_with(source, policy, |_| {})
}

/// Like [`record_answer`], handing each voiced chunk to `on_voiced` as soon as
/// it is accepted so a consumer can start work before the answer ends.
pub fn record_answer_with(
    source: &mut dyn ChunkSource,
    policy: &RecordPolicy,
    mut on_voiced: impl FnMut(&AudioClip),
) -> Result<RecordingOutcome, CaptureError> {
    policy.validate()?;
    let frames = policy.chunk_frames();
    let mut voiced: Vec<AudioClip> = Vec::new();

    let partial = |voiced: &[AudioClip]| -> Option<AudioClip> {
        let first = voiced.first()?;
        AudioClip::concat(first.format(), voiced).ok()
    };

    loop {
        let chunk = match source.next_chunk(frames) {
            Ok(chunk) => chunk,
            Err(e) => {
                return Err(CaptureError::SourceFailure {
                    partial: partial(&voiced),
                    reason: e.0,
                })
            }
        };
        if let Some(first) = voiced.first() {
            if chunk.format() != first.format() {
                return Err(CaptureError::SourceFailure {
                    partial: partial(&voiced),
                    reason: format!("chunk format changed mid-answer to {:?}", chunk.format()),
                });
            }
        }

        if detect_silence(&chunk, policy.silence_rms_threshold) {
            if voiced.is_empty() {
                return Ok(RecordingOutcome::NoAnswer);
            }
            break;
        }
        on_voiced(&chunk);
        voiced.push(chunk);
        if voiced.len() >= policy.max_chunks as usize {
            let clip = AudioClip::concat(voiced[0].format(), &voiced)?;
            return Ok(RecordingOutcome::Answered {
                clip: noise_gate(&clip, &policy.noise_gate),
                truncated: true,
            });
        }
    }

    let clip = AudioClip::concat(voiced[0].format(), &voiced)?;
    Ok(RecordingOutcome::Answered {
        clip: noise_gate(&clip, &policy.noise_gate),
        truncated: false,
    })
}

/// High-pass filter followed by a windowed RMS gate.
///
/// The filter removes every spectral component below the cutoff (whole-clip
/// DFT), truncating toward zero so no sample grows in magnitude. It only
/// engages when the removed band carries more than the gate level plus one
/// LSB of RMS; below that the band is left alone. Gate windows are 20 ms with
/// channels pooled. With these rules the output never has a higher RMS than
/// the input and a second application is the identity.
pub fn noise_gate(clip: &AudioClip, config: &NoiseGateConfig) -> AudioClip {
    if !config.enabled || clip.is_empty() {
        return clip.clone();
    }
    let format = clip.format();
    let full_scale = format.full_scale();
    let channels = usize::from(format.channels());

    let low = low_band(clip, config.highpass_cutoff_hz);
    let low_rms = (low.iter().map(|v| v * v).sum::<f64>() / low.len() as f64).sqrt();
    let floor = config.gate_threshold * full_scale + 1.0;

    let mut samples: Vec<i32> = if low_rms > floor {
        clip.samples()
            .iter()
            .zip(&low)
            .map(|(&s, &l)| (f64::from(s) - l).trunc() as i32)
            .collect()
    } else {
        clip.samples().to_vec()
    };

    let window = format.frames_for(GATE_WINDOW_SECONDS).max(1) * channels;
    for w in samples.chunks_mut(window) {
        let ms = w.iter().map(|&s| f64::from(s).powi(2)).sum::<f64>() / w.len() as f64;
        if ms.sqrt() / full_scale < config.gate_threshold {
            w.fill(0);
        }
    }

    let mut out = AudioClip::new(format, samples).expect("gated samples stay in range");
    *out.metadata_mut() = clip.metadata().clone();
    out
}

/// Interleaved sub-cutoff component of each channel.
fn low_band(clip: &AudioClip, cutoff_hz: f64) -> Vec<f64> {
    let format = clip.format();
    let channels = usize::from(format.channels());
    let n = clip.frame_count();
    let rate = f64::from(format.sample_rate_hz());

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let keep = |k: usize| (k.min(n - k) as f64) * rate / (n as f64) < cutoff_hz;

    let mut out = vec![0.0; clip.samples().len()];
    for c in 0..channels {
        let mut buf: Vec<Complex<f64>> = clip
            .channel(c)
            .map(|s| Complex::new(f64::from(s), 0.0))
            .collect();
        forward.process(&mut buf);
        for (k, bin) in buf.iter_mut().enumerate() {
            if !keep(k) {
                *bin = Complex::new(0.0, 0.0);
            }
        }
        inverse.process(&mut buf);
        for (i, v) in buf.iter().enumerate() {
            out[i * channels + c] = v.re / n as f64;
        }
    }
    out
}

/// Sends every frame to the sink in order and returns the count.
pub fn playback(clip: &AudioClip, sink: &mut dyn FrameSink) -> Result<usize, CaptureError> {
    let channels = usize::from(clip.format().channels());
    let mut delivered = 0;
    for frame in clip.samples().chunks_exact(channels) {
        sink.write_frame(frame)
            .map_err(|e| CaptureError::SinkFailure {
                delivered,
                reason: e.0,
            })?;
        delivered += 1;
    }
    Ok(delivered)
}

/// Serves a recorded clip chunk by chunk in the driver format, then silence
/// forever, the way a live microphone keeps delivering frames.
#[derive(Debug, Clone)]
pub struct FileChunkSource {
    clip: Arc<AudioClip>,
    cursor: usize,
}

impl FileChunkSource {
    pub fn new(clip: &AudioClip) -> Self {
        FileChunkSource {
            clip: Arc::new(convert(clip, DRIVER_FORMAT)),
            cursor: 0,
        }
    }

    pub fn from_wav(bytes: &[u8]) -> Result<Self, AudioError> {
        Ok(FileChunkSource::new(&crate::audio::parse_wav(bytes)?))
    }
}

impl ChunkSource for FileChunkSource {
    fn next_chunk(&mut self, frames: usize) -> Result<AudioClip, DeviceError> {
        let total = self.clip.frame_count();
        if self.cursor >= total {
            return Ok(AudioClip::silence(DRIVER_FORMAT, frames));
        }
        let part = self.clip.slice_frames(self.cursor, frames);
        self.cursor += frames;
        let pad = AudioClip::silence(DRIVER_FORMAT, frames - part.frame_count());
        Ok(AudioClip::concat(DRIVER_FORMAT, [&part, &pad]).expect("same format"))
    }
}

/// A microphone that only ever hears silence.
#[derive(Debug, Clone, Default)]
pub struct SilentSource;

impl ChunkSource for SilentSource {
    fn next_chunk(&mut self, frames: usize) -> Result<AudioClip, DeviceError> {
        Ok(AudioClip::silence(DRIVER_FORMAT, frames))
    }
}

/// Discards frames, counting them.
#[derive(Debug, Clone, Default)]
pub struct NullSink {
    pub frames: usize,
}

impl FrameSink for NullSink {
    fn write_frame(&mut self, _frame: &[i32]) -> Result<(), DeviceError> {
        self.frames += 1;
        Ok(())
    }
}

/// Keeps every frame it receives.
#[derive(Debug, Clone)]
pub struct CollectSink {
    format: AudioFormat,
    samples: Vec<i32>,
}

impl CollectSink {
    pub fn new(format: AudioFormat) -> Self {
        CollectSink {
            format,
            samples: Vec::new(),
        }
    }

    pub fn into_clip(self) -> AudioClip {
        AudioClip::new(self.format, self.samples).expect("frames came from valid clips")
    }
}

impl FrameSink for CollectSink {
    fn write_frame(&mut self, frame: &[i32]) -> Result<(), DeviceError> {
        if frame.len() != usize::from(self.format.channels()) {
            return Err(DeviceError(format!(
                "expected {} channels, got {}",
                self.format.channels(),
                frame.len()
            )));
        }
        self.samples.extend_from_slice(frame);
        Ok(())
    }
}
