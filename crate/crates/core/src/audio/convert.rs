//! Channel, bit-depth and sample-rate conversion.
//!
//! Rules: mono to stereo duplicates, stereo to mono takes the mean,
//! 16 to 24 bits shifts left by 8, 24 to 16 bits divides by 256, and rate
//! changes use linear interpolation to `round(n * target / source)` frames.
//! All rounding is half away from zero.

use super::{AudioClip, AudioFormat};

/// Rounds to the nearest integer, ties away from zero.
pub fn round_half_away(x: f64) -> i64 {
    x.round() as i64
}

pub fn convert(clip: &AudioClip, target: AudioFormat) -> AudioClip {
    let source = clip.format();
    if source == target {
        return clip.clone();
    }

    let mut channels = source.channels();
    let mut depth = source.bit_depth();
    let mut samples = clip.samples().to_vec();

    if channels == 2 && target.channels() == 1 {
        samples = downmix(&samples);
        channels = 1;
    }
    if depth == 16 && target.bit_depth() == 24 {
        samples.iter_mut().for_each(|s| *s <<= 8);
        depth = 24;
    }
    if source.sample_rate_hz() != target.sample_rate_hz() {
        samples = resample(
            &samples,
            usize::from(channels),
            source.sample_rate_hz(),
            target.sample_rate_hz(),
            depth,
        );
    }
    if depth == 24 && target.bit_depth() == 16 {
        samples
            .iter_mut()
            .for_each(|s| *s = (round_half_away(f64::from(*s) / 256.0) as i32).clamp(-32_768, 32_767));
    }
    if channels == 1 && target.channels() == 2 {
        samples = samples.iter().flat_map(|&s| [s, s]).collect();
    }

    AudioClip::from_parts_unchecked(target, samples, clip.metadata().clone())
}

fn downmix(samples: &[i32]) -> Vec<i32> {
    samples
        .chunks_exact(2)
        .map(|lr| round_half_away((f64::from(lr[0]) + f64::from(lr[1])) / 2.0) as i32)
        .collect()
}

/// Output frame count for a rate change, `round(n * to / from)` in exact
/// integer arithmetic.
pub(crate) fn resampled_len(frames: usize, from: u32, to: u32) -> usize {
    let num = frames as u128 * u128::from(to);
    let den = u128::from(from);
    ((2 * num + den) / (2 * den)) as usize
}

fn resample(samples: &[i32], channels: usize, from: u32, to: u32, depth: u16) -> Vec<i32> {
    let frames = samples.len() / channels;
    let out_frames = resampled_len(frames, from, to);
    if frames == 0 {
        return Vec::new();
    }
    let lo = -(1i64 << (depth - 1));
    let hi = (1i64 << (depth - 1)) - 1;
    let last = frames - 1;

    let mut out = Vec::with_capacity(out_frames * channels);
    for j in 0..out_frames {
        // Output frame j sits at source position j * from / to.
        let num = j as u64 * u64::from(from);
        let i = ((num / u64::from(to)) as usize).min(last);
        let frac = (num % u64::from(to)) as f64 / f64::from(to);
        let next = (i + 1).min(last);
        for c in 0..channels {
            let a = f64::from(samples[i * channels + c]);
            let b = f64::from(samples[next * channels + c]);
            let v = round_half_away(a + (b - a) * frac).clamp(lo, hi);
            out.push(v as i32);
        }
    }
    out
}
