//! RIFF/WAVE reader and writer for 16- and 24-bit integer PCM.
//!
//! Written files are canonical: `RIFF` header, a 16-byte `fmt ` chunk with
//! format tag 1, the `data` chunk, and (only when the clip carries tags) one
//! `cvmd` chunk holding UTF-8 `key=value` lines. Readers that do not know
//! `cvmd` skip it like any other unknown chunk.

use std::collections::BTreeMap;

use super::{AudioClip, AudioError, AudioFormat};

/// Chunk identifier of the embedded metadata block.
pub const META_CHUNK_ID: [u8; 4] = *b"cvmd";

/// Length of everything before the first sample in a written file.
pub const WAV_HEADER_LEN: usize = 44;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

pub fn write_wav(clip: &AudioClip) -> Vec<u8> {
    let format = clip.format();
    let bps = format.bytes_per_sample();
    let data_len = clip.samples().len() * bps;
    let meta = encode_metadata(clip.metadata());

    let mut riff_len = 4 + (8 + 16) + 8 + data_len + data_len % 2;
    if !meta.is_empty() {
        riff_len += 8 + meta.len() + meta.len() % 2;
    }

    let mut out = Vec::with_capacity(riff_len + 8);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(riff_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");

    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&format.channels().to_le_bytes());
    out.extend_from_slice(&format.sample_rate_hz().to_le_bytes());
    let byte_rate = format.sample_rate_hz() * format.block_align() as u32;
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&(format.block_align() as u16).to_le_bytes());
    out.extend_from_slice(&format.bit_depth().to_le_bytes());

    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    match bps {
        2 => {
            for &s in clip.samples() {
                out.extend_from_slice(&(s as i16).to_le_bytes());
            }
        }
        _ => {
            for &s in clip.samples() {
                out.extend_from_slice(&s.to_le_bytes()[..3]);
            }
        }
    }
    if data_len % 2 == 1 {
        out.push(0);
    }

    if !meta.is_empty() {
        out.extend_from_slice(&META_CHUNK_ID);
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        if meta.len() % 2 == 1 {
            out.push(0);
        }
    }
    out
}

pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    let malformed = |msg: &str| AudioError::MalformedFile(msg.to_string());

    if bytes.len() < 12 {
        return Err(malformed("truncated RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(malformed("missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing WAVE form type"));
    }

    let mut format: Option<AudioFormat> = None;
    let mut data: Option<&[u8]> = None;
    let mut metadata = BTreeMap::new();

    let mut pos = 12;
    while pos < bytes.len() {
        if bytes.len() - pos < 8 {
            // Some writers leave a stray pad byte or two at the end.
            if data.is_some() {
                break;
            }
            return Err(malformed("truncated chunk header"));
        }
        let id: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| {
                AudioError::MalformedFile(format!(
                    "chunk {:?} declares {size} bytes past end of file",
                    String::from_utf8_lossy(&id)
                ))
            })?;
        let body = &bytes[body_start..body_end];

        match &id {
            b"fmt " => format = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            id if *id == META_CHUNK_ID => metadata = decode_metadata(body)?,
            _ => {}
        }
        pos = body_end + size % 2;
    }

    let format = format.ok_or_else(|| malformed("missing fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("missing data chunk"))?;
    if data.len() % format.block_align() != 0 {
        return Err(AudioError::MalformedFile(format!(
            "data size {} is not a multiple of block size {}",
            data.len(),
            format.block_align()
        )));
    }

    let samples: Vec<i32> = match format.bytes_per_sample() {
        2 => data
            .chunks_exact(2)
            .map(|b| i32::from(i16::from_le_bytes([b[0], b[1]])))
            .collect(),
        _ => data
            .chunks_exact(3)
            .map(|b| i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8)
            .collect(),
    };
    Ok(AudioClip::from_parts_unchecked(format, samples, metadata))
}

fn parse_fmt(body: &[u8]) -> Result<AudioFormat, AudioError> {
    if body.len() < 16 {
        return Err(AudioError::MalformedFile(format!(
            "fmt chunk is {} bytes, expected at least 16",
            body.len()
        )));
    }
    let u16_at = |i: usize| u16::from_le_bytes([body[i], body[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(body[i..i + 4].try_into().unwrap());

    let tag = u16_at(0);
    let channels = u16_at(2);
    let rate = u32_at(4);
    let block_align = u16_at(12);
    let bits = u16_at(14);

    match tag {
        FORMAT_PCM => {}
        FORMAT_EXTENSIBLE => {
            // cbSize(2) validBits(2) channelMask(4) then the sub-format GUID,
            // whose first two bytes carry the plain format tag.
            if body.len() < 40 {
                return Err(AudioError::MalformedFile(
                    "extensible fmt chunk too short".into(),
                ));
            }
            let sub = u16_at(24);
            if sub != FORMAT_PCM {
                return Err(AudioError::UnsupportedFormat(format!(
                    "extensible sub-format {sub:#06x} is not integer PCM"
                )));
            }
        }
        FORMAT_FLOAT => {
            return Err(AudioError::UnsupportedFormat("IEEE float PCM".into()));
        }
        other => {
            return Err(AudioError::UnsupportedFormat(format!(
                "compressed codec with format tag {other:#06x}"
            )));
        }
    }
    if channels == 0 {
        return Err(AudioError::MalformedFile("zero channels".into()));
    }
    if rate == 0 {
        return Err(AudioError::MalformedFile("zero sample rate".into()));
    }
    let format = AudioFormat::new(rate, bits, channels)?;
    if usize::from(block_align) != format.block_align() {
        return Err(AudioError::MalformedFile(format!(
            "block align {block_align} inconsistent with {channels} x {bits}-bit"
        )));
    }
    Ok(format)
}

// Keys escape `\`, `=`, CR and LF; values escape `\`, CR and LF.
fn encode_metadata(meta: &BTreeMap<String, String>) -> Vec<u8> {
    let mut out = String::new();
    for (k, v) in meta {
        escape_into(&mut out, k, true);
        out.push('=');
        escape_into(&mut out, v, false);
        out.push('\n');
    }
    out.into_bytes()
}

fn escape_into(out: &mut String, s: &str, is_key: bool) {
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '=' if is_key => out.push_str("\\="),
            c => out.push(c),
        }
    }
}

fn decode_metadata(body: &[u8]) -> Result<BTreeMap<String, String>, AudioError> {
    let text = std::str::from_utf8(body)
        .map_err(|_| AudioError::MalformedFile("metadata chunk is not UTF-8".into()))?;
    let mut meta = BTreeMap::new();
    for line in text.split('\n').filter(|l| !l.is_empty()) {
        let mut key = String::new();
        let mut value = String::new();
        let mut in_value = false;
        let mut chars = line.chars();
        while let Some(c) = chars.next() {
            let target = if in_value { &mut value } else { &mut key };
            match c {
                '\\' => match chars.next() {
                    Some('n') => target.push('\n'),
                    Some('r') => target.push('\r'),
                    Some(other) => target.push(other),
                    None => {
                        return Err(AudioError::MalformedFile(
                            "dangling escape in metadata".into(),
                        ))
                    }
                },
                '=' if !in_value => in_value = true,
                c => target.push(c),
            }
        }
        if !in_value {
            return Err(AudioError::MalformedFile(format!(
                "metadata line without '=': {line:?}"
            )));
        }
        meta.insert(key, value);
    }
    Ok(meta)
}
