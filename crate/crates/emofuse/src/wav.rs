//! RIFF/WAVE reading (16-bit PCM, any channel count) and mono writing.

use std::path::Path;

use emofuse_core::dsp::AudioClip;
use emofuse_core::{Error, Result};

use crate::{read_file, write_atomic};

const PCM: u16 = 1;
const EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

struct Format {
    channels: u16,
    sample_rate: u32,
}

fn parse_fmt(body: &[u8]) -> Result<Format> {
    if body.len() < 16 {
        return Err(Error::Format(format!("'fmt ' chunk is {} bytes, expected at least 16", body.len())));
    }
    let mut tag = u16_at(body, 0);
    if tag == EXTENSIBLE && body.len() >= 26 {
        tag = u16_at(body, 24);
    }
    let channels = u16_at(body, 2);
    let sample_rate = u32_at(body, 4);
    let bits = u16_at(body, 14);
    if tag != PCM {
        return Err(Error::Format(format!("'fmt ' chunk: codec tag {tag:#06x} is not PCM")));
    }
    if bits != 16 {
        return Err(Error::Format(format!("'fmt ' chunk: {bits}-bit samples, only 16-bit PCM is supported")));
    }
    if channels == 0 || sample_rate == 0 {
        return Err(Error::Format("'fmt ' chunk: zero channels or sample rate".into()));
    }
    Ok(Format { channels, sample_rate })
}

/// Decodes a WAV image: channels are averaged and samples scaled by 1/32768.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 {
        return Err(Error::Io("truncated RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut format = None;
    loop {
        if pos + 8 > bytes.len() {
            return Err(match format {
                None => Error::Format("no 'fmt ' chunk".into()),
                Some(_) => Error::Format("no 'data' chunk".into()),
            });
        }
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let name = String::from_utf8_lossy(id).into_owned();
        match id {
            b"fmt " => {
                let end = body_start + size;
                if end > bytes.len() {
                    return Err(Error::Io(format!("truncated '{name}' chunk")));
                }
                format = Some(parse_fmt(&bytes[body_start..end])?);
            }
            b"data" => {
                let Some(f) = format else {
                    return Err(Error::Format("'data' chunk before 'fmt ' chunk".into()));
                };
                let end = body_start + size;
                if end > bytes.len() {
                    return Err(Error::Io(format!(
                        "truncated 'data' chunk: {size} bytes declared, {} present",
                        bytes.len() - body_start
                    )));
                }
                let frame = 2 * f.channels as usize;
                if size % frame != 0 {
                    return Err(Error::Format(format!("'data' chunk size {size} is not a multiple of the {frame}-byte frame")));
                }
                let samples = bytes[body_start..end]
                    .chunks_exact(frame)
                    .map(|fr| {
                        let sum: f64 = fr.chunks_exact(2).map(|s| i16::from_le_bytes([s[0], s[1]]) as f64).sum();
                        sum / f.channels as f64 / 32768.0
                    })
                    .collect();
                return AudioClip::new(samples, f.sample_rate);
            }
            _ => {}
        }
        pos = body_start + size + (size & 1);
    }
}

pub fn load_wav(path: &Path) -> Result<AudioClip> {
    decode_wav(&read_file(path)?).map_err(|e| e.context(path.display()))
}

/// 16-bit mono PCM; samples are clamped to [−1, 1) and rounded.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    write_atomic(path, &encode_wav(clip))
}
