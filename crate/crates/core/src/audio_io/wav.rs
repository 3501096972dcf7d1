//! RIFF/WAVE decoding (PCM 16/24-bit, IEEE float 32-bit) and PCM encoding.

use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};
use crate::fsutil;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Sample encoding found in a decoded file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Pcm24,
    Float32,
}

/// Bit depth for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcmDepth {
    Pcm16,
    Pcm24,
}

impl PcmDepth {
    pub fn bits(self) -> u16 {
        match self {
            PcmDepth::Pcm16 => 16,
            PcmDepth::Pcm24 => 24,
        }
    }

    pub fn from_bits(bits: u16) -> Option<Self> {
        match bits {
            16 => Some(PcmDepth::Pcm16),
            24 => Some(PcmDepth::Pcm24),
            _ => None,
        }
    }
}

struct FmtChunk {
    format: WavFormat,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
}

fn malformed(chunk: &str, reason: impl Into<String>) -> Error {
    Error::MalformedChunk {
        chunk: chunk.to_string(),
        reason: reason.into(),
    }
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(malformed("fmt ", format!("{} bytes, need 16", body.len())));
    }
    let mut tag = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let sample_rate = u32_at(body, 4);
    let block_align = u16_at(body, 12);
    let bits = u16_at(body, 14);
    if tag == FORMAT_EXTENSIBLE {
        if body.len() < 40 {
            return Err(malformed("fmt ", "extensible format without sub-format"));
        }
        tag = u16_at(body, 24);
    }
    let format = match (tag, bits) {
        (FORMAT_PCM, 16) => WavFormat::Pcm16,
        (FORMAT_PCM, 24) => WavFormat::Pcm24,
        (FORMAT_FLOAT, 32) => WavFormat::Float32,
        (FORMAT_PCM | FORMAT_FLOAT, b) => {
            return Err(Error::UnsupportedFormat(format!(
                "format code {tag} with {b} bits per sample"
            )))
        }
        (t, _) => return Err(Error::UnsupportedFormat(format!("format code {t}"))),
    };
    if !(1..=2).contains(&channels) {
        return Err(Error::UnsupportedFormat(format!("{channels} channels")));
    }
    if sample_rate == 0 {
        return Err(malformed("fmt ", "sample rate is zero"));
    }
    if block_align != channels * (bits / 8) {
        return Err(malformed(
            "fmt ",
            format!("block align {block_align} inconsistent with {channels} x {bits} bits"),
        ));
    }
    Ok(FmtChunk {
        format,
        channels,
        sample_rate,
        block_align,
    })
}

/// Decodes a complete RIFF/WAVE byte buffer. Unknown chunks are skipped;
/// mono files are duplicated into two identical channels.
pub fn decode_wav(bytes: &[u8]) -> Result<(AudioClip, WavFormat)> {
    if bytes.len() < 12 {
        return Err(malformed("RIFF", "file shorter than the RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(malformed("RIFF", "missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(malformed("RIFF", "form type is not WAVE"));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut pos = 12usize;
    loop {
        if pos + 8 > bytes.len() {
            return Err(if fmt.is_none() {
                malformed("fmt ", "chunk not found")
            } else {
                malformed("data", "chunk not found")
            });
        }
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let id_str = String::from_utf8_lossy(id).into_owned();
        match id {
            b"fmt " => {
                let end = body_start.checked_add(size).filter(|&e| e <= bytes.len());
                let end = end.ok_or_else(|| malformed("fmt ", "chunk runs past end of file"))?;
                fmt = Some(parse_fmt(&bytes[body_start..end])?);
            }
            b"data" => {
                let fmt = fmt.ok_or_else(|| malformed("fmt ", "chunk must precede data"))?;
                let available = bytes.len() - body_start;
                if available < size {
                    return Err(Error::Truncated {
                        expected: size as u64,
                        actual: available as u64,
                    });
                }
                let data = &bytes[body_start..body_start + size];
                let clip = decode_samples(data, &fmt)?;
                return Ok((clip, fmt.format));
            }
            _ => {
                if body_start.saturating_add(size) > bytes.len() {
                    return Err(malformed(&id_str, "chunk runs past end of file"));
                }
            }
        }
        pos = body_start + size + (size & 1);
    }
}

fn decode_samples(data: &[u8], fmt: &FmtChunk) -> Result<AudioClip> {
    let block = fmt.block_align as usize;
    if !data.len().is_multiple_of(block) {
        return Err(malformed(
            "data",
            format!(
                "{} bytes is not a whole number of {block}-byte frames",
                data.len()
            ),
        ));
    }
    let frames = data.len() / block;
    let nch = fmt.channels as usize;
    let mut channels = vec![Vec::with_capacity(frames); nch];
    let width = block / nch;
    for (f, frame) in data.chunks_exact(block).enumerate() {
        for (c, s) in frame.chunks_exact(width).enumerate() {
            let v = match fmt.format {
                WavFormat::Pcm16 => i16::from_le_bytes([s[0], s[1]]) as f32 / 32768.0,
                WavFormat::Pcm24 => {
                    // sign-extend three little-endian bytes
                    let raw = i32::from_le_bytes([0, s[0], s[1], s[2]]) >> 8;
                    raw as f32 / 8_388_608.0
                }
                WavFormat::Float32 => {
                    let x = f32::from_le_bytes([s[0], s[1], s[2], s[3]]);
                    if !x.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "float sample at frame {f}, channel {c}"
                        )));
                    }
                    x.clamp(-1.0, 1.0)
                }
            };
            channels[c].push(v);
        }
    }
    if nch == 1 {
        let dup = channels[0].clone();
        channels.push(dup);
    }
    AudioClip::new(channels, fmt.sample_rate)
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = fsutil::read(path)?;
    decode_wav(&bytes).map(|(clip, _)| clip)
}

/// Encodes `clip` as an integer PCM WAV file image.
pub fn wav_bytes(clip: &AudioClip, depth: PcmDepth) -> Vec<u8> {
    let nch = clip.channel_count();
    let bits = depth.bits();
    let width = bits as usize / 8;
    let frames = clip.len();
    let data_len = frames * nch * width;
    let pad = data_len & 1;
    let sr = clip.sample_rate();
    let block_align = (nch * width) as u16;

    let mut out = Vec::with_capacity(44 + data_len + pad);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len + pad) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&(nch as u16).to_le_bytes());
    out.extend_from_slice(&sr.to_le_bytes());
    out.extend_from_slice(&(sr * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());

    let scale = (1i64 << (bits - 1)) as f64;
    for t in 0..frames {
        for c in 0..nch {
            let q = (clip.channel(c)[t] as f64 * scale)
                .round()
                .clamp(-scale, scale - 1.0) as i32;
            match depth {
                PcmDepth::Pcm16 => out.extend_from_slice(&(q as i16).to_le_bytes()),
                PcmDepth::Pcm24 => out.extend_from_slice(&q.to_le_bytes()[0..3]),
            }
        }
    }
    if pad == 1 {
        out.push(0);
    }
    out
}

pub fn write_wav(clip: &AudioClip, path: &Path, depth: PcmDepth) -> Result<()> {
    fsutil::write_atomic(path, &wav_bytes(clip, depth))
}
