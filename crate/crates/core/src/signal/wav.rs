//! Minimal RIFF/WAVE reader and writer for 16-bit PCM mono files.

use std::fs;
use std::path::Path;

use super::MonoSignal;
use crate::error::{AncError, Result};

const PCM_FORMAT: u16 = 1;

pub fn read_wav(path: impl AsRef<Path>) -> Result<MonoSignal> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AncError::io(path, e))?;
    decode_wav(&bytes).map_err(|msg| AncError::format(path, msg))
}

pub fn write_wav(path: impl AsRef<Path>, signal: &MonoSignal) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(signal)).map_err(|e| AncError::io(path, e))
}

fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav(signal: &MonoSignal) -> Vec<u8> {
    let data_len = (signal.len() * 2) as u32;
    let rate = signal.sample_rate();
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in signal.samples() {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn decode_wav(bytes: &[u8]) -> std::result::Result<MonoSignal, String> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err("missing RIFF chunk id".into());
    }
    if &bytes[8..12] != b"WAVE" {
        return Err("RIFF form type is not WAVE".into());
    }

    let mut sample_rate = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(format!(
                "chunk '{}' size {size} runs past end of file",
                String::from_utf8_lossy(id)
            ));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(format!("fmt chunk size {size} is shorter than 16"));
                }
                let format = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if format != PCM_FORMAT {
                    return Err(format!("audio_format {format} is not PCM (1)"));
                }
                if channels != 1 {
                    return Err(format!("channels = {channels}, expected mono (1)"));
                }
                if bits != 16 {
                    return Err(format!("bits_per_sample = {bits}, expected 16"));
                }
                if rate == 0 {
                    return Err("sample_rate is 0".into());
                }
                sample_rate = Some(rate);
            }
            b"data" => {
                let rate = sample_rate.ok_or("data chunk appears before fmt chunk")?;
                if size % 2 != 0 {
                    return Err(format!("data chunk size {size} is not a multiple of 2"));
                }
                let samples = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return MonoSignal::new(samples, rate).map_err(|e| e.to_string());
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body + size + (size & 1);
    }
    Err("no data chunk".into())
}
