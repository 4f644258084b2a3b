//! Multichannel WAV input and output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Deinterleaved audio scaled to `[-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

/// Reads 16/24/32-bit PCM or 32-bit float WAV files.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (format, bits) => {
            return Err(Error::InvalidParameter(format!("unsupported WAV sample format {format:?} with {bits} bits")))
        }
    };
    let mut out = vec![Vec::with_capacity(interleaved.len() / channels.max(1)); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (channel, &s) in out.iter_mut().zip(frame) {
            channel.push(s);
        }
    }
    Ok(Audio { sample_rate: spec.sample_rate, channels: out })
}

/// Writes 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, sample_rate: u32, channels: &[Vec<f64>]) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::InvalidParameter("no channels to write".into()));
    }
    let len = channels[0].len();
    if channels.iter().any(|c| c.len() != len) {
        return Err(Error::DimensionMismatch("channels have different lengths".into()));
    }
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for t in 0..len {
        for channel in channels {
            writer.write_sample(channel[t] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}
