//! WAV (PCM16 mono) and raw little-endian f32 sample I/O.

use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum AudioIoError {
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("expected mono 16-bit PCM, found {channels} channel(s) at {bits} bits")]
    UnsupportedFormat { channels: u16, bits: u16 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn to_pcm16<T: Scalar>(v: T) -> i16 {
    let x = v.as_f64().clamp(-1.0, 1.0);
    (x * 32767.0).round() as i16
}

/// Encodes samples as a complete RIFF/WAVE file in memory.
pub fn wav_bytes<T: Scalar>(samples: &[T], sample_rate_hz: u32) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cursor, spec).expect("in-memory writer");
        for &s in samples {
            w.write_sample(to_pcm16(s)).expect("in-memory write");
        }
        w.finalize().expect("in-memory finalize");
    }
    cursor.into_inner()
}

pub fn write_wav<T: Scalar>(path: &Path, samples: &[T], sample_rate_hz: u32) -> Result<(), AudioIoError> {
    std::fs::write(path, wav_bytes(samples, sample_rate_hz))?;
    Ok(())
}

/// Reads a mono PCM16 WAV into samples in [-1, 1] and its sample rate.
pub fn read_wav_bytes(bytes: &[u8]) -> Result<(Vec<f64>, u32), AudioIoError> {
    let mut r = hound::WavReader::new(Cursor::new(bytes))?;
    let spec = r.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(AudioIoError::UnsupportedFormat { channels: spec.channels, bits: spec.bits_per_sample });
    }
    let samples = r.samples::<i16>().map(|s| s.map(|v| v as f64 / 32767.0)).collect::<Result<_, _>>()?;
    Ok((samples, spec.sample_rate))
}

pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32), AudioIoError> {
    read_wav_bytes(&std::fs::read(path)?)
}

/// Headerless little-endian f32 stream.
pub fn raw_f32_bytes<T: Scalar>(samples: &[T]) -> Vec<u8> {
    samples.iter().flat_map(|s| (s.as_f64().clamp(-1.0, 1.0) as f32).to_le_bytes()).collect()
}
