//! WAV input/output (PCM 16-bit and IEEE float 32-bit).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

fn wav_err(e: hound::Error) -> Error {
    Error::Wav(e.to_string())
}

/// Reads a WAV file into `[S, C]` samples scaled to [-1, 1], plus the sample rate.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Array2<f64>, f64)> {
    let reader = WavReader::open(path.as_ref()).map_err(wav_err)?;
    let spec = reader.spec();
    let c = spec.channels as usize;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(Error::Wav(format!("unsupported sample format {fmt:?}/{bits} bit")));
        }
    };
    let s = samples.len() / c.max(1);
    let arr = Array2::from_shape_vec((s, c), samples)
        .map_err(|e| Error::Wav(format!("interleaving: {e}")))?;
    Ok((arr, spec.sample_rate as f64))
}

/// Writes `[S, C]` samples. PCM output is clipped to [-1, 1].
pub fn write_wav(
    path: impl AsRef<Path>,
    wave: ArrayView2<f64>,
    sample_rate: f64,
    format: WavFormat,
) -> Result<()> {
    let (_, c) = wave.dim();
    let spec = WavSpec {
        channels: c as u16,
        sample_rate: sample_rate.round() as u32,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut w = WavWriter::create(path.as_ref(), spec).map_err(wav_err)?;
    for row in wave.rows() {
        for &v in row {
            match format {
                WavFormat::Pcm16 => {
                    let q = (v.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                    w.write_sample(q).map_err(wav_err)?;
                }
                WavFormat::Float32 => w.write_sample(v as f32).map_err(wav_err)?,
            }
        }
    }
    w.finalize().map_err(wav_err)
}
