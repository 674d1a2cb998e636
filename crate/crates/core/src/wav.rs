//! WAV reading and writing for mono restoration pipelines.
//!
//! Supported: PCM 16/24-bit integer and 32-bit float, sample rates
//! 22050 and 44100 Hz. Multi-channel input is mixed down to mono; the
//! caller decides how to surface that as a warning.

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{Signal, SUPPORTED_SAMPLE_RATES};

/// Sample encoding of a WAV file, preserved across read/write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Pcm24,
    Float32,
}

impl WavFormat {
    fn to_spec(self, sample_rate: u32) -> hound::WavSpec {
        let (bits, format) = match self {
            WavFormat::Pcm16 => (16, hound::SampleFormat::Int),
            WavFormat::Pcm24 => (24, hound::SampleFormat::Int),
            WavFormat::Float32 => (32, hound::SampleFormat::Float),
        };
        hound::WavSpec {
            channels: 1,
            sample_rate,
            bits_per_sample: bits,
            sample_format: format,
        }
    }
}

/// A decoded WAV file plus provenance needed for warnings and round trips.
#[derive(Debug, Clone)]
pub struct LoadedWav {
    pub signal: Signal,
    pub format: WavFormat,
    pub source_channels: u16,
}

impl LoadedWav {
    pub fn was_mixed_down(&self) -> bool {
        self.source_channels > 1
    }
}

fn check_sample_rate(rate: u32, path: &Path) -> Result<()> {
    if SUPPORTED_SAMPLE_RATES.contains(&rate) {
        Ok(())
    } else {
        Err(Error::Format {
            context: path.display().to_string(),
            detail: format!("unsupported sample rate {rate} Hz (expected 22050 or 44100)"),
        })
    }
}

/// Read a WAV file, mixing multi-channel content down to mono by
/// averaging channels.
pub fn read_wav(path: impl AsRef<Path>) -> Result<LoadedWav> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::Format {
        context: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let spec = reader.spec();
    check_sample_rate(spec.sample_rate, path)?;
    let channels = spec.channels;
    if channels == 0 {
        return Err(Error::Format {
            context: path.display().to_string(),
            detail: "zero channels".into(),
        });
    }

    let format = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => WavFormat::Pcm16,
        (hound::SampleFormat::Int, 24) => WavFormat::Pcm24,
        (hound::SampleFormat::Float, 32) => WavFormat::Float32,
        (f, b) => {
            return Err(Error::Format {
                context: path.display().to_string(),
                detail: format!("unsupported encoding {f:?}/{b}-bit"),
            })
        }
    };

    let interleaved: Vec<f64> = match format {
        WavFormat::Pcm16 => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        WavFormat::Pcm24 => reader
            .samples::<i32>()
            .map(|s| s.map(|v| v as f64 / 8388608.0))
            .collect::<std::result::Result<_, _>>(),
        WavFormat::Float32 => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>(),
    }
    .map_err(|e| Error::Format {
        context: path.display().to_string(),
        detail: e.to_string(),
    })?;

    let n_frames = interleaved.len() / channels as usize;
    let mono: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        let ch = channels as usize;
        (0..n_frames)
            .map(|i| interleaved[i * ch..(i + 1) * ch].iter().sum::<f64>() / ch as f64)
            .collect()
    };

    Ok(LoadedWav {
        signal: Signal::new(mono, spec.sample_rate)?,
        format,
        source_channels: channels,
    })
}

/// Write a mono signal in the given encoding. Values outside [-1, 1]
/// are clamped for integer formats.
pub fn write_wav(path: impl AsRef<Path>, signal: &Signal, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    let spec = format.to_spec(signal.sample_rate());
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| Error::Format {
        context: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let write_err = |e: hound::Error| Error::Format {
        context: path.display().to_string(),
        detail: e.to_string(),
    };
    match format {
        WavFormat::Pcm16 => {
            for &x in signal.samples() {
                let v = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v).map_err(write_err)?;
            }
        }
        WavFormat::Pcm24 => {
            for &x in signal.samples() {
                let v = (x * 8388608.0).round().clamp(-8388608.0, 8388607.0) as i32;
                writer.write_sample(v).map_err(write_err)?;
            }
        }
        WavFormat::Float32 => {
            for &x in signal.samples() {
                writer.write_sample(x as f32).map_err(write_err)?;
            }
        }
    }
    writer.finalize().map_err(write_err)
}
