//! Mono audio buffers and WAV I/O.
//!
//! Reading accepts 16-bit integer and 32-bit float PCM. Multi-channel files
//! are rejected.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// PCM encoding used when writing a WAV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PcmFormat {
    Int16,
    #[default]
    Float32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.energy() / self.samples.len() as f64).sqrt()
    }

    /// Concatenates signals that share a sample rate.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a AudioSignal>) -> Result<Self> {
        let mut samples = Vec::new();
        let mut rate = None;
        for part in parts {
            match rate {
                None => rate = Some(part.sample_rate),
                Some(r) if r != part.sample_rate => {
                    return Err(Error::invalid(format!(
                        "sample rate mismatch: {r} Hz vs {} Hz",
                        part.sample_rate
                    )))
                }
                _ => {}
            }
            samples.extend_from_slice(&part.samples);
        }
        let rate = rate.ok_or(Error::EmptySignal)?;
        Self::new(samples, rate)
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            path,
            format!("expected mono audio, found {} channels", spec.channels),
        ));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (fmt, bits) => {
            return Err(Error::format(
                path,
                format!("unsupported PCM encoding {fmt:?} {bits}-bit"),
            ))
        }
    };
    AudioSignal::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, signal: &AudioSignal, format: PcmFormat) -> Result<()> {
    let (bits, sample_format) = match format {
        PcmFormat::Int16 => (16, SampleFormat::Int),
        PcmFormat::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: bits,
        sample_format,
    };
    let mut writer = WavWriter::create(path, spec)?;
    match format {
        PcmFormat::Int16 => {
            for &s in &signal.samples {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v)?;
            }
        }
        PcmFormat::Float32 => {
            for &s in &signal.samples {
                writer.write_sample(s as f32)?;
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
