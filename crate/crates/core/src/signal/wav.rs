//! 16-bit PCM mono WAV I/O.
//!
//! Reads map `i16` to `[-1, 1)` by dividing by 32768. Writes clip to the same
//! range and log a warning when clipping happened.
//!
//! Every successful read is recorded in a process-wide trace while tracing is
//! enabled, so callers can audit which files a code path touched.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use super::{SignalError, Waveform};

#[derive(Debug, Error)]
pub enum WavError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: expected mono 16-bit PCM, found {channels} channel(s), {bits} bits, {format:?}")]
    Format {
        path: PathBuf,
        channels: u16,
        bits: u16,
        format: hound::SampleFormat,
    },
    #[error("{path}: sample rate {found} Hz does not match configured {expected} Hz")]
    SampleRate {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: {source}")]
    Signal {
        path: PathBuf,
        #[source]
        source: SignalError,
    },
}

static READ_TRACE: Mutex<Option<Vec<PathBuf>>> = Mutex::new(None);

/// Start recording every path passed to [`read_wav`].
pub fn start_read_trace() {
    *READ_TRACE.lock().unwrap() = Some(Vec::new());
}

/// Stop recording and return the recorded paths.
pub fn take_read_trace() -> Vec<PathBuf> {
    READ_TRACE.lock().unwrap().take().unwrap_or_default()
}

pub fn read_wav(path: &Path, expected_rate_hz: u32) -> Result<Waveform, WavError> {
    let io = |source| WavError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(io)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(WavError::Format {
            path: path.to_path_buf(),
            channels: spec.channels,
            bits: spec.bits_per_sample,
            format: spec.sample_format,
        });
    }
    if spec.sample_rate != expected_rate_hz {
        return Err(WavError::SampleRate {
            path: path.to_path_buf(),
            expected: expected_rate_hz,
            found: spec.sample_rate,
        });
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?;
    if let Some(trace) = READ_TRACE.lock().unwrap().as_mut() {
        trace.push(path.to_path_buf());
    }
    Waveform::new(samples, spec.sample_rate).map_err(|source| WavError::Signal {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<(), WavError> {
    let io = |source| WavError::Io {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(io)?;
    let mut clipped = 0usize;
    for &v in w.samples() {
        let q = (v * 32768.0).round();
        if !(-32768.0..=32767.0).contains(&q) {
            clipped += 1;
        }
        writer
            .write_sample(q.clamp(-32768.0, 32767.0) as i16)
            .map_err(io)?;
    }
    writer.finalize().map_err(io)?;
    if clipped > 0 {
        log::warn!("{}: clipped {clipped} sample(s) to [-1, 1)", path.display());
    }
    Ok(())
}
