//! Mono PCM clip type and WAV input/output.
//!
//! Everything downstream works on [`AudioClip`]: mono `f32` samples at a known
//! rate. Multichannel files are downmixed by channel mean on read.

use std::fs;
use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::dsp;
use crate::error::{Error, Result};

/// Internal working rate for every ingested clip.
pub const CANONICAL_SAMPLE_RATE: u32 = 22_050;

/// Length of one corpus clip and of every synthesized mixture.
pub const SEGMENT_SECONDS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let energy: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (energy / self.samples.len() as f64).sqrt()
    }

    /// Trims or zero-pads to exactly `len` samples.
    pub fn fit_to_len(mut self, len: usize) -> Self {
        self.samples.resize(len, 0.0);
        self
    }
}

/// Number of samples in one canonical segment at `sample_rate`.
pub fn segment_len(sample_rate: u32) -> usize {
    (SEGMENT_SECONDS * sample_rate as f64).round() as usize
}

/// Reads a WAV file (16/24/32-bit PCM or float32, any channel count) and
/// downmixes it to mono at the file's own rate.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;

    let interleaved: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
    };

    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Reads a WAV file, downmixes, and resamples to `target_sr`.
pub fn load_resampled(path: &Path, target_sr: u32) -> Result<AudioClip> {
    let clip = read_wav(path)?;
    dsp::resample(&clip, target_sr)
}

/// Writes a mono float32 WAV file, creating parent directories as needed.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &clip.samples {
        writer.write_sample(s).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Writes a 16-bit PCM WAV with `channels` identical channels. Used for
/// fixtures that exercise the downmix and integer decode paths.
pub fn write_wav_pcm16(path: &Path, clip: &AudioClip, channels: u16) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let spec = WavSpec {
        channels,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        for _ in 0..channels {
            writer.write_sample(v).map_err(wav_err)?;
        }
    }
    writer.finalize().map_err(wav_err)
}
