//! Phase-vocoder time stretching and tempo matching.

use std::f32::consts::PI;

use rustfft::num_complex::Complex;

use crate::audio::{segment_len, AudioClip};
use crate::beat::{MAX_BPM, MIN_BPM};
use crate::dsp;
use crate::error::{Error, Result};

pub const MIN_RATE: f64 = 0.25;
pub const MAX_RATE: f64 = 4.0;

/// Allowed stretch rates when aligning clips to a baseline tempo.
pub const MATCH_RATE_MIN: f64 = 0.7;
pub const MATCH_RATE_MAX: f64 = 1.43;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StretchParams {
    /// `rate > 1` shortens the clip.
    pub rate: f64,
    pub n_fft: usize,
    pub hop: usize,
}

impl StretchParams {
    pub fn with_rate(rate: f64) -> Self {
        Self {
            rate,
            ..Default::default()
        }
    }
}

impl Default for StretchParams {
    fn default() -> Self {
        Self {
            rate: 1.0,
            n_fft: 2048,
            hop: 512,
        }
    }
}

fn wrap_phase(x: f32) -> f32 {
    x - 2.0 * PI * (x / (2.0 * PI)).round()
}

/// Changes duration by `1 / rate` without changing pitch.
///
/// Analysis frames are read at fractional positions `0, rate, 2 rate, ...`
/// with linearly interpolated magnitudes; phases are propagated from the
/// measured per-bin instantaneous frequency.
pub fn time_stretch(clip: &AudioClip, params: &StretchParams) -> Result<AudioClip> {
    if !(MIN_RATE..=MAX_RATE).contains(&params.rate) {
        return Err(Error::RateOutOfBounds(params.rate));
    }
    if clip.is_empty() {
        return Err(Error::EmptyClip);
    }
    let (n_fft, hop) = (params.n_fft, params.hop);
    let mut frames = dsp::stft_complex(&clip.samples, n_fft, hop)?;
    let n_frames = frames.len();
    let n_bins = n_fft / 2 + 1;
    frames.push(vec![Complex::new(0.0, 0.0); n_bins]);

    let expected_advance: Vec<f32> = (0..n_bins)
        .map(|k| 2.0 * PI * k as f32 * hop as f32 / n_fft as f32)
        .collect();
    let mut phase: Vec<f32> = frames[0].iter().map(|c| c.arg()).collect();

    let steps = (n_frames as f64 / params.rate).ceil() as usize;
    let mut out_frames = Vec::with_capacity(steps);
    for s in 0..steps {
        let pos = s as f64 * params.rate;
        if pos >= n_frames as f64 {
            break;
        }
        let i = pos.floor() as usize;
        let alpha = (pos - i as f64) as f32;
        let (cur, next) = (&frames[i], &frames[i + 1]);
        let mut frame = Vec::with_capacity(n_bins);
        for k in 0..n_bins {
            let mag = (1.0 - alpha) * cur[k].norm() + alpha * next[k].norm();
            frame.push(Complex::from_polar(mag, phase[k]));
            let dphase = wrap_phase(next[k].arg() - cur[k].arg() - expected_advance[k]);
            phase[k] += expected_advance[k] + dphase;
        }
        out_frames.push(frame);
    }

    let length = (clip.len() as f64 / params.rate).round() as usize;
    let samples = dsp::istft(&out_frames, n_fft, hop, length);
    Ok(AudioClip::new(samples, clip.sample_rate))
}

/// Stretches a clip from `source_bpm` to `target_bpm` and re-fixes it to the
/// canonical segment length.
pub fn match_tempo(clip: &AudioClip, source_bpm: f64, target_bpm: f64) -> Result<AudioClip> {
    match_tempo_to_len(clip, source_bpm, target_bpm, segment_len(clip.sample_rate))
}

/// Stretch rate that takes material at `source_bpm` to `target_bpm`.
/// Rates above 1 shorten the audio, so the rate is `target / source`: a
/// 100 BPM clip matched to 120 BPM plays 1.2 times faster.
pub fn match_rate(source_bpm: f64, target_bpm: f64) -> f64 {
    target_bpm / source_bpm
}

/// Whether a tempo pair can be matched without leaving the rate clamp.
pub fn can_match(source_bpm: f64, target_bpm: f64) -> bool {
    (MATCH_RATE_MIN..=MATCH_RATE_MAX).contains(&match_rate(source_bpm, target_bpm))
}

pub fn match_tempo_to_len(clip: &AudioClip, source_bpm: f64, target_bpm: f64, out_len: usize) -> Result<AudioClip> {
    for bpm in [source_bpm, target_bpm] {
        if !(MIN_BPM..=MAX_BPM).contains(&bpm) {
            return Err(Error::invalid(format!("bpm {bpm} outside [{MIN_BPM}, {MAX_BPM}]")));
        }
    }
    let rate = match_rate(source_bpm, target_bpm);
    if !(MATCH_RATE_MIN..=MATCH_RATE_MAX).contains(&rate) {
        return Err(Error::TempoGapTooLarge {
            rate,
            min: MATCH_RATE_MIN,
            max: MATCH_RATE_MAX,
        });
    }
    let stretched = if rate == 1.0 {
        clip.clone()
    } else {
        time_stretch(clip, &StretchParams::with_rate(rate))?
    };
    Ok(stretched.fit_to_len(out_len))
}
