//! Spectral front end: band-limited resampling, STFT, mel projection and the
//! onset strength envelope consumed by the beat tracker.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Zero crossings of the resampling kernel on each side of the center, at
/// the lower of the two rates.
const RESAMPLE_TAPS_PER_SIDE: usize = 32;
const RESAMPLE_ROLLOFF: f64 = 0.945;
const RESAMPLE_KAISER_BETA: f64 = 8.6;

/// Front-end parameters shared by onset analysis and feature extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct DspParams {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_gain: f64,
    pub local_mean_seconds: f64,
}

impl Default for DspParams {
    fn default() -> Self {
        Self {
            n_fft: 2048,
            hop: 512,
            n_mels: 128,
            fmin: 0.0,
            fmax: None,
            log_gain: 1.0,
            local_mean_seconds: 0.37,
        }
    }
}

/// Magnitude spectrogram, `[n_bins x n_frames]`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub magnitudes: Array2<f32>,
    pub n_fft: usize,
    pub hop_length: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.magnitudes.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnsetEnvelope {
    pub values: Vec<f32>,
    /// Frames per second (`sample_rate / hop_length`).
    pub frame_rate: f64,
}

impl OnsetEnvelope {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.values.len() as f64 / self.frame_rate
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Windowed-sinc resampling with a Kaiser window.
///
/// Output length is `round(len * target_sr / sr)`. Same-rate input is
/// returned unchanged.
pub fn resample(clip: &AudioClip, target_sr: u32) -> Result<AudioClip> {
    if target_sr == 0 {
        return Err(Error::invalid("target sample rate must be positive"));
    }
    if clip.sample_rate == target_sr {
        return Ok(clip.clone());
    }
    let ratio = target_sr as f64 / clip.sample_rate as f64;
    let out_len = (clip.len() as f64 * ratio).round() as usize;
    let cutoff = RESAMPLE_ROLLOFF * ratio.min(1.0);
    let half_width = RESAMPLE_TAPS_PER_SIDE as f64 / cutoff;
    let i0_beta = bessel_i0(RESAMPLE_KAISER_BETA);
    let x = &clip.samples;
    let n_in = x.len() as i64;

    let samples = (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = ((t - half_width).ceil() as i64).max(0);
            let hi = ((t + half_width).floor() as i64).min(n_in - 1);
            let mut acc = 0.0f64;
            for k in lo..=hi {
                let d = t - k as f64;
                let r = d / half_width;
                let win = bessel_i0(RESAMPLE_KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                acc += x[k as usize] as f64 * cutoff * sinc(cutoff * d) * win;
            }
            acc as f32
        })
        .collect();
    Ok(AudioClip::new(samples, target_sr))
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()) as f32)
        .collect()
}

fn reflect_index(i: i64, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as i64 - 1);
    let m = i.rem_euclid(period);
    if m < len as i64 {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn check_stft_params(n_fft: usize, hop: usize) -> Result<()> {
    if n_fft < 256 || !n_fft.is_power_of_two() {
        return Err(Error::invalid(format!(
            "n_fft must be a power of two >= 256, got {n_fft}"
        )));
    }
    if hop == 0 || hop > n_fft {
        return Err(Error::invalid(format!("hop must be in (0, n_fft], got {hop}")));
    }
    Ok(())
}

/// Complex STFT with a periodic Hann window and reflect center padding.
/// Returns one vector of `n_fft/2 + 1` bins per frame.
pub fn stft_complex(samples: &[f32], n_fft: usize, hop: usize) -> Result<Vec<Vec<Complex<f32>>>> {
    check_stft_params(n_fft, hop)?;
    if samples.is_empty() {
        return Err(Error::EmptyClip);
    }
    let n_frames = 1 + samples.len() / hop;
    let n_bins = n_fft / 2 + 1;
    let pad = (n_fft / 2) as i64;
    let window = hann_window(n_fft);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0f32, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0f32, 0.0); fft.get_inplace_scratch_len()];

    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let start = (f * hop) as i64 - pad;
        for (j, slot) in buf.iter_mut().enumerate() {
            let s = samples[reflect_index(start + j as i64, samples.len())];
            *slot = Complex::new(s * window[j], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        frames.push(buf[..n_bins].to_vec());
    }
    Ok(frames)
}

/// Magnitude spectrogram with `1 + floor(len / hop)` frames.
pub fn stft(clip: &AudioClip, n_fft: usize, hop: usize) -> Result<Spectrogram> {
    let frames = stft_complex(&clip.samples, n_fft, hop)?;
    let n_bins = n_fft / 2 + 1;
    let mut magnitudes = Array2::<f32>::zeros((n_bins, frames.len()));
    for (t, frame) in frames.iter().enumerate() {
        for (k, c) in frame.iter().enumerate() {
            magnitudes[[k, t]] = c.norm();
        }
    }
    Ok(Spectrogram {
        magnitudes,
        n_fft,
        hop_length: hop,
        sample_rate: clip.sample_rate,
    })
}

/// Inverse of [`stft_complex`] by weighted overlap-add with a Hann synthesis
/// window, normalized by the summed squared window. The center padding is
/// removed and the result trimmed or zero-padded to `length`.
pub fn istft(frames: &[Vec<Complex<f32>>], n_fft: usize, hop: usize, length: usize) -> Vec<f32> {
    let window = hann_window(n_fft);
    let ifft = FftPlanner::<f32>::new().plan_fft_inverse(n_fft);
    let total = n_fft + hop * frames.len().saturating_sub(1);
    let mut out = vec![0.0f32; total];
    let mut wsum = vec![0.0f32; total];
    let mut buf = vec![Complex::new(0.0f32, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0f32, 0.0); ifft.get_inplace_scratch_len()];
    let scale = 1.0 / n_fft as f32;

    for (f, frame) in frames.iter().enumerate() {
        for k in 0..n_fft {
            buf[k] = if k <= n_fft / 2 {
                frame[k]
            } else {
                frame[n_fft - k].conj()
            };
        }
        // Imaginary parts at DC and Nyquist are not representable in a real
        // signal.
        buf[0].im = 0.0;
        buf[n_fft / 2].im = 0.0;
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let offset = f * hop;
        for j in 0..n_fft {
            out[offset + j] += buf[j].re * scale * window[j];
            wsum[offset + j] += window[j] * window[j];
        }
    }
    let tiny = f32::MIN_POSITIVE.sqrt();
    for (o, w) in out.iter_mut().zip(&wsum) {
        if *w > tiny {
            *o /= *w;
        }
    }
    let pad = n_fft / 2;
    let mut result: Vec<f32> = out.into_iter().skip(pad).take(length).collect();
    result.resize(length, 0.0);
    result
}

pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// Triangular mel filterbank `[n_mels x (n_fft/2 + 1)]` on the Slaney mel
/// scale, each triangle scaled to unit area (`2 / bandwidth_hz`).
pub fn mel_filterbank(
    sample_rate: u32,
    n_fft: usize,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Result<Array2<f32>> {
    let nyquist = sample_rate as f64 / 2.0;
    if n_mels == 0 {
        return Err(Error::invalid("n_mels must be >= 1"));
    }
    if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist + 1e-9) {
        return Err(Error::invalid(format!(
            "need 0 <= fmin < fmax <= {nyquist}, got fmin={fmin} fmax={fmax}"
        )));
    }
    let n_bins = n_fft / 2 + 1;
    let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut weights = Array2::<f32>::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let enorm = 2.0 / (right - left);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let lower = (f - left) / (center - left);
            let upper = (right - f) / (right - center);
            let w = lower.min(upper).max(0.0);
            weights[[m, k]] = (w * enorm) as f32;
        }
    }
    Ok(weights)
}

/// Projects a magnitude spectrogram onto `n_mels` mel bands.
pub fn mel_spectrogram(spec: &Spectrogram, n_mels: usize, fmin: f64, fmax: f64) -> Result<Array2<f32>> {
    let fb = mel_filterbank(spec.sample_rate, spec.n_fft, n_mels, fmin, fmax)?;
    Ok(fb.dot(&spec.magnitudes))
}

/// Onset strength: band-averaged positive change of the (optionally
/// log-compressed) mel spectrogram, then local-mean subtracted and clipped
/// at zero.
pub fn onset_envelope(mel: &Array2<f32>, frame_rate: f64, params: &DspParams, log_compress: bool) -> OnsetEnvelope {
    let (n_mels, n_frames) = mel.dim();
    let compressed = if log_compress {
        mel.mapv(|v| (params.log_gain * v.max(0.0) as f64).ln_1p() as f32)
    } else {
        mel.mapv(|v| v.max(0.0))
    };

    let mut raw = vec![0.0f64; n_frames];
    if n_mels > 0 {
        for t in 1..n_frames {
            let mut acc = 0.0f64;
            for b in 0..n_mels {
                acc += (compressed[[b, t]] - compressed[[b, t - 1]]).max(0.0) as f64;
            }
            raw[t] = acc / n_mels as f64;
        }
    }

    let half = ((params.local_mean_seconds * frame_rate).round() as usize) / 2;
    let mut prefix = vec![0.0f64; n_frames + 1];
    for (i, v) in raw.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let values = (0..n_frames)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(n_frames);
            let mean = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            (raw[t] - mean).max(0.0) as f32
        })
        .collect();
    OnsetEnvelope { values, frame_rate }
}

/// Full chain clip -> STFT -> mel -> onset envelope.
pub fn onset_envelope_from_clip(clip: &AudioClip, params: &DspParams) -> Result<OnsetEnvelope> {
    let spec = stft(clip, params.n_fft, params.hop)?;
    let fmax = params.fmax.unwrap_or(clip.sample_rate as f64 / 2.0);
    let mel = mel_spectrogram(&spec, params.n_mels, params.fmin, fmax)?;
    let frame_rate = clip.sample_rate as f64 / params.hop as f64;
    Ok(onset_envelope(&mel, frame_rate, params, true))
}
