//! Stand-in encoder that turns a clip into a four-layer [`LayerStack`] of
//! log-mel statistics, so the classifier can be trained without an external
//! model. Real encoder embeddings use the same LSTK file format.

use ndarray::{Array2, Axis};

use crate::audio::AudioClip;
use crate::dsp;
use crate::error::{Error, Result};
use crate::model::LayerStack;

pub const PSEUDO_LAYERS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureParams {
    pub n_fft: usize,
    pub hop: usize,
    /// Embedding dimension D.
    pub n_mels: usize,
    pub log_gain: f64,
    /// Each layer is standardized across bands, then multiplied by this.
    pub scale: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            n_fft: 2048,
            hop: 512,
            n_mels: 64,
            log_gain: 100.0,
            scale: 8.0,
        }
    }
}

/// Layers, each of width `n_mels`, computed on `ln(1 + gain * mel)`:
/// 0. per-band mean over time
/// 1. per-band standard deviation over time
/// 2. per-band mean of the positive frame-to-frame change
/// 3. per-band maximum over time
///
/// Every layer is then standardized across bands and scaled, so the stack
/// describes spectral shape and not level. A constant layer (e.g. silence)
/// becomes all zeros.
pub fn pseudo_encode(clip: &AudioClip, params: &FeatureParams) -> Result<LayerStack> {
    if !(params.log_gain > 0.0 && params.scale > 0.0) {
        return Err(Error::invalid("log_gain and scale must be positive"));
    }
    let spec = dsp::stft(clip, params.n_fft, params.hop)?;
    let mel = dsp::mel_spectrogram(&spec, params.n_mels, 0.0, clip.sample_rate as f64 / 2.0)?;
    let logmel = mel.mapv(|v| (params.log_gain * v.max(0.0) as f64).ln_1p());
    let (bands, frames) = logmel.dim();

    let mut layers = Array2::<f64>::zeros((PSEUDO_LAYERS, bands));
    layers.row_mut(0).assign(&logmel.mean_axis(Axis(1)).expect("at least one frame"));
    layers.row_mut(1).assign(&logmel.std_axis(Axis(1), 0.0));
    for (b, row) in logmel.rows().into_iter().enumerate() {
        if frames > 1 {
            let rise: f64 = row.windows(2).into_iter().map(|w| (w[1] - w[0]).max(0.0)).sum();
            layers[[2, b]] = rise / (frames - 1) as f64;
        }
        layers[[3, b]] = row.fold(0.0f64, |m, &v| m.max(v));
    }
    for mut row in layers.rows_mut() {
        let mean = row.mean().unwrap_or(0.0);
        let std = row.std(0.0);
        if std > 1e-12 {
            row.mapv_inplace(|v| params.scale * (v - mean) / std);
        } else {
            row.fill(0.0);
        }
    }
    LayerStack::new(layers)
}
