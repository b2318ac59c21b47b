//! Global tempo estimation and dynamic-programming beat selection.
//!
//! Tempo comes from the autocorrelation of the onset envelope, weighted by a
//! log-normal prior over BPM. Beats are then chosen to maximize onset
//! strength at the beats plus a log-squared penalty on deviations of each
//! inter-beat interval from the ideal period.

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp::{self, DspParams, OnsetEnvelope};
use crate::error::{Error, Result};

/// Envelopes shorter than this are refused by [`estimate_tempo`].
pub const MIN_TEMPO_SECONDS: f64 = 2.0;
pub const DEFAULT_TIGHTNESS: f64 = 100.0;
pub const MIN_BPM: f64 = 30.0;
pub const MAX_BPM: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempoPrior {
    pub center_bpm: f64,
    /// Standard deviation in log2-BPM units.
    pub spread: f64,
    pub min_bpm: f64,
    pub max_bpm: f64,
}

impl Default for TempoPrior {
    fn default() -> Self {
        Self {
            center_bpm: 120.0,
            spread: 1.0,
            min_bpm: MIN_BPM,
            max_bpm: MAX_BPM,
        }
    }
}

impl TempoPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_bpm > 0.0 && self.min_bpm < self.center_bpm && self.center_bpm < self.max_bpm) {
            return Err(Error::invalid(format!(
                "tempo prior needs 0 < min < center < max, got {} / {} / {}",
                self.min_bpm, self.center_bpm, self.max_bpm
            )));
        }
        if !(self.spread > 0.0) {
            return Err(Error::invalid("tempo prior spread must be positive"));
        }
        Ok(())
    }

    pub fn weight(&self, bpm: f64) -> f64 {
        let z = (bpm / self.center_bpm).log2() / self.spread;
        (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeatAnalysis {
    pub bpm: f64,
    pub beat_frames: Vec<usize>,
    pub beat_times: Vec<f64>,
    /// Value of the DP objective for the returned beats.
    pub score: f64,
}

fn autocorrelation(values: &[f64], lag: usize) -> f64 {
    values
        .iter()
        .zip(values.iter().skip(lag))
        .map(|(a, b)| a * b)
        .sum()
}

/// Estimates the global tempo of an onset envelope in BPM.
pub fn estimate_tempo(env: &OnsetEnvelope, prior: &TempoPrior) -> Result<f64> {
    prior.validate()?;
    let seconds = env.duration_seconds();
    if seconds < MIN_TEMPO_SECONDS {
        return Err(Error::EnvelopeTooShort {
            seconds,
            required: MIN_TEMPO_SECONDS,
        });
    }
    let values: Vec<f64> = env.values.iter().map(|&v| v as f64).collect();
    if values.iter().all(|&v| v <= 0.0) {
        return Err(Error::NoPeriodicity);
    }

    let fr = env.frame_rate;
    let n = values.len();
    let lag_min = ((60.0 * fr / prior.max_bpm).ceil() as usize).max(1);
    let lag_max = ((60.0 * fr / prior.min_bpm).floor() as usize).min(n - 1);
    if lag_min > lag_max {
        return Err(Error::NoPeriodicity);
    }

    let score = |lag: usize| -> f64 {
        if lag == 0 || lag >= n {
            return 0.0;
        }
        autocorrelation(&values, lag) * prior.weight(60.0 * fr / lag as f64)
    };
    let center_distance = |lag: usize| (60.0 * fr / lag as f64 / prior.center_bpm).log2().abs();

    let mut best = lag_min;
    let mut best_score = score(lag_min);
    for lag in lag_min + 1..=lag_max {
        let s = score(lag);
        if s > best_score || (s == best_score && center_distance(lag) < center_distance(best)) {
            best = lag;
            best_score = s;
        }
    }
    if !(best_score > 0.0) {
        return Err(Error::NoPeriodicity);
    }

    let (left, right) = (score(best - 1), score(best + 1));
    let denom = left - 2.0 * best_score + right;
    let offset = if denom < 0.0 {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let bpm = 60.0 * fr / (best as f64 + offset);
    Ok(bpm.clamp(prior.min_bpm, prior.max_bpm))
}

/// Allowed inter-beat gaps in frames, `[ceil(period/2), floor(2 period)]`.
pub fn gap_bounds(period_frames: f64) -> (usize, usize) {
    let min_gap = ((period_frames / 2.0 - 1e-9).ceil() as usize).max(1);
    let max_gap = ((2.0 * period_frames + 1e-9).floor() as usize).max(min_gap);
    (min_gap, max_gap)
}

pub fn transition_penalty(gap: usize, period_frames: f64, tightness: f64) -> f64 {
    let r = (gap as f64 / period_frames).ln();
    -tightness * r * r
}

/// Objective value of a beat sequence, or `None` when the sequence violates
/// the gap bounds or does not cover the envelope (first beat before
/// `min_gap`, last beat within `min_gap` of the end).
pub fn beat_objective(env: &[f32], beats: &[usize], period_frames: f64, tightness: f64) -> Option<f64> {
    let n = env.len();
    let (min_gap, max_gap) = gap_bounds(period_frames);
    let (&first, &last) = (beats.first()?, beats.last()?);
    if first >= min_gap || last + min_gap < n || last >= n {
        return None;
    }
    let mut total = 0.0;
    for w in beats.windows(2) {
        let gap = w[1].checked_sub(w[0])?;
        if gap < min_gap || gap > max_gap {
            return None;
        }
        total += transition_penalty(gap, period_frames, tightness);
    }
    Some(total + beats.iter().map(|&b| env[b] as f64).sum::<f64>())
}

/// Selects beats by dynamic programming over frames.
///
/// Every frame `t` holds the best objective of a beat chain ending at `t`;
/// frames before the minimum gap start a chain, later frames must extend one.
/// The returned chain ends in the last `min_gap` frames.
pub fn track_beats(env: &OnsetEnvelope, bpm: f64, tightness: f64) -> Result<BeatAnalysis> {
    if !(MIN_BPM..=MAX_BPM).contains(&bpm) {
        return Err(Error::invalid(format!("bpm {bpm} outside [{MIN_BPM}, {MAX_BPM}]")));
    }
    if !(tightness > 0.0) {
        return Err(Error::invalid("tightness must be positive"));
    }
    let n = env.len();
    if n == 0 {
        return Ok(BeatAnalysis {
            bpm,
            beat_frames: Vec::new(),
            beat_times: Vec::new(),
            score: 0.0,
        });
    }
    let period = 60.0 * env.frame_rate / bpm;
    if period < 1.0 {
        return Err(Error::invalid("beat period shorter than one frame"));
    }
    let (min_gap, max_gap) = gap_bounds(period);
    let penalties: Vec<f64> = (0..=max_gap)
        .map(|g| transition_penalty(g.max(1), period, tightness))
        .collect();

    let mut cumulative = vec![0.0f64; n];
    let mut backlink: Vec<Option<usize>> = vec![None; n];
    for t in 0..n {
        let local = env.values[t] as f64;
        if t < min_gap {
            cumulative[t] = local;
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for gap in min_gap..=max_gap.min(t) {
            let cand = cumulative[t - gap] + penalties[gap];
            if best.is_none_or(|(b, _)| cand > b) {
                best = Some((cand, t - gap));
            }
        }
        let (prev_score, prev) = best.expect("t >= min_gap has a predecessor");
        cumulative[t] = local + prev_score;
        backlink[t] = Some(prev);
    }

    let tail_start = n.saturating_sub(min_gap);
    let mut end = tail_start;
    for t in tail_start..n {
        if cumulative[t] > cumulative[end] {
            end = t;
        }
    }
    let mut beat_frames = vec![end];
    let mut cursor = end;
    while let Some(prev) = backlink[cursor] {
        beat_frames.push(prev);
        cursor = prev;
    }
    beat_frames.reverse();

    let beat_times = beat_frames
        .iter()
        .map(|&f| f as f64 / env.frame_rate)
        .collect();
    Ok(BeatAnalysis {
        bpm,
        beat_frames,
        beat_times,
        score: cumulative[end],
    })
}

/// Onset envelope, tempo and beats for one clip.
pub fn beat_track(clip: &AudioClip, params: &DspParams, prior: &TempoPrior, tightness: f64) -> Result<BeatAnalysis> {
    let env = dsp::onset_envelope_from_clip(clip, params)?;
    let bpm = estimate_tempo(&env, prior)?;
    track_beats(&env, bpm, tightness)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env_from(values: Vec<f32>) -> OnsetEnvelope {
        OnsetEnvelope {
            values,
            frame_rate: 22_050.0 / 512.0,
        }
    }

    #[test]
    fn prior_validation() {
        assert!(TempoPrior::default().validate().is_ok());
        let bad = TempoPrior {
            center_bpm: 400.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!((TempoPrior::default().weight(120.0) - 1.0).abs() < 1e-12);
        assert!((TempoPrior::default().weight(60.0) - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn flat_envelope_has_no_periodicity() {
        let env = env_from(vec![0.0; 300]);
        assert!(matches!(estimate_tempo(&env, &TempoPrior::default()), Err(Error::NoPeriodicity)));
    }

    #[test]
    fn short_envelope_is_refused() {
        let env = env_from(vec![1.0; 50]);
        assert!(matches!(
            estimate_tempo(&env, &TempoPrior::default()),
            Err(Error::EnvelopeTooShort { .. })
        ));
    }

    #[test]
    fn impulse_envelope_tempo() {
        // impulses every 20 frames at 43.07 fps -> 129.2 BPM
        let mut v = vec![0.0f32; 430];
        for i in (5..430).step_by(20) {
            v[i] = 1.0;
        }
        let bpm = estimate_tempo(&env_from(v), &TempoPrior::default()).unwrap();
        let expected = 60.0 * 22_050.0 / 512.0 / 20.0;
        assert!((bpm - expected).abs() < 1.0, "{bpm} vs {expected}");
    }

    #[test]
    fn zero_envelope_gives_regular_beats() {
        let env = env_from(vec![0.0; 400]);
        let res = track_beats(&env, 120.0, 100.0).unwrap();
        let period = 60.0 * env.frame_rate / 120.0;
        for w in res.beat_frames.windows(2) {
            let gap = (w[1] - w[0]) as f64;
            assert!((gap - period).abs() <= 1.0, "gap {gap} vs {period}");
        }
        assert!(res.beat_frames.len() >= 17);
    }

    #[test]
    fn bounds_are_enforced() {
        let env = env_from(vec![0.0; 100]);
        assert!(track_beats(&env, 20.0, 100.0).is_err());
        assert!(track_beats(&env, 120.0, 0.0).is_err());
    }

    #[test]
    fn objective_rejects_infeasible_sequences() {
        let env = vec![0.0f32; 30];
        // period 4 -> gaps [2, 8]
        assert!(beat_objective(&env, &[0, 4, 8, 12, 16, 20, 24, 28], 4.0, 1.0).is_some());
        assert!(beat_objective(&env, &[2, 6], 4.0, 1.0).is_none());
        assert!(beat_objective(&env, &[0, 1, 5], 4.0, 1.0).is_none());
        assert!(beat_objective(&env, &[], 4.0, 1.0).is_none());
    }
}
