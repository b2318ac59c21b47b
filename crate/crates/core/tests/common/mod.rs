//! Synthetic audio and corpora shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::Arc;

use dastmix::synth::MemoryClips;
use dastmix::{AudioClip, ClipRecord, CorpusIndex, Dastgah, InstrumentClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SR: u32 = 22_050;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tone(freq: f64, seconds: f64, sr: u32, amp: f64) -> AudioClip {
    let n = (seconds * sr as f64).round() as usize;
    AudioClip::new(
        (0..n)
            .map(|i| (amp * (2.0 * PI * freq * i as f64 / sr as f64).sin()) as f32)
            .collect(),
        sr,
    )
}

/// Decaying noise bursts every beat, plus white noise at `snr_db` below the
/// click signal power. `phase` offsets the first click, in seconds.
pub fn click_track(bpm: f64, seconds: f64, sr: u32, snr_db: f64, phase: f64, seed: u64) -> AudioClip {
    let mut r = rng(seed);
    let n = (seconds * sr as f64).round() as usize;
    let mut x = vec![0.0f64; n];
    let period = 60.0 / bpm;
    let decay = (0.01 * sr as f64) as usize;
    let mut t = phase;
    while t < seconds {
        let start = (t * sr as f64).round() as usize;
        for k in 0..(4 * decay) {
            if start + k >= n {
                break;
            }
            x[start + k] += r.gen_range(-1.0..1.0) * (-(k as f64) / decay as f64).exp();
        }
        t += period;
    }
    let power = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let noise_amp = (power / 10f64.powf(snr_db / 10.0) * 3.0).sqrt();
    for v in x.iter_mut() {
        *v += noise_amp * r.gen_range(-1.0..1.0);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    AudioClip::new(x.iter().map(|v| (0.9 * v / peak) as f32).collect(), sr)
}

pub const MELODIC: [InstrumentClass; 8] = [
    InstrumentClass::Ney,
    InstrumentClass::Tar,
    InstrumentClass::Santur,
    InstrumentClass::Kaman,
    InstrumentClass::Piano,
    InstrumentClass::Violin,
    InstrumentClass::Sitar,
    InstrumentClass::Avaz,
];

pub const PERCUSSIVE: [InstrumentClass; 2] = [InstrumentClass::Daaf, InstrumentClass::Tonbak];

/// Two tempi in each of three 8-BPM bins.
pub const TEMPI: [[f64; 2]; 3] = [[89.0, 94.0], [105.0, 110.0], [121.0, 126.0]];

#[derive(Debug, Clone)]
pub struct CorpusSpec {
    /// Clips per (instrument, dastgah, bin) cell.
    pub per_cell: usize,
    pub seconds: f64,
    pub seed: u64,
    /// Octaves by which each step of dastgah moves an instrument's formant.
    /// At 0 every class owns a fixed band.
    pub coupling: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            per_cell: 1,
            seconds: 5.0,
            seed: 7,
            coupling: 0.0,
        }
    }
}

fn formant(inst: InstrumentClass) -> f64 {
    let k = MELODIC.iter().position(|&c| c == inst).expect("melodic");
    500.0 * 2f64.powf(k as f64 * 0.55)
}

fn dastgah_tonic(d: Dastgah) -> f64 {
    let k = Dastgah::ALL.iter().position(|&x| x == d).unwrap();
    110.0 * 2f64.powf(k as f64 / 7.0)
}

/// A melody on the dastgah's tonic region; harmonics weighted by a Gaussian
/// (in octaves) around the instrument formant. Notes start on every beat.
pub fn melodic_clip(inst: InstrumentClass, d: Dastgah, bpm: f64, spec: &CorpusSpec, seed: u64) -> AudioClip {
    let mut r = rng(seed);
    let n = (spec.seconds * SR as f64).round() as usize;
    let shift = Dastgah::ALL.iter().position(|&x| x == d).unwrap() as f64 - 3.0;
    let fc = formant(inst) * 2f64.powf(spec.coupling * shift);
    let tonic = dastgah_tonic(d);
    let beat = 60.0 / bpm;
    let mut x = vec![0.0f64; n];
    let mut t0 = 0.0;
    while t0 < spec.seconds {
        let step = [0, 2, 3, 5, 7, 8, 10][r.gen_range(0..7)] as f64;
        let f0 = tonic * 2f64.powf(step / 12.0 + r.gen_range(0..2) as f64);
        let start = (t0 * SR as f64) as usize;
        let end = (((t0 + beat) * SR as f64) as usize).min(n);
        let partials: Vec<(f64, f64)> = (1..=60)
            .map(|k| k as f64 * f0)
            .take_while(|&f| f < 0.45 * SR as f64)
            .map(|f| (f, (-0.5 * ((f / fc).log2() / 0.2).powi(2)).exp()))
            .filter(|&(_, a)| a > 1e-3)
            .collect();
        for i in start..end {
            let tt = (i - start) as f64 / SR as f64;
            let env = (1.0 - (-tt / 0.01).exp()) * (-tt / (0.8 * beat)).exp();
            let s: f64 = partials.iter().map(|&(f, a)| a * (2.0 * PI * f * tt).sin()).sum();
            x[i] += env * s;
        }
        t0 += beat;
    }
    normalize(x)
}

/// Resonant noise strikes on every beat, below the melodic bands: daaf
/// low and long, tonbak higher and short.
pub fn percussive_clip(inst: InstrumentClass, bpm: f64, spec: &CorpusSpec, seed: u64) -> AudioClip {
    let mut r = rng(seed);
    let n = (spec.seconds * SR as f64).round() as usize;
    let (freq, decay) = match inst {
        InstrumentClass::Daaf => (90.0, 0.08),
        _ => (250.0, 0.03),
    };
    let w = 2.0 * PI * freq / SR as f64;
    let radius: f64 = 0.995;
    let (a1, a2) = (2.0 * radius * w.cos(), -radius * radius);
    let mut x = vec![0.0f64; n];
    let beat = 60.0 / bpm;
    let mut t0 = 0.0;
    while t0 < spec.seconds {
        let start = (t0 * SR as f64) as usize;
        let (mut y1, mut y2) = (0.0, 0.0);
        for i in start..(start + (5.0 * decay * SR as f64) as usize).min(n) {
            let tt = (i - start) as f64 / SR as f64;
            let y = a1 * y1 + a2 * y2 + r.gen_range(-1.0..1.0);
            (y2, y1) = (y1, y);
            x[i] += y * (-tt / decay).exp();
        }
        t0 += beat;
    }
    normalize(x)
}

fn normalize(x: Vec<f64>) -> AudioClip {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    AudioClip::new(x.iter().map(|v| (0.9 * v / peak) as f32).collect(), SR)
}

/// Every instrument in every dastgah (percussion: none) at two tempi in each
/// of three BPM bins.
pub fn synthetic_corpus(spec: &CorpusSpec) -> (CorpusIndex, MemoryClips) {
    let mut records = Vec::new();
    let mut audio = BTreeMap::new();
    let mut counter = spec.seed.wrapping_mul(1_000_003);
    let mut push = |records: &mut Vec<ClipRecord>, id: String, inst, d, bpm: f64, clip: AudioClip| {
        records.push(ClipRecord {
            id: id.clone(),
            instrument: inst,
            dastgah: d,
            bpm: Some(bpm),
            path: PathBuf::from(format!("clips/{id}.wav")),
            duration_s: clip.duration_seconds(),
        });
        audio.insert(id, Arc::new(clip));
    };
    for (b, pair) in TEMPI.iter().enumerate() {
        for k in 0..spec.per_cell {
            let bpm = pair[k % 2];
            for inst in MELODIC {
                for d in Dastgah::ALL {
                    counter += 1;
                    let id = format!("{}_{}_{b}_{k}", inst.as_str(), d.as_str());
                    let clip = melodic_clip(inst, d, bpm, spec, counter);
                    push(&mut records, id, inst, Some(d), bpm, clip);
                }
            }
            for inst in PERCUSSIVE {
                for j in 0..2 {
                    counter += 1;
                    let id = format!("{}_{b}_{k}_{j}", inst.as_str());
                    let clip = percussive_clip(inst, pair[j], spec, counter);
                    push(&mut records, id, inst, None, pair[j], clip);
                }
            }
        }
    }
    let index = CorpusIndex::new(records, 8.0).expect("valid corpus");
    (index, MemoryClips(audio))
}

/// Writes the corpus audio and manifest under `dir`.
pub fn write_corpus(dir: &std::path::Path, index: &CorpusIndex, clips: &MemoryClips) {
    std::fs::create_dir_all(dir.join("clips")).unwrap();
    for r in index.records() {
        dastmix::audio::write_wav(&dir.join(&r.path), &clips.0[&r.id]).unwrap();
    }
    dastmix::corpus::write_manifest(&dir.join("manifest.jsonl"), index.records()).unwrap();
}
