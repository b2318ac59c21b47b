//! Polyphonic mixture synthesis.
//!
//! Each sample draws an instrument combination from one of five ensemble
//! priors, picks one clip per instrument under the strategy's constraints
//! (shared dastgah, shared BPM bin, both, or none), tempo-aligns the clips to
//! a baseline when the strategy constrains tempo, and mixes them.
//!
//! Every sample owns a random stream derived only from the master seed and
//! its index (see [`child_seed`]), so output is identical regardless of
//! worker count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{self, segment_len, AudioClip, CANONICAL_SAMPLE_RATE};
use crate::corpus::{self, ClipRecord, CorpusIndex, Dastgah, InstrumentClass, DEFAULT_BPM_BIN_WIDTH, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::stretch;

pub const MIX_PEAK: f32 = 0.9;
pub const DEFAULT_MAX_ATTEMPTS: usize = 20;
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "bpm")]
    BpmOnly,
    #[serde(rename = "dastgah")]
    DastgahOnly,
    #[serde(rename = "dastgah-bpm")]
    DastgahBpm,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Random,
        Strategy::BpmOnly,
        Strategy::DastgahOnly,
        Strategy::DastgahBpm,
    ];

    pub fn uses_dastgah(self) -> bool {
        matches!(self, Strategy::DastgahOnly | Strategy::DastgahBpm)
    }

    pub fn uses_bpm(self) -> bool {
        matches!(self, Strategy::BpmOnly | Strategy::DastgahBpm)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::BpmOnly => "bpm",
            Strategy::DastgahOnly => "dastgah",
            Strategy::DastgahBpm => "dastgah-bpm",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}` (random|bpm|dastgah|dastgah-bpm)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsemblePrior {
    Small,
    Medium,
    Orchestral,
    Vocal,
    #[serde(rename = "random")]
    RandomCombo,
}

impl EnsemblePrior {
    pub const ALL: [EnsemblePrior; 5] = [
        EnsemblePrior::Small,
        EnsemblePrior::Medium,
        EnsemblePrior::Orchestral,
        EnsemblePrior::Vocal,
        EnsemblePrior::RandomCombo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnsemblePrior::Small => "small",
            EnsemblePrior::Medium => "medium",
            EnsemblePrior::Orchestral => "orchestral",
            EnsemblePrior::Vocal => "vocal",
            EnsemblePrior::RandomCombo => "random",
        }
    }
}

impl fmt::Display for EnsemblePrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Size distribution of one ensemble prior. Melodic instruments are drawn
/// from the seven pitched non-vocal classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleShape {
    pub melodic_min: usize,
    pub melodic_max: usize,
    pub percussion_prob: f64,
    pub percussion_min: usize,
    pub percussion_max: usize,
}

impl EnsembleShape {
    const fn new(melodic: (usize, usize), percussion_prob: f64, percussion: (usize, usize)) -> Self {
        Self {
            melodic_min: melodic.0,
            melodic_max: melodic.1,
            percussion_prob,
            percussion_min: percussion.0,
            percussion_max: percussion.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorTable {
    pub small: EnsembleShape,
    pub medium: EnsembleShape,
    pub orchestral: EnsembleShape,
    /// Melodic instruments added next to the voice.
    pub vocal: EnsembleShape,
    pub random_min: usize,
    pub random_max: usize,
}

impl Default for PriorTable {
    fn default() -> Self {
        Self {
            small: EnsembleShape::new((2, 2), 0.5, (1, 1)),
            medium: EnsembleShape::new((3, 4), 0.7, (1, 1)),
            orchestral: EnsembleShape::new((5, 7), 1.0, (1, 2)),
            vocal: EnsembleShape::new((2, 4), 0.5, (1, 1)),
            random_min: 2,
            random_max: 6,
        }
    }
}

impl PriorTable {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("small", &self.small),
            ("medium", &self.medium),
            ("orchestral", &self.orchestral),
            ("vocal", &self.vocal),
        ] {
            let melodic_floor = if name == "vocal" { 1 } else { 2 };
            if s.melodic_min < melodic_floor || s.melodic_min > s.melodic_max || s.melodic_max > MELODIC.len() {
                return Err(Error::invalid(format!("{name} prior: bad melodic range")));
            }
            if s.percussion_min > s.percussion_max || s.percussion_max > PERCUSSION.len() || !(0.0..=1.0).contains(&s.percussion_prob) {
                return Err(Error::invalid(format!("{name} prior: bad percussion settings")));
            }
        }
        if self.random_min < 2 || self.random_min > self.random_max || self.random_max > NUM_CLASSES {
            return Err(Error::invalid("random prior: size range must lie in 2..=10"));
        }
        Ok(())
    }

    fn shape(&self, prior: EnsemblePrior) -> Option<&EnsembleShape> {
        match prior {
            EnsemblePrior::Small => Some(&self.small),
            EnsemblePrior::Medium => Some(&self.medium),
            EnsemblePrior::Orchestral => Some(&self.orchestral),
            EnsemblePrior::Vocal => Some(&self.vocal),
            EnsemblePrior::RandomCombo => None,
        }
    }
}

const MELODIC: [InstrumentClass; 7] = [
    InstrumentClass::Ney,
    InstrumentClass::Tar,
    InstrumentClass::Santur,
    InstrumentClass::Kaman,
    InstrumentClass::Piano,
    InstrumentClass::Violin,
    InstrumentClass::Sitar,
];
const PERCUSSION: [InstrumentClass; 2] = [InstrumentClass::Daaf, InstrumentClass::Tonbak];

fn pick_subset<R: Rng + ?Sized>(pool: &[InstrumentClass], k: usize, rng: &mut R) -> Vec<InstrumentClass> {
    index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

/// Draws an instrument combination (no repeats), sorted in label order.
pub fn sample_ensemble<R: Rng + ?Sized>(prior: EnsemblePrior, table: &PriorTable, rng: &mut R) -> Vec<InstrumentClass> {
    let mut combo = match table.shape(prior) {
        None => {
            let size = rng.gen_range(table.random_min..=table.random_max);
            pick_subset(&InstrumentClass::ALL, size, rng)
        }
        Some(shape) => {
            let melodic = rng.gen_range(shape.melodic_min..=shape.melodic_max);
            let mut combo = pick_subset(&MELODIC, melodic, rng);
            if prior == EnsemblePrior::Vocal {
                combo.push(InstrumentClass::Avaz);
            }
            if shape.percussion_max > 0 && rng.gen_bool(shape.percussion_prob) {
                let n = rng.gen_range(shape.percussion_min.max(1)..=shape.percussion_max);
                combo.extend(pick_subset(&PERCUSSION, n, rng));
            }
            combo
        }
    };
    combo.sort();
    combo
}

/// Outcome of clip selection for one combination.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// One clip per instrument, in combination order.
    pub clips: Vec<ClipRecord>,
    pub dastgah: Option<Dastgah>,
    pub baseline_bpm: Option<f64>,
}

/// Precomputed candidate pools over a corpus index.
#[derive(Debug)]
pub struct Selector<'a> {
    index: &'a CorpusIndex,
    by_inst: BTreeMap<InstrumentClass, Vec<usize>>,
    by_inst_dastgah: BTreeMap<(InstrumentClass, Dastgah), Vec<usize>>,
    by_inst_bin: BTreeMap<(InstrumentClass, i64), Vec<usize>>,
    by_inst_dastgah_bin: BTreeMap<(InstrumentClass, Dastgah, i64), Vec<usize>>,
    bins: BTreeSet<i64>,
}

impl<'a> Selector<'a> {
    pub fn new(index: &'a CorpusIndex) -> Self {
        let mut s = Selector {
            index,
            by_inst: BTreeMap::new(),
            by_inst_dastgah: BTreeMap::new(),
            by_inst_bin: BTreeMap::new(),
            by_inst_dastgah_bin: BTreeMap::new(),
            bins: BTreeSet::new(),
        };
        for (i, r) in index.records().iter().enumerate() {
            s.by_inst.entry(r.instrument).or_default().push(i);
            if let Some(d) = r.dastgah {
                s.by_inst_dastgah.entry((r.instrument, d)).or_default().push(i);
            }
            if let Some(bpm) = r.bpm {
                let bin = index.bin_of(bpm);
                s.bins.insert(bin);
                s.by_inst_bin.entry((r.instrument, bin)).or_default().push(i);
                if let Some(d) = r.dastgah {
                    s.by_inst_dastgah_bin.entry((r.instrument, d, bin)).or_default().push(i);
                }
            }
        }
        s
    }

    /// Candidate record indices for one instrument under the given
    /// constraints. Percussion ignores the dastgah constraint.
    fn pool(&self, inst: InstrumentClass, dastgah: Option<Dastgah>, bin: Option<i64>) -> &[usize] {
        let d = if inst.is_percussive() { None } else { dastgah };
        let pool = match (d, bin) {
            (None, None) => self.by_inst.get(&inst),
            (Some(d), None) => self.by_inst_dastgah.get(&(inst, d)),
            (None, Some(b)) => self.by_inst_bin.get(&(inst, b)),
            (Some(d), Some(b)) => self.by_inst_dastgah_bin.get(&(inst, d, b)),
        };
        pool.map(Vec::as_slice).unwrap_or(&[])
    }

    fn covers(&self, combo: &[InstrumentClass], dastgah: Option<Dastgah>, bin: Option<i64>) -> bool {
        combo.iter().all(|&i| !self.pool(i, dastgah, bin).is_empty())
    }

    fn combo_name(combo: &[InstrumentClass]) -> String {
        combo.iter().map(|c| c.as_str()).collect::<Vec<_>>().join("+")
    }

    pub fn select<R: Rng + ?Sized>(&self, combo: &[InstrumentClass], strategy: Strategy, rng: &mut R) -> Result<Selection> {
        if self.index.is_empty() {
            return Err(Error::invalid("corpus index is empty"));
        }
        let (dastgah, bin) = match strategy {
            Strategy::Random => (None, None),
            Strategy::DastgahOnly => {
                let feasible: Vec<Dastgah> = Dastgah::ALL
                    .into_iter()
                    .filter(|&d| self.covers(combo, Some(d), None))
                    .collect();
                if feasible.is_empty() {
                    return Err(Error::Retry(format!("no dastgah covers {}", Self::combo_name(combo))));
                }
                (Some(feasible[rng.gen_range(0..feasible.len())]), None)
            }
            Strategy::BpmOnly => {
                let feasible: Vec<i64> = self
                    .bins
                    .iter()
                    .copied()
                    .filter(|&b| self.covers(combo, None, Some(b)))
                    .collect();
                if feasible.is_empty() {
                    return Err(Error::Retry(format!("no bpm bin covers {}", Self::combo_name(combo))));
                }
                (None, Some(feasible[rng.gen_range(0..feasible.len())]))
            }
            Strategy::DastgahBpm => {
                let feasible: Vec<(Dastgah, Vec<i64>)> = Dastgah::ALL
                    .into_iter()
                    .map(|d| {
                        let bins = self
                            .bins
                            .iter()
                            .copied()
                            .filter(|&b| self.covers(combo, Some(d), Some(b)))
                            .collect::<Vec<_>>();
                        (d, bins)
                    })
                    .filter(|(_, bins)| !bins.is_empty())
                    .collect();
                if feasible.is_empty() {
                    return Err(Error::Retry(format!(
                        "no (dastgah, bpm bin) covers {}",
                        Self::combo_name(combo)
                    )));
                }
                let (d, bins) = &feasible[rng.gen_range(0..feasible.len())];
                (Some(*d), Some(bins[rng.gen_range(0..bins.len())]))
            }
        };

        let mut clips = Vec::with_capacity(combo.len());
        for &inst in combo {
            let pool = self.pool(inst, dastgah, bin);
            if pool.is_empty() {
                return Err(Error::Retry(format!("no clips for {inst}")));
            }
            clips.push(self.index.records()[pool[rng.gen_range(0..pool.len())]].clone());
        }

        let baseline_bpm = if strategy.uses_bpm() {
            let bpms: Vec<f64> = clips.iter().filter_map(|c| c.bpm).collect();
            Some(lower_median(bpms))
        } else {
            None
        };
        Ok(Selection {
            clips,
            dastgah,
            baseline_bpm,
        })
    }
}

/// Median; for an even count, the lower middle value, so the baseline is
/// always one of the selected clips' tempi.
pub fn lower_median(mut values: Vec<f64>) -> f64 {
    assert!(!values.is_empty(), "median of empty set");
    values.sort_by(|a, b| a.total_cmp(b));
    values[(values.len() - 1) / 2]
}

pub fn select_clips<R: Rng + ?Sized>(index: &CorpusIndex, combo: &[InstrumentClass], strategy: Strategy, rng: &mut R) -> Result<Selection> {
    Selector::new(index).select(combo, strategy, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainPolicy {
    pub min: f64,
    pub max: f64,
    pub peak: f32,
}

impl Default for GainPolicy {
    fn default() -> Self {
        Self {
            min: 0.6,
            max: 1.0,
            peak: MIX_PEAK,
        }
    }
}

fn check_mixable(clips: &[&AudioClip]) -> Result<()> {
    if clips.len() < 2 {
        return Err(Error::invalid("mixing needs at least two clips"));
    }
    let (len, sr) = (clips[0].len(), clips[0].sample_rate);
    if clips.iter().any(|c| c.len() != len || c.sample_rate != sr) {
        return Err(Error::ShapeMismatch("clips differ in length or sample rate".into()));
    }
    Ok(())
}

fn peak_normalize(samples: &mut [f64], peak: f64) {
    let max = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if max > 0.0 {
        let scale = peak / max;
        samples.iter_mut().for_each(|s| *s *= scale);
    }
}

/// Peak-normalizes each stem, applies the given gains, sums, and
/// peak-normalizes the sum.
pub fn mix_with_gains(clips: &[&AudioClip], gains: &[f64], peak: f32) -> Result<AudioClip> {
    check_mixable(clips)?;
    if gains.len() != clips.len() {
        return Err(Error::ShapeMismatch("one gain per clip required".into()));
    }
    let len = clips[0].len();
    let mut sum = vec![0.0f64; len];
    let mut stem = vec![0.0f64; len];
    for (clip, &g) in clips.iter().zip(gains) {
        for (d, &s) in stem.iter_mut().zip(&clip.samples) {
            *d = s as f64;
        }
        peak_normalize(&mut stem, peak as f64);
        for (acc, s) in sum.iter_mut().zip(&stem) {
            *acc += g * s;
        }
    }
    peak_normalize(&mut sum, peak as f64);
    let samples = sum.into_iter().map(|s| (s as f32).clamp(-peak, peak)).collect();
    Ok(AudioClip::new(samples, clips[0].sample_rate))
}

pub fn mix<R: Rng + ?Sized>(clips: &[&AudioClip], policy: &GainPolicy, rng: &mut R) -> Result<AudioClip> {
    check_mixable(clips)?;
    let gains: Vec<f64> = clips.iter().map(|_| rng.gen_range(policy.min..=policy.max)).collect();
    mix_with_gains(clips, &gains, policy.peak)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub total_samples: usize,
    pub strategy: Strategy,
    pub bpm_bin_width: f64,
    pub master_seed: u64,
    pub gain: GainPolicy,
    pub priors: PriorTable,
    pub max_attempts: usize,
    /// Tempo-match percussion stems too.
    pub stretch_percussion: bool,
    pub sample_rate: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            total_samples: 50_000,
            strategy: Strategy::DastgahBpm,
            bpm_bin_width: DEFAULT_BPM_BIN_WIDTH,
            master_seed: 0,
            gain: GainPolicy::default(),
            priors: PriorTable::default(),
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            stretch_percussion: true,
            sample_rate: CANONICAL_SAMPLE_RATE,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_samples == 0 || !self.total_samples.is_multiple_of(EnsemblePrior::ALL.len()) {
            return Err(Error::invalid(format!(
                "total_samples must be a positive multiple of 5, got {}",
                self.total_samples
            )));
        }
        if !(self.bpm_bin_width > 0.0) {
            return Err(Error::invalid("bpm_bin_width must be positive"));
        }
        if !(0.0 < self.gain.min && self.gain.min <= self.gain.max && self.gain.peak > 0.0 && self.gain.peak <= 1.0) {
            return Err(Error::invalid("bad gain policy"));
        }
        if self.max_attempts == 0 {
            return Err(Error::invalid("max_attempts must be positive"));
        }
        self.priors.validate()
    }

    pub fn prior_for(&self, sample_index: usize) -> EnsemblePrior {
        let per = self.total_samples / EnsemblePrior::ALL.len();
        EnsemblePrior::ALL[(sample_index / per).min(EnsemblePrior::ALL.len() - 1)]
    }
}

/// SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample seed: `splitmix64(master ^ splitmix64(index))`.
pub fn child_seed(master_seed: u64, sample_index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(sample_index))
}

/// ChaCha8 stream keyed by four successive SplitMix64 outputs of `seed`
/// (little-endian), i.e. `splitmix64(seed + k * GOLDEN)` for k = 0..4.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(state).to_le_bytes());
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    }
    ChaCha8Rng::from_seed(key)
}

/// Audio provider for the synthesizer.
pub trait ClipSource: Sync {
    fn load(&self, record: &ClipRecord) -> Result<Arc<AudioClip>>;
}

/// Loads clips from disk on first use and keeps them for the run.
pub struct DiskClips<'a> {
    index: &'a CorpusIndex,
    sample_rate: u32,
    cache: Vec<OnceLock<Arc<AudioClip>>>,
    positions: BTreeMap<String, usize>,
}

impl<'a> DiskClips<'a> {
    pub fn new(index: &'a CorpusIndex, sample_rate: u32) -> Self {
        Self {
            index,
            sample_rate,
            cache: (0..index.len()).map(|_| OnceLock::new()).collect(),
            positions: index.records().iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect(),
        }
    }
}

impl ClipSource for DiskClips<'_> {
    fn load(&self, record: &ClipRecord) -> Result<Arc<AudioClip>> {
        let pos = *self
            .positions
            .get(&record.id)
            .ok_or_else(|| Error::invalid(format!("clip `{}` not in index", record.id)))?;
        if let Some(c) = self.cache[pos].get() {
            return Ok(Arc::clone(c));
        }
        let clip = Arc::new(audio::load_resampled(&self.index.resolve(record), self.sample_rate)?);
        Ok(Arc::clone(self.cache[pos].get_or_init(|| clip)))
    }
}

/// In-memory clips keyed by record id.
#[derive(Default)]
pub struct MemoryClips(pub BTreeMap<String, Arc<AudioClip>>);

impl ClipSource for MemoryClips {
    fn load(&self, record: &ClipRecord) -> Result<Arc<AudioClip>> {
        self.0
            .get(&record.id)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no audio for clip `{}`", record.id)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    pub audio: AudioClip,
    pub labels: [u8; NUM_CLASSES],
    pub dastgah: Option<Dastgah>,
    pub baseline_bpm: Option<f64>,
    pub strategy: Strategy,
    pub prior: EnsemblePrior,
    pub source_ids: Vec<String>,
    pub seed: u64,
}

impl MixtureSample {
    pub fn label_names(&self) -> Vec<InstrumentClass> {
        labels_to_classes(&self.labels)
    }
}

pub fn labels_to_classes(labels: &[u8; NUM_CLASSES]) -> Vec<InstrumentClass> {
    InstrumentClass::ALL.into_iter().filter(|c| labels[c.index()] == 1).collect()
}

pub fn multi_hot(classes: &[InstrumentClass]) -> [u8; NUM_CLASSES] {
    let mut v = [0u8; NUM_CLASSES];
    for c in classes {
        v[c.index()] = 1;
    }
    v
}

/// Output manifest line for one mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub id: String,
    pub path: PathBuf,
    pub labels: Vec<InstrumentClass>,
    pub strategy: Strategy,
    pub prior: EnsemblePrior,
    pub dastgah: Option<Dastgah>,
    pub baseline_bpm: Option<f64>,
    pub source_ids: Vec<String>,
    pub seed: u64,
}

pub fn sample_id(index: usize) -> String {
    format!("mix_{index:06}")
}

/// Builds sample `sample_index` of a run. Constraint failures are retried
/// with a fresh combination up to `max_attempts` times.
pub fn generate_sample(
    selector: &Selector<'_>,
    config: &SynthConfig,
    source: &dyn ClipSource,
    sample_index: usize,
) -> Result<MixtureSample> {
    let seed = child_seed(config.master_seed, sample_index as u64);
    let mut rng = seeded_rng(seed);
    let prior = config.prior_for(sample_index);

    let mut last_reason = String::new();
    let mut chosen = None;
    for _ in 0..config.max_attempts {
        let combo = sample_ensemble(prior, &config.priors, &mut rng);
        match selector.select(&combo, config.strategy, &mut rng) {
            Ok(sel) => {
                if let Some(base) = sel.baseline_bpm {
                    let out_of_clamp = sel
                        .clips
                        .iter()
                        .any(|c| !stretch::can_match(c.bpm.unwrap_or(base), base));
                    if out_of_clamp {
                        last_reason = "tempo gap too large within selected bin".into();
                        continue;
                    }
                }
                chosen = Some(sel);
                break;
            }
            Err(Error::Retry(reason)) => last_reason = reason,
            Err(e) => return Err(e),
        }
    }
    let sel = chosen.ok_or_else(|| Error::Retry(format!("{prior}/{}: {last_reason}", config.strategy)))?;

    let len = segment_len(config.sample_rate);
    let mut stems = Vec::with_capacity(sel.clips.len());
    for rec in &sel.clips {
        let clip = source.load(rec)?;
        if clip.sample_rate != config.sample_rate {
            return Err(Error::ShapeMismatch(format!(
                "clip `{}` at {} Hz, expected {}",
                rec.id, clip.sample_rate, config.sample_rate
            )));
        }
        let stem = match (sel.baseline_bpm, rec.bpm) {
            (Some(base), Some(bpm)) if config.stretch_percussion || !rec.instrument.is_percussive() => {
                stretch::match_tempo_to_len(&clip, bpm, base, len)?
            }
            _ => (*clip).clone().fit_to_len(len),
        };
        stems.push(stem);
    }
    let refs: Vec<&AudioClip> = stems.iter().collect();
    let audio = mix(&refs, &config.gain, &mut rng)?;

    let classes: Vec<InstrumentClass> = sel.clips.iter().map(|c| c.instrument).collect();
    Ok(MixtureSample {
        audio,
        labels: multi_hot(&classes),
        dastgah: sel.dastgah,
        baseline_bpm: sel.baseline_bpm,
        strategy: config.strategy,
        prior,
        source_ids: sel.clips.iter().map(|c| c.id.clone()).collect(),
        seed,
    })
}

/// Generates a range of samples in memory, in index order.
pub fn generate_range(
    index: &CorpusIndex,
    config: &SynthConfig,
    source: &dyn ClipSource,
    range: std::ops::Range<usize>,
) -> Result<Vec<MixtureSample>> {
    config.validate()?;
    let selector = Selector::new(index);
    let results: Vec<Result<MixtureSample>> = range
        .into_par_iter()
        .map(|i| generate_sample(&selector, config, source, i))
        .collect();
    collect_or_report(results)
}

fn collect_or_report(results: Vec<Result<MixtureSample>>) -> Result<Vec<MixtureSample>> {
    let mut infeasible = BTreeSet::new();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(s) => out.push(s),
            Err(Error::Retry(cell)) => {
                infeasible.insert(cell);
            }
            Err(e) => return Err(e),
        }
    }
    if infeasible.is_empty() {
        Ok(out)
    } else {
        Err(Error::Infeasible(infeasible.into_iter().collect()))
    }
}

/// Writes `config.total_samples` mixtures under `out_dir`:
/// `audio/<id>.wav`, `manifest.jsonl` (index order) and `run.json`.
///
/// Work proceeds in chunks; the first chunk with an exhausted retry budget
/// aborts the run with the infeasible `(prior/strategy: reason)` cells.
pub fn synthesize_dataset(
    index: &CorpusIndex,
    config: &SynthConfig,
    source: &dyn ClipSource,
    out_dir: &Path,
) -> Result<Vec<MixtureRecord>> {
    config.validate()?;
    if (index.bin_width() - config.bpm_bin_width).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "index bin width {} differs from config {}",
            index.bin_width(),
            config.bpm_bin_width
        )));
    }
    let missing: Vec<&str> = InstrumentClass::ALL
        .iter()
        .filter(|&&c| index.by_instrument(c).next().is_none())
        .map(|c| c.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!("index lacks instrument classes: {}", missing.join(", "))));
    }

    fs::create_dir_all(out_dir.join("audio")).map_err(|e| Error::io(out_dir, e))?;
    let run_path = out_dir.join("run.json");
    fs::write(&run_path, serde_json::to_string_pretty(config)? + "\n").map_err(|e| Error::io(&run_path, e))?;

    let selector = Selector::new(index);
    let mut records = Vec::with_capacity(config.total_samples);
    let mut start = 0;
    while start < config.total_samples {
        let end = (start + CHUNK).min(config.total_samples);
        let results: Vec<Result<MixtureSample>> = (start..end)
            .into_par_iter()
            .map(|i| generate_sample(&selector, config, source, i))
            .collect();
        let samples = collect_or_report(results)?;
        for (offset, sample) in samples.into_iter().enumerate() {
            let id = sample_id(start + offset);
            let rel = PathBuf::from("audio").join(format!("{id}.wav"));
            audio::write_wav(&out_dir.join(&rel), &sample.audio)?;
            records.push(MixtureRecord {
                id,
                path: rel,
                labels: sample.label_names(),
                strategy: sample.strategy,
                prior: sample.prior,
                dastgah: sample.dastgah,
                baseline_bpm: sample.baseline_bpm,
                source_ids: sample.source_ids,
                seed: sample.seed,
            });
        }
        log::info!("synthesized {end}/{} samples", config.total_samples);
        start = end;
    }
    corpus::write_jsonl(&out_dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}

pub fn read_mixture_manifest(path: &Path) -> Result<Vec<MixtureRecord>> {
    corpus::read_jsonl(path)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    LabelSoundness,
    DastgahConsistency,
    BpmBin,
    Clipping,
    Length,
    Partition,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub id: String,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub audio_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub bin_width: f64,
    pub peak: f32,
    pub sample_rate: u32,
    /// Directory that record paths are relative to; `None` skips the audio
    /// checks.
    pub audio_root: Option<PathBuf>,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            bin_width: DEFAULT_BPM_BIN_WIDTH,
            peak: MIX_PEAK,
            sample_rate: CANONICAL_SAMPLE_RATE,
            audio_root: None,
        }
    }
}

/// Re-checks every mixture invariant from the output manifest and the corpus
/// it was drawn from.
pub fn validate(records: &[MixtureRecord], index: &CorpusIndex, opts: &ValidateOptions) -> Result<ValidationReport> {
    let results: Vec<(bool, Vec<Violation>)> = records
        .par_iter()
        .map(|rec| validate_record(rec, index, opts))
        .collect::<Result<_>>()?;
    let audio_checked = results.iter().filter(|(checked, _)| *checked).count();
    let mut violations: Vec<Violation> = results.into_iter().flat_map(|(_, v)| v).collect();

    let mut per_prior: BTreeMap<EnsemblePrior, usize> = EnsemblePrior::ALL.iter().map(|&p| (p, 0)).collect();
    for r in records {
        *per_prior.entry(r.prior).or_default() += 1;
    }
    let counts: BTreeSet<usize> = per_prior.values().copied().collect();
    if !records.is_empty() && counts.len() > 1 {
        violations.push(Violation {
            id: "*".into(),
            kind: ViolationKind::Partition,
            detail: format!("unequal prior partitions: {per_prior:?}"),
        });
    }
    Ok(ValidationReport {
        samples: records.len(),
        audio_checked,
        violations,
    })
}

fn validate_record(rec: &MixtureRecord, index: &CorpusIndex, opts: &ValidateOptions) -> Result<(bool, Vec<Violation>)> {
    let mut out = Vec::new();
    let mut flag = |kind, detail: String| {
        out.push(Violation {
            id: rec.id.clone(),
            kind,
            detail,
        })
    };

    let sources: Vec<&ClipRecord> = rec.source_ids.iter().filter_map(|id| index.get(id)).collect();
    if sources.len() != rec.source_ids.len() {
        flag(ViolationKind::LabelSoundness, "source id not found in corpus".into());
    }
    let decoded: BTreeSet<InstrumentClass> = sources.iter().map(|c| c.instrument).collect();
    let declared: BTreeSet<InstrumentClass> = rec.labels.iter().copied().collect();
    if declared.len() != rec.labels.len() || decoded != declared {
        flag(
            ViolationKind::LabelSoundness,
            format!("labels {declared:?} vs sources {decoded:?}"),
        );
    }
    if declared.len() < 2 {
        flag(ViolationKind::LabelSoundness, "fewer than two instruments".into());
    }

    if rec.strategy.uses_dastgah() {
        match rec.dastgah {
            None => flag(ViolationKind::DastgahConsistency, "dastgah missing".into()),
            Some(d) => {
                for c in sources.iter().filter(|c| !c.instrument.is_percussive()) {
                    if c.dastgah != Some(d) {
                        flag(
                            ViolationKind::DastgahConsistency,
                            format!("source `{}` in {:?}, sample in {d}", c.id, c.dastgah),
                        );
                    }
                }
            }
        }
    }

    if rec.strategy.uses_bpm() {
        let bpms: Vec<Option<f64>> = sources.iter().map(|c| c.bpm).collect();
        if bpms.iter().any(Option::is_none) {
            flag(ViolationKind::BpmBin, "source without bpm".into());
        } else {
            let bins: BTreeSet<i64> = bpms.iter().flatten().map(|&b| corpus::bpm_bin(b, opts.bin_width)).collect();
            if bins.len() != 1 {
                flag(ViolationKind::BpmBin, format!("sources span bins {bins:?}"));
            }
            let median = lower_median(bpms.into_iter().flatten().collect());
            if rec.baseline_bpm != Some(median) {
                flag(
                    ViolationKind::BpmBin,
                    format!("baseline {:?} is not the median {median}", rec.baseline_bpm),
                );
            }
        }
    }

    let Some(root) = &opts.audio_root else {
        return Ok((false, out));
    };
    let clip = audio::read_wav(&root.join(&rec.path))?;
    let peak = clip.samples.iter().fold(0.0f32, |m, s| if s.is_finite() { m.max(s.abs()) } else { f32::INFINITY });
    if peak > opts.peak {
        flag(ViolationKind::Clipping, format!("peak {peak} > {}", opts.peak));
    }
    let expected = segment_len(opts.sample_rate);
    if clip.len() != expected || clip.sample_rate != opts.sample_rate {
        flag(
            ViolationKind::Length,
            format!("{} samples at {} Hz, expected {expected} at {}", clip.len(), clip.sample_rate, opts.sample_rate),
        );
    }
    Ok((true, out))
}
