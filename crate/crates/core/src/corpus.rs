//! Monophonic source corpus: instrument/dastgah vocabulary, the JSON Lines
//! manifest, silence trimming, fixed-length segmentation and the
//! `(instrument, dastgah, bpm_bin)` lookup index.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{self, AudioClip, SEGMENT_SECONDS};
use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 10;
pub const DEFAULT_BPM_BIN_WIDTH: f64 = 8.0;
pub const DEFAULT_SILENCE_DB: f64 = -40.0;
pub const DEFAULT_SILENCE_WINDOW_MS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstrumentClass {
    Ney,
    Tar,
    Santur,
    Kaman,
    Daaf,
    Tonbak,
    Piano,
    Violin,
    Sitar,
    Avaz,
}

impl InstrumentClass {
    /// Label-vector order.
    pub const ALL: [InstrumentClass; NUM_CLASSES] = [
        InstrumentClass::Ney,
        InstrumentClass::Tar,
        InstrumentClass::Santur,
        InstrumentClass::Kaman,
        InstrumentClass::Daaf,
        InstrumentClass::Tonbak,
        InstrumentClass::Piano,
        InstrumentClass::Violin,
        InstrumentClass::Sitar,
        InstrumentClass::Avaz,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Percussive classes carry no dastgah.
    pub fn is_percussive(self) -> bool {
        matches!(self, InstrumentClass::Daaf | InstrumentClass::Tonbak)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InstrumentClass::Ney => "ney",
            InstrumentClass::Tar => "tar",
            InstrumentClass::Santur => "santur",
            InstrumentClass::Kaman => "kaman",
            InstrumentClass::Daaf => "daaf",
            InstrumentClass::Tonbak => "tonbak",
            InstrumentClass::Piano => "piano",
            InstrumentClass::Violin => "violin",
            InstrumentClass::Sitar => "sitar",
            InstrumentClass::Avaz => "avaz",
        }
    }
}

impl fmt::Display for InstrumentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InstrumentClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown instrument `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dastgah {
    #[serde(rename = "chahargah")]
    Chahargah,
    #[serde(rename = "homayoon")]
    Homayoon,
    #[serde(rename = "mahur")]
    Mahur,
    #[serde(rename = "nava")]
    Nava,
    #[serde(rename = "rast-panjgah")]
    RastPanjgah,
    #[serde(rename = "segah")]
    Segah,
    #[serde(rename = "shur")]
    Shur,
}

impl Dastgah {
    pub const ALL: [Dastgah; 7] = [
        Dastgah::Chahargah,
        Dastgah::Homayoon,
        Dastgah::Mahur,
        Dastgah::Nava,
        Dastgah::RastPanjgah,
        Dastgah::Segah,
        Dastgah::Shur,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dastgah::Chahargah => "chahargah",
            Dastgah::Homayoon => "homayoon",
            Dastgah::Mahur => "mahur",
            Dastgah::Nava => "nava",
            Dastgah::RastPanjgah => "rast-panjgah",
            Dastgah::Segah => "segah",
            Dastgah::Shur => "shur",
        }
    }
}

impl fmt::Display for Dastgah {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dastgah {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown dastgah `{s}`")))
    }
}

/// One line of the corpus manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub instrument: InstrumentClass,
    pub dastgah: Option<Dastgah>,
    pub bpm: Option<f64>,
    pub path: PathBuf,
    pub duration_s: f64,
}

impl ClipRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty clip id".into());
        }
        match (self.instrument.is_percussive(), self.dastgah) {
            (false, None) => return Err("melodic clip missing dastgah".into()),
            (true, Some(d)) => return Err(format!("percussive clip `{}` has dastgah {d}", self.instrument)),
            _ => {}
        }
        if let Some(bpm) = self.bpm {
            if !(30.0..=300.0).contains(&bpm) {
                return Err(format!("bpm {bpm} outside [30, 300]"));
            }
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(format!("invalid duration_s {}", self.duration_s));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    instrument: String,
    dastgah: Option<String>,
    bpm: Option<f64>,
    path: PathBuf,
    duration_s: f64,
}

impl RawRecord {
    fn into_record(self) -> std::result::Result<ClipRecord, String> {
        let instrument = self.instrument.parse().map_err(|e: Error| e.to_string())?;
        let dastgah = self
            .dastgah
            .map(|d| d.parse::<Dastgah>())
            .transpose()
            .map_err(|e| e.to_string())?;
        let record = ClipRecord {
            id: self.id,
            instrument,
            dastgah,
            bpm: self.bpm,
            path: self.path,
            duration_s: self.duration_s,
        };
        record.validate()?;
        Ok(record)
    }
}

/// Key used to look clips up by instrument, mode and tempo bucket.
pub type IndexKey = (InstrumentClass, Option<Dastgah>, Option<i64>);

/// Immutable, id-sorted set of clip records.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    records: Vec<ClipRecord>,
    by_key: BTreeMap<IndexKey, Vec<usize>>,
    by_id: BTreeMap<String, usize>,
    bin_width: f64,
    base_dir: PathBuf,
}

impl CorpusIndex {
    pub fn new(mut records: Vec<ClipRecord>, bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0) {
            return Err(Error::invalid("bpm bin width must be positive"));
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let mut by_id = BTreeMap::new();
        let mut by_key: BTreeMap<IndexKey, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            let key = (r.instrument, r.dastgah, r.bpm.map(|b| bpm_bin(b, bin_width)));
            by_key.entry(key).or_default().push(i);
        }
        Ok(Self {
            records,
            by_key,
            by_id,
            bin_width,
            base_dir: PathBuf::new(),
        })
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn records(&self) -> &[ClipRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn get(&self, id: &str) -> Option<&ClipRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn bin_of(&self, bpm: f64) -> i64 {
        bpm_bin(bpm, self.bin_width)
    }

    pub fn lookup(&self, instrument: InstrumentClass, dastgah: Option<Dastgah>, bin: Option<i64>) -> impl Iterator<Item = &ClipRecord> {
        self.by_key
            .get(&(instrument, dastgah, bin))
            .into_iter()
            .flatten()
            .map(move |&i| &self.records[i])
    }

    /// All keys with at least one record, in sorted order.
    pub fn keys(&self) -> impl Iterator<Item = &IndexKey> {
        self.by_key.keys()
    }

    pub fn by_instrument(&self, instrument: InstrumentClass) -> impl Iterator<Item = &ClipRecord> {
        self.records.iter().filter(move |r| r.instrument == instrument)
    }

    /// Absolute (or base-relative) location of a record's audio.
    pub fn resolve(&self, record: &ClipRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.base_dir.join(&record.path)
        }
    }

    /// Clip count per instrument class, in label order.
    pub fn summary(&self) -> BTreeMap<InstrumentClass, usize> {
        let mut counts: BTreeMap<InstrumentClass, usize> = InstrumentClass::ALL.iter().map(|&c| (c, 0)).collect();
        for r in &self.records {
            *counts.entry(r.instrument).or_default() += 1;
        }
        counts
    }

    /// Clip count per `(instrument, dastgah)` cell.
    pub fn cell_counts(&self) -> BTreeMap<(InstrumentClass, Option<Dastgah>), usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry((r.instrument, r.dastgah)).or_default() += 1;
        }
        counts
    }
}

pub fn bpm_bin(bpm: f64, bin_width: f64) -> i64 {
    (bpm / bin_width).floor() as i64
}

/// Parses manifest text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_manifest(text: &str) -> Result<Vec<ClipRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        let record = raw.into_record().map_err(|message| Error::Manifest { line: i + 1, message })?;
        records.push(record);
    }
    Ok(records)
}

pub fn load_manifest(path: &Path) -> Result<CorpusIndex> {
    load_manifest_with_bins(path, DEFAULT_BPM_BIN_WIDTH)
}

pub fn load_manifest_with_bins(path: &Path, bin_width: f64) -> Result<CorpusIndex> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_manifest(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(CorpusIndex::new(records, bin_width)?.with_base_dir(base))
}

/// Writes records as JSON Lines, LF-terminated.
pub fn write_manifest<'a>(path: &Path, records: impl IntoIterator<Item = &'a ClipRecord>) -> Result<()> {
    write_jsonl(path, records)
}

pub(crate) fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Keeps the analysis windows whose RMS level is at or above `threshold_db`
/// dBFS, concatenated in order. A trailing partial window is dropped.
pub fn trim_silence(clip: &AudioClip, threshold_db: f64, window_ms: f64) -> Result<AudioClip> {
    if !(threshold_db < 0.0) {
        return Err(Error::invalid("silence threshold must be below 0 dBFS"));
    }
    if !(window_ms > 0.0) {
        return Err(Error::invalid("silence window must be positive"));
    }
    let window = ((window_ms * clip.sample_rate as f64 / 1000.0).round() as usize).max(1);
    let threshold = 10f64.powf(threshold_db / 20.0);
    let mut kept = Vec::with_capacity(clip.len());
    for chunk in clip.samples.chunks_exact(window) {
        let energy: f64 = chunk.iter().map(|&s| (s as f64) * (s as f64)).sum();
        let rms = (energy / window as f64).sqrt();
        if rms >= threshold {
            kept.extend_from_slice(chunk);
        }
    }
    Ok(AudioClip::new(kept, clip.sample_rate))
}

/// Splits into `floor(duration / seg_seconds)` contiguous segments; the
/// remainder is discarded.
pub fn segment(clip: &AudioClip, seg_seconds: f64) -> Result<Vec<AudioClip>> {
    if !(seg_seconds > 0.0) {
        return Err(Error::invalid("segment length must be positive"));
    }
    let seg_len = (seg_seconds * clip.sample_rate as f64).round() as usize;
    if seg_len == 0 {
        return Err(Error::invalid("segment shorter than one sample"));
    }
    Ok(clip
        .samples
        .chunks_exact(seg_len)
        .map(|c| AudioClip::new(c.to_vec(), clip.sample_rate))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub sample_rate: u32,
    pub silence_db: f64,
    pub silence_window_ms: f64,
    pub seg_seconds: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            sample_rate: audio::CANONICAL_SAMPLE_RATE,
            silence_db: DEFAULT_SILENCE_DB,
            silence_window_ms: DEFAULT_SILENCE_WINDOW_MS,
            seg_seconds: SEGMENT_SECONDS,
        }
    }
}

/// Turns source recordings into a normalized clip corpus.
///
/// Each source is downmixed, resampled, clamped to [-1, 1], trimmed, and cut
/// into segments written as `clips/<id>_<k>.wav` under `out_dir`. Segment
/// records inherit instrument, dastgah and bpm from their source. The
/// returned records are sorted by id and also written to
/// `out_dir/manifest.jsonl`.
pub fn ingest(sources: &CorpusIndex, out_dir: &Path, opts: &IngestOptions) -> Result<Vec<ClipRecord>> {
    let per_source: Vec<Result<Vec<ClipRecord>>> = sources
        .records()
        .par_iter()
        .map(|src| {
            let mut clip = audio::load_resampled(&sources.resolve(src), opts.sample_rate)?;
            for s in &mut clip.samples {
                *s = s.clamp(-1.0, 1.0);
            }
            let trimmed = trim_silence(&clip, opts.silence_db, opts.silence_window_ms)?;
            let mut out = Vec::new();
            for (k, seg) in segment(&trimmed, opts.seg_seconds)?.into_iter().enumerate() {
                let id = format!("{}_{k:03}", src.id);
                let rel = PathBuf::from("clips").join(format!("{id}.wav"));
                audio::write_wav(&out_dir.join(&rel), &seg)?;
                out.push(ClipRecord {
                    id,
                    instrument: src.instrument,
                    dastgah: src.dastgah,
                    bpm: src.bpm,
                    path: rel,
                    duration_s: seg.duration_seconds(),
                });
            }
            Ok(out)
        })
        .collect();

    let mut records = Vec::new();
    for r in per_source {
        records.extend(r?);
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    // rejects id collisions between generated segment ids
    CorpusIndex::new(records.clone(), DEFAULT_BPM_BIN_WIDTH)?;
    write_manifest(&out_dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}
