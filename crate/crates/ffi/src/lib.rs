//! C ABI over the dastmix library.
//!
//! Every fallible function returns a [`DmStatus`]; on failure the message is
//! available from [`dm_last_error_message`] on the same thread until the next
//! fallible `dm_` call. Handles are opaque and released with their `_free` function.
//! Buffers returned through out-pointers belong to the caller and go back
//! through [`dm_f32_free`], [`dm_f64_free`] or [`dm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dastmix::beat::{self, TempoPrior};
use dastmix::dsp::{self, DspParams};
use dastmix::features::{self, FeatureParams};
use dastmix::metrics::{self, EvalBatch};
use dastmix::model::{self, HeadModel, LayerStack};
use dastmix::stretch::{self, StretchParams};
use dastmix::synth::{self, DiskClips, Strategy, SynthConfig};
use dastmix::{corpus, AudioClip, CorpusIndex, Error};

/// Result of a `dm_` call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    InvalidArgument = 5,
    /// The signal carries no usable tempo (too short, silent, aperiodic).
    Signal = 6,
    /// Mixture constraints could not be met.
    Synthesis = 7,
    Shape = 8,
    Numeric = 9,
    Panic = 10,
}

/// A loaded clip corpus.
pub struct DmCorpus {
    index: CorpusIndex,
}

/// A trained classifier head.
pub struct DmModel {
    head: HeadModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(DmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => DmStatus::Io,
            Error::Wav { .. } | Error::Manifest { .. } | Error::Format { .. } | Error::Json(_) | Error::DuplicateId(_) => {
                DmStatus::Format
            }
            Error::InvalidParameter(_) | Error::RateOutOfBounds(_) | Error::TempoGapTooLarge { .. } => DmStatus::InvalidArgument,
            Error::EmptyClip | Error::NoPeriodicity | Error::EnvelopeTooShort { .. } => DmStatus::Signal,
            Error::Retry(_) | Error::Infeasible(_) => DmStatus::Synthesis,
            Error::ShapeMismatch(_) | Error::EmptyBatch | Error::NoEvaluableClass => DmStatus::Shape,
            Error::NonFinite(_) | Error::NanLoss { .. } => DmStatus::Numeric,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: DmStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            DmStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(DmStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DmStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn read_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn read_clip(samples: *const f32, len: usize, sample_rate: u32) -> Result<AudioClip, Failure> {
    if sample_rate == 0 {
        return Err(fail(DmStatus::InvalidArgument, "sample_rate must be positive"));
    }
    Ok(AudioClip::new(read_slice(samples, len, "samples")?.to_vec(), sample_rate))
}

unsafe fn put<T>(out: *mut T, value: T) {
    *out = value;
}

unsafe fn hand_over<T>(values: Vec<T>, out: *mut *mut T, out_len: *mut usize) {
    let boxed = values.into_boxed_slice();
    *out_len = boxed.len();
    *out = Box::into_raw(boxed) as *mut T;
}

unsafe fn take_back<T>(p: *mut T, len: usize) {
    if !p.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(p, len)));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call on this thread that returns a status.
#[no_mangle]
pub extern "C" fn dm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn dm_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// # Safety
/// `p` must come from this library with the same `len`, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn dm_f32_free(p: *mut f32, len: usize) {
    take_back(p, len);
}

/// # Safety
/// `p` must come from this library with the same `len`, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn dm_f64_free(p: *mut f64, len: usize) {
    take_back(p, len);
}

/// # Safety
/// `p` must be a string returned by this library, or NULL.
#[no_mangle]
pub unsafe extern "C" fn dm_string_free(p: *mut c_char) {
    if !p.is_null() {
        drop(CString::from_raw(p));
    }
}

/// Loads a corpus manifest, binning tempi at `bin_width` BPM.
///
/// # Safety
/// `manifest_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_corpus_open(manifest_path: *const c_char, bin_width: f64, out: *mut *mut DmCorpus) -> DmStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = read_str(manifest_path, "manifest_path")?;
        let index = corpus::load_manifest_with_bins(&PathBuf::from(path), bin_width)?;
        put(out, Box::into_raw(Box::new(DmCorpus { index })));
        Ok(())
    })
}

/// # Safety
/// `corpus` must come from [`dm_corpus_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dm_corpus_free(corpus: *mut DmCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of clips; 0 for NULL.
///
/// # Safety
/// `corpus` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dm_corpus_len(corpus: *const DmCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.index.len())
}

/// Clip counts per instrument as a JSON object string; free with
/// [`dm_string_free`].
///
/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_corpus_summary_json(corpus: *const DmCorpus, out: *mut *mut c_char) -> DmStatus {
    guard(|| {
        non_null(out, "out")?;
        let c = corpus.as_ref().ok_or_else(|| fail(DmStatus::NullPointer, "corpus is null"))?;
        let map: serde_json::Map<String, serde_json::Value> = c
            .index
            .summary()
            .into_iter()
            .map(|(k, n)| (k.as_str().to_string(), n.into()))
            .collect();
        let text = serde_json::Value::Object(map).to_string();
        put(out, CString::new(text).expect("json has no nul").into_raw());
        Ok(())
    })
}

/// Writes `total` mixtures (a multiple of 5) under `out_dir` using
/// `strategy` (`random`, `bpm`, `dastgah`, `dastgah-bpm`), with every other
/// setting at its default.
///
/// # Safety
/// Pointers must be valid; `out_written` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn dm_synthesize(
    corpus: *const DmCorpus,
    out_dir: *const c_char,
    strategy: *const c_char,
    total: usize,
    seed: u64,
    out_written: *mut usize,
) -> DmStatus {
    guard(|| {
        let c = corpus.as_ref().ok_or_else(|| fail(DmStatus::NullPointer, "corpus is null"))?;
        let dir = read_str(out_dir, "out_dir")?;
        let strategy: Strategy = read_str(strategy, "strategy")?.parse()?;
        let config = SynthConfig {
            total_samples: total,
            strategy,
            master_seed: seed,
            bpm_bin_width: c.index.bin_width(),
            ..SynthConfig::default()
        };
        let clips = DiskClips::new(&c.index, config.sample_rate);
        let records = synth::synthesize_dataset(&c.index, &config, &clips, &PathBuf::from(dir))?;
        if !out_written.is_null() {
            put(out_written, records.len());
        }
        Ok(())
    })
}

/// Global tempo of a mono clip, in BPM.
///
/// # Safety
/// `samples` must point to `len` floats; `out_bpm` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_estimate_tempo(samples: *const f32, len: usize, sample_rate: u32, out_bpm: *mut f64) -> DmStatus {
    guard(|| {
        non_null(out_bpm, "out_bpm")?;
        let clip = read_clip(samples, len, sample_rate)?;
        let env = dsp::onset_envelope_from_clip(&clip, &DspParams::default())?;
        put(out_bpm, beat::estimate_tempo(&env, &TempoPrior::default())?);
        Ok(())
    })
}

/// Tempo and beat times (seconds). Free the beats with [`dm_f64_free`].
///
/// # Safety
/// `samples` must point to `len` floats; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_beat_track(
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    out_bpm: *mut f64,
    out_beats: *mut *mut f64,
    out_count: *mut usize,
) -> DmStatus {
    guard(|| {
        non_null(out_bpm, "out_bpm")?;
        non_null(out_beats, "out_beats")?;
        non_null(out_count, "out_count")?;
        let clip = read_clip(samples, len, sample_rate)?;
        let a = beat::beat_track(&clip, &DspParams::default(), &TempoPrior::default(), beat::DEFAULT_TIGHTNESS)?;
        put(out_bpm, a.bpm);
        hand_over(a.beat_times, out_beats, out_count);
        Ok(())
    })
}

/// Pitch-preserving stretch; `rate > 1` shortens. Free the output with
/// [`dm_f32_free`].
///
/// # Safety
/// `samples` must point to `len` floats; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_time_stretch(
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    rate: f64,
    out: *mut *mut f32,
    out_len: *mut usize,
) -> DmStatus {
    guard(|| {
        non_null(out, "out")?;
        non_null(out_len, "out_len")?;
        let clip = read_clip(samples, len, sample_rate)?;
        let y = stretch::time_stretch(&clip, &StretchParams::with_rate(rate))?;
        hand_over(y.samples, out, out_len);
        Ok(())
    })
}

/// Moves a clip from `source_bpm` to `target_bpm` and fits it to the
/// canonical segment length. Free the output with [`dm_f32_free`].
///
/// # Safety
/// `samples` must point to `len` floats; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_match_tempo(
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    source_bpm: f64,
    target_bpm: f64,
    out: *mut *mut f32,
    out_len: *mut usize,
) -> DmStatus {
    guard(|| {
        non_null(out, "out")?;
        non_null(out_len, "out_len")?;
        let clip = read_clip(samples, len, sample_rate)?;
        let y = stretch::match_tempo(&clip, source_bpm, target_bpm)?;
        hand_over(y.samples, out, out_len);
        Ok(())
    })
}

/// Pseudo-encoder layer stack, row-major `layers x dim`, `dim = n_mels`.
/// Free with [`dm_f64_free`] using `layers * dim`.
///
/// # Safety
/// `samples` must point to `len` floats; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_pseudo_encode(
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    n_mels: usize,
    out: *mut *mut f64,
    out_layers: *mut usize,
    out_dim: *mut usize,
) -> DmStatus {
    guard(|| {
        non_null(out, "out")?;
        non_null(out_layers, "out_layers")?;
        non_null(out_dim, "out_dim")?;
        let clip = read_clip(samples, len, sample_rate)?;
        let params = FeatureParams { n_mels, ..FeatureParams::default() };
        let stack = features::pseudo_encode(&clip, &params)?;
        let (l, d) = stack.layers.dim();
        put(out_layers, l);
        put(out_dim, d);
        let mut n = 0;
        hand_over(stack.layers.iter().copied().collect(), out, &mut n);
        Ok(())
    })
}

/// Loads a head checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_model_load(path: *const c_char, out: *mut *mut DmModel) -> DmStatus {
    guard(|| {
        non_null(out, "out")?;
        let p = read_str(path, "path")?;
        let (head, _) = model::load_checkpoint(&PathBuf::from(p))?;
        put(out, Box::into_raw(Box::new(DmModel { head })));
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`dm_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dm_model_free(m: *mut DmModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Output width of the head; 0 for NULL.
///
/// # Safety
/// `m` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dm_model_num_classes(m: *const DmModel) -> usize {
    m.as_ref().map_or(0, |m| m.head.classes())
}

/// Per-class probabilities for a row-major `layers x dim` stack, written to
/// `out_probs`, which must hold `capacity >= dm_model_num_classes` values.
///
/// # Safety
/// `values` must point to `layers * dim` doubles; `out_probs` to `capacity`.
#[no_mangle]
pub unsafe extern "C" fn dm_model_predict(
    m: *const DmModel,
    values: *const f64,
    layers: usize,
    dim: usize,
    out_probs: *mut f64,
    capacity: usize,
) -> DmStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| fail(DmStatus::NullPointer, "model is null"))?;
        non_null(out_probs, "out_probs")?;
        let classes = m.head.classes();
        if capacity < classes {
            return Err(fail(DmStatus::Shape, format!("out_probs holds {capacity} values, need {classes}")));
        }
        let n = layers.checked_mul(dim).ok_or_else(|| fail(DmStatus::Shape, "layers * dim overflows"))?;
        let data = read_slice(values, n, "values")?.to_vec();
        let arr = ndarray::Array2::from_shape_vec((layers, dim), data).map_err(|e| fail(DmStatus::Shape, e.to_string()))?;
        let probs = model::predict_proba(&m.head, &LayerStack::new(arr)?)?;
        std::slice::from_raw_parts_mut(out_probs, classes).copy_from_slice(probs.as_slice().expect("contiguous"));
        Ok(())
    })
}

unsafe fn read_batch(scores: *const f64, labels: *const u8, n: usize, classes: usize) -> Result<EvalBatch, Failure> {
    let len = n.checked_mul(classes).ok_or_else(|| fail(DmStatus::Shape, "n * classes overflows"))?;
    let s = read_slice(scores, len, "scores")?.to_vec();
    let y = read_slice(labels, len, "labels")?.to_vec();
    let shape_err = |e: ndarray::ShapeError| fail(DmStatus::Shape, e.to_string());
    Ok(EvalBatch::new(
        ndarray::Array2::from_shape_vec((n, classes), s).map_err(shape_err)?,
        ndarray::Array2::from_shape_vec((n, classes), y).map_err(shape_err)?,
    )?)
}

/// Macro ROC-AUC over classes that have both positives and negatives.
/// `scores` and `labels` are row-major `n x classes`.
///
/// # Safety
/// Both arrays must hold `n * classes` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_roc_auc(scores: *const f64, labels: *const u8, n: usize, classes: usize, out: *mut f64) -> DmStatus {
    guard(|| {
        non_null(out, "out")?;
        let batch = read_batch(scores, labels, n, classes)?;
        put(out, metrics::roc_auc_macro(&batch)?);
        Ok(())
    })
}

/// Cell-wise accuracy with `score >= threshold` predicting a positive.
///
/// # Safety
/// Both arrays must hold `n * classes` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_hamming_accuracy(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    classes: usize,
    threshold: f64,
    out: *mut f64,
) -> DmStatus {
    guard(|| {
        non_null(out, "out")?;
        let batch = read_batch(scores, labels, n, classes)?;
        put(out, metrics::hamming_accuracy(&batch, threshold)?);
        Ok(())
    })
}
