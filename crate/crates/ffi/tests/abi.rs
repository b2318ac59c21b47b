use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use dastmix::model::{self, HeadModel, LayerStack, TrainConfig};
use dastmix::{AudioClip, ClipRecord, Dastgah, InstrumentClass};
use dastmix_ffi::*;

const SR: u32 = 22_050;

fn last_error() -> String {
    let p = dm_last_error_message();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn clicks(bpm: f64, seconds: f64) -> Vec<f32> {
    let n = (seconds * SR as f64) as usize;
    let period = (60.0 / bpm * SR as f64) as usize;
    let mut state = 0x2545_f491u32;
    (0..n)
        .map(|i| {
            state ^= state << 13;
            state ^= state >> 17;
            state ^= state << 5;
            let noise = state as f32 / u32::MAX as f32 - 0.5;
            let k = i % period;
            noise * (0.9 * (-(k as f32) / 200.0).exp() + 0.01)
        })
        .collect()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn version_and_error_state() {
    let v = unsafe { CStr::from_ptr(dm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));

    let mut bpm = 0.0;
    let status = unsafe { dm_estimate_tempo(ptr::null(), 10, SR, &mut bpm) };
    assert_eq!(status, DmStatus::NullPointer);
    assert!(last_error().contains("samples"));
    dm_clear_error();
    assert!(dm_last_error_message().is_null());

    let status = unsafe { dm_estimate_tempo(ptr::null(), 0, 0, &mut bpm) };
    assert_eq!(status, DmStatus::InvalidArgument);
    // a successful call clears the previous message
    let x = clicks(120.0, 8.0);
    assert_eq!(unsafe { dm_estimate_tempo(x.as_ptr(), x.len(), SR, &mut bpm) }, DmStatus::Ok);
    assert!(dm_last_error_message().is_null());
}

#[test]
fn tempo_beats_and_stretching() {
    let x = clicks(120.0, 10.0);
    let mut bpm = 0.0;
    assert_eq!(unsafe { dm_estimate_tempo(x.as_ptr(), x.len(), SR, &mut bpm) }, DmStatus::Ok);
    assert!((bpm / 120.0 - 1.0).abs() < 0.02, "{bpm}");

    let (mut beats, mut count) = (ptr::null_mut(), 0usize);
    assert_eq!(unsafe { dm_beat_track(x.as_ptr(), x.len(), SR, &mut bpm, &mut beats, &mut count) }, DmStatus::Ok);
    assert!(count >= 15, "{count}");
    let times = unsafe { std::slice::from_raw_parts(beats, count) };
    assert!(times.windows(2).all(|w| (w[1] - w[0] - 0.5).abs() < 0.05));
    unsafe { dm_f64_free(beats, count) };

    let (mut out, mut len) = (ptr::null_mut(), 0usize);
    assert_eq!(unsafe { dm_time_stretch(x.as_ptr(), x.len(), SR, 1.25, &mut out, &mut len) }, DmStatus::Ok);
    assert!((len as f64 - x.len() as f64 / 1.25).abs() <= 512.0);
    unsafe { dm_f32_free(out, len) };

    assert_eq!(unsafe { dm_time_stretch(x.as_ptr(), x.len(), SR, 9.0, &mut out, &mut len) }, DmStatus::InvalidArgument);
    assert!(last_error().contains("9"));

    let y = clicks(100.0, 5.0);
    assert_eq!(unsafe { dm_match_tempo(y.as_ptr(), y.len(), SR, 100.0, 120.0, &mut out, &mut len) }, DmStatus::Ok);
    assert_eq!(len, 110_250);
    unsafe { dm_f32_free(out, len) };
    assert_eq!(unsafe { dm_match_tempo(y.as_ptr(), y.len(), SR, 150.0, 90.0, &mut out, &mut len) }, DmStatus::InvalidArgument);

    let silent = vec![0.0f32; SR as usize * 4];
    assert_eq!(unsafe { dm_estimate_tempo(silent.as_ptr(), silent.len(), SR, &mut bpm) }, DmStatus::Signal);
}

#[test]
fn features_and_model_agree_with_the_library() {
    let x = clicks(90.0, 5.0);
    let (mut values, mut l, mut d) = (ptr::null_mut(), 0usize, 0usize);
    assert_eq!(unsafe { dm_pseudo_encode(x.as_ptr(), x.len(), SR, 24, &mut values, &mut l, &mut d) }, DmStatus::Ok);
    assert_eq!((l, d), (4, 24));
    let flat = unsafe { std::slice::from_raw_parts(values, l * d) }.to_vec();
    let params = dastmix::features::FeatureParams { n_mels: 24, ..Default::default() };
    let direct = dastmix::features::pseudo_encode(&AudioClip::new(x.clone(), SR), &params).unwrap();
    assert_eq!(flat, direct.layers.iter().copied().collect::<Vec<_>>());
    unsafe { dm_f64_free(values, l * d) };

    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("h.ckpt");
    let head = HeadModel::init(4, 24, 8, 10, 3);
    model::save_checkpoint(&ckpt, &head, &TrainConfig { hidden: 8, ..TrainConfig::default() }).unwrap();

    let mut m = ptr::null_mut();
    assert_eq!(unsafe { dm_model_load(cstr(&ckpt).as_ptr(), &mut m) }, DmStatus::Ok);
    assert_eq!(unsafe { dm_model_num_classes(m) }, 10);
    let mut probs = [0.0f64; 10];
    assert_eq!(unsafe { dm_model_predict(m, flat.as_ptr(), 4, 24, probs.as_mut_ptr(), 10) }, DmStatus::Ok);
    let expect = model::predict_proba(&head, &LayerStack::new(direct.layers.clone()).unwrap()).unwrap();
    assert_eq!(&probs[..], expect.as_slice().unwrap());

    assert_eq!(unsafe { dm_model_predict(m, flat.as_ptr(), 4, 24, probs.as_mut_ptr(), 9) }, DmStatus::Shape);
    assert_eq!(unsafe { dm_model_predict(m, flat.as_ptr(), 3, 24, probs.as_mut_ptr(), 10) }, DmStatus::Shape);
    unsafe { dm_model_free(m) };
    assert_eq!(unsafe { dm_model_num_classes(ptr::null()) }, 0);

    let mut m2 = ptr::null_mut();
    let missing = cstr(&dir.path().join("none.ckpt"));
    assert_eq!(unsafe { dm_model_load(missing.as_ptr(), &mut m2) }, DmStatus::Io);
    assert!(m2.is_null());
    std::fs::write(dir.path().join("junk.ckpt"), b"HDCKjunk").unwrap();
    let junk = cstr(&dir.path().join("junk.ckpt"));
    assert_eq!(unsafe { dm_model_load(junk.as_ptr(), &mut m2) }, DmStatus::Format);
}

#[test]
fn metrics_through_the_abi() {
    // one class: negatives 0.1, 0.4; positives 0.35, 0.8 -> 3 of 4 pairs ordered
    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0u8, 0, 1, 1];
    let mut auc = 0.0;
    assert_eq!(unsafe { dm_roc_auc(scores.as_ptr(), labels.as_ptr(), 4, 1, &mut auc) }, DmStatus::Ok);
    assert_eq!(auc, 0.75);
    let mut acc = 0.0;
    assert_eq!(unsafe { dm_hamming_accuracy(scores.as_ptr(), labels.as_ptr(), 2, 2, 0.5, &mut acc) }, DmStatus::Ok);
    // rows [0.1 0.4 | 0 0] and [0.35 0.8 | 1 1]: 3 of 4 cells right
    assert_eq!(acc, 0.75);
    assert_eq!(unsafe { dm_hamming_accuracy(scores.as_ptr(), labels.as_ptr(), 2, 2, 1.0, &mut acc) }, DmStatus::InvalidArgument);
    let all_pos = [1u8; 4];
    assert_eq!(unsafe { dm_roc_auc(scores.as_ptr(), all_pos.as_ptr(), 4, 1, &mut auc) }, DmStatus::Shape);
    let bad = [0.1, 1.5, 0.2, 0.3];
    assert_eq!(unsafe { dm_roc_auc(bad.as_ptr(), labels.as_ptr(), 4, 1, &mut auc) }, DmStatus::InvalidArgument);
    assert_eq!(unsafe { dm_roc_auc(scores.as_ptr(), labels.as_ptr(), usize::MAX, 2, &mut auc) }, DmStatus::Shape);
}

fn tiny_corpus(dir: &Path) -> PathBuf {
    std::fs::create_dir_all(dir.join("clips")).unwrap();
    let mut records = Vec::new();
    for (k, inst) in InstrumentClass::ALL.iter().enumerate() {
        let id = format!("{}_0", inst.as_str());
        let path = PathBuf::from(format!("clips/{id}.wav"));
        let f = 200.0 * (k + 1) as f64;
        let clip = AudioClip::new(
            (0..110_250).map(|i| (0.3 * (2.0 * std::f64::consts::PI * f * i as f64 / SR as f64).sin()) as f32).collect(),
            SR,
        );
        dastmix::audio::write_wav(&dir.join(&path), &clip).unwrap();
        records.push(ClipRecord {
            id,
            instrument: *inst,
            dastgah: (!inst.is_percussive()).then_some(Dastgah::Shur),
            bpm: Some(100.0),
            path,
            duration_s: 5.0,
        });
    }
    let manifest = dir.join("manifest.jsonl");
    dastmix::corpus::write_manifest(&manifest, &records).unwrap();
    manifest
}

#[test]
fn corpus_handle_and_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = cstr(&tiny_corpus(dir.path()));
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { dm_corpus_open(manifest.as_ptr(), 8.0, &mut c) }, DmStatus::Ok);
    assert_eq!(unsafe { dm_corpus_len(c) }, 10);

    let mut json: *mut c_char = ptr::null_mut();
    assert_eq!(unsafe { dm_corpus_summary_json(c, &mut json) }, DmStatus::Ok);
    let summary: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(json) }.to_str().unwrap()).unwrap();
    assert_eq!(summary["tonbak"], 1);
    assert_eq!(summary.as_object().unwrap().len(), 10);
    unsafe { dm_string_free(json) };

    let out = cstr(&dir.path().join("mix"));
    let strategy = CString::new("dastgah-bpm").unwrap();
    let mut written = 0usize;
    assert_eq!(unsafe { dm_synthesize(c, out.as_ptr(), strategy.as_ptr(), 10, 4, &mut written) }, DmStatus::Ok);
    assert_eq!(written, 10);
    assert!(dir.path().join("mix/manifest.jsonl").exists());

    let bogus = CString::new("loudest").unwrap();
    assert_eq!(unsafe { dm_synthesize(c, out.as_ptr(), bogus.as_ptr(), 10, 4, ptr::null_mut()) }, DmStatus::InvalidArgument);
    let not_utf8 = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { dm_synthesize(c, out.as_ptr(), not_utf8.as_ptr() as *const c_char, 10, 4, ptr::null_mut()) },
        DmStatus::InvalidUtf8
    );
    assert_eq!(unsafe { dm_synthesize(c, out.as_ptr(), strategy.as_ptr(), 7, 4, ptr::null_mut()) }, DmStatus::InvalidArgument);
    unsafe { dm_corpus_free(c) };
    unsafe { dm_corpus_free(ptr::null_mut()) };

    let missing = cstr(&dir.path().join("absent.jsonl"));
    let mut c2 = ptr::null_mut();
    assert_eq!(unsafe { dm_corpus_open(missing.as_ptr(), 8.0, &mut c2) }, DmStatus::Io);
    assert!(last_error().contains("absent.jsonl"));
    assert_eq!(unsafe { dm_corpus_open(manifest.as_ptr(), 8.0, ptr::null_mut()) }, DmStatus::NullPointer);
}
