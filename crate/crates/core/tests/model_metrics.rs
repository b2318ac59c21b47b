use std::path::Path;

use dastmix::metrics::{self, EvalBatch};
use dastmix::model::{self, HeadModel, LayerStack, TrainConfig};
use dastmix::Error;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stack_from(values: Vec<f32>, l: usize, d: usize) -> LayerStack {
    LayerStack::new(Array2::from_shape_vec((l, d), values.into_iter().map(f64::from).collect()).unwrap()).unwrap()
}

/// Two classes that differ in which layer carries the signal, so the head
/// has to learn both the layer weights and the projection.
fn toy_dataset(n: usize, seed: u64) -> Vec<model::Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = i % 2;
            let layers = Array2::from_shape_fn((3, 8), |(l, d)| {
                let signal = if l == 2 && d % 2 == class { 2.0 } else { 0.0 };
                signal + rng.gen_range(-0.5..0.5)
            });
            let mut labels = vec![0.0; 4];
            labels[class] = 1.0;
            (LayerStack::new(layers).unwrap(), labels)
        })
        .collect()
}

#[test]
fn lstk_file_round_trip_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let stack = stack_from((0..24).map(|i| i as f32 * 0.25 - 3.0).collect(), 4, 6);
    let path = dir.path().join("nested/x.lstk");
    model::write_lstk(&path, &stack).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 4 * 24);
    assert_eq!(model::read_lstk(&path).unwrap(), stack);

    let good = model::encode_lstk(&stack);
    let p = Path::new("bad.lstk");
    let mut magic = good.clone();
    magic[0] = b'X';
    let mut version = good.clone();
    version[4] = 9;
    let mut zero_dim = good.clone();
    zero_dim[8..12].copy_from_slice(&0u32.to_le_bytes());
    let mut nan = good.clone();
    nan[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
    let mut trailing = good.clone();
    trailing.push(0);
    for (name, bytes) in [
        ("magic", magic),
        ("version", version),
        ("zero", zero_dim),
        ("truncated", good[..good.len() - 1].to_vec()),
        ("trailing", trailing),
        ("header only", good[..10].to_vec()),
    ] {
        assert!(matches!(model::decode_lstk(&bytes, p), Err(Error::Format { .. })), "{name}");
    }
    assert!(model::decode_lstk(&nan, p).is_err());
    assert!(matches!(model::read_lstk(&dir.path().join("absent.lstk")), Err(Error::Io { .. })));
}

#[test]
fn checkpoint_round_trip_keeps_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let head = HeadModel::init(3, 8, 5, 4, 17);
    let cfg = TrainConfig { epochs: 3, hidden: 5, seed: 17, ..TrainConfig::default() };
    let path = dir.path().join("m.ckpt");
    model::save_checkpoint(&path, &head, &cfg).unwrap();
    let (back, back_cfg) = model::load_checkpoint(&path).unwrap();
    assert_eq!(back_cfg, cfg);
    for (a, b) in head.blocks().iter().zip(back.blocks()) {
        assert_eq!(*a, b);
    }
    for (stack, _) in toy_dataset(6, 1) {
        assert_eq!(model::predict_proba(&head, &stack).unwrap(), model::predict_proba(&back, &stack).unwrap());
    }

    let bytes = std::fs::read(&path).unwrap();
    let p = Path::new("c");
    assert!(matches!(model::decode_checkpoint(&bytes[..30], p), Err(Error::Format { .. })));
    let mut magic = bytes.clone();
    magic[..4].copy_from_slice(b"LSTK");
    assert!(matches!(model::decode_checkpoint(&magic, p), Err(Error::Format { .. })));
    let cut = bytes.len() - 3;
    assert!(model::decode_checkpoint(&bytes[..cut], p).is_err());
}

#[test]
fn training_is_seeded_and_learns_a_toy_task() {
    let data = toy_dataset(64, 2);
    let cfg = TrainConfig { epochs: 15, hidden: 16, batch_size: 8, learning_rate: 3e-3, seed: 5, ..TrainConfig::default() };
    let init = HeadModel::init(3, 8, 16, 4, 5);
    let a = model::train(&init, &data, &cfg).unwrap();
    let b = model::train(&init, &data, &cfg).unwrap();
    assert_eq!(a.epoch_losses, b.epoch_losses);
    assert_eq!(a.model.blocks(), b.model.blocks());

    let c = model::train(&init, &data, &TrainConfig { seed: 6, ..cfg.clone() }).unwrap();
    assert_ne!(a.epoch_losses, c.epoch_losses);

    let first = a.epoch_losses[0];
    let last = *a.epoch_losses.last().unwrap();
    assert!(last < 0.5 * first, "{first} -> {last}");

    let test = toy_dataset(20, 3);
    let correct = test
        .iter()
        .filter(|(stack, labels)| {
            let p = model::predict_proba(&a.model, stack).unwrap();
            (p[0] > p[1]) == (labels[0] == 1.0)
        })
        .count();
    assert_eq!(correct, 20);

    assert!(model::train(&init, &[], &cfg).is_err());
    assert!(model::train(&init, &data, &TrainConfig { batch_size: 0, ..cfg.clone() }).is_err());
    assert!(model::train(&init, &data, &TrainConfig { beta2: 1.0, ..cfg }).is_err());
}

fn batch_from(cells: &[(u16, bool)], classes: usize) -> EvalBatch {
    let rows = cells.len() / classes;
    let cells = &cells[..rows * classes];
    let scores = Array2::from_shape_vec((rows, classes), cells.iter().map(|&(s, _)| s as f64 / 1000.0).collect()).unwrap();
    let labels = Array2::from_shape_vec((rows, classes), cells.iter().map(|&(_, y)| y as u8).collect()).unwrap();
    EvalBatch::new(scores, labels).unwrap()
}

fn mapped(batch: &EvalBatch, f: impl Fn(f64) -> f64, flip: bool) -> EvalBatch {
    let labels = if flip { batch.labels().mapv(|y| 1 - y) } else { batch.labels().clone() };
    EvalBatch::new(batch.scores().mapv(f), labels).unwrap()
}

fn cells() -> impl Strategy<Value = (Vec<(u16, bool)>, usize)> {
    (1usize..5).prop_flat_map(|c| (proptest::collection::vec((0u16..=1000, any::<bool>()), c * 2..c * 40), Just(c)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lstk_bytes_round_trip(l in 1usize..6, d in 1usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f32> = (0..l * d).map(|_| rng.gen_range(-1e6f32..1e6)).collect();
        let stack = stack_from(values, l, d);
        prop_assert_eq!(model::decode_lstk(&model::encode_lstk(&stack), Path::new("p")).unwrap(), stack);
    }

    #[test]
    fn auc_ignores_monotone_transforms((cells, c) in cells()) {
        let b = batch_from(&cells, c);
        let Ok(base) = metrics::roc_auc_macro(&b) else { return Ok(()); };
        let cubed = metrics::roc_auc_macro(&mapped(&b, |s| s * s * s, false)).unwrap();
        let squashed = metrics::roc_auc_macro(&mapped(&b, |s| 0.25 + 0.5 * s.sqrt(), false)).unwrap();
        prop_assert_eq!(base, cubed);
        prop_assert_eq!(base, squashed);
    }

    #[test]
    fn auc_complements_under_reversal((cells, c) in cells()) {
        let b = batch_from(&cells, c);
        let Ok(per) = metrics::roc_auc_per_class(&b) else { return Ok(()); };
        let reversed = metrics::roc_auc_per_class(&mapped(&b, |s| 1.0 - s, false)).unwrap();
        let flipped = metrics::roc_auc_per_class(&mapped(&b, |s| s, true)).unwrap();
        for ((a, r), f) in per.per_class.iter().zip(&reversed.per_class).zip(&flipped.per_class) {
            match (a, r, f) {
                (Some(a), Some(r), Some(f)) => {
                    prop_assert!((a + r - 1.0).abs() < 1e-12);
                    prop_assert!((a + f - 1.0).abs() < 1e-12);
                }
                (None, None, None) => {}
                other => prop_assert!(false, "exclusion changed: {:?}", other),
            }
        }
    }

    #[test]
    fn hamming_is_flat_between_scores((cells, c) in cells(), t1 in 1u16..1000, t2 in 1u16..1000) {
        let b = batch_from(&cells, c);
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        // thresholds a quarter step off the score grid never equal a score
        let (lo, hi) = (lo as f64 / 1000.0 - 0.00025, hi as f64 / 1000.0 - 0.00025);
        let between = b.scores().iter().any(|&s| s >= lo && s <= hi);
        let (a_lo, a_hi) = (metrics::hamming_accuracy(&b, lo).unwrap(), metrics::hamming_accuracy(&b, hi).unwrap());
        if !between {
            prop_assert_eq!(a_lo, a_hi);
        }
        let per = metrics::per_label_accuracy(&b, lo).unwrap();
        let mean = per.iter().sum::<f64>() / per.len() as f64;
        prop_assert!((mean - a_lo).abs() < 1e-12);
    }
}
