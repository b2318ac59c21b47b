//! Glue between manifests, feature files and the classifier.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::Deserialize;

use crate::audio;
use crate::corpus::{self, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::features::{self, FeatureParams};
use crate::metrics::EvalBatch;
use crate::model::{self, Example, HeadModel, LayerStack};
use crate::synth::{multi_hot, MixtureRecord};

/// The two fields every manifest (corpus or mixture) shares.
#[derive(Debug, Clone, Deserialize)]
pub struct ClipRef {
    pub id: String,
    pub path: PathBuf,
}

pub fn read_clip_refs(manifest: &Path) -> Result<Vec<ClipRef>> {
    corpus::read_jsonl(manifest)
}

pub fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.lstk"))
}

/// Runs the pseudo encoder over every clip and writes `<id>.lstk` files.
/// Relative clip paths are resolved against `root`.
pub fn export_features(clips: &[ClipRef], root: &Path, out_dir: &Path, params: &FeatureParams, sample_rate: u32) -> Result<usize> {
    clips
        .par_iter()
        .map(|c| {
            let path = if c.path.is_absolute() { c.path.clone() } else { root.join(&c.path) };
            let clip = audio::load_resampled(&path, sample_rate)?;
            let stack = features::pseudo_encode(&clip, params)?;
            model::write_lstk(&feature_path(out_dir, &c.id), &stack)
        })
        .collect::<Result<Vec<()>>>()
        .map(|v| v.len())
}

/// A feature stack with its multi-hot labels.
#[derive(Debug, Clone)]
pub struct LabeledStack {
    pub id: String,
    pub stack: LayerStack,
    pub labels: [u8; NUM_CLASSES],
}

pub fn load_labeled(records: &[MixtureRecord], features_dir: &Path) -> Result<Vec<LabeledStack>> {
    let out: Vec<LabeledStack> = records
        .par_iter()
        .map(|r| {
            Ok(LabeledStack {
                id: r.id.clone(),
                stack: model::read_lstk(&feature_path(features_dir, &r.id))?,
                labels: multi_hot(&r.labels),
            })
        })
        .collect::<Result<_>>()?;
    if let Some(first) = out.first() {
        let shape = first.stack.layers.dim();
        if let Some(bad) = out.iter().find(|s| s.stack.layers.dim() != shape) {
            return Err(Error::ShapeMismatch(format!(
                "feature `{}` is {:?}, expected {shape:?}",
                bad.id,
                bad.stack.layers.dim()
            )));
        }
    }
    Ok(out)
}

pub fn to_examples(data: &[LabeledStack]) -> Vec<Example> {
    data.iter()
        .map(|d| (d.stack.clone(), d.labels.iter().map(|&y| y as f64).collect()))
        .collect()
}

/// Sigmoid scores `[N x C]` for a set of stacks.
pub fn score(model: &HeadModel, stacks: &[&LayerStack]) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = stacks
        .par_iter()
        .map(|s| Ok(model::predict_proba(model, s)?.to_vec()))
        .collect::<Result<_>>()?;
    let c = model.classes();
    Array2::from_shape_vec((rows.len(), c), rows.into_iter().flatten().collect())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))
}

pub fn eval_batch(model: &HeadModel, data: &[LabeledStack]) -> Result<EvalBatch> {
    let stacks: Vec<&LayerStack> = data.iter().map(|d| &d.stack).collect();
    let scores = score(model, &stacks)?;
    let labels = Array2::from_shape_fn((data.len(), NUM_CLASSES), |(i, c)| data[i].labels[c]);
    EvalBatch::new(scores, labels)
}
