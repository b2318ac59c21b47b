//! Mode- and tempo-constrained polyphonic augmentation for Persian
//! classical music, with a small multi-label instrument classifier.
//!
//! Pipeline: [`corpus`] ingest, [`beat`] tempo analysis, [`synth`] mixture
//! generation (using [`stretch`] for tempo matching), [`features`] export,
//! [`model`] training and [`metrics`] evaluation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod beat;
pub mod cli;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod stretch;
pub mod synth;

pub use audio::AudioClip;
pub use corpus::{ClipRecord, CorpusIndex, Dastgah, InstrumentClass};
pub use error::{Error, Result};
pub use model::{HeadModel, LayerStack, TrainConfig};
pub use synth::{Strategy, SynthConfig};
