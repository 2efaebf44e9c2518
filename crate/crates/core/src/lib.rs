//! # structura
//!
//! Semantic music structure analysis. Songs are segmented into sections and
//! each section is labelled with one of seven functions (intro, verse,
//! chorus, bridge, inst, outro, silence).
//!
//! The pipeline:
//!
//! 1. [`annotation`] folds free-form dataset labels onto the taxonomy.
//! 2. [`targets`] turns a labelled timeline into boundary and function
//!    activation curves on a 0.192 s grid.
//! 3. [`features`] computes a pooled log-mel spectrogram on the same grid.
//! 4. [`model`] holds a spectral-temporal Transformer (multi-point) and a
//!    convolutional instant baseline, trained with the objectives in [`loss`].
//! 5. [`inference`] slides 24 s chunks over a song, merges the chunk
//!    predictions, picks boundary peaks and labels each segment.
//! 6. [`metrics`] scores predictions against references.
//! 7. [`harness`] provides synthetic data, training, and cross-validation.

pub mod annotation;
pub mod autodiff;
pub mod error;
pub mod features;
pub mod harness;
pub mod inference;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod targets;

pub use annotation::{
    convert_label, parse_annotation, repair_no_function, to_timeline, ConvertedLabel,
    FunctionLabel, RawAnnotation, Segment, SegmentTimeline,
};
pub use error::{Error, Result};
pub use features::{load_wav, stft_log_mel, AudioClip, FeatureConfig, Spectrogram};
pub use inference::{ChunkPlan, LabeledSegment, SegmentList, SongCurves};
pub use loss::{ctl_loss, LossConfig};
pub use metrics::MetricReport;
pub use model::{ModelConfig, ModelKind, Parameters, PredictionMatrix};
pub use targets::{ActivationTargets, FrameGrid, TokenSequence};
