//! Data preparation and experiment orchestration: synthetic songs,
//! augmentation, dataset manifests, the training loop and cross-validation.

pub mod augment;
pub mod config;
pub mod cv;
pub mod dataset;
pub mod synth;
pub mod train;

pub use augment::{augment, AugmentConfig};
pub use config::TrainConfig;
pub use cv::{kfold, leave_one_dataset_out, run_cross_validation, CvReport, Fold};
pub use dataset::{
    enumerate_training_chunks, ChunkRef, ChunkSampler, DatasetManifest, ManifestEntry, Song, Split,
};
pub use synth::{generate_synthetic_song, synthetic_corpus, SyntheticSpec, TimbreRecipe};
pub use train::{run_training, EarlyStopping, TrainOutcome};
