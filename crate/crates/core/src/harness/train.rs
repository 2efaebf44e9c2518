//! The epoch loop: seeded chunk draws, optional augmentation, Adam steps,
//! per-epoch validation, best-checkpoint selection and early stopping.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, LogMelFrontEnd};
use crate::model::checkpoint::Checkpoint;
use crate::model::optim::AdamState;
use crate::model::train::{evaluate_loss, train_step, StepLosses, TrainingExample};
use crate::model::Parameters;

use super::config::TrainConfig;
use super::dataset::{build_example, enumerate_for, ChunkSampler, Song};

/// Patience-based stopping on a quantity that should decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: Option<usize>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    /// Records one epoch's value; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        if value < self.best {
            self.best = value;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: StepLosses,
    pub validation: StepLosses,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the initial ones if no
    /// epoch finished).
    pub checkpoint: Checkpoint,
    pub best_epoch: Option<usize>,
    pub best_validation: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Set when a non-finite loss ended training.
    pub aborted: Option<String>,
    pub history: Vec<EpochRecord>,
}

fn log_line(log: &mut dyn Write, value: serde_json::Value) -> Result<()> {
    writeln!(log, "{value}").map_err(|e| Error::io("<training log>", e))
}

fn losses_json(l: &StepLosses) -> serde_json::Value {
    json!({
        "bce_boundary": l.bce_boundary,
        "bce_function": l.bce_function,
        "ctl": l.ctl,
        "combined": l.combined,
    })
}

/// Trains a fresh model on `train`, validating on `validation` (or on the
/// training chunks when it is empty). Writes one JSON object per step and
/// per epoch to `log`.
pub fn run_training(
    cfg: &TrainConfig,
    train: &[Song],
    validation: &[Song],
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = cfg.model_config()?;
    let kind = cfg.model;
    let fe = LogMelFrontEnd::new(FeatureConfig::default())?;
    if train.is_empty() {
        return Err(Error::Config("no training songs".into()));
    }

    let chunks = enumerate_for(kind, train, &model, cfg.chunk_hop)?;
    let (val_songs, val_label) = if validation.is_empty() {
        (train, "train")
    } else {
        (validation, "validation")
    };
    let val_examples: Vec<TrainingExample> = enumerate_for(kind, val_songs, &model, cfg.chunk_hop)?
        .par_iter()
        .map(|c| build_example(&val_songs[c.song], *c, &model, &fe, None))
        .collect::<Result<_>>()?;
    log_line(
        log,
        json!({
            "event": "start",
            "model": kind,
            "preset": cfg.preset,
            "seed": cfg.seed,
            "train_songs": train.len(),
            "train_chunks": chunks.len(),
            "validation_source": val_label,
            "validation_chunks": val_examples.len(),
            "parameters": Parameters::init(&model, kind)?.count(),
        }),
    )?;

    let mut params = Parameters::init(&model, kind)?;
    let mut adam = AdamState::new(&params);
    let mut sampler = ChunkSampler::new(chunks.len(), cfg.seed ^ 0x5eed_c4a1)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = params.clone();
    let mut history = Vec::new();
    let mut aborted = None;
    let mut stopped_early = false;
    let mut step = 0usize;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut epoch_loss = StepLosses::default();
        for _ in 0..cfg.batches_per_epoch {
            step += 1;
            let draws = sampler.draw_batch(cfg.batch_size);
            let batch: Vec<TrainingExample> = draws
                .par_iter()
                .map(|&(i, seed)| {
                    let c = chunks[i];
                    let aug = cfg.augment.then_some((&cfg.augmentation, seed));
                    build_example(&train[c.song], c, &model, &fe, aug)
                })
                .collect::<Result<_>>()?;
            match train_step(
                kind,
                &batch,
                &mut params,
                &mut adam,
                &model,
                &cfg.loss,
                &cfg.adam,
            ) {
                Ok(l) => {
                    let mut line = losses_json(&l);
                    line["event"] = json!("step");
                    line["epoch"] = json!(epoch);
                    line["step"] = json!(step);
                    log_line(log, line)?;
                    let w = 1.0 / cfg.batches_per_epoch as f64;
                    epoch_loss.bce_boundary += w * l.bce_boundary;
                    epoch_loss.bce_function += w * l.bce_function;
                    epoch_loss.ctl += w * l.ctl;
                    epoch_loss.combined += w * l.combined;
                }
                Err(Error::NonFinite(msg)) => {
                    log_line(
                        log,
                        json!({"event": "abort", "epoch": epoch, "step": step, "reason": msg}),
                    )?;
                    aborted = Some(msg);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let val = evaluate_loss(kind, &params, &model, &cfg.loss, &val_examples)?;
        if !val.combined.is_finite() {
            let msg = format!("validation loss is not finite at epoch {epoch}");
            log_line(
                log,
                json!({"event": "abort", "epoch": epoch, "reason": msg}),
            )?;
            aborted = Some(msg);
            break;
        }
        let (improved, stop) = stopper.observe(epoch, val.combined);
        if improved {
            best_params = params.clone();
        }
        history.push(EpochRecord {
            epoch,
            train: epoch_loss,
            validation: val,
        });
        log_line(
            log,
            json!({
                "event": "epoch",
                "epoch": epoch,
                "train": losses_json(&epoch_loss),
                "validation": losses_json(&val),
                "improved": improved,
            }),
        )?;
        if stop {
            stopped_early = true;
            log_line(
                log,
                json!({"event": "stop", "epoch": epoch, "reason": "patience"}),
            )?;
            break;
        }
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            kind,
            config: model,
            params: best_params,
        },
        best_epoch: stopper.best_epoch,
        best_validation: stopper.best,
        epochs_run: history.len(),
        stopped_early,
        aborted,
        history,
    })
}
