//! Fold construction and cross-validated evaluation.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{predict_song, PeakConfig};
use crate::metrics::{CorpusSummary, EvalFrameGrid, MetricReport};

use super::config::TrainConfig;
use super::dataset::Song;
use super::train::run_training;

pub const MIN_FOLD_SONGS: usize = 4;

/// Song indices of one train / validation / test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Fold {
    /// Fails if any song appears in more than one part.
    pub fn check_leakage(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for &i in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(i) {
                return Err(Error::Contract(format!(
                    "song {i} appears in more than one split"
                )));
            }
        }
        Ok(())
    }
}

/// Moves a seeded fraction of `pool` (at least one song, never all of
/// them) into a validation list. Returns `(train, validation)`.
pub fn hold_out_validation(pool: Vec<usize>, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    split_validation(pool, fraction, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn split_validation(
    mut pool: Vec<usize>,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    if fraction <= 0.0 || pool.len() < 2 {
        return (pool, Vec::new());
    }
    pool.shuffle(rng);
    let n_val = ((pool.len() as f64 * fraction).round() as usize).clamp(1, pool.len() - 1);
    let mut validation = pool.split_off(pool.len() - n_val);
    pool.sort_unstable();
    validation.sort_unstable();
    (pool, validation)
}

/// `k` folds over `n` songs; every song is tested exactly once.
pub fn kfold(n: usize, k: usize, validation_fraction: f64, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || n / k < MIN_FOLD_SONGS {
        return Err(Error::Config(format!(
            "{k} folds over {n} songs leaves fewer than {MIN_FOLD_SONGS} test songs per fold"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    (0..k)
        .map(|f| {
            let mut test: Vec<usize> = order.iter().skip(f).step_by(k).copied().collect();
            test.sort_unstable();
            let rest = (0..n).filter(|i| !test.contains(i)).collect();
            let (train, validation) = split_validation(rest, validation_fraction, &mut rng);
            let fold = Fold {
                train,
                validation,
                test,
            };
            fold.check_leakage()?;
            Ok(fold)
        })
        .collect()
}

/// One fold per group (dataset); songs are indexed over the concatenation
/// of the groups in order.
pub fn leave_one_dataset_out(
    group_sizes: &[usize],
    validation_fraction: f64,
    seed: u64,
) -> Result<Vec<Fold>> {
    if group_sizes.len() < 2 {
        return Err(Error::Config(
            "leave-one-dataset-out needs at least two datasets".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<usize> = group_sizes
        .iter()
        .scan(0, |acc, &n| {
            let o = *acc;
            *acc += n;
            Some(o)
        })
        .collect();
    let total: usize = group_sizes.iter().sum();
    (0..group_sizes.len())
        .map(|g| {
            let test: Vec<usize> = (offsets[g]..offsets[g] + group_sizes[g]).collect();
            let rest = (0..total).filter(|i| !test.contains(i)).collect();
            let (train, validation) = split_validation(rest, validation_fraction, &mut rng);
            let fold = Fold {
                train,
                validation,
                test,
            };
            fold.check_leakage()?;
            Ok(fold)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongResult {
    pub fold: usize,
    pub name: String,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub songs: Vec<SongResult>,
    /// Unweighted mean over songs.
    pub summary: CorpusSummary,
}

/// Predicts each test song with `ckpt` and scores it.
pub fn evaluate_songs(
    ckpt: &crate::model::checkpoint::Checkpoint,
    songs: &[&Song],
    peaks: &PeakConfig,
    grid: &EvalFrameGrid,
) -> Result<Vec<MetricReport>> {
    songs
        .iter()
        .map(|s| {
            let p = predict_song(&s.spec, s.duration(), ckpt, peaks)?;
            MetricReport::evaluate(&p.segment_list().to_timeline()?, &s.timeline, grid)
        })
        .collect()
}

/// Trains and tests every fold, then averages per song.
pub fn run_cross_validation(
    cfg: &TrainConfig,
    songs: &[Song],
    folds: &[Fold],
    peaks: &PeakConfig,
    log: &mut dyn Write,
) -> Result<CvReport> {
    let grid = EvalFrameGrid::default();
    let mut results = Vec::new();
    for (f, fold) in folds.iter().enumerate() {
        fold.check_leakage()?;
        if let Some(&bad) = fold
            .train
            .iter()
            .chain(&fold.validation)
            .chain(&fold.test)
            .find(|&&i| i >= songs.len())
        {
            return Err(Error::Contract(format!(
                "fold refers to song {bad} of {}",
                songs.len()
            )));
        }
        let pick = |idx: &[usize]| idx.iter().map(|&i| songs[i].clone()).collect::<Vec<_>>();
        let mut fold_cfg = cfg.clone();
        fold_cfg.seed = cfg.seed.wrapping_add(f as u64);
        let outcome = run_training(&fold_cfg, &pick(&fold.train), &pick(&fold.validation), log)?;
        if let Some(msg) = outcome.aborted {
            return Err(Error::NonFinite(format!("fold {f}: {msg}")));
        }
        let test: Vec<&Song> = fold.test.iter().map(|&i| &songs[i]).collect();
        let reports = evaluate_songs(&outcome.checkpoint, &test, peaks, &grid)?;
        for (s, report) in test.iter().zip(reports) {
            results.push(SongResult {
                fold: f,
                name: s.name.clone(),
                report,
            });
        }
    }
    let reports: Vec<MetricReport> = results.iter().map(|r| r.report).collect();
    Ok(CvReport {
        folds: folds.len(),
        summary: CorpusSummary::from_reports(&reports)?,
        songs: results,
    })
}
