//! Manifests, loaded songs, and the training-chunk list.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{parse_annotation, repair_no_function, to_timeline, SegmentTimeline};
use crate::error::{Error, Result};
use crate::features::{load_wav, AudioClip, LogMelFrontEnd, Spectrogram};
use crate::inference::plan_chunks_with;
use crate::model::train::TrainingExample;
use crate::model::{ModelConfig, ModelKind};
use crate::targets::{frames_for, make_token_sequence, ActivationTargets, FrameGrid};

use super::augment::{augment, AugmentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub audio: PathBuf,
    pub annotation: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Reads a JSON manifest. Relative paths are resolved against the
    /// manifest's directory and every file must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for e in &mut m.entries {
            for p in [&mut e.audio, &mut e.annotation] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if !p.exists() {
                    return Err(Error::Validation(format!(
                        "manifest entry {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn with_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// A song ready for training or evaluation. The spectrogram always has
/// one frame per grid step of the annotated duration.
#[derive(Debug, Clone, PartialEq)]
pub struct Song {
    pub name: String,
    pub clip: AudioClip,
    pub spec: Spectrogram,
    pub timeline: SegmentTimeline,
    pub targets: ActivationTargets,
}

impl Song {
    pub fn from_parts(
        name: impl Into<String>,
        clip: AudioClip,
        annotation: &str,
        fe: &LogMelFrontEnd,
    ) -> Result<Self> {
        let raw = repair_no_function(&parse_annotation(annotation)?);
        let timeline = to_timeline(&raw)?;
        let hop = fe.config().frame_hop();
        let n = frames_for(timeline.duration(), hop);
        let spec = fe.frames(clip.samples(), 0, 0, n);
        let targets = ActivationTargets::from_timeline(&timeline, FrameGrid::new(hop, n)?);
        Ok(Self {
            name: name.into(),
            clip,
            spec,
            timeline,
            targets,
        })
    }

    pub fn load(entry: &ManifestEntry, fe: &LogMelFrontEnd) -> Result<Self> {
        let clip = load_wav(&entry.audio)?;
        let text = std::fs::read_to_string(&entry.annotation)
            .map_err(|e| Error::io(&entry.annotation, e))?;
        let name = entry.audio.file_stem().map_or_else(
            || entry.audio.display().to_string(),
            |s| s.to_string_lossy().into_owned(),
        );
        Self::from_parts(name, clip, &text, fe)
    }

    pub fn duration(&self) -> f64 {
        self.timeline.duration()
    }

    pub fn n_frames(&self) -> usize {
        self.spec.n_frames
    }
}

/// One entry of the global training list: a window of `chunk_frames`
/// frames starting at `first_frame` (negative or past-the-end frames are
/// zero padding).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRef {
    pub song: usize,
    pub first_frame: i64,
}

/// Every 24 s chunk (3 s hop) of every song, in song order.
pub fn enumerate_training_chunks(
    songs: &[Song],
    cfg: &ModelConfig,
    hop_seconds: f64,
) -> Result<Vec<ChunkRef>> {
    let mut out = Vec::new();
    for (i, s) in songs.iter().enumerate() {
        let plan = plan_chunks_with(s.duration(), cfg.chunk_seconds, hop_seconds, cfg.frame_hop)?;
        out.extend(plan.chunks.iter().map(|c| ChunkRef {
            song: i,
            first_frame: c.first_frame as i64,
        }));
    }
    Ok(out)
}

/// One chunk centred on every frame of every song, for the instant model.
pub fn enumerate_centre_frames(songs: &[Song], cfg: &ModelConfig) -> Vec<ChunkRef> {
    let half = (cfg.chunk_frames / 2) as i64;
    songs
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            (0..s.n_frames() as i64).map(move |t| ChunkRef {
                song: i,
                first_frame: t - half,
            })
        })
        .collect()
}

pub fn enumerate_for(
    kind: ModelKind,
    songs: &[Song],
    cfg: &ModelConfig,
    hop_seconds: f64,
) -> Result<Vec<ChunkRef>> {
    match kind {
        ModelKind::Spectnt => enumerate_training_chunks(songs, cfg, hop_seconds),
        ModelKind::Instant => Ok(enumerate_centre_frames(songs, cfg)),
    }
}

/// Seeded uniform draws from a chunk list.
#[derive(Debug, Clone)]
pub struct ChunkSampler {
    rng: ChaCha8Rng,
    len: usize,
}

impl ChunkSampler {
    pub fn new(len: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Validation(
                "no training chunks to sample from".into(),
            ));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            len,
        })
    }

    pub fn draw(&mut self) -> usize {
        self.rng.random_range(0..self.len)
    }

    /// Indices plus one augmentation seed per draw.
    pub fn draw_batch(&mut self, n: usize) -> Vec<(usize, u64)> {
        (0..n)
            .map(|_| {
                let i = self.draw();
                (i, self.rng.random())
            })
            .collect()
    }
}

/// Features and supervision for one chunk. With `aug`, the chunk's audio
/// is perturbed and its features recomputed.
pub fn build_example(
    song: &Song,
    chunk: ChunkRef,
    cfg: &ModelConfig,
    fe: &LogMelFrontEnd,
    aug: Option<(&AugmentConfig, u64)>,
) -> Result<TrainingExample> {
    let len = cfg.chunk_frames;
    let n = song.n_frames() as i64;
    let lo = chunk.first_frame.max(0);
    let hi = (chunk.first_frame + len as i64).min(n);
    if lo >= hi {
        return Err(Error::Contract(format!(
            "chunk at frame {} misses the song",
            chunk.first_frame
        )));
    }
    let spec = match aug {
        None => song.spec.window_at(chunk.first_frame, len),
        Some((a, seed)) => {
            let per = fe.config().samples_per_frame() as i64;
            let margin = fe.config().n_fft as i64 * 2;
            let samples = song.clip.samples();
            let s0 = (lo * per - margin).max(0) as usize;
            let s1 = ((hi * per + margin) as usize).min(samples.len());
            let perturbed = augment(&samples[s0..s1], a, seed);
            let inner = fe.frames(&perturbed, s0 as i64, lo as usize, (hi - lo) as usize);
            inner.window_at(chunk.first_frame - lo, len)
        }
    };
    let mut function_targets = vec![[0.0; 7]; len];
    let mut boundary_targets = vec![0.0; len];
    for t in lo..hi {
        let i = (t - chunk.first_frame) as usize;
        for c in 0..7 {
            function_targets[i][c] = song.targets.function_curves[c][t as usize];
        }
        boundary_targets[i] = song.targets.boundary_curve[t as usize];
    }
    let hop = cfg.frame_hop;
    let tokens = make_token_sequence(
        &song.timeline,
        lo as f64 * hop,
        (hi - 1) as f64 * hop + 1e-9,
    )?;
    Ok(TrainingExample {
        spec,
        function_targets,
        boundary_targets,
        valid_frames: (hi - lo) as usize,
        tokens,
    })
}
