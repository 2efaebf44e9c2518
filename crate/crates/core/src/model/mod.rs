//! Networks that map a spectrogram chunk to activation curves.
//!
//! * [`spectnt`]: the multi-point spectral-temporal Transformer. A small
//!   ResNet front-end, then blocks that pair a spectral encoder (attention
//!   across frequency positions within each frame, summarised into a
//!   frequency class token) with a temporal encoder (attention across the
//!   per-frame tokens). Emits one 8-vector per input frame.
//! * [`instant`]: a convolutional baseline that emits one 8-vector for the
//!   centre frame of its chunk.
//!
//! Output columns 0..7 are the function classes in taxonomy order; column 7
//! is the boundary curve.

pub mod checkpoint;
pub mod instant;
mod layers;
pub mod optim;
pub mod spectnt;
pub mod train;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tensor};
use crate::error::{Error, Result};
use crate::targets::{frames_for, DEFAULT_HOP};

/// Seven function curves plus the boundary curve.
pub const N_OUTPUTS: usize = 8;
pub const BOUNDARY_COLUMN: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Multi-point SpecTNT.
    Spectnt,
    /// Centre-frame convolutional baseline.
    Instant,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectnt" | "multipoint" => Ok(ModelKind::Spectnt),
            "instant" => Ok(ModelKind::Instant),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub spectral_dim: usize,
    pub spectral_heads: usize,
    pub temporal_dim: usize,
    pub temporal_heads: usize,
    pub resnet_kernel: usize,
    pub resnet_channels: usize,
    /// Feed-forward hidden width as a multiple of the model width.
    pub ffn_mult: usize,
    pub n_classes: usize,
    pub n_bins: usize,
    pub chunk_seconds: f64,
    pub frame_hop: f64,
    pub chunk_frames: usize,
    pub instant_channels: usize,
    pub instant_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// CPU-friendly defaults used for training in this repository.
    pub fn desk() -> Self {
        Self {
            n_blocks: 2,
            spectral_dim: 24,
            spectral_heads: 2,
            temporal_dim: 24,
            temporal_heads: 2,
            resnet_kernel: 3,
            resnet_channels: 8,
            ffn_mult: 2,
            n_classes: N_OUTPUTS,
            n_bins: 80,
            chunk_seconds: 24.0,
            frame_hop: DEFAULT_HOP,
            chunk_frames: 125,
            instant_channels: 8,
            instant_hidden: 32,
            seed: 0,
        }
    }

    /// Full-size shape: 5 blocks, 96-wide encoders with 4 spectral and 8
    /// temporal heads. Used for parameter accounting.
    pub fn paper() -> Self {
        Self {
            n_blocks: 5,
            spectral_dim: 96,
            spectral_heads: 4,
            temporal_dim: 96,
            temporal_heads: 8,
            resnet_channels: 64,
            ffn_mult: 4,
            instant_channels: 64,
            instant_hidden: 256,
            ..Self::desk()
        }
    }

    /// A very small network for finite-difference checks.
    pub fn miniature(chunk_frames: usize, n_bins: usize) -> Self {
        Self {
            n_blocks: 1,
            spectral_dim: 4,
            spectral_heads: 2,
            temporal_dim: 4,
            temporal_heads: 2,
            resnet_channels: 2,
            ffn_mult: 2,
            n_bins,
            chunk_seconds: chunk_frames as f64 * DEFAULT_HOP,
            chunk_frames,
            instant_channels: 2,
            instant_hidden: 3,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.spectral_heads == 0 || self.spectral_dim % self.spectral_heads != 0 {
            return bad(format!(
                "spectral_dim {} not divisible by {} heads",
                self.spectral_dim, self.spectral_heads
            ));
        }
        if self.temporal_heads == 0 || self.temporal_dim % self.temporal_heads != 0 {
            return bad(format!(
                "temporal_dim {} not divisible by {} heads",
                self.temporal_dim, self.temporal_heads
            ));
        }
        if self.n_classes != N_OUTPUTS {
            return bad(format!(
                "n_classes must be {N_OUTPUTS}, got {}",
                self.n_classes
            ));
        }
        if self.resnet_kernel % 2 == 0 {
            return bad("resnet_kernel must be odd".into());
        }
        if self.chunk_frames != frames_for(self.chunk_seconds, self.frame_hop) {
            return bad(format!(
                "chunk_frames {} does not match {} s at {} s hop",
                self.chunk_frames, self.chunk_seconds, self.frame_hop
            ));
        }
        if self.n_blocks == 0 || self.n_bins == 0 || self.resnet_channels == 0 || self.ffn_mult == 0
        {
            return bad("sizes must be positive".into());
        }
        Ok(())
    }

    /// Frequency positions left after the ResNet's three stride-2 stages.
    pub fn freq_positions(&self) -> usize {
        (0..3).fold(self.n_bins, |f, _| (f - 1) / 2 + 1)
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Uniform with variance 1/fan_in.
    FanIn(usize),
    Uniform(f64),
    Zeros,
    Ones,
}

pub(crate) struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

pub(crate) struct SpecBuilder(Vec<ParamSpec>);

impl SpecBuilder {
    pub(crate) fn new() -> Self {
        Self(Vec::new())
    }

    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name, shape, init });
    }

    pub(crate) fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.push(
            format!("{prefix}.w"),
            vec![fan_in, fan_out],
            Init::FanIn(fan_in),
        );
        self.push(format!("{prefix}.b"), vec![fan_out], Init::Zeros);
    }

    pub(crate) fn conv(&mut self, prefix: &str, kernel: usize, c_in: usize, c_out: usize) {
        self.linear(prefix, kernel * kernel * c_in, c_out);
    }

    pub(crate) fn layer_norm(&mut self, prefix: &str, dim: usize) {
        self.push(format!("{prefix}.g"), vec![dim], Init::Ones);
        self.push(format!("{prefix}.b"), vec![dim], Init::Zeros);
    }

    pub(crate) fn embedding(&mut self, name: &str, shape: Vec<usize>) {
        self.push(name.to_string(), shape, Init::Uniform(0.1));
    }

    /// Pre-norm Transformer encoder layer.
    pub(crate) fn encoder(&mut self, prefix: &str, dim: usize, ffn_mult: usize) {
        self.layer_norm(&format!("{prefix}.ln1"), dim);
        for proj in ["q", "k", "v", "o"] {
            self.linear(&format!("{prefix}.attn.{proj}"), dim, dim);
        }
        self.layer_norm(&format!("{prefix}.ln2"), dim);
        self.linear(&format!("{prefix}.ffn1"), dim, dim * ffn_mult);
        self.linear(&format!("{prefix}.ffn2"), dim * ffn_mult, dim);
    }

    pub(crate) fn count(&self) -> usize {
        self.0
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }
}

/// Named tensors for every layer of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl Parameters {
    pub(crate) fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {n}")));
            }
        }
        Ok(Self {
            names,
            tensors,
            index,
        })
    }

    fn from_specs(specs: SpecBuilder, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for spec in specs.0 {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::FanIn(fan_in) => {
                    let a = (3.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-a..a)).collect()
                }
                Init::Uniform(a) => (0..n).map(|_| rng.random_range(-a..a)).collect(),
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            names.push(spec.name);
            tensors.push(Tensor::new(spec.shape, data));
        }
        Self::from_parts(names, tensors).expect("parameter names are unique")
    }

    /// Seeded initialisation for `kind` under `cfg`.
    pub fn init(cfg: &ModelConfig, kind: ModelKind) -> Result<Self> {
        cfg.validate()?;
        let specs = match kind {
            ModelKind::Spectnt => spectnt::param_specs(cfg),
            ModelKind::Instant => instant::param_specs(cfg),
        };
        Ok(Self::from_specs(specs, cfg.seed))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

/// Parameter count of a SpecTNT at `cfg`, without allocating it.
pub fn spectnt_param_count(cfg: &ModelConfig) -> usize {
    spectnt::param_specs(cfg).count()
}

/// Parameter count of a non-hierarchical Transformer of the same depth: the
/// same ResNet front-end and per-position projection, after which each
/// frame's full `freq_positions × spectral_dim` feature map is one token of a
/// temporal-only encoder stack.
pub fn flat_transformer_param_count(cfg: &ModelConfig) -> usize {
    let mut b = SpecBuilder::new();
    spectnt::front_end_specs(&mut b, cfg);
    let width = cfg.freq_positions() * cfg.spectral_dim;
    for i in 0..cfg.n_blocks {
        b.encoder(&format!("flat{i}"), width, cfg.ffn_mult);
    }
    b.layer_norm("head.ln", width);
    b.linear("head", width, N_OUTPUTS);
    b.count()
}

/// Per-frame sigmoid activations for one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    /// `function_probs[t][c]`.
    pub function_probs: Vec<[f64; 7]>,
    pub boundary_probs: Vec<f64>,
}

impl PredictionMatrix {
    /// Applies the output sigmoids to `T × 8` logits.
    pub fn from_logits(logits: &[f64]) -> Self {
        let mut function_probs = Vec::with_capacity(logits.len() / N_OUTPUTS);
        let mut boundary_probs = Vec::with_capacity(logits.len() / N_OUTPUTS);
        for row in logits.chunks(N_OUTPUTS) {
            let mut f = [0.0; 7];
            for (o, &z) in f.iter_mut().zip(&row[..7]) {
                *o = sigmoid(z);
            }
            function_probs.push(f);
            boundary_probs.push(sigmoid(row[BOUNDARY_COLUMN]));
        }
        Self {
            function_probs,
            boundary_probs,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.boundary_probs.len()
    }

    /// Row `t` as an 8-vector (functions, then boundary).
    pub fn row(&self, t: usize) -> [f64; 8] {
        let mut r = [0.0; 8];
        r[..7].copy_from_slice(&self.function_probs[t]);
        r[7] = self.boundary_probs[t];
        r
    }
}
