//! Synthetic songs: each section is a class-specific sinusoid chord plus
//! white noise, joined with short crossfades.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationRow, FunctionLabel, RawAnnotation};
use crate::error::{Error, Result};
use crate::features::{AudioClip, SAMPLE_RATE};

pub const CROSSFADE_SECONDS: f64 = 0.05;
pub const MIN_SECTION_SECONDS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimbreRecipe {
    /// Partial frequencies in Hz, equal amplitude.
    pub frequencies: Vec<f64>,
    /// Standard deviation of the additive white noise.
    pub noise: f64,
}

/// One recipe per class, in taxonomy order. Every class gets a different
/// chord so the mapping from timbre to class is injective.
pub fn default_recipes() -> Vec<TimbreRecipe> {
    let r = |f: &[f64], noise: f64| TimbreRecipe {
        frequencies: f.to_vec(),
        noise,
    };
    vec![
        r(&[196.0, 294.0], 0.01),
        r(&[262.0, 330.0, 392.0], 0.01),
        r(&[440.0, 554.0, 659.0], 0.01),
        r(&[349.0, 523.0, 784.0], 0.01),
        r(&[110.0, 165.0, 1320.0], 0.01),
        r(&[247.0, 370.0, 988.0], 0.01),
        r(&[], 0.003),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub sections: Vec<(FunctionLabel, f64)>,
    pub recipes: Vec<TimbreRecipe>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(sections: Vec<(FunctionLabel, f64)>, seed: u64) -> Result<Self> {
        let spec = Self {
            sections,
            recipes: default_recipes(),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A random plan of `n_sections` sections of 8 to 16 s each, never
    /// repeating a class in adjacent sections.
    pub fn random(seed: u64, n_sections: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sections: Vec<(FunctionLabel, f64)> = Vec::with_capacity(n_sections);
        for _ in 0..n_sections {
            let label = loop {
                let c = FunctionLabel::ALL[rng.random_range(0..FunctionLabel::COUNT)];
                if sections.last().is_none_or(|&(prev, _)| prev != c) {
                    break c;
                }
            };
            let seconds = (rng.random_range(8.0..16.0) * 10.0_f64).round() / 10.0;
            sections.push((label, seconds));
        }
        Self::new(sections, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sections.is_empty() {
            return Err(Error::Validation("synthetic plan has no sections".into()));
        }
        if let Some((_, d)) = self
            .sections
            .iter()
            .find(|(_, d)| !(*d >= MIN_SECTION_SECONDS))
        {
            return Err(Error::Validation(format!(
                "section of {d} s is shorter than {MIN_SECTION_SECONDS} s"
            )));
        }
        if self.recipes.len() != FunctionLabel::COUNT {
            return Err(Error::Validation("need one timbre recipe per class".into()));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.sections.iter().map(|s| s.1).sum()
    }

    /// Section onsets in seconds.
    pub fn onsets(&self) -> Vec<f64> {
        self.sections
            .iter()
            .scan(0.0, |t, s| {
                let start = *t;
                *t += s.1;
                Some(start)
            })
            .collect()
    }

    pub fn annotation(&self) -> Result<RawAnnotation> {
        let rows = self
            .onsets()
            .into_iter()
            .zip(&self.sections)
            .map(|(time, (label, _))| AnnotationRow {
                time,
                label: label.name().to_string(),
            })
            .collect();
        RawAnnotation::new(rows, self.duration())
    }
}

// Raised-cosine gain of a section over [start, end] with fades centred on
// its interior edges.
fn section_gain(t: f64, start: f64, end: f64, first: bool, last: bool) -> f64 {
    let h = CROSSFADE_SECONDS / 2.0;
    let rise = |x: f64| 0.5 - 0.5 * (PI * x.clamp(0.0, 1.0)).cos();
    let a = if first {
        1.0
    } else {
        rise((t - (start - h)) / CROSSFADE_SECONDS)
    };
    let b = if last {
        1.0
    } else {
        1.0 - rise((t - (end - h)) / CROSSFADE_SECONDS)
    };
    a * b
}

/// Renders the plan to 16 kHz audio and the matching annotation text.
pub fn generate_synthetic_song(spec: &SyntheticSpec) -> Result<(AudioClip, String)> {
    spec.validate()?;
    let sr = SAMPLE_RATE as f64;
    let n = (spec.duration() * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = vec![0.0f64; n];
    let onsets = spec.onsets();
    let last_index = spec.sections.len() - 1;
    let h = CROSSFADE_SECONDS / 2.0;
    for (i, ((label, d), &start)) in spec.sections.iter().zip(&onsets).enumerate() {
        let recipe = &spec.recipes[label.index()];
        let end = start + d;
        let lo = ((start - h).max(0.0) * sr).floor() as usize;
        let hi = (((end + h) * sr).ceil() as usize).min(n);
        let phases: Vec<f64> = recipe
            .frequencies
            .iter()
            .map(|_| rng.random_range(0.0..2.0 * PI))
            .collect();
        let amp = if recipe.frequencies.is_empty() {
            0.0
        } else {
            0.3 / recipe.frequencies.len() as f64
        };
        for (j, slot) in out[lo..hi].iter_mut().enumerate() {
            let t = (lo + j) as f64 / sr;
            let tone: f64 = recipe
                .frequencies
                .iter()
                .zip(&phases)
                .map(|(f, p)| (2.0 * PI * f * t + p).sin())
                .sum();
            let noise: f64 = rng.sample(StandardNormal);
            let g = section_gain(t, start, end, i == 0, i == last_index);
            *slot += g * (amp * tone + recipe.noise * noise);
        }
    }
    let clip = AudioClip::new(out.into_iter().map(|v| v as f32).collect())?;
    Ok((clip, spec.annotation()?.to_text()))
}

/// `n` random songs of 3 to 5 sections with seeds derived from `seed`.
pub fn synthetic_corpus(n: usize, seed: u64) -> Result<Vec<SyntheticSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let sections = rng.random_range(3..=5);
            SyntheticSpec::random(rng.random(), sections)
        })
        .collect()
}
