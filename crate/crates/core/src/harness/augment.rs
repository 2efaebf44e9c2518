//! Label-preserving audio perturbations for training chunks.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::features::SAMPLE_RATE;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub p_noise: f64,
    pub snr_db: (f64, f64),
    pub p_gain: f64,
    pub gain_db: (f64, f64),
    /// The filter stage only runs when enabled.
    pub filter: bool,
    pub p_filter: f64,
    pub cutoff_hz: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_noise: 0.5,
            snr_db: (20.0, 40.0),
            p_gain: 0.5,
            gain_db: (-6.0, 6.0),
            filter: false,
            p_filter: 0.5,
            cutoff_hz: (60.0, 4000.0),
        }
    }
}

impl AugmentConfig {
    /// Every stage disabled.
    pub fn off() -> Self {
        Self {
            p_noise: 0.0,
            p_gain: 0.0,
            p_filter: 0.0,
            ..Self::default()
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Applies noise, gain and (optionally) a first-order filter, each with its
/// own probability. The same seed always gives the same output.
pub fn augment(samples: &[f32], cfg: &AugmentConfig, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = samples.iter().map(|&s| s as f64).collect();

    // decide every stage up front so enabling one does not shift the others
    let noise = rng
        .random_bool(cfg.p_noise.clamp(0.0, 1.0))
        .then(|| draw(&mut rng, cfg.snr_db));
    let gain = rng
        .random_bool(cfg.p_gain.clamp(0.0, 1.0))
        .then(|| draw(&mut rng, cfg.gain_db));
    let filter = (cfg.filter && rng.random_bool(cfg.p_filter.clamp(0.0, 1.0)))
        .then(|| (rng.random_bool(0.5), draw(&mut rng, cfg.cutoff_hz)));

    if let Some(snr) = noise {
        let power = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
        let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
        for v in &mut x {
            let n: f64 = rng.sample(StandardNormal);
            *v += sigma * n;
        }
    }
    if let Some(db) = gain {
        let g = 10f64.powf(db / 20.0);
        x.iter_mut().for_each(|v| *v *= g);
    }
    if let Some((low_pass, cutoff)) = filter {
        first_order(&mut x, cutoff, low_pass);
    }
    x.into_iter().map(|v| v as f32).collect()
}

/// One-pole low-pass, or its complement as a high-pass.
fn first_order(x: &mut [f64], cutoff: f64, low_pass: bool) {
    let dt = 1.0 / SAMPLE_RATE as f64;
    let rc = 1.0 / (2.0 * PI * cutoff);
    let alpha = dt / (rc + dt);
    let mut y = 0.0;
    for v in x.iter_mut() {
        y += alpha * (*v - y);
        *v = if low_pass { y } else { *v - y };
    }
}
