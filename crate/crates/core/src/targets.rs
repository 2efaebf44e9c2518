//! Frame-gridded training targets.
//!
//! Curves are defined in continuous time and sampled at frame centers
//! `i * hop`, so refining the grid never changes a value at a shared center.

use serde::{Deserialize, Serialize};

use crate::annotation::{FunctionLabel, SegmentTimeline};
use crate::error::{Error, Result};

/// Seconds per target frame: 6 STFT hops of 512 samples at 16 kHz.
pub const DEFAULT_HOP: f64 = 0.192;
/// Length of the Hann ramp on either side of a section.
pub const RAMP_SECONDS: f64 = 1.0;
/// Width of the positive region around each boundary.
pub const BOUNDARY_SECONDS: f64 = 0.6;

// Tolerance for frame centers that land on an interval edge up to rounding.
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameGrid {
    pub hop: f64,
    pub n_frames: usize,
}

impl FrameGrid {
    pub fn new(hop: f64, n_frames: usize) -> Result<Self> {
        if !(hop > 0.0 && hop.is_finite()) {
            return Err(Error::Config(format!(
                "frame hop must be positive, got {hop}"
            )));
        }
        Ok(Self { hop, n_frames })
    }

    /// Grid covering `duration` seconds: `ceil(duration / hop)` frames, at least one.
    pub fn for_duration(duration: f64, hop: f64) -> Result<Self> {
        let n = frames_for(duration, hop);
        Self::new(hop, n)
    }

    pub fn time(&self, frame: usize) -> f64 {
        frame as f64 * self.hop
    }

    pub fn frames_per_second(&self) -> f64 {
        1.0 / self.hop
    }
}

/// `ceil(duration / hop)` with a guard against `24.0 / 0.192 = 125.00000000000001`.
pub fn frames_for(duration: f64, hop: f64) -> usize {
    let ratio = duration / hop;
    let rounded = ratio.round();
    let n = if (ratio - rounded).abs() < 1e-9 {
        rounded
    } else {
        ratio.ceil()
    };
    (n as usize).max(1)
}

/// Seven function curves plus one boundary curve on a common grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationTargets {
    /// `function_curves[c][i]` is the activation of class `c` at frame `i`.
    pub function_curves: Vec<Vec<f64>>,
    pub boundary_curve: Vec<f64>,
    pub grid: FrameGrid,
}

impl ActivationTargets {
    pub fn from_timeline(timeline: &SegmentTimeline, grid: FrameGrid) -> Self {
        Self {
            function_curves: make_function_curves(timeline, grid),
            boundary_curve: make_boundary_curve(timeline, grid),
            grid,
        }
    }
}

/// Rising half of a 2 s Hann window over `[onset - 1, onset)`, falling half
/// over `[offset, offset + 1)`, and 1 on the section itself.
fn section_activation(t: f64, start: f64, end: f64) -> f64 {
    if t >= start && t < end {
        1.0
    } else if t < start && t >= start - RAMP_SECONDS {
        let x = (t - (start - RAMP_SECONDS)) / RAMP_SECONDS;
        0.5 * (1.0 - (std::f64::consts::PI * x).cos())
    } else if t >= end && t < end + RAMP_SECONDS {
        let x = (t - end) / RAMP_SECONDS;
        0.5 * (1.0 + (std::f64::consts::PI * x).cos())
    } else {
        0.0
    }
}

/// Continuous-time value of class `label`'s curve at `t`.
pub fn function_activation(timeline: &SegmentTimeline, label: FunctionLabel, t: f64) -> f64 {
    timeline
        .segments()
        .iter()
        .filter(|s| s.label == label)
        .map(|s| section_activation(t, s.start, s.end))
        .fold(0.0, f64::max)
        .clamp(0.0, 1.0)
}

pub fn make_function_curves(timeline: &SegmentTimeline, grid: FrameGrid) -> Vec<Vec<f64>> {
    FunctionLabel::ALL
        .iter()
        .map(|&label| {
            (0..grid.n_frames)
                .map(|i| function_activation(timeline, label, grid.time(i)))
                .collect()
        })
        .collect()
}

/// Continuous-time boundary indicator: 1 within ±0.3 s of any internal edge.
pub fn boundary_activation(timeline: &SegmentTimeline, t: f64) -> f64 {
    let half = BOUNDARY_SECONDS / 2.0;
    let hit = timeline
        .boundaries()
        .iter()
        .any(|&b| t >= b - half - EDGE_EPS && t <= b + half + EDGE_EPS);
    if hit {
        1.0
    } else {
        0.0
    }
}

pub fn make_boundary_curve(timeline: &SegmentTimeline, grid: FrameGrid) -> Vec<f64> {
    (0..grid.n_frames)
        .map(|i| boundary_activation(timeline, grid.time(i)))
        .collect()
}

/// Ordered section tokens supervising the sequence loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<FunctionLabel>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[FunctionLabel] {
        &self.0
    }
}

/// Labels of the segments overlapping `[t0, t1]` with positive measure,
/// in order, including partial overlaps at either edge.
pub fn make_token_sequence(timeline: &SegmentTimeline, t0: f64, t1: f64) -> Result<TokenSequence> {
    if !(t1 > t0) {
        return Err(Error::Contract(format!("empty window [{t0}, {t1}]")));
    }
    let tokens: Vec<_> = timeline
        .segments()
        .iter()
        .filter(|s| s.start < t1 && s.end > t0)
        .map(|s| s.label)
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyWindow { start: t0, end: t1 });
    }
    Ok(TokenSequence(tokens))
}
