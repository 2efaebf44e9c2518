//! Whole-song prediction: chunk scheduling, merging of overlapping chunk
//! outputs, centre-frame scanning for the instant model, boundary peak
//! picking and segment labelling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{FunctionLabel, Segment, SegmentTimeline};
use crate::error::{Error, Result};
use crate::features::Spectrogram;
use crate::model::checkpoint::Checkpoint;
use crate::model::instant::instant_forward;
use crate::model::spectnt::spectnt_forward;
use crate::model::{ModelConfig, ModelKind, Parameters, PredictionMatrix};
use crate::targets::{frames_for, FrameGrid, DEFAULT_HOP};

pub const CHUNK_SECONDS: f64 = 24.0;
pub const CHUNK_HOP_SECONDS: f64 = 3.0;

/// One scheduled chunk. It covers the song frames whose centres lie in
/// `[start, end)`; frames of the chunk past the last song frame are padding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedChunk {
    pub start: f64,
    pub end: f64,
    pub first_frame: usize,
    pub pad_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub chunks: Vec<PlannedChunk>,
    pub window: f64,
    pub hop: f64,
    pub chunk_frames: usize,
    /// Frame grid of the whole song.
    pub grid: FrameGrid,
}

impl ChunkPlan {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Unpadded frames of chunk `k`.
    pub fn valid_frames(&self, k: usize) -> usize {
        self.chunk_frames - self.chunks[k].pad_frames
    }

    /// Number of chunks covering every song frame.
    pub fn coverage(&self) -> Vec<usize> {
        let mut depth = vec![0; self.grid.n_frames];
        for (k, c) in self.chunks.iter().enumerate() {
            for d in &mut depth[c.first_frame..c.first_frame + self.valid_frames(k)] {
                *d += 1;
            }
        }
        depth
    }

    /// Input features of every chunk, sliced from the song spectrogram and
    /// zero-padded at the end.
    pub fn chunk_inputs(&self, song: &Spectrogram) -> Result<Vec<Spectrogram>> {
        if song.n_frames != self.grid.n_frames {
            return Err(Error::Contract(format!(
                "spectrogram has {} frames, plan expects {}",
                song.n_frames, self.grid.n_frames
            )));
        }
        Ok(self
            .chunks
            .iter()
            .map(|c| song.window(c.first_frame, self.chunk_frames))
            .collect())
    }
}

/// Schedule of 24 s chunks with a 3 s hop on the 0.192 s grid.
pub fn plan_chunks(duration: f64) -> Result<ChunkPlan> {
    plan_chunks_with(duration, CHUNK_SECONDS, CHUNK_HOP_SECONDS, DEFAULT_HOP)
}

pub fn plan_chunks_with(duration: f64, window: f64, hop: f64, frame_hop: f64) -> Result<ChunkPlan> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::Validation(format!(
            "duration must be positive, got {duration}"
        )));
    }
    if !(window > 0.0 && hop > 0.0 && hop <= window) {
        return Err(Error::Config(format!(
            "invalid chunk window {window} s / hop {hop} s"
        )));
    }
    let grid = FrameGrid::for_duration(duration, frame_hop)?;
    let chunk_frames = frames_for(window, frame_hop);
    let n_chunks = if duration <= window {
        1
    } else {
        ((duration - window) / hop - 1e-9).ceil() as usize + 1
    };
    let chunks = (0..n_chunks)
        .map(|k| {
            let start = k as f64 * hop;
            let first_frame = frames_for_start(start, frame_hop);
            let valid = grid.n_frames.saturating_sub(first_frame).min(chunk_frames);
            PlannedChunk {
                start,
                end: start + window,
                first_frame,
                pad_frames: chunk_frames - valid,
            }
        })
        .collect();
    Ok(ChunkPlan {
        chunks,
        window,
        hop,
        chunk_frames,
        grid,
    })
}

// first frame whose centre is at or after `start`
fn frames_for_start(start: f64, frame_hop: f64) -> usize {
    if start <= 0.0 {
        0
    } else {
        frames_for(start, frame_hop)
    }
}

/// Merged activation curves of a whole song.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongCurves {
    pub function_probs: Vec<[f64; 7]>,
    pub boundary_probs: Vec<f64>,
    pub grid: FrameGrid,
}

impl SongCurves {
    pub fn n_frames(&self) -> usize {
        self.boundary_probs.len()
    }

    pub fn duration(&self) -> f64 {
        self.grid.time(self.n_frames())
    }

    /// Per-frame argmax of the function curves, without any smoothing.
    pub fn frame_labels(&self) -> Vec<FunctionLabel> {
        self.function_probs
            .iter()
            .map(|row| argmax_label(row).0)
            .collect()
    }
}

// First maximum wins, which follows the taxonomy order on ties.
fn argmax_label(row: &[f64; 7]) -> (FunctionLabel, f64) {
    let mut best = 0;
    for c in 1..7 {
        if row[c] > row[best] {
            best = c;
        }
    }
    (FunctionLabel::ALL[best], row[best])
}

/// Averages overlapping chunk outputs frame by frame, ignoring padding.
pub fn merge_predictions(plan: &ChunkPlan, outputs: &[PredictionMatrix]) -> Result<SongCurves> {
    if outputs.len() != plan.len() {
        return Err(Error::Contract(format!(
            "{} chunk outputs for {} planned chunks",
            outputs.len(),
            plan.len()
        )));
    }
    let n = plan.grid.n_frames;
    let mut function_probs = vec![[0.0; 7]; n];
    let mut boundary_probs = vec![0.0; n];
    let mut depth = vec![0usize; n];
    for (k, (chunk, out)) in plan.chunks.iter().zip(outputs).enumerate() {
        if out.n_frames() != plan.chunk_frames {
            return Err(Error::Contract(format!(
                "chunk output has {} frames, expected {}",
                out.n_frames(),
                plan.chunk_frames
            )));
        }
        for i in 0..plan.valid_frames(k) {
            let t = chunk.first_frame + i;
            for c in 0..7 {
                function_probs[t][c] += out.function_probs[i][c];
            }
            boundary_probs[t] += out.boundary_probs[i];
            depth[t] += 1;
        }
    }
    for t in 0..n {
        let inv = 1.0 / depth[t] as f64;
        function_probs[t].iter_mut().for_each(|v| *v *= inv);
        boundary_probs[t] *= inv;
    }
    Ok(SongCurves {
        function_probs,
        boundary_probs,
        grid: plan.grid,
    })
}

/// Runs `model` on every planned chunk (in parallel) and merges the results.
/// Returns the curves and the number of model calls.
pub fn run_multipoint<F>(
    song: &Spectrogram,
    plan: &ChunkPlan,
    model: F,
) -> Result<(SongCurves, usize)>
where
    F: Fn(&Spectrogram) -> Result<PredictionMatrix> + Sync,
{
    let inputs = plan.chunk_inputs(song)?;
    let outputs: Vec<PredictionMatrix> = inputs.par_iter().map(&model).collect::<Result<_>>()?;
    Ok((merge_predictions(plan, &outputs)?, outputs.len()))
}

/// Calls `model` once per song frame on a chunk centred on that frame,
/// zero-padded at the song edges. Returns the curves and the call count.
pub fn run_instant<F>(
    song: &Spectrogram,
    chunk_frames: usize,
    model: F,
) -> Result<(SongCurves, usize)>
where
    F: Fn(&Spectrogram) -> Result<[f64; 8]> + Sync,
{
    let half = (chunk_frames / 2) as i64;
    let rows: Vec<[f64; 8]> = (0..song.n_frames)
        .into_par_iter()
        .map(|t| model(&song.window_at(t as i64 - half, chunk_frames)))
        .collect::<Result<_>>()?;
    let grid = FrameGrid::new(song.frame_hop, song.n_frames)?;
    let curves = SongCurves {
        function_probs: rows.iter().map(|r| r[..7].try_into().unwrap()).collect(),
        boundary_probs: rows.iter().map(|r| r[7]).collect(),
        grid,
    };
    Ok((curves, rows.len()))
}

/// Instant-model curves for a song, plus the number of model calls.
pub fn instant_scan(
    song: &Spectrogram,
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<(SongCurves, usize)> {
    run_instant(song, cfg.chunk_frames, |x| instant_forward(x, params, cfg))
}

/// Multi-point curves for a song, plus the number of model calls.
pub fn multipoint_predict(
    song: &Spectrogram,
    duration: f64,
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<(SongCurves, usize)> {
    let plan = plan_chunks_with(
        duration,
        cfg.chunk_seconds,
        CHUNK_HOP_SECONDS,
        cfg.frame_hop,
    )?;
    run_multipoint(song, &plan, |x| spectnt_forward(x, params, cfg))
}

/// Peak-picking windows, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakConfig {
    /// A peak must be the maximum within `±max_window`.
    pub max_window: f64,
    pub mean_before: f64,
    pub mean_after: f64,
    /// Required excess over the local mean.
    pub threshold: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            max_window: 6.0,
            mean_before: 12.0,
            mean_after: 6.0,
            threshold: 0.05,
        }
    }
}

/// Boundary times (seconds, strictly increasing) from a boundary curve.
/// Frame 0 is never returned since it is the song start.
pub fn pick_peaks(curve: &[f64], grid: &FrameGrid, cfg: &PeakConfig) -> Vec<f64> {
    let n = curve.len();
    let frames = |s: f64| (s / grid.hop).round() as usize;
    let (w, before, after) = (
        frames(cfg.max_window),
        frames(cfg.mean_before),
        frames(cfg.mean_after),
    );
    let mut out = Vec::new();
    for t in 1..n {
        let v = curve[t];
        let lo = t.saturating_sub(w);
        let hi = (t + w).min(n - 1);
        // strict on the left so a flat top yields its first frame only
        if curve[lo..t].iter().any(|&x| x >= v) || curve[t + 1..=hi].iter().any(|&x| x > v) {
            continue;
        }
        let (mlo, mhi) = (t.saturating_sub(before), (t + after).min(n - 1));
        let mean = curve[mlo..=mhi].iter().sum::<f64>() / (mhi - mlo + 1) as f64;
        if v > mean + cfg.threshold {
            out.push(grid.time(t));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSegment {
    pub start: f64,
    pub end: f64,
    pub label: FunctionLabel,
    /// Mean probability of `label` over the segment's frames.
    pub confidence: f64,
}

/// Contiguous labelled partition of `[0, duration]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentList {
    pub duration: f64,
    pub segments: Vec<LabeledSegment>,
}

impl SegmentList {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Internal boundaries, excluding start and end.
    pub fn boundaries(&self) -> Vec<f64> {
        self.segments[1..].iter().map(|s| s.start).collect()
    }

    pub fn to_timeline(&self) -> Result<SegmentTimeline> {
        let segments = self
            .segments
            .iter()
            .map(|s| Segment {
                start: s.start,
                end: s.end,
                label: s.label,
            })
            .collect();
        SegmentTimeline::new(segments, self.duration)
    }
}

/// Labels each segment between consecutive boundaries with the class of the
/// largest mean probability. Boundaries outside `(0, duration)` are ignored.
pub fn label_segments(
    curves: &SongCurves,
    boundaries: &[f64],
    duration: f64,
) -> Result<SegmentList> {
    if !(duration > 0.0) || curves.n_frames() == 0 {
        return Err(Error::Validation("cannot label an empty song".into()));
    }
    let mut edges = vec![0.0];
    let mut inner: Vec<f64> = boundaries
        .iter()
        .copied()
        .filter(|&b| b > 0.0 && b < duration)
        .collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    edges.extend(inner);
    edges.push(duration);

    let n = curves.n_frames();
    let hop = curves.grid.hop;
    let segments = edges
        .windows(2)
        .map(|e| {
            let (start, end) = (e[0], e[1]);
            // frames whose centre lies in [start, end)
            let first = frames_for_start(start, hop).min(n);
            let last = if end >= duration {
                n
            } else {
                frames_for_start(end, hop).min(n)
            };
            let range = if first < last {
                first..last
            } else {
                let mid = (((start + end) / 2.0) / hop).round() as usize;
                mid.min(n - 1)..mid.min(n - 1) + 1
            };
            let mut mean = [0.0; 7];
            for t in range.clone() {
                for c in 0..7 {
                    mean[c] += curves.function_probs[t][c];
                }
            }
            mean.iter_mut().for_each(|v| *v /= range.len() as f64);
            let (label, confidence) = argmax_label(&mean);
            LabeledSegment {
                start,
                end,
                label,
                confidence,
            }
        })
        .collect();
    Ok(SegmentList { duration, segments })
}

/// Everything `infer` reports for one song.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongPrediction {
    pub duration: f64,
    pub boundaries: Vec<f64>,
    pub segments: Vec<LabeledSegment>,
    pub calls: usize,
    #[serde(skip)]
    pub curves: Option<SongCurves>,
}

impl SongPrediction {
    pub fn segment_list(&self) -> SegmentList {
        SegmentList {
            duration: self.duration,
            segments: self.segments.clone(),
        }
    }
}

/// Full pipeline from a song spectrogram to labelled segments.
pub fn predict_song(
    song: &Spectrogram,
    duration: f64,
    ckpt: &Checkpoint,
    peaks: &PeakConfig,
) -> Result<SongPrediction> {
    let (curves, calls) = match ckpt.kind {
        ModelKind::Spectnt => multipoint_predict(song, duration, &ckpt.params, &ckpt.config)?,
        ModelKind::Instant => instant_scan(song, &ckpt.params, &ckpt.config)?,
    };
    let boundaries = pick_peaks(&curves.boundary_probs, &curves.grid, peaks);
    let list = label_segments(&curves, &boundaries, duration)?;
    Ok(SongPrediction {
        duration,
        boundaries: list.boundaries(),
        segments: list.segments,
        calls,
        curves: Some(curves),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat_output(frames: usize, value: f64) -> PredictionMatrix {
        PredictionMatrix {
            function_probs: vec![[value; 7]; frames],
            boundary_probs: vec![value; frames],
        }
    }

    #[test]
    fn thirty_second_song_needs_three_chunks() {
        let plan = plan_chunks(30.0).unwrap();
        let starts: Vec<f64> = plan.chunks.iter().map(|c| c.start).collect();
        assert_eq!(starts, vec![0.0, 3.0, 6.0]);
        assert_eq!(plan.chunks[2].end, 30.0);
        assert!(plan.chunks.iter().all(|c| c.pad_frames == 0));
        assert!(plan.coverage().iter().all(|&d| d >= 1));
    }

    #[test]
    fn exact_fit_has_no_padding() {
        let plan = plan_chunks(24.0).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan.chunk_frames, 125);
        assert_eq!(plan.chunks[0].pad_frames, 0);
    }

    #[test]
    fn short_song_is_padded() {
        let plan = plan_chunks(10.0).unwrap();
        assert_eq!(plan.len(), 1);
        // 53 song frames (centres 0 .. 9.984 s) fill the rest of the 125
        assert_eq!(plan.grid.n_frames, 53);
        assert_eq!(plan.chunks[0].pad_frames, 72);
    }

    #[test]
    fn interior_depth_is_eight() {
        let plan = plan_chunks(120.0).unwrap();
        let depth = plan.coverage();
        let interior = (24.0 / DEFAULT_HOP) as usize..((120.0 - 24.0) / DEFAULT_HOP) as usize;
        assert!(depth[interior].iter().all(|&d| d == 8));
    }

    #[test]
    fn call_ratio_approaches_the_rate_ratio() {
        let ratio =
            |d: f64| frames_for(d, DEFAULT_HOP) as f64 / plan_chunks(d).unwrap().len() as f64;
        let limit = CHUNK_HOP_SECONDS / DEFAULT_HOP;
        assert!((ratio(1e5) / limit - 1.0).abs() < 0.01);
        assert!(ratio(1e3) > ratio(1e4));
    }

    #[test]
    fn merge_is_mean_over_covering_chunks() {
        let plan = plan_chunks(27.0).unwrap();
        let outs = [flat_output(125, 0.2), flat_output(125, 0.6)];
        let curves = merge_predictions(&plan, &outs).unwrap();
        let shared = plan.chunks[1].first_frame + 10;
        assert!((curves.boundary_probs[shared] - 0.4).abs() < 1e-12);
        assert_eq!(curves.boundary_probs[0], 0.2);
        assert_eq!(curves.boundary_probs[curves.n_frames() - 1], 0.6);
        assert!(merge_predictions(&plan, &outs[..1]).is_err());
    }

    #[test]
    fn single_chunk_merge_is_identity_on_unpadded_frames() {
        let plan = plan_chunks(10.0).unwrap();
        let mut out = flat_output(125, 0.0);
        for (t, row) in out.function_probs.iter_mut().enumerate() {
            row[t % 7] = t as f64 / 200.0;
        }
        let curves = merge_predictions(&plan, std::slice::from_ref(&out)).unwrap();
        assert_eq!(curves.function_probs[..], out.function_probs[..53]);
    }

    #[test]
    fn instant_scan_calls_once_per_frame() {
        let song = Spectrogram::zeros(frames_for(60.0, DEFAULT_HOP), 4, DEFAULT_HOP);
        let (curves, calls) = run_instant(&song, 125, |_| Ok([0.5; 8])).unwrap();
        assert_eq!(calls, 313);
        assert_eq!(curves.n_frames(), 313);
        let one = Spectrogram::zeros(1, 4, DEFAULT_HOP);
        assert_eq!(run_instant(&one, 125, |_| Ok([0.5; 8])).unwrap().1, 1);
    }

    #[test]
    fn instant_windows_are_centred() {
        let mut song = Spectrogram::zeros(20, 1, DEFAULT_HOP);
        for (t, v) in song.values.iter_mut().enumerate() {
            *v = t as f64 + 1.0;
        }
        let (curves, _) = run_instant(&song, 5, |x| {
            let mut r = [0.0; 8];
            r[7] = x.values[2];
            r[0] = x.values[0];
            Ok(r)
        })
        .unwrap();
        assert_eq!(
            curves.boundary_probs,
            (1..=20).map(f64::from).collect::<Vec<_>>()
        );
        assert_eq!(curves.function_probs[0][0], 0.0);
        assert_eq!(curves.function_probs[2][0], 1.0);
    }

    fn grid(n: usize) -> FrameGrid {
        FrameGrid::new(DEFAULT_HOP, n).unwrap()
    }

    #[test]
    fn flat_curve_has_no_peaks() {
        assert!(pick_peaks(&vec![0.0; 400], &grid(400), &PeakConfig::default()).is_empty());
    }

    #[test]
    fn isolated_triangle_gives_its_apex() {
        let n = frames_for(60.0, DEFAULT_HOP);
        let apex = 30.0 / DEFAULT_HOP;
        let curve: Vec<f64> = (0..n)
            .map(|t| (1.0 - (t as f64 - apex).abs() / 5.0).max(0.0))
            .collect();
        let peaks = pick_peaks(&curve, &grid(n), &PeakConfig::default());
        assert_eq!(peaks.len(), 1);
        assert!((peaks[0] - 30.0).abs() <= DEFAULT_HOP / 2.0);
    }

    #[test]
    fn nearby_smaller_peak_is_suppressed() {
        let n = frames_for(60.0, DEFAULT_HOP);
        let bump = |t: f64, c: f64, h: f64| h * (1.0 - (t - c / DEFAULT_HOP).abs() / 3.0).max(0.0);
        let curve: Vec<f64> = (0..n)
            .map(|t| bump(t as f64, 30.0, 1.0) + bump(t as f64, 33.0, 0.7))
            .collect();
        let peaks = pick_peaks(&curve, &grid(n), &PeakConfig::default());
        assert_eq!(peaks.len(), 1);
        assert!((peaks[0] - 30.0).abs() <= DEFAULT_HOP);
    }

    fn curves_from(rows: Vec<[f64; 7]>) -> SongCurves {
        let n = rows.len();
        SongCurves {
            function_probs: rows,
            boundary_probs: vec![0.0; n],
            grid: grid(n),
        }
    }

    #[test]
    fn segment_takes_the_largest_mean() {
        let mut row = [0.1; 7];
        row[FunctionLabel::Chorus.index()] = 0.9;
        let c = curves_from(vec![row; 50]);
        let list = label_segments(&c, &[], 50.0 * DEFAULT_HOP).unwrap();
        assert_eq!(list.len(), 1);
        assert_eq!(list.segments[0].label, FunctionLabel::Chorus);
        assert!((list.segments[0].confidence - 0.9).abs() < 1e-12);
    }

    #[test]
    fn exact_tie_goes_to_the_earlier_class() {
        let mut row = [0.0; 7];
        row[FunctionLabel::Bridge.index()] = 0.5;
        row[FunctionLabel::Verse.index()] = 0.5;
        let c = curves_from(vec![row; 10]);
        let list = label_segments(&c, &[], 10.0 * DEFAULT_HOP).unwrap();
        assert_eq!(list.segments[0].label, FunctionLabel::Verse);
    }

    #[test]
    fn flickering_frames_get_one_label_per_segment() {
        // frame-wise argmax alternates near the boundary, segment means do not
        let rows: Vec<[f64; 7]> = (0..100)
            .map(|t| {
                let mut r = [0.0; 7];
                let verse_side = t < 50;
                let flip = (45..55).contains(&t) && t % 2 == 0;
                let win = if verse_side != flip {
                    FunctionLabel::Verse
                } else {
                    FunctionLabel::Chorus
                };
                r[win.index()] = 0.6;
                r[if win == FunctionLabel::Verse {
                    FunctionLabel::Chorus
                } else {
                    FunctionLabel::Verse
                }
                .index()] = 0.4;
                r
            })
            .collect();
        let c = curves_from(rows);
        let raw = c.frame_labels();
        let runs = 1 + raw.windows(2).filter(|w| w[0] != w[1]).count();
        assert!(runs > 2);
        let list = label_segments(&c, &[50.0 * DEFAULT_HOP], 100.0 * DEFAULT_HOP).unwrap();
        let labels: Vec<_> = list.segments.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![FunctionLabel::Verse, FunctionLabel::Chorus]);
    }

    proptest! {
        #[test]
        fn plan_laws(duration in 0.5f64..400.0) {
            let plan = plan_chunks(duration).unwrap();
            let expected = if duration <= 24.0 { 1 } else { ((duration - 24.0) / 3.0).ceil() as usize + 1 };
            prop_assert_eq!(plan.len(), expected);
            for (k, c) in plan.chunks.iter().enumerate() {
                prop_assert!((c.start - 3.0 * k as f64).abs() < 1e-12);
                if k + 1 < plan.len() {
                    prop_assert_eq!(c.pad_frames, 0);
                }
            }
            prop_assert!(plan.coverage().iter().all(|&d| d >= 1));
        }

        #[test]
        fn merging_identical_outputs_is_identity(duration in 1.0f64..100.0, v in 0.0f64..1.0) {
            let plan = plan_chunks(duration).unwrap();
            let outs = vec![flat_output(125, v); plan.len()];
            let curves = merge_predictions(&plan, &outs).unwrap();
            prop_assert!(curves.boundary_probs.iter().all(|&b| (b - v).abs() < 1e-12));
        }

        #[test]
        fn labelling_is_a_contiguous_partition(
            n in 1usize..200,
            cuts in proptest::collection::vec(-5.0f64..50.0, 0..8),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0))).collect();
            let c = curves_from(rows);
            let duration = n as f64 * DEFAULT_HOP;
            let list = label_segments(&c, &cuts, duration).unwrap();
            prop_assert!(list.to_timeline().is_ok());
            prop_assert!(list.segments.iter().all(|s| (0.0..=1.0).contains(&s.confidence)));
        }
    }
}
