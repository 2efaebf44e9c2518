//! Segmentation and labelling measures: boundary hit rate, frame accuracy,
//! pairwise frame clustering, normalised conditional entropy, and the two
//! chorus-specific variants.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::annotation::{FunctionLabel, SegmentTimeline};
use crate::error::{Error, Result};
use crate::targets::frames_for;

pub const HIT_WINDOW: f64 = 0.5;

/// Sampling grid for frame-based measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalFrameGrid {
    pub hop: f64,
}

impl Default for EvalFrameGrid {
    fn default() -> Self {
        Self { hop: 0.1 }
    }
}

impl EvalFrameGrid {
    pub fn new(hop: f64) -> Result<Self> {
        if !(hop > 0.0 && hop.is_finite()) {
            return Err(Error::Config(format!(
                "evaluation hop must be positive, got {hop}"
            )));
        }
        Ok(Self { hop })
    }

    /// Label of every frame `i · hop` for `i < ceil(duration / hop)`.
    pub fn labels(&self, timeline: &SegmentTimeline, duration: f64) -> Vec<FunctionLabel> {
        (0..frames_for(duration, self.hop))
            .map(|i| timeline.label_at(i as f64 * self.hop))
            .collect()
    }

    /// Frame labels of both structures on the reference duration.
    pub fn label_pair(
        &self,
        est: &SegmentTimeline,
        reference: &SegmentTimeline,
    ) -> Result<(Vec<FunctionLabel>, Vec<FunctionLabel>)> {
        if (est.duration() - reference.duration()).abs() > self.hop {
            return Err(Error::Contract(format!(
                "estimate lasts {} s, reference {} s",
                est.duration(),
                reference.duration()
            )));
        }
        let d = reference.duration();
        Ok((self.labels(est, d), self.labels(reference, d)))
    }
}

/// Precision, recall and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f,
        }
    }

    pub fn perfect() -> Self {
        Self::new(1.0, 1.0)
    }
}

/// Size of a maximum one-to-one matching between `est` and `reference`
/// where matched times differ by at most `window`.
pub fn count_matches(est: &[f64], reference: &[f64], window: f64) -> usize {
    let adj: Vec<Vec<usize>> = est
        .iter()
        .map(|e| {
            reference
                .iter()
                .enumerate()
                .filter(|(_, r)| (e - *r).abs() <= window)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; reference.len()];
    let mut matched = 0;
    for i in 0..est.len() {
        let mut seen = vec![false; reference.len()];
        if augment(i, &adj, &mut owner, &mut seen) {
            matched += 1;
        }
    }
    matched
}

// Kuhn's augmenting-path step.
fn augment(i: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
    for &j in &adj[i] {
        if seen[j] {
            continue;
        }
        seen[j] = true;
        if owner[j].is_none_or(|k| augment(k, adj, owner, seen)) {
            owner[j] = Some(i);
            return true;
        }
    }
    false
}

/// Boundary hit rate. Song start and end must not be included. Two empty
/// lists agree perfectly; one empty list scores zero.
pub fn hit_rate_f(est: &[f64], reference: &[f64], window: f64) -> Prf {
    match (est.is_empty(), reference.is_empty()) {
        (true, true) => Prf::perfect(),
        (true, false) | (false, true) => Prf::new(0.0, 0.0),
        _ => {
            let m = count_matches(est, reference, window) as f64;
            Prf::new(m / est.len() as f64, m / reference.len() as f64)
        }
    }
}

/// Fraction of frames whose labels agree.
pub fn frame_accuracy(
    est: &SegmentTimeline,
    reference: &SegmentTimeline,
    grid: &EvalFrameGrid,
) -> Result<f64> {
    let (e, r) = grid.label_pair(est, reference)?;
    Ok(label_accuracy(&e, &r))
}

pub fn label_accuracy<L: PartialEq>(est: &[L], reference: &[L]) -> f64 {
    let same = est.iter().zip(reference).filter(|(a, b)| a == b).count();
    same as f64 / reference.len() as f64
}

fn pairs(n: usize) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

fn counts<K: Eq + Hash, I: IntoIterator<Item = K>>(items: I) -> HashMap<K, usize> {
    let mut m = HashMap::new();
    for k in items {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

/// Pairwise frame clustering over label sequences. Fewer than two frames
/// is an error. An empty pair set counts as fully precise (or recalled).
pub fn pairwise_labels<L: Copy + Eq + Hash>(est: &[L], reference: &[L]) -> Result<Prf> {
    if est.len() != reference.len() || reference.len() < 2 {
        return Err(Error::Contract(format!(
            "pairwise clustering needs two equal sequences of at least 2 frames, got {} and {}",
            est.len(),
            reference.len()
        )));
    }
    let a: f64 = counts(est.iter().copied())
        .values()
        .map(|&n| pairs(n))
        .sum();
    let b: f64 = counts(reference.iter().copied())
        .values()
        .map(|&n| pairs(n))
        .sum();
    let both: f64 = counts(est.iter().copied().zip(reference.iter().copied()))
        .values()
        .map(|&n| pairs(n))
        .sum();
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 1.0 };
    Ok(Prf::new(ratio(both, a), ratio(both, b)))
}

pub fn pairwise_f(
    est: &SegmentTimeline,
    reference: &SegmentTimeline,
    grid: &EvalFrameGrid,
) -> Result<Prf> {
    let (e, r) = grid.label_pair(est, reference)?;
    pairwise_labels(&e, &r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyScores {
    pub over: f64,
    pub under: f64,
    pub f: f64,
}

/// Normalised conditional-entropy scores over label sequences.
pub fn entropy_labels<L: Copy + Eq + Hash>(est: &[L], reference: &[L]) -> Result<EntropyScores> {
    if est.len() != reference.len() || reference.is_empty() {
        return Err(Error::Contract(
            "entropy scores need two equal non-empty sequences".into(),
        ));
    }
    let n = reference.len() as f64;
    let joint = counts(est.iter().copied().zip(reference.iter().copied()));
    let ce = counts(est.iter().copied());
    let cr = counts(reference.iter().copied());
    // H(X | Y) = -sum p(x, y) log2 p(x, y) / p(y)
    let conditional = |given_ref: bool| -> f64 {
        joint
            .iter()
            .map(|(&(e, r), &c)| {
                let marginal = if given_ref { cr[&r] } else { ce[&e] } as f64;
                let p = c as f64 / n;
                -p * (c as f64 / marginal).log2()
            })
            .sum()
    };
    let score = |h: f64, k: usize| {
        if k <= 1 {
            1.0
        } else {
            1.0 - h / (k as f64).log2()
        }
    };
    let over = score(conditional(true), ce.len());
    let under = score(conditional(false), cr.len());
    Ok(EntropyScores {
        over,
        under,
        f: Prf::new(over, under).f,
    })
}

pub fn entropy_scores(
    est: &SegmentTimeline,
    reference: &SegmentTimeline,
    grid: &EvalFrameGrid,
) -> Result<EntropyScores> {
    let (e, r) = grid.label_pair(est, reference)?;
    entropy_labels(&e, &r)
}

/// Internal boundaries that start or end a chorus segment.
pub fn chorus_boundaries(t: &SegmentTimeline) -> Vec<f64> {
    t.segments()
        .windows(2)
        .filter(|w| w[0].label == FunctionLabel::Chorus || w[1].label == FunctionLabel::Chorus)
        .map(|w| w[1].start)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChorusScores {
    pub chr: Prf,
    pub cf1: Prf,
    /// The reference has no chorus; `chr` is reported as zero.
    pub no_chorus: bool,
}

pub fn chorus_metrics(
    est: &SegmentTimeline,
    reference: &SegmentTimeline,
    grid: &EvalFrameGrid,
) -> Result<ChorusScores> {
    let no_chorus = !reference
        .segments()
        .iter()
        .any(|s| s.label == FunctionLabel::Chorus);
    let chr = if no_chorus {
        Prf::new(0.0, 0.0)
    } else {
        hit_rate_f(
            &chorus_boundaries(est),
            &chorus_boundaries(reference),
            HIT_WINDOW,
        )
    };
    let (e, r) = grid.label_pair(est, reference)?;
    let binary = |v: &[FunctionLabel]| -> Vec<bool> {
        v.iter().map(|&l| l == FunctionLabel::Chorus).collect()
    };
    let cf1 = pairwise_labels(&binary(&e), &binary(&r))?;
    Ok(ChorusScores {
        chr,
        cf1,
        no_chorus,
    })
}

/// All six measures for one song.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "HR.5F")]
    pub hr5f: Prf,
    #[serde(rename = "ACC")]
    pub acc: f64,
    #[serde(rename = "PWF")]
    pub pwf: Prf,
    #[serde(rename = "Sf")]
    pub sf: EntropyScores,
    #[serde(rename = "CHR.5F")]
    pub chr5f: Prf,
    #[serde(rename = "CF1")]
    pub cf1: Prf,
    pub no_chorus: bool,
}

impl MetricReport {
    pub fn evaluate(
        est: &SegmentTimeline,
        reference: &SegmentTimeline,
        grid: &EvalFrameGrid,
    ) -> Result<Self> {
        let chorus = chorus_metrics(est, reference, grid)?;
        Ok(Self {
            hr5f: hit_rate_f(&est.boundaries(), &reference.boundaries(), HIT_WINDOW),
            acc: frame_accuracy(est, reference, grid)?,
            pwf: pairwise_f(est, reference, grid)?,
            sf: entropy_scores(est, reference, grid)?,
            chr5f: chorus.chr,
            cf1: chorus.cf1,
            no_chorus: chorus.no_chorus,
        })
    }

    /// The six headline values in reporting order.
    pub fn headline(&self) -> [(&'static str, f64); 6] {
        [
            ("HR.5F", self.hr5f.f),
            ("ACC", self.acc),
            ("PWF", self.pwf.f),
            ("Sf", self.sf.f),
            ("CHR.5F", self.chr5f.f),
            ("CF1", self.cf1.f),
        ]
    }
}

/// Unweighted per-song means. CHR.5F averages only songs whose reference
/// has a chorus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub songs: usize,
    #[serde(rename = "HR.5F")]
    pub hr5f: f64,
    #[serde(rename = "ACC")]
    pub acc: f64,
    #[serde(rename = "PWF")]
    pub pwf: f64,
    #[serde(rename = "Sf")]
    pub sf: f64,
    #[serde(rename = "CHR.5F")]
    pub chr5f: Option<f64>,
    #[serde(rename = "CF1")]
    pub cf1: f64,
}

impl CorpusSummary {
    pub fn from_reports(reports: &[MetricReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::Contract("no songs to summarise".into()));
        }
        let mean = |f: &dyn Fn(&MetricReport) -> f64| {
            reports.iter().map(f).sum::<f64>() / reports.len() as f64
        };
        let with_chorus: Vec<f64> = reports
            .iter()
            .filter(|r| !r.no_chorus)
            .map(|r| r.chr5f.f)
            .collect();
        Ok(Self {
            songs: reports.len(),
            hr5f: mean(&|r| r.hr5f.f),
            acc: mean(&|r| r.acc),
            pwf: mean(&|r| r.pwf.f),
            sf: mean(&|r| r.sf.f),
            chr5f: (!with_chorus.is_empty())
                .then(|| with_chorus.iter().sum::<f64>() / with_chorus.len() as f64),
            cf1: mean(&|r| r.cf1.f),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::Segment;
    use proptest::prelude::*;
    use FunctionLabel::*;

    fn timeline(parts: &[(f64, FunctionLabel)], duration: f64) -> SegmentTimeline {
        SegmentTimeline::from_onsets(parts, duration).unwrap()
    }

    #[test]
    fn identical_boundaries_hit_perfectly() {
        let b = [10.0, 20.0, 31.5];
        assert_eq!(hit_rate_f(&b, &b, HIT_WINDOW), Prf::perfect());
    }

    #[test]
    fn single_feasible_match() {
        let s = hit_rate_f(&[10.4], &[10.0, 20.0], HIT_WINDOW);
        assert_eq!((s.precision, s.recall), (1.0, 0.5));
        assert!((s.f - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn matching_is_maximal_not_greedy() {
        assert_eq!(count_matches(&[10.3, 10.5], &[10.0, 10.6], HIT_WINDOW), 2);
        // greedy nearest-first would pair 10.5 with 10.6 and 10.3 with 10.0 too,
        // so also check an order where greedy fails
        assert_eq!(count_matches(&[10.2, 10.6], &[10.55, 11.0], HIT_WINDOW), 2);
    }

    #[test]
    fn accuracy_of_half_match() {
        let est = timeline(&[(0.0, Chorus)], 20.0);
        let reference = timeline(&[(0.0, Chorus), (10.0, Verse)], 20.0);
        let acc = frame_accuracy(&est, &reference, &EvalFrameGrid::default()).unwrap();
        assert!((acc - 0.5).abs() <= 0.1 / 20.0 + 1e-12);
    }

    #[test]
    fn duration_mismatch_is_an_error() {
        let a = timeline(&[(0.0, Chorus)], 20.0);
        let b = timeline(&[(0.0, Chorus)], 25.0);
        assert!(matches!(
            frame_accuracy(&a, &b, &EvalFrameGrid::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn one_cluster_against_two_halves() {
        let n = 15;
        let est = vec![0u8; 2 * n];
        let reference: Vec<u8> = (0..2 * n).map(|i| (i >= n) as u8).collect();
        let p = pairwise_labels(&est, &reference).unwrap();
        let (a, ab) = (pairs(2 * n), 2.0 * pairs(n));
        assert!((p.precision - ab / a).abs() < 1e-15);
        assert_eq!(p.recall, 1.0);
        assert!(pairwise_labels(&[1], &[1]).is_err());
    }

    #[test]
    fn refinement_only_hurts_over_segmentation() {
        // every reference label split into two exact halves
        let reference: Vec<u8> = (0..40).map(|i| (i / 20) as u8).collect();
        let est: Vec<u8> = (0..40).map(|i| (i / 10) as u8).collect();
        let s = entropy_labels(&est, &reference).unwrap();
        assert!((s.under - 1.0).abs() < 1e-12);
        // H(est | ref) = 1 bit over 4 estimated labels
        assert!((s.over - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_chorus_is_flagged() {
        let a = timeline(&[(0.0, Verse), (10.0, Bridge)], 20.0);
        let c = chorus_metrics(&a, &a, &EvalFrameGrid::default()).unwrap();
        assert!(c.no_chorus);
        assert_eq!(c.chr.f, 0.0);
        assert_eq!(c.cf1.f, 1.0);
    }

    #[test]
    fn shifted_chorus_boundary_still_hits() {
        let reference = timeline(&[(0.0, Verse), (10.0, Chorus), (20.0, Verse)], 30.0);
        let est = timeline(&[(0.0, Verse), (10.4, Chorus), (20.0, Verse)], 30.0);
        let c = chorus_metrics(&est, &reference, &EvalFrameGrid::default()).unwrap();
        assert_eq!(c.chr.f, 1.0);
        let same = chorus_metrics(&reference, &reference, &EvalFrameGrid::default()).unwrap();
        assert_eq!((same.chr.f, same.cf1.f), (1.0, 1.0));
    }

    #[test]
    fn corpus_mean_skips_chorusless_songs_for_chr() {
        let with = timeline(&[(0.0, Verse), (10.0, Chorus)], 20.0);
        let without = timeline(&[(0.0, Verse), (10.0, Bridge)], 20.0);
        let g = EvalFrameGrid::default();
        let r1 = MetricReport::evaluate(&with, &with, &g).unwrap();
        let r2 = MetricReport::evaluate(&without, &without, &g).unwrap();
        let s = CorpusSummary::from_reports(&[r1, r2]).unwrap();
        assert_eq!(s.chr5f, Some(1.0));
        assert_eq!(s.acc, 1.0);
    }

    #[test]
    fn corpus_mean_is_per_song() {
        let g = EvalFrameGrid::default();
        let reference = timeline(&[(0.0, Verse), (10.0, Chorus)], 20.0);
        let ests = [
            timeline(&[(0.0, Verse), (10.0, Chorus)], 20.0),
            timeline(&[(0.0, Verse), (15.0, Chorus)], 20.0),
            timeline(&[(0.0, Intro)], 20.0),
        ];
        let reports: Vec<MetricReport> = ests
            .iter()
            .map(|e| MetricReport::evaluate(e, &reference, &g).unwrap())
            .collect();
        let s = CorpusSummary::from_reports(&reports).unwrap();
        // ACC per song: 1, 0.75, 0
        assert!((s.acc - (1.0 + 0.75 + 0.0) / 3.0).abs() < 1e-12);
        // HR: hit, miss (one boundary each side), empty estimate
        assert!((s.hr5f - 1.0 / 3.0).abs() < 1e-12);
    }

    fn random_timeline(seed: u64, duration: f64, max_segments: usize) -> SegmentTimeline {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(1..=max_segments);
        let mut cuts: Vec<f64> = (1..k)
            .map(|_| (rng.random_range(0.05..0.95) * duration * 10.0).round() / 10.0)
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut edges = vec![0.0];
        edges.extend(cuts);
        edges.push(duration);
        let segments = edges
            .windows(2)
            .map(|w| Segment {
                start: w[0],
                end: w[1],
                label: FunctionLabel::ALL[rng.random_range(0..7)],
            })
            .collect();
        SegmentTimeline::new(segments, duration).unwrap()
    }

    proptest! {
        #[test]
        fn self_comparison_is_perfect(seed in any::<u64>()) {
            let t = random_timeline(seed, 60.0, 8);
            let r = MetricReport::evaluate(&t, &t, &EvalFrameGrid::default()).unwrap();
            prop_assert_eq!(r.pwf.f, 1.0);
            prop_assert!((r.sf.f - 1.0).abs() < 1e-12);
            prop_assert_eq!(r.acc, 1.0);
            prop_assert_eq!(r.hr5f.f, 1.0);
        }

        #[test]
        fn clustering_measures_ignore_label_names(seed in any::<u64>(), shift in 1usize..7) {
            let g = EvalFrameGrid::default();
            let est = random_timeline(seed, 40.0, 6);
            let reference = random_timeline(seed ^ 0x5eed, 40.0, 6);
            let renamed = SegmentTimeline::new(
                est.segments().iter().map(|s| Segment {
                    label: FunctionLabel::ALL[(s.label.index() + shift) % 7],
                    ..*s
                }).collect(),
                est.duration(),
            ).unwrap();
            let a = pairwise_f(&est, &reference, &g).unwrap();
            let b = pairwise_f(&renamed, &reference, &g).unwrap();
            prop_assert!((a.f - b.f).abs() < 1e-12);
            let a = entropy_scores(&est, &reference, &g).unwrap();
            let b = entropy_scores(&renamed, &reference, &g).unwrap();
            prop_assert!((a.f - b.f).abs() < 1e-12);
            prop_assert_eq!(frame_accuracy(&renamed, &est, &g).unwrap(), 0.0);
        }

        #[test]
        fn halving_the_hop_barely_moves_frame_measures(seed in any::<u64>()) {
            let est = random_timeline(seed, 60.0, 8);
            let reference = random_timeline(seed.wrapping_add(1), 60.0, 8);
            let (g1, g2) = (EvalFrameGrid::new(0.1).unwrap(), EvalFrameGrid::new(0.05).unwrap());
            let d = |f: &dyn Fn(&EvalFrameGrid) -> f64| (f(&g1) - f(&g2)).abs();
            prop_assert!(d(&|g| frame_accuracy(&est, &reference, g).unwrap()) < 0.01);
            prop_assert!(d(&|g| pairwise_f(&est, &reference, g).unwrap().f) < 0.01);
            prop_assert!(d(&|g| entropy_scores(&est, &reference, g).unwrap().f) < 0.01);
        }

        #[test]
        fn f_is_harmonic_mean(p in 0.0f64..1.0, r in 0.0f64..1.0) {
            let s = Prf::new(p, r);
            if p + r > 0.0 {
                prop_assert!((s.f - 2.0 * p * r / (p + r)).abs() < 1e-15);
            }
        }
    }
}
