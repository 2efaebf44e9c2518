//! Structural annotations and the 7-class function taxonomy.
//!
//! Raw annotations come from heterogeneous datasets whose label vocabularies
//! disagree (`refrain` vs `chorus`, `verse a`, `instchorus`, ...). Every raw
//! label is folded onto one of seven [`FunctionLabel`]s by an ordered
//! substring scan: the first entry of [`SUBSTRING_RULES`] contained in the
//! lowercased label decides the class, and labels matching nothing become
//! [`FunctionLabel::Inst`].
//!
//! The on-disk format is plain text, one `<time> <label>` row per line,
//! `#` starting a comment, and a mandatory final row labelled `end`:
//!
//! ```text
//! # time  label
//! 0.0     intro
//! 10.2    verse
//! 55.0    end
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the seven semantic section functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionLabel {
    Intro,
    Verse,
    Chorus,
    Bridge,
    Inst,
    Outro,
    Silence,
}

impl FunctionLabel {
    /// All classes in their fixed taxonomy order. Curve and logit indices
    /// follow this order everywhere in the crate.
    pub const ALL: [FunctionLabel; 7] = [
        FunctionLabel::Intro,
        FunctionLabel::Verse,
        FunctionLabel::Chorus,
        FunctionLabel::Bridge,
        FunctionLabel::Inst,
        FunctionLabel::Outro,
        FunctionLabel::Silence,
    ];

    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FunctionLabel::Intro => "intro",
            FunctionLabel::Verse => "verse",
            FunctionLabel::Chorus => "chorus",
            FunctionLabel::Bridge => "bridge",
            FunctionLabel::Inst => "inst",
            FunctionLabel::Outro => "outro",
            FunctionLabel::Silence => "silence",
        }
    }
}

impl fmt::Display for FunctionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown function label {s:?}")))
    }
}

/// Result of converting a raw label: a taxonomy class, or the end-of-song marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvertedLabel {
    Function(FunctionLabel),
    EndMarker,
}

/// Ordered (substring, class) pairs. Earlier entries take priority, which is
/// why `pre-chorus` lands on verse and `instrumentalverse` on verse.
pub const SUBSTRING_RULES: [(&str, FunctionLabel); 26] = {
    use FunctionLabel::*;
    [
        ("silence", Silence),
        ("pre-chorus", Verse),
        ("prechorus", Verse),
        ("refrain", Chorus),
        ("chorus", Chorus),
        ("theme", Chorus),
        ("stutter", Chorus),
        ("verse", Verse),
        ("rap", Verse),
        ("section", Verse),
        ("slow", Verse),
        ("build", Verse),
        ("dialog", Verse),
        ("intro", Intro),
        ("fadein", Intro),
        ("opening", Intro),
        ("bridge", Bridge),
        ("trans", Bridge),
        ("out", Outro),
        ("coda", Outro),
        ("ending", Outro),
        ("break", Inst),
        ("inst", Inst),
        ("interlude", Inst),
        ("impro", Inst),
        ("solo", Inst),
    ]
};

/// Label that marks an unparsed section in some exports; see [`repair_no_function`].
pub const NO_FUNCTION: &str = "no_function";

/// Maps a free-form label onto the taxonomy. Total: unmatched labels are `inst`.
pub fn convert_label(raw: &str) -> ConvertedLabel {
    let lower = raw.to_lowercase();
    if lower == "end" {
        return ConvertedLabel::EndMarker;
    }
    let class = SUBSTRING_RULES
        .iter()
        .find(|(needle, _)| lower.contains(needle))
        .map(|&(_, class)| class)
        .unwrap_or(FunctionLabel::Inst);
    ConvertedLabel::Function(class)
}

/// A raw annotation row: onset time in seconds and the label as written.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRow {
    pub time: f64,
    pub label: String,
}

/// Rows of a single annotation file plus its end-of-song timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAnnotation {
    rows: Vec<AnnotationRow>,
    end_time: f64,
}

impl RawAnnotation {
    pub fn new(rows: Vec<AnnotationRow>, end_time: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("annotation has no section rows".into()));
        }
        for row in &rows {
            if !row.time.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite time in row {:?}",
                    row.label
                )));
            }
        }
        if rows[0].time < 0.0 {
            return Err(Error::Validation(format!(
                "negative first time {}",
                rows[0].time
            )));
        }
        for pair in rows.windows(2) {
            if pair[1].time <= pair[0].time {
                return Err(Error::Validation(format!(
                    "times not strictly increasing: {} then {}",
                    pair[0].time, pair[1].time
                )));
            }
        }
        let last = rows[rows.len() - 1].time;
        if !(end_time.is_finite() && end_time > last) {
            return Err(Error::Validation(format!(
                "end time {end_time} must exceed last row time {last}"
            )));
        }
        Ok(Self { rows, end_time })
    }

    pub fn rows(&self) -> &[AnnotationRow] {
        &self.rows
    }

    pub fn end_time(&self) -> f64 {
        self.end_time
    }

    /// Renders the annotation back to the text file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&format!("{} {}\n", fmt_time(row.time), row.label));
        }
        out.push_str(&format!("{} end\n", fmt_time(self.end_time)));
        out
    }
}

fn fmt_time(t: f64) -> String {
    // Keep a trailing ".0" on integral times so files read naturally.
    if t.fract() == 0.0 {
        format!("{t:.1}")
    } else {
        format!("{t}")
    }
}

/// Parses the plain-text annotation format.
pub fn parse_annotation(text: &str) -> Result<RawAnnotation> {
    let mut rows = Vec::new();
    let mut end_time = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => line,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        if end_time.is_some() {
            return Err(Error::Parse {
                line: line_no,
                message: "row after the \"end\" marker".into(),
            });
        }
        let (time_str, label) = content
            .split_once(|c: char| c.is_whitespace())
            .map(|(t, l)| (t, l.trim()))
            .ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected \"<time> <label>\", got {content:?}"),
            })?;
        let time: f64 = time_str.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid time {time_str:?}"),
        })?;
        if label.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty label".into(),
            });
        }
        if convert_label(label) == ConvertedLabel::EndMarker {
            end_time = Some(time);
        } else {
            rows.push(AnnotationRow {
                time,
                label: label.to_string(),
            });
        }
    }
    let end_time = end_time.ok_or(Error::MissingEnd)?;
    RawAnnotation::new(rows, end_time)
}

/// Replaces every `no_function` label with the nearest preceding row's label.
/// A leading `no_function` has no predecessor and becomes `silence`.
pub fn repair_no_function(raw: &RawAnnotation) -> RawAnnotation {
    let mut rows = raw.rows.clone();
    let mut previous: Option<String> = None;
    for row in &mut rows {
        if row.label == NO_FUNCTION {
            row.label = previous
                .clone()
                .unwrap_or_else(|| FunctionLabel::Silence.name().to_string());
        }
        previous = Some(row.label.clone());
    }
    RawAnnotation {
        rows,
        end_time: raw.end_time,
    }
}

/// One labelled section `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub label: FunctionLabel,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// A contiguous partition of `[0, duration]` into labelled segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TimelineRepr", into = "TimelineRepr")]
pub struct SegmentTimeline {
    segments: Vec<Segment>,
    duration: f64,
}

#[derive(Serialize, Deserialize)]
struct TimelineRepr {
    duration: f64,
    segments: Vec<Segment>,
}

impl TryFrom<TimelineRepr> for SegmentTimeline {
    type Error = Error;

    fn try_from(r: TimelineRepr) -> Result<Self> {
        SegmentTimeline::new(r.segments, r.duration)
    }
}

impl From<SegmentTimeline> for TimelineRepr {
    fn from(t: SegmentTimeline) -> Self {
        TimelineRepr {
            duration: t.duration,
            segments: t.segments,
        }
    }
}

impl SegmentTimeline {
    pub fn new(segments: Vec<Segment>, duration: f64) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::Validation("timeline has no segments".into()))?;
        if first.start != 0.0 {
            return Err(Error::Validation(format!(
                "first segment starts at {}",
                first.start
            )));
        }
        for s in &segments {
            if !(s.end > s.start) {
                return Err(Error::Validation(format!(
                    "segment [{}, {}) has non-positive duration",
                    s.start, s.end
                )));
            }
        }
        for pair in segments.windows(2) {
            if pair[1].start != pair[0].end {
                return Err(Error::Validation(format!(
                    "gap or overlap between {} and {}",
                    pair[0].end, pair[1].start
                )));
            }
        }
        let last = segments[segments.len() - 1].end;
        if last != duration {
            return Err(Error::Validation(format!(
                "last segment ends at {last}, duration is {duration}"
            )));
        }
        Ok(Self { segments, duration })
    }

    /// Builds a timeline from `(start, label)` onsets and the song end.
    pub fn from_onsets(onsets: &[(f64, FunctionLabel)], duration: f64) -> Result<Self> {
        let segments = onsets
            .iter()
            .enumerate()
            .map(|(i, &(start, label))| Segment {
                start,
                end: onsets.get(i + 1).map_or(duration, |next| next.0),
                label,
            })
            .collect();
        Self::new(segments, duration)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Internal segment edges, excluding the song start and end.
    pub fn boundaries(&self) -> Vec<f64> {
        self.segments[1..].iter().map(|s| s.start).collect()
    }

    /// Label of the segment containing `t`; times at or past the end map to
    /// the last segment.
    pub fn label_at(&self, t: f64) -> FunctionLabel {
        let idx = self.segments.partition_point(|s| s.end <= t);
        self.segments[idx.min(self.segments.len() - 1)].label
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Converts validated rows into a timeline. Adjacent rows whose labels map to
/// the same class stay separate segments, so their shared edge remains a
/// boundary.
pub fn to_timeline(raw: &RawAnnotation) -> Result<SegmentTimeline> {
    let onsets = raw
        .rows
        .iter()
        .map(|row| match convert_label(&row.label) {
            ConvertedLabel::Function(class) => Ok((row.time, class)),
            // parse_annotation never stores "end" as a row
            ConvertedLabel::EndMarker => Err(Error::Validation(format!(
                "\"end\" used as a section label at {}",
                row.time
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    SegmentTimeline::from_onsets(&onsets, raw.end_time)
}
