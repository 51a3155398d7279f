//! Domain vocabulary for multi-party signal streams: persons, modalities,
//! frame series, and the windowing/segmentation/labeling rules that turn a
//! recorded session into a grid of fixed-length segments with binary labels.
//!
//! Everything here is a pure function over immutable inputs; segmenting
//! distinct sessions concurrently is safe.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six signal kinds handled by the pipeline. `Speaker` and `Bite` are
/// binary per frame; the rest are real-valued channel vectors. `Word` may be
/// configured as discrete instead (a per-segment binary flag) when no frame
/// embeddings are available.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum ModalityKind {
    Gaze,
    Headpose,
    Pose,
    Word,
    Speaker,
    Bite,
}

impl ModalityKind {
    pub const ALL: [ModalityKind; 6] = [
        ModalityKind::Gaze,
        ModalityKind::Headpose,
        ModalityKind::Pose,
        ModalityKind::Word,
        ModalityKind::Speaker,
        ModalityKind::Bite,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModalityKind::Gaze => "gaze",
            ModalityKind::Headpose => "headpose",
            ModalityKind::Pose => "pose",
            ModalityKind::Word => "word",
            ModalityKind::Speaker => "speaker",
            ModalityKind::Bite => "bite",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ModalityKind::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown modality `{s}`")))
    }
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A modality plus its representation: channel count for continuous streams,
/// or a discrete (binary per frame) stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modality {
    pub kind: ModalityKind,
    /// Number of real channels per frame. Must be > 0 for continuous
    /// modalities; ignored (1) for discrete ones.
    pub channel_count: usize,
    pub is_discrete: bool,
}

impl Modality {
    pub fn continuous(kind: ModalityKind, channel_count: usize) -> Result<Self> {
        if channel_count == 0 {
            return Err(Error::config(format!(
                "continuous modality {kind} needs channel_count > 0"
            )));
        }
        Ok(Modality {
            kind,
            channel_count,
            is_discrete: false,
        })
    }

    pub fn discrete(kind: ModalityKind) -> Self {
        Modality {
            kind,
            channel_count: 1,
            is_discrete: true,
        }
    }
}

/// The fixed modality set for a dataset, identical across persons and
/// sessions. Kept ordered by `ModalityKind` so token layouts are stable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySet {
    modalities: Vec<Modality>,
}

impl ModalitySet {
    pub fn new(mut modalities: Vec<Modality>) -> Result<Self> {
        modalities.sort_by_key(|m| m.kind);
        for pair in modalities.windows(2) {
            if pair[0].kind == pair[1].kind {
                return Err(Error::config(format!(
                    "duplicate modality {}",
                    pair[0].kind
                )));
            }
        }
        if modalities.is_empty() {
            return Err(Error::config("modality set is empty"));
        }
        Ok(ModalitySet { modalities })
    }

    /// The full recording set: gaze(2), headpose(3), pose(2K), word embeddings,
    /// plus discrete speaker and bite streams.
    pub fn full_default(pose_keypoints: usize, word_dim: usize) -> Self {
        ModalitySet::new(vec![
            Modality::continuous(ModalityKind::Gaze, 2).unwrap(),
            Modality::continuous(ModalityKind::Headpose, 3).unwrap(),
            Modality::continuous(ModalityKind::Pose, 2 * pose_keypoints).unwrap(),
            Modality::continuous(ModalityKind::Word, word_dim).unwrap(),
            Modality::discrete(ModalityKind::Speaker),
            Modality::discrete(ModalityKind::Bite),
        ])
        .expect("default set is valid")
    }

    /// Reduced set used by the smoke profile: gaze + speaker + bite.
    pub fn smoke_default() -> Self {
        ModalitySet::new(vec![
            Modality::continuous(ModalityKind::Gaze, 2).unwrap(),
            Modality::discrete(ModalityKind::Speaker),
            Modality::discrete(ModalityKind::Bite),
        ])
        .expect("smoke set is valid")
    }

    pub fn len(&self) -> usize {
        self.modalities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modalities.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Modality> {
        self.modalities.iter()
    }

    pub fn get(&self, kind: ModalityKind) -> Option<&Modality> {
        self.modalities.iter().find(|m| m.kind == kind)
    }

    pub fn index_of(&self, kind: ModalityKind) -> Option<usize> {
        self.modalities.iter().position(|m| m.kind == kind)
    }

    pub fn at(&self, index: usize) -> &Modality {
        &self.modalities[index]
    }

    /// A copy of this set with one modality removed (ablation use). Errors if
    /// the removal would empty the set or the modality is absent.
    pub fn without(&self, kind: ModalityKind) -> Result<Self> {
        if self.get(kind).is_none() {
            return Err(Error::config(format!("modality {kind} not in set")));
        }
        let rest: Vec<Modality> = self
            .modalities
            .iter()
            .copied()
            .filter(|m| m.kind != kind)
            .collect();
        ModalitySet::new(rest)
    }

    /// A copy keeping only the listed modalities.
    pub fn keep_only(&self, kinds: &[ModalityKind]) -> Result<Self> {
        let rest: Vec<Modality> = self
            .modalities
            .iter()
            .copied()
            .filter(|m| kinds.contains(&m.kind))
            .collect();
        ModalitySet::new(rest)
    }
}

/// One person's stream for one modality: frames at a fixed rate.
///
/// Continuous frames are channel vectors; discrete frames hold 0.0/1.0 flags
/// in a single channel. All frames of a series have identical width.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    pub modality: Modality,
    pub fps: f64,
    /// Row = frame, column = channel.
    pub values: Array2<f64>,
}

impl FrameSeries {
    pub fn new(modality: Modality, fps: f64, values: Array2<f64>) -> Result<Self> {
        if !(fps > 0.0) {
            return Err(Error::config(format!("fps must be positive, got {fps}")));
        }
        let want = if modality.is_discrete {
            1
        } else {
            modality.channel_count
        };
        if values.ncols() != want {
            return Err(Error::shape(format!(
                "{} series has {} channels, expected {}",
                modality.kind,
                values.ncols(),
                want
            )));
        }
        if modality.is_discrete {
            for v in values.iter() {
                if *v != 0.0 && *v != 1.0 {
                    return Err(Error::config(format!(
                        "discrete {} stream contains non-binary value {v}",
                        modality.kind
                    )));
                }
            }
        }
        Ok(FrameSeries {
            modality,
            fps,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fps
    }
}

/// Resample a series to a lower frame rate by nearest-timestamp selection.
///
/// Output frame `j` lands at time `j / target_fps` and copies the source
/// frame whose timestamp is nearest. Discrete flags are copied, never
/// interpolated. Upsampling is refused.
pub fn downsample(series: &FrameSeries, target_fps: f64) -> Result<FrameSeries> {
    if !(target_fps > 0.0) {
        return Err(Error::config("target fps must be positive"));
    }
    if target_fps > series.fps {
        return Err(Error::config(format!(
            "upsampling unsupported: source {} fps < target {} fps",
            series.fps, target_fps
        )));
    }
    let n = series.len();
    let out_len = ((n as f64) * target_fps / series.fps).floor() as usize;
    let mut out = Array2::zeros((out_len, series.values.ncols()));
    for j in 0..out_len {
        let t = j as f64 / target_fps;
        let src = ((t * series.fps).round() as usize).min(n.saturating_sub(1));
        out.row_mut(j).assign(&series.values.row(src));
    }
    FrameSeries::new(series.modality, target_fps, out)
}

/// Person identifiers as listed in the session metadata; stream indexing is
/// by position in `persons`.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTimeline {
    pub session_id: String,
    pub persons: Vec<String>,
    pub streams: BTreeMap<(usize, ModalityKind), FrameSeries>,
    pub duration_s: f64,
}

impl SessionTimeline {
    /// Validates the cross-product completeness invariant: one stream per
    /// (person, modality) pair, all covering the session duration to within
    /// one frame.
    pub fn new(
        session_id: impl Into<String>,
        persons: Vec<String>,
        modalities: &ModalitySet,
        streams: BTreeMap<(usize, ModalityKind), FrameSeries>,
        duration_s: f64,
    ) -> Result<Self> {
        let session_id = session_id.into();
        if persons.len() < 2 {
            return Err(Error::config(format!(
                "session {session_id}: need at least 2 persons, got {}",
                persons.len()
            )));
        }
        for (p, _) in persons.iter().enumerate() {
            for m in modalities.iter() {
                let series = streams.get(&(p, m.kind)).ok_or_else(|| Error::config(
                    format!(
                        "session {session_id}: person {} is missing the {} stream",
                        persons[p], m.kind
                    ),
                ))?;
                let dur = series.duration_s();
                let tol = 1.0 / series.fps + 1e-9;
                if (dur - duration_s).abs() > tol {
                    return Err(Error::config(format!(
                        "session {session_id}: ({}, {}) covers {dur:.3}s, session is {duration_s:.3}s",
                        persons[p], m.kind
                    )));
                }
            }
        }
        for key in streams.keys() {
            if key.0 >= persons.len() || modalities.get(key.1).is_none() {
                return Err(Error::config(format!(
                    "session {session_id}: stream ({}, {}) outside the declared grid",
                    key.0, key.1
                )));
            }
        }
        Ok(SessionTimeline {
            session_id,
            persons,
            streams,
            duration_s,
        })
    }

    pub fn num_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn stream(&self, person: usize, kind: ModalityKind) -> &FrameSeries {
        &self.streams[&(person, kind)]
    }
}

/// Windowing parameters: `segments_per_window` segments of `segment_seconds`
/// each, windows advancing by `window_stride_s`, streams downsampled to
/// `target_fps` so each segment holds `frames_per_segment` frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub segment_seconds: f64,
    pub segments_per_window: usize,
    pub window_stride_s: f64,
    pub target_fps: f64,
    /// Fraction of speaking frames that must be *strictly exceeded* for a
    /// segment to be labeled speaking.
    pub speaking_threshold: f64,
}

impl SegmentConfig {
    /// The reference protocol: 12 x 3 s windows at 18 s stride, 15 fps.
    pub fn paper_default() -> Self {
        SegmentConfig {
            segment_seconds: 3.0,
            segments_per_window: 12,
            window_stride_s: 18.0,
            target_fps: 15.0,
            speaking_threshold: 0.30,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.segment_seconds > 0.0)
            || self.segments_per_window == 0
            || !(self.window_stride_s > 0.0)
            || !(self.target_fps > 0.0)
        {
            return Err(Error::config("segment config fields must be positive"));
        }
        if !(0.0..1.0).contains(&self.speaking_threshold) {
            return Err(Error::config("speaking threshold must be in [0, 1)"));
        }
        if self.frames_per_segment() < 1 {
            return Err(Error::config(
                "segment too short: fewer than one frame per segment",
            ));
        }
        Ok(())
    }

    pub fn window_seconds(&self) -> f64 {
        self.segment_seconds * self.segments_per_window as f64
    }

    pub fn frames_per_segment(&self) -> usize {
        (self.segment_seconds * self.target_fps).round() as usize
    }
}

/// Per-segment content: a continuous chunk (frames x channels) or the binary
/// label of a discrete stream over that segment.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentData {
    Continuous(Array2<f64>),
    Discrete(bool),
}

/// One window's (segment x person x modality) grid plus speaking/biting
/// labels per (segment, person).
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGrid {
    pub window_id: String,
    pub session_id: String,
    pub start_s: f64,
    pub num_segments: usize,
    pub num_persons: usize,
    pub modalities: ModalitySet,
    /// Indexed `t * (P * M) + person * M + modality`.
    data: Vec<SegmentData>,
    /// Row = segment, column = person.
    pub speaking: Array2<bool>,
    pub biting: Array2<bool>,
}

impl SegmentGrid {
    fn flat(&self, t: usize, person: usize, modality: usize) -> usize {
        (t * self.num_persons + person) * self.modalities.len() + modality
    }

    pub fn segment(&self, t: usize, person: usize, modality: usize) -> &SegmentData {
        &self.data[self.flat(t, person, modality)]
    }

    pub fn segment_mut(&mut self, t: usize, person: usize, modality: usize) -> &mut SegmentData {
        let i = self.flat(t, person, modality);
        &mut self.data[i]
    }

    /// A copy keeping only the listed modalities' token slots. Labels are
    /// carried over unchanged, so ablations that drop the speaker or bite
    /// stream still train and evaluate against the full-stream labels.
    pub fn restrict_to(&self, keep: &ModalitySet) -> Result<SegmentGrid> {
        let mut kept_indices = Vec::with_capacity(keep.len());
        for m in keep.iter() {
            let idx = self
                .modalities
                .index_of(m.kind)
                .ok_or_else(|| Error::config(format!(
                    "window {} has no {} tokens to keep",
                    self.window_id, m.kind
                )))?;
            kept_indices.push(idx);
        }
        let mut data = Vec::with_capacity(self.num_segments * self.num_persons * keep.len());
        for t in 0..self.num_segments {
            for person in 0..self.num_persons {
                for &idx in &kept_indices {
                    data.push(self.segment(t, person, idx).clone());
                }
            }
        }
        Ok(SegmentGrid {
            window_id: self.window_id.clone(),
            session_id: self.session_id.clone(),
            start_s: self.start_s,
            num_segments: self.num_segments,
            num_persons: self.num_persons,
            modalities: keep.clone(),
            data,
            speaking: self.speaking.clone(),
            biting: self.biting.clone(),
        })
    }
}

/// Labels a segment as speaking iff the fraction of speaking frames strictly
/// exceeds `threshold`.
pub fn label_speaking(frames: &[f64], threshold: f64) -> Result<bool> {
    if frames.is_empty() {
        return Err(Error::config("label_speaking on empty frame sequence"));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::config("speaking threshold must be in [0, 1)"));
    }
    let speaking = frames.iter().filter(|v| **v != 0.0).count();
    Ok((speaking as f64 / frames.len() as f64) > threshold)
}

/// Labels a segment as biting iff at least one frame flags a bite.
pub fn label_bite(frames: &[f64]) -> Result<bool> {
    if frames.is_empty() {
        return Err(Error::config("label_bite on empty frame sequence"));
    }
    Ok(frames.iter().any(|v| *v != 0.0))
}

/// Inverse-class-frequency weights `(negative, positive)` with
/// `w_c = total / (2 * count_c)`. An absent class gets weight 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub negative: f64,
    pub positive: f64,
    /// Set when one class was absent and its weight was zeroed.
    pub degenerate: bool,
}

impl ClassWeights {
    pub fn unit() -> Self {
        ClassWeights {
            negative: 1.0,
            positive: 1.0,
            degenerate: false,
        }
    }

    pub fn for_label(&self, label: bool) -> f64 {
        if label {
            self.positive
        } else {
            self.negative
        }
    }
}

pub fn class_weights(labels: &[bool]) -> Result<ClassWeights> {
    if labels.is_empty() {
        return Err(Error::config("class_weights on empty label sequence"));
    }
    let total = labels.len() as f64;
    let pos = labels.iter().filter(|l| **l).count() as f64;
    let neg = total - pos;
    let weight = |count: f64| if count == 0.0 { 0.0 } else { total / (2.0 * count) };
    let degenerate = pos == 0.0 || neg == 0.0;
    if degenerate {
        log::warn!(
            "class_weights: one class absent ({} positives / {} negatives); its weight is 0",
            pos,
            neg
        );
    }
    Ok(ClassWeights {
        negative: weight(neg),
        positive: weight(pos),
        degenerate,
    })
}

/// Splits a session into rolling windows of segment grids.
///
/// Windows start at 0, stride, 2*stride, ...; a window is emitted only if it
/// fits entirely inside the session. Streams are downsampled once to the
/// target fps; every continuous segment then holds exactly
/// `frames_per_segment` frames.
pub fn segment_session(
    timeline: &SessionTimeline,
    config: &SegmentConfig,
) -> Result<Vec<SegmentGrid>> {
    config.validate()?;
    if timeline.streams.is_empty() {
        return Err(Error::config("session has no streams"));
    }
    let window_s = config.window_seconds();
    let m = config.frames_per_segment();
    let p = timeline.num_persons();
    let modalities = collect_modalities(timeline)?;

    // Downsample each stream once up front.
    let mut resampled: BTreeMap<(usize, ModalityKind), FrameSeries> = BTreeMap::new();
    for (key, series) in &timeline.streams {
        resampled.insert(*key, downsample(series, config.target_fps)?);
    }

    let mut grids = Vec::new();
    let mut start = 0.0f64;
    let eps = 1e-9;
    while start + window_s <= timeline.duration_s + eps {
        let grid = build_window(timeline, &modalities, &resampled, config, start, m, p)?;
        if let Some(grid) = grid {
            grids.push(grid);
        } else {
            break; // ran out of frames near the session tail
        }
        start += config.window_stride_s;
    }
    Ok(grids)
}

fn collect_modalities(timeline: &SessionTimeline) -> Result<ModalitySet> {
    let mut seen: Vec<Modality> = Vec::new();
    for ((person, _), series) in &timeline.streams {
        if *person == 0 {
            seen.push(series.modality);
        }
    }
    ModalitySet::new(seen)
}

#[allow(clippy::too_many_arguments)]
fn build_window(
    timeline: &SessionTimeline,
    modalities: &ModalitySet,
    resampled: &BTreeMap<(usize, ModalityKind), FrameSeries>,
    config: &SegmentConfig,
    start_s: f64,
    m: usize,
    p: usize,
) -> Result<Option<SegmentGrid>> {
    let t_count = config.segments_per_window;
    let mods = modalities.len();
    let mut data = Vec::with_capacity(t_count * p * mods);
    let mut speaking = Array2::from_elem((t_count, p), false);
    let mut biting = Array2::from_elem((t_count, p), false);

    for t in 0..t_count {
        let seg_start_s = start_s + t as f64 * config.segment_seconds;
        let idx0 = (seg_start_s * config.target_fps).round() as usize;
        for person in 0..p {
            for modality in modalities.iter() {
                let series = &resampled[&(person, modality.kind)];
                if idx0 + m > series.len() {
                    return Ok(None);
                }
                let chunk = series.values.slice(ndarray::s![idx0..idx0 + m, ..]);
                if modality.is_discrete {
                    let frames: Vec<f64> = chunk.column(0).to_vec();
                    let flag = match modality.kind {
                        ModalityKind::Speaker => {
                            label_speaking(&frames, config.speaking_threshold)?
                        }
                        ModalityKind::Bite => label_bite(&frames)?,
                        // Discrete word path: same majority rule as speaker.
                        _ => label_speaking(&frames, config.speaking_threshold)?,
                    };
                    match modality.kind {
                        ModalityKind::Speaker => speaking[(t, person)] = flag,
                        ModalityKind::Bite => biting[(t, person)] = flag,
                        _ => {}
                    }
                    data.push(SegmentData::Discrete(flag));
                } else {
                    data.push(SegmentData::Continuous(chunk.to_owned()));
                }
            }
        }
    }

    // Labels must exist even when speaker/bite streams are ablated away from
    // the token layout; in that case they stay false and the caller is
    // expected to provide labels from an unablated pass.
    Ok(Some(SegmentGrid {
        window_id: format!("{}@{:.3}", timeline.session_id, start_s),
        session_id: timeline.session_id.clone(),
        start_s,
        num_segments: t_count,
        num_persons: p,
        modalities: modalities.clone(),
        data,
        speaking,
        biting,
    }))
}

/// Forward-fill NaN frames from the last valid frame; all-NaN prefixes are
/// zero-filled. Returns whether any fill happened.
pub fn forward_fill(series: &mut FrameSeries) -> bool {
    let mut filled = false;
    let ncols = series.values.ncols();
    for c in 0..ncols {
        let mut last = 0.0f64;
        let mut have_last = false;
        for r in 0..series.values.nrows() {
            let v = series.values[(r, c)];
            if v.is_nan() {
                series.values[(r, c)] = if have_last { last } else { 0.0 };
                filled = true;
            } else {
                last = v;
                have_last = true;
            }
        }
    }
    filled
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn constant_series(kind: ModalityKind, ch: usize, fps: f64, n: usize, v: f64) -> FrameSeries {
        let modality = Modality::continuous(kind, ch).unwrap();
        FrameSeries::new(modality, fps, Array2::from_elem((n, ch), v)).unwrap()
    }

    fn binary_series(kind: ModalityKind, fps: f64, flags: &[f64]) -> FrameSeries {
        let modality = Modality::discrete(kind);
        let values = Array2::from_shape_vec((flags.len(), 1), flags.to_vec()).unwrap();
        FrameSeries::new(modality, fps, values).unwrap()
    }

    #[test]
    fn downsample_identity() {
        let s = constant_series(ModalityKind::Gaze, 2, 30.0, 90, 1.5);
        let out = downsample(&s, 30.0).unwrap();
        assert_eq!(out.len(), 90);
        assert_eq!(out.values, s.values);
    }

    #[test]
    fn downsample_half_rate_takes_every_second_frame() {
        let modality = Modality::continuous(ModalityKind::Gaze, 1).unwrap();
        let values = Array2::from_shape_fn((90, 1), |(r, _)| r as f64);
        let s = FrameSeries::new(modality, 30.0, values).unwrap();
        let out = downsample(&s, 15.0).unwrap();
        assert_eq!(out.len(), 45);
        // Index oracle: source index = round(j * 30 / 15) = 2j.
        for j in 0..45 {
            assert_eq!(out.values[(j, 0)], (2 * j) as f64);
        }
    }

    #[test]
    fn downsample_rejects_upsampling() {
        let s = constant_series(ModalityKind::Gaze, 2, 30.0, 10, 0.0);
        assert!(downsample(&s, 60.0).is_err());
    }

    #[test]
    fn label_speaking_strict_at_boundary() {
        let mut frames = vec![0.0; 100];
        for f in frames.iter_mut().take(40) {
            *f = 1.0;
        }
        assert!(label_speaking(&frames, 0.30).unwrap());
        let mut frames = vec![0.0; 100];
        for f in frames.iter_mut().take(30) {
            *f = 1.0;
        }
        // exactly 30% is NOT speaking: strict inequality
        assert!(!label_speaking(&frames, 0.30).unwrap());
        assert!(!label_speaking(&vec![0.0; 90], 0.30).unwrap());
        assert!(label_speaking(&[], 0.30).is_err());
    }

    #[test]
    fn label_bite_is_or() {
        let mut frames = vec![0.0; 45];
        frames[17] = 1.0;
        assert!(label_bite(&frames).unwrap());
        assert!(!label_bite(&vec![0.0; 45]).unwrap());
        assert!(label_bite(&vec![1.0; 45]).unwrap());
        assert!(label_bite(&[]).is_err());
    }

    #[test]
    fn class_weights_formula() {
        let labels: Vec<bool> = std::iter::repeat(true)
            .take(50)
            .chain(std::iter::repeat(false).take(50))
            .collect();
        let w = class_weights(&labels).unwrap();
        assert_eq!((w.negative, w.positive), (1.0, 1.0));

        let labels: Vec<bool> = std::iter::repeat(true)
            .take(10)
            .chain(std::iter::repeat(false).take(90))
            .collect();
        let w = class_weights(&labels).unwrap();
        assert!((w.negative - 100.0 / 180.0).abs() < 1e-12);
        assert!((w.positive - 5.0).abs() < 1e-12);
        assert!(!w.degenerate);

        let labels = vec![false; 100];
        let w = class_weights(&labels).unwrap();
        assert_eq!((w.negative, w.positive), (0.5, 0.0));
        assert!(w.degenerate);

        assert!(class_weights(&[]).is_err());
    }

    fn timeline(duration_s: f64, fps: f64) -> SessionTimeline {
        let mods = ModalitySet::smoke_default();
        let n = (duration_s * fps).round() as usize;
        let mut streams = BTreeMap::new();
        for p in 0..3 {
            streams.insert(
                (p, ModalityKind::Gaze),
                constant_series(ModalityKind::Gaze, 2, fps, n, p as f64),
            );
            streams.insert(
                (p, ModalityKind::Speaker),
                binary_series(ModalityKind::Speaker, fps, &vec![0.0; n]),
            );
            streams.insert(
                (p, ModalityKind::Bite),
                binary_series(ModalityKind::Bite, fps, &vec![0.0; n]),
            );
        }
        SessionTimeline::new(
            "s0",
            vec!["a".into(), "b".into(), "c".into()],
            &mods,
            streams,
            duration_s,
        )
        .unwrap()
    }

    fn paper_cfg(fps: f64) -> SegmentConfig {
        SegmentConfig {
            target_fps: fps,
            ..SegmentConfig::paper_default()
        }
    }

    #[test]
    fn segment_session_window_starts() {
        // Oracle: enumerate start in {0, 18, 36, ...} with start + 36 <= 90.
        let tl = timeline(90.0, 10.0);
        let grids = segment_session(&tl, &paper_cfg(10.0)).unwrap();
        let starts: Vec<f64> = grids.iter().map(|g| g.start_s).collect();
        assert_eq!(starts, vec![0.0, 18.0, 36.0, 54.0]);
    }

    #[test]
    fn segment_session_exact_window() {
        let tl = timeline(36.0, 10.0);
        let grids = segment_session(&tl, &paper_cfg(10.0)).unwrap();
        assert_eq!(grids.len(), 1);
        assert_eq!(grids[0].num_segments, 12);
        let m = paper_cfg(10.0).frames_per_segment();
        for t in 0..12 {
            match grids[0].segment(t, 0, 0) {
                SegmentData::Continuous(chunk) => assert_eq!(chunk.nrows(), m),
                _ => panic!("gaze segment must be continuous"),
            }
        }
    }

    #[test]
    fn segment_session_too_short_yields_empty() {
        let tl = timeline(35.0, 10.0);
        let grids = segment_session(&tl, &paper_cfg(10.0)).unwrap();
        assert!(grids.is_empty());
    }

    #[test]
    fn missing_stream_is_rejected() {
        let mods = ModalitySet::smoke_default();
        let mut streams = BTreeMap::new();
        let n = 100;
        for p in 0..2 {
            streams.insert(
                (p, ModalityKind::Gaze),
                constant_series(ModalityKind::Gaze, 2, 10.0, n, 0.0),
            );
            streams.insert(
                (p, ModalityKind::Speaker),
                binary_series(ModalityKind::Speaker, 10.0, &vec![0.0; n]),
            );
        }
        // bite stream missing for everyone
        let err = SessionTimeline::new(
            "s1",
            vec!["a".into(), "b".into()],
            &mods,
            streams,
            10.0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("bite"));
    }

    #[test]
    fn forward_fill_replaces_nans() {
        let modality = Modality::continuous(ModalityKind::Gaze, 1).unwrap();
        let values =
            Array2::from_shape_vec((4, 1), vec![f64::NAN, 1.0, f64::NAN, 2.0]).unwrap();
        let mut s = FrameSeries {
            modality,
            fps: 10.0,
            values,
        };
        assert!(forward_fill(&mut s));
        let got: Vec<f64> = s.values.column(0).to_vec();
        assert_eq!(got, vec![0.0, 1.0, 1.0, 2.0]);
    }
}
