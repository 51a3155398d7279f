//! Synthetic multi-party sessions with planted cross-person dependencies.
//!
//! Discrete states live on a segment lattice and follow explicit Bernoulli
//! coupling rules, so an exact Bayes oracle exists for them (see
//! [`super::oracle`]). Continuous streams are rendered causally from the
//! lattice as Ornstein-Uhlenbeck-style smoothed noise with state-dependent
//! means: gaze points at the chosen target, head yaw tracks the current
//! speaker, the bite arm lifts while biting, and word embeddings sit near a
//! talk vector while speaking.
//!
//! Generation is a pure function of the seed: identical configs produce
//! byte-identical sessions.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{FrameSeries, ModalityKind, ModalitySet, SessionTimeline};

/// Coupling coefficients for the planted dependencies.
///
/// Speaking rule, per person i at segment t (sampled after the segment's
/// gaze targets):
///
/// ```text
/// logit = a_prev_speaker * [any other spoke at t-1]
///       + b_gaze * (fraction of others gazing at i - gaze_threshold)
///       + speak_bias
/// ```
///
/// Biting rule (sampled after the segment's speaking states):
///
/// ```text
/// logit = c_silent_others * [no other speaks at t]
///       + d_own_silence * [i was silent at t-1]
///       + bite_bias
/// ```
///
/// Labels are then flipped with probability `label_flip` (exogenous noise
/// that keeps the oracle closed-form).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub a_prev_speaker: f64,
    pub b_gaze: f64,
    pub gaze_threshold: f64,
    pub speak_bias: f64,
    pub c_silent_others: f64,
    pub d_own_silence: f64,
    pub bite_bias: f64,
    /// Probability that a person's gaze targets the previous segment's
    /// speaker instead of a uniform other.
    pub follow_speaker: f64,
    pub label_flip: f64,
}

impl CouplingConfig {
    /// Mildly stochastic conversation-like defaults.
    pub fn default_conversational() -> Self {
        CouplingConfig {
            a_prev_speaker: 1.0,
            b_gaze: 3.0,
            gaze_threshold: 0.5,
            speak_bias: -1.0,
            c_silent_others: 1.5,
            d_own_silence: 1.0,
            bite_bias: -2.0,
            follow_speaker: 0.6,
            label_flip: 0.0,
        }
    }

    /// The planted-dependency separation family: speaking is a near-
    /// deterministic function of *concurrent* gazes alone, gazes are drawn
    /// fresh every segment, and biting is a near-deterministic function of
    /// concurrent others' speaking. Nothing at segment t depends on
    /// anything before t, so a strictly-past observer is reduced to base
    /// rates.
    pub fn concurrent_only() -> Self {
        CouplingConfig {
            a_prev_speaker: 0.0,
            b_gaze: 48.0,
            gaze_threshold: 0.75,
            speak_bias: 0.0,
            c_silent_others: 24.0,
            d_own_silence: 0.0,
            bite_bias: -12.0,
            follow_speaker: 0.0,
            label_flip: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_sessions: usize,
    pub persons_per_session: usize,
    pub duration_s: f64,
    pub fps: f64,
    /// Lattice granularity of the discrete states.
    pub segment_seconds: f64,
    pub seed: u64,
    pub modalities: ModalitySet,
    pub coupling: CouplingConfig,
    /// Scale of the OU noise on continuous channels.
    pub continuous_noise: f64,
}

impl SyntheticConfig {
    /// Mirrors the recorded corpus: 30 triadic sessions.
    pub fn default_corpus() -> Self {
        SyntheticConfig {
            num_sessions: 30,
            persons_per_session: 3,
            duration_s: 120.0,
            fps: 15.0,
            segment_seconds: 3.0,
            seed: 0,
            modalities: ModalitySet::full_default(8, 8),
            coupling: CouplingConfig::default_conversational(),
            continuous_noise: 0.05,
        }
    }

    /// Small fast profile: 8 sessions, reduced modalities, concurrent-only
    /// couplings.
    pub fn smoke() -> Self {
        SyntheticConfig {
            num_sessions: 8,
            persons_per_session: 3,
            duration_s: 126.0,
            fps: 5.0,
            segment_seconds: 3.0,
            seed: 7,
            modalities: ModalitySet::smoke_default(),
            coupling: CouplingConfig::concurrent_only(),
            continuous_noise: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_sessions == 0
            || self.persons_per_session < 2
            || !(self.duration_s > 0.0)
            || !(self.fps > 0.0)
            || !(self.segment_seconds > 0.0)
        {
            return Err(Error::config("synthetic config fields out of range"));
        }
        if !(0.0..=0.5).contains(&self.coupling.label_flip) {
            return Err(Error::config("label_flip must be in [0, 0.5]"));
        }
        if !(0.0..=1.0).contains(&self.coupling.follow_speaker) {
            return Err(Error::config("follow_speaker must be a probability"));
        }
        Ok(())
    }

    pub fn num_segments(&self) -> usize {
        (self.duration_s / self.segment_seconds).floor() as usize
    }

    pub fn frames_per_segment(&self) -> usize {
        (self.segment_seconds * self.fps).round() as usize
    }
}

/// Ground-truth lattice states for one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentState {
    pub gaze_target: Vec<usize>,
    pub speaking: Vec<bool>,
    pub biting: Vec<bool>,
}

/// Per-session planted truth, one entry per lattice segment.
pub type LatentRecord = Vec<SegmentState>;

/// A generated session: rendered frame streams plus the lattice states they
/// were rendered from.
#[derive(Debug, Clone)]
pub struct SyntheticSession {
    pub timeline: SessionTimeline,
    pub latent: LatentRecord,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Lowest-index speaker of a segment, the "conversational floor holder"
/// that gaze-following targets.
pub(crate) fn floor_holder(state: &SegmentState) -> Option<usize> {
    state.speaking.iter().position(|s| *s)
}

pub(crate) fn speak_logit(c: &CouplingConfig, spoke_other_prev: bool, gaze_frac: f64) -> f64 {
    c.a_prev_speaker * f64::from(spoke_other_prev)
        + c.b_gaze * (gaze_frac - c.gaze_threshold)
        + c.speak_bias
}

pub(crate) fn bite_logit(c: &CouplingConfig, silent_others: bool, own_silence_prev: bool) -> f64 {
    c.c_silent_others * f64::from(silent_others)
        + c.d_own_silence * f64::from(own_silence_prev)
        + c.bite_bias
}

pub(crate) fn flip(p: f64, rho: f64) -> f64 {
    p + rho * (1.0 - 2.0 * p)
}

fn draw_lattice(config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> LatentRecord {
    let p = config.persons_per_session;
    let c = &config.coupling;
    let segments = config.num_segments();
    let mut record: LatentRecord = Vec::with_capacity(segments);
    for s in 0..segments {
        let prev = if s > 0 { Some(&record[s - 1]) } else { None };
        let prev_holder = prev.and_then(floor_holder);

        // gaze targets for everyone, drawn first
        let mut gaze_target = Vec::with_capacity(p);
        for i in 0..p {
            let follow = match prev_holder {
                Some(h) if h != i => rng.random::<f64>() < c.follow_speaker,
                _ => false,
            };
            let target = if follow {
                prev_holder.unwrap()
            } else {
                let mut t = rng.random_range(0..p - 1);
                if t >= i {
                    t += 1;
                }
                t
            };
            gaze_target.push(target);
        }

        // speaking from concurrent gazes and the previous floor
        let mut speaking = Vec::with_capacity(p);
        for i in 0..p {
            let gazers = gaze_target
                .iter()
                .enumerate()
                .filter(|(j, t)| *j != i && **t == i)
                .count();
            let gaze_frac = gazers as f64 / (p - 1) as f64;
            let spoke_other_prev = prev
                .map(|st| st.speaking.iter().enumerate().any(|(j, s)| j != i && *s))
                .unwrap_or(false);
            let prob = flip(
                sigmoid(speak_logit(c, spoke_other_prev, gaze_frac)),
                c.label_flip,
            );
            speaking.push(rng.random::<f64>() < prob);
        }

        // biting from concurrent others' speaking and own previous silence
        let mut biting = Vec::with_capacity(p);
        for i in 0..p {
            let silent_others = !speaking.iter().enumerate().any(|(j, s)| j != i && *s);
            let own_silence_prev = prev.map(|st| !st.speaking[i]).unwrap_or(true);
            let prob = flip(
                sigmoid(bite_logit(c, silent_others, own_silence_prev)),
                c.label_flip,
            );
            biting.push(rng.random::<f64>() < prob);
        }

        record.push(SegmentState {
            gaze_target,
            speaking,
            biting,
        });
    }
    record
}

/// Seat direction of person `i` on the unit circle.
fn seat(i: usize, p: usize) -> (f64, f64) {
    let angle = std::f64::consts::TAU * i as f64 / p as f64;
    (angle.cos(), angle.sin())
}

/// Unit vector from person `i` toward person `j`'s seat.
pub(crate) fn gaze_direction(i: usize, j: usize, p: usize) -> (f64, f64) {
    let (xi, yi) = seat(i, p);
    let (xj, yj) = seat(j, p);
    let (dx, dy) = (xj - xi, yj - yi);
    let norm = (dx * dx + dy * dy).sqrt().max(1e-9);
    (dx / norm, dy / norm)
}

/// One OU step toward `mean`.
fn ou_step(state: f64, mean: f64, noise: f64, rng: &mut ChaCha8Rng) -> f64 {
    let pull = 0.3;
    state + pull * (mean - state) + rng.random_range(-noise..noise)
}

struct Renderer<'a> {
    config: &'a SyntheticConfig,
    latent: &'a LatentRecord,
}

impl Renderer<'_> {
    fn frames(&self) -> usize {
        self.latent.len() * self.config.frames_per_segment()
    }

    fn render_continuous<F>(&self, channels: usize, mean_of: F, rng: &mut ChaCha8Rng) -> Array2<f64>
    where
        F: Fn(usize, usize) -> f64, // (segment, channel) -> target mean
    {
        let fpseg = self.config.frames_per_segment();
        let mut values = Array2::zeros((self.frames(), channels));
        let mut state: Vec<f64> = (0..channels).map(|c| mean_of(0, c)).collect();
        for (s, _) in self.latent.iter().enumerate() {
            for f in 0..fpseg {
                let row = s * fpseg + f;
                for (c, st) in state.iter_mut().enumerate() {
                    *st = ou_step(*st, mean_of(s, c), self.config.continuous_noise, rng);
                    values[(row, c)] = *st;
                }
            }
        }
        values
    }

    /// Segment-constant binary stream (speaking status).
    fn render_discrete<F>(&self, flag_of: F) -> Array2<f64>
    where
        F: Fn(usize) -> bool,
    {
        let fpseg = self.config.frames_per_segment();
        let mut values = Array2::zeros((self.frames(), 1));
        for s in 0..self.latent.len() {
            if flag_of(s) {
                for f in 0..fpseg {
                    values[(s * fpseg + f, 0)] = 1.0;
                }
            }
        }
        values
    }
}

fn render_person_streams(
    config: &SyntheticConfig,
    latent: &LatentRecord,
    person: usize,
    rng: &mut ChaCha8Rng,
) -> BTreeMap<ModalityKind, FrameSeries> {
    let p = config.persons_per_session;
    let renderer = Renderer { config, latent };
    let fpseg = config.frames_per_segment();
    let mut streams = BTreeMap::new();
    for modality in config.modalities.iter() {
        let values = match modality.kind {
            ModalityKind::Gaze => renderer.render_continuous(
                modality.channel_count,
                |s, c| {
                    let (dx, dy) = gaze_direction(person, latent[s].gaze_target[person], p);
                    match c {
                        0 => dx,
                        1 => dy,
                        _ => 0.0,
                    }
                },
                rng,
            ),
            ModalityKind::Headpose => renderer.render_continuous(
                modality.channel_count,
                |s, c| {
                    // yaw follows the floor holder, pitch dips while biting
                    match c {
                        0 => floor_holder(&latent[s])
                            .map(|h| gaze_direction(person, h, p).0 * 0.5)
                            .unwrap_or(0.0),
                        1 => {
                            if latent[s].biting[person] {
                                -0.4
                            } else {
                                0.0
                            }
                        }
                        _ => 0.0,
                    }
                },
                rng,
            ),
            ModalityKind::Pose => renderer.render_continuous(
                modality.channel_count,
                |s, c| {
                    // static skeleton plus an arm channel that lifts on bites
                    let base = (c as f64 * 0.37).sin() * 0.5;
                    if c < 2 && latent[s].biting[person] {
                        base + 0.8
                    } else if latent[s].speaking[person] {
                        base + 0.1
                    } else {
                        base
                    }
                },
                rng,
            ),
            ModalityKind::Word => renderer.render_continuous(
                modality.channel_count,
                |s, c| {
                    if latent[s].speaking[person] && c % 2 == 0 {
                        0.8
                    } else {
                        0.0
                    }
                },
                rng,
            ),
            ModalityKind::Speaker => renderer.render_discrete(|s| latent[s].speaking[person]),
            ModalityKind::Bite => {
                // at least one frame per biting segment, sparse otherwise
                let mut values = Array2::zeros((latent.len() * fpseg, 1));
                for s in 0..latent.len() {
                    if latent[s].biting[person] {
                        let hits = 1 + rng.random_range(0..3usize.min(fpseg));
                        for _ in 0..hits {
                            let f = rng.random_range(0..fpseg);
                            values[(s * fpseg + f, 0)] = 1.0;
                        }
                    }
                }
                values
            }
        };
        let series = FrameSeries::new(*modality, config.fps, values).expect("rendered series");
        streams.insert(modality.kind, series);
    }
    streams
}

/// Generates the configured number of sessions. Deterministic in the seed.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<SyntheticSession>> {
    config.validate()?;
    let mut sessions = Vec::with_capacity(config.num_sessions);
    for idx in 0..config.num_sessions {
        let mut rng = ChaCha8Rng::seed_from_u64(
            config
                .seed
                .wrapping_add((idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let latent = draw_lattice(config, &mut rng);
        let mut streams = BTreeMap::new();
        for person in 0..config.persons_per_session {
            for (kind, series) in render_person_streams(config, &latent, person, &mut rng) {
                streams.insert((person, kind), series);
            }
        }
        let duration = latent.len() as f64 * config.segment_seconds;
        let persons = (0..config.persons_per_session)
            .map(|i| format!("p{i}"))
            .collect();
        let timeline = SessionTimeline::new(
            format!("synth{idx:03}"),
            persons,
            &config.modalities,
            streams,
            duration,
        )?;
        sessions.push(SyntheticSession { timeline, latent });
    }
    Ok(sessions)
}
