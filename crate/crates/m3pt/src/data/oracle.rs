//! Exact Bayes oracle for the synthetic generative family.
//!
//! Given the coupling coefficients and a session's lattice record, computes
//! the posterior probability of each speaking/biting label under two
//! observation scopes:
//!
//! - `Full`: everything the blockwise-masked model may legally see when
//!   predicting (t, i) — all persons' past plus *other* persons' concurrent
//!   states. The rule inputs are then observed and the posterior is the
//!   rule probability itself.
//! - `PastOnly`: strictly-past states only, the information available under
//!   the strict-past ablation mask. Concurrent quantities are marginalized
//!   exactly by enumerating the joint gaze assignment of the segment.
//!
//! Thresholding the posteriors at one-half gives the best achievable
//! predictions per scope; their F1 against the realized labels is the
//! yardstick the trained models are compared to.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::synthetic::{
    bite_logit, flip, floor_holder, sigmoid, speak_logit, CouplingConfig, LatentRecord,
    SegmentState,
};
use crate::error::{Error, Result};
use crate::eval::{confusion, metrics};
use crate::model::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleScope {
    Full,
    PastOnly,
}

/// Posteriors per (segment, person) for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePosteriors {
    pub speaking: Array2<f64>,
    pub biting: Array2<f64>,
}

/// Distribution over one person's gaze target given the past.
fn gaze_distribution(
    coupling: &CouplingConfig,
    person: usize,
    persons: usize,
    prev_holder: Option<usize>,
) -> Vec<(usize, f64)> {
    let uniform = 1.0 / (persons - 1) as f64;
    (0..persons)
        .filter(|j| *j != person)
        .map(|j| {
            let p = match prev_holder {
                Some(h) if h != person => {
                    let follow = coupling.follow_speaker;
                    if j == h {
                        follow + (1.0 - follow) * uniform
                    } else {
                        (1.0 - follow) * uniform
                    }
                }
                _ => uniform,
            };
            (j, p)
        })
        .collect()
}

/// Enumerates joint gaze assignments for the listed persons, yielding
/// (targets indexed by the persons' order, joint probability).
fn enumerate_gazes(
    coupling: &CouplingConfig,
    who: &[usize],
    persons: usize,
    prev_holder: Option<usize>,
) -> Vec<(Vec<usize>, f64)> {
    let mut combos: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
    for &person in who {
        let dist = gaze_distribution(coupling, person, persons, prev_holder);
        let mut next = Vec::with_capacity(combos.len() * dist.len());
        for (targets, prob) in &combos {
            for (target, p) in &dist {
                let mut t = targets.clone();
                t.push(*target);
                next.push((t, prob * p));
            }
        }
        combos = next;
    }
    combos
}

fn spoke_other_prev(prev: Option<&SegmentState>, i: usize) -> bool {
    prev.map(|st| st.speaking.iter().enumerate().any(|(j, s)| j != i && *s))
        .unwrap_or(false)
}

fn speak_prob(coupling: &CouplingConfig, spoke_prev: bool, gaze_frac: f64) -> f64 {
    flip(
        sigmoid(speak_logit(coupling, spoke_prev, gaze_frac)),
        coupling.label_flip,
    )
}

fn bite_prob(coupling: &CouplingConfig, silent_others: bool, own_silence_prev: bool) -> f64 {
    flip(
        sigmoid(bite_logit(coupling, silent_others, own_silence_prev)),
        coupling.label_flip,
    )
}

/// Exact per-(segment, person) posteriors for one session's lattice.
pub fn bayes_oracle(
    coupling: &CouplingConfig,
    persons: usize,
    latent: &LatentRecord,
    scope: OracleScope,
) -> Result<OraclePosteriors> {
    if latent.is_empty() {
        return Err(Error::config("bayes_oracle: empty lattice"));
    }
    let segments = latent.len();
    let mut speaking = Array2::zeros((segments, persons));
    let mut biting = Array2::zeros((segments, persons));

    for s in 0..segments {
        let prev = if s > 0 { Some(&latent[s - 1]) } else { None };
        let prev_holder = prev.and_then(|p| floor_holder(p));
        let state = &latent[s];

        for i in 0..persons {
            let spoke_prev = spoke_other_prev(prev, i);
            let own_silence_prev = prev.map(|st| !st.speaking[i]).unwrap_or(true);

            match scope {
                OracleScope::Full => {
                    // rule inputs observed: others' concurrent gazes and
                    // speaking states
                    let gazers = state
                        .gaze_target
                        .iter()
                        .enumerate()
                        .filter(|(j, t)| *j != i && **t == i)
                        .count();
                    let gaze_frac = gazers as f64 / (persons - 1) as f64;
                    speaking[(s, i)] = speak_prob(coupling, spoke_prev, gaze_frac);

                    let silent_others =
                        !state.speaking.iter().enumerate().any(|(j, sp)| j != i && *sp);
                    biting[(s, i)] = bite_prob(coupling, silent_others, own_silence_prev);
                }
                OracleScope::PastOnly => {
                    // marginalize others' gazes for the speaking posterior
                    let others: Vec<usize> = (0..persons).filter(|j| *j != i).collect();
                    let mut p_speak = 0.0;
                    for (targets, prob) in
                        enumerate_gazes(coupling, &others, persons, prev_holder)
                    {
                        let gazers = targets.iter().filter(|t| **t == i).count();
                        let gaze_frac = gazers as f64 / (persons - 1) as f64;
                        p_speak += prob * speak_prob(coupling, spoke_prev, gaze_frac);
                    }
                    speaking[(s, i)] = p_speak;

                    // marginalize the whole segment's gazes (every other
                    // person's speaking depends on all gazes, including
                    // person i's own) for the biting posterior
                    let everyone: Vec<usize> = (0..persons).collect();
                    let mut p_bite = 0.0;
                    for (targets, prob) in
                        enumerate_gazes(coupling, &everyone, persons, prev_holder)
                    {
                        let mut p_all_silent = 1.0;
                        for &j in &others {
                            let gazers = everyone
                                .iter()
                                .enumerate()
                                .filter(|(k_idx, k)| targets[*k_idx] == j && **k != j)
                                .count();
                            let gaze_frac = gazers as f64 / (persons - 1) as f64;
                            let spoke_prev_j = spoke_other_prev(prev, j);
                            p_all_silent *= 1.0 - speak_prob(coupling, spoke_prev_j, gaze_frac);
                        }
                        p_bite += prob
                            * (p_all_silent * bite_prob(coupling, true, own_silence_prev)
                                + (1.0 - p_all_silent)
                                    * bite_prob(coupling, false, own_silence_prev));
                    }
                    biting[(s, i)] = p_bite;
                }
            }
        }
    }
    Ok(OraclePosteriors { speaking, biting })
}

/// Achievable F1 per task for a scope, over a set of sessions: posteriors
/// thresholded at one-half against the realized labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub scope: OracleScope,
    pub speaking_f1: f64,
    pub bite_f1: f64,
    pub speaking_base_rate: f64,
    pub bite_base_rate: f64,
}

pub fn oracle_report(
    coupling: &CouplingConfig,
    persons: usize,
    lattices: &[&LatentRecord],
    scope: OracleScope,
) -> Result<OracleReport> {
    let mut preds: std::collections::BTreeMap<Task, Vec<bool>> = Default::default();
    let mut labels: std::collections::BTreeMap<Task, Vec<bool>> = Default::default();
    for latent in lattices {
        let post = bayes_oracle(coupling, persons, latent, scope)?;
        for (s, state) in latent.iter().enumerate() {
            for i in 0..persons {
                preds
                    .entry(Task::Speaking)
                    .or_default()
                    .push(post.speaking[(s, i)] > 0.5);
                labels
                    .entry(Task::Speaking)
                    .or_default()
                    .push(state.speaking[i]);
                preds
                    .entry(Task::Bite)
                    .or_default()
                    .push(post.biting[(s, i)] > 0.5);
                labels.entry(Task::Bite).or_default().push(state.biting[i]);
            }
        }
    }
    let f1_of = |task: Task| -> Result<f64> {
        Ok(metrics(&confusion(&preds[&task], &labels[&task])?)?.f1)
    };
    let rate = |task: Task| {
        let l = &labels[&task];
        l.iter().filter(|v| **v).count() as f64 / l.len() as f64
    };
    Ok(OracleReport {
        scope,
        speaking_f1: f1_of(Task::Speaking)?,
        bite_f1: f1_of(Task::Bite)?,
        speaking_base_rate: rate(Task::Speaking),
        bite_base_rate: rate(Task::Bite),
    })
}
