//! Probe: do trained gaze-tokenizer codes separate gaze targets?
//! `cargo test -p m3pt --test vq_probe -- --ignored --nocapture`

use std::collections::BTreeMap;

use m3pt::data::{generate_synthetic, SyntheticConfig};
use m3pt::eval::{collect_modality_chunks, train_tokenizer_bank, windows_for_sessions, ExperimentConfig};
use m3pt::signal::ModalityKind;

#[test]
#[ignore]
fn gaze_codes_separate_targets() {
    let synth = SyntheticConfig::smoke();
    let sessions = generate_synthetic(&synth).unwrap();
    let config = ExperimentConfig::smoke();
    let refs: Vec<_> = sessions.iter().take(4).map(|s| &s.timeline).collect();
    let grids = windows_for_sessions(&refs, &config.segment).unwrap();
    let (bank, reports) = train_tokenizer_bank(&grids, &config).unwrap();
    for (name, r) in &reports {
        println!(
            "{name}: recon {:.4} total {:.4}, active entries {}",
            r.final_loss.reconstruction,
            r.final_loss.total,
            r.usage.iter().filter(|u| **u > 0).count()
        );
    }
    let tok = &bank[&ModalityKind::Gaze];

    // encode each person's gaze chunk per latent segment; group dominant
    // codes by (person, target)
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    let fpseg = synth.frames_per_segment();
    for session in sessions.iter().take(4) {
        for person in 0..3 {
            let gaze = session.timeline.stream(person, ModalityKind::Gaze);
            for (s, state) in session.latent.iter().enumerate() {
                let chunk = gaze
                    .values
                    .slice(ndarray::s![s * fpseg..(s + 1) * fpseg, ..])
                    .to_owned();
                let latent = tok.encode_segment(&chunk).unwrap();
                let mut counts = BTreeMap::new();
                for c in &latent.frame_codes {
                    *counts.entry(*c).or_insert(0usize) += 1;
                }
                let dominant = counts.into_iter().max_by_key(|(_, n)| *n).unwrap().0;
                groups
                    .entry((person, state.gaze_target[person]))
                    .or_default()
                    .push(dominant);
            }
        }
    }
    // purity: how concentrated is each (person, target) group on one code?
    for ((person, target), codes) in &groups {
        let mut counts = BTreeMap::new();
        for c in codes {
            *counts.entry(*c).or_insert(0usize) += 1;
        }
        let top = counts.values().max().unwrap();
        println!(
            "person {person} -> target {target}: {} segments, top-code purity {:.2}, codes {:?}",
            codes.len(),
            *top as f64 / codes.len() as f64,
            counts
        );
    }
}
