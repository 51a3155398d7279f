//! Dataset ingestion and synthesis.
//!
//! On disk a dataset is a `manifest.toml` plus one directory per session
//! containing a `session.toml` and one columnar CSV per (person, modality)
//! stream — diff-able, hand-editable, and round-trip lossless. Synthetic
//! sessions additionally carry a `latent.csv` sidecar with the planted
//! lattice states so the Bayes oracle can be evaluated after a reload.

pub mod oracle;
pub mod synthetic;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{FrameSeries, Modality, ModalityKind, ModalitySet, SessionTimeline};

pub use oracle::{bayes_oracle, oracle_report, OraclePosteriors, OracleReport, OracleScope};
pub use synthetic::{
    generate_synthetic, CouplingConfig, LatentRecord, SegmentState, SyntheticConfig,
    SyntheticSession,
};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModalityEntry {
    kind: String,
    channels: usize,
    discrete: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestFile {
    format_version: u32,
    fps: f64,
    modalities: Vec<ModalityEntry>,
    sessions: Vec<String>,
}

/// Parsed and validated dataset manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub fps: f64,
    pub modalities: ModalitySet,
    pub sessions: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionMeta {
    id: String,
    persons: Vec<String>,
    duration_s: f64,
    fps: f64,
}

impl DatasetManifest {
    /// Reads and validates `manifest.toml` under `root`; every listed
    /// session directory must exist.
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let parsed: ManifestFile = toml::from_str(&text)?;
        if parsed.format_version != MANIFEST_VERSION {
            return Err(Error::config(format!(
                "{}: manifest version {} unsupported (expected {MANIFEST_VERSION})",
                path.display(),
                parsed.format_version
            )));
        }
        let modalities = ModalitySet::new(
            parsed
                .modalities
                .iter()
                .map(|m| {
                    let kind = ModalityKind::parse(&m.kind)?;
                    Ok(if m.discrete {
                        Modality::discrete(kind)
                    } else {
                        Modality::continuous(kind, m.channels)?
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        )?;
        for session in &parsed.sessions {
            let dir = root.join("sessions").join(session);
            if !dir.is_dir() {
                return Err(Error::config(format!(
                    "manifest lists session `{session}` but {} is missing",
                    dir.display()
                )));
            }
        }
        Ok(DatasetManifest {
            root: root.to_path_buf(),
            fps: parsed.fps,
            modalities,
            sessions: parsed.sessions,
        })
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }
}

fn stream_file(dir: &Path, person_idx: usize, kind: ModalityKind) -> PathBuf {
    dir.join(format!("p{person_idx}_{kind}.csv"))
}

fn read_stream(
    path: &Path,
    modality: &Modality,
    fps: f64,
) -> Result<FrameSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let want_cols = if modality.is_discrete {
        1
    } else {
        modality.channel_count
    };
    let mut rows: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != want_cols + 1 {
            return Err(Error::Schema {
                file: path.display().to_string(),
                line: line + 2,
                message: format!(
                    "expected {} columns (timestamp + {want_cols}), found {}",
                    want_cols + 1,
                    record.len()
                ),
            });
        }
        for (c, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| Error::Schema {
                file: path.display().to_string(),
                line: line + 2,
                message: format!("column {c}: `{field}` is not a number"),
            })?;
            rows.push(v);
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Schema {
            file: path.display().to_string(),
            line: 1,
            message: "stream has no frames".into(),
        });
    }
    let values = ndarray::Array2::from_shape_vec((count, want_cols), rows)
        .expect("row-major frame table");
    FrameSeries::new(*modality, fps, values)
}

fn write_stream(path: &Path, series: &FrameSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let cols = series.values.ncols();
    let mut header = vec!["timestamp".to_string()];
    if series.modality.is_discrete {
        header.push("v".into());
    } else {
        header.extend((0..cols).map(|c| format!("c{c}")));
    }
    w.write_record(&header)?;
    for (r, row) in series.values.rows().into_iter().enumerate() {
        let mut record = vec![format!("{:.6}", r as f64 / series.fps)];
        record.extend(row.iter().map(|v| {
            if series.modality.is_discrete {
                format!("{}", *v as i64)
            } else {
                // shortest exact f64 representation keeps round trips lossless
                format!("{v}")
            }
        }));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads every session listed in the manifest. Missing streams, truncated
/// files, and misaligned durations are schema errors naming the offender.
pub fn load_sessions(manifest: &DatasetManifest) -> Result<Vec<SessionTimeline>> {
    manifest
        .sessions
        .iter()
        .map(|id| load_session(manifest, id))
        .collect()
}

pub fn load_session(manifest: &DatasetManifest, id: &str) -> Result<SessionTimeline> {
    let dir = manifest.session_dir(id);
    let meta_path = dir.join("session.toml");
    let meta: SessionMeta = toml::from_str(
        &std::fs::read_to_string(&meta_path)
            .map_err(|e| Error::config(format!("{}: {e}", meta_path.display())))?,
    )?;
    if meta.id != id {
        return Err(Error::config(format!(
            "{}: session id `{}` does not match directory `{id}`",
            meta_path.display(),
            meta.id
        )));
    }
    let mut streams = BTreeMap::new();
    for (p, _) in meta.persons.iter().enumerate() {
        for modality in manifest.modalities.iter() {
            let path = stream_file(&dir, p, modality.kind);
            if !path.is_file() {
                return Err(Error::config(format!(
                    "session {id}: person {} is missing the {} stream ({})",
                    meta.persons[p],
                    modality.kind,
                    path.display()
                )));
            }
            let mut series = read_stream(&path, modality, meta.fps)?;
            if crate::signal::forward_fill(&mut series) {
                log::warn!("{}: missing frames forward-filled", path.display());
            }
            streams.insert((p, modality.kind), series);
        }
    }
    SessionTimeline::new(id, meta.persons, &manifest.modalities, streams, meta.duration_s)
}

/// Writes sessions (and manifest) under `root`; the exact inverse of
/// [`load_sessions`] for valid data.
pub fn write_sessions(
    root: &Path,
    sessions: &[SessionTimeline],
    modalities: &ModalitySet,
    fps: f64,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(root.join("sessions"))?;
    for session in sessions {
        let dir = root.join("sessions").join(&session.session_id);
        std::fs::create_dir_all(&dir)?;
        let meta = SessionMeta {
            id: session.session_id.clone(),
            persons: session.persons.clone(),
            duration_s: session.duration_s,
            fps,
        };
        std::fs::write(dir.join("session.toml"), toml::to_string_pretty(&meta)?)?;
        for ((person, kind), series) in &session.streams {
            write_stream(&stream_file(&dir, *person, *kind), series)?;
        }
    }
    let manifest = ManifestFile {
        format_version: MANIFEST_VERSION,
        fps,
        modalities: modalities
            .iter()
            .map(|m| ModalityEntry {
                kind: m.kind.name().into(),
                channels: m.channel_count,
                discrete: m.is_discrete,
            })
            .collect(),
        sessions: sessions.iter().map(|s| s.session_id.clone()).collect(),
    };
    std::fs::write(root.join(MANIFEST_FILE), toml::to_string_pretty(&manifest)?)?;
    DatasetManifest::load(root)
}

/// Writes synthetic sessions including their `latent.csv` sidecars.
pub fn write_synthetic_sessions(
    root: &Path,
    sessions: &[SyntheticSession],
    config: &SyntheticConfig,
) -> Result<DatasetManifest> {
    let timelines: Vec<SessionTimeline> = sessions.iter().map(|s| s.timeline.clone()).collect();
    let manifest = write_sessions(root, &timelines, &config.modalities, config.fps)?;
    for session in sessions {
        let dir = manifest.session_dir(&session.timeline.session_id);
        write_latent(&dir.join("latent.csv"), &session.latent)?;
    }
    Ok(manifest)
}

fn write_latent(path: &Path, latent: &LatentRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["segment", "person", "gaze_target", "speaking", "biting"])?;
    for (s, state) in latent.iter().enumerate() {
        for i in 0..state.speaking.len() {
            w.write_record(&[
                s.to_string(),
                i.to_string(),
                state.gaze_target[i].to_string(),
                u8::from(state.speaking[i]).to_string(),
                u8::from(state.biting[i]).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a session's planted-lattice sidecar.
pub fn load_latent(path: &Path, persons: usize) -> Result<LatentRecord> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut cells: BTreeMap<(usize, usize), (usize, bool, bool)> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |idx: usize| -> Result<usize> {
            record
                .get(idx)
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| Error::Schema {
                    file: path.display().to_string(),
                    line: line + 2,
                    message: format!("bad field {idx}"),
                })
        };
        let (s, i) = (parse(0)?, parse(1)?);
        cells.insert((s, i), (parse(2)?, parse(3)? != 0, parse(4)? != 0));
    }
    let segments = cells.keys().map(|(s, _)| s + 1).max().unwrap_or(0);
    let mut latent = Vec::with_capacity(segments);
    for s in 0..segments {
        let mut state = SegmentState {
            gaze_target: vec![0; persons],
            speaking: vec![false; persons],
            biting: vec![false; persons],
        };
        for i in 0..persons {
            let (g, sp, b) = *cells.get(&(s, i)).ok_or_else(|| Error::Schema {
                file: path.display().to_string(),
                line: 1,
                message: format!("missing lattice cell ({s}, {i})"),
            })?;
            state.gaze_target[i] = g;
            state.speaking[i] = sp;
            state.biting[i] = b;
        }
        latent.push(state);
    }
    Ok(latent)
}

/// One cross-validation fold: train on all sessions but one, test on the
/// held-out session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded choice of `num_folds` distinct held-out sessions.
pub fn make_folds(session_ids: &[String], num_folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if num_folds == 0 {
        return Err(Error::config("make_folds: need at least one fold"));
    }
    if num_folds > session_ids.len() {
        return Err(Error::config(format!(
            "make_folds: {num_folds} folds requested but only {} sessions",
            session_ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<String> = session_ids.to_vec();
    ids.shuffle(&mut rng);
    let held_out = &ids[..num_folds];
    Ok(held_out
        .iter()
        .enumerate()
        .map(|(fold_id, test_id)| FoldSplit {
            fold_id,
            train: session_ids
                .iter()
                .filter(|id| *id != test_id)
                .cloned()
                .collect(),
            test: vec![test_id.clone()],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_roundtrip_is_lossless() {
        let config = SyntheticConfig {
            num_sessions: 2,
            duration_s: 24.0,
            ..SyntheticConfig::smoke()
        };
        let sessions = generate_synthetic(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_synthetic_sessions(dir.path(), &sessions, &config).unwrap();
        let loaded = load_sessions(&manifest).unwrap();
        assert_eq!(loaded.len(), 2);
        for (orig, back) in sessions.iter().zip(&loaded) {
            assert_eq!(orig.timeline.persons, back.persons);
            for (key, series) in &orig.timeline.streams {
                assert_eq!(
                    series.values, back.streams[key].values,
                    "stream {key:?} changed in the round trip"
                );
            }
            let latent = load_latent(
                &manifest.session_dir(&orig.timeline.session_id).join("latent.csv"),
                3,
            )
            .unwrap();
            assert_eq!(latent, orig.latent);
        }
    }

    #[test]
    fn missing_session_directory_is_an_error() {
        let config = SyntheticConfig {
            num_sessions: 1,
            duration_s: 24.0,
            ..SyntheticConfig::smoke()
        };
        let sessions = generate_synthetic(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_sessions(dir.path(), &sessions, &config).unwrap();
        // corrupt the manifest with a phantom session
        let manifest_path = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest_path).unwrap();
        let text = text.replace("sessions = [\"synth000\"]", "sessions = [\"synth000\", \"ghost\"]");
        std::fs::write(&manifest_path, text).unwrap();
        let err = DatasetManifest::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn missing_stream_names_person_and_modality() {
        let config = SyntheticConfig {
            num_sessions: 1,
            duration_s: 24.0,
            ..SyntheticConfig::smoke()
        };
        let sessions = generate_synthetic(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_synthetic_sessions(dir.path(), &sessions, &config).unwrap();
        std::fs::remove_file(manifest.session_dir("synth000").join("p1_bite.csv")).unwrap();
        let err = load_sessions(&manifest).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("p1") && msg.contains("bite"), "{msg}");
    }

    #[test]
    fn malformed_row_reports_file_and_line() {
        let config = SyntheticConfig {
            num_sessions: 1,
            duration_s: 24.0,
            ..SyntheticConfig::smoke()
        };
        let sessions = generate_synthetic(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_synthetic_sessions(dir.path(), &sessions, &config).unwrap();
        let path = manifest.session_dir("synth000").join("p0_gaze.csv");
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replacen("\n", "\nbroken,row,here\n", 1);
        std::fs::write(&path, text).unwrap();
        let err = load_sessions(&manifest).unwrap_err();
        match err {
            Error::Schema { file, line, .. } => {
                assert!(file.contains("p0_gaze.csv"));
                assert_eq!(line, 2);
            }
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn folds_30_sessions_3_folds() {
        let ids: Vec<String> = (0..30).map(|i| format!("s{i:02}")).collect();
        let folds = make_folds(&ids, 3, 42).unwrap();
        assert_eq!(folds.len(), 3);
        let mut tests = std::collections::BTreeSet::new();
        for f in &folds {
            assert_eq!(f.train.len(), 29);
            assert_eq!(f.test.len(), 1);
            assert!(!f.train.contains(&f.test[0]));
            tests.insert(f.test[0].clone());
        }
        assert_eq!(tests.len(), 3, "test sessions must be pairwise distinct");
    }

    #[test]
    fn folds_leave_one_out_and_errors() {
        let ids: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
        let folds = make_folds(&ids, 3, 0).unwrap();
        assert_eq!(folds.len(), 3);
        for f in &folds {
            assert_eq!(f.train.len(), 2);
        }
        assert!(make_folds(&ids, 4, 0).is_err());
        assert!(make_folds(&ids, 0, 0).is_err());
    }

    #[test]
    fn folds_are_deterministic_in_the_seed() {
        let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        assert_eq!(make_folds(&ids, 3, 9).unwrap(), make_folds(&ids, 3, 9).unwrap());
    }
}
