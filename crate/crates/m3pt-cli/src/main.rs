//! `m3pt` — pipeline driver: synthetic data, tokenizer training, transformer
//! training, evaluation, ablations, and mask rendering.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage/config error, 3 numerical
//! failure. Every command writes a run manifest recording its resolved
//! configuration, seeds, and input hashes.

mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use m3pt::data::{
    generate_synthetic, load_session, load_sessions, make_folds, write_synthetic_sessions,
    DatasetManifest, SyntheticConfig,
};
use m3pt::error::{Error, Result};
use m3pt::eval::{
    evaluate_model, run_ablation_with_jobs, tokenize_windows, windows_restricted, AblationKind,
    ExperimentConfig,
};
use m3pt::mask::{build_mask, MaskKind, MaskSpec};
use m3pt::model::{checkpoint as model_checkpoint, train_model, TokenizerBank};
use m3pt::signal::{ModalityKind, SessionTimeline};
use m3pt::vq::{checkpoint as vq_checkpoint, train_tokenizer};

use manifest::{guard_overwrite, RunRecorder};

#[derive(Parser)]
#[command(name = "m3pt", version, about = "Multi-party multimodal social signal prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Profile {
    /// Tiny configuration for quick runs and CI.
    Smoke,
    /// The recorded-protocol configuration (12x3s windows, full modalities).
    Paper,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MaskKindArg {
    Blockwise,
    StrictPast,
    Lower,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic multi-party sessions with planted dependencies.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// `paper` mirrors the recorded corpus (30 triadic sessions, full
        /// modality set); `smoke` is the reduced fast family.
        #[arg(long, value_enum, default_value = "paper")]
        profile: Profile,
        /// TOML file overriding the profile's generator configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sessions: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Train one modality's vector-quantized tokenizer.
    TrainVqvae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        modality: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "smoke")]
        profile: Profile,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Train the transformer against frozen tokenizers.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Directory holding `<modality>.vq` checkpoints.
        #[arg(long)]
        tokenizers: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "smoke")]
        profile: Profile,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sessions excluded from training (comma separated), e.g. held-out
        /// test sessions.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        mask: Option<MaskKindArg>,
        /// Relax the blockwise mask to admit a person's own other-modality
        /// tokens at the current timestep.
        #[arg(long)]
        allow_own_modalities: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a model checkpoint on named sessions or a fold's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Sessions to evaluate on (comma separated; default: every session).
        #[arg(long, value_delimiter = ',')]
        sessions: Vec<String>,
        /// Evaluate on fold N's test split instead of named sessions.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long, default_value_t = 3)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        fold_seed: u64,
        /// Write metrics and the run manifest under this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Run one ablation axis over session folds.
    Ablate {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "smoke")]
        profile: Profile,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        fold_seed: u64,
        /// Concurrent fold runs (default: the M3PT_JOBS variable or 1).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        /// Include the accuracy column in the rendered tables.
        #[arg(long)]
        accuracy: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Render an attention mask as a bitmap and a text dump.
    MaskDump {
        #[arg(long, short = 'T')]
        segments: usize,
        #[arg(long, short = 'P')]
        persons: usize,
        #[arg(long, short = 'M')]
        modalities: usize,
        #[arg(long, value_enum, default_value = "blockwise")]
        kind: MaskKindArg,
        #[arg(long)]
        allow_own_modalities: bool,
        /// Exclude the diagonal from the lower-triangular mask.
        #[arg(long)]
        no_diagonal: bool,
        /// Output path prefix; writes `<out>.pbm` and `<out>.txt`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

/// Applies the out-dir root override from the environment.
fn resolve_out(path: PathBuf) -> PathBuf {
    match std::env::var_os("M3PT_OUT_ROOT") {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path,
    }
}

fn jobs_or_env(jobs: Option<usize>) -> usize {
    jobs.or_else(|| {
        std::env::var("M3PT_JOBS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(1)
    .max(1)
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    Ok(toml::from_str(&text)?)
}

fn synth_config(profile: Profile, config: Option<&Path>) -> Result<SyntheticConfig> {
    match config {
        Some(path) => load_toml(path),
        None => Ok(match profile {
            Profile::Smoke => SyntheticConfig::smoke(),
            Profile::Paper => SyntheticConfig::default_corpus(),
        }),
    }
}

fn experiment_config(profile: Profile, config: Option<&Path>) -> Result<ExperimentConfig> {
    match config {
        Some(path) => load_toml(path),
        None => Ok(match profile {
            Profile::Smoke => ExperimentConfig::smoke(),
            Profile::Paper => ExperimentConfig::paper_default(),
        }),
    }
}

fn mask_kind(arg: MaskKindArg, allow_own: bool, no_diagonal: bool) -> MaskKind {
    match arg {
        MaskKindArg::Blockwise => MaskKind::Blockwise {
            allow_own_modalities: allow_own,
        },
        MaskKindArg::StrictPast => MaskKind::StrictPast,
        MaskKindArg::Lower => MaskKind::LowerTriangular {
            include_diagonal: !no_diagonal,
        },
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            profile,
            config,
            sessions,
            duration,
            seed,
            force,
        } => cmd_synth(resolve_out(out), profile, config, sessions, duration, seed, force),
        Command::TrainVqvae {
            data,
            modality,
            out,
            profile,
            config,
            epochs,
            seed,
            force,
        } => cmd_train_vqvae(data, &modality, resolve_out(out), profile, config, epochs, seed, force),
        Command::Train {
            data,
            tokenizers,
            out,
            profile,
            config,
            exclude,
            steps,
            lr,
            mask,
            allow_own_modalities,
            seed,
            force,
        } => cmd_train(
            data,
            tokenizers,
            resolve_out(out),
            profile,
            config,
            exclude,
            steps,
            lr,
            mask,
            allow_own_modalities,
            seed,
            force,
        ),
        Command::Eval {
            checkpoint,
            data,
            sessions,
            fold,
            folds,
            fold_seed,
            out,
            force,
        } => cmd_eval(checkpoint, data, sessions, fold, folds, fold_seed, out.map(resolve_out), force),
        Command::Ablate {
            kind,
            data,
            out,
            profile,
            config,
            folds,
            fold_seed,
            jobs,
            steps,
            accuracy,
            seed,
            force,
        } => cmd_ablate(
            &kind,
            data,
            resolve_out(out),
            profile,
            config,
            folds,
            fold_seed,
            jobs_or_env(jobs),
            steps,
            accuracy,
            seed,
            force,
        ),
        Command::MaskDump {
            segments,
            persons,
            modalities,
            kind,
            allow_own_modalities,
            no_diagonal,
            out,
            force,
        } => cmd_mask_dump(
            segments,
            persons,
            modalities,
            mask_kind(kind, allow_own_modalities, no_diagonal),
            resolve_out(out),
            force,
        ),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    out: PathBuf,
    profile: Profile,
    config_path: Option<PathBuf>,
    sessions: Option<usize>,
    duration: Option<f64>,
    seed: Option<u64>,
    force: bool,
) -> Result<()> {
    let mut config = synth_config(profile, config_path.as_deref())?;
    if let Some(n) = sessions {
        config.num_sessions = n;
    }
    if let Some(d) = duration {
        config.duration_s = d;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    guard_overwrite(&out, force)?;
    std::fs::create_dir_all(&out)?;

    let mut recorder = RunRecorder::start("synth", config.seed);
    let generated = generate_synthetic(&config)?;
    let manifest = write_synthetic_sessions(&out, &generated, &config)?;
    recorder.artifact(&out.join(m3pt::data::MANIFEST_FILE));

    // label base rates across the lattice
    let mut speak = (0usize, 0usize);
    let mut bite = (0usize, 0usize);
    for s in &generated {
        for state in &s.latent {
            for i in 0..state.speaking.len() {
                speak.1 += 1;
                bite.1 += 1;
                speak.0 += usize::from(state.speaking[i]);
                bite.0 += usize::from(state.biting[i]);
            }
        }
    }
    recorder.finish(&config, &out.join("run.toml"))?;
    println!(
        "wrote {} sessions to {} (speaking rate {:.3}, biting rate {:.3})",
        manifest.sessions.len(),
        out.display(),
        speak.0 as f64 / speak.1.max(1) as f64,
        bite.0 as f64 / bite.1.max(1) as f64,
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_vqvae(
    data: PathBuf,
    modality_name: &str,
    out: PathBuf,
    profile: Profile,
    config_path: Option<PathBuf>,
    epochs: Option<usize>,
    seed: Option<u64>,
    force: bool,
) -> Result<()> {
    let kind = ModalityKind::parse(modality_name)?;
    let mut config = experiment_config(profile, config_path.as_deref())?;
    if let Some(e) = epochs {
        config.vq_train.epochs = e;
    }
    if let Some(s) = seed {
        config.vq_train.seed = s;
    }
    guard_overwrite(&out, force)?;

    let dataset = DatasetManifest::load(&data)?;
    config.modalities = dataset.modalities.clone();
    let modality = *dataset
        .modalities
        .get(kind)
        .ok_or_else(|| Error::config(format!("dataset has no {kind} modality")))?;
    if modality.is_discrete {
        return Err(Error::config(format!(
            "{kind} is discrete; it uses an embedding table, not a tokenizer"
        )));
    }

    let mut recorder = RunRecorder::start("train-vqvae", config.vq_train.seed);
    recorder.hash_input(&data.join(m3pt::data::MANIFEST_FILE))?;

    let sessions = load_sessions(&dataset)?;
    let refs: Vec<&SessionTimeline> = sessions.iter().collect();
    let grids = windows_restricted(&refs, &config)?;
    let idx = config.modalities.index_of(kind).expect("validated");
    let chunks = m3pt::eval::collect_modality_chunks(&grids, idx);
    if chunks.is_empty() {
        return Err(Error::config(format!("no {kind} chunks in the dataset")));
    }
    let (tok, report) = train_tokenizer(&chunks, config.tokenizer_config(modality), &config.vq_train)?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    vq_checkpoint::save_tokenizer(&tok, &out)?;
    recorder.artifact(&out);
    recorder.finish(&config, &out.with_extension("run.toml"))?;
    println!(
        "trained {kind} tokenizer on {} chunks: loss {:.4} (recon {:.4}), {}/{} entries active -> {}",
        chunks.len(),
        report.final_loss.total,
        report.final_loss.reconstruction,
        report.usage.iter().filter(|u| **u > 0).count(),
        report.usage.len(),
        out.display()
    );
    Ok(())
}

fn load_tokenizer_bank(dir: &Path, config: &ExperimentConfig) -> Result<(TokenizerBank, Vec<(String, String)>)> {
    let mut bank = TokenizerBank::new();
    let mut refs = Vec::new();
    for modality in config.modalities.iter() {
        if modality.is_discrete {
            continue;
        }
        let path = dir.join(format!("{}.vq", modality.kind));
        if !path.is_file() {
            return Err(Error::config(format!(
                "missing tokenizer checkpoint for {}: {}",
                modality.kind,
                path.display()
            )));
        }
        bank.insert(modality.kind, vq_checkpoint::load_tokenizer(&path)?);
        refs.push((modality.kind.name().to_string(), path.display().to_string()));
    }
    Ok((bank, refs))
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: PathBuf,
    tokenizers: PathBuf,
    out: PathBuf,
    profile: Profile,
    config_path: Option<PathBuf>,
    exclude: Vec<String>,
    steps: Option<usize>,
    lr: Option<f64>,
    mask: Option<MaskKindArg>,
    allow_own_modalities: bool,
    seed: Option<u64>,
    force: bool,
) -> Result<()> {
    let mut config = experiment_config(profile, config_path.as_deref())?;
    if let Some(n) = steps {
        config.model_train.steps = n;
        config.model_train.min_steps = config.model_train.min_steps.min(n);
    }
    if let Some(l) = lr {
        config.model_train.lr = l;
    }
    if let Some(m) = mask {
        config.mask_kind = mask_kind(m, allow_own_modalities, false);
    }
    if let Some(s) = seed {
        config.model_train.seed = s;
        config.seed = s;
    }
    guard_overwrite(&out, force)?;

    let dataset = DatasetManifest::load(&data)?;
    config.modalities = dataset.modalities.clone();
    let (bank, tokenizer_refs) = load_tokenizer_bank(&tokenizers, &config)?;

    let mut recorder = RunRecorder::start("train", config.model_train.seed);
    recorder.hash_input(&data.join(m3pt::data::MANIFEST_FILE))?;
    for (_, path) in &tokenizer_refs {
        recorder.hash_input(Path::new(path))?;
    }

    let train_ids: Vec<String> = dataset
        .sessions
        .iter()
        .filter(|id| !exclude.contains(id))
        .cloned()
        .collect();
    if train_ids.is_empty() {
        return Err(Error::config("no sessions left to train on after --exclude"));
    }
    let (fit_ids, val_ids) =
        m3pt::eval::split_validation_sessions(train_ids, config.val_sessions);
    let mut fit_sessions = Vec::new();
    for id in &fit_ids {
        fit_sessions.push(load_session(&dataset, id)?);
    }
    let fit_refs: Vec<&SessionTimeline> = fit_sessions.iter().collect();
    let train_grids = windows_restricted(&fit_refs, &config)?;
    let train_windows = tokenize_windows(&train_grids, &bank)?;
    let mut val_sessions = Vec::new();
    for id in &val_ids {
        val_sessions.push(load_session(&dataset, id)?);
    }
    let val_refs: Vec<&SessionTimeline> = val_sessions.iter().collect();
    let val_grids = windows_restricted(&val_refs, &config)?;
    let val_windows = tokenize_windows(&val_grids, &bank)?;

    let num_persons = fit_refs[0].num_persons();
    let model_config = config.model_config(num_persons, &bank);
    let (model, report) = train_model(
        model_config,
        &train_windows,
        &val_windows,
        &config.model_train,
    )?;

    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    model_checkpoint::save_model(&model, &config.segment, &tokenizer_refs, &out)?;
    recorder.artifact(&out);
    recorder.finish(&config, &out.with_extension("run.toml"))?;
    println!(
        "trained {} model for {} steps (best val F1 {:.3} at step {}): {}",
        config.mask_kind.name(),
        report.steps_run,
        report.best_val_f1,
        report.best_step,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: PathBuf,
    data: PathBuf,
    sessions: Vec<String>,
    fold: Option<usize>,
    folds: usize,
    fold_seed: u64,
    out: Option<PathBuf>,
    force: bool,
) -> Result<()> {
    let (model, segment, tokenizer_refs) = model_checkpoint::load_model(&checkpoint)?;
    let dataset = DatasetManifest::load(&data)?;

    let mut recorder = RunRecorder::start("eval", fold_seed);
    recorder.hash_input(&checkpoint)?;
    recorder.hash_input(&data.join(m3pt::data::MANIFEST_FILE))?;

    // tokenizers come from the checkpoint's recorded references
    let mut bank = TokenizerBank::new();
    for (name, path) in &tokenizer_refs {
        let kind = ModalityKind::parse(name)?;
        let path = PathBuf::from(path);
        let resolved = if path.is_absolute() || path.is_file() {
            path
        } else {
            checkpoint.parent().unwrap_or(Path::new(".")).join(&path)
        };
        if !resolved.is_file() {
            return Err(Error::config(format!(
                "tokenizer checkpoint for {name} not found at {}",
                resolved.display()
            )));
        }
        recorder.hash_input(&resolved)?;
        bank.insert(kind, vq_checkpoint::load_tokenizer(&resolved)?);
    }

    let eval_ids: Vec<String> = match fold {
        Some(f) => {
            let splits = make_folds(&dataset.sessions, folds, fold_seed)?;
            let split = splits
                .into_iter()
                .find(|s| s.fold_id == f)
                .ok_or_else(|| Error::config(format!("fold {f} out of range (0..{folds})")))?;
            split.test
        }
        None if sessions.is_empty() => dataset.sessions.clone(),
        None => sessions,
    };

    // rebuild the training-time windowing and modality set
    let mut config = ExperimentConfig::smoke();
    config.modalities = model.config.modalities.clone();
    config.segment = segment;

    let mut loaded = Vec::new();
    for id in &eval_ids {
        loaded.push(load_session(&dataset, id)?);
    }
    let refs: Vec<&SessionTimeline> = loaded.iter().collect();
    let grids = windows_restricted(&refs, &config)?;
    let windows = tokenize_windows(&grids, &bank)?;
    if windows.is_empty() {
        return Err(Error::config("no evaluation windows (sessions too short?)"));
    }
    let metrics = evaluate_model(&model, &windows)?;

    println!(
        "evaluated {} windows over sessions [{}]",
        windows.len(),
        eval_ids.join(", ")
    );
    println!(
        "{:<10} {:>8} {:>10} {:>8} {:>8} {:>8}",
        "task", "f1", "precision", "recall", "nmcc", "accuracy"
    );
    for (task, entry) in &metrics {
        println!(
            "{:<10} {:>8.3} {:>10.3} {:>8.3} {:>8.3} {:>8.3}{}",
            task.name(),
            entry.f1,
            entry.precision,
            entry.recall,
            entry.nmcc,
            entry.accuracy,
            if entry.degenerate { "  (degenerate)" } else { "" }
        );
    }

    if let Some(out) = out {
        guard_overwrite(&out, force)?;
        std::fs::create_dir_all(&out)?;
        let record = serde_json::to_string_pretty(&metrics)
            .map_err(m3pt::error::Error::Json)?;
        let metrics_path = out.join("metrics.json");
        std::fs::write(&metrics_path, record)?;
        recorder.artifact(&metrics_path);
        recorder.finish(&("eval", &eval_ids), &out.join("run.toml"))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablate(
    kind_name: &str,
    data: PathBuf,
    out: PathBuf,
    profile: Profile,
    config_path: Option<PathBuf>,
    folds: usize,
    fold_seed: u64,
    jobs: usize,
    steps: Option<usize>,
    accuracy: bool,
    seed: Option<u64>,
    force: bool,
) -> Result<()> {
    let kind = AblationKind::parse(kind_name)?;
    let mut config = experiment_config(profile, config_path.as_deref())?;
    if let Some(n) = steps {
        config.model_train.steps = n;
        config.model_train.min_steps = config.model_train.min_steps.min(n);
    }
    if let Some(s) = seed {
        config.seed = s;
        config.model_train.seed = s;
        config.vq_train.seed = s;
    }
    guard_overwrite(&out, force)?;
    std::fs::create_dir_all(&out)?;

    let dataset = DatasetManifest::load(&data)?;
    config.modalities = dataset.modalities.clone();

    let mut recorder = RunRecorder::start("ablate", config.seed);
    recorder.hash_input(&data.join(m3pt::data::MANIFEST_FILE))?;

    let sessions: BTreeMap<String, SessionTimeline> = load_sessions(&dataset)?
        .into_iter()
        .map(|s| (s.session_id.clone(), s))
        .collect();
    let splits = make_folds(&dataset.sessions, folds, fold_seed)?;
    let table = run_ablation_with_jobs(kind, &sessions, &splits, &config, jobs)?;

    let rendered = table.render(accuracy);
    print!("{rendered}");
    let table_path = out.join(format!("{}.txt", kind.name()));
    std::fs::write(&table_path, &rendered)?;
    let record_path = out.join(format!("{}.json", kind.name()));
    std::fs::write(
        &record_path,
        serde_json::to_string_pretty(&table).map_err(m3pt::error::Error::Json)?,
    )?;
    recorder.artifact(&table_path);
    recorder.artifact(&record_path);
    recorder.finish(&config, &out.join("run.toml"))?;

    let failed: usize = table.rows.iter().map(|r| r.failed_folds).sum();
    if failed > 0 {
        return Err(Error::numeric(format!("{failed} fold runs failed")));
    }
    Ok(())
}

fn cmd_mask_dump(
    segments: usize,
    persons: usize,
    modalities: usize,
    kind: MaskKind,
    out: PathBuf,
    force: bool,
) -> Result<()> {
    let spec = MaskSpec::new(segments, persons, modalities)?;
    let mask = build_mask(&spec, kind)?;
    let pbm = out.with_extension("pbm");
    let txt = out.with_extension("txt");
    guard_overwrite(&pbm, force)?;
    guard_overwrite(&txt, force)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    mask.export_bitmap(&pbm)?;
    mask.export_text(&txt)?;
    println!(
        "L = {} ({}x{}x{} {}) -> {} and {}",
        spec.len(),
        segments,
        persons,
        modalities,
        mask.kind.name(),
        pbm.display(),
        txt.display()
    );
    Ok(())
}
