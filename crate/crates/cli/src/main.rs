use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use structura_core::annotation::{
    parse_annotation, repair_no_function, to_timeline, FunctionLabel,
};
use structura_core::features::{load_wav, write_wav, FeatureConfig, LogMelFrontEnd};
use structura_core::harness::cv::{hold_out_validation, CvReport};
use structura_core::harness::{
    generate_synthetic_song, kfold, leave_one_dataset_out, run_cross_validation, run_training,
    synthetic_corpus, DatasetManifest, ManifestEntry, Song, Split, TrainConfig,
};
use structura_core::inference::{predict_song, PeakConfig, SongPrediction};
use structura_core::metrics::{CorpusSummary, EvalFrameGrid, MetricReport};
use structura_core::model::checkpoint::Checkpoint;
use structura_core::targets::{frames_for, ActivationTargets, FrameGrid, DEFAULT_HOP};
use structura_core::{ModelKind, SegmentTimeline};

#[derive(Parser)]
#[command(
    name = "structura",
    version,
    about = "Music structure analysis: segment songs and label their sections"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic songs with annotations and a manifest
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        songs: usize,
        /// Extra songs tagged as the test split
        #[arg(long, default_value_t = 0)]
        test_songs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train a model from a manifest
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory (overrides the config)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Cross-validate; several manifests switch to leave-one-dataset-out
    Cv {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long, default_value_t = 4)]
        folds: usize,
        /// Training log destination
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Segment and label one song
    Infer {
        wav: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        dump_curves: Option<PathBuf>,
        /// Peak-picking threshold over the local mean
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
    },
    /// Score predictions against reference annotations
    Evaluate {
        /// Predictions: infer JSON files or annotation text files
        #[arg(long)]
        est: PathBuf,
        /// Reference annotation text files
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        hop: f64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Map a raw annotation onto the seven-class taxonomy
    Convert {
        input: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Dump boundary and function target curves
    Targets {
        annotation: PathBuf,
        #[arg(long, default_value_t = DEFAULT_HOP)]
        hop: f64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Dump the log-mel spectrogram as a flat binary
    Features {
        wav: PathBuf,
        #[arg(long = "npy-like")]
        npy_like: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

/// Writes `value` as pretty JSON to `path`, or to stdout for `-`.
fn emit(path: &Option<PathBuf>, value: &impl Serialize) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let text = serde_json::to_string_pretty(value)?;
    if path.as_os_str() == "-" {
        println!("{text}");
    } else {
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn quiet(json: &Option<PathBuf>) -> bool {
    json.as_ref().is_some_and(|p| p.as_os_str() == "-")
}

fn read_timeline(path: &Path) -> Result<SegmentTimeline> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let raw = parse_annotation(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(to_timeline(&repair_no_function(&raw))?)
}

fn front_end() -> Result<LogMelFrontEnd> {
    Ok(LogMelFrontEnd::new(FeatureConfig::default())?)
}

fn load_songs<'a>(
    entries: impl Iterator<Item = &'a ManifestEntry>,
    fe: &LogMelFrontEnd,
) -> Result<Vec<Song>> {
    entries
        .map(|e| Song::load(e, fe).with_context(|| format!("loading {}", e.audio.display())))
        .collect()
}

fn load_config(path: &Option<PathBuf>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            TrainConfig::load(p).with_context(|| format!("reading config {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    if path.is_none() {
        cfg.apply_env()?;
    }
    Ok(cfg)
}

fn synth(
    out: &Path,
    songs: usize,
    test_songs: usize,
    seed: u64,
    json: &Option<PathBuf>,
) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let specs = synthetic_corpus(songs + test_songs, seed)?;
    let mut entries = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let (clip, text) = generate_synthetic_song(spec)?;
        let name = format!("song{i:03}");
        let (wav, txt) = (format!("{name}.wav"), format!("{name}.txt"));
        write_wav(out.join(&wav), &clip)?;
        std::fs::write(out.join(&txt), text)?;
        entries.push(ManifestEntry {
            audio: wav.into(),
            annotation: txt.into(),
            split: if i < songs { Split::Train } else { Split::Test },
        });
    }
    let manifest = DatasetManifest { seed, entries };
    let path = out.join("manifest.json");
    manifest.save(&path)?;
    if !quiet(json) {
        println!("wrote {} songs and {}", specs.len(), path.display());
    }
    emit(
        json,
        &json!({
            "manifest": path,
            "songs": specs.len(),
            "durations": specs.iter().map(|s| s.duration()).collect::<Vec<_>>(),
        }),
    )
}

fn train(
    config: &Option<PathBuf>,
    manifest: &Option<PathBuf>,
    out: &Option<PathBuf>,
    json: &Option<PathBuf>,
) -> Result<ExitCode> {
    let mut cfg = load_config(config)?;
    if let Some(m) = manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(o) = out {
        cfg.output_dir = o.clone();
    }
    let manifest_path = cfg
        .manifest
        .clone()
        .context("no manifest given (config key or --manifest)")?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    let fe = front_end()?;
    let mut train_songs = load_songs(manifest.with_split(Split::Train), &fe)?;
    let mut val_songs = load_songs(manifest.with_split(Split::Validation), &fe)?;
    if val_songs.is_empty() {
        let (t, v) = hold_out_validation(
            (0..train_songs.len()).collect(),
            cfg.validation_fraction,
            cfg.seed,
        );
        val_songs = v.iter().map(|&i| train_songs[i].clone()).collect();
        train_songs = t.iter().map(|&i| train_songs[i].clone()).collect();
    }

    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    std::fs::write(cfg.output_dir.join("config.txt"), cfg.to_text())?;
    let log_path = cfg.output_dir.join("train.jsonl");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    let outcome = run_training(&cfg, &train_songs, &val_songs, &mut log)?;
    drop(log);
    let ckpt_path = cfg.output_dir.join("best.ckpt");
    outcome.checkpoint.save(&ckpt_path)?;

    if !quiet(json) {
        match &outcome.aborted {
            Some(msg) => println!(
                "training aborted: {msg}; kept best checkpoint {}",
                ckpt_path.display()
            ),
            None => println!(
                "trained {} epochs, best epoch {:?} (validation loss {:.5}); checkpoint {}",
                outcome.epochs_run,
                outcome.best_epoch,
                outcome.best_validation,
                ckpt_path.display()
            ),
        }
    }
    emit(
        json,
        &json!({
            "checkpoint": ckpt_path,
            "log": log_path,
            "epochs_run": outcome.epochs_run,
            "best_epoch": outcome.best_epoch,
            "best_validation": outcome.best_validation,
            "stopped_early": outcome.stopped_early,
            "aborted": outcome.aborted,
            "train_songs": train_songs.len(),
            "validation_songs": val_songs.len(),
        }),
    )?;
    Ok(if outcome.aborted.is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn cv(
    config: &Option<PathBuf>,
    manifests: &[PathBuf],
    folds: usize,
    log: &Option<PathBuf>,
    json: &Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let fe = front_end()?;
    let mut songs = Vec::new();
    let mut sizes = Vec::new();
    for m in manifests {
        let manifest = DatasetManifest::load(m)?;
        let loaded = load_songs(manifest.entries.iter(), &fe)?;
        sizes.push(loaded.len());
        songs.extend(loaded);
    }
    let plan = if manifests.len() > 1 {
        leave_one_dataset_out(&sizes, cfg.validation_fraction, cfg.seed)?
    } else {
        kfold(songs.len(), folds, cfg.validation_fraction, cfg.seed)?
    };
    let mut sink: Box<dyn std::io::Write> = match log {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::sink()),
    };
    let report: CvReport =
        run_cross_validation(&cfg, &songs, &plan, &PeakConfig::default(), &mut sink)?;
    if !quiet(json) {
        print_summary(&report.summary);
    }
    emit(json, &report)
}

fn print_summary(s: &CorpusSummary) {
    println!("songs   {}", s.songs);
    println!("HR.5F   {:.3}", s.hr5f);
    println!("ACC     {:.3}", s.acc);
    println!("PWF     {:.3}", s.pwf);
    println!("Sf      {:.3}", s.sf);
    match s.chr5f {
        Some(v) => println!("CHR.5F  {v:.3}"),
        None => println!("CHR.5F  n/a (no reference chorus)"),
    }
    println!("CF1     {:.3}", s.cf1);
}

fn infer(
    wav: &Path,
    checkpoint: &Path,
    mode: &Option<String>,
    json: &Option<PathBuf>,
    dump_curves: &Option<PathBuf>,
    threshold: f64,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    if let Some(m) = mode {
        let wanted: ModelKind = m.parse()?;
        if wanted != ckpt.kind {
            bail!(
                "--mode {m} does not match the checkpoint's {:?} model",
                ckpt.kind
            );
        }
    }
    let clip = load_wav(wav)?;
    let duration = clip.duration();
    let fe = front_end()?;
    let spec = fe.frames(
        clip.samples(),
        0,
        0,
        frames_for(duration, fe.config().frame_hop()),
    );
    let peaks = PeakConfig {
        threshold,
        ..PeakConfig::default()
    };
    let prediction = predict_song(&spec, duration, &ckpt, &peaks)?;
    if let (Some(path), Some(curves)) = (dump_curves, &prediction.curves) {
        emit(&Some(path.clone()), curves)?;
    }
    if !quiet(json) {
        for s in &prediction.segments {
            println!(
                "{:8.3} {:8.3}  {:<8} {:.3}",
                s.start, s.end, s.label, s.confidence
            );
        }
        println!("{} model calls", prediction.calls);
    }
    emit(json, &prediction)
}

/// Reads an estimate: infer output (`.json`) or an annotation file.
fn read_estimate(path: &Path) -> Result<SegmentTimeline> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path)?;
        let p: SongPrediction =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(p.segment_list().to_timeline()?)
    } else {
        read_timeline(path)
    }
}

fn files_by_stem(dir: &Path, exts: &[&str]) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if path.is_file() && exts.contains(&ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Serialize)]
struct SongRow {
    name: String,
    report: MetricReport,
}

fn evaluate(est: &Path, reference: &Path, hop: f64, json: &Option<PathBuf>) -> Result<()> {
    let grid = EvalFrameGrid::new(hop)?;
    let estimates = files_by_stem(est, &["json", "txt", "lab"])?;
    let mut rows = Vec::new();
    for (stem, ref_path) in files_by_stem(reference, &["txt", "lab"])? {
        let Some((_, est_path)) = estimates.iter().find(|(s, _)| *s == stem) else {
            eprintln!("warning: no estimate for {stem}");
            continue;
        };
        let r = read_timeline(&ref_path)?;
        let e = read_estimate(est_path)?;
        let report =
            MetricReport::evaluate(&e, &r, &grid).with_context(|| format!("scoring {stem}"))?;
        rows.push(SongRow { name: stem, report });
    }
    if rows.is_empty() {
        bail!("no matching estimate/reference pairs");
    }
    let reports: Vec<MetricReport> = rows.iter().map(|r| r.report).collect();
    let summary = CorpusSummary::from_reports(&reports)?;
    if !quiet(json) {
        for r in &rows {
            let values: Vec<String> = r
                .report
                .headline()
                .iter()
                .map(|(k, v)| format!("{k} {v:.3}"))
                .collect();
            println!("{:<20} {}", r.name, values.join("  "));
        }
        print_summary(&summary);
    }
    emit(json, &json!({ "songs": rows, "summary": summary }))
}

fn convert(input: &Path, json: &Option<PathBuf>) -> Result<()> {
    let t = read_timeline(input)?;
    if !quiet(json) {
        for s in t.segments() {
            println!("{:8.3} {:8.3}  {}", s.start, s.end, s.label);
        }
    }
    emit(json, &t)
}

fn targets(annotation: &Path, hop: f64, json: &Option<PathBuf>) -> Result<()> {
    let t = read_timeline(annotation)?;
    let grid = FrameGrid::for_duration(t.duration(), hop)?;
    let targets = ActivationTargets::from_timeline(&t, grid);
    if !quiet(json) {
        println!("{} frames at {hop} s", grid.n_frames);
    }
    let labels: Vec<&str> = FunctionLabel::ALL.iter().map(|l| l.name()).collect();
    emit(
        json,
        &json!({
            "hop": hop,
            "n_frames": grid.n_frames,
            "labels": labels,
            "function_curves": targets.function_curves,
            "boundary_curve": targets.boundary_curve,
        }),
    )
}

fn features(wav: &Path, out: &Path, json: &Option<PathBuf>) -> Result<()> {
    let clip = load_wav(wav)?;
    let spec = front_end()?.process(&clip);
    std::fs::write(out, spec.to_bytes()).with_context(|| format!("writing {}", out.display()))?;
    if !quiet(json) {
        println!(
            "{} frames x {} bins -> {}",
            spec.n_frames,
            spec.n_bins,
            out.display()
        );
    }
    emit(
        json,
        &json!({ "frames": spec.n_frames, "bins": spec.n_bins, "frame_hop": spec.frame_hop, "path": out }),
    )
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Synth {
            out,
            songs,
            test_songs,
            seed,
            json,
        } => synth(out, *songs, *test_songs, *seed, json)?,
        Command::Train {
            config,
            manifest,
            out,
            json,
        } => return train(config, manifest, out, json),
        Command::Cv {
            config,
            manifests,
            folds,
            log,
            json,
        } => cv(config, manifests, *folds, log, json)?,
        Command::Infer {
            wav,
            checkpoint,
            mode,
            json,
            dump_curves,
            threshold,
        } => infer(wav, checkpoint, mode, json, dump_curves, *threshold)?,
        Command::Evaluate {
            est,
            reference,
            hop,
            json,
        } => evaluate(est, reference, *hop, json)?,
        Command::Convert { input, json } => convert(input, json)?,
        Command::Targets {
            annotation,
            hop,
            json,
        } => targets(annotation, *hop, json)?,
        Command::Features {
            wav,
            npy_like,
            json,
        } => features(wav, npy_like, json)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
