//! emovox command line: train, ablate, convert, batch-convert, evaluate,
//! report-figures, plus helpers for bootstrapping configs and the toy
//! corpus.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use emovox_core::backends::{build_mos, build_ser, MosBackendConfig, MODEL_CACHE_ENV};
use emovox_core::inference::{batch_convert, BatchTarget, Converter};
use emovox_core::training::{
    ablation_run, generate_toy_corpus, load_manifest, train, train_with_log, ManifestRow, Split,
    TrainConfig,
};
use emovox_core::{
    emit_figures, evaluate, load_audio, save_wav, CheckpointBundle, EvalTargets,
};

#[derive(Parser)]
#[command(
    name = "emovox",
    about = "Arousal-conditioned speech emotion conversion toolkit",
    long_about = None,
    after_help = format!(
        "External model weights are resolved under the directory named by ${MODEL_CACHE_ENV}; \
         the default mock backends need no downloads."
    )
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a conversion model from a manifest
    Train(TrainArgs),
    /// Train once per segment size and compare class-wise metrics
    Ablate(AblateArgs),
    /// Convert one utterance to a target arousal
    Convert(ConvertArgs),
    /// Convert every manifest row
    BatchConvert(BatchConvertArgs),
    /// Score conversions with the SER and MOS backends
    Evaluate(EvaluateArgs),
    /// Emit spectrograms, pitch contours and pitch statistics
    ReportFigures(ReportFiguresArgs),
    /// Generate the synthetic toy corpus
    ToyCorpus(ToyCorpusArgs),
    /// Write a starter training config
    InitConfig(InitConfigArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training config JSON
    #[arg(long)]
    config: PathBuf,
    /// Newline-delimited JSON manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory (checkpoints + training log)
    #[arg(long)]
    out: PathBuf,
    /// Resume from this checkpoint directory
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override the configured step count
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated segment sizes in seconds, e.g. 0.75,1.5,3.0
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<f64>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Input WAV or FLAC file
    #[arg(long = "in")]
    input: PathBuf,
    /// Target arousal in [1, 7]
    #[arg(long)]
    target_arousal: f64,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output WAV path
    #[arg(long)]
    out: PathBuf,
    /// Maximum input duration in seconds
    #[arg(long, default_value_t = emovox_core::inference::DEFAULT_MAX_SECONDS)]
    max_seconds: f64,
}

#[derive(Args)]
struct BatchConvertArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// A number in [1, 7], or "column" to use each row's own arousal
    #[arg(long)]
    target_arousal: String,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Restrict to one split
    #[arg(long, default_value = "all")]
    split: String,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated arousal targets, or "self" for self-reconstruction
    #[arg(long)]
    targets: String,
    /// Report output directory
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// rows.jsonl of a previous report; adds a one-tailed significance test
    /// of this run's squared errors against it
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Args)]
struct ReportFiguresArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Comma-separated arousal targets, e.g. 1,7
    #[arg(long, value_delimiter = ',')]
    targets: Vec<f64>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ToyCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    train: usize,
    #[arg(long, default_value_t = 2)]
    eval: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args)]
struct InitConfigArgs {
    #[arg(long)]
    out: PathBuf,
    /// "toy" (tiny networks, 500 steps) or "default"
    #[arg(long, default_value = "toy")]
    preset: String,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

fn split_filter(rows: &[ManifestRow], split: &str) -> Result<Vec<ManifestRow>> {
    let filtered: Vec<ManifestRow> = match split {
        "all" => rows.to_vec(),
        "train" => rows.iter().filter(|r| r.split == Split::Train).cloned().collect(),
        "dev" => rows.iter().filter(|r| r.split == Split::Dev).cloned().collect(),
        "test" => rows.iter().filter(|r| r.split == Split::Test).cloned().collect(),
        other => bail!("unknown split '{other}' (use train, dev, test, or all)"),
    };
    if filtered.is_empty() {
        bail!("no manifest rows in split '{split}'");
    }
    Ok(filtered)
}

fn manifest_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

fn load_rows(path: &Path) -> Result<Vec<ManifestRow>> {
    let loaded = load_manifest(path)?;
    for issue in &loaded.issues {
        eprintln!("manifest line {}: {}", issue.line, issue.message);
    }
    if loaded.duplicate_paths > 0 {
        eprintln!("warning: {} duplicate audio paths in manifest", loaded.duplicate_paths);
    }
    Ok(loaded.rows)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Convert(args) => cmd_convert(args),
        Command::BatchConvert(args) => cmd_batch_convert(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::ReportFigures(args) => cmd_report_figures(args),
        Command::ToyCorpus(args) => cmd_toy_corpus(args),
        Command::InitConfig(args) => cmd_init_config(args),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let rows = load_rows(&args.manifest)?;
    let base = manifest_base(&args.manifest);
    let outcome = if let Some(resume) = &args.resume {
        let bundle = CheckpointBundle::load(resume)?;
        println!("resuming from step {} at {}", bundle.meta.step, resume.display());
        train_with_log(bundle, &rows, &base, Some(&args.out), args.steps)?
    } else {
        let mut cfg = TrainConfig::load(&args.config)?;
        if let Some(steps) = args.steps {
            cfg.steps = steps;
        }
        train(cfg, &rows, &base, Some(&args.out))?
    };
    if let Some(last) = outcome.reports.last() {
        println!(
            "finished at step {}: total_g {:.3}, total_d {:.3}, recon {:.3}",
            last.step + 1,
            last.total_g,
            last.total_d,
            last.recon
        );
    }
    println!("final checkpoint: {}", args.out.join("final").display());
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    if args.sizes.is_empty() {
        bail!("--sizes needs at least one segment length");
    }
    let cfg = TrainConfig::load(&args.config)?;
    let rows = load_rows(&args.manifest)?;
    let base = manifest_base(&args.manifest);
    let outcomes = ablation_run(&cfg, &rows, &base, &args.sizes, Some(&args.out))?;
    for o in &outcomes {
        match &o.report {
            Ok(r) => {
                println!(
                    "segment {:>5.2}s: L_mse {:.4}, L_abs {:.4}, mean MOS {}",
                    o.segment_seconds,
                    r.l_mse,
                    r.l_abs,
                    r.mean_mos.map(|m| format!("{m:.3}")).unwrap_or_else(|| "-".into())
                );
                r.save(&args.out.join(format!("seg_{}", o.segment_seconds)).join("report"))?;
            }
            Err(e) => println!("segment {:>5.2}s: FAILED: {e}", o.segment_seconds),
        }
    }
    println!("trend table: {}", args.out.join("trends.csv").display());
    Ok(())
}

fn cmd_convert(args: ConvertArgs) -> Result<()> {
    let converter = Converter::load(&args.checkpoint)?.with_max_seconds(args.max_seconds);
    let clip = load_audio(&args.input, converter.sample_rate())?;
    let out = converter.convert(&clip, args.target_arousal)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    save_wav(&out, &args.out)?;
    println!(
        "{} -> {} at target arousal {}",
        args.input.display(),
        args.out.display(),
        args.target_arousal
    );
    Ok(())
}

fn cmd_batch_convert(args: BatchConvertArgs) -> Result<()> {
    let target = match args.target_arousal.as_str() {
        "column" => BatchTarget::Column,
        v => BatchTarget::Global(
            v.parse::<f64>()
                .with_context(|| format!("--target-arousal '{v}' is neither a number nor 'column'"))?,
        ),
    };
    let rows = load_rows(&args.manifest)?;
    let rows = split_filter(&rows, &args.split)?;
    let base = manifest_base(&args.manifest);
    let converter = Converter::load(&args.checkpoint)?;
    let index = batch_convert(&rows, &base, target, &converter, &args.out)?;
    println!(
        "converted {} rows ({} failures); index at {}",
        index.entries.len(),
        index.failures.len(),
        args.out.join("index.jsonl").display()
    );
    for f in &index.failures {
        eprintln!("failed {}: {}", f.input, f.error);
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let targets = match args.targets.as_str() {
        "self" => EvalTargets::SelfAnnotated,
        list => EvalTargets::List(
            list.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .with_context(|| format!("--targets '{list}' must be numbers or 'self'"))?,
        ),
    };
    let rows = load_rows(&args.manifest)?;
    let rows = split_filter(&rows, &args.split)?;
    let base = manifest_base(&args.manifest);
    let bundle = CheckpointBundle::load(&args.checkpoint)?;
    let cfg = bundle.meta.config.clone();
    let converter = Converter::from_bundle(&bundle)?;
    let ser = build_ser(&cfg.backends.ser, cfg.sample_rate)?;
    let mos = build_mos(&MosBackendConfig::Mock, cfg.sample_rate)?;
    let mut report = evaluate(&rows, &base, &targets, &converter, &*ser, Some(&*mos))?;
    if let Some(baseline) = &args.baseline {
        let errors: Vec<f64> = report.rows.iter().map(|r| r.squared_error).collect();
        let base_errors = read_baseline_errors(baseline)?;
        let sig = emovox_core::significance(&errors, &base_errors)?;
        println!(
            "one-tailed test current < baseline: p = {:.4} ({:?})",
            sig.p_value, sig.method
        );
        report.significance.push(emovox_core::evaluation::SignificanceEntry {
            name: "squared_error_vs_baseline".into(),
            pair: ("current".into(), baseline.display().to_string()),
            result: sig,
        });
    }
    report.save(&args.report)?;
    println!(
        "L_mse {:.4}, L_abs {:.4}, mean MOS {} over {} rows; report at {}",
        report.l_mse,
        report.l_abs,
        report.mean_mos.map(|m| format!("{m:.3}")).unwrap_or_else(|| "-".into()),
        report.rows.len(),
        args.report.display()
    );
    Ok(())
}

fn read_baseline_errors(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading baseline {}", path.display()))?;
    let mut errors = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: emovox_core::EvalRow = serde_json::from_str(line)?;
        errors.push(row.squared_error);
    }
    if errors.len() < 2 {
        bail!("baseline {} has fewer than 2 rows", path.display());
    }
    Ok(errors)
}

fn cmd_report_figures(args: ReportFiguresArgs) -> Result<()> {
    if args.targets.is_empty() {
        bail!("--targets needs at least one arousal value");
    }
    let converter = Converter::load(&args.checkpoint)?;
    let clip = load_audio(&args.input, converter.sample_rate())?;
    let mut conversions = Vec::new();
    for &target in &args.targets {
        conversions.push((target, converter.convert(&clip, target)?));
    }
    let set = emit_figures(&clip, &conversions, &args.out)?;
    for row in &set.stats {
        println!(
            "{:>10} ({}): mean F0 {} Hz, std {} Hz, {}/{} voiced frames",
            row.label,
            row.color,
            row.mean_voiced_hz.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into()),
            row.std_voiced_hz.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into()),
            row.voiced_frames,
            row.total_frames
        );
    }
    println!("{} files in {}", set.files.len(), args.out.display());
    Ok(())
}

fn cmd_toy_corpus(args: ToyCorpusArgs) -> Result<()> {
    let corpus = generate_toy_corpus(&args.out, args.train, args.eval, args.seed)?;
    println!(
        "{} clips ({} train, {} test); manifest at {}",
        corpus.rows.len(),
        args.train,
        args.eval,
        corpus.manifest_path.display()
    );
    Ok(())
}

fn cmd_init_config(args: InitConfigArgs) -> Result<()> {
    let cfg = match args.preset.as_str() {
        "toy" => TrainConfig::toy_preset(args.seed),
        "default" => TrainConfig {
            seed: args.seed,
            ..TrainConfig::default()
        },
        other => bail!("unknown preset '{other}' (use toy or default)"),
    };
    cfg.save(&args.out)?;
    println!("wrote {} preset to {}", args.preset, args.out.display());
    Ok(())
}
