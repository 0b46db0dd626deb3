//! Batch front-end: corpus ingestion, association matrices, model training,
//! generalization scoring, lambda sweeps and shift reports as reproducible
//! commands. Every command writes a manifest next to its outputs.

mod manifest;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use xpasc_core::association::{build_matrices, AssociationMethod, MatricesFile};
use xpasc_core::corpus::{
    count_cooccurrences, filter_unmatched, load_corpus, Corpus, Instance,
};
use xpasc_core::models::{
    checkpoint_digest, majority_vote_label, train_bow_softmax, train_knowman, Checkpoint,
    TiePolicy, TrainConfig,
};
use xpasc_core::score::{lambda_sweep, shift_analysis, xpasc, xpasc_scaled};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "xpasc", version, about = "Generalization scoring for weakly supervised models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, validate and filter a raw corpus; write the filtered corpus.
    Ingest(IngestArgs),
    /// Build association matrices from a filtered corpus.
    Assoc(AssocArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Score a trained model against a corpus and matrices.
    Score(ScoreArgs),
    /// Train and score a grid of (lambda, seed) adversarial models.
    Sweep(SweepArgs),
    /// Compare the top explainability features of two models.
    Shift(ShiftArgs),
}

#[derive(Args, Serialize)]
struct IngestArgs {
    /// Metadata JSON ({"classes": [...], "lfs": [...]}).
    #[arg(long)]
    meta: PathBuf,
    /// Instance JSON Lines file.
    #[arg(long)]
    data: PathBuf,
    /// Output directory (meta.json, instances.jsonl, stats.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct AssocArgs {
    /// Filtered corpus directory (from `ingest`).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Output matrices JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Chi2,
    Ppmi,
    Npmi,
}

impl From<MethodArg> for AssociationMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Chi2 => AssociationMethod::Chi2,
            MethodArg::Ppmi => AssociationMethod::Ppmi,
            MethodArg::Npmi => AssociationMethod::Npmi,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModelArg {
    MvBow,
    Knowman,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TieArg {
    Random,
    Abstain,
}

#[derive(Args, Serialize)]
struct TrainFlags {
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().lr_disc)]
    lr_disc: f64,
    #[arg(long, default_value_t = TrainConfig::default().hidden)]
    hidden: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch: usize,
}

impl TrainFlags {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            lr: self.lr,
            lr_disc: self.lr_disc,
            epochs: self.epochs,
            batch_size: self.batch,
            hidden: self.hidden,
            seed: self.seed,
        }
    }
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    model: ModelArg,
    #[command(flatten)]
    flags: TrainFlags,
    /// Majority-vote tie policy (mv-bow only).
    #[arg(long, value_enum, default_value = "random")]
    tie: TieArg,
    /// Output checkpoint JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ScoreArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint file from `train`.
    #[arg(long)]
    model: PathBuf,
    /// Matrices file from `assoc`.
    #[arg(long)]
    assoc: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Use the normalized variant (NPMI, per-instance-max explainability,
    /// MinMax over both pooled distributions).
    #[arg(long)]
    scaled: bool,
    /// Output report JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated lambda values, e.g. 0,0.5,1,2,4.
    #[arg(long, value_delimiter = ',', required = true)]
    lambdas: Vec<f64>,
    /// Comma-separated seeds, e.g. 0,1,2,3,4.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[arg(long, value_enum)]
    assoc_method: MethodArg,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().lr_disc)]
    lr_disc: f64,
    #[arg(long, default_value_t = TrainConfig::default().hidden)]
    hidden: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch: usize,
    /// Output directory (sweep.csv, sweep.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ShiftArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model_a: PathBuf,
    #[arg(long)]
    model_b: PathBuf,
    #[arg(long)]
    assoc: PathBuf,
    /// Output report JSON file.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(args) => cmd_ingest(&args),
        Command::Assoc(args) => cmd_assoc(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Score(args) => cmd_score(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Shift(args) => cmd_shift(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// JSON Lines record in the external instance format.
#[derive(Serialize)]
struct InstanceRecord<'a> {
    id: &'a str,
    tokens: &'a [String],
    label: usize,
    lf_matches: &'a [usize],
}

fn write_instances(path: &Path, instances: &[Instance]) -> Result<()> {
    let mut out = Vec::new();
    for instance in instances {
        let record = InstanceRecord {
            id: &instance.id,
            tokens: &instance.tokens,
            label: instance.weak_label,
            lf_matches: &instance.lf_matches,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.push(b'\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Loads a filtered corpus directory (meta.json + instances.jsonl).
/// Filtering is idempotent, so re-filtering an ingested corpus is a no-op.
fn load_corpus_dir(dir: &Path) -> Result<Corpus> {
    let meta = dir.join("meta.json");
    let data = dir.join("instances.jsonl");
    let corpus = load_corpus(&meta, &data)?;
    let (filtered, _) = filter_unmatched(&corpus)?;
    Ok(filtered)
}

fn corpus_inputs(manifest: &mut RunManifest, dir: &Path) -> Result<()> {
    manifest.input(&dir.join("meta.json"))?;
    manifest.input(&dir.join("instances.jsonl"))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)?;
    fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    let corpus = load_corpus(&args.meta, &args.data)?;
    let (filtered, stats) = filter_unmatched(&corpus)?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let meta_path = args.out.join("meta.json");
    let data_path = args.out.join("instances.jsonl");
    let stats_path = args.out.join("stats.json");
    write_json(&meta_path, &filtered.meta)?;
    write_instances(&data_path, &filtered.instances)?;
    write_json(&stats_path, &stats)?;

    let mut manifest = RunManifest::new("ingest", serde_json::to_value(args)?);
    manifest.input(&args.meta)?;
    manifest.input(&args.data)?;
    manifest.output(&meta_path);
    manifest.output(&data_path);
    manifest.output(&stats_path);
    manifest.write(&args.out.join("manifest.json"))?;

    println!(
        "ingested {} instances, retained {} ({:.3})",
        stats.original_size, stats.filtered_size, stats.retained_fraction
    );
    Ok(())
}

fn cmd_assoc(args: &AssocArgs) -> Result<()> {
    let corpus = load_corpus_dir(&args.corpus)?;
    let counts = count_cooccurrences(&corpus);
    let matrices = build_matrices(&counts, args.method.into());
    MatricesFile::new(&matrices, &corpus).save(&args.out)?;

    let mut manifest = RunManifest::new("assoc", serde_json::to_value(args)?);
    corpus_inputs(&mut manifest, &args.corpus)?;
    manifest.output(&args.out);
    manifest.write(&manifest_path(&args.out))?;
    println!("wrote {} matrices to {}", matrices.method, args.out.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let corpus = load_corpus_dir(&args.corpus)?;
    let config = args.flags.config();

    let (checkpoint, loss, metric) = match args.model {
        ModelArg::MvBow => {
            let tie = match args.tie {
                TieArg::Random => TiePolicy::Random { seed: config.seed },
                TieArg::Abstain => TiePolicy::Abstain,
            };
            // abstained instances are dropped from training but kept in the
            // vocabulary so the checkpoint digest still matches the corpus
            let mut labeled = Vec::new();
            let mut labels = Vec::new();
            for instance in &corpus.instances {
                if let Some(label) = majority_vote_label(instance, &corpus.meta, tie) {
                    labeled.push(instance.clone());
                    labels.push(label);
                }
            }
            if labeled.is_empty() {
                bail!("no usable instances: every majority vote abstained");
            }
            let train_corpus = Corpus {
                meta: corpus.meta.clone(),
                instances: labeled,
                vocabulary: corpus.vocabulary.clone(),
            };
            let model = train_bow_softmax(&train_corpus, &labels, &config)?;
            let loss = model.mean_nll(&train_corpus, &labels);
            let metric = model.accuracy(&train_corpus, &labels);
            (model.checkpoint(&config), loss, metric)
        }
        ModelArg::Knowman => {
            let model = train_knowman(&corpus, &config)?;
            (
                model.checkpoint(&config),
                model.mean_class_nll(&corpus),
                model.class_accuracy(&corpus),
            )
        }
    };

    checkpoint.save(&args.out)?;
    let mut manifest = RunManifest::new("train", serde_json::to_value(args)?);
    manifest.seed = Some(config.seed);
    corpus_inputs(&mut manifest, &args.corpus)?;
    manifest.output(&args.out);
    manifest.write(&manifest_path(&args.out))?;

    println!("final training loss {loss:.6}, task metric {metric:.4}");
    println!("checkpoint digest {}", checkpoint_digest(&args.out)?);
    Ok(())
}

/// Verifies that a matrices file was built over the same features as the
/// corpus vocabulary.
fn check_features(corpus: &Corpus, features: &[String], path: &Path) -> Result<()> {
    if corpus.vocabulary.terms() != features {
        bail!(
            "matrices file {} was built over a different vocabulary \
             ({} features vs {} in the corpus)",
            path.display(),
            features.len(),
            corpus.vocabulary.len()
        );
    }
    Ok(())
}

fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let corpus = load_corpus_dir(&args.corpus)?;
    let checkpoint = Checkpoint::load(&args.model)?;
    let seed = checkpoint.config().seed;
    let oracle = checkpoint.into_oracle(&corpus)?;

    let (matrices, features) = MatricesFile::load(&args.assoc)?.into_matrices()?;
    check_features(&corpus, &features, &args.assoc)?;

    let mut report = if args.scaled {
        let counts = count_cooccurrences(&corpus);
        xpasc_scaled(&corpus, oracle.as_ref(), &counts, args.gamma)?
    } else {
        xpasc(&corpus, oracle.as_ref(), &matrices, args.gamma)?
    };
    report.model_id = Some(args.model.display().to_string());
    report.seed = Some(seed);

    write_json(&args.out, &report)?;
    let mut manifest = RunManifest::new("score", serde_json::to_value(args)?);
    manifest.seed = Some(seed);
    corpus_inputs(&mut manifest, &args.corpus)?;
    manifest.input(&args.model)?;
    manifest.input(&args.assoc)?;
    manifest.output(&args.out);
    manifest.write(&manifest_path(&args.out))?;

    println!("{}", report.score);
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let corpus = load_corpus_dir(&args.corpus)?;
    let base_config = TrainConfig {
        lambda: 0.0,
        lr: args.lr,
        lr_disc: args.lr_disc,
        epochs: args.epochs,
        batch_size: args.batch,
        hidden: args.hidden,
        seed: 0,
    };
    let threads = max_threads()?;
    let report = lambda_sweep(
        &corpus,
        &args.lambdas,
        &args.seeds,
        &base_config,
        args.assoc_method.into(),
        threads,
    )?;

    let succeeded = report.cells.iter().filter(|c| c.xpasc.is_some()).count();
    for cell in &report.cells {
        if let Some(err) = &cell.error {
            eprintln!("cell lambda={} seed={} failed: {err}", cell.lambda, cell.seed);
        }
    }
    if succeeded == 0 {
        bail!("every sweep cell failed");
    }

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let csv_path = args.out.join("sweep.csv");
    let json_path = args.out.join("sweep.json");
    fs::write(&csv_path, report.to_csv())
        .with_context(|| format!("writing {}", csv_path.display()))?;
    write_json(&json_path, &report)?;

    let mut manifest = RunManifest::new("sweep", serde_json::to_value(args)?);
    corpus_inputs(&mut manifest, &args.corpus)?;
    manifest.output(&csv_path);
    manifest.output(&json_path);
    manifest.write(&args.out.join("manifest.json"))?;

    let mut stdout = std::io::stdout().lock();
    for summary in &report.per_lambda {
        writeln!(
            stdout,
            "lambda {} mean xpasc {:?} mean task metric {:?}",
            summary.lambda, summary.mean_xpasc, summary.mean_task_metric
        )?;
    }
    match report.spearman {
        Some(rho) => writeln!(stdout, "spearman rho {rho}")?,
        None => writeln!(stdout, "spearman rho undefined")?,
    }
    Ok(())
}

fn cmd_shift(args: &ShiftArgs) -> Result<()> {
    let corpus = load_corpus_dir(&args.corpus)?;
    let oracle_a = Checkpoint::load(&args.model_a)?.into_oracle(&corpus)?;
    let oracle_b = Checkpoint::load(&args.model_b)?.into_oracle(&corpus)?;
    let (matrices, features) = MatricesFile::load(&args.assoc)?.into_matrices()?;
    check_features(&corpus, &features, &args.assoc)?;

    let report = shift_analysis(&corpus, oracle_a.as_ref(), oracle_b.as_ref(), &matrices)?;
    write_json(&args.out, &report)?;

    let mut manifest = RunManifest::new("shift", serde_json::to_value(args)?);
    corpus_inputs(&mut manifest, &args.corpus)?;
    manifest.input(&args.model_a)?;
    manifest.input(&args.model_b)?;
    manifest.input(&args.assoc)?;
    manifest.output(&args.out);
    manifest.write(&manifest_path(&args.out))?;

    println!(
        "none {} off-lf {} to-class {}",
        report.counts.none, report.counts.off_lf, report.counts.to_class
    );
    Ok(())
}

/// Worker cap from XPASC_THREADS; absent means single-threaded.
fn max_threads() -> Result<Option<usize>> {
    match std::env::var("XPASC_THREADS") {
        Ok(raw) => {
            let n: usize = raw
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .with_context(|| format!("XPASC_THREADS must be a positive integer, got {raw:?}"))?;
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

/// `foo.json` -> `foo.manifest.json`, next to the output itself.
fn manifest_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}.manifest.json"))
}
