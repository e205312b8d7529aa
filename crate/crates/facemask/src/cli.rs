//! Command-line surface: `augment`, `train`, `eval`, `infer`, and
//! `export-embeddings-template` chain the library stages into the full
//! pipeline. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::augment::{augment_dataset, AugmentConfig};
use crate::backbone::{Backbone, BuiltinBackbone, EmbeddingStore};
use crate::dataset::{load_manifest, save_manifest, Split};
use crate::error::{Error, Result};
use crate::image::{decode_image, encode_image};
use crate::infer::{classify_crops, read_boxes, render_overlay};
use crate::metrics::evaluate;
use crate::nnhead::{HeadParameters, LossBase};
use crate::train::{train_with, TrainConfig};

#[derive(Parser)]
#[command(name = "facemask", version, about = "Face-mask classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rescale a dataset into an output directory, expanding the TRAIN
    /// split with seeded random transforms
    Augment(AugmentArgs),
    /// Train the classifier head, writing a checkpoint and a history CSV
    Train(TrainArgs),
    /// Evaluate a checkpoint over one split, writing metrics, ROC and
    /// confusion artifacts
    Eval(EvalArgs),
    /// Classify face boxes in images and write overlay renders
    Infer(InferArgs),
    /// Write an empty embeddings file plus notes for filling it with an
    /// external feature extractor
    ExportEmbeddingsTemplate(ExportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackboneKind {
    /// Load precomputed feature maps from an embeddings file
    Embedding,
    /// Use the self-contained frozen convolutional network
    Builtin,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossBaseArg {
    Log2,
    Natural,
}

impl From<LossBaseArg> for LossBase {
    fn from(b: LossBaseArg) -> LossBase {
        match b {
            LossBaseArg::Log2 => LossBase::Log2,
            LossBaseArg::Natural => LossBase::Natural,
        }
    }
}

#[derive(Args)]
struct BackboneArgs {
    /// Feature source for the classifier head
    #[arg(long, value_enum, default_value = "builtin")]
    backbone: BackboneKind,
    /// Embeddings file (required with --backbone embedding)
    #[arg(long, required_if_eq("backbone", "embedding"))]
    embeddings: Option<PathBuf>,
}

impl BackboneArgs {
    fn build(&self) -> Result<Backbone> {
        match self.backbone {
            BackboneKind::Builtin => Ok(Backbone::Builtin(BuiltinBackbone::new())),
            BackboneKind::Embedding => {
                let path = self.embeddings.as_ref().ok_or_else(|| {
                    Error::config("--backbone embedding requires --embeddings <file>")
                })?;
                Ok(Backbone::Embedding(EmbeddingStore::load(path)?))
            }
        }
    }
}

#[derive(Args)]
struct AugmentArgs {
    /// Dataset manifest CSV (path,label,split)
    #[arg(long)]
    manifest: PathBuf,
    /// Augmentation config JSON (defaults apply when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for generated images and the new manifest
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest CSV (path,label,split)
    #[arg(long)]
    manifest: PathBuf,
    /// Training config JSON (defaults apply when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's random seed
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    backbone: BackboneArgs,
    /// Directory for checkpoint.bin and history.csv
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset manifest CSV (path,label,split)
    #[arg(long)]
    manifest: PathBuf,
    /// Trained head checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    backbone: BackboneArgs,
    /// Which manifest split to evaluate
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Logarithm base of the reported cross-entropy
    #[arg(long, value_enum, default_value = "log2")]
    loss_base: LossBaseArg,
    /// Directory for metrics.json, roc.csv and confusion.txt
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    /// JSON-lines file of face boxes per image
    #[arg(long)]
    boxes: PathBuf,
    /// Trained head checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    backbone: BackboneArgs,
    /// Directory for the rendered overlay images
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// Directory for embeddings_template.bin and EMBEDDINGS_EXPORT.md
    #[arg(long)]
    out_dir: PathBuf,
}

/// Parses `argv` and runs the selected subcommand, returning the process
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            // --help/--version land here too; they print to stdout and
            // succeed, while real usage errors go to stderr with code 1.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            2
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Augment(args) => run_augment(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Infer(args) => run_infer(args),
        Command::ExportEmbeddingsTemplate(args) => run_export(args),
    }
}

fn read_config_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn run_augment(args: AugmentArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let mut cfg = match &args.config {
        Some(path) => AugmentConfig::from_json(&read_config_text(path)?)?,
        None => AugmentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = augment_dataset(&manifest, &cfg, &args.out_dir)?;
    let manifest_path = args.out_dir.join("manifest.csv");
    save_manifest(&out, &manifest_path)?;
    println!(
        "wrote {} images ({} train, {} test) and {}",
        out.len(),
        out.count(Split::Train),
        out.count(Split::Test),
        manifest_path.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let backbone = args.backbone.build()?;
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::from_json(&read_config_text(path)?)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    ensure_dir(&args.out_dir)?;
    let epochs = cfg.epochs;
    let (params, history) = train_with(&manifest, &backbone, &cfg, |s| {
        println!(
            "epoch {:>3}/{} loss {:.4} accuracy {:.4} ({:.2}s)",
            s.epoch, epochs, s.loss, s.accuracy, s.seconds
        );
    })?;
    let checkpoint = args.out_dir.join("checkpoint.bin");
    params.save(&checkpoint)?;
    history.save_csv(args.out_dir.join("history.csv"))?;
    println!("wrote {}", checkpoint.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let backbone = args.backbone.build()?;
    let params = HeadParameters::load(&args.checkpoint)?;
    let (report, cm, curve) = evaluate(
        &manifest,
        args.split.into(),
        &backbone,
        &params,
        args.loss_base.into(),
    )?;
    ensure_dir(&args.out_dir)?;
    let write = |name: &str, content: String| -> Result<()> {
        let path = args.out_dir.join(name);
        std::fs::write(&path, content).map_err(|e| Error::io(path, e))
    };
    write("metrics.json", report.to_json())?;
    write("roc.csv", curve.to_csv())?;
    write("confusion.txt", cm.to_text())?;
    print!("{}", report.to_table());
    print!("{}", cm.to_text());
    Ok(())
}

fn run_infer(args: InferArgs) -> Result<()> {
    let backbone = args.backbone.build()?;
    let params = HeadParameters::load(&args.checkpoint)?;
    let entries = read_boxes(&args.boxes)?;
    ensure_dir(&args.out_dir)?;
    for (image_path, boxes) in entries {
        let img = decode_image(&image_path)?;
        // A line with no boxes is a photo with no detected faces: the
        // overlay degenerates to a plain copy.
        let detections = if boxes.is_empty() {
            Vec::new()
        } else {
            classify_crops(&img, &boxes, &backbone, &params, &image_path)?
        };
        let overlay = render_overlay(&img, &detections)?;
        let stem = Path::new(&image_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| image_path.clone());
        let out_path = args.out_dir.join(format!("{stem}_out.ppm"));
        encode_image(&overlay, &out_path)?;
        for (i, det) in detections.iter().enumerate() {
            println!(
                "{image_path} box {i}: {} {:.0}%",
                det.label,
                det.confidence * 100.0
            );
        }
        println!("wrote {}", out_path.display());
    }
    Ok(())
}

const EXPORT_NOTES: &str = include_str!("embeddings_export.md");

fn run_export(args: ExportArgs) -> Result<()> {
    ensure_dir(&args.out_dir)?;
    let template = args.out_dir.join("embeddings_template.bin");
    EmbeddingStore::new((5, 5, 2048)).save(&template)?;
    let notes = args.out_dir.join("EMBEDDINGS_EXPORT.md");
    std::fs::write(&notes, EXPORT_NOTES).map_err(|e| Error::io(&notes, e))?;
    println!("wrote {} and {}", template.display(), notes.display());
    Ok(())
}
