//! Single entrypoint for the full workflow: dataset generation, dedup, both
//! training stages, evaluation, embedding export, and gradient checking.
//!
//! Every subcommand takes `--config PATH` (JSON), repeatable
//! `--set key=value` dotted-path overrides, `--seed` and `--out` shortcuts.
//! The effective config is echoed to `config.json` in the output directory
//! before any work starts; reruns with the same config and seed produce
//! byte-identical primary outputs.
//!
//! Exit status: 0 on success, 1 on runtime aborts (e.g. non-finite loss),
//! 2 on invalid configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use webadapt_core::pipeline::{self, EvalMode, RunConfig};
use webadapt_core::webdata::{self, Dataset, SyntheticDatasetConfig};
use webadapt_core::CoreError;

#[derive(Parser)]
#[command(name = "webadapt", about = "Two-stage web-supervised image-to-video transfer testbed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON config file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path config overrides, e.g. --set optimizer.momentum=0.8
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed shortcut (overrides the config's seed field).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to runs/<timestamp>-seed<seed>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic three-domain benchmark.
    GenerateData(CommonArgs),
    /// Remove web items whose embeddings overlap target keyframes.
    Dedup(DedupArgs),
    /// Train the image model (stage one).
    TrainImage(CommonArgs),
    /// Train the video model (stage two).
    TrainVideo(CommonArgs),
    /// Evaluate a checkpoint on the labeled target eval split.
    Evaluate(EvaluateArgs),
    /// Export per-domain embeddings for projection/visualization.
    ExportEmbeddings(ExportArgs),
    /// Run the seeded finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct DedupArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset directory (defaults to the config's dataset field).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Image checkpoint supplying the embedding encoder; a seeded random
    /// encoder is used when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Cosine similarity threshold.
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// frame_model (2D, mean over frames) or video_model (3D, mean over chunks).
    #[arg(long, value_parser = parse_mode)]
    mode: EvalMode,
    /// Dataset directory (defaults to the config's dataset field).
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Image checkpoint supplying the encoder.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Rows to export from each domain.
    #[arg(long, default_value_t = 30)]
    per_domain: usize,
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// numerics, encoders, adversarial, attention, or all.
    #[arg(long, default_value = "all")]
    module: String,
    #[arg(long, default_value_t = 1234)]
    seed: u64,
}

fn parse_mode(s: &str) -> Result<EvalMode, String> {
    match s {
        "frame_model" => Ok(EvalMode::FrameModel),
        "video_model" => Ok(EvalMode::VideoModel),
        other => Err(format!("unknown mode {other:?} (expected frame_model or video_model)")),
    }
}

/// Error carrying the intended process exit status.
struct CliError {
    status: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            status: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        CliError {
            status: 1,
            message: message.into(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidArgument(_) | CoreError::ShapeMismatch { .. } => {
                CliError::config(e.to_string())
            }
            other => CliError::runtime(other.to_string()),
        }
    }
}

/// Applies one `key=value` override onto a JSON config value. The dotted
/// path must name an existing field; the value is parsed as JSON first and
/// falls back to a string.
fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set expects key=value, got {spec:?}")))?;
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let map = cursor
            .as_object_mut()
            .ok_or_else(|| CliError::config(format!("config key {path:?}: {seg:?} is not an object")))?;
        if i + 1 == segments.len() {
            match map.get_mut(*seg) {
                Some(slot) => {
                    *slot = parsed;
                    return Ok(());
                }
                None => return Err(CliError::config(format!("unknown config key: {path}"))),
            }
        }
        cursor = map
            .get_mut(*seg)
            .ok_or_else(|| CliError::config(format!("unknown config key: {path}")))?;
    }
    Ok(())
}

/// Loads a config file (or defaults), applies --set overrides and the --seed
/// shortcut, and deserializes with unknown keys rejected.
fn load_config<T: serde::Serialize + serde::de::DeserializeOwned + Default>(
    common: &CommonArgs,
) -> Result<T, CliError> {
    let mut value = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<serde_json::Value>(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        }
        None => serde_json::to_value(T::default()).expect("default config serializes"),
    };
    // fill unspecified top-level fields with defaults so overrides can
    // address them; unknown keys still fail at deserialization
    let defaults = serde_json::to_value(T::default()).expect("default config serializes");
    if let (Some(obj), Some(def)) = (value.as_object(), defaults.as_object()) {
        let mut merged = def.clone();
        for (k, v) in obj {
            merged.insert(k.clone(), v.clone());
        }
        value = serde_json::Value::Object(merged);
    }
    for spec in &common.overrides {
        apply_override(&mut value, spec)?;
    }
    if let Some(seed) = common.seed {
        apply_override(&mut value, &format!("seed={seed}"))?;
    }
    serde_json::from_value(value).map_err(|e| CliError::config(format!("invalid config: {e}")))
}

fn out_dir(common: &CommonArgs, seed: u64) -> PathBuf {
    match &common.out {
        Some(p) => p.clone(),
        None => {
            let stamp = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            PathBuf::from("runs").join(format!("{stamp}-seed{seed}"))
        }
    }
}

fn echo_config<T: serde::Serialize>(cfg: &T, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(e.to_string()))?;
    let text = serde_json::to_string_pretty(cfg).map_err(|e| CliError::runtime(e.to_string()))?;
    std::fs::write(dir.join("config.json"), text).map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::load(path).map_err(|e| CliError::config(format!("dataset: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenerateData(common) => {
            let cfg: SyntheticDatasetConfig = load_config(&common)?;
            let dir = out_dir(&common, cfg.seed);
            echo_config(&cfg, &dir)?;
            let manifest = webdata::generate_dataset(&cfg, &dir).map_err(|e| match e {
                CoreError::InvalidArgument(_) => CliError::config(e.to_string()),
                other => CliError::runtime(other.to_string()),
            })?;
            println!(
                "generated {} items across {} classes at {}",
                manifest.items.len(),
                manifest.classes.len(),
                dir.display()
            );
            Ok(())
        }
        Command::Dedup(args) => {
            let cfg: RunConfig = load_config(&args.common)?;
            if !(args.threshold > 0.0 && args.threshold <= 1.0) {
                return Err(CliError::config(format!(
                    "threshold must be in (0, 1], got {}",
                    args.threshold
                )));
            }
            let dataset_dir = args.dataset.unwrap_or_else(|| cfg.dataset.clone());
            let dataset = load_dataset(&dataset_dir)?;
            let dir = out_dir(&args.common, cfg.seed);
            echo_config(&cfg, &dir)?;
            let encoder = match &args.checkpoint {
                Some(p) => pipeline::load_image_checkpoint(p)?.0.encoder,
                None => webadapt_core::encoders::Encoder2dState::new_seeded(
                    cfg.arch(dataset.num_classes()),
                    cfg.seed,
                )?,
            };
            let report = dedup_dataset(&encoder, &dataset, args.threshold)?;
            let json = serde_json::json!({
                "threshold": args.threshold,
                "kept": report.kept,
                "removed": report.removed,
                "flagged_zero_norm": report.flagged_zero_norm,
            });
            std::fs::write(
                dir.join("dedup.json"),
                serde_json::to_string_pretty(&json).map_err(|e| CliError::runtime(e.to_string()))?,
            )
            .map_err(|e| CliError::runtime(e.to_string()))?;
            println!(
                "dedup: kept {}, removed {} (report at {})",
                report.kept.len(),
                report.removed.len(),
                dir.join("dedup.json").display()
            );
            Ok(())
        }
        Command::TrainImage(common) => {
            let cfg: RunConfig = load_config(&common)?;
            let dataset = load_dataset(&cfg.dataset)?;
            cfg.validate_against(&dataset.manifest)
                .map_err(|e| CliError::config(e.to_string()))?;
            let dir = out_dir(&common, cfg.seed);
            echo_config(&cfg, &dir)?;
            let artifacts = pipeline::train_image_stage(&cfg, &dataset, &dir)?;
            println!(
                "image stage done: accuracy {:.4}, checkpoint {}",
                artifacts.final_accuracy,
                artifacts.checkpoint.display()
            );
            Ok(())
        }
        Command::TrainVideo(common) => {
            let cfg: RunConfig = load_config(&common)?;
            let dataset = load_dataset(&cfg.dataset)?;
            cfg.validate_against(&dataset.manifest)
                .map_err(|e| CliError::config(e.to_string()))?;
            if cfg.ablation.spatial_init == pipeline::SpatialInit::ImageModel
                && cfg.image_checkpoint.is_none()
            {
                return Err(CliError::config(
                    "train-video with spatial_init=image_model requires image_checkpoint",
                ));
            }
            let dir = out_dir(&common, cfg.seed);
            echo_config(&cfg, &dir)?;
            let artifacts = pipeline::train_video_stage(
                &cfg,
                &dataset,
                cfg.image_checkpoint.as_deref(),
                &dir,
            )?;
            println!(
                "video stage done: accuracy {:.4}, checkpoint {}",
                artifacts.final_accuracy,
                artifacts.checkpoint.display()
            );
            Ok(())
        }
        Command::Evaluate(args) => {
            let cfg: RunConfig = load_config(&args.common)?;
            let dataset_dir = args.dataset.unwrap_or_else(|| cfg.dataset.clone());
            let dataset = load_dataset(&dataset_dir)?;
            let report = pipeline::evaluate(&args.checkpoint, &dataset, args.mode)?;
            let dir = out_dir(&args.common, cfg.seed);
            echo_config(&cfg, &dir)?;
            std::fs::write(
                dir.join("eval.json"),
                serde_json::to_string_pretty(&report).map_err(|e| CliError::runtime(e.to_string()))?,
            )
            .map_err(|e| CliError::runtime(e.to_string()))?;
            println!("accuracy {:.4} over {} videos", report.accuracy, report.n_videos);
            for c in &report.per_class {
                println!("  class {:>2} {:<18} {:>3}/{:<3}", c.class_id, c.name, c.correct, c.total);
            }
            Ok(())
        }
        Command::ExportEmbeddings(args) => {
            let cfg: RunConfig = load_config(&args.common)?;
            let dataset_dir = args.dataset.unwrap_or_else(|| cfg.dataset.clone());
            let dataset = load_dataset(&dataset_dir)?;
            let (state, _) = pipeline::load_image_checkpoint(&args.checkpoint)?;
            let dir = out_dir(&args.common, cfg.seed);
            echo_config(&cfg, &dir)?;
            let summary =
                pipeline::export_embeddings(&state.encoder, &dataset, args.per_domain, cfg.seed, &dir)?;
            println!(
                "exported {} rows of dim {} to {}",
                summary.rows,
                summary.embedding_dim,
                dir.join("embeddings.wda").display()
            );
            Ok(())
        }
        Command::Gradcheck(args) => {
            let reports = pipeline::gradcheck_suite(&args.module, args.seed)?;
            let mut all_passed = true;
            for r in &reports {
                println!("{r}");
                all_passed &= r.passed;
            }
            if all_passed {
                Ok(())
            } else {
                Err(CliError::runtime("gradient checks failed"))
            }
        }
    }
}

/// Embeds web items (images directly, videos via chunk-start keyframes) and
/// target-train keyframes through the encoder, then applies the overlap rule.
fn dedup_dataset(
    encoder: &webadapt_core::encoders::Encoder2dState,
    dataset: &Dataset,
    threshold: f64,
) -> Result<webdata::DedupReport, CliError> {
    use webadapt_core::webdata::{chunk_starts, DomainTag, Split};
    let hw = dataset.manifest.config.frame_size;
    let f = dataset.manifest.config.frames_per_chunk;
    let embed = |frames: Vec<f32>, count: usize| -> Result<Vec<f32>, CliError> {
        let batch = webadapt_core::Tensor::new(vec![count, 3, hw, hw], frames)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        let out = webadapt_core::encoders::encoder2d_forward(encoder, &batch)?;
        Ok(out.embeddings.data().to_vec())
    };

    let mut web_ids = Vec::new();
    let mut buf: Vec<f32> = Vec::new();
    let mut n_web = 0usize;
    for (idx, item) in dataset.manifest.items.iter().enumerate() {
        match (item.domain, item.split) {
            (DomainTag::WebImage, Split::Train) => {
                buf.extend_from_slice(dataset.pixels(idx).data());
                web_ids.push(item.id.clone());
                n_web += 1;
            }
            (DomainTag::WebVideo, Split::Train) => {
                for start in chunk_starts(item.frames, f) {
                    dataset.copy_frame(idx, start, &mut buf);
                    web_ids.push(item.id.clone());
                    n_web += 1;
                }
            }
            _ => {}
        }
    }
    let d = encoder.arch.embedding_dim();
    let web = webadapt_core::Tensor::new(vec![n_web, d], embed(buf, n_web)?)
        .map_err(|e| CliError::runtime(e.to_string()))?;

    let mut tbuf: Vec<f32> = Vec::new();
    let mut n_tgt = 0usize;
    for (idx, item) in dataset.manifest.items.iter().enumerate() {
        if item.domain == DomainTag::Target && item.split == Split::Train {
            for start in chunk_starts(item.frames, f) {
                dataset.copy_frame(idx, start, &mut tbuf);
                n_tgt += 1;
            }
        }
    }
    let target = webadapt_core::Tensor::new(vec![n_tgt, d], embed(tbuf, n_tgt)?)
        .map_err(|e| CliError::runtime(e.to_string()))?;

    webdata::dedup_overlap(&web_ids, &web, &target, threshold).map_err(CliError::from)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.status)
        }
    }
}
