//! `facemorph`: fit a morphable model to 2D facial landmarks, retarget
//! driving sequences onto a reference identity, render fits, and run the
//! shuffle evaluation.
//!
//! Exit codes: 0 success, 1 input or validation error, 2 numerical failure,
//! 3 partial success (some frames or pairs were skipped; see the outputs).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use facemorph_core::camera::LandmarkSet;
use facemorph_core::error::{Error, Result};
use facemorph_core::eval::{
    read_id_list, run_shuffle_eval, shuffle_pairs, synthesize_corpus, write_csv, CorpusConfig,
    ShufflePlan,
};
use facemorph_core::fitting::{fit, FitConfig, FitResult};
use facemorph_core::model::{load_model, save_model, synthesize_test_model};
use facemorph_core::pipeline::{
    load_landmark_sequence, process_sequence_with, write_sequence_output, SequenceJob,
};
use facemorph_core::render::{bake_reference_texture, rasterize, Image};

#[derive(Parser)]
#[command(name = "facemorph", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the morphable model to one landmark file and write the result.
    Fit(FitArgs),
    /// Retarget a driving landmark sequence onto a reference identity.
    Transform(TransformArgs),
    /// Render a fitted face to a PPM image.
    Render(RenderArgs),
    /// Generate a deterministic synthetic model for testing.
    SynthModel(SynthModelArgs),
    /// Generate a synthetic landmark corpus for the evaluation harness.
    SynthCorpus(SynthCorpusArgs),
    /// Shuffle-based evaluation utilities.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Args)]
struct FitArgs {
    /// Model directory (model.json plus binary basis files).
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    /// Landmark file (JSON with 68 points and image dimensions).
    #[arg(long, value_name = "FILE")]
    landmarks: PathBuf,
    /// Fit configuration file (JSON); defaults apply when absent.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output fit file (JSON).
    #[arg(short, value_name = "FILE")]
    output: PathBuf,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    /// Reference landmark file; its identity is kept.
    #[arg(long, value_name = "FILE")]
    reference: PathBuf,
    /// Driving frames: a directory of landmark files, a JSON array file,
    /// or a JSONL file; expression and pose come from here.
    #[arg(long, value_name = "FILE_OR_DIR")]
    driving: PathBuf,
    /// Temporal smoothing weight in [0, 1]; 0 disables smoothing.
    #[arg(long, value_name = "ALPHA")]
    smooth: Option<f64>,
    /// Also write one PPM render per frame.
    #[arg(long)]
    render: bool,
    /// Render canvas size, e.g. 320x240; defaults to each frame's size.
    #[arg(long, value_name = "WxH")]
    size: Option<String>,
    /// Reference image used to texture the renders (PPM, PNG, or JPEG).
    #[arg(long, value_name = "IMG")]
    texture: Option<PathBuf>,
    /// Job configuration file (JSON mirroring the sequence job; flags
    /// override file values).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (landmarks.jsonl, gaps.json, optional renders).
    #[arg(short, value_name = "DIR")]
    output: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    /// Fit file to render (JSON, as written by `fit`).
    #[arg(long, value_name = "FILE")]
    fit: PathBuf,
    /// Canvas size, e.g. 320x240.
    #[arg(long, value_name = "WxH")]
    size: String,
    /// Image to texture the face with (PPM, PNG, or JPEG).
    #[arg(long, value_name = "IMG")]
    texture: Option<PathBuf>,
    /// Fit that aligns the texture image; defaults to --fit itself.
    #[arg(long = "ref-fit", value_name = "FILE")]
    ref_fit: Option<PathBuf>,
    /// Output PPM file.
    #[arg(short, value_name = "FILE")]
    output: PathBuf,
}

#[derive(Args)]
struct SynthModelArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 600)]
    vertices: usize,
    /// Number of shape (identity) modes.
    #[arg(long, default_value_t = 8)]
    shape: usize,
    /// Number of expression modes.
    #[arg(long, default_value_t = 6)]
    expr: usize,
    #[arg(short, value_name = "DIR")]
    output: PathBuf,
}

#[derive(Args)]
struct SynthCorpusArgs {
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    #[arg(long, default_value_t = 10)]
    videos: usize,
    #[arg(long, default_value_t = 24)]
    frames: usize,
    #[arg(long, default_value_t = 3)]
    seed: u64,
    /// Gaussian landmark noise in pixels.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Vary frames only by in-plane rotation, scale, and translation.
    #[arg(long)]
    in_plane: bool,
    #[arg(short, value_name = "DIR")]
    output: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Build a seeded reference-shuffle plan from a video id list.
    Shuffle(ShuffleArgs),
    /// Score a shuffle plan against a landmark corpus.
    Run(EvalRunArgs),
}

#[derive(Args)]
struct ShuffleArgs {
    /// Text file with one video id per line.
    #[arg(long, value_name = "FILE")]
    ids: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Output plan file (JSON).
    #[arg(short, value_name = "FILE")]
    output: PathBuf,
}

#[derive(Args)]
struct EvalRunArgs {
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    /// Shuffle plan file (JSON, as written by `eval shuffle`).
    #[arg(long, value_name = "FILE")]
    plan: PathBuf,
    /// Corpus root: one directory per video with ref.json and frames/.
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Score raw driving landmarks instead of transformed ones.
    #[arg(long)]
    baseline: bool,
    /// Fit configuration file (JSON); defaults apply when absent.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Report directory (report.csv and report.json).
    #[arg(short, value_name = "DIR")]
    output: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems are input errors (exit 1); --help and
            // --version exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Transform(args) => cmd_transform(args),
        Command::Render(args) => cmd_render(args),
        Command::SynthModel(args) => cmd_synth_model(args),
        Command::SynthCorpus(args) => cmd_synth_corpus(args),
        Command::Eval(EvalCommand::Shuffle(args)) => cmd_eval_shuffle(args),
        Command::Eval(EvalCommand::Run(args)) => cmd_eval_run(args),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_size(text: &str) -> Result<(u32, u32)> {
    let parts: Vec<&str> = text.split('x').collect();
    let parse = |s: &str| s.trim().parse::<u32>().ok().filter(|&v| v > 0);
    match parts.as_slice() {
        [w, h] => parse(w)
            .zip(parse(h))
            .ok_or_else(|| Error::InvalidArgument(format!("bad --size value {text:?}"))),
        _ => Err(Error::InvalidArgument(format!(
            "--size wants WxH (e.g. 320x240), got {text:?}"
        ))),
    }
}

/// Loads a texture image; PPM through the native reader, PNG and JPEG
/// through the image crate.
fn load_image(path: &Path) -> Result<Image> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
        return Image::load_ppm(path);
    }
    let img = image::open(path)
        .map_err(|e| {
            Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
        })?
        .to_rgb8();
    Ok(Image { width: img.width(), height: img.height(), data: img.into_raw() })
}

fn load_fit_config(path: Option<&PathBuf>) -> Result<FitConfig> {
    let config = match path {
        Some(p) => read_json::<FitConfig>(p)?,
        None => FitConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn cmd_fit(args: FitArgs) -> Result<i32> {
    let model = load_model(&args.model)?;
    let landmarks: LandmarkSet = read_json(&args.landmarks)?;
    let config = load_fit_config(args.config.as_ref())?;
    let result = fit(&model, &landmarks, &config)?;
    write_json(&result, &args.output)?;
    println!(
        "fit: rmse {:.6}px over {} iterations -> {}",
        result.residual_rmse,
        result.iterations_run,
        args.output.display()
    );
    Ok(0)
}

/// Optional job-file fields; mirrors the sequence job, every field
/// optional so flags can override whatever the file provides.
#[derive(Deserialize, Default)]
#[serde(default)]
struct JobOverlay {
    reference: Option<LandmarkSet>,
    driving: Option<Vec<LandmarkSet>>,
    model_path: Option<PathBuf>,
    fit_config: Option<FitConfig>,
    smoothing_alpha: Option<f64>,
    emit_renders: Option<bool>,
    output_dir: Option<PathBuf>,
}

fn cmd_transform(args: TransformArgs) -> Result<i32> {
    let overlay: JobOverlay = match &args.config {
        Some(path) => read_json(path)?,
        None => JobOverlay::default(),
    };
    let reference: LandmarkSet = read_json(&args.reference)?;
    let driving = load_landmark_sequence(&args.driving)?;
    let job = SequenceJob {
        reference,
        driving,
        model_path: args.model.clone(),
        fit_config: overlay.fit_config.unwrap_or_default(),
        smoothing_alpha: args.smooth.or(overlay.smoothing_alpha).unwrap_or(0.0),
        emit_renders: args.render || overlay.emit_renders.unwrap_or(false),
        output_dir: args.output.clone(),
    };
    // Flags override the job file; these two have required flags, so the
    // file's values (if any) are always shadowed.
    let _ = (overlay.reference, overlay.driving, overlay.model_path, overlay.output_dir);

    let model = load_model(&job.model_path)?;
    let texture = args.texture.as_ref().map(|p| load_image(p)).transpose()?;
    let size = args.size.as_deref().map(parse_size).transpose()?;
    let out = process_sequence_with(&job, &model, texture.as_ref(), size)?;
    write_sequence_output(&out, &args.output)?;
    println!(
        "transform: {} frames, {} gaps -> {}",
        out.frames.len(),
        out.gaps.len(),
        args.output.display()
    );
    Ok(if out.gaps.is_empty() { 0 } else { 3 })
}

fn cmd_render(args: RenderArgs) -> Result<i32> {
    let model = load_model(&args.model)?;
    let fit_result: FitResult = read_json(&args.fit)?;
    let (width, height) = parse_size(&args.size)?;
    let texture = match &args.texture {
        Some(img_path) => {
            let img = load_image(img_path)?;
            let ref_fit: FitResult = match &args.ref_fit {
                Some(p) => read_json(p)?,
                None => fit_result.clone(),
            };
            Some(bake_reference_texture(&model, &ref_fit, &img)?)
        }
        None => None,
    };
    let mesh = model.evaluate_mesh(&fit_result.shape_coeffs, &fit_result.expr_coeffs)?;
    let face = rasterize(&mesh, &fit_result.pose, width, height, texture.as_ref());
    face.color.save_ppm(&args.output)?;
    println!("render: {width}x{height} -> {}", args.output.display());
    Ok(0)
}

fn cmd_synth_model(args: SynthModelArgs) -> Result<i32> {
    let model = synthesize_test_model(args.seed, args.vertices, args.shape, args.expr)?;
    save_model(&model, &args.output)?;
    println!(
        "synth-model: {} vertices, {}+{} modes -> {}",
        args.vertices,
        args.shape,
        args.expr,
        args.output.display()
    );
    Ok(0)
}

fn cmd_synth_corpus(args: SynthCorpusArgs) -> Result<i32> {
    let model = load_model(&args.model)?;
    let cfg = CorpusConfig {
        n_videos: args.videos,
        frames_per_video: args.frames,
        seed: args.seed,
        noise_px: args.noise,
        in_plane_only: args.in_plane,
        ..CorpusConfig::default()
    };
    let ids = synthesize_corpus(&model, &args.output, &cfg)?;
    println!("synth-corpus: {} videos -> {}", ids.len(), args.output.display());
    Ok(0)
}

fn cmd_eval_shuffle(args: ShuffleArgs) -> Result<i32> {
    let ids = read_id_list(&args.ids)?;
    let plan = shuffle_pairs(&ids, args.seed)?;
    write_json(&plan, &args.output)?;
    println!("eval shuffle: {} videos, seed {} -> {}", ids.len(), args.seed, args.output.display());
    Ok(0)
}

fn cmd_eval_run(args: EvalRunArgs) -> Result<i32> {
    let model = load_model(&args.model)?;
    let plan: ShufflePlan = read_json(&args.plan)?;
    let config = load_fit_config(args.config.as_ref())?;
    let outcome = run_shuffle_eval(&model, &plan, &args.corpus, args.baseline, &config)?;

    std::fs::create_dir_all(&args.output).map_err(|e| Error::io(&args.output, e))?;
    let csv_path = args.output.join("report.csv");
    let mut csv = Vec::new();
    write_csv(&outcome, &mut csv).map_err(|e| Error::io(&csv_path, e))?;
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    write_json(&outcome, &args.output.join("report.json"))?;

    println!(
        "eval run: {} pairs scored, {} skipped; grand averages {:.4} (frame) / {:.4} (video)",
        outcome.pairs.len(),
        outcome.skipped.len(),
        outcome.grand.frame_weighted_average,
        outcome.grand.video_weighted_average
    );
    Ok(if outcome.skipped.is_empty() { 0 } else { 3 })
}
