//! Sequence processing: one reference landmark set plus a driving landmark
//! sequence in, a transformed landmark sequence (and optional renders) out.

use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{LandmarkSet, Pose};
use crate::error::{Error, Result};
use crate::fitting::{fit, FitConfig, FitResult};
use crate::model::{load_model, MorphableModel};
use crate::render::{bake_reference_texture, rasterize, Image, TextureMap};
use crate::transform::{recombine, transform_landmarks, TransformedLandmarks};

/// Everything needed to retarget one driving sequence onto one reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceJob {
    pub reference: LandmarkSet,
    /// One landmark set per frame, in playback order.
    pub driving: Vec<LandmarkSet>,
    pub model_path: PathBuf,
    #[serde(default)]
    pub fit_config: FitConfig,
    /// Exponential-moving-average weight; 0 disables smoothing.
    #[serde(default)]
    pub smoothing_alpha: f64,
    #[serde(default)]
    pub emit_renders: bool,
    pub output_dir: PathBuf,
}

impl SequenceJob {
    /// Checks job-level invariants. Per-frame landmark validity is left to
    /// the per-frame fits so that one bad frame becomes a gap record
    /// instead of rejecting the whole job.
    pub fn validate(&self) -> Result<()> {
        self.reference.validate()?;
        self.fit_config.validate()?;
        if self.driving.is_empty() {
            return Err(Error::InvalidArgument("driving sequence is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.smoothing_alpha) {
            return Err(Error::validation("smoothing_alpha", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A frame the pipeline could not fit, with the index it occupied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapRecord {
    pub frame: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceOutput {
    /// Transformed frames in input order; `source_frame` names the driving
    /// frame each entry came from, so gaps are visible as skipped indices.
    pub frames: Vec<TransformedLandmarks>,
    pub gaps: Vec<GapRecord>,
    /// How many times the reference was fit while processing this job.
    pub reference_fits: usize,
}

/// Exponential moving average over a sequence of coefficient vectors:
/// `y[0] = x[0]`, `y[t] = alpha * y[t-1] + (1 - alpha) * x[t]`.
pub fn smooth_sequence(values: &[Vec<f64>], alpha: f64) -> Vec<Vec<f64>> {
    debug_assert!((0.0..=1.0).contains(&alpha));
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(values.len());
    for (t, x) in values.iter().enumerate() {
        if t == 0 {
            out.push(x.clone());
            continue;
        }
        let prev = &out[t - 1];
        out.push(
            x.iter()
                .zip(prev)
                .map(|(xi, yi)| alpha * yi + (1.0 - alpha) * xi)
                .collect(),
        );
    }
    out
}

/// EMA over poses: the rotation is smoothed per quaternion component with
/// sign alignment and renormalization; scale and translation linearly.
fn smooth_poses(poses: &[Pose], alpha: f64) -> Vec<Pose> {
    let mut out: Vec<Pose> = Vec::with_capacity(poses.len());
    let mut prev_q = Vector4::zeros();
    for (t, pose) in poses.iter().enumerate() {
        let rot = Rotation3::from_matrix_unchecked(pose.rotation);
        let mut q = UnitQuaternion::from_rotation_matrix(&rot).quaternion().coords;
        if t == 0 {
            prev_q = q;
            out.push(pose.clone());
            continue;
        }
        // q and -q encode the same rotation; pick the sign nearer the
        // running average so the EMA never crosses the origin.
        if q.dot(&prev_q) < 0.0 {
            q = -q;
        }
        let y = alpha * prev_q + (1.0 - alpha) * q;
        let prev = &out[t - 1];
        out.push(Pose {
            rotation: UnitQuaternion::from_quaternion(Quaternion::from(y))
                .to_rotation_matrix()
                .into_inner(),
            translation: alpha * prev.translation + (1.0 - alpha) * pose.translation,
            scale: alpha * prev.scale + (1.0 - alpha) * pose.scale,
        });
        prev_q = y;
    }
    out
}

fn render_frame(
    model: &MorphableModel,
    fit_ref: &FitResult,
    fit_drive: &FitResult,
    size: (u32, u32),
    texture: Option<&TextureMap>,
    path: &Path,
) -> Result<()> {
    let mesh = recombine(model, fit_ref, fit_drive)?;
    let face = rasterize(&mesh, &fit_drive.pose, size.0, size.1, texture);
    face.color.save_ppm(path)
}

/// Runs a job end to end with an already-loaded model. The reference is fit
/// exactly once; driving frames are fit in parallel; smoothing and output
/// writing run as a sequential post-pass. When a reference image is given,
/// renders are textured by it (projected through the reference fit);
/// otherwise they are untextured. Renders default to each driving frame's
/// image size unless `render_size` overrides it.
pub fn process_sequence_with(
    job: &SequenceJob,
    model: &MorphableModel,
    reference_image: Option<&Image>,
    render_size: Option<(u32, u32)>,
) -> Result<SequenceOutput> {
    job.validate()?;
    let mut reference_fits = 0usize;
    let fit_ref = {
        reference_fits += 1;
        fit(model, &job.reference, &job.fit_config)?
    };
    let texture: Option<TextureMap> = reference_image
        .map(|img| bake_reference_texture(model, &fit_ref, img))
        .transpose()?;

    let fitted: Vec<(usize, std::result::Result<FitResult, String>)> = job
        .driving
        .par_iter()
        .enumerate()
        .map(|(i, frame)| {
            let r = fit(model, frame, &job.fit_config).map_err(|e| e.to_string());
            (i, r)
        })
        .collect();

    let mut gaps = Vec::new();
    let mut ok: Vec<(usize, FitResult)> = Vec::new();
    for (i, r) in fitted {
        match r {
            Ok(f) => ok.push((i, f)),
            Err(reason) => gaps.push(GapRecord { frame: i, reason }),
        }
    }
    if ok.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "all {} driving frames failed to fit; first failure: {}",
            job.driving.len(),
            gaps.first().map_or("none", |g| g.reason.as_str())
        )));
    }

    if job.smoothing_alpha > 0.0 {
        let exprs: Vec<Vec<f64>> = ok.iter().map(|(_, f)| f.expr_coeffs.clone()).collect();
        let poses: Vec<Pose> = ok.iter().map(|(_, f)| f.pose.clone()).collect();
        let exprs = smooth_sequence(&exprs, job.smoothing_alpha);
        let poses = smooth_poses(&poses, job.smoothing_alpha);
        for ((_, f), (e, p)) in ok.iter_mut().zip(exprs.into_iter().zip(poses)) {
            f.expr_coeffs = e;
            f.pose = p;
        }
    }

    if job.emit_renders {
        std::fs::create_dir_all(&job.output_dir).map_err(|e| Error::io(&job.output_dir, e))?;
    }
    let mut frames = Vec::with_capacity(ok.len());
    for (i, fit_drive) in &ok {
        let mut out = transform_landmarks(model, &fit_ref, fit_drive, false)?;
        out.source_frame = *i;
        if job.emit_renders {
            let path = job.output_dir.join(format!("frame_{i:04}.ppm"));
            let observed = &job.driving[*i];
            let size = render_size.unwrap_or((observed.image_width, observed.image_height));
            render_frame(model, &fit_ref, fit_drive, size, texture.as_ref(), &path)?;
        }
        frames.push(out);
    }
    Ok(SequenceOutput { frames, gaps, reference_fits })
}

/// Loads the model named by the job, then delegates to
/// [`process_sequence_with`]. Renders, if requested, are untextured.
pub fn process_sequence(job: &SequenceJob) -> Result<SequenceOutput> {
    let model = load_model(&job.model_path)?;
    process_sequence_with(job, &model, None, None)
}

/// Writes `landmarks.jsonl` (one frame per line, in order) and `gaps.json`
/// under `dir`.
pub fn write_sequence_output(out: &SequenceOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let lm_path = dir.join("landmarks.jsonl");
    let mut lines = String::new();
    for frame in &out.frames {
        lines.push_str(&serde_json::to_string(frame).map_err(|e| Error::parse(&lm_path, e))?);
        lines.push('\n');
    }
    std::fs::write(&lm_path, lines).map_err(|e| Error::io(&lm_path, e))?;
    let gaps_path = dir.join("gaps.json");
    let gaps = serde_json::to_string_pretty(&out.gaps)
        .map_err(|e| Error::parse(&gaps_path, e))?;
    std::fs::write(&gaps_path, gaps).map_err(|e| Error::io(&gaps_path, e))?;
    Ok(())
}

/// Reads a driving sequence from one of three layouts: a directory of
/// `*.json` landmark files (sorted by name), a `.jsonl` file with one
/// landmark set per line, or a single `.json` file holding either one set
/// or an array of sets.
pub fn load_landmark_sequence(path: &Path) -> Result<Vec<LandmarkSet>> {
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json" || e == "jsonl"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} contains no landmark files",
                path.display()
            )));
        }
        let mut frames = Vec::new();
        for f in files {
            frames.extend(load_landmark_sequence(&f)?);
        }
        return Ok(frames);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        let mut frames = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            frames.push(serde_json::from_str(line).map_err(|e| Error::parse(path, e))?);
        }
        if frames.is_empty() {
            return Err(Error::InvalidArgument(format!("{} holds no frames", path.display())));
        }
        return Ok(frames);
    }
    // Accept both one landmark set and an array of them.
    match serde_json::from_str::<Vec<LandmarkSet>>(&text) {
        Ok(frames) if !frames.is_empty() => Ok(frames),
        Ok(_) => Err(Error::InvalidArgument(format!("{} holds no frames", path.display()))),
        Err(_) => {
            let one: LandmarkSet =
                serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
            Ok(vec![one])
        }
    }
}
