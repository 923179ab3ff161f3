//! Evaluation harness: deterministic dataset shuffling, per-frame
//! similarity statistics, and a landmark-space identity-preservation
//! metric with CSV and JSON reporting.
//!
//! The similarity score is geometric, not an embedding: Procrustes-aligned
//! landmark RMSE normalized by interocular distance, mapped to [0,1]. All
//! report headers carry the metric name so the numbers cannot be mistaken
//! for face-recognition similarities.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{LandmarkSet, OUTER_EYE_CORNERS};
use crate::error::{Error, Result};
use crate::fitting::{fit, FitConfig};
use crate::model::MorphableModel;
use crate::transform::transform_landmarks;

/// Name under which every report labels its scores.
pub const METRIC_NAME: &str = "procrustes-landmark-similarity";

/// splitmix64 PRNG, pinned for cross-implementation reproducibility.
///
/// State update and output, in order:
/// ```text
/// state = state + 0x9E3779B97F4A7C15            (wrapping)
/// z = state
/// z = (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9    (wrapping)
/// z = (z XOR (z >> 27)) * 0x94D049BB133111EB    (wrapping)
/// output = z XOR (z >> 31)
/// ```
/// The seed is the initial state, used as-is.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// A seeded bijection pairing each driving video with a reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShufflePlan {
    pub video_ids: Vec<String>,
    /// `assignment[i]` is the index of the video whose reference image
    /// drives video `i`'s identity.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl ShufflePlan {
    pub fn validate(&self) -> Result<()> {
        if self.video_ids.is_empty() {
            return Err(Error::InvalidArgument("shuffle plan has no videos".into()));
        }
        if self.assignment.len() != self.video_ids.len() {
            return Err(Error::Dimension(format!(
                "{} assignments for {} videos",
                self.assignment.len(),
                self.video_ids.len()
            )));
        }
        let mut seen = vec![false; self.assignment.len()];
        for &j in &self.assignment {
            if j >= seen.len() || seen[j] {
                return Err(Error::InvalidArgument(
                    "shuffle assignment is not a bijection".into(),
                ));
            }
            seen[j] = true;
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.assignment.iter().enumerate().all(|(i, &j)| i == j)
    }
}

/// Builds the pairing permutation for a list of video ids.
///
/// The permutation is a Fisher–Yates shuffle of the identity mapping,
/// driven by [`SplitMix64`]: for `i` from `n - 1` down to `1`, draw
/// `j = next_u64() mod (i + 1)` and swap positions `i` and `j`. The modulo
/// draw is deliberate: determinism across implementations outweighs the
/// negligible modulo bias at these list sizes.
pub fn shuffle_pairs(video_ids: &[String], seed: u64) -> Result<ShufflePlan> {
    if video_ids.is_empty() {
        return Err(Error::InvalidArgument("cannot shuffle an empty id list".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut assignment: Vec<usize> = (0..video_ids.len()).collect();
    for i in (1..assignment.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        assignment.swap(i, j);
    }
    Ok(ShufflePlan { video_ids: video_ids.to_vec(), assignment, seed })
}

/// Per-frame scores with their mean and population variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub per_frame: Vec<f64>,
    pub average: f64,
    /// Population variance: `sum((s - mean)^2) / N`.
    pub variance: f64,
}

/// Mean and population variance of a non-empty score list.
pub fn similarity_stats(per_frame_scores: &[f64]) -> Result<SimilarityReport> {
    if per_frame_scores.is_empty() {
        return Err(Error::InvalidArgument("no scores to aggregate".into()));
    }
    if per_frame_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("similarity scores contain non-finite values".into()));
    }
    let n = per_frame_scores.len() as f64;
    let average = per_frame_scores.iter().sum::<f64>() / n;
    let variance = per_frame_scores.iter().map(|s| (s - average).powi(2)).sum::<f64>() / n;
    Ok(SimilarityReport { per_frame: per_frame_scores.to_vec(), average, variance })
}

/// Similarity-aligned landmark agreement in [0, 1].
///
/// Finds the 2D similarity transform (translation, rotation, uniform
/// positive scale; reflections excluded) mapping `a` onto `b` with least
/// squared error, then scores `max(0, 1 - rmse / interocular(b))`. Identical
/// shapes up to a similarity transform score exactly 1.
pub fn landmark_similarity(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension(format!(
            "point sets of sizes {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::NonFinite("landmark coordinates contain non-finite values".into()));
    }
    let (e0, e1) = OUTER_EYE_CORNERS;
    if b.len() <= e1 {
        return Err(Error::Dimension(format!(
            "{} points cannot carry the outer eye corners",
            b.len()
        )));
    }
    let interocular = ((b[e0][0] - b[e1][0]).powi(2) + (b[e0][1] - b[e1][1]).powi(2)).sqrt();
    if interocular <= 0.0 {
        return Err(Error::InvalidArgument(
            "target landmarks have zero interocular distance".into(),
        ));
    }
    let n = a.len() as f64;
    let mean = |pts: &[[f64; 2]]| {
        let mut m = [0.0; 2];
        for p in pts {
            m[0] += p[0];
            m[1] += p[1];
        }
        [m[0] / n, m[1] / n]
    };
    let (ma, mb) = (mean(a), mean(b));
    // Complex-number form of the similarity Procrustes problem: with
    // centered points a_i, b_i as complex numbers, the optimal rotation and
    // scale is (sum b_i * conj(a_i)) / (sum |a_i|^2), which cannot produce
    // a reflection.
    let mut dot_re = 0.0;
    let mut dot_im = 0.0;
    let mut norm_a = 0.0;
    for (p, q) in a.iter().zip(b) {
        let (ax, ay) = (p[0] - ma[0], p[1] - ma[1]);
        let (bx, by) = (q[0] - mb[0], q[1] - mb[1]);
        dot_re += bx * ax + by * ay;
        dot_im += by * ax - bx * ay;
        norm_a += ax * ax + ay * ay;
    }
    let (sr, si) = if norm_a > 0.0 {
        (dot_re / norm_a, dot_im / norm_a)
    } else {
        (0.0, 0.0)
    };
    let mut sse = 0.0;
    for (p, q) in a.iter().zip(b) {
        let (ax, ay) = (p[0] - ma[0], p[1] - ma[1]);
        let (bx, by) = (q[0] - mb[0], q[1] - mb[1]);
        let rx = bx - (sr * ax - si * ay);
        let ry = by - (si * ax + sr * ay);
        sse += rx * rx + ry * ry;
    }
    let rmse = (sse / n).sqrt();
    Ok((1.0 - rmse / interocular).max(0.0))
}

/// One evaluated driving-video / reference pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    /// Driving video id; unique per plan, so it identifies the pair.
    pub pair_id: String,
    pub reference_id: String,
    pub average: f64,
    pub variance: f64,
    pub per_frame: Vec<f64>,
}

/// A pair the evaluation could not score, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub pair_id: String,
    pub reason: String,
}

/// Grand means over all scored pairs, both weightings reported: frame
/// weighting pools every frame score; video weighting averages the per-pair
/// averages. Variances are population variances of the same pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrandMeans {
    pub frame_weighted_average: f64,
    pub frame_weighted_variance: f64,
    pub video_weighted_average: f64,
    pub video_weighted_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub metric: String,
    /// True when scores compare raw driving landmarks instead of
    /// transformed ones.
    pub baseline: bool,
    pub pairs: Vec<PairReport>,
    pub skipped: Vec<SkippedPair>,
    pub grand: GrandMeans,
}

fn corpus_reference(corpus: &Path, id: &str) -> std::path::PathBuf {
    corpus.join(id).join("ref.json")
}

fn corpus_frames_dir(corpus: &Path, id: &str) -> std::path::PathBuf {
    corpus.join(id).join("frames")
}

pub fn load_landmarks(path: &Path) -> Result<LandmarkSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let set: LandmarkSet = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    set.validate()?;
    Ok(set)
}

/// Frame files of one corpus video, sorted by file name.
fn frame_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    Ok(files)
}

fn score_pair(
    model: &MorphableModel,
    corpus: &Path,
    driving_id: &str,
    reference_id: &str,
    baseline: bool,
    config: &FitConfig,
) -> Result<SimilarityReport> {
    let reference = load_landmarks(&corpus_reference(corpus, reference_id))?;
    let fit_ref = fit(model, &reference, config)?;
    // Scoring target: the reference fit's own projected landmarks.
    let ref_mesh = model.evaluate_mesh(&fit_ref.shape_coeffs, &fit_ref.expr_coeffs)?;
    let target: Vec<[f64; 2]> = model
        .landmark_positions(&ref_mesh)
        .iter()
        .map(|&p| fit_ref.pose.project_point(p).0)
        .collect();

    let frames = frame_files(&corpus_frames_dir(corpus, driving_id))?;
    if frames.is_empty() {
        return Err(Error::InvalidArgument(format!("video {driving_id} has no frames")));
    }
    let mut scores = Vec::with_capacity(frames.len());
    for path in &frames {
        let observed = load_landmarks(path)?;
        let points = if baseline {
            observed.points.clone()
        } else {
            let fit_drive = fit(model, &observed, config)?;
            transform_landmarks(model, &fit_ref, &fit_drive, false)?.points
        };
        scores.push(landmark_similarity(&points, &target)?);
    }
    similarity_stats(&scores)
}

/// Scores every pairing of a shuffle plan against a corpus laid out as
/// `corpus/<video_id>/ref.json` plus `corpus/<video_id>/frames/*.json`.
///
/// With `baseline` set, each frame's raw landmarks are scored against the
/// reference fit's projected landmarks; otherwise the frames are
/// transformed (reference identity, driving expression and pose) first.
/// Unreadable pairs are skipped and listed. Pairs are evaluated in
/// parallel; the report is ordered by pair id.
pub fn run_shuffle_eval(
    model: &MorphableModel,
    plan: &ShufflePlan,
    corpus: &Path,
    baseline: bool,
    config: &FitConfig,
) -> Result<EvalOutcome> {
    plan.validate()?;
    config.validate()?;
    let jobs: Vec<(String, String)> = plan
        .video_ids
        .iter()
        .enumerate()
        .map(|(i, v)| (v.clone(), plan.video_ids[plan.assignment[i]].clone()))
        .collect();

    let results: Vec<(String, String, Result<SimilarityReport>)> = jobs
        .par_iter()
        .map(|(driving, reference)| {
            let r = score_pair(model, corpus, driving, reference, baseline, config);
            (driving.clone(), reference.clone(), r)
        })
        .collect();

    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (driving, reference, result) in results {
        match result {
            Ok(report) => pairs.push(PairReport {
                pair_id: driving,
                reference_id: reference,
                average: report.average,
                variance: report.variance,
                per_frame: report.per_frame,
            }),
            Err(e) => skipped.push(SkippedPair { pair_id: driving, reason: e.to_string() }),
        }
    }
    pairs.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    skipped.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no pair could be scored ({} skipped, first reason: {})",
            skipped.len(),
            skipped.first().map_or("none", |s| s.reason.as_str())
        )));
    }

    let pooled: Vec<f64> = pairs.iter().flat_map(|p| p.per_frame.iter().copied()).collect();
    let frame_stats = similarity_stats(&pooled)?;
    let video_means: Vec<f64> = pairs.iter().map(|p| p.average).collect();
    let video_stats = similarity_stats(&video_means)?;
    Ok(EvalOutcome {
        metric: METRIC_NAME.to_string(),
        baseline,
        pairs,
        skipped,
        grand: GrandMeans {
            frame_weighted_average: frame_stats.average,
            frame_weighted_variance: frame_stats.variance,
            video_weighted_average: video_stats.average,
            video_weighted_variance: video_stats.variance,
        },
    })
}

/// Writes the per-pair table as CSV: a metric-naming comment, a header,
/// then one `pair_id,avg,var` row per scored pair.
pub fn write_csv<W: Write>(outcome: &EvalOutcome, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# metric: {} (baseline: {})", outcome.metric, outcome.baseline)?;
    writeln!(w, "pair_id,avg,var")?;
    for p in &outcome.pairs {
        writeln!(w, "{},{},{}", p.pair_id, p.average, p.variance)?;
    }
    Ok(())
}

/// Synthetic corpus controls. Every video gets its own identity and a
/// per-video resting expression that appears in both its reference frame
/// and its driving frames, the way a real person's neutral face shows up in
/// both; identity transfer is measurable precisely because matched pairs
/// share that resting expression while shuffled pairs do not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub seed: u64,
    pub image_size: u32,
    /// Standard deviation of Gaussian pixel noise added to every landmark.
    pub noise_px: f64,
    /// Restrict frame motion to in-plane rotation, scale, and translation
    /// with a frozen expression; such frames are similarity-transform
    /// equivalent to their reference.
    pub in_plane_only: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_videos: 10,
            frames_per_video: 24,
            seed: 3,
            image_size: 256,
            noise_px: 0.0,
            in_plane_only: false,
        }
    }
}

/// Generates `corpus/<video_id>/ref.json` + `frames/NNNN.json` landmark
/// files by projecting randomized identities of `model` under animated
/// poses and expressions. Deterministic per (model, config). Returns the
/// video ids in order.
pub fn synthesize_corpus(
    model: &MorphableModel,
    dir: &Path,
    cfg: &CorpusConfig,
) -> Result<Vec<String>> {
    use nalgebra::{Rotation3, Vector2};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    if cfg.n_videos == 0 || cfg.frames_per_video == 0 {
        return Err(Error::InvalidArgument("corpus needs at least one video and frame".into()));
    }
    if !cfg.noise_px.is_finite() || cfg.noise_px < 0.0 {
        return Err(Error::InvalidArgument("noise_px must be finite and non-negative".into()));
    }
    let center = cfg.image_size as f64 / 2.0;
    let noise = Normal::new(0.0, cfg.noise_px.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut seeder = SplitMix64::new(cfg.seed);
    let mut ids = Vec::with_capacity(cfg.n_videos);

    for v in 0..cfg.n_videos {
        let id = format!("video_{v:03}");
        let video_dir = dir.join(&id);
        let frames_dir = video_dir.join("frames");
        std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seeder.next_u64());

        let alpha: Vec<f64> = model
            .shape_sigma
            .iter()
            .map(|s| s * (rng.random::<f64>() * 1.6 - 0.8))
            .collect();
        let beta_rest: Vec<f64> =
            (0..model.n_expr()).map(|_| rng.random::<f64>() * 0.7 - 0.35).collect();
        let ref_yaw = rng.random::<f64>() * 20.0 - 10.0;
        let ref_pitch = rng.random::<f64>() * 10.0 - 5.0;
        let scale = 85.0 + rng.random::<f64>() * 25.0;
        let phase: Vec<f64> = (0..model.n_expr() + 3)
            .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
            .collect();

        let emit = |path: &Path,
                        beta: &[f64],
                        rot: nalgebra::Matrix3<f64>,
                        s: f64,
                        t: Vector2<f64>,
                        rng: &mut rand_chacha::ChaCha8Rng|
         -> Result<()> {
            let pose = crate::camera::Pose { rotation: rot, translation: t, scale: s };
            let mesh = model.evaluate_mesh(&alpha, beta)?;
            let pts: Vec<[f64; 2]> = model
                .landmark_positions(&mesh)
                .iter()
                .map(|&p| {
                    let (mut q, _) = pose.project_point(p);
                    if cfg.noise_px > 0.0 {
                        q[0] += noise.sample(rng);
                        q[1] += noise.sample(rng);
                    }
                    q
                })
                .collect();
            let set = LandmarkSet::new(pts, cfg.image_size, cfg.image_size, None)?;
            let text = serde_json::to_string_pretty(&set)
                .map_err(|e| Error::parse(path, e))?;
            std::fs::write(path, text).map_err(|e| Error::io(path, e))
        };

        let ref_rot =
            Rotation3::from_euler_angles(ref_pitch.to_radians(), ref_yaw.to_radians(), 0.0)
                .into_inner();
        emit(
            &video_dir.join("ref.json"),
            &beta_rest,
            ref_rot,
            scale,
            Vector2::new(center, center),
            &mut rng,
        )?;

        for f in 0..cfg.frames_per_video {
            let t = f as f64 / cfg.frames_per_video as f64 * std::f64::consts::TAU;
            let (beta, rot, s, trans) = if cfg.in_plane_only {
                let roll = 0.35 * (t + phase[0]).sin();
                let rot = Rotation3::from_euler_angles(0.0, 0.0, roll).into_inner() * ref_rot;
                let s = scale * (1.0 + 0.08 * (t + phase[1]).sin());
                let trans = Vector2::new(
                    center + 10.0 * (t + phase[2]).sin(),
                    center + 10.0 * (t + phase[2]).cos(),
                );
                (beta_rest.clone(), rot, s, trans)
            } else {
                let beta: Vec<f64> = beta_rest
                    .iter()
                    .enumerate()
                    .map(|(k, b)| b + 0.45 * (t + phase[3 + k]).sin())
                    .collect();
                let yaw = ref_yaw + 10.0 * (t + phase[0]).sin();
                let pitch = ref_pitch + 4.0 * (t + phase[1]).sin();
                let roll = 3.0 * (t + phase[2]).sin();
                let rot = Rotation3::from_euler_angles(
                    pitch.to_radians(),
                    yaw.to_radians(),
                    roll.to_radians(),
                )
                .into_inner();
                let s = scale * (1.0 + 0.05 * (t + phase[1]).cos());
                let trans = Vector2::new(
                    center + 8.0 * (t + phase[2]).sin(),
                    center + 8.0 * (t + phase[0]).cos(),
                );
                (beta, rot, s, trans)
            };
            emit(&frames_dir.join(format!("{f:04}.json")), &beta, rot, s, trans, &mut rng)?;
        }
        ids.push(id);
    }
    Ok(ids)
}

/// Reads a newline-separated id list, ignoring blank lines.
pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ids: Vec<String> =
        text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if ids.is_empty() {
        return Err(Error::InvalidArgument(format!("{} lists no ids", path.display())));
    }
    Ok(ids)
}

/// Ids of the corpus videos found under a directory, sorted.
pub fn corpus_video_ids(corpus: &Path) -> Result<Vec<String>> {
    let mut ids: Vec<String> = std::fs::read_dir(corpus)
        .map_err(|e| Error::io(corpus, e))?
        .filter_map(|entry| entry.ok())
        .filter(|e| e.path().join("ref.json").exists())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} contains no corpus videos",
            corpus.display()
        )));
    }
    Ok(ids)
}
