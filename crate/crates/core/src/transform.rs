//! Identity/expression recombination: keep the reference face's shape,
//! adopt the driving face's expression and pose, and reproject to 2D
//! landmarks in the driving frame.

use serde::{Deserialize, Serialize};

use crate::camera::{LandmarkSet, Pose, JAW_LANDMARKS};
use crate::error::Result;
use crate::fitting::{update_contour_correspondence, FitResult};
use crate::model::{positions_for_map, Mesh, MorphableModel};
use crate::render::rasterize_depth;

/// Longest side of the internal depth raster behind visibility checks.
/// Sized so that half-pixel sampling error in surface depth stays well
/// below [`depth_epsilon`] for the tessellation densities this crate works
/// with; the raster covers the mesh's projected bounding box, not the
/// output frame.
const OCCLUSION_RASTER_SIZE: u32 = 2048;
/// Blank border around the occlusion raster, pixels.
const OCCLUSION_MARGIN: f64 = 8.0;

/// Landmarks of a recombined face, projected into the driving frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedLandmarks {
    /// 68 pixel positions, populated for hidden landmarks too.
    pub points: Vec<[f64; 2]>,
    /// False where the landmark vertex lies behind the rendered surface.
    pub visibility: Vec<bool>,
    /// Index of the driving frame this output belongs to.
    pub source_frame: usize,
}

/// Self-occlusion depth slack: separates true occlusion from rasterization
/// quantization.
pub fn depth_epsilon(mesh: &Mesh) -> f64 {
    1e-4 * mesh.bbox_diagonal()
}

/// Builds the recombined mesh: reference shape coefficients with driving
/// expression coefficients, `mean + S*alpha_ref + E*beta_drive`.
pub fn recombine(
    model: &MorphableModel,
    fit_ref: &FitResult,
    fit_drive: &FitResult,
) -> Result<Mesh> {
    model.evaluate_mesh(&fit_ref.shape_coeffs, &fit_drive.expr_coeffs)
}

/// Visibility of each projected point against a depth raster of the mesh
/// under `pose`. A point is hidden when its depth exceeds the surface depth
/// at its pixel by more than [`depth_epsilon`]; pixels the surface does not
/// cover (including off-raster lookups) count as unobstructed.
fn occlusion_flags(mesh: &Mesh, pose: &Pose, projected: &[([f64; 2], f64)]) -> Vec<bool> {
    let eps = depth_epsilon(mesh);
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for i in 0..mesh.n_vertices() {
        let (p, _) = pose.project_point(mesh.vertex(i));
        for a in 0..2 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let long = (max[0] - min[0]).max(max[1] - min[1]).max(1e-12);
    let k = (OCCLUSION_RASTER_SIZE as f64 - 2.0 * OCCLUSION_MARGIN) / long;
    let raster_pose = Pose {
        rotation: pose.rotation,
        translation: k * (pose.translation - nalgebra::Vector2::new(min[0], min[1]))
            + nalgebra::Vector2::new(OCCLUSION_MARGIN, OCCLUSION_MARGIN),
        scale: pose.scale * k,
    };
    let width = ((max[0] - min[0]) * k + 2.0 * OCCLUSION_MARGIN).ceil() as u32;
    let height = ((max[1] - min[1]) * k + 2.0 * OCCLUSION_MARGIN).ceil() as u32;
    let depth = rasterize_depth(mesh, &raster_pose, width, height);
    let lookup = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
            return f64::INFINITY;
        }
        depth[y as usize * width as usize + x as usize]
    };
    projected
        .iter()
        .map(|&(p, z)| {
            let rx = ((p[0] - min[0]) * k + OCCLUSION_MARGIN).floor() as i64;
            let ry = ((p[1] - min[1]) * k + OCCLUSION_MARGIN).floor() as i64;
            z - lookup(rx, ry) <= eps
        })
        .collect()
}

fn project_map(
    mesh: &Mesh,
    map: &[u32],
    pose: &Pose,
    occlusion_check: bool,
) -> TransformedLandmarks {
    let projected: Vec<([f64; 2], f64)> = positions_for_map(mesh, map)
        .iter()
        .map(|&p| pose.project_point(p))
        .collect();
    let visibility = if occlusion_check {
        occlusion_flags(mesh, pose, &projected)
    } else {
        vec![true; projected.len()]
    };
    TransformedLandmarks {
        points: projected.iter().map(|&(p, _)| p).collect(),
        visibility,
        source_frame: 0,
    }
}

/// Projects the recombined mesh's landmark vertices under the driving pose.
/// With `occlusion_check`, each landmark is tested against a depth raster of
/// the recombined mesh; points are reported either way.
pub fn transform_landmarks(
    model: &MorphableModel,
    fit_ref: &FitResult,
    fit_drive: &FitResult,
    occlusion_check: bool,
) -> Result<TransformedLandmarks> {
    let mesh = recombine(model, fit_ref, fit_drive)?;
    Ok(project_map(&mesh, &model.landmark_map, &fit_drive.pose, occlusion_check))
}

/// Variant of [`transform_landmarks`] that re-selects jaw landmark vertices
/// from the contour candidate rings under the driving pose, so the jawline
/// follows the recombined mesh's silhouette. `driving_landmarks` are the
/// observed points the driving fit was computed from.
pub fn transform_landmarks_dynamic(
    model: &MorphableModel,
    fit_ref: &FitResult,
    fit_drive: &FitResult,
    driving_landmarks: &LandmarkSet,
    occlusion_check: bool,
) -> Result<TransformedLandmarks> {
    let mesh = recombine(model, fit_ref, fit_drive)?;
    let map = update_contour_correspondence(model, &mesh, &fit_drive.pose, driving_landmarks)?;
    Ok(project_map(&mesh, &map, &fit_drive.pose, occlusion_check))
}

/// How far the transformation moved the landmarks: RMSE between the
/// transformed points and the driving fit's own projected landmarks,
/// normalized by the latter's interocular distance. Zero when reference and
/// driving describe the same face.
pub fn transfer_gap(
    model: &MorphableModel,
    fit_ref: &FitResult,
    fit_drive: &FitResult,
) -> Result<f64> {
    let transformed = transform_landmarks(model, fit_ref, fit_drive, false)?;
    let own_mesh = model.evaluate_mesh(&fit_drive.shape_coeffs, &fit_drive.expr_coeffs)?;
    let own: Vec<[f64; 2]> = model
        .landmark_positions(&own_mesh)
        .iter()
        .map(|&p| fit_drive.pose.project_point(p).0)
        .collect();
    let (a, b) = crate::camera::OUTER_EYE_CORNERS;
    let interocular =
        ((own[a][0] - own[b][0]).powi(2) + (own[a][1] - own[b][1]).powi(2)).sqrt();
    let mse = transformed
        .points
        .iter()
        .zip(&own)
        .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
        .sum::<f64>()
        / own.len() as f64;
    Ok(mse.sqrt() / interocular.max(f64::MIN_POSITIVE))
}

/// True for jaw landmark indices, the silhouette-dependent entries.
pub fn is_contour_index(i: usize) -> bool {
    JAW_LANDMARKS.contains(&i)
}
