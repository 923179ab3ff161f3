//! Scaled-orthographic camera: pose estimation from 2D-3D correspondences
//! and point projection.
//!
//! The camera maps a model-space point `X` to image coordinates via
//! `x = scale * P * R * X + t`, where `P` drops the z row. Image coordinates
//! have the origin at the top-left corner with y pointing down. Camera-space
//! depth is `(R * X).z`; larger depth means farther from the camera.

use nalgebra::{Matrix2x3, Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of points in the landmark scheme used throughout the crate.
pub const LANDMARK_COUNT: usize = 68;

/// Outer eye-corner landmark indices; their distance is the interocular
/// normalization length.
pub const OUTER_EYE_CORNERS: (usize, usize) = (36, 45);

/// Jaw (face contour) landmarks run from index 0 through 16 inclusive,
/// with the chin at index 8.
pub const JAW_LANDMARKS: std::ops::RangeInclusive<usize> = 0..=16;
pub const CHIN_LANDMARK: usize = 8;

/// Singular-value ratio below which a 3D point configuration is treated
/// as rank-deficient.
const DEGENERACY_RATIO: f64 = 1e-10;

/// Rigid scaled-orthographic camera pose.
///
/// Serializes as `{"rotation": [9 values, row-major], "translation": [x, y],
/// "scale": s}`. Deserialization restores the fields verbatim; call
/// [`Pose::validate`] afterwards when the source is untrusted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    /// World-to-camera rotation, orthonormal with determinant +1.
    pub rotation: Matrix3<f64>,
    /// Image-space translation in pixels.
    pub translation: Vector2<f64>,
    /// Pixels per model unit; strictly positive.
    pub scale: f64,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 9],
    translation: [f64; 2],
    scale: f64,
}

impl From<PoseRepr> for Pose {
    fn from(r: PoseRepr) -> Self {
        Pose {
            rotation: Matrix3::from_row_slice(&r.rotation),
            translation: Vector2::new(r.translation[0], r.translation[1]),
            scale: r.scale,
        }
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let r = &p.rotation;
        PoseRepr {
            rotation: [
                r[(0, 0)], r[(0, 1)], r[(0, 2)],
                r[(1, 0)], r[(1, 1)], r[(1, 2)],
                r[(2, 0)], r[(2, 1)], r[(2, 2)],
            ],
            translation: [p.translation.x, p.translation.y],
            scale: p.scale,
        }
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector2::zeros(),
            scale: 1.0,
        }
    }

    /// Checks the rotation is in SO(3) within 1e-9 and the scale is positive.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let ortho_err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho_err > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "pose rotation is not orthonormal (error {ortho_err:.3e})"
            )));
        }
        if (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "pose rotation has determinant != +1".into(),
            ));
        }
        if !self.scale.is_finite() || self.scale <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "pose scale must be positive and finite, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    /// Projects a model-space point; returns image coordinates and
    /// camera-space depth.
    pub fn project_point(&self, p: [f64; 3]) -> ([f64; 2], f64) {
        let q = self.rotation * Vector3::new(p[0], p[1], p[2]);
        (
            [
                self.scale * q.x + self.translation.x,
                self.scale * q.y + self.translation.y,
            ],
            q.z,
        )
    }

    pub fn project_points(&self, pts: &[[f64; 3]]) -> Vec<([f64; 2], f64)> {
        pts.iter().map(|&p| self.project_point(p)).collect()
    }

    /// The pose as a single 4x4 model-view-projection matrix. Rows 0-1
    /// produce image coordinates, row 2 camera-space depth:
    /// `M * (X, 1) = (x, y, depth, 1)`.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let r = &self.rotation;
        let s = self.scale;
        Matrix4::new(
            s * r[(0, 0)], s * r[(0, 1)], s * r[(0, 2)], self.translation.x,
            s * r[(1, 0)], s * r[(1, 1)], s * r[(1, 2)], self.translation.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], 0.0,
            0.0, 0.0, 0.0, 1.0,
        )
    }
}

/// Derivative of `project_point` with respect to the 3D point. The
/// projection is linear, so this equals `scale * P * R` everywhere; the
/// point argument is kept for camera models where that no longer holds.
pub fn projection_jacobian(pose: &Pose, _point: [f64; 3]) -> Matrix2x3<f64> {
    pose.scale * pose.rotation.fixed_rows::<2>(0).into_owned()
}

/// A detected 68-point landmark set in image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub image_width: u32,
    pub image_height: u32,
    /// Pixel coordinates, origin top-left, y down.
    pub points: Vec<[f64; 2]>,
    /// Optional per-landmark detection confidences in [0, 1].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<Vec<f64>>,
}

impl LandmarkSet {
    pub fn new(
        points: Vec<[f64; 2]>,
        image_width: u32,
        image_height: u32,
        confidence: Option<Vec<f64>>,
    ) -> Result<Self> {
        let set = LandmarkSet { image_width, image_height, points, confidence };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != LANDMARK_COUNT {
            return Err(Error::validation(
                "points",
                format!("expected {} landmarks, got {}", LANDMARK_COUNT, self.points.len()),
            ));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::validation("image_width", "image dimensions must be positive"));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::NonFinite(format!("landmark {i} is not finite")));
            }
        }
        if let Some(conf) = &self.confidence {
            if conf.len() != LANDMARK_COUNT {
                return Err(Error::validation(
                    "confidence",
                    format!("expected {} values, got {}", LANDMARK_COUNT, conf.len()),
                ));
            }
            if conf.iter().any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0) {
                return Err(Error::validation("confidence", "values must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Distance between the outer eye corners, in pixels.
    pub fn interocular(&self) -> f64 {
        let a = self.points[OUTER_EYE_CORNERS.0];
        let b = self.points[OUTER_EYE_CORNERS.1];
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }
}

/// Recovers the weighted least-squares scaled-orthographic pose from 3D-2D
/// correspondences.
///
/// Solves the unconstrained weighted linear system for the 2x3 camera matrix
/// and translation, then projects the camera matrix onto `scale * SO(3)`:
/// the nearest row-orthonormal factor comes from the SVD, the scale is the
/// mean of the two singular values, and the third rotation row is the cross
/// product of the first two, which fixes the reflection sign.
pub fn estimate_pose(
    points3d: &[[f64; 3]],
    points2d: &[[f64; 2]],
    weights: Option<&[f64]>,
) -> Result<Pose> {
    let n = points3d.len();
    if points2d.len() != n {
        return Err(Error::Dimension(format!(
            "{} 3D points vs {} 2D points",
            n,
            points2d.len()
        )));
    }
    if n < 4 {
        return Err(Error::InsufficientData(format!(
            "pose estimation needs at least 4 correspondences, got {n}"
        )));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Dimension(format!("{} weights for {} points", w.len(), n)));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..n).map(weight).sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("all correspondence weights are zero".into()));
    }

    let mut mean3 = Vector3::zeros();
    let mut mean2 = Vector2::zeros();
    for i in 0..n {
        let w = weight(i);
        mean3 += w * Vector3::from(points3d[i]);
        mean2 += w * Vector2::from(points2d[i]);
    }
    mean3 /= total;
    mean2 /= total;

    // Second moments of the centered correspondences.
    let mut cxx = Matrix3::zeros();
    let mut cyx = Matrix2x3::zeros();
    for i in 0..n {
        let w = weight(i);
        let d3 = Vector3::from(points3d[i]) - mean3;
        let d2 = Vector2::from(points2d[i]) - mean2;
        cxx += w * d3 * d3.transpose();
        cyx += w * d2 * d3.transpose();
    }

    let cxx_svd = cxx.svd(true, true);
    let sv = &cxx_svd.singular_values;
    if sv[0] <= 0.0 || sv[2] / sv[0] < DEGENERACY_RATIO {
        return Err(Error::DegenerateConfiguration(
            "3D points are collinear or coplanar".into(),
        ));
    }
    let cxx_inv = cxx_svd
        .pseudo_inverse(0.0)
        .map_err(|e| Error::DegenerateConfiguration(e.to_string()))?;

    // Unconstrained affine camera, then projection onto scale * SO(3).
    let affine = cyx * cxx_inv;
    let svd = affine.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateConfiguration("SVD of camera matrix failed".into())),
    };
    let scale = (svd.singular_values[0] + svd.singular_values[1]) / 2.0;
    if scale <= f64::EPSILON {
        return Err(Error::DegenerateConfiguration(
            "2D points carry no spatial extent".into(),
        ));
    }

    let top: Matrix2x3<f64> = u * v_t;
    let r1 = Vector3::new(top[(0, 0)], top[(0, 1)], top[(0, 2)]);
    let r2 = Vector3::new(top[(1, 0)], top[(1, 1)], top[(1, 2)]);
    let r3 = r1.cross(&r2);
    let rotation = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);

    let translation = mean2 - scale * (top * mean3);
    Ok(Pose { rotation, translation, scale })
}

/// Geodesic distance between two rotations, in radians.
pub fn rotation_geodesic(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let cos = ((a.transpose() * b).trace() - 1.0) / 2.0;
    cos.clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let axis = Vector3::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        );
        let angle = rng.random::<f64>() * std::f64::consts::PI;
        nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
            .into_inner()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        Pose {
            rotation: random_rotation(rng),
            translation: Vector2::new(
                rng.random::<f64>() * 200.0 - 100.0,
                rng.random::<f64>() * 200.0 - 100.0,
            ),
            scale: 0.5 + rng.random::<f64>() * 3.0,
        }
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| {
                [
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                ]
            })
            .collect()
    }

    #[test]
    fn project_identity_pose() {
        let pose = Pose::identity();
        let ([x, y], depth) = pose.project_point([1.0, 2.0, 3.0]);
        assert_eq!((x, y, depth), (1.0, 2.0, 3.0));
    }

    #[test]
    fn project_scale_and_translation() {
        let pose = Pose {
            rotation: Matrix3::identity(),
            translation: Vector2::new(5.0, 0.0),
            scale: 2.0,
        };
        let ([x, y], _) = pose.project_point([1.0, 0.0, 0.0]);
        assert_eq!((x, y), (7.0, 0.0));
    }

    #[test]
    fn estimate_identity_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts3 = random_points(&mut rng, 12);
        let pts2: Vec<[f64; 2]> = pts3.iter().map(|p| [p[0], p[1]]).collect();
        let pose = estimate_pose(&pts3, &pts2, None).unwrap();
        assert_relative_eq!(pose.rotation, Matrix3::identity(), epsilon = 1e-9);
        assert_relative_eq!(pose.scale, 1.0, epsilon = 1e-9);
        assert_relative_eq!(pose.translation, Vector2::zeros(), epsilon = 1e-9);
    }

    #[test]
    fn estimate_known_yaw_pose() {
        // 30 degrees about y, scale 2, translation (10, 5), recovered to 1e-6.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rotation =
            nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), 30f64.to_radians())
                .into_inner();
        let truth = Pose { rotation, translation: Vector2::new(10.0, 5.0), scale: 2.0 };
        let pts3 = random_points(&mut rng, LANDMARK_COUNT);
        let pts2: Vec<[f64; 2]> = pts3.iter().map(|&p| truth.project_point(p).0).collect();
        let pose = estimate_pose(&pts3, &pts2, None).unwrap();
        assert!(rotation_geodesic(&pose.rotation, &truth.rotation) < 1e-6);
        assert_relative_eq!(pose.scale, 2.0, epsilon = 1e-6);
        assert_relative_eq!(pose.translation, truth.translation, epsilon = 1e-6);
    }

    #[test]
    fn estimate_rejects_collinear_points() {
        let pts3: Vec<[f64; 3]> = (0..8).map(|i| [i as f64, 2.0 * i as f64, 0.5]).collect();
        let pts2: Vec<[f64; 2]> = pts3.iter().map(|p| [p[0], p[1]]).collect();
        let err = estimate_pose(&pts3, &pts2, None).unwrap_err();
        assert!(matches!(err, Error::DegenerateConfiguration(_)), "{err}");
    }

    #[test]
    fn estimate_rejects_coplanar_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts3: Vec<[f64; 3]> = (0..10)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>(), 0.0])
            .collect();
        let pts2: Vec<[f64; 2]> = pts3.iter().map(|p| [p[0], p[1]]).collect();
        assert!(matches!(
            estimate_pose(&pts3, &pts2, None),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn estimate_rejects_too_few_points() {
        let pts3 = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let pts2 = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            estimate_pose(&pts3, &pts2, None),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn round_trip_random_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let truth = random_pose(&mut rng);
            let pts3 = random_points(&mut rng, 10);
            let pts2: Vec<[f64; 2]> = pts3.iter().map(|&p| truth.project_point(p).0).collect();
            let pose = estimate_pose(&pts3, &pts2, None).unwrap();
            assert!(rotation_geodesic(&pose.rotation, &truth.rotation) < 1e-6);
            assert!((pose.scale - truth.scale).abs() / truth.scale < 1e-8);
            assert!((pose.translation - truth.translation).norm() < 1e-8);
            pose.validate().unwrap();
        }
    }

    #[test]
    fn noisy_estimates_stay_in_so3_and_residual_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sigmas = [0.0, 0.5, 2.0];
        let mut mean_residuals = [0.0f64; 3];
        let trials = 25;
        for _ in 0..trials {
            let truth = random_pose(&mut rng);
            let pts3 = random_points(&mut rng, 30);
            let clean: Vec<[f64; 2]> = pts3.iter().map(|&p| truth.project_point(p).0).collect();
            for (k, sigma) in sigmas.iter().enumerate() {
                let noisy: Vec<[f64; 2]> = clean
                    .iter()
                    .map(|p| {
                        // Box-Muller from two uniforms.
                        let (u1, u2) = (rng.random::<f64>().max(1e-12), rng.random::<f64>());
                        let r = (-2.0 * u1.ln()).sqrt();
                        let (dx, dy) = (
                            r * (2.0 * std::f64::consts::PI * u2).cos(),
                            r * (2.0 * std::f64::consts::PI * u2).sin(),
                        );
                        [p[0] + sigma * dx, p[1] + sigma * dy]
                    })
                    .collect();
                let pose = estimate_pose(&pts3, &noisy, None).unwrap();
                pose.validate().unwrap();
                let res: f64 = pts3
                    .iter()
                    .zip(&noisy)
                    .map(|(&p3, p2)| {
                        let ([x, y], _) = pose.project_point(p3);
                        ((x - p2[0]).powi(2) + (y - p2[1]).powi(2)).sqrt()
                    })
                    .sum::<f64>()
                    / pts3.len() as f64;
                mean_residuals[k] += res / trials as f64;
            }
        }
        assert!(mean_residuals[0] <= mean_residuals[1] + 1e-12);
        assert!(mean_residuals[1] <= mean_residuals[2] + 1e-12);
    }

    #[test]
    fn jacobian_identity_pose() {
        let pose = Pose { scale: 1.5, ..Pose::identity() };
        let jac = projection_jacobian(&pose, [0.3, 0.4, 0.5]);
        let expected = Matrix2x3::new(1.5, 0.0, 0.0, 0.0, 1.5, 0.0);
        assert_eq!(jac, expected);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..20 {
            let pose = random_pose(&mut rng);
            let p = random_points(&mut rng, 1)[0];
            let jac = projection_jacobian(&pose, p);
            for axis in 0..3 {
                let mut lo = p;
                let mut hi = p;
                lo[axis] -= h;
                hi[axis] += h;
                let (plo, _) = pose.project_point(lo);
                let (phi, _) = pose.project_point(hi);
                for row in 0..2 {
                    let fd = (phi[row] - plo[row]) / (2.0 * h);
                    let analytic = jac[(row, axis)];
                    let denom = analytic.abs().max(1.0);
                    assert!(
                        (fd - analytic).abs() / denom < 1e-5,
                        "axis {axis} row {row}: fd={fd}, analytic={analytic}"
                    );
                }
            }
        }
    }

    #[test]
    fn jacobian_linear_in_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pose = random_pose(&mut rng);
        let doubled = Pose { scale: 2.0 * pose.scale, ..pose.clone() };
        let p = [0.1, -0.2, 0.7];
        assert_eq!(projection_jacobian(&doubled, p), 2.0 * projection_jacobian(&pose, p));
    }

    #[test]
    fn landmark_set_validation() {
        let pts = vec![[0.0, 0.0]; 68];
        assert!(LandmarkSet::new(pts.clone(), 100, 100, None).is_ok());
        assert!(LandmarkSet::new(pts[..67].to_vec(), 100, 100, None).is_err());

        let mut nan_pts = pts.clone();
        nan_pts[3] = [f64::NAN, 0.0];
        assert!(matches!(
            LandmarkSet::new(nan_pts, 100, 100, None),
            Err(Error::NonFinite(_))
        ));

        let bad_conf = Some(vec![1.5; 68]);
        assert!(LandmarkSet::new(pts, 100, 100, bad_conf).is_err());
    }

    #[test]
    fn pose_matrix_matches_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pose = random_pose(&mut rng);
        let m = pose.to_matrix();
        let p = [0.2, -0.7, 0.4];
        let hom = m * nalgebra::Vector4::new(p[0], p[1], p[2], 1.0);
        let ([x, y], depth) = pose.project_point(p);
        assert_relative_eq!(hom.x, x, epsilon = 1e-12);
        assert_relative_eq!(hom.y, y, epsilon = 1e-12);
        assert_relative_eq!(hom.z, depth, epsilon = 1e-12);
        assert_eq!(hom.w, 1.0);
    }
}
