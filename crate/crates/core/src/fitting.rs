//! Fits model coefficients and a camera pose to an observed landmark set.
//!
//! The fit alternates three linear steps: pose estimation against the
//! current mesh's landmark vertices, a ridge-regularized solve for the shape
//! coefficients, and a ridge-regularized solve for the expression
//! coefficients. Shape coefficients are penalized relative to their mode
//! sigmas, `lambda * sum((alpha_k / sigma_k)^2)`; expression coefficients
//! carry a plain squared-norm penalty.

use nalgebra::{DMatrix, DVector, Matrix2x3};
use serde::{Deserialize, Serialize};

use crate::camera::{estimate_pose, LandmarkSet, Pose, CHIN_LANDMARK, LANDMARK_COUNT};
use crate::error::{Error, Result};
use crate::model::{positions_for_map, Mesh, MorphableModel};

/// Condition-number bound on the regularized normal matrix; beyond this the
/// solve is refused.
const CONDITION_LIMIT: f64 = 1e12;

/// How jaw landmark vertices are chosen during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContourMode {
    /// Keep the model's landmark map as-is.
    #[default]
    Static,
    /// Re-pick jaw vertices from the contour candidate rings every
    /// iteration, tracking the apparent face boundary.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Shape ridge weight.
    pub lambda_shape: f64,
    /// Expression ridge weight.
    pub lambda_expr: f64,
    /// Upper bound on alternation rounds.
    pub max_iterations: usize,
    /// Stop once the relative change of the landmark RMSE between rounds
    /// falls below this.
    pub convergence_tol: f64,
    pub contour_mode: ContourMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda_shape: 1.0,
            lambda_expr: 0.1,
            max_iterations: 5,
            convergence_tol: 1e-6,
            contour_mode: ContourMode::Static,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda_shape.is_finite() || self.lambda_shape < 0.0 {
            return Err(Error::Config("lambda_shape must be finite and >= 0".into()));
        }
        if !self.lambda_expr.is_finite() || self.lambda_expr < 0.0 {
            return Err(Error::Config("lambda_expr must be finite and >= 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !self.convergence_tol.is_finite() || self.convergence_tol <= 0.0 {
            return Err(Error::Config("convergence_tol must be finite and positive".into()));
        }
        Ok(())
    }
}

/// Output of [`fit`]: recovered coefficients, camera pose, and the landmark
/// reprojection error of the returned state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub shape_coeffs: Vec<f64>,
    pub expr_coeffs: Vec<f64>,
    pub pose: Pose,
    /// Root-mean-square landmark reprojection error, pixels, unweighted.
    pub residual_rmse: f64,
    /// `residual_rmse` divided by the observed interocular distance.
    pub residual_rel: f64,
    pub iterations_run: usize,
}

/// Shared ridge solve: weighted linear least squares for the coefficients of
/// one basis while the other basis' contribution stays fixed, with penalty
/// `lambda * sum((c_k * d_half_k)^2)`. The augmented design matrix gets the
/// penalty rows `sqrt(lambda) * d_half_k`, so its SVD solves the same normal
/// equations `(G^T W G + lambda D) c = G^T W y`.
#[allow(clippy::too_many_arguments)]
fn solve_modes(
    model: &MorphableModel,
    map: &[u32],
    pose: &Pose,
    landmarks: &LandmarkSet,
    solve_shape: bool,
    fixed_coeffs: &[f64],
    lambda: f64,
    d_half: &[f64],
) -> Result<Vec<f64>> {
    let (basis, fixed_basis) = if solve_shape {
        (&model.shape_basis, &model.expr_basis)
    } else {
        (&model.expr_basis, &model.shape_basis)
    };
    if fixed_coeffs.len() != fixed_basis.ncols() {
        return Err(Error::Dimension(format!(
            "{} fixed coefficients for {} modes",
            fixed_coeffs.len(),
            fixed_basis.ncols()
        )));
    }
    if fixed_coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("fixed coefficients contain non-finite values".into()));
    }
    let m = basis.ncols();
    let rows = 2 * LANDMARK_COUNT + m;
    let jac: Matrix2x3<f64> = pose.scale * pose.rotation.fixed_rows::<2>(0).into_owned();

    let mut g = DMatrix::<f64>::zeros(rows, m);
    let mut y = DVector::<f64>::zeros(rows);
    for l in 0..LANDMARK_COUNT {
        let vi = map[l] as usize;
        let w = landmarks.confidence.as_ref().map_or(1.0, |c| c[l]).sqrt();
        let mut base = [
            model.mean[3 * vi],
            model.mean[3 * vi + 1],
            model.mean[3 * vi + 2],
        ];
        for (k, &c) in fixed_coeffs.iter().enumerate() {
            for a in 0..3 {
                base[a] += c * fixed_basis[(3 * vi + a, k)];
            }
        }
        let (proj, _) = pose.project_point(base);
        let obs = landmarks.points[l];
        y[2 * l] = w * (obs[0] - proj[0]);
        y[2 * l + 1] = w * (obs[1] - proj[1]);
        for k in 0..m {
            let col = [
                basis[(3 * vi, k)],
                basis[(3 * vi + 1, k)],
                basis[(3 * vi + 2, k)],
            ];
            for r in 0..2 {
                g[(2 * l + r, k)] =
                    w * (jac[(r, 0)] * col[0] + jac[(r, 1)] * col[1] + jac[(r, 2)] * col[2]);
            }
        }
    }
    let sqrt_lambda = lambda.sqrt();
    for k in 0..m {
        g[(2 * LANDMARK_COUNT + k, k)] = sqrt_lambda * d_half[k];
    }

    let svd = g.svd(true, true);
    let smax = svd.singular_values[0];
    let smin = svd.singular_values[svd.singular_values.len() - 1];
    if smin <= 0.0 || (smax / smin).powi(2) > CONDITION_LIMIT {
        return Err(Error::IllConditioned(format!(
            "normal matrix condition {:.3e}",
            if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY }
        )));
    }
    let sol = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::IllConditioned(e.to_string()))?;
    Ok(sol.iter().copied().collect())
}

/// Solves for shape coefficients at a fixed pose and fixed expression,
/// penalizing each coefficient relative to its mode sigma. Landmark
/// confidences, when present, weight the data rows.
pub fn fit_shape(
    model: &MorphableModel,
    pose: &Pose,
    landmarks: &LandmarkSet,
    expr_fixed: &[f64],
    lambda_shape: f64,
) -> Result<Vec<f64>> {
    landmarks.validate()?;
    pose.validate()?;
    if !lambda_shape.is_finite() || lambda_shape < 0.0 {
        return Err(Error::InvalidArgument("lambda must be finite and >= 0".into()));
    }
    let d_half: Vec<f64> = model.shape_sigma.iter().map(|s| 1.0 / s).collect();
    solve_modes(
        model,
        &model.landmark_map,
        pose,
        landmarks,
        true,
        expr_fixed,
        lambda_shape,
        &d_half,
    )
}

/// Solves for expression coefficients at a fixed pose and fixed shape, with
/// a plain ridge penalty (blendshapes carry no sigmas).
pub fn fit_expression(
    model: &MorphableModel,
    pose: &Pose,
    landmarks: &LandmarkSet,
    shape_fixed: &[f64],
    lambda_expr: f64,
) -> Result<Vec<f64>> {
    landmarks.validate()?;
    pose.validate()?;
    if !lambda_expr.is_finite() || lambda_expr < 0.0 {
        return Err(Error::InvalidArgument("lambda must be finite and >= 0".into()));
    }
    let d_half = vec![1.0; model.n_expr()];
    solve_modes(
        model,
        &model.landmark_map,
        pose,
        landmarks,
        false,
        shape_fixed,
        lambda_expr,
        &d_half,
    )
}

/// Re-picks the jaw landmark vertices from the contour candidate rings: each
/// jaw landmark maps to the candidate whose projection of the current mesh
/// under `pose` lies nearest the observed point. Landmarks 0-7 choose from
/// the left ring, 9-16 from the right ring, and the chin from both rings.
/// Exact distance ties go to the lowest candidate vertex index. Non-jaw
/// entries are returned unchanged.
pub fn update_contour_correspondence(
    model: &MorphableModel,
    mesh: &Mesh,
    pose: &Pose,
    landmarks: &LandmarkSet,
) -> Result<Vec<u32>> {
    landmarks.validate()?;
    if model.contour_left.is_empty() || model.contour_right.is_empty() {
        return Err(Error::Config(
            "model has no contour candidate rings; use static contour mode".into(),
        ));
    }
    let mut map = model.landmark_map.clone();
    let project = |idx: &[u32]| -> Vec<(u32, [f64; 2])> {
        idx.iter()
            .map(|&i| (i, pose.project_point(mesh.vertex(i as usize)).0))
            .collect()
    };
    let left = project(&model.contour_left);
    let right = project(&model.contour_right);
    let union: Vec<(u32, [f64; 2])> = left.iter().chain(right.iter()).copied().collect();
    let nearest = |obs: [f64; 2], cands: &[(u32, [f64; 2])]| -> u32 {
        let mut best = cands[0].0;
        let mut best_d = f64::INFINITY;
        for &(idx, p) in cands {
            let d = (p[0] - obs[0]).powi(2) + (p[1] - obs[1]).powi(2);
            if d < best_d || (d == best_d && idx < best) {
                best_d = d;
                best = idx;
            }
        }
        best
    };
    for (slot, &obs) in map[..8].iter_mut().zip(&landmarks.points[..8]) {
        *slot = nearest(obs, &left);
    }
    map[CHIN_LANDMARK] = nearest(landmarks.points[CHIN_LANDMARK], &union);
    for (slot, &obs) in map[9..17].iter_mut().zip(&landmarks.points[9..17]) {
        *slot = nearest(obs, &right);
    }
    Ok(map)
}

fn landmark_rmse(mesh: &Mesh, map: &[u32], pose: &Pose, landmarks: &LandmarkSet) -> f64 {
    let mut sum = 0.0;
    for (l, &vi) in map.iter().enumerate() {
        let (p, _) = pose.project_point(mesh.vertex(vi as usize));
        let obs = landmarks.points[l];
        sum += (p[0] - obs[0]).powi(2) + (p[1] - obs[1]).powi(2);
    }
    (sum / map.len() as f64).sqrt()
}

/// Fits pose, shape, and expression to one landmark set.
///
/// Starts from the mean shape with zero coefficients, then alternates pose
/// estimation, optional contour re-correspondence, shape solve, and
/// expression solve until the landmark RMSE stops changing by a relative
/// `convergence_tol` or `max_iterations` rounds complete. The reported
/// residual always corresponds to the returned pose and coefficients.
pub fn fit(model: &MorphableModel, landmarks: &LandmarkSet, config: &FitConfig) -> Result<FitResult> {
    landmarks.validate()?;
    config.validate()?;
    let interocular = landmarks.interocular();
    if interocular <= 1e-9 {
        return Err(Error::DegenerateConfiguration(
            "landmark eye corners coincide; interocular distance is zero".into(),
        ));
    }
    let weights = landmarks.confidence.clone();
    let shape_d_half: Vec<f64> = model.shape_sigma.iter().map(|s| 1.0 / s).collect();
    let expr_d_half = vec![1.0; model.n_expr()];

    let mut map = model.landmark_map.clone();
    let mut alpha = vec![0.0; model.n_shape()];
    let mut beta = vec![0.0; model.n_expr()];
    let mut mesh = model.evaluate_mesh(&alpha, &beta)?;
    let mut pose = Pose::identity();
    let mut rmse = f64::INFINITY;
    let mut iterations_run = 0;

    for _ in 0..config.max_iterations {
        let lm3d = positions_for_map(&mesh, &map);
        pose = estimate_pose(&lm3d, &landmarks.points, weights.as_deref())?;
        if config.contour_mode == ContourMode::Dynamic {
            map = update_contour_correspondence(model, &mesh, &pose, landmarks)?;
        }
        alpha = solve_modes(
            model, &map, &pose, landmarks, true, &beta, config.lambda_shape, &shape_d_half,
        )?;
        beta = solve_modes(
            model, &map, &pose, landmarks, false, &alpha, config.lambda_expr, &expr_d_half,
        )?;
        mesh = model.evaluate_mesh(&alpha, &beta)?;
        let next = landmark_rmse(&mesh, &map, &pose, landmarks);
        iterations_run += 1;
        let converged = rmse.is_finite()
            && (rmse - next).abs() / rmse.max(f64::MIN_POSITIVE) < config.convergence_tol;
        rmse = next;
        if converged {
            break;
        }
    }

    Ok(FitResult {
        shape_coeffs: alpha,
        expr_coeffs: beta,
        pose,
        residual_rmse: rmse,
        residual_rel: rmse / interocular,
        iterations_run,
    })
}
