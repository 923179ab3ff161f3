//! Linear morphable face model: mean shape, identity (shape) basis with
//! per-mode sigmas, and expression delta basis.
//!
//! Vertex data is stored flat and xyz-interleaved (length `3 * n_vertices`).
//! Model space is right-handed: x right, y down, z away from the camera, so
//! front-facing surface points have negative z under an identity pose.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::camera::LANDMARK_COUNT;
use crate::error::{Error, Result};

/// A morphable model. `shape_basis` columns are unit-norm identity modes
/// scaled at fit time by coefficients measured in multiples of
/// `shape_sigma`; `expr_basis` columns are unit-norm expression deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    /// Mean shape, `3 * n_vertices`, xyz-interleaved.
    pub mean: Vec<f64>,
    /// Identity modes, `3 * n_vertices` rows by `n_shape` columns.
    pub shape_basis: DMatrix<f64>,
    /// Per-mode standard deviations, one per shape column, all positive.
    pub shape_sigma: Vec<f64>,
    /// Expression deltas, `3 * n_vertices` rows by `n_expr` columns.
    pub expr_basis: DMatrix<f64>,
    /// Triangle vertex indices; shared with every mesh the model produces.
    pub triangles: Arc<Vec<[u32; 3]>>,
    /// Vertex index of each of the 68 landmarks.
    pub landmark_map: Vec<u32>,
    /// Jaw re-correspondence candidates, left side, ordered ear to chin.
    pub contour_left: Vec<u32>,
    /// Jaw re-correspondence candidates, right side, ordered ear to chin.
    pub contour_right: Vec<u32>,
}

/// A concrete surface produced by evaluating the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    /// `3 * n_vertices`, xyz-interleaved.
    pub vertices: Vec<f64>,
    pub triangles: Arc<Vec<[u32; 3]>>,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len() / 3
    }

    pub fn vertex(&self, i: usize) -> [f64; 3] {
        [self.vertices[3 * i], self.vertices[3 * i + 1], self.vertices[3 * i + 2]]
    }

    /// Diagonal of the axis-aligned bounding box; the occlusion depth
    /// tolerance is expressed as a fraction of this.
    pub fn bbox_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in self.vertices.chunks_exact(3) {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        if self.vertices.is_empty() {
            return 0.0;
        }
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt()
    }
}

/// Positions of mapped vertices as an array of 3D points.
pub fn positions_for_map(mesh: &Mesh, map: &[u32]) -> Vec<[f64; 3]> {
    map.iter().map(|&i| mesh.vertex(i as usize)).collect()
}

impl MorphableModel {
    pub fn n_vertices(&self) -> usize {
        self.mean.len() / 3
    }

    pub fn n_shape(&self) -> usize {
        self.shape_basis.ncols()
    }

    pub fn n_expr(&self) -> usize {
        self.expr_basis.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.mean.len();
        if dim == 0 || !dim.is_multiple_of(3) {
            return Err(Error::validation("mean", "length must be a positive multiple of 3"));
        }
        let n = dim / 3;
        if self.shape_basis.nrows() != dim {
            return Err(Error::Dimension(format!(
                "shape basis has {} rows, expected {dim}",
                self.shape_basis.nrows()
            )));
        }
        if self.expr_basis.nrows() != dim {
            return Err(Error::Dimension(format!(
                "expression basis has {} rows, expected {dim}",
                self.expr_basis.nrows()
            )));
        }
        if self.shape_basis.ncols() == 0 || self.expr_basis.ncols() == 0 {
            return Err(Error::validation("basis", "need at least one column per basis"));
        }
        if self.shape_sigma.len() != self.shape_basis.ncols() {
            return Err(Error::Dimension(format!(
                "{} sigmas for {} shape modes",
                self.shape_sigma.len(),
                self.shape_basis.ncols()
            )));
        }
        if self.shape_sigma.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::validation("shape_sigma", "values must be finite and positive"));
        }
        if self.mean.iter().any(|v| !v.is_finite())
            || self.shape_basis.iter().any(|v| !v.is_finite())
            || self.expr_basis.iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("model arrays contain non-finite values".into()));
        }
        if self.landmark_map.len() != LANDMARK_COUNT {
            return Err(Error::validation(
                "landmark_map",
                format!("expected {} entries, got {}", LANDMARK_COUNT, self.landmark_map.len()),
            ));
        }
        let in_range = |idx: &[u32]| idx.iter().all(|&i| (i as usize) < n);
        if !in_range(&self.landmark_map) {
            return Err(Error::validation("landmark_map", "vertex index out of range"));
        }
        if !in_range(&self.contour_left) || !in_range(&self.contour_right) {
            return Err(Error::validation("contour", "vertex index out of range"));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| (i as usize) >= n) {
                return Err(Error::validation("triangles", format!("index out of range in {t}")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::validation("triangles", format!("repeated vertex in {t}")));
            }
        }
        Ok(())
    }

    /// Evaluates `mean + shape_basis * shape_coeffs + expr_basis * expr_coeffs`.
    ///
    /// Zero coefficient vectors reproduce the mean exactly: columns with a
    /// zero coefficient are skipped rather than multiplied through.
    pub fn evaluate_mesh(&self, shape_coeffs: &[f64], expr_coeffs: &[f64]) -> Result<Mesh> {
        if shape_coeffs.len() != self.n_shape() {
            return Err(Error::Dimension(format!(
                "{} shape coefficients for {} modes",
                shape_coeffs.len(),
                self.n_shape()
            )));
        }
        if expr_coeffs.len() != self.n_expr() {
            return Err(Error::Dimension(format!(
                "{} expression coefficients for {} modes",
                expr_coeffs.len(),
                self.n_expr()
            )));
        }
        if shape_coeffs.iter().chain(expr_coeffs).any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("coefficients contain non-finite values".into()));
        }
        let mut vertices = self.mean.clone();
        for (k, &c) in shape_coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let col = self.shape_basis.column(k);
            for (v, b) in vertices.iter_mut().zip(col.iter()) {
                *v += c * b;
            }
        }
        for (k, &c) in expr_coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let col = self.expr_basis.column(k);
            for (v, b) in vertices.iter_mut().zip(col.iter()) {
                *v += c * b;
            }
        }
        Ok(Mesh { vertices, triangles: Arc::clone(&self.triangles) })
    }

    /// 3D positions of the 68 landmark vertices of a mesh.
    pub fn landmark_positions(&self, mesh: &Mesh) -> Vec<[f64; 3]> {
        positions_for_map(mesh, &self.landmark_map)
    }

    /// Interocular distance of the mean shape, in model units.
    pub fn mean_interocular(&self) -> f64 {
        let mesh = Mesh { vertices: self.mean.clone(), triangles: Arc::clone(&self.triangles) };
        let a = mesh.vertex(self.landmark_map[crate::camera::OUTER_EYE_CORNERS.0] as usize);
        let b = mesh.vertex(self.landmark_map[crate::camera::OUTER_EYE_CORNERS.1] as usize);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    n_vertices: usize,
    n_shape: usize,
    n_expr: usize,
    landmark_map: Vec<u32>,
    contour_left: Vec<u32>,
    contour_right: Vec<u32>,
    triangles: Vec<[u32; 3]>,
}

fn write_f64_bin(path: &Path, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f64_bin(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::validation(
            "binary array",
            format!("{} holds {} bytes, expected {}", path.display(), bytes.len(), expected * 8),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes a model directory: `model.json` with the structure and index
/// arrays, plus little-endian f64 binaries for the float arrays. Basis
/// matrices are stored column-major.
pub fn save_model(model: &MorphableModel, dir: &Path) -> Result<()> {
    model.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = ModelMeta {
        n_vertices: model.n_vertices(),
        n_shape: model.n_shape(),
        n_expr: model.n_expr(),
        landmark_map: model.landmark_map.clone(),
        contour_left: model.contour_left.clone(),
        contour_right: model.contour_right.clone(),
        triangles: model.triangles.as_ref().clone(),
    };
    let meta_path = dir.join("model.json");
    let json = serde_json::to_string_pretty(&meta).expect("model metadata serializes");
    std::fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    write_f64_bin(&dir.join("mean.bin"), &model.mean)?;
    write_f64_bin(&dir.join("shape_basis.bin"), model.shape_basis.as_slice())?;
    write_f64_bin(&dir.join("shape_sigma.bin"), &model.shape_sigma)?;
    write_f64_bin(&dir.join("expr_basis.bin"), model.expr_basis.as_slice())?;
    Ok(())
}

/// Loads a model directory written by [`save_model`] and validates it.
pub fn load_model(dir: &Path) -> Result<MorphableModel> {
    let meta_path = dir.join("model.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| Error::parse(&meta_path, e))?;
    let dim = meta
        .n_vertices
        .checked_mul(3)
        .ok_or_else(|| Error::validation("n_vertices", "overflows"))?;
    let mean = read_f64_bin(&dir.join("mean.bin"), dim)?;
    let shape = read_f64_bin(&dir.join("shape_basis.bin"), dim * meta.n_shape)?;
    let sigma = read_f64_bin(&dir.join("shape_sigma.bin"), meta.n_shape)?;
    let expr = read_f64_bin(&dir.join("expr_basis.bin"), dim * meta.n_expr)?;
    let model = MorphableModel {
        mean,
        shape_basis: DMatrix::from_column_slice(dim, meta.n_shape, &shape),
        shape_sigma: sigma,
        expr_basis: DMatrix::from_column_slice(dim, meta.n_expr, &expr),
        triangles: Arc::new(meta.triangles),
        landmark_map: meta.landmark_map,
        contour_left: meta.contour_left,
        contour_right: meta.contour_right,
    };
    model.validate()?;
    Ok(model)
}

// --- Synthetic test model ---------------------------------------------------
//
// A face-like half-ellipsoid with semi-axes (1.0, 1.25, 0.30). Vertices are
// parameterized by face-plane coordinates (u, v) in [-1, 1]^2 and lifted to
// the surface via
//
//   sin(phi) = 0.97 u,  sin(theta) = 0.97 v,
//   p = (a sin(phi) cos(theta), b sin(theta), -c cos(phi) cos(theta)).
//
// The 68 landmark vertices and the jaw-contour candidates sit on the surface
// but belong to no triangle, so depth queries against the rasterized grid see
// the chord surface slightly behind them. The triangulated part is a regular
// (u, v) grid; leftover vertex budget becomes detached filler points.

const AXIS_A: f64 = 1.0;
const AXIS_B: f64 = 1.25;
const AXIS_C: f64 = 0.30;
const SURFACE_CAP: f64 = 0.97;

fn surface_point(u: f64, v: f64) -> [f64; 3] {
    let sin_phi = SURFACE_CAP * u;
    let sin_theta = SURFACE_CAP * v;
    let cos_phi = (1.0 - sin_phi * sin_phi).sqrt();
    let cos_theta = (1.0 - sin_theta * sin_theta).sqrt();
    [
        AXIS_A * sin_phi * cos_theta,
        AXIS_B * sin_theta,
        -AXIS_C * cos_phi * cos_theta,
    ]
}

/// Canonical 68-point layout in face-plane coordinates, x right, y down,
/// mirror-symmetric about x = 0. Indices follow the usual 68-point scheme:
/// jaw 0-16, brows 17-26, nose 27-35, eyes 36-47, mouth 48-67.
pub fn canonical_landmark_plane() -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(LANDMARK_COUNT);
    for k in 0..17 {
        let t = k as f64 / 16.0;
        let ang = std::f64::consts::PI * t;
        pts.push([-0.88 * ang.cos(), 0.95 * ang.sin()]);
    }
    for j in 0..5 {
        let s = j as f64 / 4.0;
        pts.push([-0.65 + 0.5 * s, -0.45 - 0.06 * (std::f64::consts::PI * s).sin()]);
    }
    for j in 0..5 {
        let s = j as f64 / 4.0;
        pts.push([0.15 + 0.5 * s, -0.45 - 0.06 * (std::f64::consts::PI * (1.0 - s)).sin()]);
    }
    for j in 0..4 {
        pts.push([0.0, -0.35 + 0.15 * j as f64]);
    }
    for j in 0..5 {
        pts.push([-0.15 + 0.075 * j as f64, 0.22]);
    }
    pts.extend_from_slice(&[
        [-0.58, -0.28],
        [-0.49, -0.345],
        [-0.35, -0.345],
        [-0.26, -0.28],
        [-0.35, -0.215],
        [-0.49, -0.215],
    ]);
    pts.extend_from_slice(&[
        [0.26, -0.28],
        [0.35, -0.345],
        [0.49, -0.345],
        [0.58, -0.28],
        [0.49, -0.215],
        [0.35, -0.215],
    ]);
    let outer: [f64; 12] = [180.0, 150.0, 120.0, 90.0, 60.0, 30.0, 0.0, 330.0, 300.0, 270.0, 240.0, 210.0];
    for deg in outer {
        let a = deg.to_radians();
        pts.push([0.32 * a.cos(), 0.55 - 0.13 * a.sin()]);
    }
    let inner: [f64; 8] = [180.0, 135.0, 90.0, 45.0, 0.0, 315.0, 270.0, 225.0];
    for deg in inner {
        let a = deg.to_radians();
        pts.push([0.20 * a.cos(), 0.55 - 0.06 * a.sin()]);
    }
    debug_assert_eq!(pts.len(), LANDMARK_COUNT);
    pts
}

fn jaw_plane(t: f64) -> [f64; 2] {
    let ang = std::f64::consts::PI * t;
    [-0.88 * ang.cos(), 0.95 * ang.sin()]
}

/// Extra toward-camera depth for each landmark vertex. The nose protrudes
/// from the ellipsoid shell; without it the 68 landmarks are nearly
/// coplanar and pose estimation against them amplifies any landmark
/// mismatch roughly by the inverse depth spread.
fn landmark_z_offset(k: usize) -> f64 {
    match k {
        27 => 0.05,
        28 => 0.12,
        29 => 0.20,
        30 => 0.28,
        31 | 35 => 0.08,
        32 | 34 => 0.14,
        33 => 0.18,
        _ => 0.0,
    }
}

struct BumpField {
    // (center_u, center_v, inv_two_sigma_sq, amplitude xyz)
    bumps: Vec<([f64; 2], f64, [f64; 3])>,
}

impl BumpField {
    fn displacement(&self, u: f64, v: f64) -> [f64; 3] {
        let mut d = [0.0; 3];
        for (c, inv2s2, amp) in &self.bumps {
            let r2 = (u - c[0]).powi(2) + (v - c[1]).powi(2);
            let g = (-r2 * inv2s2).exp();
            for a in 0..3 {
                d[a] += g * amp[a];
            }
        }
        d
    }
}

fn field_column(field: &BumpField, params: &[[f64; 2]]) -> Vec<f64> {
    let mut col = Vec::with_capacity(params.len() * 3);
    for p in params {
        let d = field.displacement(p[0], p[1]);
        col.extend_from_slice(&d);
    }
    col
}

/// Modified Gram-Schmidt, run twice for stability; columns come out
/// orthonormal. Errors if the inputs are linearly dependent.
fn orthonormalize(columns: &mut [Vec<f64>]) -> Result<()> {
    for _pass in 0..2 {
        for k in 0..columns.len() {
            for j in 0..k {
                let dot: f64 = columns[k].iter().zip(&columns[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = columns.split_at_mut(k);
                let cj = &head[j];
                for (a, b) in tail[0].iter_mut().zip(cj) {
                    *a -= dot * b;
                }
            }
            let norm: f64 = columns[k].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-10 {
                return Err(Error::DegenerateConfiguration(
                    "generated basis columns are linearly dependent".into(),
                ));
            }
            for v in &mut columns[k] {
                *v /= norm;
            }
        }
    }
    Ok(())
}

/// Orthonormal basis of the rigid displacement fields of a vertex set:
/// three translations, three infinitesimal rotations about the centroid,
/// and uniform scaling. Basis columns are projected against these so that
/// model deformation cannot imitate a camera motion; a basis that overlaps
/// the rigid modes makes pose and coefficients mutually unidentifiable.
fn rigid_fields(mean: &[f64]) -> Vec<Vec<f64>> {
    let n = mean.len() / 3;
    let mut centroid = [0.0f64; 3];
    for v in mean.chunks_exact(3) {
        for a in 0..3 {
            centroid[a] += v[a];
        }
    }
    for c in &mut centroid {
        *c /= n as f64;
    }
    let mut fields = vec![vec![0.0; mean.len()]; 7];
    for i in 0..n {
        let r = [
            mean[3 * i] - centroid[0],
            mean[3 * i + 1] - centroid[1],
            mean[3 * i + 2] - centroid[2],
        ];
        fields[0][3 * i] = 1.0;
        fields[1][3 * i + 1] = 1.0;
        fields[2][3 * i + 2] = 1.0;
        // omega x r for omega = x, y, z.
        fields[3][3 * i + 1] = -r[2];
        fields[3][3 * i + 2] = r[1];
        fields[4][3 * i] = r[2];
        fields[4][3 * i + 2] = -r[0];
        fields[5][3 * i] = -r[1];
        fields[5][3 * i + 1] = r[0];
        fields[6][3 * i] = r[0];
        fields[6][3 * i + 1] = r[1];
        fields[6][3 * i + 2] = r[2];
    }
    orthonormalize(&mut fields).expect("rigid fields of a non-degenerate surface are independent");
    fields
}

fn project_out(column: &mut [f64], fields: &[Vec<f64>]) {
    for f in fields {
        let dot: f64 = column.iter().zip(f).map(|(a, b)| a * b).sum();
        for (c, b) in column.iter_mut().zip(f) {
            *c -= dot * b;
        }
    }
}

/// Deterministically generates a face-like test model. Same arguments give
/// a bit-identical model.
///
/// Layout: vertices 0-67 are the landmark vertices (the landmark map is the
/// identity), followed by the left and right jaw-contour candidate rings,
/// then the triangulated grid, then detached fillers.
pub fn synthesize_test_model(
    seed: u64,
    n_vertices: usize,
    n_shape: usize,
    n_expr: usize,
) -> Result<MorphableModel> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    if n_vertices < 120 {
        return Err(Error::InvalidArgument(format!(
            "synthetic model needs at least 120 vertices, got {n_vertices}"
        )));
    }
    if !(1..=64).contains(&n_shape) || !(1..=64).contains(&n_expr) {
        return Err(Error::InvalidArgument(
            "shape and expression mode counts must lie in 1..=64".into(),
        ));
    }

    let extras = n_vertices - LANDMARK_COUNT;
    let ring = (extras / 4).min(32);
    let grid_budget = extras - 2 * ring;
    let cols = (grid_budget as f64).sqrt().floor() as usize;
    let rows = grid_budget / cols;
    let filler = grid_budget - rows * cols;

    // Face-plane parameters for every vertex, in layout order.
    let mut params: Vec<[f64; 2]> = canonical_landmark_plane();
    for i in 0..ring {
        let t = 0.5 * i as f64 / (ring - 1) as f64;
        params.push(jaw_plane(t));
    }
    for i in 0..ring {
        let t = 1.0 - 0.5 * i as f64 / (ring - 1) as f64;
        params.push(jaw_plane(t));
    }
    let grid_base = params.len() as u32;
    for r in 0..rows {
        for q in 0..cols {
            params.push([
                -1.0 + 2.0 * q as f64 / (cols - 1) as f64,
                -1.0 + 2.0 * r as f64 / (rows - 1) as f64,
            ]);
        }
    }
    for i in 0..filler {
        let frac = |x: f64| x - x.floor();
        params.push([
            2.0 * frac(0.754_877_666_246_692_7 * (i + 1) as f64) - 1.0,
            2.0 * frac(0.569_840_290_998_053_2 * (i + 1) as f64) - 1.0,
        ]);
    }
    debug_assert_eq!(params.len(), n_vertices);

    let mut mean = Vec::with_capacity(3 * n_vertices);
    for (i, p) in params.iter().enumerate() {
        let mut pt = surface_point(p[0], p[1]);
        if i < LANDMARK_COUNT {
            pt[2] -= landmark_z_offset(i);
        }
        mean.extend_from_slice(&pt);
    }

    // Two triangles per grid cell, wound counter-clockwise on a y-down
    // screen so they are front-facing under an identity pose.
    let mut triangles = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for r in 0..rows - 1 {
        for q in 0..cols - 1 {
            let a = grid_base + (r * cols + q) as u32;
            let b = a + 1;
            let c = grid_base + ((r + 1) * cols + q) as u32;
            let d = c + 1;
            triangles.push([a, c, b]);
            triangles.push([b, c, d]);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_range = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let rigid = rigid_fields(&mean);

    // Identity modes: broad random smooth fields over the whole face.
    let mut shape_cols = Vec::with_capacity(n_shape);
    for _ in 0..n_shape {
        let n_bumps = 6;
        let mut bumps = Vec::with_capacity(n_bumps);
        for _ in 0..n_bumps {
            let center = [rand_range(-1.0, 1.0), rand_range(-1.0, 1.0)];
            let width: f64 = rand_range(0.35, 0.8);
            let amp = [
                rand_range(-1.0, 1.0),
                rand_range(-1.0, 1.0),
                rand_range(-0.4, 0.4),
            ];
            bumps.push((center, 1.0 / (2.0 * width * width), amp));
        }
        let mut col = field_column(&BumpField { bumps }, &params);
        project_out(&mut col, &rigid);
        shape_cols.push(col);
    }
    orthonormalize(&mut shape_cols)?;
    let shape_sigma: Vec<f64> = (0..n_shape).map(|k| 1.5 * 0.85f64.powi(k as i32)).collect();

    // Expression modes: narrow fields anchored at the mouth, eyes, and
    // brows, displacing mostly within the face plane's y direction.
    let regions: [[f64; 2]; 4] = [[0.0, 0.55], [-0.42, -0.28], [0.42, -0.28], [0.0, -0.48]];
    let mut expr_cols = Vec::with_capacity(n_expr);
    for k in 0..n_expr {
        let mut bumps = Vec::new();
        let center = regions[k % regions.len()];
        let n_bumps = 3;
        for _ in 0..n_bumps {
            let jitter = [
                center[0] + rand_range(-0.12, 0.12),
                center[1] + rand_range(-0.12, 0.12),
            ];
            let width: f64 = rand_range(0.16, 0.3);
            let amp = [
                rand_range(-0.35, 0.35),
                rand_range(-1.0, 1.0),
                rand_range(-0.2, 0.2),
            ];
            bumps.push((jitter, 1.0 / (2.0 * width * width), amp));
        }
        // Mirrored twin for the eye regions keeps expressions symmetric.
        if k % regions.len() == 1 || k % regions.len() == 2 {
            let twins: Vec<_> = bumps
                .iter()
                .map(|(c, w, a)| ([-c[0], c[1]], *w, [-a[0], a[1], a[2]]))
                .collect();
            bumps.extend(twins);
        }
        let mut col = field_column(&BumpField { bumps }, &params);
        project_out(&mut col, &rigid);
        expr_cols.push(col);
    }
    orthonormalize(&mut expr_cols)?;

    let flat = |cols: &[Vec<f64>]| -> Vec<f64> { cols.concat() };
    let model = MorphableModel {
        mean,
        shape_basis: DMatrix::from_column_slice(3 * n_vertices, n_shape, &flat(&shape_cols)),
        shape_sigma,
        expr_basis: DMatrix::from_column_slice(3 * n_vertices, n_expr, &flat(&expr_cols)),
        triangles: Arc::new(triangles),
        landmark_map: (0..LANDMARK_COUNT as u32).collect(),
        contour_left: (LANDMARK_COUNT as u32..(LANDMARK_COUNT + ring) as u32).collect(),
        contour_right: ((LANDMARK_COUNT + ring) as u32..(LANDMARK_COUNT + 2 * ring) as u32)
            .collect(),
    };
    model.validate()?;
    Ok(model)
}
