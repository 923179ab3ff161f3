//! Software rasterizer: fills front-facing triangles with a strictly
//! nearer-wins z-test, samples an optional per-vertex-UV texture with
//! nearest-neighbor lookup, and writes PPM images and raw depth dumps.
//!
//! Screen convention: x right, y down, pixel centers at (x + 0.5, y + 0.5).
//! Front faces wind counter-clockwise on screen. Depth is camera-space z
//! (larger is farther); background pixels hold +infinity.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::camera::Pose;
use crate::error::{Error, Result};
use crate::fitting::FitResult;
use crate::model::{Mesh, MorphableModel};

/// Color of pixels no triangle covers.
pub const BACKGROUND: [u8; 3] = [0, 0, 0];
/// Flat shade for untextured surfaces.
pub const UNTEXTURED_GRAY: [u8; 3] = [128, 128, 128];

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// `3 * width * height` bytes, RGB interleaved.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Image { width, height, data: vec![0; 3 * width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> Self {
        let mut img = Image::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set_pixel(x, y, f(x, y));
            }
        }
        img
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        3 * (y as usize * self.width as usize + x as usize)
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Serializes as binary PPM (P6, maxval 255).
    pub fn write_ppm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.data.len() + 32);
        self.write_ppm(&mut buf).expect("in-memory write cannot fail");
        buf
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_ppm(&mut w).map_err(|e| Error::io(path, e))
    }

    /// Parses binary PPM (P6, maxval 255); `#` comments allowed in the header.
    pub fn read_ppm<R: BufRead>(mut r: R, origin: &Path) -> Result<Self> {
        let parse = |what: &str| {
            Error::io(
                origin,
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("invalid PPM: {what}")),
            )
        };
        let mut header_tokens = Vec::new();
        let mut token = Vec::new();
        let mut in_comment = false;
        while header_tokens.len() < 4 {
            let mut byte = [0u8; 1];
            r.read_exact(&mut byte).map_err(|e| Error::io(origin, e))?;
            let b = byte[0];
            if in_comment {
                in_comment = b != b'\n';
                continue;
            }
            match b {
                b'#' => in_comment = true,
                b' ' | b'\t' | b'\r' | b'\n' => {
                    if !token.is_empty() {
                        header_tokens.push(std::mem::take(&mut token));
                        // The single whitespace byte after maxval ends the header.
                    }
                }
                _ => token.push(b),
            }
        }
        if header_tokens[0] != b"P6" {
            return Err(parse("not a P6 file"));
        }
        let num = |i: usize, what: &str| -> Result<u32> {
            std::str::from_utf8(&header_tokens[i])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| parse(what))
        };
        let width = num(1, "bad width")?;
        let height = num(2, "bad height")?;
        if num(3, "bad maxval")? != 255 {
            return Err(parse("only maxval 255 is supported"));
        }
        let mut data = vec![0u8; 3 * width as usize * height as usize];
        r.read_exact(&mut data).map_err(|e| Error::io(origin, e))?;
        Ok(Image { width, height, data })
    }

    pub fn load_ppm(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Image::read_ppm(std::io::BufReader::new(file), path)
    }
}

/// Texture coordinates and validity marks for one mesh vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexUv {
    /// Normalized [0,1]² coordinates, (0,0) at the image's top-left.
    pub uv: [f64; 2],
    /// False when the vertex projected outside the source image (the UV is
    /// then clamped to the nearest edge).
    pub in_bounds: bool,
    /// False when the vertex faced away from the camera in the source view.
    pub front_facing: bool,
}

impl VertexUv {
    /// A vertex contributes texture only if it was seen in the source image.
    pub fn textured(&self) -> bool {
        self.in_bounds && self.front_facing
    }
}

/// A texture image plus per-vertex coordinates into it.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    pub image: Image,
    pub coords: Vec<VertexUv>,
}

/// Rasterization output: color plus the per-pixel depth record.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFace {
    pub width: u32,
    pub height: u32,
    pub color: Image,
    /// Row-major camera-space depth; +infinity where no triangle renders.
    pub depth: Vec<f64>,
}

impl RenderedFace {
    /// Nearest-pixel depth lookup; out-of-range coordinates read as empty
    /// (+infinity).
    pub fn depth_at(&self, x: i64, y: i64) -> f64 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return f64::INFINITY;
        }
        self.depth[y as usize * self.width as usize + x as usize]
    }

    /// Dumps the depth buffer: width and height as little-endian u32,
    /// then row-major little-endian f32 samples.
    pub fn write_depth<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        for &d in &self.depth {
            w.write_all(&(d as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save_depth(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_depth(&mut w).map_err(|e| Error::io(path, e))
    }
}

/// Edge function w(p) for the directed edge `from -> to`: positive on the
/// triangle's interior side, zero on the edge. `accept_zero` encodes the
/// top-left fill rule so pixels exactly on a shared edge belong to exactly
/// one of the two triangles.
#[derive(Debug, Clone, Copy)]
struct EdgeFn {
    a: f64,
    b: f64,
    c: f64,
    accept_zero: bool,
}

impl EdgeFn {
    fn new(from: [f64; 2], to: [f64; 2]) -> Self {
        let dx = to[0] - from[0];
        let dy = to[1] - from[1];
        EdgeFn {
            a: dy,
            b: -dx,
            c: dx * from[1] - dy * from[0],
            accept_zero: dy > 0.0 || (dy == 0.0 && dx < 0.0),
        }
    }

    #[inline]
    fn eval(&self, px: f64, py: f64) -> f64 {
        self.a * px + self.b * py + self.c
    }
}

/// Coverage test and barycentric weights for one screen triangle. Exposed so
/// verification code can reproduce the rasterizer's per-pixel arithmetic
/// exactly: weights are the edge functions of the opposing edges, a point is
/// covered when all three are positive (or zero on a top or left edge), and
/// interpolation divides by their sum.
///
/// Returns `None` for uncovered points and for back-facing or degenerate
/// triangles (screen winding clockwise or zero area).
pub fn coverage_weights(tri: &[[f64; 2]; 3], px: f64, py: f64) -> Option<[f64; 3]> {
    let [pa, pb, pc] = *tri;
    let edges = [EdgeFn::new(pb, pc), EdgeFn::new(pc, pa), EdgeFn::new(pa, pb)];
    let mut w = [0.0; 3];
    for (i, e) in edges.iter().enumerate() {
        let v = e.eval(px, py);
        if v < 0.0 || (v == 0.0 && !e.accept_zero) {
            return None;
        }
        w[i] = v;
    }
    if w[0] + w[1] + w[2] <= 0.0 {
        return None;
    }
    Some(w)
}

/// Per-triangle data prepared once, shared by the color and depth-only
/// rasterization paths.
struct TrianglePrep {
    screen: [[f64; 2]; 3],
    depth: [f64; 3],
    /// Per-vertex UVs, present only when every vertex of the triangle
    /// carries a valid texture sample.
    tex_uv: Option<[[f64; 2]; 3]>,
}

fn prepare_triangle(
    tri: &[u32; 3],
    projected: &[([f64; 2], f64)],
    texture: Option<&TextureMap>,
) -> TrianglePrep {
    let [ia, ib, ic] = [tri[0] as usize, tri[1] as usize, tri[2] as usize];
    let tex_uv = texture.and_then(|t| {
        let vs = [t.coords[ia], t.coords[ib], t.coords[ic]];
        vs.iter().all(|v| v.textured()).then(|| [vs[0].uv, vs[1].uv, vs[2].uv])
    });
    TrianglePrep {
        screen: [projected[ia].0, projected[ib].0, projected[ic].0],
        depth: [projected[ia].1, projected[ib].1, projected[ic].1],
        tex_uv,
    }
}

fn sample_nearest(image: &Image, u: f64, v: f64) -> [u8; 3] {
    let tx = ((u * image.width as f64).floor() as i64).clamp(0, image.width as i64 - 1);
    let ty = ((v * image.height as f64).floor() as i64).clamp(0, image.height as i64 - 1);
    image.pixel(tx as u32, ty as u32)
}

/// Pixel-x range whose centers can fall inside [min, max], clamped to the
/// viewport.
fn pixel_span(min: f64, max: f64, limit: u32) -> Option<(u32, u32)> {
    let lo = (min - 0.5).ceil().max(0.0);
    let hi = (max - 0.5).floor().min(limit as f64 - 1.0);
    if lo > hi || hi < 0.0 {
        None
    } else {
        Some((lo as u32, hi as u32))
    }
}

fn raster_impl(
    mesh: &Mesh,
    pose: &Pose,
    width: u32,
    height: u32,
    texture: Option<&TextureMap>,
    mut color: Option<&mut Image>,
) -> Vec<f64> {
    let mut depth = vec![f64::INFINITY; width as usize * height as usize];
    if width == 0 || height == 0 {
        return depth;
    }
    let projected: Vec<([f64; 2], f64)> =
        (0..mesh.n_vertices()).map(|i| pose.project_point(mesh.vertex(i))).collect();

    for tri in mesh.triangles.iter() {
        let prep = prepare_triangle(tri, &projected, texture);
        let [pa, pb, pc] = prep.screen;
        // Front faces wind counter-clockwise on a y-down screen.
        let area = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0]);
        if area >= 0.0 {
            continue;
        }
        let min_x = pa[0].min(pb[0]).min(pc[0]);
        let max_x = pa[0].max(pb[0]).max(pc[0]);
        let min_y = pa[1].min(pb[1]).min(pc[1]);
        let max_y = pa[1].max(pb[1]).max(pc[1]);
        let Some((x0, x1)) = pixel_span(min_x, max_x, width) else { continue };
        let Some((y0, y1)) = pixel_span(min_y, max_y, height) else { continue };

        for y in y0..=y1 {
            let py = y as f64 + 0.5;
            let row = y as usize * width as usize;
            for x in x0..=x1 {
                let px = x as f64 + 0.5;
                let Some(w) = coverage_weights(&prep.screen, px, py) else {
                    continue;
                };
                let wsum = w[0] + w[1] + w[2];
                let z =
                    (w[0] * prep.depth[0] + w[1] * prep.depth[1] + w[2] * prep.depth[2]) / wsum;
                let idx = row + x as usize;
                if z < depth[idx] {
                    depth[idx] = z;
                    if let Some(img) = color.as_deref_mut() {
                        let rgb = match (&prep.tex_uv, texture) {
                            (Some(uv), Some(t)) => {
                                let u =
                                    (w[0] * uv[0][0] + w[1] * uv[1][0] + w[2] * uv[2][0]) / wsum;
                                let v =
                                    (w[0] * uv[0][1] + w[1] * uv[1][1] + w[2] * uv[2][1]) / wsum;
                                sample_nearest(&t.image, u, v)
                            }
                            _ => UNTEXTURED_GRAY,
                        };
                        img.set_pixel(x, y, rgb);
                    }
                }
            }
        }
    }
    depth
}

/// Renders the mesh under `pose` into a `width` x `height` frame.
///
/// Vertices project through the scaled-orthographic camera; front-facing
/// triangles fill via barycentric interpolation with a strictly nearer-wins
/// depth test; pixels sample at their centers with top-left edge ownership.
/// Triangles whose three vertices all carry valid texture samples draw with
/// nearest-neighbor texture lookup, all others flat mid-gray. An empty mesh
/// yields a background-only frame. Output is deterministic.
pub fn rasterize(
    mesh: &Mesh,
    pose: &Pose,
    width: u32,
    height: u32,
    texture: Option<&TextureMap>,
) -> RenderedFace {
    // A fresh image is zeroed, which is exactly BACKGROUND.
    let mut color = Image::new(width, height);
    let depth = raster_impl(mesh, pose, width, height, texture, Some(&mut color));
    RenderedFace { width, height, color, depth }
}

/// Depth-only variant of [`rasterize`] for visibility queries; identical
/// z-buffer, no color allocation.
pub fn rasterize_depth(mesh: &Mesh, pose: &Pose, width: u32, height: u32) -> Vec<f64> {
    raster_impl(mesh, pose, width, height, None, None)
}

/// Area-weighted vertex normals; triangle normals follow the winding that
/// makes rendered front faces point toward the camera (negative z under the
/// identity pose). Isolated vertices get a zero normal.
fn vertex_normals(mesh: &Mesh) -> Vec<[f64; 3]> {
    let mut normals = vec![[0.0; 3]; mesh.n_vertices()];
    for tri in mesh.triangles.iter() {
        let a = mesh.vertex(tri[0] as usize);
        let b = mesh.vertex(tri[1] as usize);
        let c = mesh.vertex(tri[2] as usize);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let n = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        for &i in tri {
            for a in 0..3 {
                normals[i as usize][a] += n[a];
            }
        }
    }
    for n in &mut normals {
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if len > 0.0 {
            for a in n.iter_mut() {
                *a /= len;
            }
        }
    }
    normals
}

/// Projects every vertex of the fitted mesh into the reference image and
/// records normalized texture coordinates: UV = pixel position / image size.
/// Vertices landing outside the image are clamped to its edge and marked
/// out-of-bounds; vertices facing away from the camera in the reference view
/// are marked untextured. Isolated vertices (zero normal) count as
/// front-facing since they carry no orientation.
pub fn bake_reference_texture(
    model: &MorphableModel,
    fit_ref: &FitResult,
    reference: &Image,
) -> Result<TextureMap> {
    if reference.width == 0 || reference.height == 0 {
        return Err(Error::InvalidArgument("reference image is empty".into()));
    }
    fit_ref.pose.validate()?;
    let mesh = model.evaluate_mesh(&fit_ref.shape_coeffs, &fit_ref.expr_coeffs)?;
    let normals = vertex_normals(&mesh);
    let (w, h) = (reference.width as f64, reference.height as f64);
    let r2 = fit_ref.pose.rotation.row(2).into_owned();
    let coords = (0..mesh.n_vertices())
        .map(|i| {
            let (p, _) = fit_ref.pose.project_point(mesh.vertex(i));
            let (u, v) = (p[0] / w, p[1] / h);
            let n = normals[i];
            let view_z = r2[0] * n[0] + r2[1] * n[1] + r2[2] * n[2];
            VertexUv {
                uv: [u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)],
                in_bounds: (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v),
                front_facing: view_z <= 0.0,
            }
        })
        .collect();
    Ok(TextureMap { image: reference.clone(), coords })
}
