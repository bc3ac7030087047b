//! Hand mesh projection, z-buffered rasterization into a grayscale guidance
//! map, and the padded box mask that marks where inpainting happens.
//!
//! The camera sits at the origin looking down `+z` with identity extrinsics.
//! Pixel `(i, j)` is sampled at its center `(i + 0.5, j + 0.5)`; pixels that
//! fall exactly on a triangle edge belong to it only if the edge is a top or
//! left edge, so meshes sharing edges cover every pixel exactly once.
//!
//! Covered pixels are shaded by depth: the nearest mesh depth maps to `1.0`
//! and the farthest to [`FAR_SHADE`]; the background is exactly `0.0`.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AffineTransform, BBox, Point2};

/// Shade assigned to the farthest mesh depth.
pub const FAR_SHADE: f64 = 0.25;

/// Triangle mesh in camera space (`z > 0` in front of the camera).
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct HandMesh {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
}

impl HandMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(i) = vertices.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        for (f, face) in faces.iter().enumerate() {
            if let Some(&idx) = face.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "face {f} references vertex {idx}, mesh has {}",
                    vertices.len()
                )));
            }
            let [a, b, c] = *face;
            if a == b || b == c || a == c {
                return Err(Error::InvalidMesh(format!("face {f} repeats a vertex index")));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Concatenates two meshes, reindexing `other`'s faces.
    pub fn merge(&self, other: &HandMesh) -> HandMesh {
        let offset = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut faces = self.faces.clone();
        faces.extend(other.faces.iter().map(|f| f.map(|i| i + offset)));
        HandMesh { vertices, faces }
    }

    pub fn from_json_str(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_json(path.as_ref())
    }
}

impl<'de> Deserialize<'de> for HandMesh {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            vertices: Vec<[f64; 3]>,
            faces: Vec<[usize; 3]>,
        }
        let raw = Raw::deserialize(deserializer)?;
        HandMesh::new(raw.vertices, raw.faces).map_err(serde::de::Error::custom)
    }
}

/// Pinhole camera with identity extrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    focal: f64,
    principal: Point2,
    width: usize,
    height: usize,
}

impl Camera {
    pub fn new(focal: f64, principal: Point2, width: usize, height: usize) -> Result<Self> {
        if !(focal.is_finite() && focal > 0.0) {
            return Err(Error::InvalidParameter(format!("focal length must be positive, got {focal}")));
        }
        if !principal.is_finite() {
            return Err(Error::InvalidParameter("principal point must be finite".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!("image size {width}x{height} is empty")));
        }
        Ok(Self { focal, principal, width, height })
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn principal(&self) -> Point2 {
        self.principal
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn project_point(&self, v: [f64; 3]) -> Point2 {
        let [x, y, z] = v;
        Point2::new(self.focal * x / z + self.principal.x, self.focal * y / z + self.principal.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenVertex {
    pub pos: Point2,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenTriangle(pub [ScreenVertex; 3]);

impl ScreenTriangle {
    pub fn transformed(&self, t: &AffineTransform) -> ScreenTriangle {
        ScreenTriangle(self.0.map(|v| ScreenVertex { pos: t.apply(v.pos), depth: v.depth }))
    }
}

/// Pinhole projection of every face. Depth is carried for z-buffering.
pub fn project(mesh: &HandMesh, cam: &Camera) -> Result<Vec<ScreenTriangle>> {
    if let Some((index, v)) = mesh.vertices.iter().enumerate().find(|(_, v)| v[2] <= 0.0) {
        return Err(Error::BehindCamera { index, z: v[2] });
    }
    Ok(mesh
        .faces
        .iter()
        .map(|face| {
            ScreenTriangle(face.map(|i| {
                let v = mesh.vertices[i];
                ScreenVertex { pos: cam.project_point(v), depth: v[2] }
            }))
        })
        .collect())
}

/// Row-major `height × width` grid of intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayscaleMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayscaleMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!("{} values for a {width}x{height} map", data.len())));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("grayscale values must lie in [0, 1]".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn nonzero_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn nonzero_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| (i % self.width, i / self.width))
    }

    /// Tight pixel rectangle around the nonzero pixels.
    pub fn support(&self) -> Option<PixelRect> {
        self.nonzero_pixels().fold(None, |acc, (x, y)| {
            let p = PixelRect { x0: x, y0: y, x1: x, y1: y };
            Some(acc.map_or(p, |r: PixelRect| r.union(&p)))
        })
    }

    /// 8-bit encoding, `round(255 · value)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round() as u8).collect()
    }
}

/// Inclusive rectangle of pixel indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn union(&self, other: &PixelRect) -> PixelRect {
        PixelRect {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn diagonal(&self) -> f64 {
        (self.width() as f64).hypot(self.height() as f64)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    /// Grows by `pad` on every side, clipped to a `width × height` image.
    pub fn padded(&self, pad: usize, width: usize, height: usize) -> PixelRect {
        PixelRect {
            x0: self.x0.saturating_sub(pad),
            y0: self.y0.saturating_sub(pad),
            x1: self.x1.saturating_add(pad).min(width - 1),
            y1: self.y1.saturating_add(pad).min(height - 1),
        }
    }

    pub fn to_bbox(&self) -> BBox {
        BBox { x_min: self.x0 as f64, y_min: self.y0 as f64, x_max: self.x1 as f64, y_max: self.y1 as f64 }
    }
}

/// `{0, 1}` inpainting mask whose ones form a single (possibly empty)
/// axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxMask {
    width: usize,
    height: usize,
    rect: Option<PixelRect>,
}

impl BoxMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, rect: None }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::from_rect(width, height, PixelRect { x0: 0, y0: 0, x1: width - 1, y1: height - 1 })
    }

    /// A mask of ones on `rect` clipped to the image; empty if nothing is left.
    pub fn from_rect(width: usize, height: usize, rect: PixelRect) -> Self {
        let rect = (rect.x0 < width && rect.y0 < height && rect.x0 <= rect.x1 && rect.y0 <= rect.y1)
            .then(|| PixelRect { x1: rect.x1.min(width - 1), y1: rect.y1.min(height - 1), ..rect });
        Self { width, height, rect }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rect(&self) -> Option<PixelRect> {
        self.rect
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.rect.is_some_and(|r| r.contains(x, y))
    }

    pub fn count(&self) -> usize {
        self.rect.map_or(0, |r| r.width() * r.height())
    }

    pub fn is_empty(&self) -> bool {
        self.rect.is_none()
    }

    /// Row-major `{0, 1}` values.
    pub fn to_values(&self) -> Vec<u8> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .map(|(x, y)| u8::from(self.get(x, y)))
            .collect()
    }

    /// 8-bit encoding with ones written as 255.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_values().into_iter().map(|v| v * 255).collect()
    }

    /// Smallest box mask covering both masks' ones.
    pub fn union(&self, other: &BoxMask) -> Result<BoxMask> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::ShapeMismatch("cannot union masks of different sizes".into()));
        }
        let rect = match (self.rect, other.rect) {
            (Some(a), Some(b)) => Some(a.union(&b)),
            (a, b) => a.or(b),
        };
        Ok(Self { rect, ..*self })
    }
}

/// How far the guidance bounding box is grown to form the mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadRule {
    Pixels(usize),
    /// Fraction of the guidance bounding-box diagonal, rounded to pixels.
    DiagonalFraction(f64),
}

impl Default for PadRule {
    fn default() -> Self {
        PadRule::DiagonalFraction(0.1)
    }
}

impl PadRule {
    pub fn pixels_for(&self, support: &PixelRect) -> usize {
        match *self {
            PadRule::Pixels(p) => p,
            PadRule::DiagonalFraction(f) => (f * support.diagonal()).round() as usize,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct DepthRange {
    near: f64,
    far: f64,
}

impl DepthRange {
    fn of(triangles: &[ScreenTriangle]) -> Option<Self> {
        triangles.iter().flat_map(|t| t.0.iter()).fold(None, |acc, v| {
            Some(match acc {
                None => DepthRange { near: v.depth, far: v.depth },
                Some(r) => DepthRange { near: r.near.min(v.depth), far: r.far.max(v.depth) },
            })
        })
    }

    fn shade(&self, depth: f64) -> f64 {
        let span = self.far - self.near;
        if span <= 0.0 {
            return 1.0;
        }
        let t = ((depth - self.near) / span).clamp(0.0, 1.0);
        1.0 - (1.0 - FAR_SHADE) * t
    }
}

/// Signed doubled area of `(a, b, p)`, evaluated with `a` and `b` in a fixed
/// lexicographic order so that `edge(a, b, p) == -edge(b, a, p)` exactly.
fn edge(a: Point2, b: Point2, p: Point2) -> f64 {
    let raw = |a: Point2, b: Point2| (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if (a.x, a.y) <= (b.x, b.y) {
        raw(a, b)
    } else {
        -raw(b, a)
    }
}

/// Top or left edge of a triangle with positive [`edge`] orientation.
fn is_top_left(a: Point2, b: Point2) -> bool {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Pixel index range whose centers fall in `[lo, hi]`, clipped to `0..n`.
fn pixel_span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    (first <= last).then_some((first as usize, last as usize))
}

fn fill_triangle(tri: &ScreenTriangle, range: &DepthRange, zbuf: &mut [f64], out: &mut GrayscaleMap) {
    let [v0, mut v1, mut v2] = tri.0;
    let mut area = edge(v0.pos, v1.pos, v2.pos);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        std::mem::swap(&mut v1, &mut v2);
        area = -area;
    }
    let edges = [(v1.pos, v2.pos), (v2.pos, v0.pos), (v0.pos, v1.pos)];
    let owns = edges.map(|(a, b)| is_top_left(a, b));

    let xs = [v0.pos.x, v1.pos.x, v2.pos.x];
    let ys = [v0.pos.y, v1.pos.y, v2.pos.y];
    let min = |v: [f64; 3]| v[0].min(v[1]).min(v[2]);
    let max = |v: [f64; 3]| v[0].max(v[1]).max(v[2]);
    let Some((x_lo, x_hi)) = pixel_span(min(xs), max(xs), out.width) else { return };
    let Some((y_lo, y_hi)) = pixel_span(min(ys), max(ys), out.height) else { return };

    for py in y_lo..=y_hi {
        for px in x_lo..=x_hi {
            let p = Point2::new(px as f64 + 0.5, py as f64 + 0.5);
            let w = edges.map(|(a, b)| edge(a, b, p));
            let inside = w.iter().zip(owns.iter()).all(|(&w, &own)| w > 0.0 || (w == 0.0 && own));
            if !inside {
                continue;
            }
            let depth = (w[0] * v0.depth + w[1] * v1.depth + w[2] * v2.depth) / area;
            let idx = py * out.width + px;
            if depth < zbuf[idx] {
                zbuf[idx] = depth;
                out.data[idx] = range.shade(depth);
            }
        }
    }
}

/// Z-buffered fill of already-projected triangles into a `width × height` map.
pub fn rasterize_triangles(triangles: &[ScreenTriangle], width: usize, height: usize) -> GrayscaleMap {
    let mut out = GrayscaleMap::zeros(width, height);
    let Some(range) = DepthRange::of(triangles) else { return out };
    let mut zbuf = vec![f64::INFINITY; width * height];
    for tri in triangles {
        fill_triangle(tri, &range, &mut zbuf, &mut out);
    }
    out
}

/// Renders the depth-shaded guidance map of `mesh` as seen by `cam`.
pub fn rasterize(mesh: &HandMesh, cam: &Camera) -> Result<GrayscaleMap> {
    let triangles = project(mesh, cam)?;
    Ok(rasterize_triangles(&triangles, cam.width, cam.height))
}

/// Projects `mesh`, moves every projected vertex by `t`, then rasterizes.
pub fn transform_mesh_2d(mesh: &HandMesh, cam: &Camera, t: &AffineTransform) -> Result<GrayscaleMap> {
    let triangles: Vec<_> = project(mesh, cam)?.iter().map(|tri| tri.transformed(t)).collect();
    Ok(rasterize_triangles(&triangles, cam.width, cam.height))
}

/// Tight rectangles around each 8-connected group of nonzero pixels, in
/// row-major order of their first pixel.
pub fn guidance_components(map: &GrayscaleMap) -> Vec<PixelRect> {
    let (w, h) = (map.width, map.height);
    let mut seen = vec![false; w * h];
    let mut rects = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || map.data[start] == 0.0 {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut rect = PixelRect { x0: start % w, y0: start / w, x1: start % w, y1: start / w };
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            rect = rect.union(&PixelRect { x0: x, y0: y, x1: x, y1: y });
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if !seen[j] && map.data[j] != 0.0 {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        rects.push(rect);
    }
    rects
}

/// Box mask around the guidance: each connected component's box is grown by
/// `pad` and clipped, and the results are unioned into one rectangle.
pub fn mask_from_map(map: &GrayscaleMap, pad: usize) -> Result<BoxMask> {
    let rect = guidance_components(map)
        .iter()
        .map(|r| r.padded(pad, map.width, map.height))
        .reduce(|a, b| a.union(&b))
        .ok_or(Error::EmptyGuidance)?;
    Ok(BoxMask::from_rect(map.width, map.height, rect))
}

/// [`mask_from_map`] with the pad chosen by `rule` from the overall support.
pub fn mask_with_rule(map: &GrayscaleMap, rule: PadRule) -> Result<BoxMask> {
    let support = map.support().ok_or(Error::EmptyGuidance)?;
    mask_from_map(map, rule.pixels_for(&support))
}
