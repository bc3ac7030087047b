//! Homogeneous 2D affine transforms and bounding-box algebra.
//!
//! Coordinates follow the raster convention: origin at the top-left corner,
//! `x` to the right, `y` downward. A positive rotation angle turns the `+x`
//! axis toward `+y`, which appears clockwise on screen.
//!
//! The pose-transfer chain scales a reference pose, shifts it so the wrists
//! coincide, and rotates it about the wrist so the wrist-to-anchor directions
//! agree:
//!
//! ```text
//! A = T(c) · R(θ) · T(-c) · T(t) · S(s)
//! ```

use std::f64::consts::PI;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default minimum wrist-to-anchor distance, in pixels.
pub const DEFAULT_POSE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// A 3×3 homogeneous 2D transform whose last row is exactly `(0, 0, 1)`.
///
/// Only the top two rows are stored; the last row is implied, so it cannot
/// drift under composition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    rows: [[f64; 3]; 2],
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform { rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] };

    fn from_rows(rows: [[f64; 3]; 2]) -> Result<Self> {
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("transform entries must be finite".into()));
        }
        let t = Self { rows };
        if t.determinant() == 0.0 {
            return Err(Error::InvalidParameter("transform is singular".into()));
        }
        Ok(t)
    }

    /// The full 3×3 matrix, row major.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [self.rows[0], self.rows[1], [0.0, 0.0, 1.0]]
    }

    /// Determinant of the upper-left 2×2 block.
    pub fn determinant(&self) -> f64 {
        let [[a, b, _], [c, d, _]] = self.rows;
        a * d - b * c
    }

    /// `self · other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &AffineTransform) -> AffineTransform {
        let a = &self.rows;
        let b = &other.rows;
        let mut rows = [[0.0; 3]; 2];
        for (i, row) in rows.iter_mut().enumerate() {
            row[0] = a[i][0] * b[0][0] + a[i][1] * b[1][0];
            row[1] = a[i][0] * b[0][1] + a[i][1] * b[1][1];
            row[2] = a[i][0] * b[0][2] + a[i][1] * b[1][2] + a[i][2];
        }
        AffineTransform { rows }
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        let [[a, b, tx], [c, d, ty]] = self.rows;
        Point2 { x: a * p.x + b * p.y + tx, y: c * p.x + d * p.y + ty }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

impl Mul for AffineTransform {
    type Output = AffineTransform;

    fn mul(self, rhs: AffineTransform) -> AffineTransform {
        self.compose(&rhs)
    }
}

/// Uniform scale about the origin.
pub fn scale_matrix(s: f64) -> Result<AffineTransform> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::InvalidParameter(format!("scale must be positive and finite, got {s}")));
    }
    AffineTransform::from_rows([[s, 0.0, 0.0], [0.0, s, 0.0]])
}

pub fn translation_matrix(tx: f64, ty: f64) -> Result<AffineTransform> {
    AffineTransform::from_rows([[1.0, 0.0, tx], [0.0, 1.0, ty]])
}

/// Rotation about the origin by `theta` radians.
pub fn rotation_matrix(theta: f64) -> Result<AffineTransform> {
    if !theta.is_finite() {
        return Err(Error::InvalidParameter(format!("rotation angle must be finite, got {theta}")));
    }
    let (sin, cos) = theta.sin_cos();
    AffineTransform::from_rows([[cos, -sin, 0.0], [sin, cos, 0.0]])
}

/// `T(center) · R(theta) · T(-center)`.
pub fn rotation_about(center: Point2, theta: f64) -> Result<AffineTransform> {
    let to_origin = translation_matrix(-center.x, -center.y)?;
    let back = translation_matrix(center.x, center.y)?;
    Ok(back * rotation_matrix(theta)? * to_origin)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    } else if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// Two-keypoint hand pose: the wrist and one other keypoint (pinky side by
/// default, though any second keypoint works).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HandPose2D {
    wrist: Point2,
    anchor: Point2,
}

impl HandPose2D {
    pub fn new(wrist: Point2, anchor: Point2) -> Result<Self> {
        Self::with_tolerance(wrist, anchor, DEFAULT_POSE_TOLERANCE)
    }

    pub fn with_tolerance(wrist: Point2, anchor: Point2, tolerance: f64) -> Result<Self> {
        if !wrist.is_finite() || !anchor.is_finite() {
            return Err(Error::InvalidParameter("pose keypoints must be finite".into()));
        }
        let distance = wrist.distance(&anchor);
        if distance <= tolerance {
            return Err(Error::DegeneratePose { distance, tolerance });
        }
        Ok(Self { wrist, anchor })
    }

    pub fn wrist(&self) -> Point2 {
        self.wrist
    }

    pub fn anchor(&self) -> Point2 {
        self.anchor
    }

    pub fn span(&self) -> f64 {
        self.wrist.distance(&self.anchor)
    }

    /// Direction of the wrist-to-anchor vector, in `(-π, π]`.
    pub fn heading(&self) -> f64 {
        (self.anchor.y - self.wrist.y).atan2(self.anchor.x - self.wrist.x)
    }

    pub fn transformed(&self, t: &AffineTransform) -> Result<Self> {
        Self::new(t.apply(self.wrist), t.apply(self.anchor))
    }
}

impl<'de> Deserialize<'de> for HandPose2D {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            wrist: Point2,
            anchor: Point2,
        }
        let raw = Raw::deserialize(deserializer)?;
        HandPose2D::new(raw.wrist, raw.anchor).map_err(serde::de::Error::custom)
    }
}

/// Parameters of a pose alignment, as recovered by [`alignment_params`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentParams {
    pub scale: f64,
    pub translation: Point2,
    pub theta: f64,
    pub center: Point2,
}

impl AlignmentParams {
    pub fn transform(&self) -> Result<AffineTransform> {
        let rotate = rotation_about(self.center, self.theta)?;
        let shift = translation_matrix(self.translation.x, self.translation.y)?;
        Ok(rotate * shift * scale_matrix(self.scale)?)
    }
}

/// Scale, shift and rotation that carry `src` onto `dst`.
///
/// The scale is the ratio of the `dst` span to the `src` span, the shift
/// lands the scaled `src` wrist on the `dst` wrist, and the rotation about
/// the `dst` wrist aligns the two headings.
pub fn alignment_params(src: &HandPose2D, dst: &HandPose2D) -> AlignmentParams {
    let scale = dst.span() / src.span();
    let translation = Point2::new(dst.wrist.x - scale * src.wrist.x, dst.wrist.y - scale * src.wrist.y);
    AlignmentParams { scale, translation, theta: wrap_angle(dst.heading() - src.heading()), center: dst.wrist }
}

/// Similarity transform mapping `src`'s wrist and anchor onto `dst`'s.
pub fn compute_alignment(src: &HandPose2D, dst: &HandPose2D) -> Result<AffineTransform> {
    alignment_params(src, dst).transform()
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min > x_max || y_min > y_max {
            return Err(Error::InvalidParameter(format!("invalid box [({x_min}, {y_min}), ({x_max}, {y_max})]")));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn union(&self, other: &BBox) -> BBox {
        union_bbox(self, other)
    }

    pub fn padded(&self, pad: f64) -> BBox {
        BBox { x_min: self.x_min - pad, y_min: self.y_min - pad, x_max: self.x_max + pad, y_max: self.y_max + pad }
    }
}

/// Smallest box containing both inputs.
pub fn union_bbox(a: &BBox, b: &BBox) -> BBox {
    BBox {
        x_min: a.x_min.min(b.x_min),
        y_min: a.y_min.min(b.y_min),
        x_max: a.x_max.max(b.x_max),
        y_max: a.y_max.max(b.y_max),
    }
}

/// Bounding box of `points`, grown by `pad` on every side. Clipping to the
/// image is left to the caller.
pub fn bbox_of_points(points: &[Point2], pad: f64) -> Result<BBox> {
    let first = points.first().ok_or(Error::EmptyInput("bbox of zero points"))?;
    if !(pad >= 0.0 && pad.is_finite()) {
        return Err(Error::InvalidParameter(format!("pad must be non-negative, got {pad}")));
    }
    let init = BBox { x_min: first.x, y_min: first.y, x_max: first.x, y_max: first.y };
    let tight = points.iter().fold(init, |b, p| BBox {
        x_min: b.x_min.min(p.x),
        y_min: b.y_min.min(p.y),
        x_max: b.x_max.max(p.x),
        y_max: b.y_max.max(p.y),
    });
    Ok(tight.padded(pad))
}
