//! Closed-form posterior nipple line (PNL) geometry.
//!
//! The positioning criterion: drop a perpendicular from the nipple onto the
//! (infinite) pectoral muscle line. If the foot of that perpendicular lies
//! inside the image, the muscle was captured deep enough and the view is
//! rated good; otherwise poor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum endpoint separation, in pixels, for a line to be usable.
pub const DEGENERATE_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum GeometryError {
    #[error("degenerate line: endpoints ({0}, {1}) and ({2}, {3}) coincide")]
    DegenerateLine(f64, f64, f64, f64),
    #[error("invalid image shape {0}x{1}: both sides must be at least 2 px")]
    InvalidShape(usize, usize),
    #[error("invalid pixel spacing ({0}, {1}): must be positive and finite")]
    InvalidSpacing(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Point2) -> f64 {
        self.sub(o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

/// Image size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub width: usize,
    pub height: usize,
}

impl ImageShape {
    pub fn new(width: usize, height: usize) -> Result<Self, GeometryError> {
        if width < 2 || height < 2 {
            return Err(GeometryError::InvalidShape(width, height));
        }
        Ok(Self { width, height })
    }
}

/// Millimetres per pixel along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelSpacing {
    pub sx: f64,
    pub sy: f64,
}

impl PixelSpacing {
    pub fn new(sx: f64, sy: f64) -> Result<Self, GeometryError> {
        if !(sx > 0.0 && sy > 0.0 && sx.is_finite() && sy.is_finite()) {
            return Err(GeometryError::InvalidSpacing(sx, sy));
        }
        Ok(Self { sx, sy })
    }

    pub fn isotropic(s: f64) -> Result<Self, GeometryError> {
        Self::new(s, s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Laterality {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityLabel {
    Good,
    Poor,
}

impl QualityLabel {
    pub fn is_poor(self) -> bool {
        self == QualityLabel::Poor
    }
}

/// Nipple plus the two pectoral-line endpoints.
///
/// `pec1` is the lower endpoint (larger y), `pec2` the upper one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub nipple: Point2,
    pub pec1: Point2,
    pub pec2: Point2,
}

impl LandmarkSet {
    /// Builds a landmark set, ordering the pectoral endpoints by y.
    pub fn new(nipple: Point2, a: Point2, b: Point2) -> Self {
        let (pec1, pec2) = order_endpoints(a, b);
        Self { nipple, pec1, pec2 }
    }

    /// Flat `[nx, ny, pec1x, pec1y, pec2x, pec2y]` layout used by the loss
    /// and the network head.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.nipple.x,
            self.nipple.y,
            self.pec1.x,
            self.pec1.y,
            self.pec2.x,
            self.pec2.y,
        ]
    }

    /// Inverse of [`LandmarkSet::to_array`]. Endpoint order is re-canonicalized.
    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(
            Point2::new(v[0], v[1]),
            Point2::new(v[2], v[3]),
            Point2::new(v[4], v[5]),
        )
    }

    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Self {
        Self::new(f(self.nipple), f(self.pec1), f(self.pec2))
    }

    pub fn is_finite(&self) -> bool {
        self.nipple.is_finite() && self.pec1.is_finite() && self.pec2.is_finite()
    }
}

/// Lower endpoint (larger y) first; ties go to the smaller x.
pub fn order_endpoints(a: Point2, b: Point2) -> (Point2, Point2) {
    if a.y > b.y || (a.y == b.y && a.x <= b.x) {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityVerdict {
    pub foot: Point2,
    pub in_bounds: bool,
    pub label: QualityLabel,
    pub angle_deg: f64,
}

fn check_line(p1: Point2, p2: Point2) -> Result<Point2, GeometryError> {
    let d = p2.sub(p1);
    if !(d.norm() > DEGENERATE_EPS) {
        return Err(GeometryError::DegenerateLine(p1.x, p1.y, p2.x, p2.y));
    }
    Ok(d)
}

/// Foot of the perpendicular dropped from `nipple` onto the infinite line
/// through `p1` and `p2`, by vector projection.
pub fn perpendicular_foot(p1: Point2, p2: Point2, nipple: Point2) -> Result<Point2, GeometryError> {
    let d = check_line(p1, p2)?;
    let t = nipple.sub(p1).dot(d) / d.dot(d);
    Ok(p1.add(d.scale(t)))
}

/// Inclusive pixel-index bounds: `0 <= x <= width-1`, `0 <= y <= height-1`.
pub fn in_bounds(shape: ImageShape, p: Point2) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x <= (shape.width - 1) as f64 && p.y <= (shape.height - 1) as f64
}

pub fn classify_positioning(
    landmarks: &LandmarkSet,
    shape: ImageShape,
    laterality: Laterality,
) -> Result<QualityVerdict, GeometryError> {
    let foot = perpendicular_foot(landmarks.pec1, landmarks.pec2, landmarks.nipple)?;
    let inside = in_bounds(shape, foot);
    Ok(QualityVerdict {
        foot,
        in_bounds: inside,
        label: if inside { QualityLabel::Good } else { QualityLabel::Poor },
        angle_deg: angle_from_vertical(landmarks.pec1, landmarks.pec2, laterality)?,
    })
}

/// Angle of the line against the image vertical, in `[0, 180)` degrees.
///
/// The direction is taken pointing down the image; for right-side views the
/// x component is mirrored so both sides share one canonical orientation.
pub fn angle_from_vertical(p1: Point2, p2: Point2, laterality: Laterality) -> Result<f64, GeometryError> {
    let mut d = check_line(p1, p2)?;
    if d.y < 0.0 || (d.y == 0.0 && d.x < 0.0) {
        d = d.scale(-1.0);
    }
    if laterality == Laterality::Right {
        d.x = -d.x;
    }
    let theta = d.x.atan2(d.y).to_degrees().rem_euclid(180.0);
    // rem_euclid can round a tiny negative angle up to exactly 180
    Ok(if theta >= 180.0 { 0.0 } else { theta })
}

/// Undirected angular difference between two lines, folded into `[0, 90]`.
pub fn angular_error(
    pred: (Point2, Point2),
    orig: (Point2, Point2),
    laterality: Laterality,
) -> Result<f64, GeometryError> {
    let a = angle_from_vertical(pred.0, pred.1, laterality)?;
    let b = angle_from_vertical(orig.0, orig.1, laterality)?;
    let e = (a - b).abs();
    Ok(e.min(180.0 - e))
}

/// Physical distance in millimetres with per-axis spacing.
pub fn mm_distance(a: Point2, b: Point2, spacing: PixelSpacing) -> f64 {
    ((a.x - b.x) * spacing.sx).hypot((a.y - b.y) * spacing.sy)
}
