//! Deterministic preprocessing: landmark extraction, pectoral-line
//! standardization, breast-region cropping, square padding and resizing, with
//! exact bookkeeping of landmark coordinates and pixel spacing.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::CaseRecord;
use crate::geometry::{GeometryError, ImageShape, LandmarkSet, PixelSpacing, Point2};

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("pectoral line does not cross the inset rectangle")]
    NoIntersection,
    #[error("no foreground left after thresholding and opening")]
    EmptyForeground,
    #[error("landmark {name} at ({x:.2}, {y:.2}) lies outside the breast crop")]
    LandmarkOutsideCrop { name: &'static str, x: f64, y: f64 },
    #[error("image must be square for resizing, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("image grid: {0}")]
    InvalidGrid(String),
    #[error("image io: {0}")]
    Io(#[from] std::io::Error),
    #[error("image decode: {0}")]
    Decode(#[from] image::ImageError),
}

/// Row-major grayscale intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(ImagingError::InvalidGrid(format!(
                "{} values for {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ImagingError::InvalidGrid("non-finite intensity".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> Result<ImageShape, GeometryError> {
        ImageShape::new(self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Copy of the `w`×`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> ImageGrid {
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        ImageGrid { width: w, height: h, data }
    }

    /// Intensities rescaled to `[0, 1]` by the image maximum (all-zero stays zero).
    pub fn normalized(&self) -> ImageGrid {
        let hi = self.min_max().1;
        let scale = if hi > 0.0 { 1.0 / hi } else { 0.0 };
        ImageGrid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| (v.max(0.0) * scale).min(1.0)).collect(),
        }
    }

    /// Reads PGM (P5, 8 or 16 bit) or grayscale PNG. Intensities keep their
    /// native integer scale.
    pub fn load(path: impl AsRef<Path>) -> Result<ImageGrid, ImagingError> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<ImageGrid, ImagingError> {
        let img = image::load_from_memory(bytes)?;
        let gray = img.into_luma16();
        let (w, h) = gray.dimensions();
        let data = gray.into_raw().into_iter().map(f64::from).collect();
        ImageGrid::new(w as usize, h as usize, data)
    }

    /// Writes a 16-bit binary PGM; intensities are rounded and clamped to `[0, 65535]`.
    pub fn save_pgm16(&self, path: impl AsRef<Path>) -> Result<(), ImagingError> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        out.reserve(self.data.len() * 2);
        for &v in &self.data {
            let q = v.round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// 8-bit PNG with intensities scaled by the image maximum.
    pub fn encode_png8(&self) -> Result<Vec<u8>, ImagingError> {
        let n = self.normalized();
        let raw: Vec<u8> = n.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .ok_or_else(|| ImagingError::InvalidGrid("png buffer size".into()))?;
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

/// Nipple bounding box plus the drawn pectoral line, in native pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawAnnotation {
    /// `[x_min, y_min, x_max, y_max]`
    pub nipple_bbox: [f64; 4],
    pub pectoral_line: [[f64; 2]; 2],
}

/// Everything needed to map between native and preprocessed coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformLog {
    pub native_shape: ImageShape,
    pub crop_offset: Point2,
    pub crop_shape: ImageShape,
    /// Zero columns appended on the right, zero rows at the bottom.
    pub pad: (usize, usize),
    /// `output_size / padded_size`
    pub scale: f64,
    pub output_size: usize,
    pub native_spacing: PixelSpacing,
    pub effective_spacing: PixelSpacing,
}

impl TransformLog {
    pub fn to_output(&self, p: Point2) -> Point2 {
        p.sub(self.crop_offset).scale(self.scale)
    }

    pub fn to_native(&self, p: Point2) -> Point2 {
        p.scale(1.0 / self.scale).add(self.crop_offset)
    }

    pub fn landmarks_to_native(&self, lm: &LandmarkSet) -> LandmarkSet {
        lm.map(|p| self.to_native(p))
    }
}

/// Tunables for the cropping step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropParams {
    /// Radius of the disk structuring element used for opening.
    pub disk_radius: usize,
    pub connectivity: Connectivity,
}

impl Default for CropParams {
    fn default() -> Self {
        Self { disk_radius: 5, connectivity: Connectivity::Eight }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessParams {
    pub margin: f64,
    pub output_size: usize,
    pub crop: CropParams,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self { margin: 10.0, output_size: 512, crop: CropParams::default() }
    }
}

pub fn extract_landmarks(raw: &RawAnnotation) -> Result<LandmarkSet, ImagingError> {
    let [x0, y0, x1, y1] = raw.nipple_bbox;
    if raw.nipple_bbox.iter().chain(raw.pectoral_line.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(ImagingError::InvalidAnnotation("non-finite coordinate".into()));
    }
    if !(x0 < x1 && y0 < y1) {
        return Err(ImagingError::InvalidAnnotation(format!(
            "nipple bbox [{x0}, {y0}, {x1}, {y1}] is not ordered min < max"
        )));
    }
    let a = Point2::from(raw.pectoral_line[0]);
    let b = Point2::from(raw.pectoral_line[1]);
    if a == b {
        return Err(ImagingError::InvalidAnnotation("pectoral endpoints coincide".into()));
    }
    Ok(LandmarkSet::new(Point2::new((x0 + x1) / 2.0, (y0 + y1) / 2.0), a, b))
}

/// Slides both pectoral endpoints along their line to where it meets the
/// rectangle inset `margin` pixels from the image border.
pub fn standardize_pectoral_line(
    lm: &LandmarkSet,
    shape: ImageShape,
    margin: f64,
) -> Result<LandmarkSet, ImagingError> {
    let (p, q) = (lm.pec1, lm.pec2);
    let d = q.sub(p);
    if !(d.norm() > crate::geometry::DEGENERATE_EPS) {
        return Err(GeometryError::DegenerateLine(p.x, p.y, q.x, q.y).into());
    }
    let lo = margin;
    let hi = [(shape.width - 1) as f64 - margin, (shape.height - 1) as f64 - margin];
    if !(margin >= 0.0 && hi[0] > lo && hi[1] > lo) {
        return Err(ImagingError::InvalidAnnotation(format!(
            "margin {margin} too large for {}x{}",
            shape.width, shape.height
        )));
    }

    // Parametric clip of p + t d against each slab; remember which bound
    // produced each end so it can be snapped exactly.
    let (mut t_min, mut t_max) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut snap_min: Option<(usize, f64)> = None;
    let mut snap_max: Option<(usize, f64)> = None;
    for axis in 0..2 {
        let (o, v) = if axis == 0 { (p.x, d.x) } else { (p.y, d.y) };
        if v == 0.0 {
            if o < lo || o > hi[axis] {
                return Err(ImagingError::NoIntersection);
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo - o) / v, (hi[axis] - o) / v);
        let (mut ba, mut bb) = (lo, hi[axis]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
            std::mem::swap(&mut ba, &mut bb);
        }
        if ta > t_min {
            t_min = ta;
            snap_min = Some((axis, ba));
        }
        if tb < t_max {
            t_max = tb;
            snap_max = Some((axis, bb));
        }
    }
    if t_min > t_max {
        return Err(ImagingError::NoIntersection);
    }
    let place = |t: f64, snap: Option<(usize, f64)>| {
        let mut r = p.add(d.scale(t));
        match snap {
            Some((0, v)) => r.x = v,
            Some((_, v)) => r.y = v,
            None => {}
        }
        r
    };
    Ok(LandmarkSet::new(lm.nipple, place(t_min, snap_min), place(t_max, snap_max)))
}

/// Offsets `(dx, dy)` of a digital disk.
fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                v.push((dx, dy));
            }
        }
    }
    v
}

/// Binary erosion (pixels outside the image count as background) followed by
/// dilation with the same disk.
pub fn binary_opening(mask: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let offs = disk_offsets(radius);
    let (w, h) = (width as isize, height as isize);
    let at = |m: &[bool], x: isize, y: isize| x >= 0 && y >= 0 && x < w && y < h && m[(y * w + x) as usize];
    let mut eroded = vec![false; mask.len()];
    for y in 0..h {
        for x in 0..w {
            if mask[(y * w + x) as usize] {
                eroded[(y * w + x) as usize] = offs.iter().all(|&(dx, dy)| at(mask, x + dx, y + dy));
            }
        }
    }
    let mut out = vec![false; mask.len()];
    for y in 0..h {
        for x in 0..w {
            if eroded[(y * w + x) as usize] {
                for &(dx, dy) in &offs {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx >= 0 && yy >= 0 && xx < w && yy < h {
                        out[(yy * w + xx) as usize] = true;
                    }
                }
            }
        }
    }
    out
}

/// Axis-aligned bounds of one connected component (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub area: usize,
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

/// Labels foreground components in scan order.
pub fn connected_components(mask: &[bool], width: usize, height: usize, conn: Connectivity) -> Vec<Component> {
    let neigh: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    };
    let mut seen = vec![false; mask.len()];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut c = Component {
            area: 0,
            x_min: usize::MAX,
            y_min: usize::MAX,
            x_max: 0,
            y_max: 0,
        };
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % width, i / width);
            c.area += 1;
            c.x_min = c.x_min.min(x);
            c.x_max = c.x_max.max(x);
            c.y_min = c.y_min.min(y);
            c.y_max = c.y_max.max(y);
            for &(dx, dy) in neigh {
                let (xx, yy) = (x as isize + dx, y as isize + dy);
                if xx < 0 || yy < 0 || xx >= width as isize || yy >= height as isize {
                    continue;
                }
                let j = yy as usize * width + xx as usize;
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        comps.push(c);
    }
    comps
}

/// Crops to the bounding box of the largest bright region.
///
/// Threshold at the image mean, open with a disk, label components, keep the
/// largest by area (earliest in scan order on ties).
pub fn crop_breast_region(img: &ImageGrid, params: &CropParams) -> Result<(ImageGrid, Point2), ImagingError> {
    let mean = img.mean();
    let mask: Vec<bool> = img.data.iter().map(|&v| v > mean).collect();
    let opened = binary_opening(&mask, img.width, img.height, params.disk_radius);
    let best = connected_components(&opened, img.width, img.height, params.connectivity)
        .into_iter()
        .fold(None::<Component>, |acc, c| match acc {
            Some(a) if a.area >= c.area => Some(a),
            _ => Some(c),
        })
        .ok_or(ImagingError::EmptyForeground)?;
    let (w, h) = (best.x_max - best.x_min + 1, best.y_max - best.y_min + 1);
    Ok((
        img.crop(best.x_min, best.y_min, w, h),
        Point2::new(best.x_min as f64, best.y_min as f64),
    ))
}

/// Zero-pads on the right and bottom to a square of side `max(width, height)`.
pub fn pad_square(img: &ImageGrid) -> (ImageGrid, (usize, usize)) {
    let n = img.width.max(img.height);
    let pads = (n - img.width, n - img.height);
    if pads == (0, 0) {
        return (img.clone(), pads);
    }
    let mut out = ImageGrid::zeros(n, n);
    for y in 0..img.height {
        out.data[y * n..y * n + img.width].copy_from_slice(&img.data[y * img.width..(y + 1) * img.width]);
    }
    (out, pads)
}

/// Bilinear resampling of a square image to `out`×`out`.
///
/// Output pixel `i` samples source position `i / s` with `s = out / n`, the
/// same map applied to landmark coordinates.
pub fn resize_bilinear(img: &ImageGrid, out: usize) -> Result<ImageGrid, ImagingError> {
    if img.width != img.height {
        return Err(ImagingError::NotSquare(img.width, img.height));
    }
    let n = img.width;
    if n == out {
        return Ok(img.clone());
    }
    let s = out as f64 / n as f64;
    let last = (n - 1) as f64;
    // per-axis sample positions are shared by rows and columns
    let taps: Vec<(usize, usize, f64)> = (0..out)
        .map(|i| {
            let u = (i as f64 / s).clamp(0.0, last);
            let i0 = u.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, u - i0 as f64)
        })
        .collect();
    let mut res = ImageGrid::zeros(out, out);
    for (oy, &(y0, y1, fy)) in taps.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in taps.iter().enumerate() {
            let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
            let bot = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
            res.data[oy * out + ox] = top * (1.0 - fy) + bot * fy;
        }
    }
    Ok(res)
}

pub fn resize_with_landmarks(
    img: &ImageGrid,
    lm: &LandmarkSet,
    spacing: PixelSpacing,
    out: usize,
) -> Result<(ImageGrid, LandmarkSet, PixelSpacing), ImagingError> {
    let resized = resize_bilinear(img, out)?;
    let s = out as f64 / img.width as f64;
    let spacing = PixelSpacing::new(spacing.sx / s, spacing.sy / s)?;
    Ok((resized, lm.map(|p| p.scale(s)), spacing))
}

/// Image-only half of the pipeline: crop, pad and resize.
pub fn preprocess_image(
    img: &ImageGrid,
    spacing: PixelSpacing,
    params: &PreprocessParams,
) -> Result<(ImageGrid, TransformLog), ImagingError> {
    let native_shape = img.shape()?;
    let (cropped, crop_offset) = crop_breast_region(img, &params.crop)?;
    let crop_shape = ImageShape { width: cropped.width, height: cropped.height };
    let (padded, pad) = pad_square(&cropped);
    let scale = params.output_size as f64 / padded.width as f64;
    let resized = resize_bilinear(&padded, params.output_size)?;
    let log = TransformLog {
        native_shape,
        crop_offset,
        crop_shape,
        pad,
        scale,
        output_size: params.output_size,
        native_spacing: spacing,
        effective_spacing: PixelSpacing::new(spacing.sx / scale, spacing.sy / scale)?,
    };
    Ok((resized, log))
}

/// Native-space landmarks for a record: bbox centre plus the standardized
/// pectoral line.
pub fn native_landmarks(
    record: &CaseRecord,
    shape: ImageShape,
    margin: f64,
) -> Result<LandmarkSet, ImagingError> {
    let lm = extract_landmarks(&record.annotation)?;
    standardize_pectoral_line(&lm, shape, margin)
}

/// Full pipeline for one annotated case. Returns the network-ready image,
/// landmarks in its coordinates and the transform log.
pub fn preprocess_case(
    record: &CaseRecord,
    img: &ImageGrid,
    params: &PreprocessParams,
) -> Result<(ImageGrid, LandmarkSet, TransformLog), ImagingError> {
    let shape = img.shape()?;
    let native = native_landmarks(record, shape, params.margin)?;
    let (out, log) = preprocess_image(img, record.pixel_spacing, params)?;
    let w = (log.crop_shape.width - 1) as f64;
    let h = (log.crop_shape.height - 1) as f64;
    for (name, p) in [("nipple", native.nipple), ("pec1", native.pec1), ("pec2", native.pec2)] {
        let c = p.sub(log.crop_offset);
        if c.x < 0.0 || c.y < 0.0 || c.x > w || c.y > h {
            return Err(ImagingError::LandmarkOutsideCrop { name, x: p.x, y: p.y });
        }
    }
    Ok((out, native.map(|p| log.to_output(p)), log))
}
