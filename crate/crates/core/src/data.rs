//! Case records, the annotation JSON schema, exam-grouped splitting, label
//! derivation and the synthetic mammogram generator.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{classify_positioning, ImageShape, Laterality, PixelSpacing, Point2, QualityLabel};
use crate::imaging::{native_landmarks, ImageGrid, ImagingError, RawAnnotation};

/// Margin used when standardizing pectoral lines, in native pixels.
pub const PECTORAL_MARGIN: f64 = 10.0;

/// Good/poor counts of the reference VinDr split (train, validation, test).
pub const REFERENCE_SPLIT_COUNTS: [(&str, usize, usize); 3] =
    [("train", 967, 633), ("val", 108, 92), ("test", 123, 77)];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error in record {case_id:?}, field `{field}`: {message}")]
    Schema { case_id: Option<String>, field: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("invalid split ratios {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

impl From<crate::geometry::GeometryError> for DataError {
    fn from(e: crate::geometry::GeometryError) -> Self {
        DataError::Imaging(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub exam_id: String,
    pub laterality: Laterality,
    /// Image path relative to the annotation file.
    pub image: String,
    pub pixel_spacing: PixelSpacing,
    #[serde(flatten)]
    pub annotation: RawAnnotation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_shape: Option<ImageShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_label: Option<QualityLabel>,
}

fn schema(case_id: &Option<String>, field: &str, message: impl Into<String>) -> DataError {
    DataError::Schema { case_id: case_id.clone(), field: field.to_string(), message: message.into() }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, id: &Option<String>, name: &str) -> Result<&'a Value, DataError> {
    let key = name.rsplit('.').next().unwrap_or(name);
    obj.get(key).ok_or_else(|| schema(id, name, "missing"))
}

fn number(v: &Value, id: &Option<String>, name: &str) -> Result<f64, DataError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| schema(id, name, format!("expected a finite number, got {v}")))
}

fn numbers<const N: usize>(v: &Value, id: &Option<String>, name: &str) -> Result<[f64; N], DataError> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == N)
        .ok_or_else(|| schema(id, name, format!("expected an array of {N} numbers")))?;
    let mut out = [0.0; N];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = number(x, id, name)?;
    }
    Ok(out)
}

fn parse_record(v: &Value) -> Result<CaseRecord, DataError> {
    let none = None;
    let obj = v.as_object().ok_or_else(|| schema(&none, "<record>", "expected an object"))?;
    let id = obj.get("case_id").and_then(Value::as_str).map(str::to_owned);
    let text = |name: &str| -> Result<String, DataError> {
        field(obj, &id, name)?
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| schema(&id, name, "expected a string"))
    };
    let case_id = text("case_id")?;
    let exam_id = text("exam_id")?;
    let image = text("image")?;
    let laterality = match text("laterality")?.as_str() {
        "L" => Laterality::Left,
        "R" => Laterality::Right,
        other => return Err(schema(&id, "laterality", format!("expected \"L\" or \"R\", got {other:?}"))),
    };

    let sp = field(obj, &id, "pixel_spacing")?
        .as_object()
        .ok_or_else(|| schema(&id, "pixel_spacing", "expected {sx, sy}"))?;
    let sx = number(field(sp, &id, "pixel_spacing.sx")?, &id, "pixel_spacing.sx")?;
    let sy = number(field(sp, &id, "pixel_spacing.sy")?, &id, "pixel_spacing.sy")?;
    let pixel_spacing =
        PixelSpacing::new(sx, sy).map_err(|e| schema(&id, "pixel_spacing", e.to_string()))?;

    let nipple_bbox: [f64; 4] = numbers(field(obj, &id, "nipple_bbox")?, &id, "nipple_bbox")?;
    if !(nipple_bbox[0] < nipple_bbox[2] && nipple_bbox[1] < nipple_bbox[3]) {
        return Err(schema(&id, "nipple_bbox", "expected x_min < x_max and y_min < y_max"));
    }
    let line = field(obj, &id, "pectoral_line")?
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| schema(&id, "pectoral_line", "expected two points"))?;
    let p1: [f64; 2] = numbers(&line[0], &id, "pectoral_line")?;
    let p2: [f64; 2] = numbers(&line[1], &id, "pectoral_line")?;
    if p1 == p2 {
        return Err(schema(&id, "pectoral_line", "endpoints coincide"));
    }

    let image_shape = match obj.get("image_shape") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            serde_json::from_value::<ImageShape>(v.clone())
                .ok()
                .and_then(|s| ImageShape::new(s.width, s.height).ok())
                .ok_or_else(|| schema(&id, "image_shape", "expected {width, height} >= 2"))?,
        ),
    };
    let derived_label = match obj.get("derived_label") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            serde_json::from_value(v.clone())
                .map_err(|_| schema(&id, "derived_label", "expected \"good\" or \"poor\""))?,
        ),
    };

    Ok(CaseRecord {
        case_id,
        exam_id,
        laterality,
        image,
        pixel_spacing,
        annotation: RawAnnotation { nipple_bbox, pectoral_line: [p1, p2] },
        image_shape,
        derived_label,
    })
}

/// Parses and validates an annotation array.
pub fn parse_annotations(json: &str) -> Result<Vec<CaseRecord>, DataError> {
    let root: Value = serde_json::from_str(json)?;
    let items = root
        .as_array()
        .ok_or_else(|| schema(&None, "<root>", "expected an array of records"))?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let rec = parse_record(item)?;
        if !seen.insert(rec.case_id.clone()) {
            return Err(schema(&Some(rec.case_id), "case_id", "duplicate case_id"));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<CaseRecord>, DataError> {
    parse_annotations(&std::fs::read_to_string(path)?)
}

pub fn save_annotations(path: impl AsRef<Path>, records: &[CaseRecord]) -> Result<(), DataError> {
    std::fs::write(path, serde_json::to_string_pretty(records)?)?;
    Ok(())
}

/// Good/poor label from the annotation alone: standardize the pectoral line on
/// the native image and apply the PNL criterion.
pub fn derive_quality_label(record: &CaseRecord, shape: ImageShape) -> Result<QualityLabel, DataError> {
    let lm = native_landmarks(record, shape, PECTORAL_MARGIN)?;
    Ok(classify_positioning(&lm, shape, record.laterality)?.label)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Exam-grouped random split.
///
/// Exams are shuffled (within strata of their poor-image count when every
/// record carries a derived label) and dealt out so that each split's running
/// exam count never drifts more than one exam from its quota.
pub fn split_dataset(records: &[CaseRecord], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit, DataError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(*r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidRatios(ratios));
    }
    let mut exams: BTreeMap<&str, Vec<&CaseRecord>> = BTreeMap::new();
    for r in records {
        exams.entry(r.exam_id.as_str()).or_default().push(r);
    }
    let stratified = records.iter().all(|r| r.derived_label.is_some());
    let mut strata: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (exam, recs) in &exams {
        let key = if stratified {
            recs.iter().filter(|r| r.derived_label == Some(QualityLabel::Poor)).count()
        } else {
            0
        };
        strata.entry(key).or_default().push(exam);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(exams.len());
    for group in strata.values_mut() {
        group.shuffle(&mut rng);
        order.extend(group.iter().copied());
    }

    let mut counts = [0usize; 3];
    let mut split = DatasetSplit { train: vec![], val: vec![], test: vec![] };
    for (i, exam) in order.iter().enumerate() {
        let k = (0..3)
            .max_by(|&a, &b| {
                let da = ratios[a] * (i + 1) as f64 - counts[a] as f64;
                let db = ratios[b] * (i + 1) as f64 - counts[b] as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        counts[k] += 1;
        let dest = match k {
            0 => &mut split.train,
            1 => &mut split.val,
            _ => &mut split.test,
        };
        dest.extend(exams[exam].iter().map(|r| r.case_id.clone()));
    }
    Ok(split)
}

/// Parameters of the synthetic MLO generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Image height in pixels; width is three quarters of it.
    pub image_size: usize,
    /// Range of the pectoral border's tilt from vertical, degrees.
    pub pectoral_angle_deg: (f64, f64),
    /// Range of the nipple's vertical position as a fraction of the height.
    pub nipple_height: (f64, f64),
    /// Noise standard deviation relative to full scale.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            image_size: 256,
            pectoral_angle_deg: (10.0, 40.0),
            nipple_height: (0.38, 0.78),
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let (a0, a1) = self.pectoral_angle_deg;
        let (n0, n1) = self.nipple_height;
        if self.image_size < 64 {
            return Err(DataError::InvalidSpec(format!("image_size {} < 64", self.image_size)));
        }
        if !(0.0 < a0 && a0 <= a1 && a1 < 90.0) {
            return Err(DataError::InvalidSpec(format!("angle range ({a0}, {a1}) not within (0, 90)")));
        }
        if !(0.2 <= n0 && n0 <= n1 && n1 <= 0.85) {
            return Err(DataError::InvalidSpec(format!("nipple height range ({n0}, {n1}) not within [0.2, 0.85]")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(DataError::InvalidSpec("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> ImageShape {
        ImageShape { width: (self.image_size * 3).div_ceil(4), height: self.image_size }
    }
}

/// Render parameters of one synthetic case, in the left-oriented frame
/// (chest wall at x = 0).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scene {
    cy: f64,
    a: f64,
    b: f64,
    tilt: f64,
    top_x: f64,
    nipple: Point2,
    line_t: (f64, f64),
}

const FULL_SCALE: f64 = 65535.0;

fn case_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut s = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    s = (s ^ (s >> 31)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    ChaCha8Rng::seed_from_u64(s ^ (s >> 29))
}

impl Scene {
    fn sample(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Self {
        let ImageShape { width, height } = spec.shape();
        let (w, h) = (width as f64, height as f64);
        let cy = h * rng.random_range(0.45..0.58);
        let b = h * rng.random_range(0.64..0.80);
        let a = w * rng.random_range(0.55..0.80);
        let (t0, t1) = spec.pectoral_angle_deg;
        let tilt = rng.random_range(t0..=t1).to_radians();
        let top_width = a * (1.0 - (cy / b).powi(2)).sqrt();
        // keep the line clear of the inset corner so it can be standardized
        let min_top = (PECTORAL_MARGIN + 5.0) * (1.0 + tilt.tan());
        let top_x = (w * rng.random_range(0.10..0.30)).min(0.8 * top_width).max(min_top);

        let (n0, n1) = spec.nipple_height;
        let ny = h * rng.random_range(n0..=n1);
        let s = (ny - cy) / b;
        // a few pixels inside the skin line so the crop always contains it
        let nx = a * (1.0 - s * s).sqrt() - 0.04 * h;

        let len = Self::line_length(top_x, tilt, h);
        let line_t = (len * rng.random_range(0.05..0.35), len * rng.random_range(0.60..0.95));
        Scene { cy, a, b, tilt, top_x, nipple: Point2::new(nx, ny), line_t }
    }

    fn dir(&self) -> Point2 {
        Point2::new(-self.tilt.sin(), self.tilt.cos())
    }

    /// Length of the pectoral line inside the image, from where it meets the
    /// top edge to the left or bottom edge.
    fn line_length(top_x: f64, tilt: f64, h: f64) -> f64 {
        (top_x / tilt.sin()).min((h - 1.0) / tilt.cos())
    }

    fn point_at(&self, t: f64) -> Point2 {
        Point2::new(self.top_x, 0.0).add(self.dir().scale(t))
    }

    /// Good iff the nipple projects onto the in-image part of the line.
    fn oracle_label(&self, h: f64) -> QualityLabel {
        let t = self.nipple.sub(Point2::new(self.top_x, 0.0)).dot(self.dir());
        if (0.0..=Self::line_length(self.top_x, self.tilt, h)).contains(&t) {
            QualityLabel::Good
        } else {
            QualityLabel::Poor
        }
    }
}

/// Renders synthetic case `index`. Deterministic in `(spec.seed, index)`.
///
/// Even indices are left views, odd indices right views; consecutive pairs
/// share an exam. Intensities are on a 16-bit scale.
pub fn generate_synthetic_case(spec: &SyntheticSpec, index: usize) -> Result<(ImageGrid, CaseRecord), DataError> {
    spec.validate()?;
    let mut rng = case_rng(spec.seed, index);
    let scene = Scene::sample(spec, &mut rng);
    let shape = spec.shape();
    let (w, h) = (shape.width as f64, shape.height as f64);
    let laterality = if index % 2 == 0 { Laterality::Left } else { Laterality::Right };
    let mirror = |p: Point2| match laterality {
        Laterality::Left => p,
        Laterality::Right => Point2::new(w - 1.0 - p.x, p.y),
    };

    let noise = Normal::new(0.0, spec.noise_sigma.max(1e-12)).expect("valid sigma");
    let tissue = rng.random_range(0.40..0.50);
    let muscle = tissue + rng.random_range(0.20..0.30);
    let blob_sigma = h / 40.0;
    let d = scene.dir();
    let normal = Point2::new(d.y, -d.x);
    let top = Point2::new(scene.top_x, 0.0);

    let mut img = ImageGrid::zeros(shape.width, shape.height);
    for y in 0..shape.height {
        for x in 0..shape.width {
            let q = mirror(Point2::new(x as f64, y as f64));
            let ex = q.x / scene.a;
            let ey = (q.y - scene.cy) / scene.b;
            let r2 = ex * ex + ey * ey;
            let mut v = 0.0;
            if r2 <= 1.0 {
                // tissue thins out towards the skin line
                v = tissue * (0.92 + 0.08 * (1.0 - r2).sqrt());
                if q.sub(top).dot(normal) < 0.0 {
                    v = muscle;
                }
            }
            let dn = q.sub(scene.nipple);
            v += 0.3 * (-(dn.dot(dn)) / (2.0 * blob_sigma * blob_sigma)).exp();
            if spec.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            img.set(x, y, (v.clamp(0.0, 1.0) * FULL_SCALE).round());
        }
    }

    let nipple = mirror(scene.nipple);
    let half = 2.0;
    let p1 = mirror(scene.point_at(scene.line_t.0));
    let p2 = mirror(scene.point_at(scene.line_t.1));
    let case_id = format!("synth-{:04}-{index:05}", spec.seed % 10_000);
    let spacing = 0.7 * 128.0 / h * rng.random_range(0.85..1.15);
    let record = CaseRecord {
        exam_id: format!("synth-{:04}-exam-{:05}", spec.seed % 10_000, index / 2),
        image: format!("images/{case_id}.pgm"),
        case_id,
        laterality,
        pixel_spacing: PixelSpacing::isotropic(spacing)?,
        annotation: RawAnnotation {
            nipple_bbox: [nipple.x - half, nipple.y - half, nipple.x + half, nipple.y + half],
            pectoral_line: [[p1.x, p1.y], [p2.x, p2.y]],
        },
        image_shape: Some(shape),
        derived_label: Some(scene.oracle_label(h)),
    };
    Ok((img, record))
}

/// Writes `count` synthetic cases as PGM images plus `annotations.json`.
pub fn write_synthetic_dataset(
    spec: &SyntheticSpec,
    count: usize,
    dir: impl AsRef<Path>,
) -> Result<Vec<CaseRecord>, DataError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("images"))?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let (img, rec) = generate_synthetic_case(spec, i)?;
        img.save_pgm16(dir.join(&rec.image))?;
        records.push(rec);
    }
    save_annotations(dir.join("annotations.json"), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::extract_landmarks;

    const MINIMAL: &str = r#"[{
        "case_id": "c1", "exam_id": "e1", "laterality": "L", "image": "c1.pgm",
        "pixel_spacing": {"sx": 0.1, "sy": 0.1},
        "nipple_bbox": [10, 10, 20, 20],
        "pectoral_line": [[5, 400], [8, 50]]
    }]"#;

    #[test]
    fn parses_minimal_record() {
        let recs = parse_annotations(MINIMAL).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].laterality, Laterality::Left);
        assert_eq!(recs[0].annotation.nipple_bbox, [10., 10., 20., 20.]);
        assert_eq!(recs[0].derived_label, None);
    }

    #[test]
    fn missing_spacing_names_field() {
        let json = MINIMAL.replace(r#""pixel_spacing": {"sx": 0.1, "sy": 0.1},"#, "");
        match parse_annotations(&json) {
            Err(DataError::Schema { case_id, field, .. }) => {
                assert_eq!(case_id.as_deref(), Some("c1"));
                assert_eq!(field, "pixel_spacing");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let one = MINIMAL.trim().trim_start_matches('[').trim_end_matches(']');
        let json = format!("[{one},{one}]");
        assert!(matches!(parse_annotations(&json), Err(DataError::Schema { field, .. }) if field == "case_id"));
    }

    #[test]
    fn bad_laterality_and_bbox_rejected() {
        let json = MINIMAL.replace(r#""L""#, r#""X""#);
        assert!(matches!(parse_annotations(&json), Err(DataError::Schema { field, .. }) if field == "laterality"));
        let json = MINIMAL.replace("[10, 10, 20, 20]", "[20, 10, 10, 20]");
        assert!(matches!(parse_annotations(&json), Err(DataError::Schema { field, .. }) if field == "nipple_bbox"));
    }

    #[test]
    fn records_round_trip_through_json() {
        let spec = SyntheticSpec { seed: 3, ..Default::default() };
        let recs: Vec<_> = (0..4).map(|i| generate_synthetic_case(&spec, i).unwrap().1).collect();
        let json = serde_json::to_string(&recs).unwrap();
        assert_eq!(parse_annotations(&json).unwrap(), recs);
    }

    fn exam_records(n_exams: usize, per_exam: usize) -> Vec<CaseRecord> {
        let base = parse_annotations(MINIMAL).unwrap().remove(0);
        (0..n_exams * per_exam)
            .map(|i| CaseRecord {
                case_id: format!("c{i}"),
                exam_id: format!("e{}", i / per_exam),
                ..base.clone()
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_grouping() {
        let recs = exam_records(1000, 2);
        let s = split_dataset(&recs, [0.8, 0.1, 0.1], 11).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1600, 200, 200));
        let exam_of = |id: &String| recs.iter().find(|r| &r.case_id == id).unwrap().exam_id.clone();
        let sets: Vec<HashSet<String>> =
            [&s.train, &s.val, &s.test].iter().map(|v| v.iter().map(exam_of).collect()).collect();
        assert!(sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]));
        assert_eq!(s, split_dataset(&recs, [0.8, 0.1, 0.1], 11).unwrap());
        assert_ne!(s, split_dataset(&recs, [0.8, 0.1, 0.1], 12).unwrap());
    }

    #[test]
    fn split_quota_within_one_exam() {
        for n in [1, 7, 33, 101] {
            let recs = exam_records(n, 1);
            let s = split_dataset(&recs, [0.7, 0.2, 0.1], 5).unwrap();
            for (got, r) in [(s.train.len(), 0.7), (s.val.len(), 0.2), (s.test.len(), 0.1)] {
                assert!((got as f64 - r * n as f64).abs() <= 1.0, "n={n} got {got} ratio {r}");
            }
            let mut all: Vec<_> = [s.train, s.val, s.test].concat();
            all.sort();
            let mut ids: Vec<_> = recs.iter().map(|r| r.case_id.clone()).collect();
            ids.sort();
            assert_eq!(all, ids);
        }
        assert!(split_dataset(&exam_records(3, 1), [0.5, 0.2, 0.2], 0).is_err());
    }

    #[test]
    fn synthetic_cases_are_deterministic() {
        let spec = SyntheticSpec { seed: 9, ..Default::default() };
        let (a, ra) = generate_synthetic_case(&spec, 17).unwrap();
        let (b, rb) = generate_synthetic_case(&spec, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let (c, _) = generate_synthetic_case(&spec, 18).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_labels_match_geometry() {
        let spec = SyntheticSpec { seed: 1, ..Default::default() };
        let shape = spec.shape();
        for i in 0..1000 {
            let (_, rec) = generate_synthetic_case(&spec, i).unwrap();
            let lm = extract_landmarks(&rec.annotation).unwrap();
            for p in [lm.nipple, lm.pec1, lm.pec2] {
                assert!(crate::geometry::in_bounds(shape, p), "case {i}: {p:?}");
            }
            let v = classify_positioning(&lm, shape, rec.laterality).unwrap();
            assert_eq!(Some(v.label), rec.derived_label, "case {i}");
            assert_eq!(derive_quality_label(&rec, shape).unwrap(), v.label);
        }
    }

    #[test]
    fn synthetic_prevalence_is_balanced() {
        let spec = SyntheticSpec::default();
        let poor = (0..1000)
            .filter(|&i| generate_synthetic_case(&spec, i).unwrap().1.derived_label == Some(QualityLabel::Poor))
            .count();
        assert!((400..=600).contains(&poor), "poor prevalence {poor}/1000");
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = SyntheticSpec { image_size: 32, ..Default::default() };
        assert!(generate_synthetic_case(&bad, 0).is_err());
        let bad = SyntheticSpec { pectoral_angle_deg: (10.0, 95.0), ..Default::default() };
        assert!(generate_synthetic_case(&bad, 0).is_err());
    }
}
