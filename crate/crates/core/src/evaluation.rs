//! Evaluation protocol: per-landmark millimetre errors, the PNL foot ("Perp")
//! error, angular error of the pectoral line and good/poor confusion metrics
//! with poor positioning as the positive class.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{derive_quality_label, CaseRecord, DataError};
use crate::geometry::{
    angular_error, classify_positioning, mm_distance, perpendicular_foot, GeometryError, Laterality, LandmarkSet,
    PixelSpacing, QualityLabel, QualityVerdict,
};
use crate::imaging::{preprocess_case, preprocess_image, ImageGrid, ImagingError, PreprocessParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} class is empty; metric undefined")]
    EmptyClass(&'static str),
    #[error("no samples")]
    EmptyInput,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("predictor failed: {0}")]
    Predictor(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp_bad: usize,
    pub fn_bad: usize,
    pub tn_good: usize,
    pub fp_good: usize,
}

impl ConfusionCounts {
    pub fn new(tp_bad: usize, fn_bad: usize, tn_good: usize, fp_good: usize) -> Self {
        Self { tp_bad, fn_bad, tn_good, fp_good }
    }

    pub fn record(&mut self, predicted: QualityLabel, truth: QualityLabel) {
        match (truth, predicted) {
            (QualityLabel::Poor, QualityLabel::Poor) => self.tp_bad += 1,
            (QualityLabel::Poor, QualityLabel::Good) => self.fn_bad += 1,
            (QualityLabel::Good, QualityLabel::Good) => self.tn_good += 1,
            (QualityLabel::Good, QualityLabel::Poor) => self.fp_good += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp_bad + self.fn_bad + self.tn_good + self.fp_good
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

pub fn confusion_metrics(c: &ConfusionCounts) -> Result<ConfusionMetrics, EvalError> {
    let bad = c.tp_bad + c.fn_bad;
    let good = c.tn_good + c.fp_good;
    if bad == 0 {
        return Err(EvalError::EmptyClass("poor"));
    }
    if good == 0 {
        return Err(EvalError::EmptyClass("good"));
    }
    Ok(ConfusionMetrics {
        accuracy: (c.tp_bad + c.tn_good) as f64 / c.total() as f64,
        sensitivity: c.tp_bad as f64 / bad as f64,
        specificity: c.tn_good as f64 / good as f64,
    })
}

/// Errors of one predicted landmark set against the truth: millimetres for
/// points, degrees for the angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkErrors {
    pub perp: f64,
    pub pec1: f64,
    pub pec2: f64,
    pub nipple: f64,
    pub angular: f64,
}

/// Both sets must be in the same pixel frame. The Perp error compares each
/// set's own PNL foot.
pub fn landmark_errors(
    pred: &LandmarkSet,
    truth: &LandmarkSet,
    spacing: PixelSpacing,
    laterality: Laterality,
) -> Result<LandmarkErrors, EvalError> {
    let pred = LandmarkSet::new(pred.nipple, pred.pec1, pred.pec2);
    let truth = LandmarkSet::new(truth.nipple, truth.pec1, truth.pec2);
    let foot_p = perpendicular_foot(pred.pec1, pred.pec2, pred.nipple)?;
    let foot_t = perpendicular_foot(truth.pec1, truth.pec2, truth.nipple)?;
    Ok(LandmarkErrors {
        perp: mm_distance(foot_p, foot_t, spacing),
        pec1: mm_distance(pred.pec1, truth.pec1, spacing),
        pec2: mm_distance(pred.pec2, truth.pec2, spacing),
        nipple: mm_distance(pred.nipple, truth.nipple, spacing),
        angular: angular_error((pred.pec1, pred.pec2), (truth.pec1, truth.pec2), laterality)?,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum StdConvention {
    /// Divide by N.
    #[default]
    Population,
    /// Divide by N - 1.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

pub fn error_stats(samples: &[f64]) -> Result<ErrorStats, EvalError> {
    error_stats_with(samples, StdConvention::Population)
}

pub fn error_stats_with(samples: &[f64], conv: StdConvention) -> Result<ErrorStats, EvalError> {
    let n = samples.len();
    if n == 0 {
        return Err(EvalError::EmptyInput);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    let denom = match conv {
        StdConvention::Population => n as f64,
        StdConvention::Sample if n > 1 => (n - 1) as f64,
        StdConvention::Sample => 1.0,
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(ErrorStats { mean, std: (ss / denom).sqrt(), median })
}

/// Anything that maps preprocessed images to landmarks in the same frame.
pub trait LandmarkPredictor {
    fn predict(&self, images: &[ImageGrid]) -> Result<Vec<LandmarkSet>, EvalError>;
}

/// Per-case outcome in native coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case_id: String,
    pub truth_label: QualityLabel,
    pub predicted_label: QualityLabel,
    pub errors: LandmarkErrors,
    pub predicted: LandmarkSet,
}

/// One evaluation pass of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub cases: Vec<CaseOutcome>,
    pub counts: ConfusionCounts,
}

impl RunResult {
    pub fn metrics(&self) -> Result<ConfusionMetrics, EvalError> {
        confusion_metrics(&self.counts)
    }

    pub fn stats(&self, pick: impl Fn(&LandmarkErrors) -> f64) -> Result<ErrorStats, EvalError> {
        error_stats(&self.cases.iter().map(|c| pick(&c.errors)).collect::<Vec<_>>())
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["case_id", "truth", "predicted", "perp_mm", "pec1_mm", "pec2_mm", "nipple_mm", "angular_deg"])?;
        for c in &self.cases {
            let e = &c.errors;
            w.write_record([
                c.case_id.clone(),
                label_str(c.truth_label).into(),
                label_str(c.predicted_label).into(),
                e.perp.to_string(),
                e.pec1.to_string(),
                e.pec2.to_string(),
                e.nipple.to_string(),
                e.angular.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn label_str(l: QualityLabel) -> &'static str {
    match l {
        QualityLabel::Good => "good",
        QualityLabel::Poor => "poor",
    }
}

/// A case ready for evaluation: record plus its native image.
pub struct EvalCase<'a> {
    pub record: &'a CaseRecord,
    pub image: &'a ImageGrid,
}

/// Runs the predictor on preprocessed cases, maps predictions back to native
/// pixels and scores landmarks and verdicts.
pub fn evaluate_run<P: LandmarkPredictor + ?Sized>(
    predictor: &P,
    cases: &[EvalCase<'_>],
    params: &PreprocessParams,
) -> Result<RunResult, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut inputs = Vec::with_capacity(cases.len());
    let mut meta = Vec::with_capacity(cases.len());
    for c in cases {
        let (img, lm, log) = preprocess_case(c.record, c.image, params)?;
        inputs.push(img);
        meta.push((lm, log));
    }
    let preds = predictor.predict(&inputs)?;
    if preds.len() != cases.len() {
        return Err(EvalError::Predictor(format!("{} predictions for {} cases", preds.len(), cases.len())));
    }

    let mut counts = ConfusionCounts::default();
    let mut outcomes = Vec::with_capacity(cases.len());
    for ((c, (lm, log)), pred) in cases.iter().zip(&meta).zip(preds) {
        let shape = log.native_shape;
        let truth = log.landmarks_to_native(lm);
        let pred_native = log.landmarks_to_native(&pred);
        let truth_label = match c.record.derived_label {
            Some(l) => l,
            None => derive_quality_label(c.record, shape)?,
        };
        let predicted_label = classify_positioning(&pred_native, shape, c.record.laterality)?.label;
        counts.record(predicted_label, truth_label);
        outcomes.push(CaseOutcome {
            case_id: c.record.case_id.clone(),
            truth_label,
            predicted_label,
            errors: landmark_errors(&pred_native, &truth, log.native_spacing, c.record.laterality)?,
            predicted: pred_native,
        });
    }
    Ok(RunResult { cases: outcomes, counts })
}

/// Landmarks and verdict for one unannotated image, in native pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePrediction {
    pub landmarks: LandmarkSet,
    pub verdict: QualityVerdict,
}

/// Preprocesses a raw image, runs the predictor and classifies the result.
pub fn predict_image<P: LandmarkPredictor + ?Sized>(
    predictor: &P,
    image: &ImageGrid,
    spacing: PixelSpacing,
    laterality: Laterality,
    params: &PreprocessParams,
) -> Result<ImagePrediction, EvalError> {
    let (input, log) = preprocess_image(image, spacing, params)?;
    let pred = predictor.predict(std::slice::from_ref(&input))?;
    let [lm] = pred.as_slice() else {
        return Err(EvalError::Predictor(format!("{} predictions for one image", pred.len())));
    };
    let landmarks = log.landmarks_to_native(lm);
    let verdict = classify_positioning(&landmarks, log.native_shape, laterality)?;
    Ok(ImagePrediction { landmarks, verdict })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self, EvalError> {
        let s = error_stats(values)?;
        Ok(Self { mean: s.mean, std: s.std })
    }
}

/// Landmark statistics in the Table-2 column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkStats {
    pub perp: ErrorStats,
    pub pec1: ErrorStats,
    pub pec2: ErrorStats,
    pub nipple: ErrorStats,
    pub angular: ErrorStats,
}

impl LandmarkStats {
    pub fn as_array(&self) -> [ErrorStats; 5] {
        [self.perp, self.pec1, self.pec2, self.nipple, self.angular]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub runs: usize,
    /// Per-run statistics averaged over runs.
    pub landmarks: LandmarkStats,
    pub accuracy: MeanStd,
    pub sensitivity: MeanStd,
    pub specificity: MeanStd,
}

fn run_stats(r: &RunResult) -> Result<LandmarkStats, EvalError> {
    Ok(LandmarkStats {
        perp: r.stats(|e| e.perp)?,
        pec1: r.stats(|e| e.pec1)?,
        pec2: r.stats(|e| e.pec2)?,
        nipple: r.stats(|e| e.nipple)?,
        angular: r.stats(|e| e.angular)?,
    })
}

/// Folds one or more runs of the same model into a report.
pub fn aggregate_runs(model: &str, runs: &[RunResult]) -> Result<EvalReport, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let stats = runs.iter().map(run_stats).collect::<Result<Vec<_>, _>>()?;
    let metrics = runs.iter().map(RunResult::metrics).collect::<Result<Vec<_>, _>>()?;
    let n = runs.len() as f64;
    let avg = |k: usize| {
        let (mut m, mut s, mut d) = (0.0, 0.0, 0.0);
        for st in &stats {
            let e = st.as_array()[k];
            m += e.mean;
            s += e.std;
            d += e.median;
        }
        ErrorStats { mean: m / n, std: s / n, median: d / n }
    };
    let col = |f: fn(&ConfusionMetrics) -> f64| MeanStd::of(&metrics.iter().map(f).collect::<Vec<_>>());
    Ok(EvalReport {
        model: model.to_string(),
        runs: runs.len(),
        landmarks: LandmarkStats { perp: avg(0), pec1: avg(1), pec2: avg(2), nipple: avg(3), angular: avg(4) },
        accuracy: col(|m| m.accuracy)?,
        sensitivity: col(|m| m.sensitivity)?,
        specificity: col(|m| m.specificity)?,
    })
}

/// Published VinDr results (percent, mean ± std over 5 runs):
/// model, accuracy, specificity, sensitivity.
pub const REFERENCE_CLASSIFICATION: [(&str, [f64; 2], [f64; 2], [f64; 2]); 5] = [
    ("ResNeXt50", [73.7, 3.35], [76.91, 6.26], [68.57, 11.41]),
    ("R-ResNeXt50", [82.3, 5.03], [81.42, 12.34], [83.38, 10.49]),
    ("UNet", [70.63, 1.49], [78.46, 1.56], [58.12, 2.68]),
    ("Attention UNet", [88.2, 2.51], [88.62, 4.11], [87.53, 3.51]),
    ("CoordAtt UNet", [88.63, 2.84], [90.25, 4.04], [86.04, 3.41]),
];

/// Published VinDr landmark errors: (mean, std, median) for Perp, Pec1, Pec2,
/// Nipple in mm and Angular in degrees.
pub const REFERENCE_LANDMARKS: [(&str, [[f64; 3]; 5]); 4] = [
    ("R-ResNeXt50", [[7.13, 4.23, 6.49], [7.33, 6.01, 5.24], [7.93, 7.0, 6.2], [4.63, 1.99, 4.45], [2.71, 2.44, 1.96]]),
    ("UNet", [[9.62, 7.86, 8.03], [8.19, 6.89, 6.01], [14.01, 14.01, 10.9], [6.8, 5.25, 5.72], [3.52, 3.15, 2.66]]),
    (
        "Attention UNet",
        [[5.12, 5.04, 3.56], [6.01, 5.87, 4.03], [6.94, 8.25, 3.95], [2.98, 2.4, 2.52], [2.58, 2.73, 1.81]],
    ),
    (
        "CoordAtt UNet",
        [[4.99, 4.88, 3.82], [5.62, 5.29, 4.14], [6.49, 7.37, 4.26], [2.97, 2.46, 2.45], [2.42, 2.56, 1.75]],
    ),
];

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Accuracy / specificity / sensitivity table, synthetic rows first, then the
/// published reference rows.
pub fn classification_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<28} {:>16} {:>16} {:>16}", "Model", "Accuracy", "Specificity", "Sensitivity");
    let pm = |m: MeanStd| format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std);
    for r in reports {
        let name = format!("{} (n={})", r.model, r.runs);
        let _ = writeln!(s, "{:<28} {:>16} {:>16} {:>16}", name, pm(r.accuracy), pm(r.specificity), pm(r.sensitivity));
    }
    let _ = writeln!(s, "-- VinDr reference --");
    for (name, acc, spec, sens) in REFERENCE_CLASSIFICATION {
        let f = |v: [f64; 2]| format!("{:.2} ± {:.2}", v[0], v[1]);
        let _ = writeln!(s, "{:<28} {:>16} {:>16} {:>16}", name, f(acc), f(spec), f(sens));
    }
    s
}

/// Landmark error table (μ, σ, median per column), synthetic then reference rows.
pub fn landmark_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<28}", "Model");
    for col in ["Perp", "Pec1", "Pec2", "Nipple", "Angular"] {
        let _ = write!(s, " | {:^20}", col);
    }
    let _ = writeln!(s);
    let _ = write!(s, "{:<28}", "");
    for _ in 0..5 {
        let _ = write!(s, " | {:>6} {:>6} {:>6}", "mu", "sigma", "med");
    }
    let _ = writeln!(s);
    let row = |s: &mut String, name: &str, vals: [[f64; 3]; 5]| {
        let _ = write!(s, "{:<28}", name);
        for v in vals {
            let _ = write!(s, " | {:>6.2} {:>6.2} {:>6.2}", v[0], v[1], v[2]);
        }
        let _ = writeln!(s);
    };
    for r in reports {
        let vals = r.landmarks.as_array().map(|e| [e.mean, e.std, e.median]);
        row(&mut s, &format!("{} (n={})", r.model, r.runs), vals);
    }
    let _ = writeln!(s, "-- VinDr reference --");
    for (name, vals) in REFERENCE_LANDMARKS {
        row(&mut s, name, vals);
    }
    s
}
