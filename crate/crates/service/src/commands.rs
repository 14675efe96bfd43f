//! The work behind each CLI subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use pnl_core::data::{load_annotations, split_dataset, write_synthetic_dataset, CaseRecord, DatasetSplit, SyntheticSpec};
use pnl_core::evaluation::{
    aggregate_runs, classification_table, evaluate_run, landmark_table, predict_image, EvalCase, EvalReport,
    ImagePrediction, RunResult,
};
use pnl_core::geometry::{LandmarkSet, Laterality, PixelSpacing};
use pnl_core::imaging::{preprocess_case, ImageGrid, PreprocessParams, TransformLog};
use pnl_nnet::{ModelConfig, Variant};
use pnl_train::{prepare_samples, train, NetPredictor, TrainConfig, TrainOptions, TrainState};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// Reads a TOML or JSON config (chosen by extension); no path means defaults.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, ServiceError> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Ok(serde_json::from_str(&text)?),
        _ => toml::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display()))),
    }
}

/// Model, optimizer and split settings for `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Train/validation/test fractions.
    pub split: [f64; 3],
    pub split_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::toy(Variant::CoordAttUNet),
            train: TrainConfig::toy(),
            split: [0.8, 0.1, 0.1],
            split_seed: 0,
        }
    }
}

pub fn synth(spec: &SyntheticSpec, count: usize, out: &Path) -> Result<Vec<CaseRecord>, ServiceError> {
    spec.validate()?;
    Ok(write_synthetic_dataset(spec, count, out)?)
}

/// Annotation records with their decoded images. Image paths are relative to
/// the annotation file.
pub fn load_cases(annotations: &Path) -> Result<Vec<(CaseRecord, ImageGrid)>, ServiceError> {
    let dir = annotations.parent().unwrap_or(Path::new("."));
    load_annotations(annotations)?
        .into_iter()
        .map(|r| {
            let img = ImageGrid::load(dir.join(&r.image))?;
            Ok((r, img))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PreprocessedCase {
    pub case_id: String,
    pub image: String,
    pub landmarks: LandmarkSet,
    pub transform: TransformLog,
}

/// Writes network-size images and landmark/transform records to `out`.
pub fn preprocess(annotations: &Path, size: usize, out: &Path) -> Result<Vec<PreprocessedCase>, ServiceError> {
    let params = PreprocessParams { output_size: size, ..Default::default() };
    fs::create_dir_all(out.join("images"))?;
    let mut done = Vec::new();
    for (rec, img) in load_cases(annotations)? {
        let (small, landmarks, transform) = preprocess_case(&rec, &img, &params)?;
        let image = format!("images/{}.pgm", rec.case_id);
        small.save_pgm16(out.join(&image))?;
        done.push(PreprocessedCase { case_id: rec.case_id, image, landmarks, transform });
    }
    fs::write(out.join("preprocessed.json"), serde_json::to_vec_pretty(&done)?)?;
    Ok(done)
}

fn pick<'a>(cases: &'a [(CaseRecord, ImageGrid)], ids: &[String]) -> Vec<(CaseRecord, ImageGrid)> {
    ids.iter().filter_map(|id| cases.iter().find(|(r, _)| &r.case_id == id)).cloned().collect()
}

/// Trains on an annotation file. `out` receives `split.json`, `model.pnlw`
/// (best validation snapshot) and a resumable `checkpoint/` directory.
pub fn train_model(
    annotations: &Path,
    cfg: &ExperimentConfig,
    out: &Path,
    resume: bool,
    stop_after: Option<usize>,
) -> Result<pnl_train::TrainOutcome, ServiceError> {
    let cases = load_cases(annotations)?;
    let records: Vec<CaseRecord> = cases.iter().map(|(r, _)| r.clone()).collect();
    let split = split_dataset(&records, cfg.split, cfg.split_seed)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("split.json"), serde_json::to_vec_pretty(&split)?)?;

    let params = PreprocessParams { output_size: cfg.model.input_size, ..Default::default() };
    let train_set = prepare_samples(&pick(&cases, &split.train), &params)?;
    let val_set = prepare_samples(&pick(&cases, &split.val), &params)?;
    let ckpt = out.join("checkpoint");
    let state = if resume && ckpt.join("state.json").is_file() { Some(TrainState::load(ckpt.join("state.json"))?) } else { None };
    let opts = TrainOptions { checkpoint_dir: Some(ckpt), stop_after, verbose: true, ..Default::default() };
    let outcome = train(&cfg.model, &train_set, &val_set, &cfg.train, state, &opts)?;
    pnl_nnet::save_params(&cfg.model, &outcome.best_params, out.join("model.pnlw"))?;
    Ok(outcome)
}

/// Scores a saved model. With a split file only its test cases are used.
pub fn eval_model(
    annotations: &Path,
    model: &Path,
    split: Option<&Path>,
    out: Option<&Path>,
) -> Result<(RunResult, EvalReport, String), ServiceError> {
    let predictor = NetPredictor::load(model)?;
    let mut cases = load_cases(annotations)?;
    if let Some(path) = split {
        let split: DatasetSplit = serde_json::from_slice(&fs::read(path)?)?;
        cases = pick(&cases, &split.test);
    }
    let eval: Vec<EvalCase<'_>> = cases.iter().map(|(record, image)| EvalCase { record, image }).collect();
    let params = PreprocessParams { output_size: predictor.input_size(), ..Default::default() };
    let result = evaluate_run(&predictor, &eval, &params)?;
    let name = model.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let report = aggregate_runs(name, std::slice::from_ref(&result))?;
    let tables = format!(
        "{}\n{}",
        classification_table(std::slice::from_ref(&report)),
        landmark_table(std::slice::from_ref(&report))
    );
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        result.write_csv(fs::File::create(dir.join("cases.csv"))?)?;
        fs::write(dir.join("report.json"), report.to_json())?;
        fs::write(dir.join("tables.txt"), &tables)?;
    }
    Ok((result, report, tables))
}

pub fn predict(
    model: &Path,
    image: &Path,
    laterality: Laterality,
    spacing: PixelSpacing,
) -> Result<ImagePrediction, ServiceError> {
    let predictor = NetPredictor::load(model)?;
    let img = ImageGrid::load(image)?;
    let params = PreprocessParams { output_size: predictor.input_size(), ..Default::default() };
    Ok(predict_image(&predictor, &img, spacing, laterality, &params)?)
}

/// Model id shown by the server: the file name without extension.
pub fn model_id(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string()
}

pub fn default_store_dir(data: Option<&Path>) -> PathBuf {
    data.and_then(Path::parent).unwrap_or(Path::new(".")).join("store")
}
