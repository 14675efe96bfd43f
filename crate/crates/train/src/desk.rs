//! Desk-scale experiment: synthetic data, exam-grouped splits, training and
//! evaluation of one model variant.

use std::time::{Duration, Instant};

use pnl_core::data::{generate_synthetic_case, split_dataset, CaseRecord, SyntheticSpec};
use pnl_core::evaluation::{evaluate_run, EvalCase, RunResult};
use pnl_core::imaging::{ImageGrid, PreprocessParams};
use pnl_nnet::{ModelConfig, Variant};

use crate::predictor::{ConstantPredictor, NetPredictor};
use crate::trainer::{train, EpochRecord, TrainOptions};
use crate::{prepare_samples, Sample, TrainConfig, TrainError};

pub type Case = (CaseRecord, ImageGrid);

#[derive(Debug, Clone)]
pub struct SyntheticSplits {
    pub train: Vec<Case>,
    pub val: Vec<Case>,
    pub test: Vec<Case>,
}

/// Generates `train + val + test` synthetic cases and splits them by exam.
pub fn synthetic_splits(spec: &SyntheticSpec, counts: [usize; 3], split_seed: u64) -> Result<SyntheticSplits, TrainError> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(TrainError::EmptySet("synthetic"));
    }
    let mut cases = (0..n).map(|i| generate_synthetic_case(spec, i).map(|(img, rec)| (rec, img))).collect::<Result<Vec<_>, _>>()?;
    let records: Vec<CaseRecord> = cases.iter().map(|(r, _)| r.clone()).collect();
    let ratios = counts.map(|c| c as f64 / n as f64);
    let split = split_dataset(&records, ratios, split_seed)?;
    let mut take = |ids: &[String]| -> Vec<Case> {
        ids.iter()
            .map(|id| {
                let pos = cases.iter().position(|(r, _)| &r.case_id == id).expect("split ids come from the records");
                cases.swap_remove(pos)
            })
            .collect()
    };
    let train = take(&split.train);
    let val = take(&split.val);
    let test = take(&split.test);
    Ok(SyntheticSplits { train, val, test })
}

pub fn eval_cases(cases: &[Case]) -> Vec<EvalCase<'_>> {
    cases.iter().map(|(record, image)| EvalCase { record, image }).collect()
}

#[derive(Debug, Clone)]
pub struct DeskRun {
    pub variant: Variant,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    pub best_val_loss: f64,
    pub result: RunResult,
    pub predictor: NetPredictor,
    pub elapsed: Duration,
}

/// Preprocessed training and validation samples for `splits`.
pub fn desk_samples(splits: &SyntheticSplits, params: &PreprocessParams) -> Result<(Vec<Sample>, Vec<Sample>), TrainError> {
    Ok((prepare_samples(&splits.train, params)?, prepare_samples(&splits.val, params)?))
}

/// Trains `model` on the splits and scores it on the test split.
pub fn run_desk(
    model: &ModelConfig,
    cfg: &TrainConfig,
    splits: &SyntheticSplits,
    samples: &(Vec<Sample>, Vec<Sample>),
    opts: &TrainOptions,
) -> Result<DeskRun, TrainError> {
    let params = PreprocessParams { output_size: model.input_size, ..Default::default() };
    let start = Instant::now();
    let out = train(model, &samples.0, &samples.1, cfg, None, opts)?;
    let elapsed = start.elapsed();
    let predictor = NetPredictor::new(model.clone(), out.best_params)?;
    let result = evaluate_run(&predictor, &eval_cases(&splits.test), &params)?;
    Ok(DeskRun {
        variant: model.variant,
        seed: cfg.seed,
        history: out.history,
        best_val_loss: out.best_val_loss,
        result,
        predictor,
        elapsed,
    })
}

/// Scores the mean-training-landmark predictor on the test split.
pub fn constant_baseline(splits: &SyntheticSplits, train_samples: &[Sample], input_size: usize) -> Result<RunResult, TrainError> {
    let params = PreprocessParams { output_size: input_size, ..Default::default() };
    let predictor = ConstantPredictor::mean_of(train_samples.iter().map(|s| s.target));
    Ok(evaluate_run(&predictor, &eval_cases(&splits.test), &params)?)
}
