use pnl_core::data::CaseRecord;
use pnl_core::imaging::{preprocess_case, ImageGrid, PreprocessParams};
use pnl_nnet::Tensor;

use crate::TrainError;

/// A network-ready image (zero mean, unit variance) and its six target
/// coordinates in input pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub case_id: String,
    pub size: usize,
    pub pixels: Vec<f64>,
    pub target: [f64; 6],
}

/// Shifts and scales an image to zero mean and unit variance.
/// A constant image becomes all zeros.
pub fn network_input(img: &ImageGrid) -> Vec<f64> {
    let data = img.data();
    let n = data.len().max(1) as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt().recip() } else { 0.0 };
    data.iter().map(|v| (v - mean) * scale).collect()
}

pub fn prepare_samples(
    cases: &[(CaseRecord, ImageGrid)],
    params: &PreprocessParams,
) -> Result<Vec<Sample>, TrainError> {
    cases
        .iter()
        .map(|(rec, img)| {
            let (out, lm, _) = preprocess_case(rec, img, params)?;
            Ok(Sample {
                case_id: rec.case_id.clone(),
                size: out.width(),
                pixels: network_input(&out),
                target: lm.to_array(),
            })
        })
        .collect()
}

/// Stacks samples into a `(batch, 1, S, S)` tensor.
pub fn batch_tensor<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<Tensor, TrainError> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut size = None;
    for s in samples {
        if *size.get_or_insert(s.size) != s.size {
            return Err(TrainError::Config("samples of different sizes in one batch".into()));
        }
        data.extend_from_slice(&s.pixels);
        n += 1;
    }
    let size = size.unwrap_or(0);
    Ok(Tensor::new(vec![n, 1, size, size], data)?)
}
