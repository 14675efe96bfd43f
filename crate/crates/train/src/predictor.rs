use std::path::Path;

use pnl_core::evaluation::{EvalError, LandmarkPredictor};
use pnl_core::imaging::ImageGrid;
use pnl_core::LandmarkSet;
use pnl_nnet::io::read_config;
use pnl_nnet::{forward, load_params, ExecMode, ModelConfig, ParamStore, Tensor};

use crate::dataset::network_input;
use crate::TrainError;

/// A trained network behind the [`LandmarkPredictor`] interface.
#[derive(Debug, Clone)]
pub struct NetPredictor {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub mode: ExecMode,
    pub batch_size: usize,
}

impl NetPredictor {
    pub fn new(config: ModelConfig, params: ParamStore) -> Result<Self, TrainError> {
        config.validate()?;
        config.check_params(&params)?;
        Ok(Self { config, params, mode: ExecMode::Parallel, batch_size: 8 })
    }

    /// Loads a parameter file using the config stored inside it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let config = read_config(path.as_ref())?;
        let params = load_params(&config, path)?;
        Self::new(config, params)
    }

    pub fn input_size(&self) -> usize {
        self.config.input_size
    }

    fn run(&self, images: &[ImageGrid]) -> Result<Vec<LandmarkSet>, TrainError> {
        let s = self.config.input_size;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.batch_size.max(1)) {
            let mut data = Vec::with_capacity(chunk.len() * s * s);
            for img in chunk {
                if img.width() != s || img.height() != s {
                    return Err(TrainError::Config(format!(
                        "image is {}x{}, model expects {s}x{s}",
                        img.width(),
                        img.height()
                    )));
                }
                data.extend(network_input(img));
            }
            let y = forward(&self.config, &self.params, &Tensor::new(vec![chunk.len(), 1, s, s], data)?, self.mode)?;
            out.extend(y.data().chunks(6).map(|r| LandmarkSet::from_array(r.try_into().expect("six outputs"))));
        }
        Ok(out)
    }
}

impl LandmarkPredictor for NetPredictor {
    fn predict(&self, images: &[ImageGrid]) -> Result<Vec<LandmarkSet>, EvalError> {
        self.run(images).map_err(|e| EvalError::Predictor(e.to_string()))
    }
}

/// Predicts the training-set mean landmarks for every image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPredictor(pub [f64; 6]);

impl ConstantPredictor {
    pub fn mean_of(targets: impl IntoIterator<Item = [f64; 6]>) -> Self {
        let mut sum = [0.0; 6];
        let mut n = 0usize;
        for t in targets {
            for (s, v) in sum.iter_mut().zip(t) {
                *s += v;
            }
            n += 1;
        }
        Self(sum.map(|s| s / n.max(1) as f64))
    }
}

impl LandmarkPredictor for ConstantPredictor {
    fn predict(&self, images: &[ImageGrid]) -> Result<Vec<LandmarkSet>, EvalError> {
        Ok(images.iter().map(|_| LandmarkSet::from_array(self.0)).collect())
    }
}
