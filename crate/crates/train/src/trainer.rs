use std::path::{Path, PathBuf};

use pnl_core::loss::{law_grad, law_loss};
use pnl_nnet::model::forward_graph;
use pnl_nnet::{init_params, save_params, ExecMode, Graph, ModelConfig, NnError, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{batch_tensor, Sample};
use crate::optim::{adam_step, cyclic_lr, AdamState};
use crate::{TrainConfig, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate of the epoch's last iteration.
    pub lr: f64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub params: ParamStore,
    pub adam: AdamState,
    pub iteration: u64,
    pub epochs_done: usize,
    #[serde(with = "infinite_as_null")]
    pub best_val_loss: f64,
    pub best_params: ParamStore,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(model: &ModelConfig, config: &TrainConfig) -> Result<Self, TrainError> {
        let params = init_params(model, config.seed)?;
        Ok(Self {
            model: model.clone(),
            config: config.clone(),
            adam: AdamState::new(&params, config.init_lr),
            best_params: params.clone(),
            params,
            iteration: 0,
            epochs_done: 0,
            best_val_loss: f64::INFINITY,
            history: Vec::new(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub mode: ExecMode,
    /// Directory receiving `state.json`, `best.pnlw` and `history.csv` after
    /// every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop after this many epochs in total, leaving a resumable state.
    pub stop_after: Option<usize>,
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_params: ParamStore,
    pub best_val_loss: f64,
    pub history: Vec<EpochRecord>,
    pub state: TrainState,
}

pub fn write_history_csv(history: &[EpochRecord], out: impl std::io::Write) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn nn_at(iteration: u64) -> impl Fn(NnError) -> TrainError {
    move |e| match e {
        NnError::NonFinite(what) => TrainError::NonFinite { iteration, what },
        other => other.into(),
    }
}

fn targets(samples: &[&Sample]) -> Vec<[f64; 6]> {
    samples.iter().map(|s| s.target).collect()
}

fn row(t: &Tensor, i: usize) -> [f64; 6] {
    t.data()[6 * i..6 * i + 6].try_into().expect("six outputs per sample")
}

/// Mean LAW loss over `samples`, evaluated in batches.
pub fn mean_loss(
    model: &ModelConfig,
    params: &ParamStore,
    cfg: &TrainConfig,
    samples: &[Sample],
    mode: ExecMode,
) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySet("evaluation"));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(cfg.batch_size.max(1)) {
        let y = pnl_nnet::forward(model, params, &batch_tensor(chunk)?, mode)?;
        for (i, s) in chunk.iter().enumerate() {
            total += law_loss(&row(&y, i), &s.target, &cfg.wing, &cfg.weights);
        }
    }
    Ok(total / samples.len() as f64)
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mix = seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix));
    idx
}

/// Trains from scratch, or continues `resume`, until `cfg.epochs` epochs are
/// done. Returns the parameters with the lowest validation loss.
pub fn train(
    model: &ModelConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    model.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    if let Some(s) = train_set.iter().chain(val_set).find(|s| s.size != model.input_size) {
        return Err(TrainError::Config(format!(
            "sample {} is {} px, model expects {}",
            s.case_id, s.size, model.input_size
        )));
    }
    let mut st = match resume {
        Some(s) => {
            if &s.model != model || &s.config != cfg {
                return Err(TrainError::Config("checkpoint was written for a different configuration".into()));
            }
            s
        }
        None => TrainState::new(model, cfg)?,
    };
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let per_epoch = cfg.iterations_per_epoch(train_set.len());
    let step = (cfg.half_cycle_epochs * per_epoch) as u64;
    let last = opts.stop_after.map_or(cfg.epochs, |e| e.min(cfg.epochs));
    while st.epochs_done < last {
        let epoch = st.epochs_done;
        let order = epoch_order(train_set.len(), cfg.seed, epoch);
        let mut sum = 0.0;
        let mut lr = cfg.base_lr;
        for chunk in order.chunks(cfg.batch_size) {
            let it = st.iteration;
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let x = batch_tensor(batch.iter().copied())?;
            let mut g = Graph::new(opts.mode);
            let xv = g.input(x).map_err(nn_at(it))?;
            let y = forward_graph(&mut g, model, &st.params, xv).map_err(nn_at(it))?;
            let out = g.value(y).clone();
            let n = batch.len() as f64;
            let mut seed = Vec::with_capacity(6 * batch.len());
            for (i, t) in targets(&batch).iter().enumerate() {
                let p = row(&out, i);
                let l = law_loss(&p, t, &cfg.wing, &cfg.weights);
                if !l.is_finite() {
                    return Err(TrainError::NonFinite { iteration: it, what: "loss".into() });
                }
                sum += l;
                seed.extend(law_grad(&p, t, &cfg.wing, &cfg.weights).iter().map(|v| v / n));
            }
            let grads = g.backward(y, Tensor::new(vec![batch.len(), 6], seed)?).map_err(nn_at(it))?;
            lr = cyclic_lr(it, cfg.base_lr, cfg.max_lr, step);
            adam_step(&mut st.params, &mut st.adam, &grads, lr).map_err(|e| match e {
                TrainError::NonFinite { what, .. } => TrainError::NonFinite { iteration: it, what },
                other => other,
            })?;
            st.iteration += 1;
        }
        let train_loss = sum / train_set.len() as f64;
        let val_loss = mean_loss(model, &st.params, cfg, val_set, opts.mode).map_err(|e| match e {
            TrainError::Nn(NnError::NonFinite(what)) => TrainError::NonFinite { iteration: st.iteration, what },
            other => other,
        })?;
        if val_loss < st.best_val_loss {
            st.best_val_loss = val_loss;
            st.best_params = st.params.clone();
        }
        st.epochs_done += 1;
        st.history.push(EpochRecord { epoch: st.epochs_done, train_loss, val_loss, lr });
        if opts.verbose {
            eprintln!(
                "epoch {:>3}/{}  train {:.4}  val {:.4}  lr {:.2e}",
                st.epochs_done, cfg.epochs, train_loss, val_loss, lr
            );
        }
        if let Some(dir) = &opts.checkpoint_dir {
            save_params(model, &st.best_params, dir.join("best.pnlw"))?;
            write_history_csv(&st.history, std::fs::File::create(dir.join("history.csv"))?)?;
            st.save(dir.join("state.json"))?;
        }
    }
    Ok(TrainOutcome {
        best_params: st.best_params.clone(),
        best_val_loss: st.best_val_loss,
        history: st.history.clone(),
        state: st,
    })
}
