use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use pnl_core::data::{load_annotations, SyntheticSpec};
use pnl_core::geometry::{Laterality, PixelSpacing};
use pnl_service::commands::{self, ExperimentConfig};
use pnl_service::{handle_verdict, router, AnnotationStore, AppState, LoadedModel, ServiceError, VerdictRequest};
use pnl_train::NetPredictor;

#[derive(Parser)]
#[command(name = "pnl", version, about = "Posterior nipple line positioning check for MLO mammograms")]
struct Cli {
    /// TOML or JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parameter file (`.pnlw`).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    L,
    R,
}

impl From<Side> for Laterality {
    fn from(s: Side) -> Self {
        match s {
            Side::L => Laterality::Left,
            Side::R => Laterality::Right,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (PGM images and annotations.json).
    Synth {
        #[arg(long, default_value_t = 300)]
        count: usize,
    },
    /// Crop, pad and resize every annotated image.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Train a model on an annotation file.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Continue from `<out>/checkpoint` if present.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs in total.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Score a model against annotations.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// `split.json` written by `train`; restricts scoring to its test cases.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Predict landmarks and the verdict for one image.
    Predict {
        image: PathBuf,
        #[arg(long, value_enum, default_value = "l")]
        laterality: Side,
        /// Pixel spacing in mm (isotropic).
        #[arg(long, default_value_t = 1.0)]
        spacing: f64,
    },
    /// Verdict for a JSON request (file, or stdin when omitted).
    Verdict { request: Option<PathBuf> },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Annotation file whose records seed the store and whose directory holds the images.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Annotation store directory (default: `store/` next to the data).
        #[arg(long)]
        store: Option<PathBuf>,
        /// Directory with the review UI bundle.
        #[arg(long, name = "static")]
        static_dir: Option<PathBuf>,
    },
}

fn need<'a>(opt: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, ServiceError> {
    opt.as_deref().ok_or_else(|| ServiceError::Config(format!("--{flag} is required")))
}

fn print_json(v: &impl serde::Serialize) -> Result<(), ServiceError> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), ServiceError> {
    match cli.command {
        Command::Synth { count } => {
            let mut spec: SyntheticSpec = commands::load_config(cli.config.as_deref())?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let out = need(&cli.out, "out")?;
            let records = commands::synth(&spec, count, out)?;
            let poor = records.iter().filter(|r| r.derived_label.is_some_and(|l| l.is_poor())).count();
            println!("wrote {} cases to {} ({poor} poor)", records.len(), out.display());
        }
        Command::Preprocess { data, size } => {
            let out = need(&cli.out, "out")?;
            let done = commands::preprocess(&data, size, out)?;
            println!("preprocessed {} cases into {}", done.len(), out.display());
        }
        Command::Train { data, resume, stop_after } => {
            let mut cfg: ExperimentConfig = commands::load_config(cli.config.as_deref())?;
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
            }
            let out = need(&cli.out, "out")?;
            let outcome = commands::train_model(&data, &cfg, out, resume, stop_after)?;
            println!(
                "{} epochs, best validation loss {:.4}; parameters in {}",
                outcome.history.len(),
                outcome.best_val_loss,
                out.join("model.pnlw").display()
            );
        }
        Command::Eval { data, split } => {
            let model = need(&cli.model, "model")?;
            let (_, _, tables) = commands::eval_model(&data, model, split.as_deref(), cli.out.as_deref())?;
            print!("{tables}");
        }
        Command::Predict { image, laterality, spacing } => {
            let model = need(&cli.model, "model")?;
            let spacing = PixelSpacing::isotropic(spacing).map_err(|e| ServiceError::Config(e.to_string()))?;
            print_json(&commands::predict(model, &image, laterality.into(), spacing)?)?;
        }
        Command::Verdict { request } => {
            let body = match request {
                Some(path) => std::fs::read(path)?,
                None => {
                    let mut buf = Vec::new();
                    std::io::stdin().read_to_end(&mut buf)?;
                    buf
                }
            };
            print_json(&handle_verdict(&VerdictRequest::parse(&body)?)?)?;
        }
        Command::Serve { addr, data, store, static_dir } => {
            let store_dir = store.unwrap_or_else(|| commands::default_store_dir(data.as_deref()));
            let store = AnnotationStore::open(&store_dir)?;
            if let Some(path) = &data {
                let added = store.seed(&load_annotations(path)?)?;
                println!("store {}: {added} new cases", store_dir.display());
            }
            let state = AppState::new(store, data.as_deref().and_then(Path::parent).map(Path::to_path_buf));
            if let Some(path) = &cli.model {
                state.set_model(LoadedModel { id: commands::model_id(path), predictor: NetPredictor::load(path)? });
            }
            let app = router(state, static_dir);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                println!("listening on http://{}", listener.local_addr()?);
                axum::serve(listener, app).await
            })?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
