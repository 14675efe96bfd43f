//! Trains and scores one model on the desk-scale synthetic splits.
//!
//! Usage: `cargo run -p pnl-train --example desk_run -- [variant] [seed] [head_pool]`

use pnl_core::data::SyntheticSpec;
use pnl_core::evaluation::LandmarkErrors;
use pnl_core::imaging::PreprocessParams;
use pnl_nnet::{ModelConfig, Variant};
use pnl_train::desk::{constant_baseline, desk_samples, run_desk, synthetic_splits};
use pnl_train::{TrainConfig, TrainOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let variant = match args.next().as_deref() {
        Some("unet") => Variant::UNet,
        Some("att") => Variant::AttentionUNet,
        _ => Variant::CoordAttUNet,
    };
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let mut model = ModelConfig::toy(variant);
    if let Some(p) = args.next() {
        model.head_pool = p.parse()?;
    }
    let splits = synthetic_splits(&SyntheticSpec::default(), [200, 50, 50], 0)?;
    let samples = desk_samples(&splits, &PreprocessParams { output_size: model.input_size, ..Default::default() })?;
    let cfg = TrainConfig { seed, ..TrainConfig::toy() };
    let run = run_desk(&model, &cfg, &splits, &samples, &TrainOptions { verbose: true, ..Default::default() })?;
    let base = constant_baseline(&splits, &samples.0, model.input_size)?;
    let nipple = |e: &LandmarkErrors| e.nipple;
    let m = run.result.metrics()?;
    println!(
        "{variant} seed {seed} pool {}: accuracy {:.3} sensitivity {:.3} specificity {:.3}",
        model.head_pool, m.accuracy, m.sensitivity, m.specificity
    );
    println!(
        "nipple error {:.2} mm, constant baseline {:.2} mm, time {:.0}s",
        run.result.stats(nipple)?.mean,
        base.stats(nipple)?.mean,
        run.elapsed.as_secs_f64()
    );
    Ok(())
}
