//! Prints the poor-label prevalence of the default synthetic generator.
//!
//! Usage: `cargo run -p pnl-core --example calibrate_generator -- [cases] [seed]`

use pnl_core::data::{generate_synthetic_case, SyntheticSpec};
use pnl_core::QualityLabel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let spec = SyntheticSpec { seed, ..Default::default() };
    let mut poor = 0;
    let mut by_side = [0usize; 2];
    for i in 0..n {
        let (_, rec) = generate_synthetic_case(&spec, i)?;
        if rec.derived_label == Some(QualityLabel::Poor) {
            poor += 1;
            by_side[i % 2] += 1;
        }
    }
    println!("image {}x{}", spec.shape().width, spec.shape().height);
    println!("poor {poor}/{n} ({:.1}%)", 100.0 * poor as f64 / n as f64);
    println!("poor left {} right {}", by_side[0], by_side[1]);
    Ok(())
}
