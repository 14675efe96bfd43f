//! Times one forward/backward pass of a toy model.

use std::time::Instant;

use pnl_nnet::model::forward_graph;
use pnl_nnet::{init_params, ExecMode, Graph, ModelConfig, Tensor, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let batch: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(8);
    for variant in Variant::ALL {
        let cfg = ModelConfig::toy(variant);
        let params = init_params(&cfg, 1)?;
        let x = Tensor::full(&[batch, 1, 64, 64], 0.5);
        let t = Instant::now();
        let reps: usize = std::env::var("REPS").ok().and_then(|s| s.parse().ok()).unwrap_or(10);
        for _ in 0..reps {
            let mut g = Graph::new(ExecMode::Parallel);
            let xv = g.input(x.clone())?;
            let y = forward_graph(&mut g, &cfg, &params, xv)?;
            let seed = Tensor::full(g.value(y).shape(), 1.0);
            g.backward(y, seed)?;
        }
        println!("{variant}: {:.1} ms per step, {} params", t.elapsed().as_secs_f64() * 1e3 / reps as f64, cfg.param_count());
    }
    Ok(())
}
