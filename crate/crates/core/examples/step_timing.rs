//! Times one forward/backward pass of the default model.
//!
//! cargo run --release --example step_timing -- [size] [batch]

use std::time::Instant;

use ddcnet::graph::Graph;
use ddcnet::model::{default_config, forward, ModelParams, ParamVars};
use ddcnet::{Shape4, Tensor4};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let size = args.first().copied().unwrap_or(96);
    let batch = args.get(1).copied().unwrap_or(1);
    let cfg = default_config();
    let params = ModelParams::init(&cfg, 0);
    let shape = Shape4::new(batch, 3, size, size);
    let f1 = Tensor4::from_fn(shape, |_, c, y, x| ((c + y * 3 + x * 7) % 17) as f32 / 17.0);
    let f2 = Tensor4::from_fn(shape, |_, c, y, x| ((c + y * 5 + x * 3) % 13) as f32 / 13.0);
    for _ in 0..3 {
        let t0 = Instant::now();
        let mut g = Graph::new();
        let vars = ParamVars::leaves(&mut g, &params);
        let a = g.constant(f1.clone());
        let b = g.constant(f2.clone());
        let out = forward(&mut g, &cfg, &vars, a, b).unwrap();
        let t1 = Instant::now();
        let seed = Tensor4::ones(g.shape(out.flow_final));
        let _ = g.backward(out.flow_final, &seed).unwrap();
        let t2 = Instant::now();
        println!(
            "{size}x{size} batch {batch}: forward {:.3}s backward {:.3}s",
            (t1 - t0).as_secs_f64(),
            (t2 - t1).as_secs_f64()
        );
    }
}
