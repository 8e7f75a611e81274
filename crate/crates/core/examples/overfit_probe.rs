//! Overfits the default model on a handful of synthetic pairs and prints the
//! training curve.
//!
//! `cargo run --release --example overfit_probe -p ddcnet -- [size] [pairs] [max_disp] [batch] [lr] [iters] [eval_every]`

use std::time::Instant;

use ddcnet::flow_io::{generate_sample, GenConfig};
use ddcnet::model::default_config;
use ddcnet::training::{TrainConfig, Trainer};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> ddcnet::Result<()> {
    let size = arg(1, 96usize);
    let pairs = arg(2, 8usize);
    let max_disp = arg(3, 12.0f32);
    let gen = GenConfig::new(size, 3, max_disp);
    let samples = (0..pairs as u64)
        .map(|s| generate_sample(s, &gen))
        .collect::<ddcnet::Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        batch_size: arg(4, 1),
        lr: arg(5, 1e-4),
        max_iters: arg(6, 5000),
        eval_every: arg(7, 100),
        augment: None,
        target_aee: Some(0.5),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(default_config(), cfg)?;
    let start = Instant::now();
    let mut stdout = std::io::stdout();
    let summary = trainer.run(&samples, None, Some(&mut stdout), None)?;
    println!("# {summary:?} in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
