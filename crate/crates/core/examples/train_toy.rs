//! Trains the predictor on single-digit 32x32 bouncing sprites (5 -> 5) and
//! prints the validation L1 curve.
//!
//! ```text
//! cargo run --release -p vidpred --example train_toy -- [steps] [out_dir]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use vidpred::train::{fit, presets, FitOptions};

fn main() -> vidpred::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(300, |s| s.parse().expect("steps"));
    let out = args.next().map_or_else(|| std::env::temp_dir().join("vidpred_toy"), PathBuf::from);

    let mut cfg = presets::toy_sprites();
    cfg.steps = steps;
    let start = Instant::now();
    let summary = fit(
        &cfg,
        &out,
        &FitOptions {
            resume: false,
            report_every: 25,
        },
    )?;
    let secs = start.elapsed().as_secs_f64();
    if let Some((before, after)) = summary.autoencoder_mse {
        println!("autoencoder held-out mse {before:.5} -> {after:.5}");
    }
    for (step, v) in &summary.validation {
        println!("step {step:>5}  val l1 {v:.5}");
    }
    println!(
        "{} steps in {secs:.1}s ({:.3}s/step); checkpoint {}",
        summary.steps,
        secs / summary.steps.max(1) as f64,
        summary.checkpoint.display()
    );
    Ok(())
}
