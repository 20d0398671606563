//! Scores a checkpoint with best-of-k and mean-of-k protocols for growing k.
//! Without a checkpoint argument a short toy run is trained first.
//!
//! ```text
//! cargo run --release -p vidpred --example evaluate_best_of_k -- [model.ckpt]
//! ```

use std::path::PathBuf;

use vidpred::metrics::render_table;
use vidpred::train::{evaluate_run, fit, presets, FitOptions, Trainer};

fn main() -> vidpred::Result<()> {
    let checkpoint = match std::env::args().nth(1) {
        Some(path) => PathBuf::from(path),
        None => {
            let mut cfg = presets::toy_sprites();
            cfg.steps = 100;
            cfg.autoencoder.steps = 100;
            fit(&cfg, &std::env::temp_dir().join("vidpred_eval"), &FitOptions::default())?.checkpoint
        }
    };
    let trainer = Trainer::load(&checkpoint)?;
    let model = &trainer.model;
    let (_, val, _) = model.config.windows()?;
    let reduction = model.config.metrics_reduction;
    let mut reports = Vec::new();
    for k in [1, 3, 5] {
        let r = evaluate_run(model, &val, k, 0, reduction)?;
        reports.push(r.best);
        if k == 5 {
            reports.push(r.mean);
        }
    }
    let refs: Vec<_> = reports.iter().collect();
    print!("{}", render_table(&model.config.task_label(), &refs));
    Ok(())
}
