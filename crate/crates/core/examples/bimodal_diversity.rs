//! Trains on a two-mode set where a resting digit moves either left or right,
//! then counts the directions among 50 prior-sampled futures of one context.
//!
//! ```text
//! cargo run --release -p vidpred --example bimodal_diversity -- [steps]
//! ```

use vidpred::train::{direction_counts, fit, presets, FitOptions, Trainer};

fn main() -> vidpred::Result<()> {
    let mut cfg = presets::bimodal();
    if let Some(steps) = std::env::args().nth(1) {
        cfg.steps = steps.parse().expect("steps");
    }
    let out = std::env::temp_dir().join("vidpred_bimodal");
    let summary = fit(
        &cfg,
        &out,
        &FitOptions {
            resume: false,
            report_every: 50,
        },
    )?;
    let trainer = Trainer::load(&summary.checkpoint)?;
    let (_, val, _) = cfg.windows()?;
    let counts = direction_counts(&trainer.model, &val[0].context, cfg.generator.horizon, 50, 1)?;
    println!(
        "50 prior samples: {} left, {} right, {} undecided (minority share {:.0}%)",
        counts.left,
        counts.right,
        counts.undecided,
        100.0 * counts.minority_share()
    );
    Ok(())
}
