//! Saves a trainer mid-run, restores it, and checks that the next ten steps
//! are bit-identical to the uninterrupted run.
//!
//! ```text
//! cargo run --release -p vidpred --example checkpoint_resume
//! ```

use vidpred::adversary::pretrain_autoencoder;
use vidpred::train::{presets, Model, Trainer};

fn main() -> vidpred::Result<()> {
    let cfg = presets::bimodal();
    let (train, _, splits) = cfg.windows()?;
    let pre = pretrain_autoencoder(&splits.train, &cfg.autoencoder)?;
    let dir = std::env::temp_dir().join("vidpred_resume");
    std::fs::create_dir_all(&dir)?;
    let ae = dir.join("autoencoder.ckpt");
    pre.encoder.save(&ae)?;

    let mut trainer = Trainer::new(Model::new(cfg, pre.encoder)?);
    for _ in 0..5 {
        let batch = trainer.sample_batch(&train);
        trainer.train_step(&batch)?;
    }
    let ckpt = dir.join("model.ckpt");
    trainer.save(&ckpt, &ae)?;
    let mut restored = Trainer::load(&ckpt)?;

    let mut identical = true;
    for _ in 0..10 {
        let (a, b) = (trainer.sample_batch(&train), restored.sample_batch(&train));
        identical &= trainer.train_step(&a)? == restored.train_step(&b)?;
    }
    identical &= trainer.model.digests() == restored.model.digests();
    println!(
        "resumed at step 5, compared through step {}: {}",
        restored.step(),
        if identical { "bit-identical" } else { "DIVERGED" }
    );
    Ok(())
}
