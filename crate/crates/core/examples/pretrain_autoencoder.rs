//! Pretrains the frame autoencoder, freezes its encoder, saves it and maps
//! a clip onto the learned feature manifold.
//!
//! ```text
//! cargo run --release -p vidpred --example pretrain_autoencoder -- [steps]
//! ```

use vidpred::adversary::{pretrain_autoencoder, AutoencoderConfig, ManifoldEncoder};
use vidpred::data::{generate_moving_sprites, GlyphSource, MovingSpriteSpec};

fn main() -> vidpred::Result<()> {
    let steps = std::env::args().nth(1).map_or(300, |s| s.parse().expect("steps"));
    let spec = MovingSpriteSpec {
        canvas: (32, 32),
        n_sprites: 1,
        glyphs: GlyphSource::Digits { size: 12 },
        ..Default::default()
    };
    let clips: Vec<_> = (0..64)
        .map(|i| generate_moving_sprites(&spec.with_seed(i), 10))
        .collect::<vidpred::Result<_>>()?;
    let config = AutoencoderConfig {
        feature_dim: 32,
        steps,
        ..Default::default()
    };
    let pre = pretrain_autoencoder(&clips, &config)?;
    println!(
        "held-out reconstruction mse {:.5} -> {:.5}",
        pre.initial_heldout_mse, pre.final_heldout_mse
    );

    let path = std::env::temp_dir().join("vidpred_autoencoder.ckpt");
    pre.encoder.save(&path)?;
    let encoder = ManifoldEncoder::load(&path)?;
    assert!(encoder.is_frozen());
    println!("frozen encoder digest {}", encoder.digest());

    let features = encoder.manifold_map(&clips[0])?;
    println!(
        "clip {} maps to {:?} features (time x dim)",
        clips[0].id(),
        features.shape()
    );
    Ok(())
}
