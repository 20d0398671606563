//! Named desk-scale configurations.

use super::config::{DatasetConfig, ModelConfig, ValidationConfig};
use crate::adversary::{AdversaryConfig, AutoencoderConfig};
use crate::data::{GlyphSource, MovingSpriteSpec};
use crate::generator::GeneratorConfig;
use crate::losses::L1Norm;

/// One 12px digit bouncing on a 32x32 canvas, 5 -> 5, two scales, 16 channels.
pub fn toy_sprites() -> ModelConfig {
    ModelConfig {
        generator: GeneratorConfig {
            image_channels: 1,
            n_scales: 2,
            base_channels: 16,
            context_len: 5,
            horizon: 5,
            d_z: 4,
            bank_capacity: 3,
            temporal_window: 2,
            ..Default::default()
        },
        latent_channels: [8, 16],
        adversary: AdversaryConfig {
            video_widths: [8, 16],
            manifold_width: 32,
            share_dvae_weights: false,
        },
        autoencoder: AutoencoderConfig {
            feature_dim: 32,
            channels: [8, 16],
            steps: 400,
            batch: 16,
            ..Default::default()
        },
        batch_size: 4,
        steps: 2000,
        seed: 0,
        l1_norm: L1Norm::Sum,
        dataset: DatasetConfig::Generated {
            spec: MovingSpriteSpec {
                canvas: (32, 32),
                n_sprites: 1,
                speed: 2.0,
                glyphs: GlyphSource::Digits { size: 12 },
                seed: 0,
            },
            train_count: 1000,
            val_count: 16,
            length: None,
        },
        validation: ValidationConfig {
            every: 20,
            windows: 16,
            seed: 12345,
        },
        ..Default::default()
    }
}

/// A digit resting at the center of a 16x16 canvas for four frames, then
/// moving left or right with equal probability for four frames.
pub fn bimodal() -> ModelConfig {
    ModelConfig {
        generator: GeneratorConfig {
            image_channels: 1,
            n_scales: 1,
            base_channels: 8,
            context_len: 4,
            horizon: 4,
            d_z: 2,
            bank_capacity: 2,
            temporal_window: 2,
            ..Default::default()
        },
        latent_channels: [8, 8],
        adversary: AdversaryConfig {
            video_widths: [8, 16],
            manifold_width: 16,
            share_dvae_weights: false,
        },
        autoencoder: AutoencoderConfig {
            feature_dim: 16,
            channels: [8, 16],
            steps: 200,
            batch: 16,
            ..Default::default()
        },
        batch_size: 8,
        steps: 2000,
        seed: 0,
        l1_norm: L1Norm::Sum,
        dataset: DatasetConfig::Bimodal {
            canvas: (16, 16),
            glyph_size: 6,
            digit: 1,
            speed: 2.0,
            train_count: 64,
            val_count: 8,
            seed: 0,
        },
        validation: ValidationConfig {
            every: 0,
            windows: 8,
            seed: 12345,
        },
        ..Default::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_load() {
        for cfg in [toy_sprites(), bimodal()] {
            cfg.validate().unwrap();
        }
        let (train, _, splits) = bimodal().windows().unwrap();
        assert_eq!(train.len(), 64);
        assert_eq!(splits.train_directions.len(), 64);
    }
}
