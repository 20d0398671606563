use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::{AdversaryConfig, AutoencoderConfig};
use crate::data::{
    bimodal_sprites, generate_moving_sprites, load_dataset, make_windows_all, render_digit, Direction,
    MovingSpriteSpec, VideoSequence, Window, WindowSpec,
};
use crate::generator::GeneratorConfig;
use crate::latent::LatentConfig;
use crate::losses::{L1Norm, LossWeights};
use crate::metrics::{task_label, Reduction};
use crate::{Error, Result};

/// Seed offset of the validation split of generated datasets.
pub const VALIDATION_SEED_OFFSET: u64 = 1_000_000;

/// Where training and validation sequences come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Bouncing sprites; sequence `i` of the training split uses seed
    /// `spec.seed + i`, the validation split starts at `spec.seed + 1_000_000`.
    Generated {
        spec: MovingSpriteSpec,
        train_count: usize,
        val_count: usize,
        /// Frames per sequence; defaults to one window.
        #[serde(default)]
        length: Option<usize>,
    },
    /// A dataset directory with a manifest, or a directory of frame
    /// directories; the last `val_fraction` of sequences validate.
    Directory {
        path: PathBuf,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
    /// One digit resting at the center during context, then moving left or
    /// right with equal probability.
    Bimodal {
        canvas: (usize, usize),
        glyph_size: usize,
        #[serde(default)]
        digit: usize,
        speed: f64,
        train_count: usize,
        val_count: usize,
        seed: u64,
    },
}

fn default_val_fraction() -> f64 {
    0.1
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Generated {
            spec: MovingSpriteSpec::default(),
            train_count: 8000,
            val_count: 2000,
            length: None,
        }
    }
}

/// Training and validation sequences.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<VideoSequence>,
    pub val: Vec<VideoSequence>,
    /// Motion direction per sequence for two-mode datasets.
    pub train_directions: Vec<Direction>,
}

impl DatasetConfig {
    pub fn load(&self, context_len: usize, horizon: usize) -> Result<Splits> {
        let span = context_len + horizon;
        match self {
            DatasetConfig::Generated {
                spec,
                train_count,
                val_count,
                length,
            } => {
                let length = length.unwrap_or(span);
                let gen = |base: u64, n: usize| -> Result<Vec<VideoSequence>> {
                    (0..n as u64)
                        .map(|i| generate_moving_sprites(&spec.with_seed(base + i), length))
                        .collect()
                };
                Ok(Splits {
                    train: gen(spec.seed, *train_count)?,
                    val: gen(spec.seed + VALIDATION_SEED_OFFSET, *val_count)?,
                    train_directions: Vec::new(),
                })
            }
            DatasetConfig::Directory { path, val_fraction } => {
                if !path.is_dir() {
                    return Err(Error::config(
                        "dataset.path",
                        format!("{} is not a directory", path.display()),
                    ));
                }
                let seqs = load_dataset(path)?;
                if seqs.is_empty() {
                    return Err(Error::Empty(format!("no sequences under {}", path.display())));
                }
                let n_val = ((seqs.len() as f64 * val_fraction).round() as usize).min(seqs.len() - 1);
                let mut train = seqs;
                let val = train.split_off(train.len() - n_val);
                Ok(Splits {
                    train,
                    val,
                    train_directions: Vec::new(),
                })
            }
            DatasetConfig::Bimodal {
                canvas,
                glyph_size,
                digit,
                speed,
                train_count,
                val_count,
                seed,
            } => {
                let glyph = render_digit(*digit, *glyph_size);
                let make = |n, s| bimodal_sprites(*canvas, &glyph, context_len, horizon, *speed, n, s);
                let train = make(*train_count, *seed)?;
                let val = make(*val_count, seed + VALIDATION_SEED_OFFSET)?;
                Ok(Splits {
                    train_directions: train.iter().map(|(_, d)| *d).collect(),
                    train: train.into_iter().map(|(s, _)| s).collect(),
                    val: val.into_iter().map(|(s, _)| s).collect(),
                })
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DatasetConfig::Generated { train_count, .. } | DatasetConfig::Bimodal { train_count, .. }
                if *train_count == 0 =>
            {
                Err(Error::config("dataset.train_count", "must be positive"))
            }
            DatasetConfig::Directory { val_fraction, .. } if !(0.0..1.0).contains(val_fraction) => {
                Err(Error::config("dataset.val_fraction", "must lie in [0, 1)"))
            }
            DatasetConfig::Directory { path, .. } if path.as_os_str().is_empty() => {
                Err(Error::config("dataset.path", "is empty"))
            }
            _ => Ok(()),
        }
    }

    /// Makes relative directory paths relative to `base`.
    pub fn resolve(&mut self, base: &Path) {
        if let DatasetConfig::Directory { path, .. } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    /// Steps between validation passes; 0 disables them.
    pub every: u64,
    /// Number of validation windows scored.
    pub windows: usize,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            every: 50,
            windows: 16,
            seed: 12345,
        }
    }
}

/// Every architecture and training hyperparameter; embedded in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub latent_channels: [usize; 2],
    pub adversary: AdversaryConfig,
    pub autoencoder: AutoencoderConfig,
    /// Pretrained frozen encoder; pretrained during `fit` when absent.
    pub autoencoder_path: Option<PathBuf>,
    pub weights: LossWeights,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub dataset: DatasetConfig,
    /// Stride between training windows; defaults to `context_len + horizon`.
    pub window_stride: Option<usize>,
    /// The VAE-path discriminators score posterior rather than prior samples.
    pub vae_path_uses_posterior: bool,
    pub l1_norm: L1Norm,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub validation: ValidationConfig,
    /// Prior samples per test window in evaluation.
    pub eval_samples: usize,
    pub metrics_reduction: Reduction,
    pub model_name: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            latent_channels: LatentConfig::default().channels,
            adversary: AdversaryConfig::default(),
            autoencoder: AutoencoderConfig::default(),
            autoencoder_path: None,
            weights: LossWeights::default(),
            lr_generator: 2e-4,
            lr_discriminator: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 4,
            steps: 1000,
            seed: 0,
            dataset: DatasetConfig::default(),
            window_stride: None,
            vae_path_uses_posterior: false,
            l1_norm: L1Norm::Mean,
            checkpoint_every: 0,
            validation: ValidationConfig::default(),
            eval_samples: 5,
            metrics_reduction: Reduction::PerFrame,
            model_name: "E3D-MGGAN".into(),
        }
    }
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(json_field(&e), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.dataset.resolve(base);
            if let Some(p) = cfg.autoencoder_path.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn latent(&self) -> LatentConfig {
        LatentConfig {
            d_z: self.generator.d_z,
            channels: self.latent_channels,
        }
    }

    pub fn window_spec(&self) -> Result<WindowSpec> {
        let g = &self.generator;
        WindowSpec::new(
            g.context_len,
            g.horizon,
            self.window_stride.unwrap_or(g.context_len + g.horizon),
        )
    }

    pub fn task_label(&self) -> String {
        task_label(self.generator.context_len, self.generator.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator
            .validate()
            .map_err(|e| prefix_field("generator", e))?;
        if self.generator.horizon == 0 {
            return Err(Error::config("generator.horizon", "must be positive"));
        }
        if self.latent_channels.contains(&0) {
            return Err(Error::config("latent_channels", "must be positive"));
        }
        self.autoencoder
            .validate()
            .map_err(|e| prefix_field("autoencoder", e))?;
        self.weights.validate()?;
        for (field, v) in [
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be positive"));
            }
        }
        for (field, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.eval_samples == 0 {
            return Err(Error::config("eval_samples", "must be positive"));
        }
        if self.window_stride == Some(0) {
            return Err(Error::config("window_stride", "must be positive"));
        }
        self.dataset.validate()
    }

    /// Training and validation windows.
    pub fn windows(&self) -> Result<(Vec<Window>, Vec<Window>, Splits)> {
        let splits = self
            .dataset
            .load(self.generator.context_len, self.generator.horizon)?;
        let spec = self.window_spec()?;
        let train = make_windows_all(&splits.train, &spec).windows;
        if train.is_empty() {
            return Err(Error::Empty(format!(
                "no training sequence is {} frames long",
                spec.span()
            )));
        }
        let val = make_windows_all(&splits.val, &spec).windows;
        if let Some(first) = splits.train.first() {
            self.generator.check_frame_size(first.height(), first.width())?;
            if first.channels() != self.generator.image_channels {
                return Err(Error::config(
                    "generator.image_channels",
                    format!("dataset has {} channels", first.channels()),
                ));
            }
        }
        Ok((train, val, splits))
    }
}

fn prefix_field(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { field, message } => Error::config(format!("{prefix}.{field}"), message),
        other => other,
    }
}

/// Best-effort field name from a serde error message.
fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    for marker in ["unknown field `", "missing field `", "field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "config".to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(ModelConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(cfg.weights, LossWeights { l1: 0.25, kl: 0.2, mggan1: 0.3, mggan2: 0.3 });
    }

    #[test]
    fn errors_name_the_field() {
        let err = ModelConfig::from_json(r#"{"batch_size": 0}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "batch_size"), "{err}");
        let err = ModelConfig::from_json(r#"{"generator": {"n_scales": 0}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "generator.n_scales"), "{err}");
        let err = ModelConfig::from_json(r#"{"weights": {"l1": 1, "kl": 1, "mggan1": -1, "mggan2": 0}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "lambda_mggan1"), "{err}");
        let err = ModelConfig::from_json(r#"{"dataset": {"kind": "directory"}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "path"), "{err}");
    }

    #[test]
    fn generated_splits_use_disjoint_seed_ranges() {
        let cfg = ModelConfig {
            dataset: DatasetConfig::Generated {
                spec: MovingSpriteSpec {
                    canvas: (16, 16),
                    n_sprites: 1,
                    glyphs: crate::data::GlyphSource::Digits { size: 6 },
                    ..Default::default()
                },
                train_count: 3,
                val_count: 2,
                length: None,
            },
            generator: GeneratorConfig {
                n_scales: 1,
                context_len: 2,
                horizon: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        let (train, val, _) = cfg.windows().unwrap();
        assert_eq!((train.len(), val.len()), (3, 2));
        assert!(train.iter().all(|w| val.iter().all(|v| v.context != w.context)));
    }
}
