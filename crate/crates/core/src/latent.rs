//! Variational pathway: frame-pair posterior encoder, reparameterized
//! sampling and the KL divergence to a fixed standard-normal prior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use vidpred_autograd::{concat, Bound, Graph, ParamSet, Tensor, Var};

use crate::layers::{Conv, Dense, LEAK};
use crate::{Error, Result};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Diagonal Gaussian over one latent vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianParams {
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            logvar: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `mean + exp(logvar / 2) * noise`.
pub fn sample(g: &GaussianParams, noise: &[f64]) -> Vec<f64> {
    g.mean
        .iter()
        .zip(&g.logvar)
        .zip(noise)
        .map(|((m, lv), n)| m + (lv / 2.0).exp() * n)
        .collect()
}

/// Closed-form `KL(N(mean, exp(logvar)) || N(0, I))`, summed over dimensions.
pub fn kl_to_prior(g: &GaussianParams) -> f64 {
    g.mean
        .iter()
        .zip(&g.logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// Batched Gaussian on the graph: `mean` and `logvar` are `[B, d_z]`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVars<'g> {
    pub mean: Var<'g>,
    pub logvar: Var<'g>,
}

impl<'g> GaussianVars<'g> {
    pub fn sample(&self, noise: Var<'g>) -> Var<'g> {
        self.mean.add(self.logvar.scale(0.5).exp().mul(noise))
    }

    /// KL to the standard normal, summed over dimensions and averaged over the batch.
    pub fn kl_to_prior(&self) -> Var<'g> {
        let batch = self.mean.shape()[0] as f64;
        let terms = self
            .mean
            .mul(self.mean)
            .add(self.logvar.exp())
            .sub(self.logvar)
            .shift(-1.0);
        terms.sum().scale(0.5 / batch)
    }

    /// Splits into per-batch-row [`GaussianParams`].
    pub fn to_params(&self) -> Vec<GaussianParams> {
        let mean = self.mean.value();
        let logvar = self.logvar.value();
        let d = mean.shape()[1];
        (0..mean.shape()[0])
            .map(|b| GaussianParams {
                mean: mean.data()[b * d..(b + 1) * d].to_vec(),
                logvar: logvar.data()[b * d..(b + 1) * d].to_vec(),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentConfig {
    pub d_z: usize,
    pub channels: [usize; 2],
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            d_z: 8,
            channels: [16, 32],
        }
    }
}

/// Convolutional encoder of a channel-stacked frame pair to `(mean, logvar)`.
#[derive(Clone, Debug)]
pub struct PosteriorEncoder {
    pub config: LatentConfig,
    image_channels: usize,
    conv1: Conv,
    conv2: Conv,
    head: Dense,
}

impl PosteriorEncoder {
    pub fn new<R: Rng + ?Sized>(
        config: LatentConfig,
        image_channels: usize,
        rng: &mut R,
    ) -> (Self, ParamSet) {
        let mut params = ParamSet::new();
        let [c1, c2] = config.channels;
        let conv1 = Conv::planar(&mut params, "pair.conv1", 2 * image_channels, c1, 3, 2, true, rng);
        let conv2 = Conv::planar(&mut params, "pair.conv2", c1, c2, 3, 2, true, rng);
        let head = Dense::new(&mut params, "pair.head", c2, 2 * config.d_z, rng);
        (
            Self {
                config,
                image_channels,
                conv1,
                conv2,
                head,
            },
            params,
        )
    }

    pub fn d_z(&self) -> usize {
        self.config.d_z
    }

    /// Posterior over the latent that explains the step `frame_a -> frame_b`,
    /// both `[B, C, H, W]`.
    pub fn encode<'g>(&self, p: &Bound<'g>, frame_a: Var<'g>, frame_b: Var<'g>) -> GaussianVars<'g> {
        let x = concat(&[frame_a, frame_b], 1);
        let h = self.conv1.apply(p, x).leaky_relu(LEAK);
        let h = self.conv2.apply(p, h).leaky_relu(LEAK);
        let stats = self.head.apply(p, h.mean_rest());
        let parts = stats.chunk(1, 2);
        GaussianVars {
            mean: parts[0],
            logvar: parts[1].clamp(LOGVAR_MIN, LOGVAR_MAX),
        }
    }

    fn check_frame(&self, t: &Tensor) -> Result<()> {
        let s = t.shape();
        if s.len() != 4 || s[1] != self.image_channels || s[2] < 4 || s[3] < 4 {
            return Err(Error::ShapeMismatch(format!(
                "pair encoder expects [B, {}, H, W] frames, got {s:?}",
                self.image_channels
            )));
        }
        Ok(())
    }

    /// Encodes `[B, C, H, W]` frame batches outside of training.
    pub fn encode_pair(
        &self,
        params: &ParamSet,
        frame_a: &Tensor,
        frame_b: &Tensor,
    ) -> Result<Vec<GaussianParams>> {
        self.check_frame(frame_a)?;
        if frame_a.shape() != frame_b.shape() {
            return Err(Error::ShapeMismatch(format!(
                "frame pair differs: {:?} vs {:?}",
                frame_a.shape(),
                frame_b.shape()
            )));
        }
        let g = Graph::new();
        let p = params.bind_frozen(&g);
        let out = self.encode(&p, g.constant(frame_a.clone()), g.constant(frame_b.clone()));
        Ok(out.to_params())
    }
}

/// Standard-normal `[batch, dim]` tensor.
pub fn standard_normal<R: Rng + ?Sized>(batch: usize, dim: usize, rng: &mut R) -> Tensor {
    let data = (0..batch * dim)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::new(&[batch, dim], data).expect("noise shape")
}

/// `horizon` prior latents `[batch, d_z]` drawn from a seeded stream.
pub fn prior_latents(seed: u64, batch: usize, horizon: usize, d_z: usize) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..horizon)
        .map(|_| standard_normal(batch, d_z, &mut rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::zero_params;
    use proptest::prelude::*;

    #[test]
    fn sampling_examples() {
        let g = GaussianParams {
            mean: vec![0.3, -1.0],
            logvar: vec![0.5, 1.0],
        };
        assert_eq!(sample(&g, &[0.0, 0.0]), g.mean);
        let std = GaussianParams::standard(3);
        assert_eq!(sample(&std, &[0.1, -2.0, 3.0]), vec![0.1, -2.0, 3.0]);
        let g = GaussianParams {
            mean: vec![1.0],
            logvar: vec![2.0 * 2f64.ln()],
        };
        assert!((sample(&g, &[0.5])[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_to_prior(&GaussianParams::standard(4)), 0.0);
        let shifted = GaussianParams {
            mean: vec![1.0],
            logvar: vec![0.0],
        };
        assert!((kl_to_prior(&shifted) - 0.5).abs() < 1e-15);
        let wide = GaussianParams {
            mean: vec![0.0],
            logvar: vec![1.0],
        };
        let expected = 0.5 * (std::f64::consts::E - 2.0);
        assert!((kl_to_prior(&wide) - expected).abs() < 1e-15);
        assert!((expected - 0.35914).abs() < 1e-5);
    }

    fn encoder() -> (PosteriorEncoder, ParamSet) {
        PosteriorEncoder::new(LatentConfig::default(), 1, &mut ChaCha8Rng::seed_from_u64(3))
    }

    fn frames(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(&[2, 1, 16, 16], 0.3, &mut rng).map(|v| v.abs().min(1.0))
    }

    #[test]
    fn encoding_is_deterministic_with_configured_width() {
        let (enc, params) = encoder();
        let a = enc.encode_pair(&params, &frames(1), &frames(2)).unwrap();
        let b = enc.encode_pair(&params, &frames(1), &frames(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].dim(), 8);
    }

    #[test]
    fn zero_encoder_gives_standard_normal() {
        let (enc, mut params) = encoder();
        zero_params(&mut params);
        let out = enc.encode_pair(&params, &frames(1), &frames(2)).unwrap();
        for g in out {
            assert!(g.mean.iter().all(|&v| v == 0.0));
            assert!(g.logvar.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mismatched_pair_is_rejected() {
        let (enc, params) = encoder();
        let small = Tensor::zeros(&[2, 1, 8, 8]);
        assert!(enc.encode_pair(&params, &frames(1), &small).is_err());
        let rgb = Tensor::zeros(&[2, 3, 16, 16]);
        assert!(enc.encode_pair(&params, &rgb, &rgb).is_err());
    }

    #[test]
    fn graph_kl_matches_closed_form() {
        let g = Graph::new();
        let mean = Tensor::new(&[2, 2], vec![0.5, -1.0, 0.0, 2.0]).unwrap();
        let logvar = Tensor::new(&[2, 2], vec![0.0, 1.0, -0.5, 0.3]).unwrap();
        let vars = GaussianVars {
            mean: g.constant(mean),
            logvar: g.constant(logvar),
        };
        let expected: f64 =
            vars.to_params().iter().map(kl_to_prior).sum::<f64>() / 2.0;
        assert!((vars.kl_to_prior().value().item() - expected).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(
            mean in proptest::collection::vec(-5.0f64..5.0, 1..6),
            lv in -10.0f64..10.0,
        ) {
            let g = GaussianParams { logvar: vec![lv; mean.len()], mean };
            prop_assert!(kl_to_prior(&g) >= 0.0);
        }
    }
}
