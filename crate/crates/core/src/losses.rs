//! Reconstruction, KL and manifold-guided adversarial losses and their
//! weighted combination.

use serde::{Deserialize, Serialize};
use vidpred_autograd::{stack_time, ParamSet, Var};

use crate::adversary::{DiscriminatorHead, ManifoldEncoder};
use crate::data::VideoSequence;
use crate::latent::{kl_to_prior, GaussianParams, GaussianVars};
use crate::{Error, Result};

/// Score clamp applied before every logarithm.
pub const SCORE_EPS: f64 = 1e-7;

/// Normalization of the L1 reconstruction term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Norm {
    /// Mean over elements and time.
    #[default]
    Mean,
    /// Sum over elements and time, averaged over the batch.
    Sum,
}

pub fn l1_loss(pred: &VideoSequence, target: &VideoSequence, norm: L1Norm) -> Result<f64> {
    pred.expect_same_shape(target)?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(match norm {
        L1Norm::Mean => total / pred.data().len() as f64,
        L1Norm::Sum => total,
    })
}

/// Mean over time of the per-step KL to the standard-normal prior.
pub fn kl_loss(posteriors: &[GaussianParams]) -> Result<f64> {
    if posteriors.is_empty() {
        return Err(Error::Empty("no posteriors".into()));
    }
    Ok(posteriors.iter().map(kl_to_prior).sum::<f64>() / posteriors.len() as f64)
}

/// Realness scores of one adversarial pair of heads, one entry per batch element.
#[derive(Clone, Debug, PartialEq)]
pub struct PairScores {
    pub real: Vec<f64>,
    pub real_manifold: Vec<f64>,
    pub fake: Vec<f64>,
    pub fake_manifold: Vec<f64>,
}

fn clamped_ln(s: f64) -> f64 {
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS).ln()
}

fn mean(v: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    v.iter().map(|&s| f(s)).sum::<f64>() / v.len() as f64
}

/// `(d_objective, g_objective)` from scores. The discriminators maximize
/// `d_objective`; the generator minimizes the non-saturating `g_objective`.
pub fn mggan_objectives(s: &PairScores) -> Result<(f64, f64)> {
    let n = s.real.len();
    if n == 0 || [s.real_manifold.len(), s.fake.len(), s.fake_manifold.len()] != [n; 3] {
        return Err(Error::ShapeMismatch("score vectors must be nonempty and equally long".into()));
    }
    let d = mean(&s.real, clamped_ln)
        + mean(&s.real_manifold, clamped_ln)
        + mean(&s.fake, |x| clamped_ln(1.0 - x))
        + mean(&s.fake_manifold, |x| clamped_ln(1.0 - x));
    let g = -mean(&s.fake, clamped_ln) - mean(&s.fake_manifold, clamped_ln);
    Ok((d, g))
}

/// Scores real and fake clips with a video head and a manifold head and
/// returns `(d_objective, g_objective)`.
pub fn mggan_loss(
    d: (&DiscriminatorHead, &ParamSet),
    d_m: (&DiscriminatorHead, &ParamSet),
    enc: &ManifoldEncoder,
    real: &[&VideoSequence],
    fake: &[&VideoSequence],
) -> Result<(f64, f64)> {
    if !enc.is_frozen() {
        return Err(Error::Misuse("manifold encoder must be frozen".into()));
    }
    if real.len() != fake.len() {
        return Err(Error::ShapeMismatch("real and fake batches differ in size".into()));
    }
    for (r, f) in real.iter().zip(fake) {
        r.expect_same_shape(f)?;
    }
    let feats = |seqs: &[&VideoSequence]| -> Result<Vec<vidpred_autograd::Tensor>> {
        seqs.iter().map(|s| enc.manifold_map(s)).collect()
    };
    let (rf, ff) = (feats(real)?, feats(fake)?);
    let scores = PairScores {
        real: d.0.discriminate(d.1, real)?,
        real_manifold: d_m.0.discriminate_features(d_m.1, &rf.iter().collect::<Vec<_>>())?,
        fake: d.0.discriminate(d.1, fake)?,
        fake_manifold: d_m.0.discriminate_features(d_m.1, &ff.iter().collect::<Vec<_>>())?,
    };
    mggan_objectives(&scores)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub kl: f64,
    pub mggan1: f64,
    pub mggan2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 0.25,
            kl: 0.2,
            mggan1: 0.3,
            mggan2: 0.3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, w) in [
            ("lambda_l1", self.l1),
            ("lambda_kl", self.kl),
            ("lambda_mggan1", self.mggan1),
            ("lambda_mggan2", self.mggan2),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::config(field, format!("weight must be finite and nonnegative, got {w}")));
            }
        }
        Ok(())
    }

    pub fn adversarial(&self) -> bool {
        self.mggan1 > 0.0 || self.mggan2 > 0.0
    }
}

/// The four loss components before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub l1: f64,
    pub kl: f64,
    pub mggan1: f64,
    pub mggan2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub kl: f64,
    pub mggan1: f64,
    pub mggan2: f64,
    pub combined: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l1, self.kl, self.mggan1, self.mggan2, self.combined]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn combined_loss(parts: LossParts, weights: LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    Ok(LossBreakdown {
        l1: parts.l1,
        kl: parts.kl,
        mggan1: parts.mggan1,
        mggan2: parts.mggan2,
        combined: weights.l1 * parts.l1
            + weights.kl * parts.kl
            + weights.mggan1 * parts.mggan1
            + weights.mggan2 * parts.mggan2,
        weights,
    })
}

/// Graph L1 over per-timestep `[B, ...]` frames.
pub fn l1_var<'g>(pred: &[Var<'g>], target: &[Var<'g>], norm: L1Norm) -> Var<'g> {
    let p = stack_time(pred);
    let t = stack_time(target);
    let diff = p.sub(t).abs();
    match norm {
        L1Norm::Mean => diff.mean(),
        L1Norm::Sum => {
            let batch = p.shape()[0] as f64;
            diff.sum().scale(1.0 / batch)
        }
    }
}

/// Graph KL: mean over time of the batch-mean KL per step.
pub fn kl_var<'g>(posteriors: &[GaussianVars<'g>]) -> Var<'g> {
    let n = posteriors.len() as f64;
    let mut total = posteriors[0].kl_to_prior();
    for p in &posteriors[1..] {
        total = total.add(p.kl_to_prior());
    }
    total.scale(1.0 / n)
}

fn ln_clamped(s: Var<'_>) -> Var<'_> {
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS).ln().mean()
}

/// Graph form of the discriminator objective from `[B, 1]` score nodes.
pub fn mggan_d_var<'g>(real: Var<'g>, real_m: Var<'g>, fake: Var<'g>, fake_m: Var<'g>) -> Var<'g> {
    ln_clamped(real)
        .add(ln_clamped(real_m))
        .add(ln_clamped(fake.one_minus()))
        .add(ln_clamped(fake_m.one_minus()))
}

/// Graph form of the non-saturating generator objective.
pub fn mggan_g_var<'g>(fake: Var<'g>, fake_m: Var<'g>) -> Var<'g> {
    ln_clamped(fake).add(ln_clamped(fake_m)).scale(-1.0)
}
