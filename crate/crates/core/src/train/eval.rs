use serde::{Deserialize, Serialize};
use vidpred_autograd::Tensor;

use super::trainer::Model;
use crate::data::{displacement_direction, Direction, VideoSequence, Window};
use crate::latent::prior_latents;
use crate::metrics::{per_timestep, task_label, MetricsReport, Reduction, SequenceMetrics};
use crate::{Error, Result};

/// Best-per-metric and mean-over-samples reports of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub best: MetricsReport,
    pub mean: MetricsReport,
    /// `(mse, psnr, ssim)` per predicted step, averaged over windows and samples.
    pub per_timestep: Vec<[f64; 3]>,
}

/// Seed of the `j`-th prior sample; shared by every window so duplicated
/// windows score identically and the sample set for `k` is a prefix of `k + 1`.
pub fn sample_seed(seed: u64, j: usize) -> u64 {
    seed ^ (j as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Per-sample latents, stacked into `[k, d_z]` per step.
fn batched_latents(seed: u64, k: usize, horizon: usize, d_z: usize) -> Result<Vec<Tensor>> {
    let per_sample: Vec<Vec<Tensor>> = (0..k)
        .map(|j| prior_latents(sample_seed(seed, j), 1, horizon, d_z))
        .collect();
    (0..horizon)
        .map(|t| {
            let rows: Vec<Tensor> = per_sample.iter().map(|s| s[t].clone()).collect();
            Ok(Tensor::stack(&rows)?.reshape(&[k, d_z])?)
        })
        .collect()
}

/// Draws `samples` prior futures per window and scores the best per metric
/// (lowest MSE, highest PSNR and SSIM) alongside the sample mean.
pub fn evaluate_run(model: &Model, windows: &[Window], samples: usize, seed: u64, reduction: Reduction) -> Result<EvalReport> {
    if samples == 0 {
        return Err(Error::config("samples", "must be at least 1"));
    }
    if windows.is_empty() {
        return Err(Error::Empty("no test windows".into()));
    }
    let horizon = windows[0].target.len();
    let d_z = model.config.generator.d_z;
    let latents = batched_latents(seed, samples, horizon, d_z)?;
    let mut best = Vec::with_capacity(windows.len());
    let mut mean = Vec::with_capacity(windows.len());
    let mut curves = vec![[0.0; 3]; horizon];
    for w in windows {
        let context: Vec<&VideoSequence> = vec![&w.context; samples];
        let preds = model.rollout(&context, &latents)?;
        let scores = preds
            .iter()
            .map(|p| SequenceMetrics::compute(w.id(), p, &w.target, reduction))
            .collect::<Result<Vec<_>>>()?;
        for p in &preds {
            for (acc, step) in curves.iter_mut().zip(per_timestep(p, &w.target)?) {
                for (a, v) in acc.iter_mut().zip(step) {
                    *a += v;
                }
            }
        }
        let n = scores.len() as f64;
        let fold = |init: f64, pick: fn(f64, f64) -> f64, get: fn(&SequenceMetrics) -> f64| {
            scores.iter().map(get).fold(init, pick)
        };
        best.push(SequenceMetrics {
            id: w.id().to_string(),
            mse: fold(f64::INFINITY, f64::min, |s| s.mse),
            psnr: fold(f64::NEG_INFINITY, f64::max, |s| s.psnr),
            ssim: fold(f64::NEG_INFINITY, f64::max, |s| s.ssim),
        });
        mean.push(SequenceMetrics {
            id: w.id().to_string(),
            mse: fold(0.0, |a, b| a + b, |s| s.mse) / n,
            psnr: fold(0.0, |a, b| a + b, |s| s.psnr) / n,
            ssim: fold(0.0, |a, b| a + b, |s| s.ssim) / n,
        });
    }
    let total = (windows.len() * samples) as f64;
    let per_timestep = curves.into_iter().map(|c| c.map(|v| v / total)).collect();
    let task = task_label(windows[0].context.len(), horizon);
    let name = &model.config.model_name;
    Ok(EvalReport {
        samples,
        best: MetricsReport::from_rows(format!("{name} (best of {samples})"), task.clone(), best)?,
        mean: MetricsReport::from_rows(format!("{name} (mean of {samples})"), task, mean)?,
        per_timestep,
    })
}

/// How many prior samples move left, right, or neither.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionCounts {
    pub left: usize,
    pub right: usize,
    pub undecided: usize,
}

impl DirectionCounts {
    pub fn total(&self) -> usize {
        self.left + self.right + self.undecided
    }

    /// Share of the rarer of the two directions.
    pub fn minority_share(&self) -> f64 {
        self.left.min(self.right) as f64 / self.total().max(1) as f64
    }
}

/// Classifies `samples` prior futures of one context by the horizontal
/// center-of-mass shift from the last context frame to the last predicted one.
pub fn direction_counts(model: &Model, context: &VideoSequence, horizon: usize, samples: usize, seed: u64) -> Result<DirectionCounts> {
    let latents = batched_latents(seed, samples, horizon, model.config.generator.d_z)?;
    let preds = model.rollout(&vec![context; samples], &latents)?;
    let mut counts = DirectionCounts::default();
    for p in preds {
        let clip = context.concat(&p)?;
        match displacement_direction(&clip, context.len() - 1, clip.len() - 1) {
            Some(Direction::Left) => counts.left += 1,
            Some(Direction::Right) => counts.right += 1,
            None => counts.undecided += 1,
        }
    }
    Ok(counts)
}
