//! Multi-scale recurrent frame generator.
//!
//! Each scale sees the previous frame pooled to its resolution, the latent
//! broadcast over space and, above the coarsest scale, the upsampled coarser
//! prediction. A stride-2 encoder feeds a recurrent cell at half the scale's
//! resolution; the decoder upsamples the hidden map and mixes it with the
//! scale input. The coarsest scale emits `sigmoid(decoder)`, finer scales add
//! their decoder output to the upsampled coarse prediction.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use vidpred_autograd::{concat, Bound, Graph, ParamId, ParamSet, Tensor, Var};

use crate::data::VideoSequence;
use crate::e3d::{CellConfig, ConvLstmCell, E3dCell, LstmState, RecallState};
use crate::latent::{prior_latents, standard_normal, GaussianVars, PosteriorEncoder};
use crate::layers::{Conv, LEAK};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    #[default]
    E3d,
    ConvLstm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// `upsample(coarse) + residual`.
    #[default]
    Residual,
    /// `alpha * upsample(coarse) + beta * sigmoid(decoder)` with learned per-channel weights.
    LearnedBlend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub image_channels: usize,
    pub n_scales: usize,
    /// Channels `K` of every recurrent cell.
    pub base_channels: usize,
    pub context_len: usize,
    pub horizon: usize,
    pub d_z: usize,
    pub bank_capacity: usize,
    pub temporal_window: usize,
    pub cell: CellKind,
    pub combine: CombineMode,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            image_channels: 1,
            n_scales: 3,
            base_channels: 16,
            context_len: 10,
            horizon: 10,
            d_z: 8,
            bank_capacity: 5,
            temporal_window: 2,
            cell: CellKind::E3d,
            combine: CombineMode::Residual,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("n_scales", self.n_scales),
            ("base_channels", self.base_channels),
            ("context_len", self.context_len),
            ("bank_capacity", self.bank_capacity),
            ("temporal_window", self.temporal_window),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !matches!(self.image_channels, 1 | 3) {
            return Err(Error::config("image_channels", "must be 1 or 3"));
        }
        Ok(())
    }

    /// Frames must halve cleanly once per scale plus once inside the coarsest encoder.
    pub fn check_frame_size(&self, height: usize, width: usize) -> Result<()> {
        let unit = 1 << self.n_scales;
        if height % unit != 0 || width % unit != 0 {
            return Err(Error::config(
                "n_scales",
                format!("{height}x{width} frames are not divisible by {unit} for {} scales", self.n_scales),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Cell {
    E3d(E3dCell),
    Lstm(ConvLstmCell),
}

#[derive(Clone, Debug)]
enum CellState<'g> {
    E3d(RecallState<'g>),
    Lstm(LstmState<'g>),
}

#[derive(Clone, Debug)]
struct Scale {
    encoder: Conv,
    cell: Cell,
    decoder: Conv,
    blend: Option<(ParamId, ParamId)>,
}

/// Per-scale recurrent state of one rollout.
#[derive(Clone, Debug)]
pub struct GeneratorState<'g> {
    cells: Vec<CellState<'g>>,
}

impl GeneratorState<'_> {
    /// Bank lengths of the E3D cells, coarse to fine.
    pub fn bank_lens(&self) -> Vec<usize> {
        self.cells
            .iter()
            .filter_map(|c| match c {
                CellState::E3d(s) => Some(s.bank_len()),
                CellState::Lstm(_) => None,
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    scales: Vec<Scale>,
}

/// `upsample(coarse) + residual`, clamped to `[0, 1]` when `is_final`.
pub fn combine_scales<'g>(coarse: Var<'g>, residual: Var<'g>, is_final: bool) -> Var<'g> {
    let out = coarse.upsample2x().add(residual);
    if is_final {
        out.clamp(0.0, 1.0)
    } else {
        out
    }
}

/// Tensor form of [`combine_scales`] with a resolution check.
pub fn combine_scale_tensors(coarse: &Tensor, residual: &Tensor, is_final: bool) -> Result<Tensor> {
    let (c, r) = (coarse.shape(), residual.shape());
    if c.len() != 4 || r.len() != 4 || c[..2] != r[..2] || c[2] * 2 != r[2] || c[3] * 2 != r[3] {
        return Err(Error::ShapeMismatch(format!(
            "coarse {c:?} is not half the resolution of residual {r:?}"
        )));
    }
    let g = Graph::new();
    let out = combine_scales(g.constant(coarse.clone()), g.constant(residual.clone()), is_final);
    Ok((*out.value()).clone())
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(config: GeneratorConfig, rng: &mut R) -> Result<(Self, ParamSet)> {
        config.validate()?;
        let mut params = ParamSet::new();
        let (c, k) = (config.image_channels, config.base_channels);
        let mut scales = Vec::with_capacity(config.n_scales);
        for s in 0..config.n_scales {
            let name = format!("gen.s{s}");
            let in_ch = c + config.d_z + if s > 0 { c } else { 0 };
            let encoder = Conv::planar(&mut params, &format!("{name}.enc"), in_ch, k, 3, 2, true, rng);
            let cell = match config.cell {
                CellKind::E3d => Cell::E3d(E3dCell::new(
                    &mut params,
                    &format!("{name}.cell"),
                    CellConfig {
                        in_channels: k,
                        channels: k,
                        bank_capacity: config.bank_capacity,
                        temporal_window: config.temporal_window,
                        kernel: 3,
                    },
                    rng,
                )?),
                CellKind::ConvLstm => Cell::Lstm(ConvLstmCell::new(&mut params, &format!("{name}.cell"), k, k, 3, rng)),
            };
            let decoder = Conv::planar(&mut params, &format!("{name}.dec"), k + in_ch, c, 3, 1, true, rng);
            let blend = (s > 0 && config.combine == CombineMode::LearnedBlend).then(|| {
                (
                    params.add(format!("{name}.alpha"), Tensor::full(&[c], 0.5)),
                    params.add(format!("{name}.beta"), Tensor::full(&[c], 0.5)),
                )
            });
            scales.push(Scale {
                encoder,
                cell,
                decoder,
                blend,
            });
        }
        Ok((Self { config, scales }, params))
    }

    /// Copy of this generator that emits `horizon` frames.
    pub fn with_horizon(&self, horizon: usize) -> Self {
        let mut out = self.clone();
        out.config.horizon = horizon;
        out
    }

    pub fn initial_state<'g>(&self, graph: &'g Graph, batch: usize, height: usize, width: usize) -> GeneratorState<'g> {
        let n = self.scales.len();
        let cells = self
            .scales
            .iter()
            .enumerate()
            .map(|(s, scale)| {
                let f = 1 << (n - s);
                let (h, w) = (height / f, width / f);
                match &scale.cell {
                    Cell::E3d(c) => CellState::E3d(c.initial_state(graph, batch, h, w)),
                    Cell::Lstm(c) => CellState::Lstm(c.initial_state(graph, batch, h, w)),
                }
            })
            .collect();
        GeneratorState { cells }
    }

    /// One recurrent step from the previous frame `[B, C, H, W]` and latent `[B, d_z]`
    /// to the next frame.
    pub fn step<'g>(
        &self,
        p: &Bound<'g>,
        frame: Var<'g>,
        z: Var<'g>,
        state: GeneratorState<'g>,
    ) -> Result<(Var<'g>, GeneratorState<'g>)> {
        let n = self.scales.len();
        let mut pyramid = vec![frame];
        for _ in 1..n {
            let next = pyramid.last().unwrap().avgpool2x();
            pyramid.push(next);
        }
        let mut coarse: Option<Var<'g>> = None;
        let mut cells = Vec::with_capacity(n);
        for (s, (scale, cell_state)) in self.scales.iter().zip(state.cells).enumerate() {
            let f = pyramid[n - 1 - s];
            let fs = f.shape();
            let mut parts = vec![f, z.broadcast_rest(&[fs[2], fs[3]])];
            let up = coarse.map(|c| c.upsample2x());
            parts.extend(up);
            let input = concat(&parts, 1);
            let encoded = scale.encoder.apply(p, input).leaky_relu(LEAK);
            let (hidden, next) = match (&scale.cell, cell_state) {
                (Cell::E3d(c), CellState::E3d(st)) => {
                    let (h, st) = c.step(p, encoded, st)?;
                    (h, CellState::E3d(st))
                }
                (Cell::Lstm(c), CellState::Lstm(st)) => {
                    let (h, st) = c.step(p, encoded, st)?;
                    (h, CellState::Lstm(st))
                }
                _ => return Err(Error::Misuse("generator state does not match its cells".into())),
            };
            cells.push(next);
            let decoded = scale
                .decoder
                .apply(p, concat(&[hidden.upsample2x(), input], 1));
            let is_final = s + 1 == n;
            let pred = match (coarse, scale.blend) {
                (None, _) => decoded.sigmoid(),
                (Some(c), None) => combine_scales(c, decoded, is_final),
                (Some(_), Some((alpha, beta))) => {
                    let mixed = up
                        .unwrap()
                        .channel_affine(Some(p[alpha]), None)
                        .add(decoded.sigmoid().channel_affine(Some(p[beta]), None));
                    if is_final {
                        mixed.clamp(0.0, 1.0)
                    } else {
                        mixed
                    }
                }
            };
            coarse = Some(pred);
        }
        Ok((coarse.unwrap(), GeneratorState { cells }))
    }

    fn check_rollout(&self, context: &[Var<'_>], latents: &[Var<'_>]) -> Result<()> {
        if context.is_empty() {
            return Err(Error::config("context_len", "rollout needs at least one context frame"));
        }
        if latents.len() != self.config.horizon {
            return Err(Error::config(
                "horizon",
                format!("expected {} latents, got {}", self.config.horizon, latents.len()),
            ));
        }
        let s = context[0].shape();
        if s.len() != 4 || s[1] != self.config.image_channels {
            return Err(Error::ShapeMismatch(format!(
                "context frames must be [B, {}, H, W], got {s:?}",
                self.config.image_channels
            )));
        }
        self.config.check_frame_size(s[2], s[3])?;
        for z in latents {
            if z.shape() != [s[0], self.config.d_z] {
                return Err(Error::ShapeMismatch(format!(
                    "latent must be [{}, {}], got {:?}",
                    s[0],
                    self.config.d_z,
                    z.shape()
                )));
            }
        }
        Ok(())
    }

    /// Warms up on the context frames, then emits one frame per latent,
    /// each step fed the previous emitted frame.
    pub fn rollout<'g>(&self, p: &Bound<'g>, context: &[Var<'g>], latents: &[Var<'g>]) -> Result<Vec<Var<'g>>> {
        self.check_rollout(context, latents)?;
        if latents.is_empty() {
            return Ok(Vec::new());
        }
        let graph = context[0].graph();
        let s = context[0].shape();
        let mut state = self.initial_state(graph, s[0], s[2], s[3]);
        let warmup_z = graph.constant(Tensor::zeros(&[s[0], self.config.d_z]));
        for &frame in &context[..context.len() - 1] {
            state = self.step(p, frame, warmup_z, state)?.1;
        }
        let mut frame = *context.last().unwrap();
        let mut out = Vec::with_capacity(latents.len());
        for &z in latents {
            let (pred, next) = self.step(p, frame, z, state)?;
            state = next;
            frame = pred;
            out.push(pred);
        }
        Ok(out)
    }

    /// Rollout over whole sequences outside of training.
    pub fn rollout_sequences(
        &self,
        params: &ParamSet,
        context: &[&VideoSequence],
        latents: &[Tensor],
    ) -> Result<Vec<VideoSequence>> {
        let g = Graph::new();
        let p = params.bind_frozen(&g);
        let ctx = context_vars(&g, context)?;
        let zs: Vec<Var<'_>> = latents.iter().map(|z| g.constant(z.clone())).collect();
        let frames = self.rollout(&p, &ctx, &zs)?;
        let ids: Vec<String> = context.iter().map(|s| s.id().to_string()).collect();
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        let frames: Vec<Tensor> = frames.iter().map(|f| (*f.value()).clone()).collect();
        VideoSequence::from_batch_frames(&ids, &frames)
    }

    /// Predicts `horizon` frames for each context sequence.
    pub fn predict(&self, params: &ParamSet, context: &[&VideoSequence], latents: LatentSource<'_>) -> Result<Vec<VideoSequence>> {
        if context.is_empty() {
            return Err(Error::Empty("no context sequences".into()));
        }
        let batch = context.len();
        let zs = match latents {
            LatentSource::Prior { seed } => prior_latents(seed, batch, self.config.horizon, self.config.d_z),
            LatentSource::Posterior { encoder, params: enc_params, targets, seed } => {
                let targets = targets.ok_or_else(|| Error::Misuse("posterior sampling needs ground-truth targets".into()))?;
                let g = Graph::new();
                let pe = enc_params.bind_frozen(&g);
                let ctx = context_vars(&g, context)?;
                let tgt = context_vars(&g, targets)?;
                if tgt.len() < self.config.horizon {
                    return Err(Error::ShapeMismatch(format!(
                        "targets have {} frames, horizon is {}",
                        tgt.len(),
                        self.config.horizon
                    )));
                }
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let noise: Vec<Var<'_>> = (0..self.config.horizon)
                    .map(|_| g.constant(standard_normal(batch, self.config.d_z, &mut rng)))
                    .collect();
                let (zs, _) = posterior_latents(encoder, &pe, *ctx.last().unwrap(), &tgt[..self.config.horizon], &noise);
                zs.iter().map(|z| (*z.value()).clone()).collect()
            }
        };
        self.rollout_sequences(params, context, &zs)
    }
}

/// Where the per-step latents of [`Generator::predict`] come from.
#[derive(Clone, Copy, Debug)]
pub enum LatentSource<'a> {
    Prior {
        seed: u64,
    },
    Posterior {
        encoder: &'a PosteriorEncoder,
        params: &'a ParamSet,
        targets: Option<&'a [&'a VideoSequence]>,
        seed: u64,
    },
}

/// Per-timestep `[B, C, H, W]` constants from equally shaped sequences.
pub fn context_vars<'g>(graph: &'g Graph, seqs: &[&VideoSequence]) -> Result<Vec<Var<'g>>> {
    let first = seqs.first().ok_or_else(|| Error::Empty("no sequences".into()))?;
    for s in &seqs[1..] {
        first.expect_same_shape(s)?;
    }
    Ok((0..first.len())
        .map(|t| graph.constant(VideoSequence::batch_frame(seqs, t)))
        .collect())
}

/// Posterior latents for each target frame, encoding the pair (previous ground truth, target).
pub fn posterior_latents<'g>(
    encoder: &PosteriorEncoder,
    p: &Bound<'g>,
    last_context: Var<'g>,
    targets: &[Var<'g>],
    noise: &[Var<'g>],
) -> (Vec<Var<'g>>, Vec<GaussianVars<'g>>) {
    let mut prev = last_context;
    let mut zs = Vec::with_capacity(targets.len());
    let mut posts = Vec::with_capacity(targets.len());
    for (&target, &eps) in targets.iter().zip(noise) {
        let post = encoder.encode(p, prev, target);
        zs.push(post.sample(eps));
        posts.push(post);
        prev = target;
    }
    (zs, posts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn tiny(n_scales: usize, horizon: usize) -> GeneratorConfig {
        GeneratorConfig {
            n_scales,
            base_channels: 4,
            context_len: 3,
            horizon,
            d_z: 2,
            bank_capacity: 3,
            ..Default::default()
        }
    }

    fn seq(seed: u64, t: usize, hw: usize) -> VideoSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..t * hw * hw).map(|_| rand::RngExt::random::<f64>(&mut rng)).collect();
        VideoSequence::new(format!("s{seed}"), [t, hw, hw, 1], data).unwrap()
    }

    #[test]
    fn combine_examples() {
        let coarse = Tensor::full(&[1, 1, 4, 4], 0.5);
        let zero = Tensor::zeros(&[1, 1, 8, 8]);
        let up = combine_scale_tensors(&coarse, &zero, true).unwrap();
        assert!(up.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let r = Tensor::randn(&[1, 1, 8, 8], 0.2, &mut ChaCha8Rng::seed_from_u64(1)).map(|v| v.abs());
        let out = combine_scale_tensors(&Tensor::zeros(&[1, 1, 4, 4]), &r, false).unwrap();
        assert_eq!(out, r);
        assert!(combine_scale_tensors(&coarse, &Tensor::zeros(&[1, 1, 6, 8]), true).is_err());
    }

    #[test]
    fn rollout_shape_range_and_determinism() {
        let (gen, params) = Generator::new(tiny(2, 4), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let ctx = [seq(1, 3, 16), seq(2, 3, 16)];
        let refs: Vec<&VideoSequence> = ctx.iter().collect();
        let a = gen.predict(&params, &refs, LatentSource::Prior { seed: 9 }).unwrap();
        let b = gen.predict(&params, &refs, LatentSource::Prior { seed: 9 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].shape(), [4, 16, 16, 1]);
        assert!(a.iter().all(|s| s.data().iter().all(|v| (0.0..=1.0).contains(v))));
        let c = gen.predict(&params, &refs, LatentSource::Prior { seed: 10 }).unwrap();
        assert_ne!(a[0].data(), c[0].data());
    }

    #[test]
    fn zero_horizon_is_empty() {
        let (gen, params) = Generator::new(tiny(1, 0), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let ctx = seq(1, 3, 8);
        assert!(gen.predict(&params, &[&ctx], LatentSource::Prior { seed: 0 }).unwrap().is_empty());
    }

    #[test]
    fn latent_count_mismatch_is_an_error() {
        let (gen, params) = Generator::new(tiny(1, 3), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let ctx = seq(1, 3, 8);
        let zs = prior_latents(0, 1, 2, 2);
        assert!(matches!(gen.rollout_sequences(&params, &[&ctx], &zs), Err(Error::Config { .. })));
    }

    #[test]
    fn posterior_mode_needs_targets() {
        let (gen, params) = Generator::new(tiny(1, 2), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (enc, enc_params) = PosteriorEncoder::new(
            crate::latent::LatentConfig { d_z: 2, channels: [4, 4] },
            1,
            &mut ChaCha8Rng::seed_from_u64(4),
        );
        let ctx = seq(1, 3, 8);
        let src = LatentSource::Posterior {
            encoder: &enc,
            params: &enc_params,
            targets: None,
            seed: 0,
        };
        assert!(matches!(gen.predict(&params, &[&ctx], src), Err(Error::Misuse(_))));
        let tgt = seq(2, 2, 8);
        let src = LatentSource::Posterior {
            encoder: &enc,
            params: &enc_params,
            targets: Some(&[&tgt]),
            seed: 0,
        };
        assert_eq!(gen.predict(&params, &[&ctx], src).unwrap()[0].len(), 2);
    }

    #[test]
    fn indivisible_frames_are_rejected() {
        let (gen, params) = Generator::new(tiny(2, 1), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let ctx = seq(1, 3, 10);
        assert!(gen.predict(&params, &[&ctx], LatentSource::Prior { seed: 0 }).is_err());
    }

    #[test]
    fn telescoping_with_zero_residuals() {
        let (gen, mut params) = Generator::new(tiny(3, 2), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let fine: Vec<_> = params
            .ids()
            .filter(|&id| !params.name(id).starts_with("gen.s0."))
            .collect();
        for id in fine {
            params.get_mut(id).data_mut().fill(0.0);
        }
        let ctx = seq(3, 3, 16);
        let g = Graph::new();
        let p = params.bind_frozen(&g);
        let frame = g.constant(VideoSequence::batch_frame(&[&ctx], 0));
        let z = g.constant(Tensor::zeros(&[1, 2]));
        let state = gen.initial_state(&g, 1, 16, 16);
        let (pred, _) = gen.step(&p, frame, z, state).unwrap();

        let coarse_only = Generator {
            config: GeneratorConfig { n_scales: 1, ..gen.config.clone() },
            scales: gen.scales[..1].to_vec(),
        };
        let pooled = frame.avgpool2x().avgpool2x();
        let state = coarse_only.initial_state(&g, 1, 4, 4);
        let (coarse, _) = coarse_only.step(&p, pooled, z, state).unwrap();
        let expected = coarse.upsample2x().upsample2x();
        let diff = pred.value().zip_map(&expected.value(), |a, b| a - b).unwrap();
        assert!(diff.max_abs() < 1e-6);
    }
}
