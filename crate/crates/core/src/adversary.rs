//! Discriminators and the manifold guidance network.
//!
//! The guidance network is the encoder half of an autoencoder trained to
//! reconstruct real frames, frozen after pretraining. Two kinds of heads score
//! whole clips: video heads run spatiotemporal convolutions over pixels,
//! manifold heads run temporal convolutions over per-frame encoder features.

use std::path::Path;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vidpred_autograd::{concat, stack_time, Adam, Bound, Graph, ParamSet, Tensor, Var};

use crate::data::VideoSequence;
use crate::layers::{Conv, Dense, LEAK};
use crate::train::checkpoint::{read_container, write_container, Block};
use crate::{Error, Result};

/// SHA-256 over parameter names, shapes and little-endian values.
pub fn param_digest(params: &ParamSet) -> String {
    let mut h = Sha256::new();
    for (name, t) in params.iter() {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub feature_dim: usize,
    pub channels: [usize; 2],
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Fraction of frames held out for the reported reconstruction error.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            channels: [8, 16],
            steps: 2000,
            batch: 16,
            lr: 1e-3,
            holdout: 0.1,
            seed: 0,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.channels.contains(&0) {
            return Err(Error::config("feature_dim", "dimensions must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch", "must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::config("holdout", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Image geometry an autoencoder was built for: `[C, H, W]`.
type FrameShape = [usize; 3];

#[derive(Clone, Debug)]
struct EncoderNet {
    conv1: Conv,
    conv2: Conv,
    dense: Dense,
    flat: usize,
}

impl EncoderNet {
    fn new<R: Rng + ?Sized>(params: &mut ParamSet, cfg: &AutoencoderConfig, shape: FrameShape, rng: &mut R) -> Self {
        let [c, h, w] = shape;
        let [c1, c2] = cfg.channels;
        let flat = c2 * (h / 4) * (w / 4);
        Self {
            conv1: Conv::planar(params, "ae.enc.conv1", c, c1, 3, 2, true, rng),
            conv2: Conv::planar(params, "ae.enc.conv2", c1, c2, 3, 2, true, rng),
            dense: Dense::new(params, "ae.enc.dense", flat, cfg.feature_dim, rng),
            flat,
        }
    }

    fn apply<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Var<'g> {
        let b = x.shape()[0];
        let h = self.conv1.apply(p, x).leaky_relu(LEAK);
        let h = self.conv2.apply(p, h).leaky_relu(LEAK);
        self.dense.apply(p, h.reshape(&[b, self.flat]))
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    dense: Dense,
    conv1: Conv,
    conv2: Conv,
    grid: [usize; 3],
}

impl Decoder {
    fn new<R: Rng + ?Sized>(params: &mut ParamSet, cfg: &AutoencoderConfig, shape: FrameShape, rng: &mut R) -> Self {
        let [c, h, w] = shape;
        let [c1, c2] = cfg.channels;
        Self {
            dense: Dense::new(params, "ae.dec.dense", cfg.feature_dim, c2 * (h / 4) * (w / 4), rng),
            conv1: Conv::planar(params, "ae.dec.conv1", c2, c1, 3, 1, true, rng),
            conv2: Conv::planar(params, "ae.dec.conv2", c1, c, 3, 1, true, rng),
            grid: [c2, h / 4, w / 4],
        }
    }

    pub fn apply<'g>(&self, p: &Bound<'g>, features: Var<'g>) -> Var<'g> {
        let b = features.shape()[0];
        let [c, h, w] = self.grid;
        let x = self.dense.apply(p, features).leaky_relu(LEAK).reshape(&[b, c, h, w]);
        let x = self.conv1.apply(p, x.upsample2x()).leaky_relu(LEAK);
        self.conv2.apply(p, x.upsample2x()).sigmoid()
    }
}

/// Encoder of a pretrained autoencoder, used as the manifold map.
#[derive(Clone, Debug)]
pub struct ManifoldEncoder {
    config: AutoencoderConfig,
    shape: FrameShape,
    net: EncoderNet,
    params: ParamSet,
    frozen: bool,
}

impl ManifoldEncoder {
    pub fn new<R: Rng + ?Sized>(config: AutoencoderConfig, shape: FrameShape, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if shape[1] % 4 != 0 || shape[2] % 4 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "autoencoder frames must be divisible by 4, got {}x{}",
                shape[1], shape[2]
            )));
        }
        let mut params = ParamSet::new();
        let net = EncoderNet::new(&mut params, &config, shape, rng);
        Ok(Self {
            config,
            shape,
            net,
            params,
            frozen: false,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn digest(&self) -> String {
        param_digest(&self.params)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable access for pretraining; refused once frozen.
    pub fn params_mut(&mut self) -> Result<&mut ParamSet> {
        if self.frozen {
            return Err(Error::Frozen("manifold encoder".into()));
        }
        Ok(&mut self.params)
    }

    /// Applies an optimizer step; refused once frozen.
    pub fn update(&mut self, optimizer: &mut Adam, grads: &[Tensor]) -> Result<()> {
        optimizer.step(self.params_mut()?, grads);
        Ok(())
    }

    fn check_frozen(&self) -> Result<()> {
        if !self.frozen {
            return Err(Error::Misuse("manifold encoder used before it was frozen".into()));
        }
        Ok(())
    }

    /// Per-frame features of `[B, C, H, W]` frames as `[B, F]`.
    fn encode_frames<'g>(&self, p: &Bound<'g>, frames: Var<'g>) -> Var<'g> {
        self.net.apply(p, frames)
    }

    /// Features of a clip given as per-timestep `[B, C, H, W]` frames, as `[B, F, T]`.
    /// Gradients reach the frames but never the encoder.
    pub fn map_clip<'g>(&self, frames: &[Var<'g>]) -> Result<Var<'g>> {
        self.check_frozen()?;
        let graph = frames
            .first()
            .ok_or_else(|| Error::Empty("empty clip".into()))?
            .graph();
        let p = self.params.bind_frozen(graph);
        let f = self.config.feature_dim;
        let feats: Vec<Var<'g>> = frames
            .iter()
            .map(|&x| {
                let b = x.shape()[0];
                self.encode_frames(&p, x).reshape(&[b, f, 1])
            })
            .collect();
        Ok(concat(&feats, 2))
    }

    /// Per-frame features `[T, F]` of one sequence.
    pub fn manifold_map(&self, seq: &VideoSequence) -> Result<Tensor> {
        self.check_frozen()?;
        let [_, h, w, c] = seq.shape();
        if [c, h, w] != self.shape {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects [C, H, W] = {:?}, got {:?}",
                self.shape,
                [c, h, w]
            )));
        }
        let g = Graph::new();
        let frames: Vec<Var<'_>> = (0..seq.len())
            .map(|t| g.constant(VideoSequence::batch_frame(&[seq], t)))
            .collect();
        let feats = self.map_clip(&frames)?;
        let f = self.config.feature_dim;
        let v = feats.value();
        let t = seq.len();
        let mut out = vec![0.0; t * f];
        for (i, row) in out.chunks_mut(f).enumerate() {
            for (j, dst) in row.iter_mut().enumerate() {
                *dst = v.data()[j * t + i];
            }
        }
        Ok(Tensor::new(&[t, f], out)?)
    }

    /// Writes the encoder to its own checkpoint file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::json!({
            "kind": "manifold_encoder",
            "config": self.config,
            "frame_shape": self.shape,
            "frozen": self.frozen,
            "digest": self.digest(),
        });
        write_container(path, &header, &Block::from_params("", &self.params))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, blocks) = read_container(path)?;
        let bad = |m: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            message: m.to_string(),
        };
        if header["kind"] != "manifold_encoder" {
            return Err(bad("not a manifold encoder checkpoint"));
        }
        let config: AutoencoderConfig = serde_json::from_value(header["config"].clone())?;
        let shape: FrameShape = serde_json::from_value(header["frame_shape"].clone())?;
        let mut enc = Self::new(config, shape, &mut ChaCha8Rng::seed_from_u64(0))?;
        Block::load_params(&blocks, "", &mut enc.params).map_err(|e| bad(&e.to_string()))?;
        enc.frozen = header["frozen"].as_bool().unwrap_or(true);
        if header["digest"].as_str() != Some(enc.digest().as_str()) {
            return Err(bad("parameter digest does not match header"));
        }
        Ok(enc)
    }
}

/// Result of autoencoder pretraining.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub encoder: ManifoldEncoder,
    pub decoder: Decoder,
    pub decoder_params: ParamSet,
    pub initial_heldout_mse: f64,
    pub final_heldout_mse: f64,
}

fn frames_of(seqs: &[VideoSequence]) -> Result<(Vec<Tensor>, FrameShape)> {
    let first = seqs.first().ok_or_else(|| Error::Empty("no frames for autoencoder pretraining".into()))?;
    let [_, h, w, c] = first.shape();
    let mut frames = Vec::new();
    for s in seqs {
        let [_, sh, sw, sc] = s.shape();
        if [sh, sw, sc] != [h, w, c] {
            return Err(Error::ShapeMismatch(format!("{} has a different frame size", s.id())));
        }
        for t in 0..s.len() {
            frames.push(VideoSequence::batch_frame(&[s], t));
        }
    }
    if frames.is_empty() {
        return Err(Error::Empty("no frames for autoencoder pretraining".into()));
    }
    Ok((frames, [c, h, w]))
}

fn reconstruction_mse(enc: &ManifoldEncoder, dec: &Decoder, dec_params: &ParamSet, frames: &[Tensor]) -> f64 {
    let g = Graph::new();
    let pe = enc.params.bind_frozen(&g);
    let pd = dec_params.bind_frozen(&g);
    let mut total = 0.0;
    for chunk in frames.chunks(32) {
        let x = g.constant(Tensor::stack(chunk).expect("equal frames"));
        let x = x.reshape(&[chunk.len(), enc.shape[0], enc.shape[1], enc.shape[2]]);
        let r = dec.apply(&pd, enc.encode_frames(&pe, x));
        total += r.sub(x).mul(r.sub(x)).mean().value().item() * chunk.len() as f64;
    }
    total / frames.len() as f64
}

/// Trains an autoencoder by mean-squared reconstruction of real frames and
/// returns its encoder frozen.
pub fn pretrain_autoencoder(seqs: &[VideoSequence], config: &AutoencoderConfig) -> Result<Pretrained> {
    config.validate()?;
    let (frames, shape) = frames_of(seqs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut encoder = ManifoldEncoder::new(config.clone(), shape, &mut rng)?;
    let mut decoder_params = ParamSet::new();
    let decoder = Decoder::new(&mut decoder_params, config, shape, &mut rng);

    let n_held = ((frames.len() as f64 * config.holdout).round() as usize).min(frames.len() - 1);
    let (train, held) = frames.split_at(frames.len() - n_held);
    let held = if held.is_empty() { train } else { held };

    let initial_heldout_mse = reconstruction_mse(&encoder, &decoder, &decoder_params, held);
    let mut enc_opt = Adam::new(&encoder.params, config.lr, 0.9, 0.999);
    let mut dec_opt = Adam::new(&decoder_params, config.lr, 0.9, 0.999);
    for _ in 0..config.steps {
        let picks: Vec<Tensor> = (0..config.batch)
            .map(|_| train[rng.random_range(0..train.len())].clone())
            .collect();
        let (ge, gd) = {
            let g = Graph::new();
            let pe = encoder.params.bind(&g);
            let pd = decoder_params.bind(&g);
            let x = g
                .constant(Tensor::stack(&picks)?)
                .reshape(&[config.batch, shape[0], shape[1], shape[2]]);
            let r = decoder.apply(&pd, encoder.encode_frames(&pe, x));
            let loss = r.sub(x).mul(r.sub(x)).mean();
            let grads = g.backward(loss);
            (pe.grads(&grads), pd.grads(&grads))
        };
        encoder.update(&mut enc_opt, &ge)?;
        dec_opt.step(&mut decoder_params, &gd);
    }
    let final_heldout_mse = reconstruction_mse(&encoder, &decoder, &decoder_params, held);
    encoder.freeze();
    Ok(Pretrained {
        encoder,
        decoder,
        decoder_params,
        initial_heldout_mse,
        final_heldout_mse,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Pixels `[B, C, T, H, W]`.
    Video,
    /// Manifold features `[B, F, T]`.
    Manifold,
}

/// Sequence discriminator ending in a sigmoid.
#[derive(Clone, Debug)]
pub struct DiscriminatorHead {
    pub kind: HeadKind,
    convs: Vec<Conv>,
    out: Dense,
}

impl DiscriminatorHead {
    pub fn video<R: Rng + ?Sized>(name: &str, channels: usize, widths: [usize; 2], rng: &mut R) -> (Self, ParamSet) {
        let mut p = ParamSet::new();
        let c1 = Conv::spatiotemporal(&mut p, &format!("{name}.conv1"), channels, widths[0], [3, 3, 3], [1, 2, 2], [1, 1, 1], rng);
        let c2 = Conv::spatiotemporal(&mut p, &format!("{name}.conv2"), widths[0], widths[1], [3, 3, 3], [1, 2, 2], [1, 1, 1], rng);
        let out = Dense::new(&mut p, &format!("{name}.out"), widths[1], 1, rng);
        (
            Self {
                kind: HeadKind::Video,
                convs: vec![c1, c2],
                out,
            },
            p,
        )
    }

    pub fn manifold<R: Rng + ?Sized>(name: &str, features: usize, width: usize, rng: &mut R) -> (Self, ParamSet) {
        let mut p = ParamSet::new();
        let c1 = Conv::spatiotemporal(&mut p, &format!("{name}.conv1"), features, width, [3, 1, 1], [1, 1, 1], [1, 0, 0], rng);
        let out = Dense::new(&mut p, &format!("{name}.out"), width, 1, rng);
        (
            Self {
                kind: HeadKind::Manifold,
                convs: vec![c1],
                out,
            },
            p,
        )
    }

    /// Realness scores `[B, 1]` in `(0, 1)`.
    pub fn score<'g>(&self, p: &Bound<'g>, input: Var<'g>) -> Var<'g> {
        let mut x = match self.kind {
            HeadKind::Video => input,
            HeadKind::Manifold => {
                let s = input.shape();
                input.reshape(&[s[0], s[1], s[2], 1, 1])
            }
        };
        for conv in &self.convs {
            x = conv.apply(p, x).leaky_relu(LEAK);
        }
        self.out.apply(p, x.mean_rest()).sigmoid()
    }

    /// Scores a batch of equally shaped sequences (video heads).
    pub fn discriminate(&self, params: &ParamSet, seqs: &[&VideoSequence]) -> Result<Vec<f64>> {
        if self.kind != HeadKind::Video {
            return Err(Error::Misuse("manifold heads score feature sequences".into()));
        }
        let g = Graph::new();
        let frames = crate::generator::context_vars(&g, seqs)?;
        let s = self.score(&params.bind_frozen(&g), stack_time(&frames));
        Ok(s.value().data().to_vec())
    }

    /// Scores `[T, F]` feature sequences (manifold heads).
    pub fn discriminate_features(&self, params: &ParamSet, feats: &[&Tensor]) -> Result<Vec<f64>> {
        if self.kind != HeadKind::Manifold {
            return Err(Error::Misuse("video heads score pixel sequences".into()));
        }
        let first = feats.first().ok_or_else(|| Error::Empty("no feature sequences".into()))?;
        let [t, f] = [first.shape()[0], first.shape()[1]];
        let mut data = Vec::with_capacity(feats.len() * t * f);
        for x in feats {
            if x.shape() != [t, f] {
                return Err(Error::ShapeMismatch("feature sequences differ in shape".into()));
            }
            for j in 0..f {
                data.extend((0..t).map(|i| x.data()[i * f + j]));
            }
        }
        let g = Graph::new();
        let input = g.constant(Tensor::new(&[feats.len(), f, t], data)?);
        Ok(self.score(&params.bind_frozen(&g), input).value().data().to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversaryConfig {
    pub video_widths: [usize; 2],
    pub manifold_width: usize,
    /// D^VAE reuses the parameters of D.
    pub share_dvae_weights: bool,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            video_widths: [8, 16],
            manifold_width: 32,
            share_dvae_weights: false,
        }
    }
}

/// Which of the four heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadId {
    Video,
    VideoVae,
    Manifold,
    ManifoldVae,
}

impl HeadId {
    pub const ALL: [HeadId; 4] = [HeadId::Video, HeadId::VideoVae, HeadId::Manifold, HeadId::ManifoldVae];

    pub fn name(self) -> &'static str {
        match self {
            HeadId::Video => "d",
            HeadId::VideoVae => "d_vae",
            HeadId::Manifold => "dm1",
            HeadId::ManifoldVae => "dm2",
        }
    }
}

/// The four discriminator heads with independent parameters.
#[derive(Clone, Debug)]
pub struct Discriminators {
    pub config: AdversaryConfig,
    heads: Vec<DiscriminatorHead>,
    params: Vec<ParamSet>,
}

impl Discriminators {
    pub fn new<R: Rng + ?Sized>(config: AdversaryConfig, channels: usize, features: usize, rng: &mut R) -> Self {
        let mut heads = Vec::new();
        let mut params = Vec::new();
        for id in HeadId::ALL {
            let (h, p) = match id {
                HeadId::Video | HeadId::VideoVae => DiscriminatorHead::video(id.name(), channels, config.video_widths, rng),
                HeadId::Manifold | HeadId::ManifoldVae => DiscriminatorHead::manifold(id.name(), features, config.manifold_width, rng),
            };
            heads.push(h);
            params.push(p);
        }
        Self { config, heads, params }
    }

    /// Index of the parameter set actually used by `id`.
    fn slot(&self, id: HeadId) -> usize {
        match id {
            HeadId::VideoVae if self.config.share_dvae_weights => 0,
            HeadId::Video => 0,
            HeadId::VideoVae => 1,
            HeadId::Manifold => 2,
            HeadId::ManifoldVae => 3,
        }
    }

    /// Heads with their own trainable parameters.
    pub fn trainable(&self) -> Vec<HeadId> {
        HeadId::ALL
            .into_iter()
            .filter(|&id| !(id == HeadId::VideoVae && self.config.share_dvae_weights))
            .collect()
    }

    pub fn head(&self, id: HeadId) -> &DiscriminatorHead {
        &self.heads[self.slot(id)]
    }

    pub fn params(&self, id: HeadId) -> &ParamSet {
        &self.params[self.slot(id)]
    }

    pub fn params_mut(&mut self, id: HeadId) -> &mut ParamSet {
        let i = self.slot(id);
        &mut self.params[i]
    }

    pub fn digest(&self, id: HeadId) -> String {
        param_digest(self.params(id))
    }
}
