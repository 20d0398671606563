use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use vidpred_autograd::{stack_time, Adam, Bound, Graph, ParamSet, Tensor, Var};

use super::checkpoint::{read_container, write_container, Block};
use super::config::ModelConfig;
use crate::adversary::{param_digest, pretrain_autoencoder, Discriminators, HeadId, ManifoldEncoder};
use crate::data::{VideoSequence, Window};
use crate::generator::{context_vars, posterior_latents, Generator, LatentSource};
use crate::latent::{standard_normal, PosteriorEncoder};
use crate::losses::{kl_var, l1_var, mggan_d_var, mggan_g_var, L1Norm, LossBreakdown, LossParts, combined_loss};
use crate::{Error, Result};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const AUTOENCODER_FILE: &str = "autoencoder.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const VAL_LOG: &str = "val_log.csv";
const TRAIN_LOG_HEADER: &str = "step,l1,kl,mggan1,mggan2,combined";
const VAL_LOG_HEADER: &str = "step,val_l1";

/// All networks of the predictor.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub generator: Generator,
    pub gen_params: ParamSet,
    pub encoder: PosteriorEncoder,
    pub enc_params: ParamSet,
    pub discriminators: Discriminators,
    pub manifold: ManifoldEncoder,
}

impl Model {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig, manifold: ManifoldEncoder) -> Result<Self> {
        config.validate()?;
        if !manifold.is_frozen() {
            return Err(Error::Misuse("manifold encoder must be frozen before training".into()));
        }
        let [c, _, _] = manifold.frame_shape();
        if c != config.generator.image_channels {
            return Err(Error::config(
                "generator.image_channels",
                format!("autoencoder was trained on {c}-channel frames"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (generator, gen_params) = Generator::new(config.generator.clone(), &mut rng)?;
        let (encoder, enc_params) = PosteriorEncoder::new(config.latent(), config.generator.image_channels, &mut rng);
        let discriminators = Discriminators::new(
            config.adversary.clone(),
            config.generator.image_channels,
            manifold.feature_dim(),
            &mut rng,
        );
        Ok(Self {
            config,
            generator,
            gen_params,
            encoder,
            enc_params,
            discriminators,
            manifold,
        })
    }

    /// Prior-sampled predictions of `horizon` frames per context.
    pub fn predict(&self, context: &[&VideoSequence], horizon: usize, seed: u64) -> Result<Vec<VideoSequence>> {
        self.generator
            .with_horizon(horizon)
            .predict(&self.gen_params, context, LatentSource::Prior { seed })
    }

    /// Rollout with explicit latents `[B, d_z]` per future step.
    pub fn rollout(&self, context: &[&VideoSequence], latents: &[Tensor]) -> Result<Vec<VideoSequence>> {
        self.generator
            .with_horizon(latents.len())
            .rollout_sequences(&self.gen_params, context, latents)
    }

    pub fn digests(&self) -> serde_json::Value {
        let mut d = json!({
            "generator": param_digest(&self.gen_params),
            "latent_encoder": param_digest(&self.enc_params),
            "manifold_encoder": self.manifold.digest(),
        });
        for id in HeadId::ALL {
            d[id.name()] = json!(self.discriminators.digest(id));
        }
        d
    }
}

/// Noise consumed by one training step, drawn from the trainer RNG.
#[derive(Clone, Debug, PartialEq)]
pub struct StepNoise {
    /// Reparameterization noise of the posterior latents, one `[B, d_z]` per future step.
    pub posterior: Vec<Tensor>,
    /// Prior latents, one `[B, d_z]` per future step.
    pub prior: Vec<Tensor>,
}

impl StepNoise {
    pub fn draw(rng: &mut ChaCha8Rng, batch: usize, horizon: usize, d_z: usize) -> Self {
        let posterior = (0..horizon).map(|_| standard_normal(batch, d_z, rng)).collect();
        let prior = (0..horizon).map(|_| standard_normal(batch, d_z, rng)).collect();
        Self { posterior, prior }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StepMode {
    Full,
    DiscriminatorOnly,
    GradientsOnly,
}

/// Generator and latent-encoder gradients of the combined objective.
#[derive(Clone, Debug)]
pub struct GeneratorGradients {
    pub generator: Vec<Tensor>,
    pub latent_encoder: Vec<Tensor>,
    pub losses: LossBreakdown,
}

/// Model plus optimizer state, step counter and RNG.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    gen_opt: Adam,
    enc_opt: Adam,
    disc_opts: Vec<(HeadId, Adam)>,
    step: u64,
    rng: ChaCha8Rng,
}

fn clip<'g>(context: &[Var<'g>], future: &[Var<'g>]) -> Vec<Var<'g>> {
    context.iter().chain(future).copied().collect()
}

impl Trainer {
    pub fn new(model: Model) -> Self {
        let c = &model.config;
        let gen_opt = Adam::new(&model.gen_params, c.lr_generator, c.beta1, c.beta2);
        let enc_opt = Adam::new(&model.enc_params, c.lr_generator, c.beta1, c.beta2);
        let disc_opts = model
            .discriminators
            .trainable()
            .into_iter()
            .map(|id| {
                let p = model.discriminators.params(id);
                (id, Adam::new(p, c.lr_discriminator, c.beta1, c.beta2))
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        rng.set_stream(1);
        Self {
            model,
            gen_opt,
            enc_opt,
            disc_opts,
            step: 0,
            rng,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// Draws a batch with replacement.
    pub fn sample_batch<'w>(&mut self, windows: &'w [Window]) -> Vec<&'w Window> {
        (0..self.model.config.batch_size)
            .map(|_| &windows[self.rng.random_range(0..windows.len())])
            .collect()
    }

    pub fn draw_noise(&mut self, batch: usize) -> StepNoise {
        let g = &self.model.config.generator;
        StepNoise::draw(&mut self.rng, batch, g.horizon, g.d_z)
    }

    /// One alternating update: discriminators on detached fakes, then the
    /// generator and latent encoder on the weighted objective.
    pub fn train_step(&mut self, batch: &[&Window]) -> Result<LossBreakdown> {
        let noise = self.draw_noise(batch.len());
        let out = self.run(batch, &noise, StepMode::Full)?;
        self.step += 1;
        Ok(out.losses)
    }

    /// Updates only the discriminators.
    pub fn discriminator_step(&mut self, batch: &[&Window]) -> Result<LossBreakdown> {
        let noise = self.draw_noise(batch.len());
        Ok(self.run(batch, &noise, StepMode::DiscriminatorOnly)?.losses)
    }

    /// Gradients of the generator objective under fixed noise, without any update.
    pub fn generator_gradients(&mut self, batch: &[&Window], noise: &StepNoise) -> Result<GeneratorGradients> {
        self.run(batch, noise, StepMode::GradientsOnly)
    }

    fn run(&mut self, batch: &[&Window], noise: &StepNoise, mode: StepMode) -> Result<GeneratorGradients> {
        if batch.is_empty() {
            return Err(Error::Empty("empty batch".into()));
        }
        let cfg = self.model.config.clone();
        let m = cfg.generator.horizon;
        if noise.posterior.len() != m || noise.prior.len() != m {
            return Err(Error::config("horizon", "step noise does not match the horizon"));
        }
        let g = Graph::new();
        let model = &self.model;
        let pg = model.gen_params.bind(&g);
        let pe = model.enc_params.bind(&g);
        let ctxs: Vec<&VideoSequence> = batch.iter().map(|w| &w.context).collect();
        let tgts: Vec<&VideoSequence> = batch.iter().map(|w| &w.target).collect();
        let ctx = context_vars(&g, &ctxs)?;
        let tgt = context_vars(&g, &tgts)?;
        if tgt.len() != m {
            return Err(Error::ShapeMismatch(format!("targets have {} frames, horizon is {m}", tgt.len())));
        }
        let constants = |ts: &[Tensor]| -> Vec<Var<'_>> { ts.iter().map(|t| g.constant(t.clone())).collect() };

        let eps = constants(&noise.posterior);
        let (z_post, posteriors) = posterior_latents(&model.encoder, &pe, *ctx.last().unwrap(), &tgt, &eps);
        let pred_post = model.generator.rollout(&pg, &ctx, &z_post)?;
        let pred_prior = model.generator.rollout(&pg, &ctx, &constants(&noise.prior))?;
        let vae_fake = if cfg.vae_path_uses_posterior { &pred_post } else { &pred_prior };

        let manifold = &model.manifold;
        let real = clip(&ctx, &tgt);
        let real_video = stack_time(&real);
        let real_feat = manifold.map_clip(&real)?;
        let fakes = [&pred_prior, vae_fake];
        let pairs = [(HeadId::Video, HeadId::Manifold), (HeadId::VideoVae, HeadId::ManifoldVae)];

        if mode != StepMode::GradientsOnly {
            let disc = &model.discriminators;
            let bound: Vec<(HeadId, Bound<'_>)> = disc.trainable().into_iter().map(|id| (id, disc.params(id).bind(&g))).collect();
            let bound_for = |id: HeadId| {
                let id = if id == HeadId::VideoVae && disc.config.share_dvae_weights { HeadId::Video } else { id };
                &bound.iter().find(|(h, _)| *h == id).expect("trainable head").1
            };
            let mut objective: Option<Var<'_>> = None;
            for (fake, (dv, dm)) in fakes.iter().zip(pairs) {
                let detached: Vec<Var<'_>> = fake.iter().map(|v| v.detach()).collect();
                let fake_clip = clip(&ctx, &detached);
                let d_obj = mggan_d_var(
                    disc.head(dv).score(bound_for(dv), real_video),
                    disc.head(dm).score(bound_for(dm), real_feat),
                    disc.head(dv).score(bound_for(dv), stack_time(&fake_clip)),
                    disc.head(dm).score(bound_for(dm), manifold.map_clip(&fake_clip)?),
                );
                objective = Some(objective.map_or(d_obj, |o| o.add(d_obj)));
            }
            let loss = objective.unwrap().scale(-1.0);
            let grads = g.backward(loss);
            let updates: Vec<(HeadId, Vec<Tensor>)> = bound.iter().map(|(id, b)| (*id, b.grads(&grads))).collect();
            for (id, grad) in updates {
                let opt = &mut self.disc_opts.iter_mut().find(|(h, _)| *h == id).expect("optimizer").1;
                opt.step(self.model.discriminators.params_mut(id), &grad);
            }
        }

        let model = &self.model;
        let manifold = &model.manifold;
        let disc = &model.discriminators;
        let mut g_terms = Vec::with_capacity(2);
        for (fake, (dv, dm)) in fakes.iter().zip(pairs) {
            let fake_clip = clip(&ctx, fake);
            let pv = disc.params(dv).bind_frozen(&g);
            let pm = disc.params(dm).bind_frozen(&g);
            g_terms.push(mggan_g_var(
                disc.head(dv).score(&pv, stack_time(&fake_clip)),
                disc.head(dm).score(&pm, manifold.map_clip(&fake_clip)?),
            ));
        }
        let l1 = l1_var(&pred_post, &tgt, cfg.l1_norm);
        let kl = kl_var(&posteriors);
        let w = cfg.weights;
        let combined = l1
            .scale(w.l1)
            .add(kl.scale(w.kl))
            .add(g_terms[0].scale(w.mggan1))
            .add(g_terms[1].scale(w.mggan2));
        let losses = combined_loss(
            LossParts {
                l1: l1.value().item(),
                kl: kl.value().item(),
                mggan1: g_terms[0].value().item(),
                mggan2: g_terms[1].value().item(),
            },
            w,
        )?;

        let (gen_grads, enc_grads) = if mode == StepMode::DiscriminatorOnly {
            (Vec::new(), Vec::new())
        } else {
            let grads = g.backward(combined);
            (pg.grads(&grads), pe.grads(&grads))
        };
        if mode == StepMode::Full {
            self.gen_opt.step(&mut self.model.gen_params, &gen_grads);
            self.enc_opt.step(&mut self.model.enc_params, &enc_grads);
        }
        Ok(GeneratorGradients {
            generator: gen_grads,
            latent_encoder: enc_grads,
            losses,
        })
    }

    /// Mean L1 of prior-sampled predictions, one fixed latent stream per window.
    pub fn validation_l1(&self, windows: &[Window]) -> Result<f64> {
        validation_l1(&self.model, windows)
    }

    pub fn save(&self, path: &Path, autoencoder: &Path) -> Result<()> {
        let mut blocks = Block::from_params("gen/", &self.model.gen_params);
        blocks.extend(Block::from_params("enc/", &self.model.enc_params));
        let mut opt_steps = json!({
            "gen": self.gen_opt.step_count(),
            "enc": self.enc_opt.step_count(),
        });
        let mut push_opt = |name: &str, opt: &Adam, blocks: &mut Vec<Block>| {
            let (m, v) = opt.moments();
            for (i, t) in m.iter().enumerate() {
                blocks.push(Block::new(format!("opt/{name}/m{i}"), t.clone()));
            }
            for (i, t) in v.iter().enumerate() {
                blocks.push(Block::new(format!("opt/{name}/v{i}"), t.clone()));
            }
            opt_steps[name] = json!(opt.step_count());
        };
        push_opt("gen", &self.gen_opt, &mut blocks);
        push_opt("enc", &self.enc_opt, &mut blocks);
        for (id, opt) in &self.disc_opts {
            blocks.extend(Block::from_params(&format!("disc/{}/", id.name()), self.model.discriminators.params(*id)));
            push_opt(id.name(), opt, &mut blocks);
        }
        let ae_ref = match (autoencoder.parent(), path.parent()) {
            (Some(a), Some(b)) if a == b => PathBuf::from(autoencoder.file_name().unwrap_or_default()),
            _ => autoencoder.to_path_buf(),
        };
        let header = json!({
            "kind": "model",
            "config": self.model.config,
            "step": self.step,
            "rng": self.rng,
            "autoencoder": { "path": ae_ref, "digest": self.model.manifold.digest() },
            "digests": self.model.digests(),
            "optimizer_steps": opt_steps,
        });
        write_container(path, &header, &blocks)
    }

    /// Restores a trainer; the autoencoder path in the header is resolved
    /// against the checkpoint directory.
    pub fn load(path: &Path) -> Result<Self> {
        let (header, blocks) = read_container(path)?;
        let bad = |m: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message: m,
        };
        if header["kind"] != "model" {
            return Err(bad("not a model checkpoint".into()));
        }
        let config: ModelConfig = serde_json::from_value(header["config"].clone())?;
        let ae_path: PathBuf = serde_json::from_value(header["autoencoder"]["path"].clone())?;
        let ae_path = match path.parent() {
            Some(dir) if ae_path.is_relative() => dir.join(ae_path),
            _ => ae_path,
        };
        let manifold = ManifoldEncoder::load(&ae_path)?;
        if header["autoencoder"]["digest"].as_str() != Some(manifold.digest().as_str()) {
            return Err(bad(format!("{} does not match the recorded encoder digest", ae_path.display())));
        }
        let mut trainer = Trainer::new(Model::new(config, manifold)?);
        let load = |prefix: &str, p: &mut ParamSet| Block::load_params(&blocks, prefix, p).map_err(bad);
        load("gen/", &mut trainer.model.gen_params)?;
        load("enc/", &mut trainer.model.enc_params)?;
        let ids: Vec<HeadId> = trainer.disc_opts.iter().map(|(id, _)| *id).collect();
        for id in &ids {
            load(&format!("disc/{}/", id.name()), trainer.model.discriminators.params_mut(*id))?;
        }
        let c = trainer.model.config.clone();
        let restore = |name: &str, lr: f64, expect: usize| -> Result<Adam> {
            let m = Block::sequence(&blocks, &format!("opt/{name}/m"));
            let v = Block::sequence(&blocks, &format!("opt/{name}/v"));
            if m.len() != expect || v.len() != expect {
                return Err(bad(format!("optimizer state `{name}` is incomplete")));
            }
            let steps = header["optimizer_steps"][name].as_u64().unwrap_or(0);
            Ok(Adam::from_state(lr, c.beta1, c.beta2, steps, m, v))
        };
        trainer.gen_opt = restore("gen", c.lr_generator, trainer.model.gen_params.len())?;
        trainer.enc_opt = restore("enc", c.lr_generator, trainer.model.enc_params.len())?;
        for (id, opt) in trainer.disc_opts.iter_mut() {
            let n = trainer.model.discriminators.params(*id).len();
            *opt = restore(id.name(), c.lr_discriminator, n)?;
        }
        trainer.step = header["step"].as_u64().ok_or_else(|| bad("missing step".into()))?;
        trainer.rng = serde_json::from_value(header["rng"].clone())?;
        Ok(trainer)
    }
}

/// Mean L1 of prior-sampled predictions with a per-window fixed latent stream.
pub fn validation_l1(model: &Model, windows: &[Window]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Empty("no validation windows".into()));
    }
    let c = &model.config;
    let (m, d_z) = (c.generator.horizon, c.generator.d_z);
    let mut total = 0.0;
    for (i, chunk) in windows.chunks(c.batch_size.max(1)).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(c.validation.seed.wrapping_add(i as u64));
        let zs: Vec<Tensor> = (0..m).map(|_| standard_normal(chunk.len(), d_z, &mut rng)).collect();
        let ctx: Vec<&VideoSequence> = chunk.iter().map(|w| &w.context).collect();
        let preds = model.rollout(&ctx, &zs)?;
        for (p, w) in preds.iter().zip(chunk) {
            total += crate::losses::l1_loss(p, &w.target, L1Norm::Mean)?;
        }
    }
    Ok(total / windows.len() as f64)
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Continue from `<out>/model.ckpt` when present.
    pub resume: bool,
    /// Progress lines on stderr every this many steps; 0 is silent.
    pub report_every: u64,
}

#[derive(Clone, Debug)]
pub struct FitSummary {
    pub checkpoint: PathBuf,
    pub autoencoder: PathBuf,
    pub steps: u64,
    pub losses: Vec<(u64, LossBreakdown)>,
    pub validation: Vec<(u64, f64)>,
    /// Held-out reconstruction MSE before and after pretraining, when it ran.
    pub autoencoder_mse: Option<(f64, f64)>,
    pub manifold_digest: String,
}

/// Loads the configured autoencoder or pretrains one into `out`.
pub fn prepare_autoencoder(config: &ModelConfig, out: &Path) -> Result<(ManifoldEncoder, PathBuf, Option<(f64, f64)>)> {
    if let Some(path) = &config.autoencoder_path {
        if !path.exists() {
            return Err(Error::config(
                "autoencoder_path",
                format!("{} does not exist", path.display()),
            ));
        }
        let enc = ManifoldEncoder::load(path)?;
        return Ok((enc, path.clone(), None));
    }
    let (_, _, splits) = config.windows()?;
    let mut ae = config.autoencoder.clone();
    ae.seed = config.seed;
    let pre = pretrain_autoencoder(&splits.train, &ae)?;
    let path = out.join(AUTOENCODER_FILE);
    pre.encoder.save(&path)?;
    Ok((pre.encoder, path, Some((pre.initial_heldout_mse, pre.final_heldout_mse))))
}

fn keep_rows_up_to(path: &Path, header: &str, step: u64) -> Result<()> {
    let text = std::fs::read_to_string(path).unwrap_or_default();
    let mut out = format!("{header}\n");
    for line in text.lines().skip(1) {
        if line.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= step) {
            out.push_str(line);
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Pretrains the autoencoder if needed, then trains for `config.steps`
/// steps, logging every step and checkpointing.
pub fn fit(config: &ModelConfig, out: &Path, options: &FitOptions) -> Result<FitSummary> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let train_log = out.join(TRAIN_LOG);
    let val_log = out.join(VAL_LOG);
    let (mut trainer, ae_path, ae_mse) = if options.resume && ckpt.exists() {
        let mut t = Trainer::load(&ckpt)?;
        t.model.config.steps = config.steps;
        keep_rows_up_to(&train_log, TRAIN_LOG_HEADER, t.step)?;
        keep_rows_up_to(&val_log, VAL_LOG_HEADER, t.step)?;
        let header = read_container(&ckpt)?.0;
        let ae: PathBuf = serde_json::from_value(header["autoencoder"]["path"].clone())?;
        let ae = if ae.is_relative() { out.join(ae) } else { ae };
        (t, ae, None)
    } else {
        let (manifold, ae_path, ae_mse) = prepare_autoencoder(config, out)?;
        std::fs::write(&train_log, format!("{TRAIN_LOG_HEADER}\n"))?;
        std::fs::write(&val_log, format!("{VAL_LOG_HEADER}\n"))?;
        (Trainer::new(Model::new(config.clone(), manifold)?), ae_path, ae_mse)
    };
    let cfg = trainer.model.config.clone();
    let (train, val, _) = cfg.windows()?;
    let val: Vec<Window> = val.into_iter().take(cfg.validation.windows).collect();
    let digest = trainer.model.manifold.digest();

    let mut log = OpenOptions::new().append(true).open(&train_log)?;
    let mut vlog = OpenOptions::new().append(true).open(&val_log)?;
    let mut losses = Vec::new();
    let mut validation = Vec::new();
    while trainer.step < cfg.steps {
        let batch = trainer.sample_batch(&train);
        let b = trainer.train_step(&batch)?;
        let step = trainer.step;
        writeln!(log, "{step},{},{},{},{},{}", b.l1, b.kl, b.mggan1, b.mggan2, b.combined)?;
        losses.push((step, b));
        if !b.is_finite() {
            return Err(Error::Misuse(format!("non-finite loss at step {step}")));
        }
        if cfg.validation.every > 0 && step % cfg.validation.every == 0 && !val.is_empty() {
            let v = trainer.validation_l1(&val)?;
            writeln!(vlog, "{step},{v}")?;
            validation.push((step, v));
        }
        if options.report_every > 0 && step % options.report_every == 0 {
            eprintln!(
                "step {step:>6}  l1 {:.5}  kl {:.4}  mggan1 {:.4}  mggan2 {:.4}  combined {:.5}",
                b.l1, b.kl, b.mggan1, b.mggan2, b.combined
            );
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            trainer.save(&ckpt, &ae_path)?;
        }
    }
    log.flush()?;
    trainer.save(&ckpt, &ae_path)?;
    if trainer.model.manifold.digest() != digest {
        return Err(Error::Frozen("manifold encoder changed during training".into()));
    }
    Ok(FitSummary {
        checkpoint: ckpt,
        autoencoder: ae_path,
        steps: trainer.step,
        losses,
        validation,
        autoencoder_mse: ae_mse,
        manifold_digest: digest,
    })
}
