//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p vidpred --test acceptance` runs everything (about half an
//! hour on one core); trailing numbers select criteria, e.g. `-- 1 2 5`.
//! `VIDPRED_ACCEPTANCE=quick` skips the three training runs (7, 8, 10).

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use vidpred::adversary::{param_digest, pretrain_autoencoder, AutoencoderConfig, DiscriminatorHead, ManifoldEncoder};
use vidpred::data::{generate_moving_sprites, GlyphSource, MovingSpriteSpec, VideoSequence};
use vidpred::e3d::{recall_weights, CellConfig, ConvLstmCell, E3dCell};
use vidpred::generator::{context_vars, CellKind, Generator, GeneratorConfig};
use vidpred::latent::{kl_to_prior, prior_latents, standard_normal, GaussianParams, GaussianVars, LatentConfig, PosteriorEncoder};
use vidpred::layers::zero_params;
use vidpred::losses::{
    combined_loss, kl_var, l1_var, mggan_d_var, mggan_g_var, mggan_loss, mggan_objectives, L1Norm, LossParts,
    LossWeights, PairScores,
};
use vidpred::metrics::{mse, psnr, ssim, PSNR_CAP_DB, SSIM_SIGMA, SSIM_WINDOW};
use vidpred::train::trainer::CHECKPOINT_FILE;
use vidpred::train::{direction_counts, evaluate_run, fit, presets, DatasetConfig, FitOptions, Model, ModelConfig, Trainer};
use vidpred_autograd::{finite_difference, stack_time, worst_relative_error, Bound, Graph, ParamSet, Tensor, Var};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn seq(data: Vec<f64>, h: usize, w: usize) -> VideoSequence {
    VideoSequence::new("s", [1, h, w, 1], data).unwrap()
}

fn brute_mse(a: &[f64], b: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..a.len() {
        total += (a[i] - b[i]) * (a[i] - b[i]);
    }
    total / a.len() as f64
}

/// Direct 2D-window SSIM with the same Gaussian weights, no separability.
fn brute_ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let r = SSIM_WINDOW / 2;
    let mut weights = vec![0.0; SSIM_WINDOW * SSIM_WINDOW];
    let mut norm = 0.0;
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            let (di, dj) = (i as f64 - r as f64, j as f64 - r as f64);
            let v = (-(di * di + dj * dj) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            weights[i * SSIM_WINDOW + j] = v;
            norm += v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let k = weights[i * SSIM_WINDOW + j] / norm;
                    let (u, v) = (a[(y + i) * w + x + j], b[(y + i) * w + x + j]);
                    ma += k * u;
                    mb += k * v;
                    saa += k * u * u;
                    sbb += k * v * v;
                    sab += k * u * v;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let unit = Uniform::new(0.0, 1.0).unwrap();
    let (mut e_mse, mut e_psnr, mut e_ssim) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..200 {
        let a: Vec<f64> = (0..256).map(|_| unit.sample(&mut rng)).collect();
        // Mix in correlated pairs so SSIM spans its range.
        let mix = i as f64 / 200.0;
        let b: Vec<f64> = a.iter().map(|&v| mix * v + (1.0 - mix) * unit.sample(&mut rng)).collect();
        let (sa, sb) = (seq(a.clone(), 16, 16), seq(b.clone(), 16, 16));
        let m = brute_mse(&a, &b);
        e_mse = e_mse.max((mse(&sa, &sb).unwrap() - m).abs());
        e_psnr = e_psnr.max((psnr(&sa, &sb, 1.0).unwrap() - 10.0 * (1.0 / m).log10()).abs());
        e_ssim = e_ssim.max((ssim(&sa, &sb).unwrap() - brute_ssim(&a, &b, 16, 16)).abs());
    }
    let same = seq((0..256).map(|_| unit.sample(&mut rng)).collect(), 16, 16);
    let ident = (mse(&same, &same).unwrap(), psnr(&same, &same, 1.0).unwrap(), ssim(&same, &same).unwrap());
    let secs = start.elapsed().as_secs_f64();
    let pass = e_mse < 1e-9 && e_psnr < 1e-9 && e_ssim < 1e-6
        && ident.0 == 0.0
        && ident.1 == PSNR_CAP_DB
        && (ident.2 - 1.0).abs() < 1e-12
        && secs < 60.0;
    outcome(
        pass,
        format!(
            "max |Δ| mse {e_mse:.1e}, psnr {e_psnr:.1e}, ssim {e_ssim:.1e} over 200 pairs; identical → ({}, {} dB, {:.6}); {secs:.2}s",
            ident.0, ident.1, ident.2
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let unit = Uniform::new(0.0, 10.0).unwrap();
    let w = LossWeights::default();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = LossParts {
            l1: unit.sample(&mut rng),
            kl: unit.sample(&mut rng),
            mggan1: unit.sample(&mut rng),
            mggan2: unit.sample(&mut rng),
        };
        let hand = 0.25 * p.l1 + 0.2 * p.kl + 0.3 * p.mggan1 + 0.3 * p.mggan2;
        worst = worst.max((combined_loss(p, w).unwrap().combined - hand).abs());
    }
    let half = vec![0.5; 4];
    let scores = PairScores {
        real: half.clone(),
        real_manifold: half.clone(),
        fake: half.clone(),
        fake_manifold: half,
    };
    let (d_const, _) = mggan_objectives(&scores).unwrap();

    // Zero-parameter heads score every clip at exactly 0.5.
    let clips = sprite_clips(16, 6, 2);
    let enc = tiny_encoder(&clips);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (dv, mut pv) = DiscriminatorHead::video("d", 1, [4, 4], &mut rng);
    let (dm, mut pm) = DiscriminatorHead::manifold("dm", enc.feature_dim(), 4, &mut rng);
    zero_params(&mut pv);
    zero_params(&mut pm);
    let refs: Vec<&VideoSequence> = clips.iter().collect();
    let fakes: Vec<&VideoSequence> = refs.iter().rev().copied().collect();
    let (d_heads, _) = mggan_loss((&dv, &pv), (&dm, &pm), &enc, &refs, &fakes).unwrap();
    let target = 4.0 * 0.5f64.ln();
    let pass = worst < 1e-6 && (d_const - target).abs() < 1e-9 && (d_heads - target).abs() < 1e-9;
    outcome(
        pass,
        format!(
            "weights {:?}: max |Δ| {worst:.1e} over 100 tuples; mggan at 0.5 = {d_const:.12} (scores), {d_heads:.12} (zeroed heads), 4 ln 0.5 = {target:.12}",
            (w.l1, w.kl, w.mggan1, w.mggan2)
        ),
    )
}

fn tiny_encoder(clips: &[VideoSequence]) -> ManifoldEncoder {
    let cfg = AutoencoderConfig {
        feature_dim: 4,
        channels: [2, 4],
        steps: 5,
        batch: 2,
        ..Default::default()
    };
    pretrain_autoencoder(clips, &cfg).unwrap().encoder
}

fn criterion_3() -> Outcome {
    const DIM: usize = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let box_ = Uniform::new(-2.0, 2.0).unwrap();
    let mut worst = 0.0f64;
    let mut negative = 0;
    for _ in 0..20 {
        let g = GaussianParams {
            mean: (0..DIM).map(|_| box_.sample(&mut rng)).collect(),
            logvar: (0..DIM).map(|_| box_.sample(&mut rng)).collect(),
        };
        let closed = kl_to_prior(&g);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            for d in 0..DIM {
                let eps: f64 = StandardNormal.sample(&mut rng);
                let z = g.mean[d] + (0.5 * g.logvar[d]).exp() * eps;
                // log q(z) - log p(z)
                acc += -0.5 * g.logvar[d] - 0.5 * eps * eps + 0.5 * z * z;
            }
        }
        worst = worst.max((acc / n as f64 - closed).abs() / closed);
    }
    let wide = Uniform::new(-4.0, 4.0).unwrap();
    for _ in 0..10_000 {
        let g = GaussianParams {
            mean: (0..3).map(|_| wide.sample(&mut rng)).collect(),
            logvar: (0..3).map(|_| wide.sample(&mut rng)).collect(),
        };
        if kl_to_prior(&g) < 0.0 {
            negative += 1;
        }
    }
    outcome(
        worst < 0.02 && negative == 0,
        format!(
            "20 random {DIM}-dim (μ, logvar) in [-2, 2]²: worst relative gap to 1e5-sample Monte Carlo {:.2}%; {negative} negative values in 10000 evaluations",
            100.0 * worst
        ),
    )
}

fn fd_error(params: &ParamSet, f: impl for<'g> Fn(&Bound<'g>) -> Var<'g>) -> f64 {
    let analytic = {
        let g = Graph::new();
        let b = params.bind(&g);
        let loss = f(&b);
        b.grads(&g.backward(loss))
    };
    let numeric = finite_difference(params, 1e-5, |p| {
        let g = Graph::new();
        f(&p.bind_frozen(&g)).value().item()
    });
    worst_relative_error(params, &analytic, &numeric).0
}

/// Shifts every parameter off the leaky-ReLU kinks that zero biases sit on.
fn jitter(params: &mut ParamSet, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors_mut() {
        t.add_assign(&Tensor::randn(t.shape(), 0.1, &mut rng));
    }
}

fn open_unit(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).map(|v| 0.05 + 0.9 * vidpred_autograd::sigmoid(v))
}

fn sprite_clips(side: usize, glyph: usize, n: u64) -> Vec<VideoSequence> {
    let spec = MovingSpriteSpec {
        canvas: (side, side),
        n_sprites: 1,
        glyphs: GlyphSource::Digits { size: glyph },
        ..Default::default()
    };
    (0..n).map(|i| generate_moving_sprites(&spec.with_seed(i), 4).unwrap()).collect()
}

fn criterion_4() -> Outcome {
    const NET: f64 = 1e-3;
    const LOSS: f64 = 1e-4;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rows: Vec<(&str, f64, f64)> = Vec::new();

    let inputs: Vec<Tensor> = (0..5).map(|_| Tensor::randn(&[1, 2, 4, 4], 1.0, &mut rng)).collect();
    let proj = Tensor::randn(&[1, 2, 4, 4], 1.0, &mut rng);
    let mut cp = ParamSet::new();
    let cell_cfg = CellConfig {
        in_channels: 2,
        channels: 2,
        bank_capacity: 3,
        temporal_window: 2,
        kernel: 3,
    };
    let cell = E3dCell::new(&mut cp, "cell", cell_cfg, &mut rng).unwrap();
    let first = cp.ids().next().unwrap();
    let err = fd_error(&cp, |p| {
        let g = p.var(first).graph();
        let mut state = cell.initial_state(g, 1, 4, 4);
        let mut last = None;
        for x in &inputs {
            let (h, next) = cell.step(p, g.constant(x.clone()), state).unwrap();
            state = next;
            last = Some(h);
        }
        last.unwrap().mul(g.constant(proj.clone())).sum()
    });
    rows.push(("e3d cell", err, NET));

    let mut lp = ParamSet::new();
    let lstm = ConvLstmCell::new(&mut lp, "lstm", 2, 2, 3, &mut rng);
    let first = lp.ids().next().unwrap();
    let err = fd_error(&lp, |p| {
        let g = p.var(first).graph();
        let mut state = lstm.initial_state(g, 1, 4, 4);
        for x in &inputs {
            state = lstm.step(p, g.constant(x.clone()), state).unwrap().1;
        }
        state.hidden.tanh().sum()
    });
    rows.push(("convlstm cell", err, NET));

    let (enc, ep) = PosteriorEncoder::new(LatentConfig { d_z: 3, channels: [4, 5] }, 1, &mut rng);
    let pair = [open_unit(&[1, 1, 8, 8], 40), open_unit(&[1, 1, 8, 8], 41)];
    let noise = standard_normal(1, 3, &mut rng);
    let first = ep.ids().next().unwrap();
    let err = fd_error(&ep, |p| {
        let g = p.var(first).graph();
        let post = enc.encode(p, g.constant(pair[0].clone()), g.constant(pair[1].clone()));
        post.kl_to_prior().add(post.sample(g.constant(noise.clone())).sum())
    });
    rows.push(("latent encoder", err, NET));

    for (kind, label) in [(CellKind::E3d, "generator rollout, e3d"), (CellKind::ConvLstm, "generator rollout, convlstm")] {
        let cfg = GeneratorConfig {
            n_scales: 2,
            base_channels: 3,
            context_len: 2,
            horizon: 2,
            d_z: 2,
            bank_capacity: 3,
            cell: kind,
            ..Default::default()
        };
        let (gen, gp) = Generator::new(cfg, &mut rng).unwrap();
        let ctx = [open_unit(&[1, 1, 8, 8], 42), open_unit(&[1, 1, 8, 8], 43)];
        let zs = prior_latents(44, 1, 2, 2);
        let first = gp.ids().next().unwrap();
        let err = fd_error(&gp, |p| {
            let g = p.var(first).graph();
            let c: Vec<_> = ctx.iter().map(|t| g.constant(t.clone())).collect();
            let z: Vec<_> = zs.iter().map(|t| g.constant(t.clone())).collect();
            let out = gen.rollout(p, &c, &z).unwrap();
            out[0].reshape(&[64]).slice(0, 0, 1).sum().add(out[1].mul(out[1]).mean())
        });
        rows.push((label, err, NET));
    }

    let clips = sprite_clips(8, 4, 2);
    let refs: Vec<&VideoSequence> = clips.iter().collect();
    let (dv, mut pv) = DiscriminatorHead::video("d", 1, [2, 3], &mut rng);
    jitter(&mut pv, 45);
    let first = pv.ids().next().unwrap();
    let err = fd_error(&pv, |p| {
        let g = p.var(first).graph();
        dv.score(p, stack_time(&context_vars(g, &refs).unwrap())).ln().sum()
    });
    rows.push(("video discriminator", err, NET));

    let menc = tiny_encoder(&clips);
    let (dm, pm) = DiscriminatorHead::manifold("dm", menc.feature_dim(), 4, &mut rng);
    let first = pm.ids().next().unwrap();
    let err = fd_error(&pm, |p| {
        let g = p.var(first).graph();
        dm.score(p, menc.map_clip(&context_vars(g, &refs).unwrap()).unwrap()).one_minus().ln().sum()
    });
    rows.push(("manifold discriminator", err, NET));

    let mut lossp = ParamSet::new();
    let preds: Vec<_> = (0..3).map(|t| lossp.add(format!("p{t}"), open_unit(&[2, 1, 4, 4], t))).collect();
    let targets: Vec<Tensor> = (0..3).map(|t| open_unit(&[2, 1, 4, 4], 10 + t)).collect();
    let stats: Vec<_> = (0..2)
        .map(|t| {
            (
                lossp.add(format!("m{t}"), Tensor::randn(&[3, 2], 1.0, &mut rng)),
                lossp.add(format!("lv{t}"), Tensor::randn(&[3, 2], 1.0, &mut rng)),
            )
        })
        .collect();
    let scores: Vec<_> = (0..4).map(|i| lossp.add(format!("s{i}"), open_unit(&[5, 1], 20 + i))).collect();
    for (norm, label) in [(L1Norm::Mean, "l1, mean"), (L1Norm::Sum, "l1, sum")] {
        let err = fd_error(&lossp, |p| {
            let g = p.var(preds[0]).graph();
            let pr: Vec<_> = preds.iter().map(|&id| p[id]).collect();
            let tg: Vec<_> = targets.iter().map(|t| g.constant(t.clone())).collect();
            l1_var(&pr, &tg, norm)
        });
        rows.push((label, err, LOSS));
    }
    let err = fd_error(&lossp, |p| {
        kl_var(&stats.iter().map(|&(m, l)| GaussianVars { mean: p[m], logvar: p[l] }).collect::<Vec<_>>())
    });
    rows.push(("kl", err, LOSS));
    rows.push(("mggan d", fd_error(&lossp, |p| mggan_d_var(p[scores[0]], p[scores[1]], p[scores[2]], p[scores[3]])), LOSS));
    rows.push(("mggan g", fd_error(&lossp, |p| mggan_g_var(p[scores[2]], p[scores[3]])), LOSS));

    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<String> = rows.iter().filter(|r| !(r.1 < r.2)).map(|r| format!("{} {:.1e}", r.0, r.1)).collect();
    let worst = |tol: f64| rows.iter().filter(|r| r.2 == tol).map(|r| r.1).fold(0.0, f64::max);
    let detail = if failed.is_empty() {
        format!(
            "{} checks; worst relative error {:.1e} for networks (< 1e-3), {:.1e} for losses (< 1e-4); {secs:.1}s",
            rows.len(),
            worst(NET),
            worst(LOSS)
        )
    } else {
        format!("over tolerance: {}", failed.join(", "))
    };
    outcome(failed.is_empty() && secs < 600.0, detail)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_sum = 0.0f64;
    for n in 1..=6 {
        for _ in 0..20 {
            let q = Tensor::randn(&[2, 3, 4, 4], 2.0, &mut rng);
            let bank: Vec<Tensor> = (0..n).map(|_| Tensor::randn(&[2, 3, 4, 4], 2.0, &mut rng)).collect();
            let w = recall_weights(&q, &bank);
            worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        }
    }

    let tau = 3;
    let mut params = ParamSet::new();
    let cell = E3dCell::new(
        &mut params,
        "c",
        CellConfig {
            in_channels: 2,
            channels: 3,
            bank_capacity: tau,
            temporal_window: 2,
            kernel: 3,
        },
        &mut rng,
    )
    .unwrap();
    let g = Graph::new();
    let p = params.bind_frozen(&g);
    let mut state = cell.initial_state(&g, 1, 4, 4);
    let mut lengths_ok = true;
    let mut worst_zero = 0.0f64;
    for step in 1..=8 {
        let x = g.constant(Tensor::randn(&[1, 2, 4, 4], 1.0, &mut rng));
        let mut zeroed = state.clone();
        zeroed.zero_bank(&g);
        let (h_zero, _) = cell.step(&p, x, zeroed).unwrap();
        let mut bankless = state.clone();
        bankless.zero_bank(&g);
        let (h_plain, _) = cell.step_without_recall(&p, x, bankless).unwrap();
        worst_zero = worst_zero.max(
            h_zero
                .value()
                .data()
                .iter()
                .zip(h_plain.value().data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        let (_, next) = cell.step(&p, x, state).unwrap();
        lengths_ok &= next.bank_len() == step.min(tau);
        state = next;
    }
    outcome(
        worst_sum < 1e-6 && lengths_ok && worst_zero < 1e-9,
        format!(
            "weights sum to 1 within {worst_sum:.1e}; bank length = min(steps, {tau}) over 8 steps: {lengths_ok}; zero-bank vs bankless max |Δ| {worst_zero:.1e}"
        ),
    )
}

/// A 16x16, 2 -> 2 configuration small enough for hundreds of steps.
fn small_config(steps: u64) -> ModelConfig {
    let mut cfg = presets::bimodal();
    cfg.generator.n_scales = 2;
    cfg.generator.base_channels = 4;
    cfg.generator.context_len = 2;
    cfg.generator.horizon = 2;
    cfg.autoencoder.steps = 50;
    cfg.batch_size = 4;
    cfg.steps = steps;
    cfg.dataset = DatasetConfig::Generated {
        spec: MovingSpriteSpec {
            canvas: (16, 16),
            n_sprites: 1,
            speed: 2.0,
            glyphs: GlyphSource::Digits { size: 6 },
            seed: 0,
        },
        train_count: 64,
        val_count: 4,
        length: None,
    };
    cfg
}

fn criterion_6() -> Outcome {
    let cfg = small_config(200);
    let (train, _, splits) = cfg.windows().unwrap();
    let enc = pretrain_autoencoder(&splits.train, &cfg.autoencoder).unwrap().encoder;
    let before = enc.digest();
    let mut trainer = Trainer::new(Model::new(cfg, enc).unwrap());
    let gen_before = param_digest(&trainer.model.gen_params);
    for _ in 0..200 {
        let batch = trainer.sample_batch(&train);
        trainer.train_step(&batch).unwrap();
    }
    let after = trainer.model.manifold.digest();
    let gen_after = param_digest(&trainer.model.gen_params);
    outcome(
        before == after && gen_before != gen_after,
        format!(
            "encoder digest {}… before and {}… after 200 adversarial steps (generator digest changed: {})",
            &before[..12],
            &after[..12],
            gen_before != gen_after
        ),
    )
}

fn criterion_7(dir: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = presets::toy_sprites();
    let summary = match fit(&cfg, &dir.join("toy"), &FitOptions::default()) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let early: Vec<f64> = summary.validation.iter().filter(|(s, _)| *s <= 100).map(|v| v.1).collect();
    let baseline = early.iter().sum::<f64>() / early.len().max(1) as f64;
    let last = summary.validation.last().map_or(f64::NAN, |v| v.1);
    let finite = summary.losses.len() as u64 == cfg.steps && summary.losses.iter().all(|(_, b)| b.is_finite());
    let ratio = last / baseline;
    outcome(
        ratio <= 0.7 && finite && secs < 1800.0,
        format!(
            "val l1 {last:.5} at step {} vs {baseline:.5} mean of evals ≤ step 100 (ratio {ratio:.3}, need ≤ 0.70); all {} logged losses finite: {finite}; {:.1} min",
            cfg.steps,
            summary.losses.len(),
            secs / 60.0
        ),
    )
}

fn train_bimodal(dir: &Path, cfg: &ModelConfig) -> vidpred::Result<Trainer> {
    let summary = fit(cfg, dir, &FitOptions::default())?;
    Trainer::load(&summary.checkpoint)
}

fn criterion_8(full: &vidpred::Result<Trainer>) -> Outcome {
    let trainer = match full {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let cfg = &trainer.model.config;
    let (_, val, _) = cfg.windows().unwrap();
    let c = direction_counts(&trainer.model, &val[0].context, cfg.generator.horizon, 50, 8).unwrap();
    let (l, r) = (c.left as f64 / 50.0, c.right as f64 / 50.0);
    outcome(
        l >= 0.1 && r >= 0.1,
        format!(
            "50 prior samples: {} left ({:.0}%), {} right ({:.0}%), {} undecided; each direction needs ≥ 10%",
            c.left,
            100.0 * l,
            c.right,
            100.0 * r,
            c.undecided
        ),
    )
}

fn vidpred_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vidpred")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`{}` failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn pipeline(root: &Path, seed: &str, resume_at: Option<u64>) -> Result<(Vec<u8>, Vec<u8>, String, String), String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    std::fs::create_dir_all(root).map_err(|e| e.to_string())?;
    let spec = root.join("spec.json");
    std::fs::write(
        &spec,
        r#"{"canvas": [16, 16], "n_sprites": 1, "speed": 2.0, "glyphs": {"kind": "digits", "size": 6}, "seed": 0}"#,
    )
    .map_err(|e| e.to_string())?;
    let data = root.join("data");
    vidpred_cli(&["gen-data", "--spec", &s(&spec), "--out", &s(&data), "--count", "24", "--length", "4", "--seed", seed])?;
    let ae_cfg = root.join("ae.json");
    let mut cfg = small_config(200);
    std::fs::write(&ae_cfg, serde_json::to_string(&cfg.autoencoder).unwrap()).map_err(|e| e.to_string())?;
    let ae = root.join("encoder.ckpt");
    vidpred_cli(&["pretrain-ae", "--data", &s(&data), "--config", &s(&ae_cfg), "--steps", "50", "--out", &s(&ae), "--seed", seed])?;
    cfg.autoencoder_path = Some(ae.clone());
    cfg.dataset = DatasetConfig::Directory {
        path: data.clone(),
        val_fraction: 0.25,
    };
    cfg.validation.every = 50;
    let cfg_path = root.join("model.json");
    std::fs::write(&cfg_path, cfg.to_json()).map_err(|e| e.to_string())?;
    let run = root.join("run");
    match resume_at {
        None => vidpred_cli(&["train", "--config", &s(&cfg_path), "--out", &s(&run), "--seed", seed])?,
        Some(k) => {
            vidpred_cli(&["train", "--config", &s(&cfg_path), "--out", &s(&run), "--seed", seed, "--steps", &k.to_string()])?;
            vidpred_cli(&["train", "--config", &s(&cfg_path), "--out", &s(&run), "--seed", seed, "--resume"])?;
        }
    }
    let ckpt = run.join(CHECKPOINT_FILE);
    let eval = root.join("eval");
    vidpred_cli(&["evaluate", "--checkpoint", &s(&ckpt), "--data", &s(&data), "--task", "2->2", "--samples", "3", "--out", &s(&eval), "--seed", seed])?;
    let read = |p: &Path| std::fs::read(p).map_err(|e| e.to_string());
    let digests = Trainer::load(&ckpt).map_err(|e| e.to_string())?.model.digests().to_string();
    let log = String::from_utf8(read(&run.join("train_log.csv"))?).unwrap();
    Ok((read(&eval.join("best.csv"))?, read(&eval.join("mean.csv"))?, digests, log))
}

fn criterion_9(dir: &Path) -> Outcome {
    let a = pipeline(&dir.join("pipe_a"), "11", None);
    let b = pipeline(&dir.join("pipe_b"), "11", None);
    let c = pipeline(&dir.join("pipe_c"), "11", Some(190));
    match (a, b, c) {
        (Ok(a), Ok(b), Ok(c)) => {
            let same_csv = a.0 == b.0 && a.1 == b.1;
            let resume_exact = a.2 == c.2 && a.3 == c.3;
            outcome(
                same_csv && resume_exact,
                format!(
                    "gen-data → pretrain-ae → train (200 steps) → evaluate twice: identical metric CSVs: {same_csv}; resume at step 190 matches the uninterrupted run over the last 10 steps (log rows and parameter digests): {resume_exact}"
                ),
            )
        }
        (a, b, c) => outcome(
            false,
            [a.err(), b.err(), c.err()].into_iter().flatten().collect::<Vec<_>>().join("; "),
        ),
    }
}

fn criterion_10(dir: &Path, full: &vidpred::Result<Trainer>) -> Outcome {
    let full = match full {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let mut cfg = full.model.config.clone();
    cfg.weights.mggan1 = 0.0;
    cfg.weights.mggan2 = 0.0;
    let vae = match train_bimodal(&dir.join("bimodal_vae"), &cfg) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("ablation training failed: {e}")),
    };
    let (_, val, _) = cfg.windows().unwrap();
    let score = |t: &Trainer| evaluate_run(&t.model, &val, 5, 10, cfg.metrics_reduction).unwrap().best.aggregate.ssim;
    let (s_full, s_vae) = (score(full), score(&vae));
    outcome(
        s_full >= s_vae,
        format!("best-of-5 SSIM on the two-mode set: full {s_full:.4} vs λ3=λ4=0 {s_vae:.4}"),
    )
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let quick = std::env::var("VIDPRED_ACCEPTANCE").is_ok_and(|v| v == "quick");
    let skipped = |n: u32| quick && selected.is_empty() && [7, 8, 10].contains(&n);
    let wants = |n: u32| (selected.is_empty() || selected.contains(&n)) && !skipped(n);
    let dir = tempfile::tempdir().unwrap();
    let names = [
        "metric oracles",
        "loss algebra",
        "KL correctness",
        "gradient suite",
        "E3D recall properties",
        "frozen manifold encoder",
        "toy training trend",
        "stochastic diversity",
        "pipeline determinism",
        "ablation direction (informational)",
    ];
    let bimodal = if wants(8) || wants(10) {
        Some(train_bimodal(&dir.path().join("bimodal"), &presets::bimodal()))
    } else {
        None
    };
    let mut blocking_failures = 0;
    for n in 1..=10u32 {
        if skipped(n) {
            println!("criterion {n:>2} [{}]: SKIP (VIDPRED_ACCEPTANCE=quick)", names[n as usize - 1]);
        }
        if !wants(n) {
            continue;
        }
        let o = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(dir.path()),
            8 => criterion_8(bimodal.as_ref().unwrap()),
            9 => criterion_9(dir.path()),
            _ => criterion_10(dir.path(), bimodal.as_ref().unwrap()),
        };
        if !o.pass && n != 10 {
            blocking_failures += 1;
        }
        let verdict = match (o.pass, n) {
            (true, _) => "PASS",
            (false, 10) => "FAIL (non-blocking)",
            (false, _) => "FAIL",
        };
        println!("criterion {n:>2} [{}]: {verdict}: {}", names[n as usize - 1], o.detail);
    }
    if blocking_failures > 0 {
        std::process::exit(1);
    }
}
