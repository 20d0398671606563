use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vidpred::adversary::{pretrain_autoencoder, AutoencoderConfig, DiscriminatorHead};
use vidpred::data::{generate_moving_sprites, GlyphSource, MovingSpriteSpec, VideoSequence};
use vidpred::latent::GaussianVars;
use vidpred::losses::{combined_loss, kl_var, l1_loss, l1_var, mggan_d_var, mggan_g_var, L1Norm, LossParts, LossWeights};
use vidpred_autograd::{finite_difference, stack_time, worst_relative_error, Bound, Graph, ParamSet, Tensor, Var};

fn fd_check(params: &ParamSet, tol: f64, f: impl for<'g> Fn(&Bound<'g>) -> Var<'g>) {
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
    let (err, name) = worst_relative_error(params, &analytic, &numeric);
    assert!(err < tol, "{name}: {err:e}");
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let t = Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    t.map(|v| lo + (hi - lo) * vidpred_autograd::sigmoid(v))
}

#[test]
fn l1_gradients() {
    let mut p = ParamSet::new();
    let frames: Vec<_> = (0..3)
        .map(|t| p.add(format!("pred{t}"), uniform(&[2, 1, 4, 4], 0.0, 1.0, t)))
        .collect();
    let targets: Vec<Tensor> = (0..3).map(|t| uniform(&[2, 1, 4, 4], 0.0, 1.0, 10 + t)).collect();
    for norm in [L1Norm::Mean, L1Norm::Sum] {
        fd_check(&p, 1e-4, |b| {
            let g = b.var(frames[0]).graph();
            let pred: Vec<_> = frames.iter().map(|&id| b[id]).collect();
            let tgt: Vec<_> = targets.iter().map(|t| g.constant(t.clone())).collect();
            l1_var(&pred, &tgt, norm)
        });
    }
}

#[test]
fn kl_gradients() {
    let mut p = ParamSet::new();
    let stats: Vec<_> = (0..2)
        .map(|t| {
            (
                p.add(format!("mean{t}"), uniform(&[3, 4], -2.0, 2.0, t)),
                p.add(format!("logvar{t}"), uniform(&[3, 4], -2.0, 2.0, 5 + t)),
            )
        })
        .collect();
    fd_check(&p, 1e-6, |b| {
        let posts: Vec<_> = stats
            .iter()
            .map(|&(m, l)| GaussianVars { mean: b[m], logvar: b[l] })
            .collect();
        kl_var(&posts)
    });
}

#[test]
fn mggan_gradients() {
    let mut p = ParamSet::new();
    let ids: Vec<_> = (0..4)
        .map(|i| p.add(format!("s{i}"), uniform(&[5, 1], 0.05, 0.95, 20 + i)))
        .collect();
    fd_check(&p, 1e-4, |b| mggan_d_var(b[ids[0]], b[ids[1]], b[ids[2]], b[ids[3]]));
    fd_check(&p, 1e-4, |b| mggan_g_var(b[ids[2]], b[ids[3]]));
}

fn sprite_clips() -> Vec<VideoSequence> {
    let spec = MovingSpriteSpec {
        canvas: (8, 8),
        n_sprites: 1,
        glyphs: GlyphSource::Digits { size: 4 },
        ..Default::default()
    };
    (0..2)
        .map(|i| generate_moving_sprites(&spec.with_seed(i), 4).unwrap())
        .collect()
}

#[test]
fn video_head_gradients() {
    let (head, mut params) = DiscriminatorHead::video("d", 1, [2, 3], &mut ChaCha8Rng::seed_from_u64(1));
    // Zero biases on blank padded regions sit exactly on the leaky-ReLU kink.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for t in params.tensors_mut() {
        t.add_assign(&Tensor::randn(t.shape(), 0.1, &mut rng));
    }
    let clips = sprite_clips();
    let refs: Vec<&VideoSequence> = clips.iter().collect();
    fd_check(&params, 1e-3, |b| {
        let g = b.var(params.ids().next().unwrap()).graph();
        let frames = vidpred::generator::context_vars(g, &refs).unwrap();
        head.score(b, stack_time(&frames)).ln().sum()
    });
}

#[test]
fn manifold_head_gradients_reach_frames_through_frozen_encoder() {
    let clips = sprite_clips();
    let ae = AutoencoderConfig {
        feature_dim: 3,
        channels: [2, 2],
        steps: 5,
        batch: 2,
        ..Default::default()
    };
    let enc = pretrain_autoencoder(&clips, &ae).unwrap().encoder;
    let (head, head_params) = DiscriminatorHead::manifold("dm", 3, 4, &mut ChaCha8Rng::seed_from_u64(2));
    fd_check(&head_params, 1e-3, |b| {
        let g = b.var(head_params.ids().next().unwrap()).graph();
        let frames = vidpred::generator::context_vars(g, &[&clips[0], &clips[1]]).unwrap();
        head.score(b, enc.map_clip(&frames).unwrap()).one_minus().ln().sum()
    });

    // Frames as the trainable leaves: gradients pass the encoder.
    let mut fp = ParamSet::new();
    let ids: Vec<_> = (0..4)
        .map(|t| fp.add(format!("f{t}"), Tensor::new(&[1, 1, 8, 8], clips[0].frame(t).to_vec()).unwrap()))
        .collect();
    fd_check(&fp, 1e-3, |b| {
        let g = b.var(ids[0]).graph();
        let hp = head_params.bind_frozen(g);
        let frames: Vec<_> = ids.iter().map(|&id| b[id]).collect();
        head.score(&hp, enc.map_clip(&frames).unwrap()).ln().sum()
    });
}

proptest! {
    #[test]
    fn combined_is_linear(
        parts in prop::array::uniform4(0.0f64..10.0),
        a in 0.0f64..5.0,
    ) {
        let w = LossWeights::default();
        let p = LossParts { l1: parts[0], kl: parts[1], mggan1: parts[2], mggan2: parts[3] };
        let scaled = LossParts { l1: a * parts[0], kl: a * parts[1], mggan1: a * parts[2], mggan2: a * parts[3] };
        let base = combined_loss(p, w).unwrap().combined;
        prop_assert!((combined_loss(scaled, w).unwrap().combined - a * base).abs() < 1e-9 * (1.0 + a * base));
    }

    #[test]
    fn l1_is_minimized_at_target_under_both_norms(seed in 0u64..500, delta in 0.001f64..0.5) {
        let t = VideoSequence::new("t", [2, 8, 8, 1], uniform(&[128], 0.0, 1.0, seed).into_data()).unwrap();
        let shifted = VideoSequence::new(
            "p",
            [2, 8, 8, 1],
            t.data().iter().map(|v| (v + delta).min(1.0)).collect(),
        ).unwrap();
        for norm in [L1Norm::Mean, L1Norm::Sum] {
            prop_assert_eq!(l1_loss(&t, &t, norm).unwrap(), 0.0);
            prop_assert!(l1_loss(&shifted, &t, norm).unwrap() > 0.0);
        }
    }
}
