//! Compares reverse-mode gradients of a two-scale generator rollout against
//! central finite differences.
//!
//! ```text
//! cargo run --release -p vidpred --example gradient_check
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vidpred::generator::{Generator, GeneratorConfig};
use vidpred_autograd::{finite_difference, worst_relative_error, Graph, Tensor};

fn main() -> vidpred::Result<()> {
    let config = GeneratorConfig {
        n_scales: 2,
        base_channels: 2,
        context_len: 2,
        horizon: 2,
        d_z: 2,
        bank_capacity: 2,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (generator, params) = Generator::new(config, &mut rng)?;
    let frames: Vec<Tensor> = (0..2).map(|_| Tensor::randn(&[1, 1, 8, 8], 0.5, &mut rng)).collect();
    let latents: Vec<Tensor> = (0..2).map(|_| Tensor::randn(&[1, 2], 1.0, &mut rng)).collect();

    let loss = |g: &Graph, p: &vidpred_autograd::Bound<'_>| -> vidpred::Result<f64> {
        let ctx: Vec<_> = frames.iter().map(|f| g.constant(f.clone())).collect();
        let z: Vec<_> = latents.iter().map(|t| g.constant(t.clone())).collect();
        let preds = generator.rollout(p, &ctx, &z)?;
        Ok(preds.iter().map(|v| v.value().sum()).sum())
    };

    let g = Graph::new();
    let bound = params.bind(&g);
    let ctx: Vec<_> = frames.iter().map(|f| g.constant(f.clone())).collect();
    let z: Vec<_> = latents.iter().map(|t| g.constant(t.clone())).collect();
    let preds = generator.rollout(&bound, &ctx, &z)?;
    let total = preds.iter().map(|v| v.sum()).reduce(|a, b| a.add(b)).expect("horizon > 0");
    let analytic = bound.grads(&g.backward(total));

    let numeric = finite_difference(&params, 1e-5, |p| {
        let g = Graph::new();
        loss(&g, &p.bind_frozen(&g)).expect("rollout")
    });
    let (err, name) = worst_relative_error(&params, &analytic, &numeric);
    println!(
        "{} parameters in {} tensors; worst relative error {err:.2e} at `{name}`",
        params.num_scalars(),
        params.len()
    );
    Ok(())
}
