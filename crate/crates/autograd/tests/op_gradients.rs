use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vidpred_autograd::{
    attend, concat, conv2d, conv3d, finite_difference, linear, stack_time, worst_relative_error,
    Bound, Graph, ParamSet, Tensor, Var,
};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;

/// Checks `op` by projecting its output onto a fixed random tensor.
fn check(params: &ParamSet, op: impl for<'g> Fn(&Bound<'g>) -> Var<'g>) {
    let proj = {
        let g = Graph::new();
        let b = params.bind_frozen(&g);
        let shape = op(&b).shape();
        Tensor::randn(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(99))
    };
    let analytic = {
        let g = Graph::new();
        let b = params.bind(&g);
        let loss = op(&b).mul(g.constant(proj.clone())).sum();
        b.grads(&g.backward(loss))
    };
    let numeric = finite_difference(params, STEP, |p| {
        let g = Graph::new();
        let b = p.bind_frozen(&g);
        op(&b).mul(g.constant(proj.clone())).sum().value().item()
    });
    let (err, name) = worst_relative_error(params, &analytic, &numeric);
    assert!(err < TOL, "gradient mismatch on {name}: {err:e}");
}

fn rand_set(shapes: &[(&str, &[usize])], seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::new();
    for (name, shape) in shapes {
        set.add(*name, Tensor::randn(shape, 0.7, &mut rng));
    }
    set
}

#[test]
fn elementwise_ops() {
    let set = rand_set(&[("a", &[2, 3, 4]), ("b", &[2, 3, 4])], 1);
    let a = set.find("a").unwrap();
    let b = set.find("b").unwrap();
    check(&set, |p| p[a].add(p[b]).mul(p[a]).sub(p[b].scale(0.3)));
    check(&set, |p| p[a].sigmoid().mul(p[b].tanh()));
    check(&set, |p| p[a].leaky_relu(0.2).shift(0.5).exp());
    check(&set, |p| p[a].mul(p[a]).shift(0.1).ln());
    check(&set, |p| p[a].abs().add(p[b].clamp(-0.5, 0.5)));
    check(&set, |p| p[a].one_minus().mean().mul(p[b].sum()));
}

#[test]
fn shape_ops() {
    let set = rand_set(&[("a", &[2, 6, 3]), ("b", &[2, 2, 3])], 2);
    let a = set.find("a").unwrap();
    let b = set.find("b").unwrap();
    check(&set, |p| concat(&[p[a], p[b], p[a]], 1));
    check(&set, |p| {
        let parts = p[a].chunk(1, 3);
        parts[0].mul(parts[2]).add(parts[1]).reshape(&[12])
    });
    check(&set, |p| p[a].slice(2, 1, 2));
}

#[test]
fn convolutions() {
    let set = rand_set(
        &[
            ("x", &[2, 3, 3, 5, 6]),
            ("w", &[4, 3, 2, 3, 3]),
            ("b", &[4]),
        ],
        3,
    );
    let (x, w, b) = (
        set.find("x").unwrap(),
        set.find("w").unwrap(),
        set.find("b").unwrap(),
    );
    check(&set, |p| conv3d(p[x], p[w], Some(p[b]), [1, 2, 2], [0, 1, 1]));
    check(&set, |p| conv3d(p[x], p[w], None, [1, 1, 1], [1, 0, 1]));

    let set2 = rand_set(&[("x", &[2, 3, 6, 6]), ("w", &[5, 3, 3, 3]), ("b", &[5])], 4);
    let (x, w, b) = (
        set2.find("x").unwrap(),
        set2.find("w").unwrap(),
        set2.find("b").unwrap(),
    );
    check(&set2, |p| conv2d(p[x], p[w], Some(p[b]), 2, 1));
    check(&set2, |p| conv2d(p[x], p[w], Some(p[b]), 1, 1).tanh());
}

#[test]
fn dense_and_channel_ops() {
    let set = rand_set(
        &[
            ("x", &[3, 5]),
            ("w", &[4, 5]),
            ("b", &[4]),
            ("m", &[2, 3, 4, 4]),
            ("gain", &[3]),
            ("off", &[3]),
        ],
        5,
    );
    let id = |n: &str| set.find(n).unwrap();
    let (x, w, b, m, gain, off) = (id("x"), id("w"), id("b"), id("m"), id("gain"), id("off"));
    check(&set, |p| linear(p[x], p[w], Some(p[b])).sigmoid());
    check(&set, |p| p[m].standardize(1e-5).channel_affine(Some(p[gain]), Some(p[off])));
    check(&set, |p| p[m].mean_rest().broadcast_rest(&[2, 2]));
    check(&set, |p| p[m].upsample2x());
    check(&set, |p| p[m].avgpool2x());
    check(&set, |p| stack_time(&[p[m], p[m].tanh()]));
}

#[test]
fn attention_read() {
    let set = rand_set(
        &[
            ("q", &[2, 3, 2, 2]),
            ("k0", &[2, 3, 2, 2]),
            ("k1", &[2, 3, 2, 2]),
            ("v0", &[2, 3, 2, 2]),
            ("v1", &[2, 3, 2, 2]),
        ],
        6,
    );
    let id = |n: &str| set.find(n).unwrap();
    let (q, k0, k1, v0, v1) = (id("q"), id("k0"), id("k1"), id("v0"), id("v1"));
    check(&set, |p| attend(p[q], &[p[k0], p[k1]], &[p[v0], p[v1]]));
    // Keys doubling as values.
    check(&set, |p| attend(p[q], &[p[v0], p[v1]], &[p[v0], p[v1]]));
}

#[test]
fn bilinear_upsample_of_constant_is_constant() {
    let g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 3, 5], 0.5));
    let y = x.upsample2x().value();
    assert_eq!(y.shape(), &[1, 1, 6, 10]);
    assert!(y.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
}

#[test]
fn attention_on_empty_bank_is_zero() {
    let g = Graph::new();
    let q = g.constant(Tensor::ones(&[2, 4]));
    let out = attend(q, &[], &[]);
    assert_eq!(out.value().data(), &[0.0; 8]);
}

#[test]
fn backward_skips_constants() {
    let g = Graph::new();
    let c = g.constant(Tensor::ones(&[3]));
    let p = g.param(Tensor::full(&[3], 2.0));
    let loss = c.mul(p).sum();
    let grads = g.backward(loss);
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(p).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn linear_matches_hand_product() {
    let g = Graph::new();
    let x = g.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
    let w = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.5, -1.0, 3.0]).unwrap());
    let b = g.constant(Tensor::new(&[2], vec![0.25, 0.0]).unwrap());
    let y = linear(x, w, Some(b)).value();
    assert_eq!(y.data(), &[2.25, 5.0]);
}
