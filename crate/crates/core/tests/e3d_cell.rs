use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vidpred::e3d::{recall_weights, CellConfig, ConvLstmCell, E3dCell};
use vidpred_autograd::{finite_difference, worst_relative_error, Graph, ParamSet, Tensor};

fn small_cell(tau: usize) -> (E3dCell, ParamSet) {
    let mut params = ParamSet::new();
    let config = CellConfig {
        in_channels: 2,
        channels: 2,
        bank_capacity: tau,
        temporal_window: 2,
        kernel: 3,
    };
    let cell = E3dCell::new(&mut params, "e3d", config, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    (cell, params)
}

fn inputs(steps: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps)
        .map(|_| Tensor::randn(&[1, 2, 4, 4], 1.0, &mut rng))
        .collect()
}

#[test]
fn e3d_gradients_match_finite_differences() {
    let (cell, params) = small_cell(3);
    let xs = inputs(5, 3);
    let proj = Tensor::randn(&[1, 2, 4, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
    let loss = |p: &ParamSet, train: bool| {
        let g = Graph::new();
        let b = if train { p.bind(&g) } else { p.bind_frozen(&g) };
        let mut state = cell.initial_state(&g, 1, 4, 4);
        let mut out = None;
        for x in &xs {
            let (h, next) = cell.step(&b, g.constant(x.clone()), state).unwrap();
            state = next;
            out = Some(h);
        }
        let l = out.unwrap().mul(g.constant(proj.clone())).sum();
        let grads = train.then(|| b.grads(&g.backward(l)));
        (l.value().item(), grads)
    };
    let analytic = loss(&params, true).1.unwrap();
    let numeric = finite_difference(&params, 1e-5, |p| loss(p, false).0);
    let (err, name) = worst_relative_error(&params, &analytic, &numeric);
    assert!(err < 1e-4, "{name}: {err:e}");
}

#[test]
fn conv_lstm_gradients_match_finite_differences() {
    let mut params = ParamSet::new();
    let cell = ConvLstmCell::new(&mut params, "lstm", 2, 2, 3, &mut ChaCha8Rng::seed_from_u64(2));
    let xs = inputs(3, 5);
    let loss = |p: &ParamSet, train: bool| {
        let g = Graph::new();
        let b = if train { p.bind(&g) } else { p.bind_frozen(&g) };
        let mut state = cell.initial_state(&g, 1, 4, 4);
        for x in &xs {
            state = cell.step(&b, g.constant(x.clone()), state).unwrap().1;
        }
        let l = state.hidden.tanh().sum();
        let grads = train.then(|| b.grads(&g.backward(l)));
        (l.value().item(), grads)
    };
    let analytic = loss(&params, true).1.unwrap();
    let numeric = finite_difference(&params, 1e-5, |p| loss(p, false).0);
    let (err, name) = worst_relative_error(&params, &analytic, &numeric);
    assert!(err < 1e-4, "{name}: {err:e}");
}

#[test]
fn zeroed_bank_matches_bankless_update() {
    let (cell, params) = small_cell(3);
    let xs = inputs(6, 8);
    let g = Graph::new();
    let b = params.bind_frozen(&g);
    let mut state = cell.initial_state(&g, 1, 4, 4);
    for x in &xs[..4] {
        state = cell.step(&b, g.constant(x.clone()), state).unwrap().1;
    }
    state.zero_bank(&g);
    let x = g.constant(xs[4].clone());
    let (with_bank, _) = cell.step(&b, x, state.clone()).unwrap();
    let (bankless, _) = cell.step_without_recall(&b, x, state).unwrap();
    let diff = with_bank.value().zip_map(&bankless.value(), |a, b| a - b).unwrap();
    assert!(diff.max_abs() <= 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn recall_weights_are_a_distribution(n in 1usize..8, seed in 0u64..1000, scale in 0.0f64..30.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let query = Tensor::randn(&[1, 32], scale, &mut rng);
        let bank: Vec<Tensor> = (0..n).map(|_| Tensor::randn(&[1, 32], scale, &mut rng)).collect();
        let w = recall_weights(&query, &bank);
        prop_assert_eq!(w.len(), n);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bank_length_is_min_of_steps_and_capacity(steps in 0usize..9, tau in 1usize..6) {
        let (cell, params) = small_cell(tau);
        let g = Graph::new();
        let b = params.bind_frozen(&g);
        let mut state = cell.initial_state(&g, 1, 4, 4);
        for x in inputs(steps, 1) {
            state = cell.step(&b, g.constant(x), state).unwrap().1;
        }
        prop_assert_eq!(state.bank_len(), steps.min(tau));
        prop_assert!(state.is_finite());
    }
}
