//! Steps an eidetic 3D LSTM cell over random feature maps and shows the
//! FIFO memory bank filling up and the attention weights over it.
//!
//! ```text
//! cargo run --release -p vidpred --example e3d_recall
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vidpred::e3d::{recall_weights, CellConfig, E3dCell};
use vidpred_autograd::{Graph, ParamSet, Tensor};

fn main() -> vidpred::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ParamSet::new();
    let config = CellConfig {
        in_channels: 2,
        channels: 8,
        bank_capacity: 3,
        temporal_window: 2,
        kernel: 3,
    };
    let cell = E3dCell::new(&mut params, "cell", config, &mut rng)?;
    println!("{} parameters", params.num_scalars());

    let g = Graph::new();
    let p = params.bind_frozen(&g);
    let mut state = cell.initial_state(&g, 1, 8, 8);
    for t in 0..6 {
        let input = g.constant(Tensor::randn(&[1, 2, 8, 8], 1.0, &mut rng));
        let bank: Vec<Tensor> = state.bank().map(|c| (*c.value()).clone()).collect();
        let (hidden, next) = cell.step(&p, input, state)?;
        let weights = recall_weights(&next.cell.value(), &bank);
        let shown: Vec<String> = weights.iter().map(|w| format!("{w:.3}")).collect();
        println!(
            "step {t}: bank {}/{}  |hidden| {:.3}  recall weights [{}]",
            next.bank_len(),
            next.capacity(),
            hidden.value().max_abs(),
            shown.join(", ")
        );
        state = next;
    }
    Ok(())
}
