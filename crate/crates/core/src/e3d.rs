//! Eidetic 3D LSTM cell with a bounded bank of past cell states read by
//! attention (RECALL), and a plain convolutional LSTM baseline.
//!
//! Cell update, with gates from a 3D convolution over the last `window`
//! inputs plus a 2D convolution over the hidden state:
//!
//! ```text
//! i, f, o, r = sigmoid(..),  g = tanh(..)
//! recall     = attend(query = r, keys = key_proj(bank), values = bank)
//! cell'      = i * g + gain * standardize(f * cell + recall) + offset
//! hidden'    = o * tanh(cell')
//! bank'      = bank ++ [cell']   (oldest evicted beyond capacity)
//! ```

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use vidpred_autograd::{attend, conv2d, conv3d, stack_time, Bound, Graph, ParamId, ParamSet, Tensor, Var};

use crate::{Error, Result};

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub in_channels: usize,
    /// Hidden/cell channels `K`.
    pub channels: usize,
    /// Bank capacity `tau`.
    pub bank_capacity: usize,
    /// Number of most recent inputs seen by the 3D gate convolution.
    pub temporal_window: usize,
    pub kernel: usize,
}

impl CellConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("in_channels", self.in_channels),
            ("channels", self.channels),
            ("bank_capacity", self.bank_capacity),
            ("temporal_window", self.temporal_window),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config("kernel", "must be odd"));
        }
        Ok(())
    }
}

/// Recurrent state of one E3D cell on a graph.
#[derive(Clone, Debug)]
pub struct RecallState<'g> {
    pub hidden: Var<'g>,
    pub cell: Var<'g>,
    /// Past cell maps, oldest first, with their projected keys.
    bank: VecDeque<(Var<'g>, Var<'g>)>,
    /// The previous `window - 1` inputs, oldest first.
    inputs: VecDeque<Var<'g>>,
    capacity: usize,
}

impl<'g> RecallState<'g> {
    pub fn bank_len(&self) -> usize {
        self.bank.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn bank(&self) -> impl Iterator<Item = Var<'g>> + '_ {
        self.bank.iter().map(|(c, _)| *c)
    }

    /// Replaces every bank entry by a zero map of the same shape.
    pub fn zero_bank(&mut self, graph: &'g Graph) {
        for (c, k) in self.bank.iter_mut() {
            *c = graph.constant(Tensor::zeros(&c.shape()));
            *k = graph.constant(Tensor::zeros(&k.shape()));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.hidden.value().all_finite() && self.cell.value().all_finite()
    }
}

/// Attention read over bank entries, using the entries themselves as keys.
pub fn recall_attend<'g>(query: Var<'g>, bank: &[Var<'g>]) -> Var<'g> {
    attend(query, bank, bank)
}

/// Softmax weights of `query` over `bank` for batch row 0.
pub fn recall_weights(query: &Tensor, bank: &[Tensor]) -> Vec<f64> {
    let refs: Vec<&Tensor> = bank.iter().collect();
    let n = bank.len();
    vidpred_autograd::attention_weights(query, &refs)[..n].to_vec()
}

/// Parameters of an E3D cell.
#[derive(Clone, Debug)]
pub struct E3dCell {
    pub config: CellConfig,
    w_input: ParamId,
    b_input: ParamId,
    w_hidden: ParamId,
    w_key: ParamId,
    gain: ParamId,
    offset: ParamId,
}

fn randn<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    Tensor::randn(shape, (1.0 / fan_in as f64).sqrt(), rng)
}

impl E3dCell {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        config: CellConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (cin, k, win, ks) = (
            config.in_channels,
            config.channels,
            config.temporal_window,
            config.kernel,
        );
        let w_input = params.add(
            format!("{name}.w_input"),
            randn(&[5 * k, cin, win, ks, ks], cin * win * ks * ks, rng),
        );
        let b_input = params.add(format!("{name}.b_input"), Tensor::zeros(&[5 * k]));
        let w_hidden = params.add(
            format!("{name}.w_hidden"),
            randn(&[5 * k, k, ks, ks], k * ks * ks, rng),
        );
        let w_key = params.add(format!("{name}.w_key"), randn(&[k, k, 1, 1], k, rng));
        let gain = params.add(format!("{name}.gain"), Tensor::ones(&[k]));
        let offset = params.add(format!("{name}.offset"), Tensor::zeros(&[k]));
        Ok(Self {
            config,
            w_input,
            b_input,
            w_hidden,
            w_key,
            gain,
            offset,
        })
    }

    /// Zero hidden/cell maps, empty bank, zero input history.
    pub fn initial_state<'g>(&self, graph: &'g Graph, batch: usize, h: usize, w: usize) -> RecallState<'g> {
        let k = self.config.channels;
        let zeros = |c| graph.constant(Tensor::zeros(&[batch, c, h, w]));
        RecallState {
            hidden: zeros(k),
            cell: zeros(k),
            bank: VecDeque::new(),
            inputs: (1..self.config.temporal_window)
                .map(|_| zeros(self.config.in_channels))
                .collect(),
            capacity: self.config.bank_capacity,
        }
    }

    fn check_input(&self, input: &Var<'_>, state: &RecallState<'_>) -> Result<()> {
        let s = input.shape();
        let hs = state.hidden.shape();
        if s.len() != 4 || s[1] != self.config.in_channels || s[0] != hs[0] || s[2..] != hs[2..] {
            return Err(Error::config(
                "input",
                format!(
                    "cell expects [{}, {}, {}, {}], got {s:?}",
                    hs[0], self.config.in_channels, hs[2], hs[3]
                ),
            ));
        }
        Ok(())
    }

    /// Gate pre-activations `(i, f, g, o, r)` from the input window and hidden state.
    fn gates<'g>(
        &self,
        p: &Bound<'g>,
        input: Var<'g>,
        state: &RecallState<'g>,
    ) -> (Vec<Var<'g>>, VecDeque<Var<'g>>) {
        let mut window: Vec<Var<'g>> = state.inputs.iter().copied().collect();
        window.push(input);
        let pad = self.config.kernel / 2;
        let x = conv3d(
            stack_time(&window),
            p[self.w_input],
            Some(p[self.b_input]),
            [1, 1, 1],
            [0, pad, pad],
        );
        let xs = x.shape();
        let x = x.reshape(&[xs[0], xs[1], xs[3], xs[4]]);
        let h = conv2d(state.hidden, p[self.w_hidden], None, 1, pad);
        let mut inputs: VecDeque<Var<'g>> = window.into_iter().collect();
        inputs.pop_front();
        (x.add(h).chunk(1, 5), inputs)
    }

    fn step_inner<'g>(
        &self,
        p: &Bound<'g>,
        input: Var<'g>,
        state: RecallState<'g>,
        use_recall: bool,
    ) -> Result<(Var<'g>, RecallState<'g>)> {
        self.check_input(&input, &state)?;
        let (pre, inputs) = self.gates(p, input, &state);
        let i = pre[0].sigmoid();
        let f = pre[1].sigmoid();
        let g = pre[2].tanh();
        let o = pre[3].sigmoid();
        let r = pre[4].sigmoid();
        let carried = f.mul(state.cell);
        let memory = if use_recall && !state.bank.is_empty() {
            let keys: Vec<Var<'g>> = state.bank.iter().map(|(_, k)| *k).collect();
            let values: Vec<Var<'g>> = state.bank.iter().map(|(c, _)| *c).collect();
            carried.add(attend(r, &keys, &values))
        } else {
            carried
        };
        let normalized = memory
            .standardize(NORM_EPS)
            .channel_affine(Some(p[self.gain]), Some(p[self.offset]));
        let cell = i.mul(g).add(normalized);
        let hidden = o.mul(cell.tanh());
        let mut bank = state.bank;
        if use_recall {
            let key = conv2d(cell, p[self.w_key], None, 1, 0);
            bank.push_back((cell, key));
            while bank.len() > state.capacity {
                bank.pop_front();
            }
        }
        Ok((
            hidden,
            RecallState {
                hidden,
                cell,
                bank,
                inputs,
                capacity: state.capacity,
            },
        ))
    }

    /// One recurrent step; the output is the new hidden map.
    pub fn step<'g>(
        &self,
        p: &Bound<'g>,
        input: Var<'g>,
        state: RecallState<'g>,
    ) -> Result<(Var<'g>, RecallState<'g>)> {
        self.step_inner(p, input, state, true)
    }

    /// The same update with the recall read and bank write removed.
    pub fn step_without_recall<'g>(
        &self,
        p: &Bound<'g>,
        input: Var<'g>,
        state: RecallState<'g>,
    ) -> Result<(Var<'g>, RecallState<'g>)> {
        self.step_inner(p, input, state, false)
    }
}

/// Recurrent state of a convolutional LSTM.
#[derive(Clone, Copy, Debug)]
pub struct LstmState<'g> {
    pub hidden: Var<'g>,
    pub cell: Var<'g>,
}

/// Convolutional LSTM: `cell' = f * cell + i * g`, `hidden' = o * tanh(cell')`.
#[derive(Clone, Debug)]
pub struct ConvLstmCell {
    pub in_channels: usize,
    pub channels: usize,
    kernel: usize,
    w_input: ParamId,
    b_input: ParamId,
    w_hidden: ParamId,
}

impl ConvLstmCell {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let k = channels;
        Self {
            in_channels,
            channels,
            kernel,
            w_input: params.add(
                format!("{name}.w_input"),
                randn(&[4 * k, in_channels, kernel, kernel], in_channels * kernel * kernel, rng),
            ),
            b_input: params.add(format!("{name}.b_input"), Tensor::zeros(&[4 * k])),
            w_hidden: params.add(
                format!("{name}.w_hidden"),
                randn(&[4 * k, k, kernel, kernel], k * kernel * kernel, rng),
            ),
        }
    }

    /// Index of the forget-gate bias block inside the input bias (`[i, f, g, o]` order).
    pub fn forget_bias_range(&self) -> std::ops::Range<usize> {
        self.channels..2 * self.channels
    }

    pub fn input_bias_range(&self) -> std::ops::Range<usize> {
        0..self.channels
    }

    pub fn bias_id(&self) -> ParamId {
        self.b_input
    }

    pub fn initial_state<'g>(&self, graph: &'g Graph, batch: usize, h: usize, w: usize) -> LstmState<'g> {
        let zeros = || graph.constant(Tensor::zeros(&[batch, self.channels, h, w]));
        LstmState {
            hidden: zeros(),
            cell: zeros(),
        }
    }

    pub fn step<'g>(
        &self,
        p: &Bound<'g>,
        input: Var<'g>,
        state: LstmState<'g>,
    ) -> Result<(Var<'g>, LstmState<'g>)> {
        let s = input.shape();
        let hs = state.hidden.shape();
        if s.len() != 4 || s[1] != self.in_channels || s[0] != hs[0] || s[2..] != hs[2..] {
            return Err(Error::config(
                "input",
                format!("conv-LSTM expects {} input channels matching the state, got {s:?}", self.in_channels),
            ));
        }
        let pad = self.kernel / 2;
        let pre = conv2d(input, p[self.w_input], Some(p[self.b_input]), 1, pad)
            .add(conv2d(state.hidden, p[self.w_hidden], None, 1, pad))
            .chunk(1, 4);
        let i = pre[0].sigmoid();
        let f = pre[1].sigmoid();
        let g = pre[2].tanh();
        let o = pre[3].sigmoid();
        let cell = f.mul(state.cell).add(i.mul(g));
        let hidden = o.mul(cell.tanh());
        Ok((hidden, LstmState { hidden, cell }))
    }
}
