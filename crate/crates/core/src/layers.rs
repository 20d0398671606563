//! Parameterized convolution and dense layers over [`ParamSet`]s.

use rand::Rng;
use vidpred_autograd::{conv3d, linear, Bound, ParamId, ParamSet, Tensor, Var};

/// 3D convolution layer; 2D layers use a temporal kernel of 1 on `[B, C, H, W]` inputs.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    planar: bool,
}

fn init_weight<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    Tensor::randn(shape, (1.0 / fan_in as f64).sqrt(), rng)
}

impl Conv {
    /// `k x k` planar convolution with `pad = k / 2`.
    #[allow(clippy::too_many_arguments)]
    pub fn planar<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(
            format!("{name}.weight"),
            init_weight(&[out_ch, in_ch, 1, k, k], rng),
        );
        let bias = bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros(&[out_ch])));
        Self {
            weight,
            bias,
            stride: [1, stride, stride],
            pad: [0, k / 2, k / 2],
            planar: true,
        }
    }

    /// Spatiotemporal convolution on `[B, C, T, H, W]` inputs.
    #[allow(clippy::too_many_arguments)]
    pub fn spatiotemporal<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
        rng: &mut R,
    ) -> Self {
        let mut shape = vec![out_ch, in_ch];
        shape.extend(kernel);
        let weight = params.add(format!("{name}.weight"), init_weight(&shape, rng));
        let bias = Some(params.add(format!("{name}.bias"), Tensor::zeros(&[out_ch])));
        Self {
            weight,
            bias,
            stride,
            pad,
            planar: false,
        }
    }

    pub fn in_channels(&self, params: &ParamSet) -> usize {
        params.get(self.weight).shape()[1]
    }

    pub fn apply<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Var<'g> {
        let bias = self.bias.map(|b| p[b]);
        if self.planar {
            let s = x.shape();
            let x5 = x.reshape(&[s[0], s[1], 1, s[2], s[3]]);
            let y = conv3d(x5, p[self.weight], bias, self.stride, self.pad);
            let ys = y.shape();
            y.reshape(&[ys[0], ys[1], ys[3], ys[4]])
        } else {
            conv3d(x, p[self.weight], bias, self.stride, self.pad)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: params.add(
                format!("{name}.weight"),
                init_weight(&[outputs, inputs], rng),
            ),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(&[outputs])),
        }
    }

    pub fn apply<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Var<'g> {
        linear(x, p[self.weight], Some(p[self.bias]))
    }
}

pub(crate) const LEAK: f64 = 0.2;

/// Sets every parameter to zero.
pub fn zero_params(params: &mut ParamSet) {
    for t in params.tensors_mut() {
        t.data_mut().fill(0.0);
    }
}
