use std::cell::RefCell;
use std::rc::Rc;

use crate::kernels::{self, ConvGeometry};
use crate::Tensor;

/// Append-only tape of tensor operations.
///
/// Shape errors inside ops are programming errors and panic; callers validate
/// user-facing inputs before building the graph.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Shift(usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    LeakyRelu(usize, f64),
    Exp(usize),
    Log(usize),
    Abs(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Slice { src: usize, axis: usize, start: usize },
    Conv3d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    Linear { x: usize, w: usize, b: Option<usize> },
    ChannelAffine {
        x: usize,
        gain: Option<usize>,
        offset: Option<usize>,
    },
    Standardize { x: usize, inv_std: Vec<f64> },
    BroadcastRest(usize),
    MeanRest(usize),
    Upsample2x(usize),
    AvgPool2x(usize),
    Attend {
        query: usize,
        keys: Vec<usize>,
        values: Vec<usize>,
        weights: Vec<f64>,
    },
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            Shift(a) | Scale(a, _) | Sigmoid(a) | Tanh(a) | LeakyRelu(a, _) | Exp(a) | Log(a)
            | Abs(a) | Clamp(a, _, _) | Sum(a) | Mean(a) | Reshape(a) | BroadcastRest(a)
            | MeanRest(a) | Upsample2x(a) | AvgPool2x(a) => vec![*a],
            Concat { parts, .. } => parts.clone(),
            Slice { src, .. } => vec![*src],
            Conv3d { x, w, b, .. } | Linear { x, w, b } => {
                let mut p = vec![*x, *w];
                p.extend(b);
                p
            }
            ChannelAffine { x, gain, offset } => {
                let mut p = vec![*x];
                p.extend(gain);
                p.extend(offset);
                p
            }
            Standardize { x, .. } => vec![*x],
            Attend {
                query,
                keys,
                values,
                ..
            } => {
                let mut p = vec![*query];
                p.extend(keys);
                p.extend(values);
                p
            }
        }
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape when it did not influence the loss.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape().as_slice()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = match &op {
            Op::Leaf => false,
            other => other.parents().iter().any(|&p| nodes[p].needs_grad),
        };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        if !nodes[loss.id].needs_grad {
            return Gradients { grads };
        }
        grads[loss.id] = Some(Tensor::ones(nodes[loss.id].value.shape()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            backprop_node(&nodes, id, &g, &mut grads);
        }
        Gradients { grads }
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let needs = |i: usize| nodes[i].needs_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            if needs(*b) {
                accumulate(nodes, grads, *b, g.scale(-1.0));
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                let ga = g.zip_map(val(*b), |g, y| g * y).unwrap();
                accumulate(nodes, grads, *a, ga);
            }
            if needs(*b) {
                let gb = g.zip_map(val(*a), |g, x| g * x).unwrap();
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::Shift(a) => accumulate(nodes, grads, *a, g.clone()),
        Op::Scale(a, s) => accumulate(nodes, grads, *a, g.scale(*s)),
        Op::Sigmoid(a) => {
            let ga = g.zip_map(out, |g, y| g * y * (1.0 - y)).unwrap();
            accumulate(nodes, grads, *a, ga);
        }
        Op::Tanh(a) => {
            let ga = g.zip_map(out, |g, y| g * (1.0 - y * y)).unwrap();
            accumulate(nodes, grads, *a, ga);
        }
        Op::LeakyRelu(a, slope) => {
            let ga = g
                .zip_map(val(*a), |g, x| if x > 0.0 { g } else { g * slope })
                .unwrap();
            accumulate(nodes, grads, *a, ga);
        }
        Op::Exp(a) => {
            let ga = g.zip_map(out, |g, y| g * y).unwrap();
            accumulate(nodes, grads, *a, ga);
        }
        Op::Log(a) => {
            let ga = g.zip_map(val(*a), |g, x| g / x).unwrap();
            accumulate(nodes, grads, *a, ga);
        }
        Op::Abs(a) => {
            let ga = g.zip_map(val(*a), |g, x| g * sign(x)).unwrap();
            accumulate(nodes, grads, *a, ga);
        }
        Op::Clamp(a, lo, hi) => {
            let ga = g
                .zip_map(val(*a), |g, x| if x < *lo || x > *hi { 0.0 } else { g })
                .unwrap();
            accumulate(nodes, grads, *a, ga);
        }
        Op::Sum(a) => {
            let ga = Tensor::full(val(*a).shape(), g.item());
            accumulate(nodes, grads, *a, ga);
        }
        Op::Mean(a) => {
            let n = val(*a).numel() as f64;
            let ga = Tensor::full(val(*a).shape(), g.item() / n);
            accumulate(nodes, grads, *a, ga);
        }
        Op::Reshape(a) => {
            let ga = g.clone().reshape(val(*a).shape()).unwrap();
            accumulate(nodes, grads, *a, ga);
        }
        Op::Concat { parts, axis } => {
            let mut offset = 0;
            for &p in parts {
                let len = val(p).shape()[*axis];
                if needs(p) {
                    let gp = kernels::slice_axis(g, *axis, offset, len);
                    accumulate(nodes, grads, p, gp);
                }
                offset += len;
            }
        }
        Op::Slice { src, axis, start } => {
            let gs = kernels::unslice_axis(g, val(*src).shape(), *axis, *start);
            accumulate(nodes, grads, *src, gs);
        }
        Op::Conv3d {
            x,
            w,
            b,
            geom,
            cols,
        } => {
            let (gx, gw, gb) = kernels::conv3d_backward(
                geom,
                val(*w).data(),
                cols,
                g.data(),
                needs(*x),
                needs(*w),
            );
            if let Some(gx) = gx {
                accumulate(nodes, grads, *x, gx);
            }
            if let Some(gw) = gw {
                accumulate(nodes, grads, *w, gw);
            }
            if let Some(b) = b {
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::Linear { x, w, b } => {
            let (gx, gw, gb) = kernels::linear_backward(val(*x), val(*w), g);
            accumulate(nodes, grads, *x, gx);
            accumulate(nodes, grads, *w, gw);
            if let Some(b) = b {
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::ChannelAffine { x, gain, offset } => {
            let gain_t = gain.map(|id| val(id));
            let (gx, ggain, goffset) = kernels::channel_affine_backward(val(*x), gain_t, g);
            accumulate(nodes, grads, *x, gx);
            if let Some(id) = gain {
                accumulate(nodes, grads, *id, ggain);
            }
            if let Some(id) = offset {
                accumulate(nodes, grads, *id, goffset);
            }
        }
        Op::Standardize { x, inv_std } => {
            let gx = kernels::standardize_backward(out, inv_std, g);
            accumulate(nodes, grads, *x, gx);
        }
        Op::BroadcastRest(a) => {
            let ga = kernels::mean_rest(g).scale(kernels::rest_len(g.shape()) as f64);
            accumulate(nodes, grads, *a, ga);
        }
        Op::MeanRest(a) => {
            let shape = val(*a).shape();
            let n = kernels::rest_len(shape) as f64;
            let ga = kernels::broadcast_rest(g, shape).scale(1.0 / n);
            accumulate(nodes, grads, *a, ga);
        }
        Op::Upsample2x(a) => {
            let ga = kernels::upsample2x_backward(g, val(*a).shape());
            accumulate(nodes, grads, *a, ga);
        }
        Op::AvgPool2x(a) => {
            let ga = kernels::avgpool2x_backward(g, val(*a).shape());
            accumulate(nodes, grads, *a, ga);
        }
        Op::Attend {
            query,
            keys,
            values,
            weights,
        } => {
            let key_vals: Vec<&Tensor> = keys.iter().map(|&k| val(k)).collect();
            let value_vals: Vec<&Tensor> = values.iter().map(|&v| val(v)).collect();
            let (gq, gk, gv) =
                kernels::attend_backward(val(*query), &key_vals, &value_vals, weights, g);
            accumulate(nodes, grads, *query, gq);
            for (&k, gk) in keys.iter().zip(gk) {
                accumulate(nodes, grads, k, gk);
            }
            for (&v, gv) in values.iter().zip(gv) {
                accumulate(nodes, grads, v, gv);
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].needs_grad
    }

    /// Constant copy of this node's value; gradients stop here.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant((*self.value()).clone())
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g> {
        let v = self.value().map(f);
        self.graph.push(v, op)
    }

    fn binary(&self, other: Var<'g>, op: Op, f: impl Fn(f64, f64) -> f64) -> Var<'g> {
        let v = self
            .value()
            .zip_map(&other.value(), f)
            .unwrap_or_else(|e| panic!("{e}"));
        self.graph.push(v, op)
    }

    pub fn add(&self, other: Var<'g>) -> Var<'g> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'g>) -> Var<'g> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'g>) -> Var<'g> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn shift(&self, c: f64) -> Var<'g> {
        self.unary(Op::Shift(self.id), |x| x + c)
    }

    pub fn scale(&self, s: f64) -> Var<'g> {
        self.unary(Op::Scale(self.id, s), |x| x * s)
    }

    /// `1 - x`
    pub fn one_minus(&self) -> Var<'g> {
        self.scale(-1.0).shift(1.0)
    }

    pub fn sigmoid(&self) -> Var<'g> {
        self.unary(Op::Sigmoid(self.id), stable_sigmoid)
    }

    pub fn tanh(&self) -> Var<'g> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'g> {
        self.unary(Op::LeakyRelu(self.id, slope), |x| {
            if x > 0.0 {
                x
            } else {
                x * slope
            }
        })
    }

    pub fn exp(&self) -> Var<'g> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(&self) -> Var<'g> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn abs(&self) -> Var<'g> {
        self.unary(Op::Abs(self.id), f64::abs)
    }

    /// Elementwise clamp; the gradient is zero where the input lies outside `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'g> {
        self.unary(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&self) -> Var<'g> {
        let v = Tensor::scalar(self.value().sum());
        self.graph.push(v, Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'g> {
        let v = Tensor::scalar(self.value().mean());
        self.graph.push(v, Op::Mean(self.id))
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'g> {
        let v = (*self.value())
            .clone()
            .reshape(shape)
            .unwrap_or_else(|e| panic!("{e}"));
        self.graph.push(v, Op::Reshape(self.id))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Var<'g> {
        let v = kernels::slice_axis(&self.value(), axis, start, len);
        self.graph.push(
            v,
            Op::Slice {
                src: self.id,
                axis,
                start,
            },
        )
    }

    /// Splits `axis` into `n` equal chunks.
    pub fn chunk(&self, axis: usize, n: usize) -> Vec<Var<'g>> {
        let total = self.shape()[axis];
        assert_eq!(total % n, 0, "axis {axis} of size {total} not divisible by {n}");
        let len = total / n;
        (0..n).map(|i| self.slice(axis, i * len, len)).collect()
    }

    /// Per-channel `x * gain[c] + offset[c]` on axis 1.
    pub fn channel_affine(&self, gain: Option<Var<'g>>, offset: Option<Var<'g>>) -> Var<'g> {
        let v = kernels::channel_affine(
            &self.value(),
            gain.map(|g| g.value()).as_deref(),
            offset.map(|o| o.value()).as_deref(),
        );
        self.graph.push(
            v,
            Op::ChannelAffine {
                x: self.id,
                gain: gain.map(|g| g.id),
                offset: offset.map(|o| o.id),
            },
        )
    }

    /// Standardizes each `(batch, channel)` slab over its remaining axes.
    pub fn standardize(&self, eps: f64) -> Var<'g> {
        let (v, inv_std) = kernels::standardize(&self.value(), eps);
        self.graph.push(
            v,
            Op::Standardize {
                x: self.id,
                inv_std,
            },
        )
    }

    /// `[B, C]` to `[B, C, rest...]` by repetition.
    pub fn broadcast_rest(&self, rest: &[usize]) -> Var<'g> {
        let mut shape = self.shape();
        assert_eq!(shape.len(), 2, "broadcast_rest expects [B, C]");
        shape.extend_from_slice(rest);
        let v = kernels::broadcast_rest(&self.value(), &shape);
        self.graph.push(v, Op::BroadcastRest(self.id))
    }

    /// `[B, C, rest...]` to `[B, C]` by averaging.
    pub fn mean_rest(&self) -> Var<'g> {
        let v = kernels::mean_rest(&self.value());
        self.graph.push(v, Op::MeanRest(self.id))
    }

    /// Bilinear (half-pixel centers) upsampling of the last two axes by two.
    pub fn upsample2x(&self) -> Var<'g> {
        let v = kernels::upsample2x(&self.value());
        self.graph.push(v, Op::Upsample2x(self.id))
    }

    /// 2x2 average pooling of the last two axes.
    pub fn avgpool2x(&self) -> Var<'g> {
        let v = kernels::avgpool2x(&self.value());
        self.graph.push(v, Op::AvgPool2x(self.id))
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Concatenates along `axis`; all other axes must agree.
pub fn concat<'g>(parts: &[Var<'g>], axis: usize) -> Var<'g> {
    let graph = parts[0].graph;
    let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
    let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
    let v = kernels::concat_axis(&refs, axis);
    graph.push(
        v,
        Op::Concat {
            parts: parts.iter().map(|p| p.id).collect(),
            axis,
        },
    )
}

/// Stacks `[B, C, H, W]` maps into a `[B, C, T, H, W]` clip along a new time axis.
pub fn stack_time<'g>(frames: &[Var<'g>]) -> Var<'g> {
    let expanded: Vec<Var<'g>> = frames
        .iter()
        .map(|f| {
            let s = f.shape();
            assert_eq!(s.len(), 4, "stack_time expects [B, C, H, W]");
            f.reshape(&[s[0], s[1], 1, s[2], s[3]])
        })
        .collect();
    concat(&expanded, 2)
}

/// Three-dimensional convolution.
///
/// `x` is `[B, Ci, T, H, W]`, `w` is `[Co, Ci, kt, kh, kw]`, `b` is `[Co]`.
pub fn conv3d<'g>(
    x: Var<'g>,
    w: Var<'g>,
    b: Option<Var<'g>>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Var<'g> {
    let xv = x.value();
    let wv = w.value();
    let geom = ConvGeometry::new(xv.shape(), wv.shape(), stride, pad);
    let bv = b.map(|b| b.value());
    let (out, cols) = kernels::conv3d_forward(&geom, xv.data(), wv.data(), bv.as_deref());
    x.graph.push(
        out,
        Op::Conv3d {
            x: x.id,
            w: w.id,
            b: b.map(|b| b.id),
            geom,
            cols,
        },
    )
}

/// Two-dimensional convolution on `[B, Ci, H, W]` with a `[Co, Ci, kh, kw]` kernel.
pub fn conv2d<'g>(
    x: Var<'g>,
    w: Var<'g>,
    b: Option<Var<'g>>,
    stride: usize,
    pad: usize,
) -> Var<'g> {
    let xs = x.shape();
    let ws = w.shape();
    assert_eq!(xs.len(), 4, "conv2d input must be [B, C, H, W]");
    assert_eq!(ws.len(), 4, "conv2d kernel must be [Co, Ci, kh, kw]");
    let x5 = x.reshape(&[xs[0], xs[1], 1, xs[2], xs[3]]);
    let w5 = w.reshape(&[ws[0], ws[1], 1, ws[2], ws[3]]);
    let y = conv3d(x5, w5, b, [1, stride, stride], [0, pad, pad]);
    let ys = y.shape();
    y.reshape(&[ys[0], ys[1], ys[3], ys[4]])
}

/// `x [B, I] · wᵀ [I, O] + b [O]`.
pub fn linear<'g>(x: Var<'g>, w: Var<'g>, b: Option<Var<'g>>) -> Var<'g> {
    let bv = b.map(|b| b.value());
    let v = kernels::linear_forward(&x.value(), &w.value(), bv.as_deref());
    x.graph.push(
        v,
        Op::Linear {
            x: x.id,
            w: w.id,
            b: b.map(|b| b.id),
        },
    )
}

/// Scaled dot-product attention of one query per batch row over a list of
/// key/value entries, each flattened per batch row.
///
/// With no entries the result is a zero map shaped like `query`.
pub fn attend<'g>(query: Var<'g>, keys: &[Var<'g>], values: &[Var<'g>]) -> Var<'g> {
    assert_eq!(keys.len(), values.len(), "keys and values must pair up");
    let q = query.value();
    if keys.is_empty() {
        return query.graph.constant(Tensor::zeros(q.shape()));
    }
    let kv: Vec<Rc<Tensor>> = keys.iter().map(Var::value).collect();
    let vv: Vec<Rc<Tensor>> = values.iter().map(Var::value).collect();
    let kr: Vec<&Tensor> = kv.iter().map(|t| t.as_ref()).collect();
    let vr: Vec<&Tensor> = vv.iter().map(|t| t.as_ref()).collect();
    let weights = kernels::attention_weights(&q, &kr);
    let out = kernels::attend_forward(&weights, &vr, q.shape()[0]);
    query.graph.push(
        out,
        Op::Attend {
            query: query.id,
            keys: keys.iter().map(|k| k.id).collect(),
            values: values.iter().map(|v| v.id).collect(),
            weights,
        },
    )
}
