//! Raw forward/backward kernels behind the graph ops.

use crate::Tensor;

/// Row-major `c[m, n] = a[m, k] · b[k, n] + beta · c`, with arbitrary strides on `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller passes buffers covering the strided extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_dims: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub out_dims: [usize; 3],
}

impl ConvGeometry {
    pub fn new(x: &[usize], w: &[usize], stride: [usize; 3], pad: [usize; 3]) -> Self {
        assert_eq!(x.len(), 5, "conv3d input must be [B, C, T, H, W], got {x:?}");
        assert_eq!(w.len(), 5, "conv3d kernel must be [Co, Ci, kt, kh, kw], got {w:?}");
        assert_eq!(x[1], w[1], "conv3d channel mismatch: input {x:?}, kernel {w:?}");
        let in_dims = [x[2], x[3], x[4]];
        let kernel = [w[2], w[3], w[4]];
        let mut out_dims = [0; 3];
        for d in 0..3 {
            let span = in_dims[d] + 2 * pad[d];
            assert!(
                span >= kernel[d],
                "conv3d kernel {kernel:?} larger than padded input {x:?}"
            );
            out_dims[d] = (span - kernel[d]) / stride[d] + 1;
        }
        Self {
            batch: x[0],
            in_ch: x[1],
            out_ch: w[0],
            in_dims,
            kernel,
            stride,
            pad,
            out_dims,
        }
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel.iter().product::<usize>()
    }

    fn out_len(&self) -> usize {
        self.out_dims.iter().product()
    }

    fn in_len(&self) -> usize {
        self.in_dims.iter().product()
    }

    /// Decomposes patch row `row` into `(channel, dt, dh, dw)`.
    fn tap(&self, row: usize) -> (usize, [usize; 3]) {
        let [kt, kh, kw] = self.kernel;
        let ci = row / (kt * kh * kw);
        let rem = row % (kt * kh * kw);
        (ci, [rem / (kh * kw), (rem / kw) % kh, rem % kw])
    }

    /// Output columns `[lo, hi)` along width whose input index is in range for tap `dw`.
    fn valid_width(&self, dw: usize) -> (usize, usize) {
        let (s, p, w_in, w_out) = (self.stride[2], self.pad[2], self.in_dims[2], self.out_dims[2]);
        let lo = if p > dw { (p - dw).div_ceil(s) } else { 0 }.min(w_out);
        let hi = if w_in + p > dw { (w_in + p - dw - 1) / s + 1 } else { 0 }.clamp(lo, w_out);
        (lo, hi)
    }

    /// Calls `f(col_offset, input_row_start, lo, hi)` for every output row of
    /// tap `row` whose temporal and vertical input indices are in range.
    fn for_each_line(&self, row: usize, mut f: impl FnMut(usize, usize)) {
        let (ci, [dt, dh, _]) = self.tap(row);
        let [t_in, h_in, w_in] = self.in_dims;
        let [t_out, h_out, w_out] = self.out_dims;
        let base = ci * self.in_len();
        for ot in 0..t_out {
            let it = (ot * self.stride[0] + dt) as isize - self.pad[0] as isize;
            if it < 0 || it as usize >= t_in {
                continue;
            }
            for oh in 0..h_out {
                let ih = (oh * self.stride[1] + dh) as isize - self.pad[1] as isize;
                if ih < 0 || ih as usize >= h_in {
                    continue;
                }
                f((ot * h_out + oh) * w_out, base + ((it as usize) * h_in + ih as usize) * w_in);
            }
        }
    }

    /// Fills the in-range taps of a zeroed `cols` buffer.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let n = self.out_len();
        let (s, p) = (self.stride[2], self.pad[2]);
        for row in 0..self.patch_len() {
            let dst = &mut cols[row * n..(row + 1) * n];
            let dw = self.tap(row).1[2];
            let (lo, hi) = self.valid_width(dw);
            if lo == hi {
                continue;
            }
            self.for_each_line(row, |col, src| {
                let first = src + lo * s + dw - p;
                let out = &mut dst[col + lo..col + hi];
                if s == 1 {
                    out.copy_from_slice(&x[first..first + (hi - lo)]);
                } else {
                    for (i, o) in out.iter_mut().enumerate() {
                        *o = x[first + i * s];
                    }
                }
            });
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let n = self.out_len();
        let (s, p) = (self.stride[2], self.pad[2]);
        for row in 0..self.patch_len() {
            let src_row = &cols[row * n..(row + 1) * n];
            let dw = self.tap(row).1[2];
            let (lo, hi) = self.valid_width(dw);
            if lo == hi {
                continue;
            }
            self.for_each_line(row, |col, dst| {
                let first = dst + lo * s + dw - p;
                for (i, v) in src_row[col + lo..col + hi].iter().enumerate() {
                    dx[first + i * s] += v;
                }
            });
        }
    }
}

pub(crate) fn conv3d_forward(
    geom: &ConvGeometry,
    x: &[f64],
    w: &[f64],
    b: Option<&Tensor>,
) -> (Tensor, Vec<f64>) {
    let k = geom.patch_len();
    let n = geom.out_len();
    let in_stride = geom.in_ch * geom.in_len();
    let out_stride = geom.out_ch * n;
    let mut cols = vec![0.0; geom.batch * k * n];
    let mut out = vec![0.0; geom.batch * out_stride];
    for bi in 0..geom.batch {
        let c = &mut cols[bi * k * n..(bi + 1) * k * n];
        geom.im2col(&x[bi * in_stride..(bi + 1) * in_stride], c);
        let o = &mut out[bi * out_stride..(bi + 1) * out_stride];
        if let Some(bias) = b {
            for (co, chunk) in o.chunks_mut(n).enumerate() {
                chunk.fill(bias.data()[co]);
            }
        }
        gemm(
            geom.out_ch,
            k,
            n,
            w,
            (k as isize, 1),
            c,
            (n as isize, 1),
            1.0,
            o,
        );
    }
    let [t, h, wd] = geom.out_dims;
    let shape = [geom.batch, geom.out_ch, t, h, wd];
    (Tensor::new(&shape, out).expect("conv output shape"), cols)
}

pub(crate) fn conv3d_backward(
    geom: &ConvGeometry,
    w: &[f64],
    cols: &[f64],
    gy: &[f64],
    want_x: bool,
    want_w: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let k = geom.patch_len();
    let n = geom.out_len();
    let in_stride = geom.in_ch * geom.in_len();
    let out_stride = geom.out_ch * n;
    let mut gb = vec![0.0; geom.out_ch];
    let mut gw = if want_w { vec![0.0; geom.out_ch * k] } else { vec![] };
    let mut gx = if want_x {
        vec![0.0; geom.batch * in_stride]
    } else {
        vec![]
    };
    let mut dcols = if want_x { vec![0.0; k * n] } else { vec![] };
    for bi in 0..geom.batch {
        let g = &gy[bi * out_stride..(bi + 1) * out_stride];
        for (co, chunk) in g.chunks(n).enumerate() {
            gb[co] += chunk.iter().sum::<f64>();
        }
        let c = &cols[bi * k * n..(bi + 1) * k * n];
        if want_w {
            // gw[Co, K] += g[Co, N] · cᵀ[N, K]
            gemm(
                geom.out_ch,
                n,
                k,
                g,
                (n as isize, 1),
                c,
                (1, n as isize),
                1.0,
                &mut gw,
            );
        }
        if want_x {
            // dcols[K, N] = wᵀ[K, Co] · g[Co, N]
            gemm(
                k,
                geom.out_ch,
                n,
                w,
                (1, k as isize),
                g,
                (n as isize, 1),
                0.0,
                &mut dcols,
            );
            geom.col2im(&dcols, &mut gx[bi * in_stride..(bi + 1) * in_stride]);
        }
    }
    let [t, h, wd] = geom.in_dims;
    let [kt, kh, kw] = geom.kernel;
    let gx = want_x.then(|| Tensor::new(&[geom.batch, geom.in_ch, t, h, wd], gx).unwrap());
    let gw = want_w.then(|| Tensor::new(&[geom.out_ch, geom.in_ch, kt, kh, kw], gw).unwrap());
    (gx, gw, Tensor::new(&[geom.out_ch], gb).unwrap())
}

pub(crate) fn linear_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (bsz, inp) = (x.shape()[0], x.shape()[1]);
    let outp = w.shape()[0];
    assert_eq!(x.shape().len(), 2, "linear input must be [B, I]");
    assert_eq!(w.shape(), &[outp, inp], "linear weight must be [O, I]");
    let mut out = vec![0.0; bsz * outp];
    if let Some(b) = b {
        for row in out.chunks_mut(outp) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(
        bsz,
        inp,
        outp,
        x.data(),
        (inp as isize, 1),
        w.data(),
        (1, inp as isize),
        1.0,
        &mut out,
    );
    Tensor::new(&[bsz, outp], out).unwrap()
}

pub(crate) fn linear_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (bsz, inp) = (x.shape()[0], x.shape()[1]);
    let outp = w.shape()[0];
    let mut gx = vec![0.0; bsz * inp];
    gemm(
        bsz,
        outp,
        inp,
        g.data(),
        (outp as isize, 1),
        w.data(),
        (inp as isize, 1),
        0.0,
        &mut gx,
    );
    let mut gw = vec![0.0; outp * inp];
    gemm(
        outp,
        bsz,
        inp,
        g.data(),
        (1, outp as isize),
        x.data(),
        (inp as isize, 1),
        0.0,
        &mut gw,
    );
    let mut gb = vec![0.0; outp];
    for row in g.data().chunks(outp) {
        for (acc, v) in gb.iter_mut().zip(row) {
            *acc += v;
        }
    }
    (
        Tensor::new(&[bsz, inp], gx).unwrap(),
        Tensor::new(&[outp, inp], gw).unwrap(),
        Tensor::new(&[outp], gb).unwrap(),
    )
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

pub(crate) fn slice_axis(t: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let shape = t.shape();
    assert!(
        start + len <= shape[axis],
        "slice {start}+{len} out of range for axis {axis} of {shape:?}"
    );
    let (outer, inner) = outer_inner(shape, axis);
    let full = shape[axis] * inner;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * full + start * inner;
        data.extend_from_slice(&t.data()[base..base + len * inner]);
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] = len;
    Tensor::new(&new_shape, data).unwrap()
}

pub(crate) fn unslice_axis(g: &Tensor, src_shape: &[usize], axis: usize, start: usize) -> Tensor {
    let (outer, inner) = outer_inner(src_shape, axis);
    let len = g.shape()[axis];
    let full = src_shape[axis] * inner;
    let mut data = vec![0.0; src_shape.iter().product()];
    for o in 0..outer {
        let dst = o * full + start * inner;
        let src = o * len * inner;
        data[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
    }
    Tensor::new(src_shape, data).unwrap()
}

pub(crate) fn concat_axis(parts: &[&Tensor], axis: usize) -> Tensor {
    let first = parts[0].shape();
    let mut shape = first.to_vec();
    shape[axis] = 0;
    for p in parts {
        let s = p.shape();
        assert_eq!(s.len(), first.len(), "concat rank mismatch");
        for d in 0..s.len() {
            if d != axis {
                assert_eq!(s[d], first[d], "concat shape mismatch {s:?} vs {first:?}");
            }
        }
        shape[axis] += s[axis];
    }
    let (outer, _) = outer_inner(first, axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let (_, inner) = outer_inner(p.shape(), axis);
            let chunk = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::new(&shape, data).unwrap()
}

pub(crate) fn rest_len(shape: &[usize]) -> usize {
    shape[2..].iter().product()
}

pub(crate) fn channel_affine(x: &Tensor, gain: Option<&Tensor>, offset: Option<&Tensor>) -> Tensor {
    let s = x.shape();
    let (b, c, n) = (s[0], s[1], rest_len(s));
    let mut out = x.clone();
    let data = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            let g = gain.map_or(1.0, |t| t.data()[ci]);
            let o = offset.map_or(0.0, |t| t.data()[ci]);
            for v in &mut data[(bi * c + ci) * n..(bi * c + ci + 1) * n] {
                *v = *v * g + o;
            }
        }
    }
    out
}

pub(crate) fn channel_affine_backward(
    x: &Tensor,
    gain: Option<&Tensor>,
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let s = x.shape();
    let (b, c, n) = (s[0], s[1], rest_len(s));
    let mut gx = g.clone();
    let mut ggain = vec![0.0; c];
    let mut goff = vec![0.0; c];
    for bi in 0..b {
        for ci in 0..c {
            let range = (bi * c + ci) * n..(bi * c + ci + 1) * n;
            let gs = &g.data()[range.clone()];
            let xs = &x.data()[range.clone()];
            goff[ci] += gs.iter().sum::<f64>();
            ggain[ci] += gs.iter().zip(xs).map(|(g, x)| g * x).sum::<f64>();
            if let Some(gain) = gain {
                let k = gain.data()[ci];
                for v in &mut gx.data_mut()[range] {
                    *v *= k;
                }
            }
        }
    }
    (
        gx,
        Tensor::new(&[c], ggain).unwrap(),
        Tensor::new(&[c], goff).unwrap(),
    )
}

pub(crate) fn standardize(x: &Tensor, eps: f64) -> (Tensor, Vec<f64>) {
    let s = x.shape();
    let groups = s[0] * s[1];
    let n = rest_len(s);
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(groups);
    for chunk in out.data_mut().chunks_mut(n) {
        let mean = chunk.iter().sum::<f64>() / n as f64;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for v in chunk.iter_mut() {
            *v = (*v - mean) * inv;
        }
        inv_std.push(inv);
    }
    (out, inv_std)
}

pub(crate) fn standardize_backward(y: &Tensor, inv_std: &[f64], g: &Tensor) -> Tensor {
    let n = rest_len(y.shape());
    let mut gx = g.clone();
    for ((gx, ys), inv) in gx
        .data_mut()
        .chunks_mut(n)
        .zip(y.data().chunks(n))
        .zip(inv_std)
    {
        let mean_g = gx.iter().sum::<f64>() / n as f64;
        let mean_gy = gx.iter().zip(ys).map(|(g, y)| g * y).sum::<f64>() / n as f64;
        for (g, y) in gx.iter_mut().zip(ys) {
            *g = inv * (*g - mean_g - y * mean_gy);
        }
    }
    gx
}

pub(crate) fn broadcast_rest(x: &Tensor, shape: &[usize]) -> Tensor {
    let n = rest_len(shape);
    let mut data = Vec::with_capacity(x.numel() * n);
    for &v in x.data() {
        data.extend(std::iter::repeat_n(v, n));
    }
    Tensor::new(shape, data).unwrap()
}

pub(crate) fn mean_rest(x: &Tensor) -> Tensor {
    let s = x.shape();
    let n = rest_len(s);
    let data = x
        .data()
        .chunks(n)
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect();
    Tensor::new(&s[..2], data).unwrap()
}

/// Source taps `(i0, w0, i1, w1)` for each output index of a 2x bilinear upsample.
fn upsample_taps(n: usize) -> Vec<(usize, f64, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let lo = src.floor();
            let frac = src - lo;
            let clampi = |i: f64| (i.max(0.0) as usize).min(n - 1);
            (clampi(lo), 1.0 - frac, clampi(lo + 1.0), frac)
        })
        .collect()
}

fn split_last2(shape: &[usize]) -> (usize, usize, usize) {
    let r = shape.len();
    assert!(r >= 2, "need at least two axes");
    (shape[..r - 2].iter().product(), shape[r - 2], shape[r - 1])
}

pub(crate) fn upsample2x(x: &Tensor) -> Tensor {
    let (planes, h, w) = split_last2(x.shape());
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, wy0, y1, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, wx0, x1, wx1)) in tx.iter().enumerate() {
                dst[oy * ow + ox] = wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1])
                    + wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Tensor::new(&shape, out).unwrap()
}

pub(crate) fn upsample2x_backward(g: &Tensor, src_shape: &[usize]) -> Tensor {
    let (planes, h, w) = split_last2(src_shape);
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let ow = 2 * w;
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        let gs = &g.data()[p * 4 * h * w..(p + 1) * 4 * h * w];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, wy0, y1, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, wx0, x1, wx1)) in tx.iter().enumerate() {
                let gv = gs[oy * ow + ox];
                dst[y0 * w + x0] += gv * wy0 * wx0;
                dst[y0 * w + x1] += gv * wy0 * wx1;
                dst[y1 * w + x0] += gv * wy1 * wx0;
                dst[y1 * w + x1] += gv * wy1 * wx1;
            }
        }
    }
    Tensor::new(src_shape, out).unwrap()
}

pub(crate) fn avgpool2x(x: &Tensor) -> Tensor {
    let (planes, h, w) = split_last2(x.shape());
    assert!(h % 2 == 0 && w % 2 == 0, "avgpool2x needs even spatial dims, got {h}x{w}");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let i = 2 * oy * w + 2 * ox;
                out[p * oh * ow + oy * ow + ox] =
                    0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Tensor::new(&shape, out).unwrap()
}

pub(crate) fn avgpool2x_backward(g: &Tensor, src_shape: &[usize]) -> Tensor {
    let (planes, h, w) = split_last2(src_shape);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = 0.25 * g.data()[p * oh * ow + oy * ow + ox];
                let i = p * h * w + 2 * oy * w + 2 * ox;
                out[i] += gv;
                out[i + 1] += gv;
                out[i + w] += gv;
                out[i + w + 1] += gv;
            }
        }
    }
    Tensor::new(src_shape, out).unwrap()
}

/// Softmax weights `[B * n]` (row-major by batch) of scaled dot products between
/// each batch row of `query` and each key.
pub fn attention_weights(query: &Tensor, keys: &[&Tensor]) -> Vec<f64> {
    let b = query.shape()[0];
    let d = query.numel() / b;
    let scale = 1.0 / (d as f64).sqrt();
    let n = keys.len();
    let mut weights = vec![0.0; b * n];
    for bi in 0..b {
        let q = &query.data()[bi * d..(bi + 1) * d];
        let row = &mut weights[bi * n..(bi + 1) * n];
        for (j, k) in keys.iter().enumerate() {
            assert_eq!(k.numel(), query.numel(), "key size must match query");
            let kj = &k.data()[bi * d..(bi + 1) * d];
            row[j] = scale * q.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    weights
}

pub(crate) fn attend_forward(weights: &[f64], values: &[&Tensor], batch: usize) -> Tensor {
    let n = values.len();
    let shape = values[0].shape();
    let d = values[0].numel() / batch;
    let mut out = vec![0.0; batch * d];
    for bi in 0..batch {
        let dst = &mut out[bi * d..(bi + 1) * d];
        for (j, v) in values.iter().enumerate() {
            let wj = weights[bi * n + j];
            for (o, x) in dst.iter_mut().zip(&v.data()[bi * d..(bi + 1) * d]) {
                *o += wj * x;
            }
        }
    }
    Tensor::new(shape, out).unwrap()
}

pub(crate) fn attend_backward(
    query: &Tensor,
    keys: &[&Tensor],
    values: &[&Tensor],
    weights: &[f64],
    g: &Tensor,
) -> (Tensor, Vec<Tensor>, Vec<Tensor>) {
    let b = query.shape()[0];
    let d = query.numel() / b;
    let n = keys.len();
    let scale = 1.0 / (d as f64).sqrt();
    let mut gq = vec![0.0; query.numel()];
    let mut gk: Vec<Vec<f64>> = vec![vec![0.0; query.numel()]; n];
    let mut gv: Vec<Vec<f64>> = vec![vec![0.0; g.numel()]; n];
    for bi in 0..b {
        let range = bi * d..(bi + 1) * d;
        let gout = &g.data()[range.clone()];
        let w = &weights[bi * n..(bi + 1) * n];
        let mut gw = vec![0.0; n];
        for j in 0..n {
            let vj = &values[j].data()[range.clone()];
            gw[j] = gout.iter().zip(vj).map(|(a, b)| a * b).sum();
            for (dst, go) in gv[j][range.clone()].iter_mut().zip(gout) {
                *dst = w[j] * go;
            }
        }
        let dot: f64 = w.iter().zip(&gw).map(|(a, b)| a * b).sum();
        let q = &query.data()[range.clone()];
        for j in 0..n {
            let glogit = w[j] * (gw[j] - dot) * scale;
            let kj = &keys[j].data()[range.clone()];
            for (dst, k) in gq[range.clone()].iter_mut().zip(kj) {
                *dst += glogit * k;
            }
            for (dst, qv) in gk[j][range.clone()].iter_mut().zip(q) {
                *dst = glogit * qv;
            }
        }
    }
    let qshape = query.shape();
    let vshape = g.shape();
    (
        Tensor::new(qshape, gq).unwrap(),
        gk.into_iter()
            .zip(keys)
            .map(|(v, k)| Tensor::new(k.shape(), v).unwrap())
            .collect(),
        gv.into_iter()
            .map(|v| Tensor::new(vshape, v).unwrap())
            .collect(),
    )
}
