//! Parameter layout, forward pass and reverse-mode gradients of the
//! convolutional readout.
//!
//! Activations are stored channel-major (`[channel][position]`). Every
//! convolution output is multiplied by the mask before it is used again, so
//! pad positions stay exactly zero through the whole encoder and the masked
//! mean pool never sees them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::EstimatorConfig;
use crate::math::sigmoid;

/// Named parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockOffsets {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub(crate) channels: usize,
    pub(crate) kernel: usize,
    pub(crate) hidden: usize,
    pub(crate) stem_w: usize,
    pub(crate) stem_b: usize,
    pub(crate) blocks: Vec<BlockOffsets>,
    pub(crate) head_w1: usize,
    pub(crate) head_b1: usize,
    pub(crate) head_w2: usize,
    pub(crate) head_b2: usize,
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl ParamLayout {
    pub fn new(config: &EstimatorConfig) -> Self {
        let c = config.channels;
        let k = config.kernel;
        let h = config.head_hidden;
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let spec = TensorSpec {
                name,
                shape,
                offset,
            };
            offset += spec.len();
            let at = spec.offset;
            tensors.push(spec);
            at
        };
        let stem_w = push("stem.weight".into(), vec![c, 1, k]);
        let stem_b = push("stem.bias".into(), vec![c]);
        let mut blocks = Vec::with_capacity(config.blocks);
        for b in 0..config.blocks {
            blocks.push(BlockOffsets {
                w1: push(format!("block{b}.conv1.weight"), vec![c, c, k]),
                b1: push(format!("block{b}.conv1.bias"), vec![c]),
                w2: push(format!("block{b}.conv2.weight"), vec![c, c, k]),
                b2: push(format!("block{b}.conv2.bias"), vec![c]),
            });
        }
        let head_w1 = push("head.hidden.weight".into(), vec![h, c]);
        let head_b1 = push("head.hidden.bias".into(), vec![h]);
        let head_w2 = push("head.out.weight".into(), vec![1, h]);
        let head_b2 = push("head.out.bias".into(), vec![1]);
        Self {
            channels: c,
            kernel: k,
            hidden: h,
            stem_w,
            stem_b,
            blocks,
            head_w1,
            head_b1,
            head_w2,
            head_b2,
            tensors,
            total: offset,
        }
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// `y = conv(x) + b` with zero "same" padding; `x` is `[cin][len]`, `w` is
/// `[cout][cin][k]`, `y` is `[cout][len]`.
fn conv_forward(
    x: &[f64],
    cin: usize,
    w: &[f64],
    b: &[f64],
    cout: usize,
    k: usize,
    len: usize,
    y: &mut [f64],
) {
    let pad = (k / 2) as isize;
    for o in 0..cout {
        let row = &mut y[o * len..(o + 1) * len];
        row.fill(b[o]);
        for i in 0..cin {
            let xr = &x[i * len..(i + 1) * len];
            let wr = &w[(o * cin + i) * k..(o * cin + i + 1) * k];
            for (kk, &wv) in wr.iter().enumerate() {
                let off = kk as isize - pad;
                if off >= 0 {
                    let off = off as usize;
                    if off < len {
                        for (yv, xv) in row[..len - off].iter_mut().zip(&xr[off..]) {
                            *yv += wv * xv;
                        }
                    }
                } else {
                    let off = (-off) as usize;
                    if off < len {
                        for (yv, xv) in row[off..].iter_mut().zip(&xr[..len - off]) {
                            *yv += wv * xv;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and, when `dx` is given, the input
/// gradient of [`conv_forward`].
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    cin: usize,
    w: &[f64],
    cout: usize,
    k: usize,
    len: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let pad = (k / 2) as isize;
    for o in 0..cout {
        let dyr = &dy[o * len..(o + 1) * len];
        db[o] += dyr.iter().sum::<f64>();
        for i in 0..cin {
            let base = (o * cin + i) * k;
            let xr = &x[i * len..(i + 1) * len];
            for kk in 0..k {
                let off = kk as isize - pad;
                let (ys, xs, n) = if off >= 0 {
                    let off = off as usize;
                    if off >= len {
                        continue;
                    }
                    (0, off, len - off)
                } else {
                    let off = (-off) as usize;
                    if off >= len {
                        continue;
                    }
                    (off, 0, len - off)
                };
                let dot: f64 = dyr[ys..ys + n]
                    .iter()
                    .zip(&xr[xs..xs + n])
                    .map(|(a, b)| a * b)
                    .sum();
                dw[base + kk] += dot;
                if let Some(dx) = dx.as_deref_mut() {
                    let wv = w[base + kk];
                    let dxr = &mut dx[i * len + xs..i * len + xs + n];
                    for (d, g) in dxr.iter_mut().zip(&dyr[ys..ys + n]) {
                        *d += wv * g;
                    }
                }
            }
        }
    }
}

/// Intermediate activations of one forward pass, reused across examples.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    len: usize,
    mask: Vec<f64>,
    valid: usize,
    input: Vec<f64>,
    stem_pre: Vec<f64>,
    /// `hidden[0]` is the stem output, `hidden[b + 1]` the output of block `b`.
    hidden: Vec<Vec<f64>>,
    conv1_pre: Vec<Vec<f64>>,
    conv1_act: Vec<Vec<f64>>,
    sum_pre: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    head_pre: Vec<f64>,
    head_act: Vec<f64>,
    logit: f64,
    // backward scratch
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
    grad_c: Vec<f64>,
}

impl Workspace {
    fn prepare(&mut self, layout: &ParamLayout, blocks: usize, len: usize) {
        let cl = layout.channels * len;
        self.len = len;
        self.mask.resize(len, 0.0);
        self.input.resize(len, 0.0);
        self.stem_pre.resize(cl, 0.0);
        let resize = |v: &mut Vec<Vec<f64>>, n: usize| {
            v.resize_with(n, Vec::new);
            for x in v.iter_mut() {
                x.resize(cl, 0.0);
            }
        };
        resize(&mut self.hidden, blocks + 1);
        resize(&mut self.conv1_pre, blocks);
        resize(&mut self.conv1_act, blocks);
        resize(&mut self.sum_pre, blocks);
        self.pooled.resize(layout.channels, 0.0);
        self.head_pre.resize(layout.hidden, 0.0);
        self.head_act.resize(layout.hidden, 0.0);
        self.grad_a.resize(cl, 0.0);
        self.grad_b.resize(cl, 0.0);
        self.grad_c.resize(cl, 0.0);
    }

    pub fn logit(&self) -> f64 {
        self.logit
    }

    /// The pooled trace representation from the last forward pass.
    pub fn embedding(&self) -> &[f64] {
        &self.pooled
    }
}

fn apply_mask(v: &mut [f64], mask: &[f64], len: usize) {
    for row in v.chunks_exact_mut(len) {
        for (x, m) in row.iter_mut().zip(mask) {
            *x *= m;
        }
    }
}

fn relu_into(src: &[f64], dst: &mut [f64], mask: &[f64], len: usize) {
    for (srow, drow) in src.chunks_exact(len).zip(dst.chunks_exact_mut(len)) {
        for ((d, &s), &m) in drow.iter_mut().zip(srow).zip(mask) {
            *d = if s > 0.0 { s * m } else { 0.0 };
        }
    }
}

/// Runs the encoder and head; returns the logit. `values` and `mask` must
/// have equal length.
pub(crate) fn forward(
    layout: &ParamLayout,
    params: &[f64],
    mean: f64,
    std: f64,
    values: &[f64],
    mask: &[bool],
    ws: &mut Workspace,
) -> f64 {
    let len = values.len();
    let c = layout.channels;
    let k = layout.kernel;
    let nb = layout.blocks.len();
    ws.prepare(layout, nb, len);

    ws.valid = 0;
    for t in 0..len {
        if mask[t] {
            ws.mask[t] = 1.0;
            ws.input[t] = (values[t] - mean) / std;
            ws.valid += 1;
        } else {
            ws.mask[t] = 0.0;
            ws.input[t] = 0.0;
        }
    }

    conv_forward(
        &ws.input,
        1,
        &params[layout.stem_w..layout.stem_w + c * k],
        &params[layout.stem_b..layout.stem_b + c],
        c,
        k,
        len,
        &mut ws.stem_pre,
    );
    apply_mask(&mut ws.stem_pre, &ws.mask, len);
    relu_into(&ws.stem_pre, &mut ws.hidden[0], &ws.mask, len);

    let cck = c * c * k;
    for (b, off) in layout.blocks.iter().enumerate() {
        conv_forward(
            &ws.hidden[b],
            c,
            &params[off.w1..off.w1 + cck],
            &params[off.b1..off.b1 + c],
            c,
            k,
            len,
            &mut ws.conv1_pre[b],
        );
        apply_mask(&mut ws.conv1_pre[b], &ws.mask, len);
        relu_into(&ws.conv1_pre[b], &mut ws.conv1_act[b], &ws.mask, len);
        conv_forward(
            &ws.conv1_act[b],
            c,
            &params[off.w2..off.w2 + cck],
            &params[off.b2..off.b2 + c],
            c,
            k,
            len,
            &mut ws.sum_pre[b],
        );
        apply_mask(&mut ws.sum_pre[b], &ws.mask, len);
        let (before, after) = ws.hidden.split_at_mut(b + 1);
        let h_in = &before[b];
        let h_out = &mut after[0];
        for ((s, &h), out) in ws.sum_pre[b].iter_mut().zip(h_in.iter()).zip(h_out.iter_mut()) {
            *s += h;
            *out = if *s > 0.0 { *s } else { 0.0 };
        }
    }

    let last = &ws.hidden[nb];
    if ws.valid == 0 {
        ws.pooled.fill(0.0);
    } else {
        let inv = 1.0 / ws.valid as f64;
        for ch in 0..c {
            let row = &last[ch * len..(ch + 1) * len];
            ws.pooled[ch] = row.iter().sum::<f64>() * inv;
        }
    }

    let h = layout.hidden;
    let mut logit = params[layout.head_b2];
    for j in 0..h {
        let w = &params[layout.head_w1 + j * c..layout.head_w1 + (j + 1) * c];
        let q = params[layout.head_b1 + j]
            + w.iter().zip(&ws.pooled).map(|(a, b)| a * b).sum::<f64>();
        ws.head_pre[j] = q;
        let g = if q > 0.0 { q } else { 0.0 };
        ws.head_act[j] = g;
        logit += params[layout.head_w2 + j] * g;
    }
    ws.logit = logit;
    logit
}

/// Accumulates `dlogit * d(logit)/d(params)` into `grad`, using the
/// activations left in `ws` by the preceding [`forward`] call.
pub(crate) fn backward(
    layout: &ParamLayout,
    params: &[f64],
    ws: &mut Workspace,
    dlogit: f64,
    grad: &mut [f64],
) {
    if dlogit == 0.0 {
        return;
    }
    let len = ws.len;
    let c = layout.channels;
    let k = layout.kernel;
    let h = layout.hidden;
    let nb = layout.blocks.len();

    grad[layout.head_b2] += dlogit;
    let mut dpooled = vec![0.0; c];
    for j in 0..h {
        grad[layout.head_w2 + j] += dlogit * ws.head_act[j];
        if ws.head_pre[j] <= 0.0 {
            continue;
        }
        let dq = dlogit * params[layout.head_w2 + j];
        grad[layout.head_b1 + j] += dq;
        let wrow = layout.head_w1 + j * c;
        for ch in 0..c {
            grad[wrow + ch] += dq * ws.pooled[ch];
            dpooled[ch] += dq * params[wrow + ch];
        }
    }
    if ws.valid == 0 {
        return;
    }

    // d(hidden[nb]) from the masked mean pool.
    let inv = 1.0 / ws.valid as f64;
    let mut dh = core::mem::take(&mut ws.grad_a);
    for ch in 0..c {
        let g = dpooled[ch] * inv;
        for (d, m) in dh[ch * len..(ch + 1) * len].iter_mut().zip(&ws.mask) {
            *d = g * m;
        }
    }

    let cck = c * c * k;
    let mut dsum = core::mem::take(&mut ws.grad_b);
    let mut dact = core::mem::take(&mut ws.grad_c);
    for b in (0..nb).rev() {
        let off = layout.blocks[b];
        // out = relu(sum); sum = h_in + mask * conv2(act)
        for (ds, (&d, &s)) in dsum.iter_mut().zip(dh.iter().zip(&ws.sum_pre[b])) {
            *ds = if s > 0.0 { d } else { 0.0 };
        }
        apply_mask(&mut dsum, &ws.mask, len);
        dact.fill(0.0);
        {
            let (gw, gb) = split_pair(grad, off.w2, cck, off.b2, c);
            conv_backward(
                &ws.conv1_act[b],
                c,
                &params[off.w2..off.w2 + cck],
                c,
                k,
                len,
                &dsum,
                gw,
                gb,
                Some(&mut dact),
            );
        }
        // act = mask * relu(mask * conv1(h_in))
        for (d, &u) in dact.iter_mut().zip(&ws.conv1_pre[b]) {
            if u <= 0.0 {
                *d = 0.0;
            }
        }
        apply_mask(&mut dact, &ws.mask, len);
        // skip path: d(h_in) starts as dsum (masked, identical on valid positions)
        dh.copy_from_slice(&dsum);
        {
            let (gw, gb) = split_pair(grad, off.w1, cck, off.b1, c);
            conv_backward(
                &ws.hidden[b],
                c,
                &params[off.w1..off.w1 + cck],
                c,
                k,
                len,
                &dact,
                gw,
                gb,
                Some(&mut dh),
            );
        }
        apply_mask(&mut dh, &ws.mask, len);
    }

    // hidden[0] = mask * relu(mask * stem(input))
    for (d, &a) in dh.iter_mut().zip(&ws.stem_pre) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
    {
        let (gw, gb) = split_pair(grad, layout.stem_w, c * k, layout.stem_b, c);
        conv_backward(
            &ws.input,
            1,
            &params[layout.stem_w..layout.stem_w + c * k],
            c,
            k,
            len,
            &dh,
            gw,
            gb,
            None,
        );
    }
    ws.grad_a = dh;
    ws.grad_b = dsum;
    ws.grad_c = dact;
}

/// Two disjoint mutable windows into `grad`; `a` must precede `b`.
fn split_pair(
    grad: &mut [f64],
    a: usize,
    a_len: usize,
    b: usize,
    b_len: usize,
) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + a_len <= b);
    let (lo, hi) = grad.split_at_mut(b);
    (&mut lo[a..a + a_len], &mut hi[..b_len])
}

/// Score clamp keeping outputs strictly inside (0, 1).
pub(crate) const SCORE_EPS: f64 = 1e-12;

pub(crate) fn score_from_logit(logit: f64) -> f64 {
    sigmoid(logit).clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}
