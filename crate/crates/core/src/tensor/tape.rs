use std::borrow::Cow;

use super::kernels::{self, ConvGeom, PairGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that preserves spatial extent (odd kernels only).
    Same,
    Valid,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Relu(Var),
    Gelu(Var),
    MaskedSoftmax {
        input: Var,
        axis: usize,
    },
    LayerNorm {
        input: Var,
        gain: Var,
        shift: Var,
        axis: usize,
        normalized: Vec<T>,
        rstd: Vec<T>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    PairConv2d {
        r: Var,
        l: Var,
        w: Var,
        b: Option<Var>,
        geom: PairGeom,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalMeanPool(Var),
    GatherRows {
        input: Var,
        rows: Vec<Option<usize>>,
    },
    BceWithLogits {
        logits: Var,
        labels: Vec<T>,
        weights: Vec<T>,
    },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records primitive applications so that [`Tape::backward`] can replay them
/// in reverse. An inference tape records values only.
///
/// Parameters are usually borrowed (`'a`) from a weight set, so building a
/// forward pass copies no weights.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    recording: bool,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Reverse-mode gradients of the leaves of a consumed tape.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`; a zero tensor when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn shape_err(prim: &str, shapes: &[&[usize]]) -> Error {
    Error::contract(format!("{prim}: incompatible shapes {shapes:?}"))
}

/// `b` either matches `a` or matches a trailing suffix of `a`'s shape.
fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

fn reduce_broadcast<T: Scalar>(g: &[T], target_len: usize) -> Vec<T> {
    if g.len() == target_len {
        return g.to_vec();
    }
    let mut out = vec![T::zero(); target_len];
    for chunk in g.chunks(target_len) {
        kernels::add_into(&mut out, chunk);
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;
/// Variance floor inside layer normalisation.
pub(crate) const LN_EPS: f64 = 1e-9;

fn gelu<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    let th = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_K) * x * x);
    T::of(0.5) * (T::one() + th) + T::of(0.5) * x * (T::one() - th * th) * du
}

impl<'a, T: Scalar> Tape<'a, T> {
    /// A tape that records operations for a later backward pass.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that evaluates without recording backward information.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, needs_grad: bool) -> Var {
        let needs_grad = needs_grad && self.recording;
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        if cfg!(debug_assertions) && !value.is_finite() {
            let inputs_finite = inputs.iter().all(|v| self.value(*v).is_finite());
            assert!(!inputs_finite, "non-finite output from finite inputs");
        }
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), op, needs)
    }

    /// A leaf owned by the tape.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    /// A borrowed leaf that receives a gradient.
    pub fn param(&mut self, value: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", &[sa, sb]));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_op(t, Op::MatMul(a, b), &[a, b]))
    }

    /// Elementwise sum; `b` may match a trailing suffix of `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcast_ok(sa, sb) {
            return Err(shape_err("add", &[sa, sb]));
        }
        let bd = self.value(b).data();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(bd.len()) {
            kernels::add_into(chunk, bd);
        }
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product; `b` may match a trailing suffix of `a`'s shape.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcast_ok(sa, sb) {
            return Err(shape_err("mul", &[sa, sb]));
        }
        let bd = self.value(b).data();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(bd.len()) {
            for (o, &bv) in chunk.iter_mut().zip(bd) {
                *o *= bv;
            }
        }
        Ok(self.push_op(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push_op(out, Op::Scale(a, s), &[a])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::contract("concat: no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::contract(format!("concat: axis {axis} on rank {}", base.len())));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", &[&base, s]));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push_op(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::contract(format!(
                "slice: [{start}, {}) on axis {axis} of {s:?}",
                start + len
            )));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let t = Tensor::new(shape, out)?;
        Ok(self.push_op(t, Op::Slice { input, axis, start }, &[input]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err("transpose", &[s]));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        Ok(self.push_op(t, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push_op(t, Op::Reshape(a), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push_op(out, Op::Relu(a), &[a])
    }

    /// GELU, tanh approximation: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push_op(out, Op::Gelu(a), &[a])
    }

    /// Softmax along `axis`. Positions where `mask` is false receive exactly
    /// zero probability; a fully masked slice yields all zeros.
    pub fn masked_softmax(&mut self, input: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if axis >= s.len() {
            return Err(shape_err("masked_softmax", &[&s]));
        }
        if let Some(m) = mask {
            if m.len() != self.value(input).len() {
                return Err(Error::contract(format!(
                    "masked_softmax: mask of {} entries for shape {s:?}",
                    m.len()
                )));
            }
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); x.len()];
        let keep = |idx: usize| mask.is_none_or(|m| m[idx]);
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * n + a) * inner + i;
                let mut max = T::neg_infinity();
                for a in 0..n {
                    if keep(idx(a)) && x[idx(a)] > max {
                        max = x[idx(a)];
                    }
                }
                if max == T::neg_infinity() {
                    continue;
                }
                let mut sum = T::zero();
                for a in 0..n {
                    if keep(idx(a)) {
                        let e = (x[idx(a)] - max).exp();
                        out[idx(a)] = e;
                        sum += e;
                    }
                }
                for a in 0..n {
                    out[idx(a)] = out[idx(a)] / sum;
                }
            }
        }
        let t = Tensor::new(s, out)?;
        Ok(self.push_op(
            t,
            Op::MaskedSoftmax { input, axis },
            &[input],
        ))
    }

    /// Normalises along `axis` to zero mean and unit variance, then applies
    /// the per-position affine `gain`, `shift` (both of length `shape[axis]`).
    pub fn layer_norm(&mut self, input: Var, gain: Var, shift: Var, axis: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if axis >= s.len() || self.shape(gain) != [s[axis]] || self.shape(shift) != [s[axis]] {
            return Err(shape_err(
                "layer_norm",
                &[&s, self.shape(gain), self.shape(shift)],
            ));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let x = self.value(input).data();
        let (gd, sd) = (self.value(gain).data(), self.value(shift).data());
        let mut normalized = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        let mut rstd = vec![T::zero(); outer * inner];
        let nf = T::of(n as f64);
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * n + a) * inner + i;
                let mean = (0..n).fold(T::zero(), |acc, a| acc + x[idx(a)]) / nf;
                let var = (0..n).fold(T::zero(), |acc, a| {
                    let d = x[idx(a)] - mean;
                    acc + d * d
                }) / nf;
                let r = T::one() / (var + T::of(LN_EPS)).sqrt();
                rstd[o * inner + i] = r;
                for a in 0..n {
                    let xh = (x[idx(a)] - mean) * r;
                    normalized[idx(a)] = xh;
                    out[idx(a)] = xh * gd[a] + sd[a];
                }
            }
        }
        let t = Tensor::new(s, out)?;
        let (normalized, rstd) = if self.recording {
            (normalized, rstd)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(self.push_op(
            t,
            Op::LayerNorm {
                input,
                gain,
                shift,
                axis,
                normalized,
                rstd,
            },
            &[input, gain, shift],
        ))
    }

    /// Affine map over the last axis: `x[.., in] · w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let bad_bias = b.is_some_and(|b| self.shape(b) != [sw[sw.len() - 1]]);
        if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[0] || bad_bias {
            return Err(shape_err("linear", &[&sx, &sw]));
        }
        let (k, n) = (sw[0], sw[1]);
        let m = self.value(x).len() / k;
        let mut out = kernels::matmul(self.value(x).data(), self.value(w).data(), m, k, n);
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(n) {
                kernels::add_into(row, bd);
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = n;
        let t = Tensor::new(shape, out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push_op(t, Op::Linear { x, w, b }, &inputs))
    }

    /// Stride-1 convolution, `x: [n, h, w, c_in]`, `w: [kh, kw, c_in, c_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, padding: Padding) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let bad_bias = b.is_some_and(|b| self.shape(b) != [sw[3]]);
        if sx.len() != 4 || sw.len() != 4 || sx[3] != sw[2] || bad_bias {
            return Err(shape_err("conv2d", &[&sx, &sw]));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Same if sw[0] % 2 == 1 && sw[1] % 2 == 1 => ((sw[0] - 1) / 2, (sw[1] - 1) / 2),
            Padding::Same => return Err(Error::contract("conv2d: same padding needs odd kernels")),
            Padding::Valid => (0, 0),
        };
        if sx[1] + 2 * pad_h < sw[0] || sx[2] + 2 * pad_w < sw[1] {
            return Err(shape_err("conv2d", &[&sx, &sw]));
        }
        let geom = ConvGeom {
            n: sx[0],
            h: sx[1],
            w: sx[2],
            cin: sx[3],
            kh: sw[0],
            kw: sw[1],
            cout: sw[3],
            pad_h,
            pad_w,
            out_h: sx[1] + 2 * pad_h - sw[0] + 1,
            out_w: sx[2] + 2 * pad_w - sw[1] + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let t = Tensor::new(vec![geom.n, geom.out_h, geom.out_w, geom.cout], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push_op(t, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    /// Same-padded convolution of the implicit pairwise image
    /// `E[b, s, t] = [r[b, s] ; l[b, t]]` without materialising it.
    ///
    /// `r: [n, s, d]`, `l: [n, t, d]`, `w: [kh, kw, 2d, c_out]`. The result
    /// equals `conv2d(E, w, b, Same)`.
    pub fn pair_conv2d(&mut self, r: Var, l: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sr, sl, sw) = (
            self.shape(r).to_vec(),
            self.shape(l).to_vec(),
            self.shape(w).to_vec(),
        );
        let bad_bias = b.is_some_and(|b| self.shape(b) != [sw[3]]);
        if sr.len() != 3
            || sl.len() != 3
            || sw.len() != 4
            || sr[0] != sl[0]
            || sr[2] != sl[2]
            || sw[2] != 2 * sr[2]
            || sw[0] % 2 == 0
            || sw[1] % 2 == 0
            || bad_bias
        {
            return Err(shape_err("pair_conv2d", &[&sr, &sl, &sw]));
        }
        let geom = PairGeom {
            n: sr[0],
            s: sr[1],
            t: sl[1],
            d: sr[2],
            kh: sw[0],
            kw: sw[1],
            cout: sw[3],
        };
        let out = kernels::pair_conv_forward(
            self.value(r).data(),
            self.value(l).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let t = Tensor::new(vec![geom.n, geom.s, geom.t, geom.cout], out)?;
        let inputs: Vec<Var> = [Some(r), Some(l), Some(w), b].into_iter().flatten().collect();
        Ok(self.push_op(t, Op::PairConv2d { r, l, w, b, geom }, &inputs))
    }

    /// 2×2 max pooling with stride 2 (odd trailing rows/columns dropped).
    /// Ties route the gradient to the first maximum in scan order.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 || s[1] < 2 || s[2] < 2 {
            return Err(shape_err("maxpool2d", &[&s]));
        }
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); n * oh * ow * c];
        let mut argmax = vec![0usize; out.len()];
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = usize::MAX;
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let idx = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                            if best == usize::MAX || x[idx] > x[best] {
                                best = idx;
                            }
                        }
                        let o = ((b * oh + oy) * ow + ox) * c + ch;
                        out[o] = x[best];
                        argmax[o] = best;
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, oh, ow, c], out)?;
        let argmax = if self.recording { argmax } else { Vec::new() };
        Ok(self.push_op(t, Op::MaxPool2d { input, argmax }, &[input]))
    }

    /// Mean over the spatial axes: `[n, h, w, c] → [n, c]`.
    pub fn global_mean_pool(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 || s[1] * s[2] == 0 {
            return Err(shape_err("global_mean_pool", &[&s]));
        }
        let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); n * c];
        for b in 0..n {
            let row = &mut out[b * c..(b + 1) * c];
            for p in 0..hw {
                kernels::add_into(row, &x[(b * hw + p) * c..(b * hw + p + 1) * c]);
            }
            let inv = T::one() / T::of(hw as f64);
            row.iter_mut().for_each(|v| *v *= inv);
        }
        let t = Tensor::new(vec![n, c], out)?;
        Ok(self.push_op(t, Op::GlobalMeanPool(input), &[input]))
    }

    /// Selects rows of a 2-D tensor; `None` yields a zero row.
    pub fn gather_rows(&mut self, input: Var, rows: &[Option<usize>]) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 2 || rows.iter().flatten().any(|&r| r >= s[0]) {
            return Err(shape_err("gather_rows", &[&s]));
        }
        let d = s[1];
        let x = self.value(input).data();
        let mut out = vec![T::zero(); rows.len() * d];
        for (o, r) in rows.iter().enumerate() {
            if let Some(r) = r {
                out[o * d..(o + 1) * d].copy_from_slice(&x[r * d..(r + 1) * d]);
            }
        }
        let t = Tensor::new(vec![rows.len(), d], out)?;
        Ok(self.push_op(
            t,
            Op::GatherRows {
                input,
                rows: rows.to_vec(),
            },
            &[input],
        ))
    }

    /// Weighted mean binary cross-entropy on logits, evaluated as
    /// `max(z, 0) − z·y + ln(1 + e^{−|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[T], weights: Option<&[T]>) -> Result<Var> {
        let z = self.value(logits).data();
        let weights = weights.map_or_else(|| vec![T::one(); z.len()], <[T]>::to_vec);
        if z.is_empty() || labels.len() != z.len() || weights.len() != z.len() {
            return Err(Error::contract(format!(
                "bce_with_logits: {} logits, {} labels, {} weights",
                z.len(),
                labels.len(),
                weights.len()
            )));
        }
        let wsum = weights.iter().fold(T::zero(), |a, &w| a + w);
        let mut loss = T::zero();
        for ((&zi, &yi), &wi) in z.iter().zip(labels).zip(&weights) {
            loss += wi * bce_term(zi, yi);
        }
        let t = Tensor::scalar(loss / wsum);
        Ok(self.push_op(
            t,
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
                weights,
            },
            &[logits],
        ))
    }

    /// Reverse accumulation from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if !self.recording {
            return Err(Error::contract("backward on an inference tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(shapes[loss.0].clone(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            for (var, contrib) in self.vjp(node, &g)? {
                if !self.nodes[var.0].needs_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => kernels::add_into(acc.data_mut(), contrib.data()),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }

    /// Vector-Jacobian products of one node with respect to each input.
    fn vjp(&self, node: &Node<'a, T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| self.value(v);
        let like = |v: Var, data: Vec<T>| Tensor::new(self.shape(v).to_vec(), data);
        let gd = g.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                out.push((*a, like(*a, kernels::matmul_nt(gd, val(*b).data(), m, k, n))?));
                out.push((*b, like(*b, kernels::matmul_tn(val(*a).data(), gd, m, k, n))?));
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, like(*b, reduce_broadcast(gd, val(*b).len()))?));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                let mut ga = gd.to_vec();
                let mut gb_full = gd.to_vec();
                for (i, v) in ga.iter_mut().enumerate() {
                    *v *= bd[i % bd.len()];
                }
                for (i, v) in gb_full.iter_mut().enumerate() {
                    *v *= ad[i];
                }
                out.push((*a, like(*a, ga)?));
                out.push((*b, like(*b, reduce_broadcast(&gb_full, bd.len()))?));
            }
            Op::Scale(a, s) => out.push((*a, g.map(|v| v * *s))),
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_axis(g.shape(), *axis);
                let total = g.shape()[*axis];
                let mut offset = 0;
                for v in inputs {
                    let extent = self.shape(*v)[*axis];
                    let mut part = Vec::with_capacity(val(*v).len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        part.extend_from_slice(&gd[base..base + extent * inner]);
                    }
                    offset += extent;
                    out.push((*v, like(*v, part)?));
                }
            }
            Op::Slice { input, axis, start } => {
                let s = self.shape(*input);
                let (outer, n, inner) = split_axis(s, *axis);
                let len = g.shape()[*axis];
                let mut full = vec![T::zero(); val(*input).len()];
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    full[base..base + len * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                out.push((*input, like(*input, full)?));
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (m, n) = (s[0], s[1]);
                let mut t = vec![T::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        t[i * n + j] = gd[j * m + i];
                    }
                }
                out.push((*a, like(*a, t)?));
            }
            Op::Reshape(a) => out.push((*a, like(*a, gd.to_vec())?)),
            Op::Relu(a) => {
                let x = val(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect();
                out.push((*a, like(*a, d)?));
            }
            Op::Gelu(a) => {
                let x = val(*a).data();
                let d = gd.iter().zip(x).map(|(&gi, &xi)| gi * gelu_grad(xi)).collect();
                out.push((*a, like(*a, d)?));
            }
            Op::MaskedSoftmax { input, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = split_axis(g.shape(), *axis);
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * n + a) * inner + i;
                        let s = (0..n).fold(T::zero(), |acc, a| acc + gd[idx(a)] * y[idx(a)]);
                        for a in 0..n {
                            // Masked positions have y = 0 and so receive 0.
                            dx[idx(a)] = y[idx(a)] * (gd[idx(a)] - s);
                        }
                    }
                }
                out.push((*input, like(*input, dx)?));
            }
            Op::LayerNorm {
                input,
                gain,
                shift,
                axis,
                normalized,
                rstd,
            } => {
                let (outer, n, inner) = split_axis(g.shape(), *axis);
                let gain_d = val(*gain).data();
                let mut dx = vec![T::zero(); gd.len()];
                let mut dgain = vec![T::zero(); n];
                let mut dshift = vec![T::zero(); n];
                let nf = T::of(n as f64);
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * n + a) * inner + i;
                        let mut mean_dxh = T::zero();
                        let mut mean_dxh_xh = T::zero();
                        for a in 0..n {
                            let dxh = gd[idx(a)] * gain_d[a];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * normalized[idx(a)];
                            dgain[a] += gd[idx(a)] * normalized[idx(a)];
                            dshift[a] += gd[idx(a)];
                        }
                        mean_dxh = mean_dxh / nf;
                        mean_dxh_xh = mean_dxh_xh / nf;
                        let r = rstd[o * inner + i];
                        for a in 0..n {
                            let dxh = gd[idx(a)] * gain_d[a];
                            dx[idx(a)] = r * (dxh - mean_dxh - normalized[idx(a)] * mean_dxh_xh);
                        }
                    }
                }
                out.push((*input, like(*input, dx)?));
                out.push((*gain, like(*gain, dgain)?));
                out.push((*shift, like(*shift, dshift)?));
            }
            Op::Linear { x, w, b } => {
                let sw = self.shape(*w);
                let (k, n) = (sw[0], sw[1]);
                let m = val(*x).len() / k;
                out.push((*x, like(*x, kernels::matmul_nt(gd, val(*w).data(), m, k, n))?));
                out.push((*w, like(*w, kernels::matmul_tn(val(*x).data(), gd, m, k, n))?));
                if let Some(b) = b {
                    out.push((*b, like(*b, reduce_broadcast(gd, n))?));
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(val(*x).data(), val(*w).data(), gd, geom);
                out.push((*x, like(*x, dx)?));
                out.push((*w, like(*w, dw)?));
                if let Some(b) = b {
                    out.push((*b, like(*b, db)?));
                }
            }
            Op::PairConv2d { r, l, w, b, geom } => {
                let (dr, dl, dw, db) = kernels::pair_conv_backward(
                    val(*r).data(),
                    val(*l).data(),
                    val(*w).data(),
                    gd,
                    geom,
                );
                out.push((*r, like(*r, dr)?));
                out.push((*l, like(*l, dl)?));
                out.push((*w, like(*w, dw)?));
                if let Some(b) = b {
                    out.push((*b, like(*b, db)?));
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let mut dx = vec![T::zero(); val(*input).len()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src] += gd[o];
                }
                out.push((*input, like(*input, dx)?));
            }
            Op::GlobalMeanPool(input) => {
                let s = self.shape(*input);
                let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
                let inv = T::one() / T::of(hw as f64);
                let mut dx = vec![T::zero(); n * hw * c];
                for b in 0..n {
                    for p in 0..hw {
                        for ch in 0..c {
                            dx[(b * hw + p) * c + ch] = gd[b * c + ch] * inv;
                        }
                    }
                }
                out.push((*input, like(*input, dx)?));
            }
            Op::GatherRows { input, rows } => {
                let d = self.shape(*input)[1];
                let mut dx = vec![T::zero(); val(*input).len()];
                for (o, r) in rows.iter().enumerate() {
                    if let Some(r) = r {
                        kernels::add_into(&mut dx[r * d..(r + 1) * d], &gd[o * d..(o + 1) * d]);
                    }
                }
                out.push((*input, like(*input, dx)?));
            }
            Op::BceWithLogits {
                logits,
                labels,
                weights,
            } => {
                let z = val(*logits).data();
                let wsum = weights.iter().fold(T::zero(), |a, &w| a + w);
                let g0 = gd[0];
                let d = z
                    .iter()
                    .zip(labels)
                    .zip(weights)
                    .map(|((&zi, &yi), &wi)| g0 * wi * (sigmoid(zi) - yi) / wsum)
                    .collect();
                out.push((*logits, like(*logits, d)?));
            }
        }
        Ok(out)
    }
}

pub(crate) fn bce_term<T: Scalar>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
