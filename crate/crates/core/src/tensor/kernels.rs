//! Raw loops shared by forward and backward passes. All accumulations run in
//! ascending index order of the reduced dimension.

use super::Scalar;

/// `out[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            axpy(row, aip, &b[p * n..(p + 1) * n]);
        }
    }
    out
}

/// `out[k×n] = aᵀ · g` for `a[m×k]`, `g[m×n]`.
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            axpy(&mut out[p * n..(p + 1) * n], aip, grow);
        }
    }
    out
}

/// `out[m×k] = g · bᵀ` for `g[m×n]`, `b[k×n]`.
pub(crate) fn matmul_nt<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = dot(grow, &b[p * n..(p + 1) * n]);
        }
    }
    out
}

#[inline]
pub(crate) fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub(crate) fn add_into<T: Scalar>(y: &mut [T], x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

/// Geometry of a stride-1 2-D convolution in NHWC layout.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Input coordinate for output coordinate `o` and kernel tap `k`, if inside the image.
    #[inline]
    fn src(o: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o + k).checked_sub(pad)?;
        (pos < extent).then_some(pos)
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    g: &ConvGeom,
) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.out_h * g.out_w * g.cout];
    for b in 0..g.n {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let o0 = ((b * g.out_h + oy) * g.out_w + ox) * g.cout;
                let orow = &mut out[o0..o0 + g.cout];
                if let Some(bias) = bias {
                    orow.copy_from_slice(bias);
                }
                for ky in 0..g.kh {
                    let Some(iy) = ConvGeom::src(oy, ky, g.pad_h, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = ConvGeom::src(ox, kx, g.pad_w, g.w) else {
                            continue;
                        };
                        let i0 = ((b * g.h + iy) * g.w + ix) * g.cin;
                        let w0 = (ky * g.kw + kx) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let xv = x[i0 + ci];
                            if xv == T::zero() {
                                continue;
                            }
                            axpy(orow, xv, &w[w0 + ci * g.cout..w0 + (ci + 1) * g.cout]);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, dbias)`.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    grad: &[T],
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); g.cout];
    for b in 0..g.n {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let o0 = ((b * g.out_h + oy) * g.out_w + ox) * g.cout;
                let grow = &grad[o0..o0 + g.cout];
                add_into(&mut db, grow);
                for ky in 0..g.kh {
                    let Some(iy) = ConvGeom::src(oy, ky, g.pad_h, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = ConvGeom::src(ox, kx, g.pad_w, g.w) else {
                            continue;
                        };
                        let i0 = ((b * g.h + iy) * g.w + ix) * g.cin;
                        let w0 = (ky * g.kw + kx) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let wrow = &w[w0 + ci * g.cout..w0 + (ci + 1) * g.cout];
                            dx[i0 + ci] += dot(grow, wrow);
                            let xv = x[i0 + ci];
                            if xv != T::zero() {
                                axpy(&mut dw[w0 + ci * g.cout..w0 + (ci + 1) * g.cout], xv, grow);
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Geometry of the fused "tile two segments then convolve" operation.
///
/// The input image is implicit: pixel `(s, t)` of batch item `b` is the
/// channel concatenation `[r[b, s, :], l[b, t, :]]`, and the kernel is applied
/// with same padding.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PairGeom {
    pub n: usize,
    pub s: usize,
    pub t: usize,
    pub d: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
}

impl PairGeom {
    fn pad_h(&self) -> usize {
        (self.kh - 1) / 2
    }
    fn pad_w(&self) -> usize {
        (self.kw - 1) / 2
    }
}

/// Per-tap projections `P[tap][row] = seg[row] · W[tap, half]`, shape `[taps, rows, cout]`.
fn project_segments<T: Scalar>(
    seg: &[T],
    rows: usize,
    w: &[T],
    half: usize,
    g: &PairGeom,
) -> Vec<T> {
    let taps = g.kh * g.kw;
    let cin = 2 * g.d;
    let mut p = vec![T::zero(); taps * rows * g.cout];
    for tap in 0..taps {
        let wtap = &w[tap * cin * g.cout + half * g.d * g.cout..];
        for r in 0..rows {
            let out = &mut p[(tap * rows + r) * g.cout..(tap * rows + r + 1) * g.cout];
            for c in 0..g.d {
                let v = seg[r * g.d + c];
                if v == T::zero() {
                    continue;
                }
                axpy(out, v, &wtap[c * g.cout..(c + 1) * g.cout]);
            }
        }
    }
    p
}

pub(crate) fn pair_conv_forward<T: Scalar>(
    r: &[T],
    l: &[T],
    w: &[T],
    bias: Option<&[T]>,
    g: &PairGeom,
) -> Vec<T> {
    let (ph, pw) = (g.pad_h(), g.pad_w());
    let mut out = vec![T::zero(); g.n * g.s * g.t * g.cout];
    for b in 0..g.n {
        let pr = project_segments(&r[b * g.s * g.d..(b + 1) * g.s * g.d], g.s, w, 0, g);
        let pl = project_segments(&l[b * g.t * g.d..(b + 1) * g.t * g.d], g.t, w, 1, g);
        for si in 0..g.s {
            for ti in 0..g.t {
                let o0 = ((b * g.s + si) * g.t + ti) * g.cout;
                let orow = &mut out[o0..o0 + g.cout];
                if let Some(bias) = bias {
                    orow.copy_from_slice(bias);
                }
                for ky in 0..g.kh {
                    let Some(rs) = ConvGeom::src(si, ky, ph, g.s) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(lt) = ConvGeom::src(ti, kx, pw, g.t) else {
                            continue;
                        };
                        let tap = ky * g.kw + kx;
                        add_into(orow, &pr[(tap * g.s + rs) * g.cout..(tap * g.s + rs + 1) * g.cout]);
                        add_into(orow, &pl[(tap * g.t + lt) * g.cout..(tap * g.t + lt + 1) * g.cout]);
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dr, dl, dw, dbias)`.
pub(crate) fn pair_conv_backward<T: Scalar>(
    r: &[T],
    l: &[T],
    w: &[T],
    grad: &[T],
    g: &PairGeom,
) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
    let (ph, pw) = (g.pad_h(), g.pad_w());
    let taps = g.kh * g.kw;
    let cin = 2 * g.d;
    let mut dr = vec![T::zero(); r.len()];
    let mut dl = vec![T::zero(); l.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); g.cout];
    for b in 0..g.n {
        // Gradients w.r.t. the per-tap projections.
        let mut dpr = vec![T::zero(); taps * g.s * g.cout];
        let mut dpl = vec![T::zero(); taps * g.t * g.cout];
        for si in 0..g.s {
            for ti in 0..g.t {
                let o0 = ((b * g.s + si) * g.t + ti) * g.cout;
                let grow = &grad[o0..o0 + g.cout];
                add_into(&mut db, grow);
                for ky in 0..g.kh {
                    let Some(rs) = ConvGeom::src(si, ky, ph, g.s) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(lt) = ConvGeom::src(ti, kx, pw, g.t) else {
                            continue;
                        };
                        let tap = ky * g.kw + kx;
                        add_into(&mut dpr[(tap * g.s + rs) * g.cout..(tap * g.s + rs + 1) * g.cout], grow);
                        add_into(&mut dpl[(tap * g.t + lt) * g.cout..(tap * g.t + lt + 1) * g.cout], grow);
                    }
                }
            }
        }
        let rb = &r[b * g.s * g.d..(b + 1) * g.s * g.d];
        let lb = &l[b * g.t * g.d..(b + 1) * g.t * g.d];
        let drb = &mut dr[b * g.s * g.d..(b + 1) * g.s * g.d];
        backprop_projection(rb, g.s, &dpr, w, &mut dw, drb, 0, g, cin, taps);
        let dlb = &mut dl[b * g.t * g.d..(b + 1) * g.t * g.d];
        backprop_projection(lb, g.t, &dpl, w, &mut dw, dlb, 1, g, cin, taps);
    }
    (dr, dl, dw, db)
}

#[allow(clippy::too_many_arguments)]
fn backprop_projection<T: Scalar>(
    seg: &[T],
    rows: usize,
    dp: &[T],
    w: &[T],
    dw: &mut [T],
    dseg: &mut [T],
    half: usize,
    g: &PairGeom,
    cin: usize,
    taps: usize,
) {
    for tap in 0..taps {
        let w0 = tap * cin * g.cout + half * g.d * g.cout;
        for row in 0..rows {
            let drow = &dp[(tap * rows + row) * g.cout..(tap * rows + row + 1) * g.cout];
            for c in 0..g.d {
                let wrow = &w[w0 + c * g.cout..w0 + (c + 1) * g.cout];
                dseg[row * g.d + c] += dot(drow, wrow);
                let v = seg[row * g.d + c];
                if v != T::zero() {
                    axpy(&mut dw[w0 + c * g.cout..w0 + (c + 1) * g.cout], v, drow);
                }
            }
        }
    }
}
