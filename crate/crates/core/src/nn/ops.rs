//! Layer kernels. Convolutions use `k x k` kernels with `k / 2` zero padding.

use super::scalar::matmul;
use super::{Scalar, Tensor};
use crate::par;

pub fn conv_out_size(size: usize, kernel: usize, stride: usize) -> usize {
    let pad = kernel / 2;
    (size + 2 * pad - kernel) / stride + 1
}

/// Unfolds one `ci x h x w` image into a `(ci*k*k) x (ho*wo)` matrix.
pub fn im2col<T: Scalar>(
    x: &[T],
    ci: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
) -> Vec<T> {
    let ho = conv_out_size(h, kernel, stride);
    let wo = conv_out_size(w, kernel, stride);
    let pad = (kernel / 2) as isize;
    let cols = ho * wo;
    let mut out = vec![T::zero(); ci * kernel * kernel * cols];
    for c in 0..ci {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..ho {
                    let iy = (oy * stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters and sums a column matrix into `dx`.
#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Scalar>(
    col: &[T],
    dx: &mut [T],
    ci: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
) {
    let ho = conv_out_size(h, kernel, stride);
    let wo = conv_out_size(w, kernel, stride);
    let pad = (kernel / 2) as isize;
    let cols = ho * wo;
    for c in 0..ci {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..ho {
                    let iy = (oy * stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let prow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            prow[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `weight` is `co x ci x k x k`, `bias` is `co`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    co: usize,
    kernel: usize,
    stride: usize,
) -> Tensor<T> {
    let [n, ci, h, w] = x.shape;
    assert_eq!(weight.len(), co * ci * kernel * kernel, "conv weight size");
    let ho = conv_out_size(h, kernel, stride);
    let wo = conv_out_size(w, kernel, stride);
    let mut y = Tensor::zeros([n, co, ho, wo]);
    let kk = ci * kernel * kernel;
    let item = co * ho * wo;
    if item == 0 {
        return y;
    }
    par::for_each_chunk_mut(par::global_mode(), &mut y.data, item, |i, out| {
        let col = im2col(x.item(i), ci, h, w, kernel, stride);
        for (oc, plane) in out.chunks_mut(ho * wo).enumerate() {
            plane.fill(bias[oc]);
        }
        matmul(co, kk, ho * wo, weight, false, &col, false, out, T::one());
    });
    y
}

/// Returns `dx` (when `need_dx`) and accumulates into `dweight` / `dbias`
/// when provided.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    weight: &[T],
    kernel: usize,
    stride: usize,
    param_grads: Option<(&mut [T], &mut [T])>,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let [n, ci, h, w] = x.shape;
    let [_, co, ho, wo] = dy.shape;
    let kk = ci * kernel * kernel;
    let hw = ho * wo;
    let want_cols = param_grads.is_some();
    let per_item: Vec<(Option<Vec<T>>, Option<Vec<T>>)> =
        par::map_range(par::global_mode(), n, |i| {
            let col = want_cols.then(|| im2col(x.item(i), ci, h, w, kernel, stride));
            let dx = need_dx.then(|| {
                let mut dcol = vec![T::zero(); kk * hw];
                matmul(kk, co, hw, weight, true, dy.item(i), false, &mut dcol, T::zero());
                let mut dx = vec![T::zero(); ci * h * w];
                col2im_add(&dcol, &mut dx, ci, h, w, kernel, stride);
                dx
            });
            (col, dx)
        });
    let mut dx_out = need_dx.then(|| Tensor::zeros(x.shape));
    if let Some((dw, db)) = param_grads {
        for (i, (col, _)) in per_item.iter().enumerate() {
            let col = col.as_ref().expect("columns computed");
            let dyi = dy.item(i);
            matmul(co, hw, kk, dyi, false, col, true, dw, T::one());
            for (oc, g) in db.iter_mut().enumerate() {
                *g += dyi[oc * hw..(oc + 1) * hw].iter().copied().sum::<T>();
            }
        }
    }
    if let Some(out) = dx_out.as_mut() {
        for (i, (_, dx)) in per_item.into_iter().enumerate() {
            out.item_mut(i).copy_from_slice(&dx.expect("dx computed"));
        }
    }
    dx_out
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Uses the forward output `y` as the mask.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: dy.shape,
        data: y
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
            .collect(),
    }
}

/// 2x2 window, stride 2; odd trailing rows/columns are dropped.
pub fn maxpool2_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape;
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, ho, wo]);
    for i in 0..n {
        for ch in 0..c {
            let p = x.plane(i, ch);
            let off = (i * c + ch) * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let a = p[2 * oy * w + 2 * ox];
                    let b = p[2 * oy * w + 2 * ox + 1];
                    let cc = p[(2 * oy + 1) * w + 2 * ox];
                    let d = p[(2 * oy + 1) * w + 2 * ox + 1];
                    y.data[off + oy * wo + ox] = a.max(b).max(cc).max(d);
                }
            }
        }
    }
    y
}

/// Routes each gradient to the first maximum of its window.
pub fn maxpool2_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape;
    let (ho, wo) = (h / 2, w / 2);
    let mut dx = Tensor::zeros(x.shape);
    for i in 0..n {
        for ch in 0..c {
            let p = x.plane(i, ch);
            let base = (i * c + ch) * h * w;
            let goff = (i * c + ch) * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let idx = [
                        2 * oy * w + 2 * ox,
                        2 * oy * w + 2 * ox + 1,
                        (2 * oy + 1) * w + 2 * ox,
                        (2 * oy + 1) * w + 2 * ox + 1,
                    ];
                    let mut best = idx[0];
                    for &j in &idx[1..] {
                        if p[j] > p[best] {
                            best = j;
                        }
                    }
                    dx.data[base + best] += dy.data[goff + oy * wo + ox];
                }
            }
        }
    }
    dx
}

/// Global average pool to `n x c x 1 x 1`.
pub fn gap_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape;
    let inv = T::of(1.0 / (h * w) as f64);
    let mut y = Tensor::zeros([n, c, 1, 1]);
    for i in 0..n {
        for ch in 0..c {
            y.data[i * c + ch] = x.plane(i, ch).iter().copied().sum::<T>() * inv;
        }
    }
    y
}

pub fn gap_backward<T: Scalar>(x_shape: [usize; 4], dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x_shape;
    let inv = T::of(1.0 / (h * w) as f64);
    let mut dx = Tensor::zeros(x_shape);
    for i in 0..n {
        for ch in 0..c {
            let g = dy.data[i * c + ch] * inv;
            let off = (i * c + ch) * h * w;
            dx.data[off..off + h * w].fill(g);
        }
    }
    dx
}

/// `weight` is `out x in`; input items are flattened.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, weight: &[T], bias: &[T], out: usize) -> Tensor<T> {
    let n = x.n();
    let inp = x.item_len();
    assert_eq!(weight.len(), out * inp, "linear weight size");
    let mut y = Tensor::zeros([n, out, 1, 1]);
    for i in 0..n {
        y.item_mut(i).copy_from_slice(bias);
    }
    matmul(n, inp, out, &x.data, false, weight, true, &mut y.data, T::one());
    y
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    weight: &[T],
    param_grads: Option<(&mut [T], &mut [T])>,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let n = x.n();
    let inp = x.item_len();
    let out = dy.item_len();
    if let Some((dw, db)) = param_grads {
        matmul(out, n, inp, &dy.data, true, &x.data, false, dw, T::one());
        for i in 0..n {
            for (g, &d) in db.iter_mut().zip(dy.item(i)) {
                *g += d;
            }
        }
    }
    need_dx.then(|| {
        let mut dx = Tensor::zeros(x.shape);
        matmul(n, out, inp, &dy.data, false, weight, false, &mut dx.data, T::zero());
        dx
    })
}

/// Element-wise max over the batch axis; returns the argmax per element.
pub fn max_over_batch_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let [n, c, h, w] = x.shape;
    let len = c * h * w;
    let mut y = Tensor::from_vec([1, c, h, w], x.item(0).to_vec());
    let mut arg = vec![0usize; len];
    for i in 1..n {
        for (j, &v) in x.item(i).iter().enumerate() {
            if v > y.data[j] {
                y.data[j] = v;
                arg[j] = i;
            }
        }
    }
    (y, arg)
}

pub fn max_over_batch_backward<T: Scalar>(
    x_shape: [usize; 4],
    argmax: &[usize],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(x_shape);
    let len = x_shape[1] * x_shape[2] * x_shape[3];
    for (j, &i) in argmax.iter().enumerate() {
        dx.data[i * len + j] += dy.data[j];
    }
    dx
}

/// Concatenates along the channel axis; all inputs share `n, h, w`.
pub fn concat_channels<T: Scalar>(parts: &[Tensor<T>]) -> Tensor<T> {
    let [n, _, h, w] = parts[0].shape;
    let c: usize = parts.iter().map(|p| p.c()).sum();
    let mut y = Tensor::zeros([n, c, h, w]);
    for i in 0..n {
        let mut off = 0;
        let dst = y.item_mut(i);
        for p in parts {
            assert_eq!((p.n(), p.h(), p.w()), (n, h, w), "concat shape mismatch");
            let src = p.item(i);
            dst[off..off + src.len()].copy_from_slice(src);
            off += src.len();
        }
    }
    y
}

pub fn split_channels<T: Scalar>(x: &Tensor<T>, sizes: &[usize]) -> Vec<Tensor<T>> {
    let [n, _, h, w] = x.shape;
    let mut out: Vec<Tensor<T>> = sizes.iter().map(|&c| Tensor::zeros([n, c, h, w])).collect();
    for i in 0..n {
        let src = x.item(i);
        let mut off = 0;
        for t in out.iter_mut() {
            let d = t.item_mut(i);
            let l = d.len();
            d.copy_from_slice(&src[off..off + l]);
            off += l;
        }
    }
    out
}

pub fn concat_batch<T: Scalar>(parts: &[Tensor<T>]) -> Tensor<T> {
    let [_, c, h, w] = parts[0].shape;
    let n: usize = parts.iter().map(|p| p.n()).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for p in parts {
        assert_eq!((p.c(), p.h(), p.w()), (c, h, w), "batch concat shape mismatch");
        data.extend_from_slice(&p.data);
    }
    Tensor::from_vec([n, c, h, w], data)
}

pub fn split_batch<T: Scalar>(x: &Tensor<T>, sizes: &[usize]) -> Vec<Tensor<T>> {
    let [_, c, h, w] = x.shape;
    let mut off = 0;
    sizes
        .iter()
        .map(|&k| {
            let l = k * c * h * w;
            let t = Tensor::from_vec([k, c, h, w], x.data[off..off + l].to_vec());
            off += l;
            t
        })
        .collect()
}

pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let mut p = logits.clone();
    for i in 0..p.n() {
        let row = p.item_mut(i);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v = *v / s);
    }
    p
}

/// Mean categorical cross-entropy; returns `(loss, dlogits, probabilities)`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> (f64, Tensor<T>, Tensor<T>) {
    let p = softmax_rows(logits);
    let n = logits.n();
    let inv = T::of(1.0 / n as f64);
    let mut loss = 0.0;
    let mut d = p.clone();
    for (i, &y) in labels.iter().enumerate() {
        loss -= p.item(i)[y].f64().max(1e-30).ln();
        d.item_mut(i)[y] -= T::one();
    }
    d.scale(inv);
    (loss / n as f64, d, p)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit; returns `(loss, dloss/dlogit)`.
pub fn bce_with_logits(z: f64, y: f64) -> (f64, f64) {
    let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    (loss, sigmoid(z) - y)
}
