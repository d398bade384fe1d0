//! Raw forward/backward kernels over row-major slices.
//!
//! Every kernel writes disjoint output planes, so planes may be computed in
//! parallel. The summation order inside one output element is fixed by the
//! loop nest and never depends on the thread count.

use super::Real;
use crate::par::for_each_chunk;

/// Geometry of a 2-D convolution over NCHW input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub dil: usize,
    pub oh: usize,
    pub ow: usize,
}

/// `floor((n + 2p - d(k-1) - 1)/s) + 1`, or `None` when non-positive.
pub fn conv_out_extent(n: usize, k: usize, stride: usize, pad: usize, dil: usize) -> Option<usize> {
    let span = dil * (k - 1) + 1;
    let padded = n + 2 * pad;
    if padded < span || stride == 0 {
        return None;
    }
    Some((padded - span) / stride + 1)
}

/// Output indices `o` in `[lo, hi)` for which `o*stride + offset` lands in `[0, n_in)`.
#[inline]
fn valid_range(offset: isize, stride: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let last = n_in as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { last / s + 1 };
    let hi = hi.min(n_out as isize);
    if hi <= lo {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// Dot product with eight independent accumulators so the compiler can
/// vectorize; the combination order is fixed.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let aa = &a[c * 8..c * 8 + 8];
        let bb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += aa[l] * bb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn conv2d_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, g: &ConvGeom, out: &mut [T]) {
    let plane = g.oh * g.ow;
    let ksz = g.kh * g.kw;
    for_each_chunk(out, plane, |idx, dst| {
        let n = idx / g.cout;
        let o = idx % g.cout;
        dst.fill(T::zero());
        for ci in 0..g.cin {
            let src = &x[(n * g.cin + ci) * g.h * g.w..][..g.h * g.w];
            let wk = &w[(o * g.cin + ci) * ksz..][..ksz];
            for ky in 0..g.kh {
                let oy_off = (ky * g.dil) as isize - g.pad as isize;
                let (ylo, yhi) = valid_range(oy_off, g.stride, g.h, g.oh);
                for kx in 0..g.kw {
                    let wv = wk[ky * g.kw + kx];
                    let ox_off = (kx * g.dil) as isize - g.pad as isize;
                    let (xlo, xhi) = valid_range(ox_off, g.stride, g.w, g.ow);
                    if xlo >= xhi {
                        continue;
                    }
                    for oy in ylo..yhi {
                        let iy = (oy * g.stride) as isize + oy_off;
                        let row = &src[iy as usize * g.w..][..g.w];
                        let orow = &mut dst[oy * g.ow..][..g.ow];
                        if g.stride == 1 {
                            let ix0 = (xlo as isize + ox_off) as usize;
                            axpy(wv, &row[ix0..ix0 + (xhi - xlo)], &mut orow[xlo..xhi]);
                        } else {
                            for ox in xlo..xhi {
                                let ix = ((ox * g.stride) as isize + ox_off) as usize;
                                orow[ox] += wv * row[ix];
                            }
                        }
                    }
                }
            }
        }
        if let Some(b) = b {
            let bv = b[o];
            dst.iter_mut().for_each(|v| *v += bv);
        }
    });
}

/// Gradient with respect to the input.
pub fn conv2d_backward_input<T: Real>(dy: &[T], w: &[T], g: &ConvGeom, dx: &mut [T]) {
    let ksz = g.kh * g.kw;
    let oplane = g.oh * g.ow;
    for_each_chunk(dx, g.h * g.w, |idx, dst| {
        let n = idx / g.cin;
        let ci = idx % g.cin;
        dst.fill(T::zero());
        for o in 0..g.cout {
            let gy = &dy[(n * g.cout + o) * oplane..][..oplane];
            let wk = &w[(o * g.cin + ci) * ksz..][..ksz];
            for ky in 0..g.kh {
                let oy_off = (ky * g.dil) as isize - g.pad as isize;
                let (ylo, yhi) = valid_range(oy_off, g.stride, g.h, g.oh);
                for kx in 0..g.kw {
                    let wv = wk[ky * g.kw + kx];
                    let ox_off = (kx * g.dil) as isize - g.pad as isize;
                    let (xlo, xhi) = valid_range(ox_off, g.stride, g.w, g.ow);
                    if xlo >= xhi {
                        continue;
                    }
                    for oy in ylo..yhi {
                        let iy = ((oy * g.stride) as isize + oy_off) as usize;
                        let grow = &gy[oy * g.ow..][..g.ow];
                        let drow = &mut dst[iy * g.w..][..g.w];
                        if g.stride == 1 {
                            let ix0 = (xlo as isize + ox_off) as usize;
                            axpy(wv, &grow[xlo..xhi], &mut drow[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for ox in xlo..xhi {
                                let ix = ((ox * g.stride) as isize + ox_off) as usize;
                                drow[ix] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
}

/// Gradient with respect to the kernel, accumulated per tap in 64-bit.
pub fn conv2d_backward_weight<T: Real>(dy: &[T], x: &[T], g: &ConvGeom, dw: &mut [T]) {
    let ksz = g.kh * g.kw;
    let oplane = g.oh * g.ow;
    for_each_chunk(dw, g.cin * ksz, |o, dst| {
        for ci in 0..g.cin {
            for ky in 0..g.kh {
                let oy_off = (ky * g.dil) as isize - g.pad as isize;
                let (ylo, yhi) = valid_range(oy_off, g.stride, g.h, g.oh);
                for kx in 0..g.kw {
                    let ox_off = (kx * g.dil) as isize - g.pad as isize;
                    let (xlo, xhi) = valid_range(ox_off, g.stride, g.w, g.ow);
                    let mut acc = 0.0f64;
                    if xlo < xhi {
                        for n in 0..g.n {
                            let gy = &dy[(n * g.cout + o) * oplane..][..oplane];
                            let src = &x[(n * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                            for oy in ylo..yhi {
                                let iy = ((oy * g.stride) as isize + oy_off) as usize;
                                let grow = &gy[oy * g.ow + xlo..oy * g.ow + xhi];
                                let row = &src[iy * g.w..][..g.w];
                                let part = if g.stride == 1 {
                                    let ix0 = (xlo as isize + ox_off) as usize;
                                    dot(grow, &row[ix0..ix0 + (xhi - xlo)])
                                } else {
                                    let mut s = T::zero();
                                    for (k, ox) in (xlo..xhi).enumerate() {
                                        let ix = ((ox * g.stride) as isize + ox_off) as usize;
                                        s += grow[k] * row[ix];
                                    }
                                    s
                                };
                                acc += part.as_f64();
                            }
                        }
                    }
                    dst[(ci * g.kh + ky) * g.kw + kx] = T::from_f64(acc);
                }
            }
        }
    });
}

pub fn conv2d_backward_bias<T: Real>(dy: &[T], g: &ConvGeom, db: &mut [T]) {
    let oplane = g.oh * g.ow;
    for (o, d) in db.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for n in 0..g.n {
            acc += dy[(n * g.cout + o) * oplane..][..oplane]
                .iter()
                .map(|v| v.as_f64())
                .sum::<f64>();
        }
        *d = T::from_f64(acc);
    }
}

/// Source taps for one output coordinate of an align-corners-false bilinear
/// resize: `(i0, i1, weight0, weight1)`.
fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = if i0 + 1 < n_in { i0 + 1 } else { i0 };
            let l1 = src - i0 as f64;
            (i0, i1, 1.0 - l1, l1)
        })
        .collect()
}

pub fn bilinear_forward<T: Real>(
    x: &[T],
    out: &mut [T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) {
    debug_assert_eq!(out.len(), planes * oh * ow);
    let ty = bilinear_taps(h, oh);
    let tx: Vec<(usize, usize, T, T)> = bilinear_taps(w, ow)
        .into_iter()
        .map(|(a, b, wa, wb)| (a, b, T::from_f64(wa), T::from_f64(wb)))
        .collect();
    for_each_chunk(out, oh * ow, |p, dst| {
        let src = &x[p * h * w..][..h * w];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::from_f64(wy0), T::from_f64(wy1));
            let r0 = &src[y0 * w..][..w];
            let r1 = &src[y1 * w..][..w];
            let orow = &mut dst[oy * ow..][..ow];
            for (o, &(x0, x1, wx0, wx1)) in orow.iter_mut().zip(&tx) {
                *o = wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
            }
        }
    });
}

pub fn bilinear_backward<T: Real>(
    dy: &[T],
    dx: &mut [T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) {
    debug_assert_eq!(dx.len(), planes * h * w);
    let ty = bilinear_taps(h, oh);
    let tx: Vec<(usize, usize, T, T)> = bilinear_taps(w, ow)
        .into_iter()
        .map(|(a, b, wa, wb)| (a, b, T::from_f64(wa), T::from_f64(wb)))
        .collect();
    for_each_chunk(dx, h * w, |p, dst| {
        dst.fill(T::zero());
        let g = &dy[p * oh * ow..][..oh * ow];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::from_f64(wy0), T::from_f64(wy1));
            let grow = &g[oy * ow..][..ow];
            for (&gv, &(x0, x1, wx0, wx1)) in grow.iter().zip(&tx) {
                dst[y0 * w + x0] += wy0 * wx0 * gv;
                dst[y0 * w + x1] += wy0 * wx1 * gv;
                dst[y1 * w + x0] += wy1 * wx0 * gv;
                dst[y1 * w + x1] += wy1 * wx1 * gv;
            }
        }
    });
}

/// Average pooling geometry; the divisor is always `k*k`, padding included.
#[derive(Clone, Copy, Debug)]
pub struct PoolGeom {
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

pub fn avg_pool_forward<T: Real>(x: &[T], out: &mut [T], g: &PoolGeom) {
    let div = (g.k * g.k) as f64;
    for_each_chunk(out, g.oh * g.ow, |p, dst| {
        let src = &x[p * g.h * g.w..][..g.h * g.w];
        for oy in 0..g.oh {
            let y0 = (oy * g.stride) as isize - g.pad as isize;
            let ys = y0.max(0) as usize..((y0 + g.k as isize).min(g.h as isize)).max(0) as usize;
            for ox in 0..g.ow {
                let x0 = (ox * g.stride) as isize - g.pad as isize;
                let xs =
                    x0.max(0) as usize..((x0 + g.k as isize).min(g.w as isize)).max(0) as usize;
                let mut acc = 0.0f64;
                for iy in ys.clone() {
                    for ix in xs.clone() {
                        acc += src[iy * g.w + ix].as_f64();
                    }
                }
                dst[oy * g.ow + ox] = T::from_f64(acc / div);
            }
        }
    });
}

pub fn avg_pool_backward<T: Real>(dy: &[T], dx: &mut [T], g: &PoolGeom) {
    let inv = T::from_f64(1.0 / (g.k * g.k) as f64);
    for_each_chunk(dx, g.h * g.w, |p, dst| {
        dst.fill(T::zero());
        let gy = &dy[p * g.oh * g.ow..][..g.oh * g.ow];
        for oy in 0..g.oh {
            let y0 = (oy * g.stride) as isize - g.pad as isize;
            let ys = y0.max(0) as usize..((y0 + g.k as isize).min(g.h as isize)).max(0) as usize;
            for ox in 0..g.ow {
                let x0 = (ox * g.stride) as isize - g.pad as isize;
                let xs =
                    x0.max(0) as usize..((x0 + g.k as isize).min(g.w as isize)).max(0) as usize;
                let v = gy[oy * g.ow + ox] * inv;
                for iy in ys.clone() {
                    for ix in xs.clone() {
                        dst[iy * g.w + ix] += v;
                    }
                }
            }
        }
    });
}

/// `c[b] = a[b or 0] · bm[b or 0]` for row-major `m×k` and `k×n` blocks.
/// `a_batched` / `b_batched` say whether the operand has one block per batch.
#[allow(clippy::too_many_arguments)]
pub fn matmul_forward<T: Real>(
    a: &[T],
    bm: &[T],
    c: &mut [T],
    (m, k, n): (usize, usize, usize),
    a_batched: bool,
    b_batched: bool,
) {
    for_each_chunk(c, m * n, |bi, dst| {
        let ab = if a_batched { &a[bi * m * k..][..m * k] } else { &a[..m * k] };
        let bb = if b_batched { &bm[bi * k * n..][..k * n] } else { &bm[..k * n] };
        dst.fill(T::zero());
        for i in 0..m {
            let crow = &mut dst[i * n..][..n];
            for p in 0..k {
                axpy(ab[i * k + p], &bb[p * n..][..n], crow);
            }
        }
    });
}

/// Gradients of the batched product. Broadcast operands receive the sum over
/// batches, added in batch order.
#[allow(clippy::too_many_arguments)]
pub fn matmul_backward<T: Real>(
    a: &[T],
    bm: &[T],
    dc: &[T],
    (m, k, n): (usize, usize, usize),
    batches: usize,
    a_batched: bool,
    b_batched: bool,
) -> (Vec<T>, Vec<T>) {
    // dA[b] = dC[b] · B[b]^T
    let mut da_full = vec![T::zero(); batches * m * k];
    for_each_chunk(&mut da_full, m * k, |bi, dst| {
        let bb = if b_batched { &bm[bi * k * n..][..k * n] } else { &bm[..k * n] };
        let g = &dc[bi * m * n..][..m * n];
        for i in 0..m {
            for p in 0..k {
                dst[i * k + p] = dot(&g[i * n..][..n], &bb[p * n..][..n]);
            }
        }
    });
    // dB[b] = A[b]^T · dC[b]
    let mut db_full = vec![T::zero(); batches * k * n];
    for_each_chunk(&mut db_full, k * n, |bi, dst| {
        let ab = if a_batched { &a[bi * m * k..][..m * k] } else { &a[..m * k] };
        let g = &dc[bi * m * n..][..m * n];
        dst.fill(T::zero());
        for i in 0..m {
            for p in 0..k {
                axpy(ab[i * k + p], &g[i * n..][..n], &mut dst[p * n..][..n]);
            }
        }
    });
    let reduce = |full: Vec<T>, block: usize| -> Vec<T> {
        let mut out = vec![T::zero(); block];
        for chunk in full.chunks(block) {
            for (o, &v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        out
    };
    let da = if a_batched { da_full } else { reduce(da_full, m * k) };
    let db = if b_batched { db_full } else { reduce(db_full, k * n) };
    (da, db)
}

/// Softmax over the middle extent of an `(outer, len, inner)` view.
pub fn softmax_forward<T: Real>(x: &[T], y: &mut [T], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut mx = x[at(0)];
            for j in 1..len {
                mx = mx.max(x[at(j)]);
            }
            let mut z = 0.0f64;
            for j in 0..len {
                let e = (x[at(j)] - mx).exp();
                y[at(j)] = e;
                z += e.as_f64();
            }
            let inv = T::from_f64(1.0 / z);
            for j in 0..len {
                y[at(j)] *= inv;
            }
        }
    }
}

pub fn softmax_backward<T: Real>(y: &[T], dy: &[T], dx: &mut [T], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut s = 0.0f64;
            for j in 0..len {
                s += (dy[at(j)] * y[at(j)]).as_f64();
            }
            let s = T::from_f64(s);
            for j in 0..len {
                dx[at(j)] = y[at(j)] * (dy[at(j)] - s);
            }
        }
    }
}
