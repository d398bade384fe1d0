use std::cell::{Ref, RefCell};

use super::kernels::{self, ConvGeom, PoolGeom};
use super::{sigmoid, Real, Tensor};
use crate::error::{Error, Result};

/// Recorded operation. Indices refer to earlier nodes on the same tape, so
/// creation order is a topological order.
#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
    },
    Upsample {
        x: usize,
    },
    AvgPool {
        x: usize,
        geom: PoolGeom,
    },
    MatMul {
        a: usize,
        b: usize,
        mkn: (usize, usize, usize),
        batches: usize,
        a_batched: bool,
        b_batched: bool,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Div {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        c: T,
    },
    AddScalar {
        x: usize,
    },
    Relu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    BceLogits {
        x: usize,
        target: usize,
    },
    Softmax {
        x: usize,
        axis: usize,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    SumPerSample {
        x: usize,
    },
    Concat {
        xs: Vec<usize>,
        axis: usize,
    },
    Narrow {
        x: usize,
        axis: usize,
        start: usize,
    },
    Permute {
        x: usize,
        perm: Vec<usize>,
    },
    Reshape {
        x: usize,
    },
    ExpandChannels {
        x: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run tape. Build one per forward/backward step and drop it
/// afterwards; nodes are never removed individually.
pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(v.id).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that receives a gradient.
    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// A leaf that does not receive a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, name: &str, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<Var<'_, T>> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn check_same(&self, a: Var<'_, T>, b: Var<'_, T>) -> Result<()> {
        if !std::ptr::eq(a.tape, self) || !std::ptr::eq(b.tape, self) {
            return Err(Error::invalid("variables belong to different tapes"));
        }
        Ok(())
    }
}

/// Result shape of an elementwise binary op: equal shapes, or one operand
/// holding a single element.
fn binary_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if a == b {
        Some(a.to_vec())
    } else if nb == 1 {
        Some(a.to_vec())
    } else if na == 1 {
        Some(b.to_vec())
    } else {
        None
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, shape: Vec<usize>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let (sa, sb) = (ad.len() == 1 && n != 1, bd.len() == 1 && n != 1);
    let data = (0..n)
        .map(|i| f(ad[if sa { 0 } else { i }], bd[if sb { 0 } else { i }]))
        .collect();
    Tensor { shape, data }
}

/// Reduce a gradient to the operand's shape (sum when the operand was broadcast).
fn unbroadcast<T: Real>(g: Tensor<T>, target: &[usize]) -> Tensor<T> {
    if g.shape() == target {
        return g;
    }
    let s: f64 = g.sum_f64();
    Tensor {
        shape: target.to_vec(),
        data: vec![T::from_f64(s)],
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data<T: Real>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let in_shape = x.shape();
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.len();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let src = x.data();
    for _ in 0..n {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        data.push(src[off]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor {
        shape: out_shape,
        data,
    }
}

/// `(outer, extent, inner)` view of `shape` around `axis`.
fn axis_view(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Borrow of the forward value. Drop it before recording further ops.
    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// 2-D convolution over NCHW input with an OIKhKw kernel and zero padding.
    pub fn conv2d(
        self,
        w: Var<'t, T>,
        b: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
        dil: usize,
    ) -> Result<Var<'t, T>> {
        self.tape.check_same(self, w)?;
        if stride == 0 || dil == 0 {
            return Err(Error::invalid("conv2d needs stride >= 1 and dilation >= 1"));
        }
        let out = {
            let xv = self.value();
            let wv = w.value();
            let (n, cin, h, wd) = xv.dims4()?;
            let (cout, wi, kh, kw) = wv.dims4()?;
            if wi != cin {
                return Err(Error::shape(format!(
                    "conv2d channel mismatch: input has {cin}, kernel expects {wi}"
                )));
            }
            let oh = kernels::conv_out_extent(h, kh, stride, pad, dil);
            let ow = kernels::conv_out_extent(wd, kw, stride, pad, dil);
            let (oh, ow) = match (oh, ow) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::shape(format!(
                        "conv2d output extent non-positive for input {h}x{wd}, kernel {kh}x{kw}, pad {pad}, dilation {dil}"
                    )))
                }
            };
            let bias = match b {
                Some(b) => {
                    let bv = b.value();
                    if bv.len() != cout {
                        return Err(Error::shape(format!(
                            "conv2d bias has {} entries for {cout} outputs",
                            bv.len()
                        )));
                    }
                    Some(bv.data().to_vec())
                }
                None => None,
            };
            let geom = ConvGeom {
                n,
                cin,
                h,
                w: wd,
                cout,
                kh,
                kw,
                stride,
                pad,
                dil,
                oh,
                ow,
            };
            let mut out = Tensor::zeros(&[n, cout, oh, ow]);
            kernels::conv2d_forward(xv.data(), wv.data(), bias.as_deref(), &geom, out.data_mut());
            (out, geom)
        };
        let (value, geom) = out;
        let mut inputs = vec![self.id, w.id];
        if let Some(b) = b {
            inputs.push(b.id);
        }
        self.tape.push(
            "conv2d",
            value,
            Op::Conv2d {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                geom,
            },
            &inputs,
        )
    }

    /// Bilinear enlargement to `(oh, ow)` (align-corners-false).
    pub fn upsample_to(self, oh: usize, ow: usize) -> Result<Var<'t, T>> {
        let value = {
            let xv = self.value();
            let (n, c, h, w) = xv.dims4()?;
            if oh < h || ow < w {
                return Err(Error::invalid(format!(
                    "upsample cannot shrink {h}x{w} to {oh}x{ow}"
                )));
            }
            if oh == h && ow == w {
                None
            } else {
                let mut out = Tensor::zeros(&[n, c, oh, ow]);
                kernels::bilinear_forward(xv.data(), out.data_mut(), n * c, (h, w), (oh, ow));
                Some(out)
            }
        };
        match value {
            None => Ok(self),
            Some(v) => self.tape.push("upsample", v, Op::Upsample { x: self.id }, &[self.id]),
        }
    }

    /// Bilinear enlargement by an integer factor.
    pub fn upsample(self, factor: usize) -> Result<Var<'t, T>> {
        if factor == 0 {
            return Err(Error::invalid("upsample factor must be positive"));
        }
        let (_, _, h, w) = self.value().dims4()?;
        self.upsample_to(h * factor, w * factor)
    }

    /// Average pooling; the divisor counts zero padding.
    pub fn avg_pool2d(self, k: usize, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        let (value, geom) = {
            let xv = self.value();
            let (n, c, h, w) = xv.dims4()?;
            if k == 0 || stride == 0 {
                return Err(Error::invalid("avg_pool2d needs k >= 1 and stride >= 1"));
            }
            if k > h + 2 * pad || k > w + 2 * pad {
                return Err(Error::shape(format!(
                    "pool window {k} larger than padded input {h}x{w} (pad {pad})"
                )));
            }
            let geom = PoolGeom {
                h,
                w,
                k,
                stride,
                pad,
                oh: (h + 2 * pad - k) / stride + 1,
                ow: (w + 2 * pad - k) / stride + 1,
            };
            let mut out = Tensor::zeros(&[n, c, geom.oh, geom.ow]);
            kernels::avg_pool_forward(xv.data(), out.data_mut(), &geom);
            (out, geom)
        };
        self.tape
            .push("avg_pool2d", value, Op::AvgPool { x: self.id, geom }, &[self.id])
    }

    /// Batched matrix product over the last two axes. Leading extents must be
    /// equal, or one operand may be a plain matrix shared across the batch.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.check_same(self, other)?;
        let (value, op) = {
            let av = self.value();
            let bv = other.value();
            let (sa, sb) = (av.shape(), bv.shape());
            if sa.len() < 2 || sb.len() < 2 {
                return Err(Error::shape("matmul needs rank >= 2 operands"));
            }
            let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
            let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
            if k != k2 {
                return Err(Error::shape(format!(
                    "matmul inner extents differ: {sa:?} x {sb:?}"
                )));
            }
            let ba = &sa[..sa.len() - 2];
            let bb = &sb[..sb.len() - 2];
            let (na, nb): (usize, usize) = (ba.iter().product(), bb.iter().product());
            let (batch_shape, a_batched, b_batched) = if ba == bb {
                (ba.to_vec(), true, true)
            } else if nb == 1 {
                (ba.to_vec(), true, false)
            } else if na == 1 {
                (bb.to_vec(), false, true)
            } else {
                return Err(Error::shape(format!(
                    "matmul batch extents not broadcastable: {sa:?} x {sb:?}"
                )));
            };
            let batches: usize = batch_shape.iter().product();
            let mut shape = batch_shape;
            shape.extend([m, n]);
            let mut out = Tensor::zeros(&shape);
            kernels::matmul_forward(av.data(), bv.data(), out.data_mut(), (m, k, n), a_batched, b_batched);
            (
                out,
                Op::MatMul {
                    a: self.id,
                    b: other.id,
                    mkn: (m, k, n),
                    batches,
                    a_batched,
                    b_batched,
                },
            )
        };
        self.tape.push("matmul", value, op, &[self.id, other.id])
    }

    fn binary(self, other: Var<'t, T>, name: &str, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, [usize; 2])> {
        self.tape.check_same(self, other)?;
        let av = self.value();
        let bv = other.value();
        let shape = binary_shape(av.shape(), bv.shape()).ok_or_else(|| {
            Error::shape(format!("{name}: shapes {:?} and {:?} differ", av.shape(), bv.shape()))
        })?;
        Ok((zip_map(&av, &bv, shape, f), [self.id, other.id]))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (v, ids) = self.binary(other, "add", |a, b| a + b)?;
        self.tape.push("add", v, Op::Add { a: ids[0], b: ids[1] }, &ids)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (v, ids) = self.binary(other, "sub", |a, b| a - b)?;
        self.tape.push("sub", v, Op::Sub { a: ids[0], b: ids[1] }, &ids)
    }

    /// Hadamard product.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (v, ids) = self.binary(other, "mul", |a, b| a * b)?;
        self.tape.push("mul", v, Op::Mul { a: ids[0], b: ids[1] }, &ids)
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (v, ids) = self.binary(other, "div", |a, b| a / b)?;
        self.tape.push("div", v, Op::Div { a: ids[0], b: ids[1] }, &ids)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t, T>> {
        let c = T::from_f64(c);
        let v = self.value().map(|x| x * c);
        self.tape.push("scale", v, Op::Scale { x: self.id, c }, &[self.id])
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t, T>> {
        let c = T::from_f64(c);
        let v = self.value().map(|x| x + c);
        self.tape.push("add_scalar", v, Op::AddScalar { x: self.id }, &[self.id])
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        let v = self.value().map(|x| if x > T::zero() { x } else { T::zero() });
        self.tape.push("relu", v, Op::Relu { x: self.id }, &[self.id])
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        let v = self.value().map(sigmoid);
        self.tape.push("sigmoid", v, Op::Sigmoid { x: self.id }, &[self.id])
    }

    /// Elementwise binary cross-entropy of logits against a constant target,
    /// `max(x,0) - x*t + ln(1 + e^-|x|)`.
    pub fn bce_with_logits(self, target: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.check_same(self, target)?;
        if target.requires_grad() {
            return Err(Error::invalid("bce target must be a constant"));
        }
        let v = {
            let xv = self.value();
            let tv = target.value();
            if xv.shape() != tv.shape() {
                return Err(Error::shape(format!(
                    "bce: logits {:?} vs target {:?}",
                    xv.shape(),
                    tv.shape()
                )));
            }
            zip_map(&xv, &tv, xv.shape().to_vec(), |x, t| {
                let pos = if x > T::zero() { x } else { T::zero() };
                pos - x * t + (-x.abs()).exp().ln_1p()
            })
        };
        self.tape.push(
            "bce_with_logits",
            v,
            Op::BceLogits {
                x: self.id,
                target: target.id,
            },
            &[self.id],
        )
    }

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let v = {
            let xv = self.value();
            if axis >= xv.rank() {
                return Err(Error::invalid(format!(
                    "softmax axis {axis} out of range for {:?}",
                    xv.shape()
                )));
            }
            let (outer, len, inner) = axis_view(xv.shape(), axis);
            let mut y = Tensor::zeros(xv.shape());
            kernels::softmax_forward(xv.data(), y.data_mut(), outer, len, inner);
            y
        };
        self.tape.push("softmax", v, Op::Softmax { x: self.id, axis }, &[self.id])
    }

    /// Sum of all elements as a scalar (64-bit accumulation).
    pub fn sum(self) -> Result<Var<'t, T>> {
        let v = Tensor::scalar(T::from_f64(self.value().sum_f64()));
        self.tape.push("sum", v, Op::Sum { x: self.id }, &[self.id])
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let v = Tensor::scalar(T::from_f64(self.value().mean_f64()));
        self.tape.push("mean", v, Op::Mean { x: self.id }, &[self.id])
    }

    /// Per-sample sum over every axis but the first: shape `[N]`.
    pub fn sum_per_sample(self) -> Result<Var<'t, T>> {
        let v = {
            let xv = self.value();
            if xv.rank() == 0 {
                return Err(Error::shape("sum_per_sample on a scalar"));
            }
            let n = xv.shape()[0];
            let per = xv.len() / n.max(1);
            let data = (0..n)
                .map(|i| T::from_f64(xv.data()[i * per..(i + 1) * per].iter().map(|v| v.as_f64()).sum()))
                .collect();
            Tensor { shape: vec![n], data }
        };
        self.tape
            .push("sum_per_sample", v, Op::SumPerSample { x: self.id }, &[self.id])
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let tape = first.tape;
        let v = {
            let vals: Vec<Ref<'_, Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
            let base = vals[0].shape().to_vec();
            if axis >= base.len() {
                return Err(Error::invalid(format!("concat axis {axis} out of range for {base:?}")));
            }
            let mut total = 0;
            for (p, v) in parts.iter().zip(&vals) {
                tape.check_same(first, *p)?;
                let s = v.shape();
                if s.len() != base.len()
                    || s.iter().zip(&base).enumerate().any(|(d, (a, b))| d != axis && a != b)
                {
                    return Err(Error::shape(format!("concat extents differ: {s:?} vs {base:?}")));
                }
                total += s[axis];
            }
            let mut shape = base.clone();
            shape[axis] = total;
            let (outer, _, inner) = axis_view(&base, axis);
            let mut data = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for v in &vals {
                    let blk = v.shape()[axis] * inner;
                    data.extend_from_slice(&v.data()[o * blk..(o + 1) * blk]);
                }
            }
            Tensor { shape, data }
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        tape.push("concat", v, Op::Concat { xs: ids.clone(), axis }, &ids)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let v = {
            let xv = self.value();
            let s = xv.shape();
            if axis >= s.len() || start + len > s[axis] {
                return Err(Error::shape(format!(
                    "narrow [{start}, {}) out of range on axis {axis} of {s:?}",
                    start + len
                )));
            }
            let (outer, ext, inner) = axis_view(s, axis);
            let mut shape = s.to_vec();
            shape[axis] = len;
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * ext * inner + start * inner;
                data.extend_from_slice(&xv.data()[base..base + len * inner]);
            }
            Tensor { shape, data }
        };
        self.tape
            .push("narrow", v, Op::Narrow { x: self.id, axis, start }, &[self.id])
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let v = {
            let xv = self.value();
            let mut seen = vec![false; xv.rank()];
            if perm.len() != xv.rank() {
                return Err(Error::invalid(format!("permutation {perm:?} for rank {}", xv.rank())));
            }
            for &p in perm {
                if p >= seen.len() || seen[p] {
                    return Err(Error::invalid(format!("invalid permutation {perm:?}")));
                }
                seen[p] = true;
            }
            permute_data(&xv, perm)
        };
        self.tape.push(
            "permute",
            v,
            Op::Permute {
                x: self.id,
                perm: perm.to_vec(),
            },
            &[self.id],
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value().clone().reshape(shape)?;
        self.tape.push("reshape", v, Op::Reshape { x: self.id }, &[self.id])
    }

    /// Repeat a single-channel NCHW map across `c` channels.
    pub fn expand_channels(self, c: usize) -> Result<Var<'t, T>> {
        let v = {
            let xv = self.value();
            let (n, c1, h, w) = xv.dims4()?;
            if c1 != 1 {
                return Err(Error::shape(format!("expand_channels needs 1 channel, got {c1}")));
            }
            let plane = h * w;
            let mut data = Vec::with_capacity(n * c * plane);
            for i in 0..n {
                for _ in 0..c {
                    data.extend_from_slice(&xv.data()[i * plane..(i + 1) * plane]);
                }
            }
            Tensor {
                shape: vec![n, c, h, w],
                data,
            }
        };
        self.tape
            .push("expand_channels", v, Op::ExpandChannels { x: self.id }, &[self.id])
    }

    /// Reverse-mode sweep from this scalar.
    pub fn backward(self) -> Result<Gradients<T>> {
        let nodes = self.tape.nodes.borrow();
        let root = &nodes[self.id];
        if root.value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::invalid("backward root does not depend on any tracked tensor"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.id + 1];
        grads[self.id] = Some(Tensor::ones(root.value.shape()));

        for id in (0..=self.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of node {id}")));
            }
            let mut emit = |target: usize, gt: Tensor<T>| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(gt.data()) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(gt),
                }
            };
            let val = |i: usize| &nodes[i].value;
            let req = |i: usize| nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { x, w, b, geom } => {
                    if req(*x) {
                        let mut dx = Tensor::zeros(val(*x).shape());
                        kernels::conv2d_backward_input(g.data(), val(*w).data(), geom, dx.data_mut());
                        emit(*x, dx);
                    }
                    if req(*w) {
                        let mut dw = Tensor::zeros(val(*w).shape());
                        kernels::conv2d_backward_weight(g.data(), val(*x).data(), geom, dw.data_mut());
                        emit(*w, dw);
                    }
                    if let Some(b) = b {
                        if req(*b) {
                            let mut db = Tensor::zeros(val(*b).shape());
                            kernels::conv2d_backward_bias(g.data(), geom, db.data_mut());
                            emit(*b, db);
                        }
                    }
                }
                Op::Upsample { x } => {
                    let xs = val(*x).shape();
                    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let gs = g.shape();
                    let mut dx = Tensor::zeros(xs);
                    kernels::bilinear_backward(g.data(), dx.data_mut(), n * c, (h, w), (gs[2], gs[3]));
                    emit(*x, dx);
                }
                Op::AvgPool { x, geom } => {
                    let mut dx = Tensor::zeros(val(*x).shape());
                    kernels::avg_pool_backward(g.data(), dx.data_mut(), geom);
                    emit(*x, dx);
                }
                Op::MatMul {
                    a,
                    b,
                    mkn,
                    batches,
                    a_batched,
                    b_batched,
                } => {
                    let (da, db) = kernels::matmul_backward(
                        val(*a).data(),
                        val(*b).data(),
                        g.data(),
                        *mkn,
                        *batches,
                        *a_batched,
                        *b_batched,
                    );
                    emit(*a, Tensor::new(val(*a).shape(), da)?);
                    emit(*b, Tensor::new(val(*b).shape(), db)?);
                }
                Op::Add { a, b } => {
                    emit(*a, unbroadcast(g.clone(), val(*a).shape()));
                    emit(*b, unbroadcast(g.clone(), val(*b).shape()));
                }
                Op::Sub { a, b } => {
                    emit(*a, unbroadcast(g.clone(), val(*a).shape()));
                    emit(*b, unbroadcast(g.map(|v| -v), val(*b).shape()));
                }
                Op::Mul { a, b } => {
                    let shape = g.shape().to_vec();
                    if req(*a) {
                        let ga = zip_map(&g, val(*b), shape.clone(), |g, bv| g * bv);
                        emit(*a, unbroadcast(ga, val(*a).shape()));
                    }
                    if req(*b) {
                        let gb = zip_map(&g, val(*a), shape, |g, av| g * av);
                        emit(*b, unbroadcast(gb, val(*b).shape()));
                    }
                }
                Op::Div { a, b } => {
                    let shape = g.shape().to_vec();
                    if req(*a) {
                        let ga = zip_map(&g, val(*b), shape.clone(), |g, bv| g / bv);
                        emit(*a, unbroadcast(ga, val(*a).shape()));
                    }
                    if req(*b) {
                        // d(a/b)/db = -(a/b)/b = -out/b
                        let out = &node.value;
                        let q = zip_map(out, val(*b), shape.clone(), |o, bv| o / bv);
                        let gb = zip_map(&g, &q, shape, |g, q| -g * q);
                        emit(*b, unbroadcast(gb, val(*b).shape()));
                    }
                }
                Op::Scale { x, c } => {
                    let c = *c;
                    emit(*x, g.map(|v| v * c));
                }
                Op::AddScalar { x } => emit(*x, g.clone()),
                Op::Relu { x } => {
                    let dx = zip_map(&g, val(*x), g.shape().to_vec(), |g, xv| {
                        if xv > T::zero() {
                            g
                        } else {
                            T::zero()
                        }
                    });
                    emit(*x, dx);
                }
                Op::Sigmoid { x } => {
                    let dx = zip_map(&g, &node.value, g.shape().to_vec(), |g, s| g * s * (T::one() - s));
                    emit(*x, dx);
                }
                Op::BceLogits { x, target } => {
                    let s = val(*x).map(sigmoid);
                    let d = zip_map(&s, val(*target), g.shape().to_vec(), |s, t| s - t);
                    let dx = zip_map(&g, &d, g.shape().to_vec(), |g, d| g * d);
                    emit(*x, dx);
                }
                Op::Softmax { x, axis } => {
                    let (outer, len, inner) = axis_view(g.shape(), *axis);
                    let mut dx = Tensor::zeros(g.shape());
                    kernels::softmax_backward(node.value.data(), g.data(), dx.data_mut(), outer, len, inner);
                    emit(*x, dx);
                }
                Op::Sum { x } => {
                    let gv = g.item();
                    emit(*x, Tensor::full(val(*x).shape(), gv));
                }
                Op::Mean { x } => {
                    let n = val(*x).len() as f64;
                    let gv = T::from_f64(g.item().as_f64() / n);
                    emit(*x, Tensor::full(val(*x).shape(), gv));
                }
                Op::SumPerSample { x } => {
                    let xs = val(*x).shape();
                    let n = xs[0];
                    let per = val(*x).len() / n.max(1);
                    let mut data = Vec::with_capacity(n * per);
                    for i in 0..n {
                        data.extend(std::iter::repeat(g.data()[i]).take(per));
                    }
                    emit(*x, Tensor::new(xs, data)?);
                }
                Op::Concat { xs, axis } => {
                    let (outer, _, inner) = axis_view(g.shape(), *axis);
                    let total = g.shape()[*axis];
                    let mut offset = 0;
                    for &p in xs {
                        let ps = val(p).shape();
                        let ext = ps[*axis];
                        if req(p) {
                            let mut data = Vec::with_capacity(val(p).len());
                            for o in 0..outer {
                                let base = o * total * inner + offset * inner;
                                data.extend_from_slice(&g.data()[base..base + ext * inner]);
                            }
                            emit(p, Tensor::new(ps, data)?);
                        }
                        offset += ext;
                    }
                }
                Op::Narrow { x, axis, start } => {
                    let xs = val(*x).shape();
                    let (outer, ext, inner) = axis_view(xs, *axis);
                    let len = g.shape()[*axis];
                    let mut dx = Tensor::zeros(xs);
                    for o in 0..outer {
                        let dst = o * ext * inner + start * inner;
                        let src = o * len * inner;
                        dx.data_mut()[dst..dst + len * inner]
                            .copy_from_slice(&g.data()[src..src + len * inner]);
                    }
                    emit(*x, dx);
                }
                Op::Permute { x, perm } => {
                    let mut inv = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    emit(*x, permute_data(&g, &inv));
                }
                Op::Reshape { x } => {
                    let shape = val(*x).shape().to_vec();
                    emit(*x, g.clone().reshape(&shape)?);
                }
                Op::ExpandChannels { x } => {
                    let xs = val(*x).shape();
                    let (n, c, h, w) = (g.shape()[0], g.shape()[1], xs[2], xs[3]);
                    let plane = h * w;
                    let mut dx = Tensor::zeros(xs);
                    for i in 0..n {
                        let dst = &mut dx.data_mut()[i * plane..(i + 1) * plane];
                        for (p, d) in dst.iter_mut().enumerate() {
                            let mut acc = 0.0f64;
                            for ch in 0..c {
                                acc += g.data()[(i * c + ch) * plane + p].as_f64();
                            }
                            *d = T::from_f64(acc);
                        }
                    }
                    emit(*x, dx);
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}
