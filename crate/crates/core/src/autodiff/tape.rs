//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles in
//! execution order, so the tape is topologically sorted by construction.
//! [`Tape::gradients`] walks it backwards once and applies each
//! operation's vector-Jacobian product.

use std::sync::Arc;

use super::params::{Gradients, ParamId, ParamStore};
use super::sparse::SparsePattern;
use super::tensor::{split_axis, strides, Tensor};
use crate::error::{invalid, shape_err, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    SpMM {
        pattern: Arc<SparsePattern>,
        values: Var,
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Sum {
        x: Var,
    },
    SumAxis {
        x: Var,
        axis: usize,
    },
    Mean {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Exp {
        x: Var,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        pad_left: usize,
    },
    Mse {
        a: Var,
        b: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Per-node gradients produced by a backward sweep.
#[derive(Debug)]
pub struct NodeGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl NodeGrads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `b` broadcasts onto `a` when its shape equals a trailing slice of `a`'s.
fn broadcastable(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb {
        Ok(())
    } else {
        Err(shape_err(format!(
            "{op}: cannot broadcast {sb:?} onto {sa:?}"
        )))
    }
}

/// C[m,n] (+)= A[m,k] * B[k,n], all row-major.
pub(crate) fn gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// C[m,n] (+)= A[m,k] * B[n,k]^T.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            c[i * n + j] += s;
        }
    }
}

/// C[k,n] (+)= A[m,k]^T * B[m,n].
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    // stride in the source for each output axis
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(src.len());
    let rank = out_shape.len();
    if src.is_empty() {
        return (out_shape, out);
    }
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    loop {
        out.push(src[off]);
        // increment multi-index
        let mut ax = rank;
        loop {
            if ax == 0 {
                return (out_shape, out);
            }
            ax -= 1;
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input tensor. Gradients are tracked only when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records a trainable parameter; its gradient flows back to `id`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.get(id).clone(),
            requires_grad: true,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Records every parameter of `store`, in store order.
    pub fn bind(&mut self, store: &ParamStore) -> ParamVars {
        ParamVars {
            vars: store.ids().map(|id| self.param(store, id)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        broadcastable(ta, tb, "add")?;
        let bn = tb.numel().max(1);
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tb.data()[i % bn])
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "sub")?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Sub { a, b }, &[a, b]))
    }

    /// Hadamard product; `b` may broadcast over leading axes of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        broadcastable(ta, tb, "mul")?;
        let bn = tb.numel().max(1);
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * tb.data()[i % bn])
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let tx = self.value(x);
        let out =
            Tensor::new(tx.shape(), tx.data().iter().map(|v| v * c).collect()).expect("same shape");
        self.push(out, Op::Scale { x, c }, &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err(format!(
                "matmul: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut c = vec![0.0; m * n];
        gemm(ta.data(), tb.data(), &mut c, m, k, n);
        let out = Tensor::new(&[m, n], c)?;
        Ok(self.push(out, Op::MatMul { a, b }, &[a, b]))
    }

    /// Batched matmul over the leading axis: `[B,m,k] x [B,k,n]`, or
    /// `[B,m,k] x [B,n,k]^T` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let bad = || {
            shape_err(format!(
                "bmm: {:?} x {:?} (trans_b={trans_b})",
                ta.shape(),
                tb.shape()
            ))
        };
        if ta.rank() != 3 || tb.rank() != 3 || ta.shape()[0] != tb.shape()[0] {
            return Err(bad());
        }
        let (batch, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let (kb, n) = if trans_b {
            (tb.shape()[2], tb.shape()[1])
        } else {
            (tb.shape()[1], tb.shape()[2])
        };
        if kb != k {
            return Err(bad());
        }
        let mut c = vec![0.0; batch * m * n];
        for s in 0..batch {
            let a_s = &ta.data()[s * m * k..(s + 1) * m * k];
            let b_s = &tb.data()[s * k * n..(s + 1) * k * n];
            let c_s = &mut c[s * m * n..(s + 1) * m * n];
            if trans_b {
                gemm_nt(a_s, b_s, c_s, m, k, n);
            } else {
                gemm(a_s, b_s, c_s, m, k, n);
            }
        }
        let out = Tensor::new(&[batch, m, n], c)?;
        Ok(self.push(out, Op::Bmm { a, b, trans_b }, &[a, b]))
    }

    /// `S * x` where `S` has the given pattern and values `[nnz]`, `x` is `[n_cols, f]`.
    pub fn sparse_dense_matmul(
        &mut self,
        pattern: &Arc<SparsePattern>,
        values: Var,
        x: Var,
    ) -> Result<Var> {
        let (tv, tx) = (self.value(values), self.value(x));
        if tv.shape() != [pattern.nnz()] {
            return Err(shape_err(format!(
                "sparse values {:?} do not match pattern nnz {}",
                tv.shape(),
                pattern.nnz()
            )));
        }
        if tx.rank() != 2 || tx.shape()[0] != pattern.n_cols() {
            return Err(shape_err(format!(
                "sparse matmul: {}x{} pattern with dense {:?}",
                pattern.n_rows(),
                pattern.n_cols(),
                tx.shape()
            )));
        }
        let f = tx.shape()[1];
        let mut out = vec![0.0; pattern.n_rows() * f];
        let (vals, xd) = (tv.data(), tx.data());
        for (e, i, j) in pattern.entries() {
            let w = vals[e];
            let orow = &mut out[i * f..(i + 1) * f];
            for (o, xv) in orow.iter_mut().zip(&xd[j * f..(j + 1) * f]) {
                *o += w * xv;
            }
        }
        let out = Tensor::new(&[pattern.n_rows(), f], out)?;
        Ok(self.push(
            out,
            Op::SpMM {
                pattern: Arc::clone(pattern),
                values,
                x,
            },
            &[values, x],
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err(format!(
                "concat axis {axis} for rank {}",
                base.len()
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(ax, (x, y))| ax != axis && x != y)
            {
                return Err(shape_err(format!("concat: {:?} vs {:?}", s, base)));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() || start + len > t.shape()[axis] {
            return Err(shape_err(format!(
                "slice [{start}, {}) on axis {axis} of {:?}",
                start + len,
                t.shape()
            )));
        }
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Slice { x, axis, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape { x }, &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..t.rank()).collect::<Vec<_>>() {
            return Err(shape_err(format!(
                "permutation {perm:?} for rank {}",
                t.rank()
            )));
        }
        let (shape, data) = permute_data(t.data(), t.shape(), perm);
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(
            out,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            &[x],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(shape_err(format!("sum axis {axis} of {:?}", t.shape())));
        }
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let src = &t.data()[(o * n + a) * inner..(o * n + a + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::SumAxis { x, axis }, &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean { x }, &[x])
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let out =
            Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        self.push(out, op, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu { x })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp { x })
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(invalid(format!("softmax axis {axis} of {:?}", t.shape())));
        }
        let (outer, n, inner) = split_axis(t.shape(), axis);
        if n == 0 {
            return Err(invalid("softmax over empty axis"));
        }
        let src = t.data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * n + a) * inner + i;
                let max = (0..n).map(|a| src[at(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..n {
                    let e = (src[at(a)] - max).exp();
                    data[at(a)] = e;
                    z += e;
                }
                for a in 0..n {
                    data[at(a)] /= z;
                }
            }
        }
        let out = Tensor::new(t.shape(), data)?;
        Ok(self.push(out, Op::Softmax { x, axis }, &[x]))
    }

    /// Temporal convolution over axis 0 of a `[T, N, C_in]` sequence with a
    /// `[C_out, C_in, width]` kernel, applied independently per node.
    /// Causal mode pads `width - 1` zeros on the left so output `t` only sees
    /// inputs `<= t`; otherwise padding is centred. Output is `[T, N, C_out]`.
    pub fn temporal_conv1d(&mut self, x: Var, kernel: Var, causal: bool) -> Result<Var> {
        let (tx, tk) = (self.value(x), self.value(kernel));
        if tx.rank() != 3 || tk.rank() != 3 || tk.shape()[1] != tx.shape()[2] {
            return Err(shape_err(format!(
                "temporal_conv1d: input {:?}, kernel {:?}",
                tx.shape(),
                tk.shape()
            )));
        }
        let (t_len, n, c_in) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (c_out, width) = (tk.shape()[0], tk.shape()[2]);
        if width == 0 {
            return Err(invalid("temporal_conv1d kernel width must be positive"));
        }
        let pad_left = if causal { width - 1 } else { (width - 1) / 2 };
        let (xd, kd) = (tx.data(), tk.data());
        let mut out = vec![0.0; t_len * n * c_out];
        for t in 0..t_len {
            for j in 0..width {
                let src_t = t as isize + j as isize - pad_left as isize;
                if src_t < 0 || src_t >= t_len as isize {
                    continue;
                }
                let src_t = src_t as usize;
                for v in 0..n {
                    let xin = &xd[(src_t * n + v) * c_in..(src_t * n + v + 1) * c_in];
                    let orow = &mut out[(t * n + v) * c_out..(t * n + v + 1) * c_out];
                    for (o, ov) in orow.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for (c, xv) in xin.iter().enumerate() {
                            s += kd[(o * c_in + c) * width + j] * xv;
                        }
                        *ov += s;
                    }
                }
            }
        }
        let out = Tensor::new(&[t_len, n, c_out], out)?;
        Ok(self.push(
            out,
            Op::Conv1d {
                x,
                kernel,
                pad_left,
            },
            &[x, kernel],
        ))
    }

    /// Mean squared error between equally shaped tensors.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "mse_loss")?;
        let n = ta.numel() as f64;
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mse { a, b }, &[a, b]))
    }

    /// Backward sweep from a scalar `loss`, returning gradients for every
    /// node that requires them.
    pub fn gradients(&self, loss: Var) -> Result<NodeGrads> {
        if self.value(loss).numel() != 1 {
            return Err(invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(NodeGrads { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(NodeGrads { grads })
    }

    /// Accumulates d(loss)/d(param) into `grads` for every parameter on the tape.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<NodeGrads> {
        let node_grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let (Op::Param(id), Some(g)) = (&node.op, &node_grads.grads[i]) {
                grads.accumulate(*id, g);
            }
        }
        Ok(node_grads)
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        // Adds into the gradient slot of `v`, allocating zeros on first touch.
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                let n = self.nodes[v.0].value.numel();
                grads[v.0].get_or_insert_with(|| vec![0.0; n])
            }};
        }
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add { a, b } => {
                if needs(*a) {
                    slot!(*a).iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if needs(*b) {
                    let db = slot!(*b);
                    let bn = db.len().max(1);
                    for (i, x) in g.iter().enumerate() {
                        db[i % bn] += x;
                    }
                }
            }
            Op::Sub { a, b } => {
                if needs(*a) {
                    slot!(*a).iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if needs(*b) {
                    slot!(*b).iter_mut().zip(g).for_each(|(d, x)| *d -= x);
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                let bn = vb.len().max(1);
                if needs(*a) {
                    let da = slot!(*a);
                    for (i, x) in g.iter().enumerate() {
                        da[i] += x * vb[i % bn];
                    }
                }
                if needs(*b) {
                    let db = slot!(*b);
                    for (i, x) in g.iter().enumerate() {
                        db[i % bn] += x * va[i];
                    }
                }
            }
            Op::Scale { x, c } => {
                if needs(*x) {
                    slot!(*x).iter_mut().zip(g).for_each(|(d, v)| *d += c * v);
                }
            }
            Op::MatMul { a, b } => {
                let sa = self.nodes[a.0].value.shape();
                let sb = self.nodes[b.0].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if needs(*a) {
                    let vb = val(*b);
                    gemm_nt(g, vb, slot!(*a), m, n, k);
                }
                if needs(*b) {
                    let va = val(*a);
                    gemm_tn(va, g, slot!(*b), m, k, n);
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let sa = self.nodes[a.0].value.shape();
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = node.value.shape()[2];
                let (va, vb) = (val(*a), val(*b));
                if needs(*a) {
                    let da = slot!(*a);
                    for s in 0..batch {
                        let gs = &g[s * m * n..(s + 1) * m * n];
                        let bs = &vb[s * k * n..(s + 1) * k * n];
                        let das = &mut da[s * m * k..(s + 1) * m * k];
                        if *trans_b {
                            // B_s is [n,k]: dA = G * B
                            gemm(gs, bs, das, m, n, k);
                        } else {
                            gemm_nt(gs, bs, das, m, n, k);
                        }
                    }
                }
                if needs(*b) {
                    let db = slot!(*b);
                    for s in 0..batch {
                        let gs = &g[s * m * n..(s + 1) * m * n];
                        let as_ = &va[s * m * k..(s + 1) * m * k];
                        let dbs = &mut db[s * k * n..(s + 1) * k * n];
                        if *trans_b {
                            // dB[n,k] = G^T * A
                            gemm_tn(gs, as_, dbs, m, n, k);
                        } else {
                            gemm_tn(as_, gs, dbs, m, k, n);
                        }
                    }
                }
            }
            Op::SpMM { pattern, values, x } => {
                let f = node.value.shape()[1];
                if needs(*values) {
                    let xd = val(*x);
                    let dv = slot!(*values);
                    for (e, i, j) in pattern.entries() {
                        let gi = &g[i * f..(i + 1) * f];
                        let xj = &xd[j * f..(j + 1) * f];
                        dv[e] += gi.iter().zip(xj).map(|(p, q)| p * q).sum::<f64>();
                    }
                }
                if needs(*x) {
                    let vv = val(*values);
                    let dx = slot!(*x);
                    for (e, i, j) in pattern.entries() {
                        let w = vv[e];
                        for c in 0..f {
                            dx[j * f + c] += w * g[i * f + c];
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.shape()[*axis];
                    if needs(p) {
                        let dp = slot!(p);
                        for o in 0..outer {
                            let src = &g
                                [(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut dp[o * len * inner..(o + 1) * len * inner];
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                if needs(*x) {
                    let (outer, n, inner) = split_axis(self.nodes[x.0].value.shape(), *axis);
                    let len = node.value.shape()[*axis];
                    let dx = slot!(*x);
                    for o in 0..outer {
                        let base = (o * n + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        dx[base..base + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Reshape { x } => {
                if needs(*x) {
                    slot!(*x).iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
            }
            Op::Permute { x, perm } => {
                if needs(*x) {
                    let inv = inverse_perm(perm);
                    let (_, back) = permute_data(g, node.value.shape(), &inv);
                    slot!(*x).iter_mut().zip(&back).for_each(|(d, s)| *d += s);
                }
            }
            Op::Sum { x } => {
                if needs(*x) {
                    slot!(*x).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::SumAxis { x, axis } => {
                if needs(*x) {
                    let (outer, n, inner) = split_axis(self.nodes[x.0].value.shape(), *axis);
                    let dx = slot!(*x);
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for a in 0..n {
                            dx[(o * n + a) * inner..(o * n + a + 1) * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, s)| *d += s);
                        }
                    }
                }
            }
            Op::Mean { x } => {
                if needs(*x) {
                    let dx = slot!(*x);
                    let c = g[0] / dx.len() as f64;
                    dx.iter_mut().for_each(|d| *d += c);
                }
            }
            Op::Sigmoid { x } => {
                if needs(*x) {
                    let y = node.value.data();
                    slot!(*x)
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(d, (gv, yv))| *d += gv * yv * (1.0 - yv));
                }
            }
            Op::Tanh { x } => {
                if needs(*x) {
                    let y = node.value.data();
                    slot!(*x)
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(d, (gv, yv))| *d += gv * (1.0 - yv * yv));
                }
            }
            Op::Relu { x } => {
                if needs(*x) {
                    let xv = val(*x);
                    slot!(*x)
                        .iter_mut()
                        .zip(g.iter().zip(xv))
                        .for_each(|(d, (gv, v))| {
                            if *v > 0.0 {
                                *d += gv
                            }
                        });
                }
            }
            Op::Exp { x } => {
                if needs(*x) {
                    let y = node.value.data();
                    slot!(*x)
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(d, (gv, yv))| *d += gv * yv);
                }
            }
            Op::Softmax { x, axis } => {
                if needs(*x) {
                    let y = node.value.data();
                    let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                    let dx = slot!(*x);
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * n + a) * inner + i;
                            let dot: f64 = (0..n).map(|a| g[at(a)] * y[at(a)]).sum();
                            for a in 0..n {
                                dx[at(a)] += y[at(a)] * (g[at(a)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Conv1d {
                x,
                kernel,
                pad_left,
            } => {
                let sx = self.nodes[x.0].value.shape();
                let sk = self.nodes[kernel.0].value.shape();
                let (t_len, n, c_in) = (sx[0], sx[1], sx[2]);
                let (c_out, width) = (sk[0], sk[2]);
                let (xd, kd) = (val(*x), val(*kernel));
                let mut dx = needs(*x).then(|| vec![0.0; xd.len()]);
                let mut dk = needs(*kernel).then(|| vec![0.0; kd.len()]);
                for t in 0..t_len {
                    for j in 0..width {
                        let src_t = t as isize + j as isize - *pad_left as isize;
                        if src_t < 0 || src_t >= t_len as isize {
                            continue;
                        }
                        let src_t = src_t as usize;
                        for v in 0..n {
                            let gb = (t * n + v) * c_out;
                            let xb = (src_t * n + v) * c_in;
                            for o in 0..c_out {
                                let go = g[gb + o];
                                if go == 0.0 {
                                    continue;
                                }
                                for c in 0..c_in {
                                    let ki = (o * c_in + c) * width + j;
                                    if let Some(dx) = dx.as_mut() {
                                        dx[xb + c] += go * kd[ki];
                                    }
                                    if let Some(dk) = dk.as_mut() {
                                        dk[ki] += go * xd[xb + c];
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(dx) = dx {
                    slot!(*x).iter_mut().zip(&dx).for_each(|(d, s)| *d += s);
                }
                if let Some(dk) = dk {
                    slot!(*kernel)
                        .iter_mut()
                        .zip(&dk)
                        .for_each(|(d, s)| *d += s);
                }
            }
            Op::Mse { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                let c = 2.0 * g[0] / va.len() as f64;
                if needs(*a) {
                    slot!(*a)
                        .iter_mut()
                        .zip(va.iter().zip(vb))
                        .for_each(|(d, (x, y))| *d += c * (x - y));
                }
                if needs(*b) {
                    slot!(*b)
                        .iter_mut()
                        .zip(va.iter().zip(vb))
                        .for_each(|(d, (x, y))| *d -= c * (x - y));
                }
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
