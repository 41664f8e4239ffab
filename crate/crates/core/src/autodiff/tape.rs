//! Eager reverse-mode tape.
//!
//! Ops compute their value when recorded, so builders can branch on
//! intermediate results (e.g. zero-norm guards). `backward` consumes
//! nothing: it walks the node list once in reverse and returns a
//! [`Gradients`] holding per-node adjoints plus the per-parameter
//! gradient map. Parameter tensors are borrowed from the [`ParamStore`],
//! which therefore cannot be mutated while a tape is alive.

use super::kernels::{col_sum_acc, dot, mm_nn_acc, mm_nt_acc, mm_tn_acc};
use super::store::{GradMap, ParamStore};
use super::tensor::Tensor;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

enum Value<'s> {
    Owned(Tensor),
    Borrowed(&'s Tensor),
}

impl<'s> Value<'s> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    /// Constant or parameter input. `param` names a store entry whose
    /// gradient should be collected; `None` means no gradient flows.
    Leaf { param: Option<String> },
    /// `y = scale·(x·wᵀ) + b` with `w` stored `(out, in)`.
    Linear { x: usize, w: usize, b: Option<usize>, scale: f64 },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddConst(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    MinElem(usize, usize),
    Clamp(usize, f64, f64),
    LogSoftmaxRows(usize),
    GatherRows(usize, Vec<usize>),
    Concat(Vec<usize>),
    SliceRows(usize, usize, usize),
    SliceCols(usize, usize, usize),
    Row(usize, usize),
    /// Batched per-row matrix-vector product: `y[r] = W_r · x_r` where
    /// `w.row(r)` flattens a `(p, q)` matrix.
    RowMatVec { w: usize, x: usize, p: usize, q: usize },
    StackScalars(Vec<usize>),
    /// Scatter rows of an `(m, d)` matrix into a zero vector of
    /// `n_slots·d` entries at positions `slots[i]·d`.
    FlattenPad { a: usize, slots: Vec<usize> },
    Flatten(usize),
    MinReduce(usize),
    MaxReduce(usize),
    /// `a - s` with scalar node `s` broadcast over `a`.
    SubScalar(usize, usize),
    /// `a / s` with scalar node `s` broadcast over `a`.
    DivScalar(usize, usize),
}

struct Node<'s> {
    value: Value<'s>,
    op: Op,
}

/// Fetch-or-init an adjoint buffer.
fn acc<'g>(slot: &'g mut Option<Tensor>, shape: &[usize]) -> &'g mut Tensor {
    slot.get_or_insert_with(|| Tensor::zeros(shape))
}

/// Result of a backward pass.
pub struct Gradients {
    node: Vec<Option<Tensor>>,
    params: GradMap,
}

impl Gradients {
    pub fn param_grads(&self) -> &GradMap {
        &self.params
    }

    pub fn into_param_grads(self) -> GradMap {
        self.params
    }

    /// Adjoint of an arbitrary node; `None` if the loss does not depend
    /// on it.
    pub fn node_grad(&self, id: NodeId) -> Option<&Tensor> {
        self.node[id.0].as_ref()
    }
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node<'s>>,
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape { store, nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0].value.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value: Value::Owned(value), op });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked for it beyond its adjoint.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node { value: Value::Owned(t), op: Op::Leaf { param: None } });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable parameter: value borrowed from the store, gradient
    /// collected under its name.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        let t = self.store.value(name)?;
        self.nodes.push(Node {
            value: Value::Borrowed(t),
            op: Op::Leaf { param: Some(name.to_string()) },
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Parameter used as a constant: value from the store, no gradient.
    /// This is how a sub-network is frozen for one loss.
    pub fn frozen(&mut self, name: &str) -> Result<NodeId> {
        let t = self.store.value(name)?;
        self.nodes.push(Node { value: Value::Borrowed(t), op: Op::Leaf { param: None } });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn binary_shape_check(&self, ctx: &str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(CoreError::shape(ctx, sa, sb));
        }
        Ok(())
    }

    fn elementwise(
        &mut self,
        ctx: &str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        self.binary_shape_check(ctx, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::from_vec(&shape, data).expect("shape checked"), op))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_vec(&shape, data).expect("same shape"), op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| -x, Op::Neg(a.0))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| c * x, Op::Scale(a.0, c))
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| x + c, Op::AddConst(a.0))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, stable_sigmoid, Op::Sigmoid(a.0))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, stable_softplus, Op::Softplus(a.0))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    /// Natural log; errors at build time on non-positive inputs.
    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(CoreError::Contract("ln of non-positive value".into()));
        }
        Ok(self.unary(a, f64::ln, Op::Ln(a.0)))
    }

    /// Square root; errors at build time on negative inputs. The
    /// gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(CoreError::Contract("sqrt of negative value".into()));
        }
        Ok(self.unary(a, f64::sqrt, Op::Sqrt(a.0)))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(CoreError::Contract("mean of empty tensor".into()));
        }
        let s: f64 = t.data().iter().sum();
        let n = t.len() as f64;
        Ok(self.push(Tensor::scalar(s / n), Op::Mean(a.0)))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("min_elem", a, b, |x, y| if x <= y { x } else { y }, Op::MinElem(a.0, b.0))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a.0, lo, hi))
    }

    /// `y = scale·(x·wᵀ) + b`; `x` may be a vector or a `(B, in)` matrix,
    /// `w` is `(out, in)`, `b` (if any) a vector of length `out`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, scale: f64) -> Result<NodeId> {
        let (xt, wt) = (self.value(x), self.value(w));
        if wt.rank() != 2 {
            return Err(CoreError::shape("linear weight", &[0, 0], wt.shape()));
        }
        let (out_dim, in_dim) = (wt.shape()[0], wt.shape()[1]);
        let rank1 = match xt.rank() {
            1 => true,
            2 => false,
            _ => return Err(CoreError::shape("linear input", &[in_dim], xt.shape())),
        };
        if xt.cols() != in_dim {
            return Err(CoreError::shape("linear input", &[xt.rows(), in_dim], xt.shape()));
        }
        let m = xt.rows();
        let mut data = vec![0.0; m * out_dim];
        mm_nt_acc(&mut data, xt.data(), wt.data(), m, in_dim, out_dim, scale);
        if let Some(bid) = b {
            let bt = self.value(bid);
            if bt.shape() != [out_dim] {
                return Err(CoreError::shape("linear bias", &[out_dim], bt.shape()));
            }
            for r in 0..m {
                for (d, &bv) in data[r * out_dim..(r + 1) * out_dim].iter_mut().zip(bt.data()) {
                    *d += bv;
                }
            }
        }
        let value = if rank1 {
            Tensor::vector(data)
        } else {
            Tensor::matrix(m, out_dim, data).expect("sized above")
        };
        Ok(self.push(value, Op::Linear { x: x.0, w: w.0, b: b.map(|n| n.0), scale }))
    }

    /// Row-wise log-softmax of a `(B, n)` matrix.
    pub fn log_softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(CoreError::shape("log_softmax_rows", &[0, 0], t.shape()));
        }
        let (m, n) = (t.rows(), t.cols());
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            let row = t.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse: f64 = row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln() + mx;
            for c in 0..n {
                data[r * n + c] = row[c] - lse;
            }
        }
        Ok(self.push(Tensor::matrix(m, n, data).expect("sized"), Op::LogSoftmaxRows(a.0)))
    }

    /// `y[r] = a[r, idx[r]]` for a `(B, n)` matrix.
    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let t = self.value(a);
        if t.rank() != 2 || idx.len() != t.rows() {
            return Err(CoreError::shape("gather_rows", &[idx.len(), t.cols()], t.shape()));
        }
        let n = t.cols();
        let mut data = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(CoreError::Contract(format!("gather_rows: index {i} out of {n}")));
            }
            data.push(t.data()[r * n + i]);
        }
        Ok(self.push(Tensor::vector(data), Op::GatherRows(a.0, idx.to_vec())))
    }

    /// Concatenate vectors end to end, or matrices column-wise.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(CoreError::Contract("concat of zero parts".into()));
        }
        let rank = self.value(parts[0]).rank();
        if rank == 1 {
            let mut data = Vec::new();
            for &p in parts {
                let t = self.value(p);
                if t.rank() != 1 {
                    return Err(CoreError::shape("concat", &[t.len()], t.shape()));
                }
                data.extend_from_slice(t.data());
            }
            Ok(self.push(Tensor::vector(data), Op::Concat(parts.iter().map(|p| p.0).collect())))
        } else {
            let rows = self.value(parts[0]).rows();
            let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
            for &p in parts {
                let t = self.value(p);
                if t.rank() != 2 || t.rows() != rows {
                    return Err(CoreError::shape("concat", &[rows, t.cols()], t.shape()));
                }
            }
            let mut data = vec![0.0; rows * total];
            for r in 0..rows {
                let mut off = 0;
                for &p in parts {
                    let t = self.value(p);
                    let c = t.cols();
                    data[r * total + off..r * total + off + c].copy_from_slice(t.row(r));
                    off += c;
                }
            }
            Ok(self.push(
                Tensor::matrix(rows, total, data).expect("sized"),
                Op::Concat(parts.iter().map(|p| p.0).collect()),
            ))
        }
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(a);
        if t.rank() != 2 || start + len > t.rows() {
            return Err(CoreError::Contract(format!(
                "slice_rows [{start}, {}) out of {:?}",
                start + len,
                t.shape()
            )));
        }
        let n = t.cols();
        let data = t.data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor::matrix(len, n, data).expect("sized"), Op::SliceRows(a.0, start, len)))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(a);
        if t.rank() != 2 || start + len > t.cols() {
            return Err(CoreError::Contract(format!(
                "slice_cols [{start}, {}) out of {:?}",
                start + len,
                t.shape()
            )));
        }
        let (m, n) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&t.data()[r * n + start..r * n + start + len]);
        }
        Ok(self.push(Tensor::matrix(m, len, data).expect("sized"), Op::SliceCols(a.0, start, len)))
    }

    /// Extract row `r` of a matrix as a vector.
    pub fn row(&mut self, a: NodeId, r: usize) -> Result<NodeId> {
        let t = self.value(a);
        if t.rank() != 2 || r >= t.rows() {
            return Err(CoreError::Contract(format!("row {r} out of {:?}", t.shape())));
        }
        let data = t.row(r).to_vec();
        Ok(self.push(Tensor::vector(data), Op::Row(a.0, r)))
    }

    /// Per-row matrix-vector product: row r of `w` holds a `(p, q)` matrix
    /// flattened row-major, applied to row r of `x`.
    pub fn row_matvec(&mut self, w: NodeId, x: NodeId, p: usize, q: usize) -> Result<NodeId> {
        let (wt, xt) = (self.value(w), self.value(x));
        if wt.rank() != 2 || wt.cols() != p * q {
            return Err(CoreError::shape("row_matvec weights", &[xt.rows(), p * q], wt.shape()));
        }
        if xt.rank() != 2 || xt.cols() != q || xt.rows() != wt.rows() {
            return Err(CoreError::shape("row_matvec input", &[wt.rows(), q], xt.shape()));
        }
        let m = xt.rows();
        let mut data = vec![0.0; m * p];
        for r in 0..m {
            let wrow = wt.row(r);
            let xrow = xt.row(r);
            for o in 0..p {
                data[r * p + o] = dot(&wrow[o * q..(o + 1) * q], xrow);
            }
        }
        Ok(self.push(Tensor::matrix(m, p, data).expect("sized"), Op::RowMatVec { w: w.0, x: x.0, p, q }))
    }

    pub fn stack_scalars(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut data = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.len() != 1 {
                return Err(CoreError::shape("stack_scalars", &[], t.shape()));
            }
            data.push(t.data()[0]);
        }
        Ok(self.push(Tensor::vector(data), Op::StackScalars(parts.iter().map(|p| p.0).collect())))
    }

    /// Scatter the rows of an `(m, d)` matrix into a flat vector of
    /// `n_slots·d` zeros at slot positions `slots[i]`; missing slots stay
    /// zero. Used to widen per-living-agent rows to fixed team width.
    pub fn flatten_pad(&mut self, a: NodeId, slots: &[usize], n_slots: usize) -> Result<NodeId> {
        let t = self.value(a);
        if t.rank() != 2 || t.rows() != slots.len() {
            return Err(CoreError::shape("flatten_pad", &[slots.len(), t.cols()], t.shape()));
        }
        let d = t.cols();
        let mut data = vec![0.0; n_slots * d];
        for (i, &s) in slots.iter().enumerate() {
            if s >= n_slots {
                return Err(CoreError::Contract(format!("flatten_pad: slot {s} out of {n_slots}")));
            }
            data[s * d..(s + 1) * d].copy_from_slice(t.row(i));
        }
        Ok(self.push(
            Tensor::vector(data),
            Op::FlattenPad { a: a.0, slots: slots.to_vec() },
        ))
    }

    /// Reshape to rank 1 (no data movement semantics).
    pub fn flatten(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).data().to_vec();
        self.push(Tensor::vector(data), Op::Flatten(a.0))
    }

    /// Minimum over all elements; gradient routes to the first argmin.
    pub fn min_reduce(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(CoreError::Contract("min_reduce of empty tensor".into()));
        }
        let m = t.data().iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(self.push(Tensor::scalar(m), Op::MinReduce(a.0)))
    }

    /// Maximum over all elements; gradient routes to the first argmax.
    pub fn max_reduce(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(CoreError::Contract("max_reduce of empty tensor".into()));
        }
        let m = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(self.push(Tensor::scalar(m), Op::MaxReduce(a.0)))
    }

    /// `a - s` with `s` a scalar node.
    pub fn sub_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if self.value(s).len() != 1 {
            return Err(CoreError::shape("sub_scalar", &[], self.value(s).shape()));
        }
        let sv = self.value(s).item();
        Ok(self.unary(a, |x| x - sv, Op::SubScalar(a.0, s.0)))
    }

    /// `a / s` with `s` a scalar node; errors on `s == 0`.
    pub fn div_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if self.value(s).len() != 1 {
            return Err(CoreError::shape("div_scalar", &[], self.value(s).shape()));
        }
        let sv = self.value(s).item();
        if sv == 0.0 {
            return Err(CoreError::Contract("div_scalar by zero".into()));
        }
        Ok(self.unary(a, |x| x / sv, Op::DivScalar(a.0, s.0)))
    }

    /// Reverse sweep from a scalar loss. Visits every node exactly once;
    /// nodes the loss does not reach keep a `None` adjoint. Gradients are
    /// returned, not applied — accumulate them into the store afterwards,
    /// so running backward twice and accumulating both doubles the stored
    /// gradient (the accumulation contract).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(CoreError::shape("backward loss", &[], lt.shape()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[loss.0] = Some(Tensor::from_vec(lt.shape(), vec![1.0]).expect("scalar"));

        for idx in (0..n).rev() {
            if grads[idx].is_none() {
                continue;
            }
            // Inputs always precede idx, so split to borrow the output
            // adjoint while mutating input adjoints.
            let (lo, hi) = grads.split_at_mut(idx);
            let gy = hi[0].as_ref().expect("checked above");
            let node = &self.nodes[idx];

            match &node.op {
                Op::Leaf { .. } => {}
                Op::Linear { x, w, b, scale } => {
                    let xt = self.nodes[*x].value.get();
                    let wt = self.nodes[*w].value.get();
                    let (m, in_dim) = (xt.rows(), xt.cols());
                    let out_dim = wt.shape()[0];
                    let gx = acc(&mut lo[*x], xt.shape());
                    mm_nn_acc(gx.data_mut(), gy.data(), wt.data(), m, out_dim, in_dim, *scale);
                    let gw = acc(&mut lo[*w], wt.shape());
                    mm_tn_acc(gw.data_mut(), gy.data(), xt.data(), m, out_dim, in_dim, *scale);
                    if let Some(bi) = b {
                        let gb = acc(&mut lo[*bi], &[out_dim]);
                        col_sum_acc(gb.data_mut(), gy.data(), m, out_dim, 1.0);
                    }
                }
                Op::Add(a, b) => {
                    let sh = gy.shape().to_vec();
                    let gyd: Vec<f64> = gy.data().to_vec();
                    for (d, s) in acc(&mut lo[*a], &sh).data_mut().iter_mut().zip(&gyd) {
                        *d += s;
                    }
                    for (d, s) in acc(&mut lo[*b], &sh).data_mut().iter_mut().zip(&gyd) {
                        *d += s;
                    }
                }
                Op::Sub(a, b) => {
                    let sh = gy.shape().to_vec();
                    let gyd: Vec<f64> = gy.data().to_vec();
                    for (d, s) in acc(&mut lo[*a], &sh).data_mut().iter_mut().zip(&gyd) {
                        *d += s;
                    }
                    for (d, s) in acc(&mut lo[*b], &sh).data_mut().iter_mut().zip(&gyd) {
                        *d -= s;
                    }
                }
                Op::Mul(a, b) => {
                    let sh = gy.shape().to_vec();
                    let gyd: Vec<f64> = gy.data().to_vec();
                    let bv: Vec<f64> = self.nodes[*b].value.get().data().to_vec();
                    let av: Vec<f64> = self.nodes[*a].value.get().data().to_vec();
                    {
                        let ga = acc(&mut lo[*a], &sh);
                        for i in 0..gyd.len() {
                            ga.data_mut()[i] += gyd[i] * bv[i];
                        }
                    }
                    let gb = acc(&mut lo[*b], &sh);
                    for i in 0..gyd.len() {
                        gb.data_mut()[i] += gyd[i] * av[i];
                    }
                }
                Op::Neg(a) => {
                    let ga = acc(&mut lo[*a], gy.shape());
                    for (d, s) in ga.data_mut().iter_mut().zip(gy.data()) {
                        *d -= s;
                    }
                }
                Op::Scale(a, c) => {
                    let ga = acc(&mut lo[*a], gy.shape());
                    for (d, s) in ga.data_mut().iter_mut().zip(gy.data()) {
                        *d += c * s;
                    }
                }
                Op::AddConst(a) | Op::Flatten(a) => {
                    let sh = self.nodes[*a].value.get().shape().to_vec();
                    let ga = acc(&mut lo[*a], &sh);
                    for (d, s) in ga.data_mut().iter_mut().zip(gy.data()) {
                        *d += s;
                    }
                }
                Op::Relu(a) => {
                    let xv = self.nodes[*a].value.get();
                    let ga = acc(&mut lo[*a], xv.shape());
                    for i in 0..xv.len() {
                        if xv.data()[i] > 0.0 {
                            ga.data_mut()[i] += gy.data()[i];
                        }
                    }
                }
                Op::Tanh(a) => {
                    let yv = node.value.get();
                    let ga = acc(&mut lo[*a], yv.shape());
                    for i in 0..yv.len() {
                        let y = yv.data()[i];
                        ga.data_mut()[i] += gy.data()[i] * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let yv = node.value.get();
                    let ga = acc(&mut lo[*a], yv.shape());
                    for i in 0..yv.len() {
                        let y = yv.data()[i];
                        ga.data_mut()[i] += gy.data()[i] * y * (1.0 - y);
                    }
                }
                Op::Softplus(a) => {
                    let xv = self.nodes[*a].value.get();
                    let ga = acc(&mut lo[*a], xv.shape());
                    for i in 0..xv.len() {
                        ga.data_mut()[i] += gy.data()[i] * stable_sigmoid(xv.data()[i]);
                    }
                }
                Op::Exp(a) => {
                    let yv = node.value.get();
                    let ga = acc(&mut lo[*a], yv.shape());
                    for i in 0..yv.len() {
                        ga.data_mut()[i] += gy.data()[i] * yv.data()[i];
                    }
                }
                Op::Ln(a) => {
                    let xv = self.nodes[*a].value.get();
                    let ga = acc(&mut lo[*a], xv.shape());
                    for i in 0..xv.len() {
                        ga.data_mut()[i] += gy.data()[i] / xv.data()[i];
                    }
                }
                Op::Sqrt(a) => {
                    let yv = node.value.get();
                    let ga = acc(&mut lo[*a], yv.shape());
                    for i in 0..yv.len() {
                        let y = yv.data()[i];
                        if y > 0.0 {
                            ga.data_mut()[i] += gy.data()[i] * 0.5 / y;
                        }
                    }
                }
                Op::Square(a) => {
                    let xv = self.nodes[*a].value.get();
                    let ga = acc(&mut lo[*a], xv.shape());
                    for i in 0..xv.len() {
                        ga.data_mut()[i] += gy.data()[i] * 2.0 * xv.data()[i];
                    }
                }
                Op::Sum(a) => {
                    let g = gy.item();
                    let sh = self.nodes[*a].value.get().shape().to_vec();
                    let ga = acc(&mut lo[*a], &sh);
                    for d in ga.data_mut() {
                        *d += g;
                    }
                }
                Op::Mean(a) => {
                    let sh = self.nodes[*a].value.get().shape().to_vec();
                    let n_el: usize = self.nodes[*a].value.get().len();
                    let g = gy.item() / n_el as f64;
                    let ga = acc(&mut lo[*a], &sh);
                    for d in ga.data_mut() {
                        *d += g;
                    }
                }
                Op::MinElem(a, b) => {
                    let av = self.nodes[*a].value.get().data().to_vec();
                    let bv = self.nodes[*b].value.get().data().to_vec();
                    let sh = gy.shape().to_vec();
                    let gyd: Vec<f64> = gy.data().to_vec();
                    {
                        let ga = acc(&mut lo[*a], &sh);
                        for i in 0..gyd.len() {
                            if av[i] <= bv[i] {
                                ga.data_mut()[i] += gyd[i];
                            }
                        }
                    }
                    let gb = acc(&mut lo[*b], &sh);
                    for i in 0..gyd.len() {
                        if av[i] > bv[i] {
                            gb.data_mut()[i] += gyd[i];
                        }
                    }
                }
                Op::Clamp(a, clo, chi) => {
                    let xv = self.nodes[*a].value.get();
                    let ga = acc(&mut lo[*a], xv.shape());
                    for i in 0..xv.len() {
                        let x = xv.data()[i];
                        if x > *clo && x < *chi {
                            ga.data_mut()[i] += gy.data()[i];
                        }
                    }
                }
                Op::LogSoftmaxRows(a) => {
                    let yv = node.value.get();
                    let (m, nc) = (yv.rows(), yv.cols());
                    let ga = acc(&mut lo[*a], yv.shape());
                    for r in 0..m {
                        let gsum: f64 = gy.row(r).iter().sum();
                        for c in 0..nc {
                            ga.data_mut()[r * nc + c] +=
                                gy.data()[r * nc + c] - yv.data()[r * nc + c].exp() * gsum;
                        }
                    }
                }
                Op::GatherRows(a, idx) => {
                    let sh = self.nodes[*a].value.get().shape().to_vec();
                    let nc = sh[1];
                    let ga = acc(&mut lo[*a], &sh);
                    for (r, &i) in idx.iter().enumerate() {
                        ga.data_mut()[r * nc + i] += gy.data()[r];
                    }
                }
                Op::Concat(parts) => {
                    if gy.rank() == 1 {
                        let mut off = 0;
                        let gyd: Vec<f64> = gy.data().to_vec();
                        for &p in parts {
                            let sh = self.nodes[p].value.get().shape().to_vec();
                            let len = self.nodes[p].value.get().len();
                            let gp = acc(&mut lo[p], &sh);
                            for i in 0..len {
                                gp.data_mut()[i] += gyd[off + i];
                            }
                            off += len;
                        }
                    } else {
                        let rows = gy.rows();
                        let total = gy.cols();
                        let gyd: Vec<f64> = gy.data().to_vec();
                        let mut off = 0;
                        for &p in parts {
                            let sh = self.nodes[p].value.get().shape().to_vec();
                            let c = sh[1];
                            let gp = acc(&mut lo[p], &sh);
                            for r in 0..rows {
                                for i in 0..c {
                                    gp.data_mut()[r * c + i] += gyd[r * total + off + i];
                                }
                            }
                            off += c;
                        }
                    }
                }
                Op::SliceRows(a, start, len) => {
                    let sh = self.nodes[*a].value.get().shape().to_vec();
                    let nc = sh[1];
                    let ga = acc(&mut lo[*a], &sh);
                    for r in 0..*len {
                        for c in 0..nc {
                            ga.data_mut()[(start + r) * nc + c] += gy.data()[r * nc + c];
                        }
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let sh = self.nodes[*a].value.get().shape().to_vec();
                    let nc = sh[1];
                    let m = sh[0];
                    let ga = acc(&mut lo[*a], &sh);
                    for r in 0..m {
                        for c in 0..*len {
                            ga.data_mut()[r * nc + start + c] += gy.data()[r * len + c];
                        }
                    }
                }
                Op::Row(a, r) => {
                    let sh = self.nodes[*a].value.get().shape().to_vec();
                    let nc = sh[1];
                    let ga = acc(&mut lo[*a], &sh);
                    for c in 0..nc {
                        ga.data_mut()[r * nc + c] += gy.data()[c];
                    }
                }
                Op::RowMatVec { w, x, p, q } => {
                    let wt = self.nodes[*w].value.get();
                    let xt = self.nodes[*x].value.get();
                    let m = xt.rows();
                    {
                        let gw = acc(&mut lo[*w], wt.shape());
                        for r in 0..m {
                            let xrow = xt.row(r);
                            for o in 0..*p {
                                let g = gy.data()[r * p + o];
                                let wrow = &mut gw.data_mut()[r * p * q + o * q..r * p * q + (o + 1) * q];
                                for i in 0..*q {
                                    wrow[i] += g * xrow[i];
                                }
                            }
                        }
                    }
                    let gx = acc(&mut lo[*x], xt.shape());
                    for r in 0..m {
                        let wrow = wt.row(r);
                        let grow = &mut gx.data_mut()[r * q..(r + 1) * q];
                        for o in 0..*p {
                            let g = gy.data()[r * p + o];
                            for i in 0..*q {
                                grow[i] += g * wrow[o * q + i];
                            }
                        }
                    }
                }
                Op::StackScalars(parts) => {
                    for (k, &p) in parts.iter().enumerate() {
                        let sh = self.nodes[p].value.get().shape().to_vec();
                        let g = gy.data()[k];
                        let gp = acc(&mut lo[p], &sh);
                        gp.data_mut()[0] += g;
                    }
                }
                Op::FlattenPad { a, slots } => {
                    let sh = self.nodes[*a].value.get().shape().to_vec();
                    let d = sh[1];
                    let ga = acc(&mut lo[*a], &sh);
                    for (i, &s) in slots.iter().enumerate() {
                        for j in 0..d {
                            ga.data_mut()[i * d + j] += gy.data()[s * d + j];
                        }
                    }
                }
                Op::MinReduce(a) => {
                    let xv = self.nodes[*a].value.get();
                    let y = node.value.get().item();
                    let pos = xv.data().iter().position(|&v| v == y).expect("min present");
                    let sh = xv.shape().to_vec();
                    let g = gy.item();
                    acc(&mut lo[*a], &sh).data_mut()[pos] += g;
                }
                Op::MaxReduce(a) => {
                    let xv = self.nodes[*a].value.get();
                    let y = node.value.get().item();
                    let pos = xv.data().iter().position(|&v| v == y).expect("max present");
                    let sh = xv.shape().to_vec();
                    let g = gy.item();
                    acc(&mut lo[*a], &sh).data_mut()[pos] += g;
                }
                Op::SubScalar(a, s) => {
                    let sh = self.nodes[*a].value.get().shape().to_vec();
                    let total: f64 = gy.data().iter().sum();
                    {
                        let ga = acc(&mut lo[*a], &sh);
                        for (d, g) in ga.data_mut().iter_mut().zip(gy.data()) {
                            *d += g;
                        }
                    }
                    acc(&mut lo[*s], &[]).data_mut()[0] -= total;
                }
                Op::DivScalar(a, s) => {
                    let sv = self.nodes[*s].value.get().item();
                    let yv: Vec<f64> = node.value.get().data().to_vec();
                    let sh = self.nodes[*a].value.get().shape().to_vec();
                    let mut s_acc = 0.0;
                    {
                        let ga = acc(&mut lo[*a], &sh);
                        for (i, (d, g)) in ga.data_mut().iter_mut().zip(gy.data()).enumerate() {
                            *d += g / sv;
                            s_acc += g * yv[i];
                        }
                    }
                    acc(&mut lo[*s], &[]).data_mut()[0] -= s_acc / sv;
                }
            }
        }

        let mut params = GradMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(name) } = &node.op {
                if let Some(g) = &grads[idx] {
                    params.accumulate(name, g);
                }
            }
        }
        Ok(Gradients { node: grads, params })
    }
}
