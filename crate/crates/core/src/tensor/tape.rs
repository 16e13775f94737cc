use std::collections::HashMap;

use super::kernels::{matmul_into, matmul_nt_into, matmul_tn_into};
use super::{ParamId, ParamStore, Real, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Constant,
    Variable,
    Param,
    MatMul(Var, Var),
    Bmm(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize, len: usize },
    Relu(Var),
    Softmax(Var),
    Sum(Var),
    MeanAxis { src: Var, axis: usize },
    Gather { table: Var, ids: Vec<usize> },
    SegmentMean { src: Var, offsets: Vec<usize> },
    NormalizeRows { src: Var, inv_std: Vec<f64> },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records forward operations so that [`Tape::backward`] can replay them in
/// reverse. Parameter leaves borrow their values from a [`ParamStore`].
///
/// A tape is single-threaded; independent tapes can run on separate workers.
pub struct Tape<'p, T: Real = f32> {
    params: Option<&'p ParamStore<T>>,
    param_vars: HashMap<ParamId, Var>,
    nodes: Vec<Node<T>>,
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Splits a shape around `axis` into (outer, axis_len, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Tape<'p, T> {
    /// A tape without parameter storage; use [`Tape::variable`] for leaves
    /// that need gradients.
    pub fn new() -> Self {
        Tape {
            params: None,
            param_vars: HashMap::new(),
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Tape {
            params: Some(params),
            param_vars: HashMap::new(),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self
                .params
                .expect("parameter node on a tape without a store")
                .get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::ForeignVar)
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        if cfg!(debug_assertions) && inputs.iter().all(|&v| self.value(v).is_finite()) {
            debug_assert!(value.is_finite(), "non-finite output from finite inputs");
        }
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Owned leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Variable,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter. Repeated calls for the same id return
    /// the same node, so fan-out gradients accumulate in one place.
    ///
    /// Panics if the tape was created without a parameter store.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.params.expect("Tape::param requires Tape::with_params");
        assert!(id.0 < store.len(), "parameter id out of range");
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(mismatch("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_into(av.data(), bv.data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    /// Batched product `[B×m×k] · [B×k×n] → [B×m×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 3
            || bv.rank() != 3
            || av.shape()[0] != bv.shape()[0]
            || av.shape()[2] != bv.shape()[1]
        {
            return Err(mismatch("bmm", av.shape(), bv.shape()));
        }
        let (batch, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            matmul_into(
                &av.data()[bi * m * k..(bi + 1) * m * k],
                &bv.data()[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let t = Tensor::new(vec![batch, m, n], out)?;
        Ok(self.push(t, Op::Bmm(a, b), &[a, b]))
    }

    /// Swaps the last two axes (rank 2 or higher).
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = transpose_last2(self.value(a)).ok_or_else(|| mismatch("transpose", self.shape(a), &[]))?;
        Ok(self.push(t, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(op, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let c = T::from_f64(c);
        let t = self.value(a).map(|x| x * c);
        Ok(self.push(t, Op::Scale(a, c), &[a]))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let c = T::from_f64(c);
        let t = self.value(a).map(|x| x + c);
        Ok(self.push(t, Op::AddScalar(a), &[a]))
    }

    fn row_op(&self, op: &'static str, x: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.check(x)?;
        self.check(b)?;
        let (xv, bv) = (self.value(x), self.value(b));
        let n = bv.len();
        if bv.rank() != 1 || xv.rank() == 0 || *xv.shape().last().unwrap() != n {
            return Err(mismatch(op, xv.shape(), bv.shape()));
        }
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, bv.data()[i % n]))
            .collect();
        Tensor::new(xv.shape().to_vec(), data)
    }

    /// Adds the vector `b` to every row of `x` (last axis).
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let t = self.row_op("add_row", x, b, |v, w| v + w)?;
        Ok(self.push(t, Op::AddRow(x, b), &[x, b]))
    }

    /// Multiplies every row of `x` elementwise by the vector `g`.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let t = self.row_op("mul_row", x, g, |v, w| v * w)?;
        Ok(self.push(t, Op::MulRow(x, g), &[x, g]))
    }

    /// Concatenates along the last axis; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| mismatch("concat", &[], &[]))?;
        for &p in parts {
            self.check(p)?;
        }
        let lead = self.shape(first)[..self.shape(first).len().saturating_sub(1)].to_vec();
        if self.shape(first).is_empty() {
            return Err(mismatch("concat", &[], &[]));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(mismatch("concat", self.shape(first), s));
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Concat(parts.to_vec()), parts))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.check(a)?;
        let av = self.value(a);
        let width = match av.shape().last() {
            Some(&w) if start + len <= w => w,
            _ => return Err(mismatch("slice_last", av.shape(), &[start, len])),
        };
        let rows = av.len() / width.max(1);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&av.data()[r * width + start..r * width + start + len]);
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Slice { src: a, start, len }, &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        Ok(self.push(t, Op::Relu(a), &[a]))
    }

    /// `max(x, 0)` elementwise; the hinge in the margin loss.
    pub fn max_with_zero(&mut self, a: Var) -> Result<Var> {
        self.relu(a)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let av = self.value(a);
        let width = *av.shape().last().ok_or_else(|| mismatch("softmax", &[], &[]))?;
        let mut data = vec![T::zero(); av.len()];
        for (src, dst) in av.data().chunks(width.max(1)).zip(data.chunks_mut(width.max(1))) {
            let max = src.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.as_f64()));
            let exps: Vec<f64> = src.iter().map(|&v| (v.as_f64() - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (d, e) in dst.iter_mut().zip(exps) {
                *d = T::from_f64(e / total);
            }
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Softmax(a), &[a]))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s: f64 = self.value(a).data().iter().map(|v| v.as_f64()).sum();
        Ok(self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(a), &[a]))
    }

    /// Mean of all elements as a rank-0 tensor.
    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len().max(1);
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean along `axis`, removing that axis.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check(a)?;
        let av = self.value(a);
        if axis >= av.rank() || av.shape()[axis] == 0 {
            return Err(mismatch("mean", av.shape(), &[axis]));
        }
        let (outer, len, inner) = axis_extents(av.shape(), axis);
        let mut acc = vec![0f64; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                for i in 0..inner {
                    acc[o * inner + i] += av.data()[(o * len + k) * inner + i].as_f64();
                }
            }
        }
        let mut shape = av.shape().to_vec();
        shape.remove(axis);
        let data = acc.into_iter().map(|v| T::from_f64(v / len as f64)).collect();
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::MeanAxis { src: a, axis }, &[a]))
    }

    /// Rows of a rank-2 `table` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.check(table)?;
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(mismatch("gather_rows", tv.shape(), &[]));
        }
        let (n, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    bound: n,
                });
            }
            data.extend_from_slice(tv.row(i));
        }
        let t = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            t,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Embedding lookup: alias of [`Tape::gather_rows`].
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// Row means over consecutive segments of a rank-2 `src`. Segment `s`
    /// covers rows `offsets[s]..offsets[s + 1]`; an empty segment yields a
    /// zero row.
    pub fn segment_mean(&mut self, src: Var, offsets: &[usize]) -> Result<Var> {
        self.check(src)?;
        let sv = self.value(src);
        if sv.rank() != 2
            || offsets.is_empty()
            || offsets[0] != 0
            || *offsets.last().unwrap() != sv.shape()[0]
            || offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(mismatch("segment_mean", sv.shape(), offsets));
        }
        let d = sv.shape()[1];
        let segs = offsets.len() - 1;
        let mut data = vec![T::zero(); segs * d];
        let mut acc = vec![0f64; d];
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if lo == hi {
                continue;
            }
            acc.iter_mut().for_each(|v| *v = 0.0);
            for r in lo..hi {
                for (a, &v) in acc.iter_mut().zip(sv.row(r)) {
                    *a += v.as_f64();
                }
            }
            let c = (hi - lo) as f64;
            for (o, a) in data[s * d..(s + 1) * d].iter_mut().zip(&acc) {
                *o = T::from_f64(a / c);
            }
        }
        let t = Tensor::new(vec![segs, d], data)?;
        Ok(self.push(
            t,
            Op::SegmentMean {
                src,
                offsets: offsets.to_vec(),
            },
            &[src],
        ))
    }

    /// Standardizes each row (last axis) to zero mean and unit variance.
    pub fn normalize_rows(&mut self, src: Var, eps: f64) -> Result<Var> {
        self.check(src)?;
        let sv = self.value(src);
        let width = *sv.shape().last().ok_or_else(|| mismatch("normalize_rows", &[], &[]))?;
        if width == 0 {
            return Err(mismatch("normalize_rows", sv.shape(), &[]));
        }
        let mut data = vec![T::zero(); sv.len()];
        let mut inv_std = Vec::with_capacity(sv.len() / width);
        for (row, dst) in sv.data().chunks(width).zip(data.chunks_mut(width)) {
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / width as f64;
            let var = row
                .iter()
                .map(|v| (v.as_f64() - mean).powi(2))
                .sum::<f64>()
                / width as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = T::from_f64((v.as_f64() - mean) * inv);
            }
            inv_std.push(inv);
        }
        let t = Tensor::new(sv.shape().to_vec(), data)?;
        Ok(self.push(t, Op::NormalizeRows { src, inv_std }, &[src]))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (before, rest) = grads.split_at_mut(i);
            let Some(g) = rest[0].as_ref() else { continue };
            self.backward_node(i, g, before);
        }
        let params = self
            .param_vars
            .iter()
            .map(|(&id, &v)| (id, v))
            .collect::<Vec<_>>();
        Ok(Gradients { grads, params })
    }

    fn accum(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += *x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Constant | Op::Variable | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    matmul_nt_into(g.data(), bv.data(), &mut da, m, n, k);
                    self.accum(grads, *a, Tensor::new(vec![m, k], da).unwrap());
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    matmul_tn_into(av.data(), g.data(), &mut db, m, k, n);
                    self.accum(grads, *b, Tensor::new(vec![k, n], db).unwrap());
                }
            }
            Op::Bmm(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (batch, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                if self.wants(*a) {
                    let mut da = vec![T::zero(); batch * m * k];
                    for bi in 0..batch {
                        matmul_nt_into(
                            &g.data()[bi * m * n..(bi + 1) * m * n],
                            &bv.data()[bi * k * n..(bi + 1) * k * n],
                            &mut da[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.accum(grads, *a, Tensor::new(vec![batch, m, k], da).unwrap());
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); batch * k * n];
                    for bi in 0..batch {
                        matmul_tn_into(
                            &av.data()[bi * m * k..(bi + 1) * m * k],
                            &g.data()[bi * m * n..(bi + 1) * m * n],
                            &mut db[bi * k * n..(bi + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    self.accum(grads, *b, Tensor::new(vec![batch, k, n], db).unwrap());
                }
            }
            Op::Transpose(a) => {
                self.accum(grads, *a, transpose_last2(g).unwrap());
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                self.accum(grads, *a, g.clone().reshaped(&shape).unwrap());
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                if self.wants(*b) {
                    self.accum(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    self.accum(grads, *a, Tensor::new(g.shape().to_vec(), d).unwrap());
                }
                if self.wants(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    self.accum(grads, *b, Tensor::new(g.shape().to_vec(), d).unwrap());
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accum(grads, *a, g.map(|x| x * c));
            }
            Op::AddScalar(a) => {
                self.accum(grads, *a, g.clone());
            }
            Op::AddRow(x, b) => {
                self.accum(grads, *x, g.clone());
                if self.wants(*b) {
                    let n = self.value(*b).len();
                    let mut acc = vec![0f64; n];
                    for (j, v) in g.data().iter().enumerate() {
                        acc[j % n] += v.as_f64();
                    }
                    let d = acc.into_iter().map(T::from_f64).collect();
                    self.accum(grads, *b, Tensor::new(vec![n], d).unwrap());
                }
            }
            Op::MulRow(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let n = wv.len();
                if self.wants(*x) {
                    let d = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(j, &v)| v * wv.data()[j % n])
                        .collect();
                    self.accum(grads, *x, Tensor::new(g.shape().to_vec(), d).unwrap());
                }
                if self.wants(*w) {
                    let mut acc = vec![0f64; n];
                    for (j, (&gv, &xv)) in g.data().iter().zip(xv.data()).enumerate() {
                        acc[j % n] += gv.as_f64() * xv.as_f64();
                    }
                    let d = acc.into_iter().map(T::from_f64).collect();
                    self.accum(grads, *w, Tensor::new(vec![n], d).unwrap());
                }
            }
            Op::Concat(parts) => {
                let total = *g.shape().last().unwrap();
                let rows = g.len() / total.max(1);
                let mut start = 0;
                for &p in parts {
                    let shape = self.shape(p).to_vec();
                    let w = *shape.last().unwrap();
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + start..r * total + start + w]);
                        }
                        self.accum(grads, p, Tensor::new(shape, d).unwrap());
                    }
                    start += w;
                }
            }
            Op::Slice { src, start, len } => {
                let shape = self.shape(*src).to_vec();
                let width = *shape.last().unwrap();
                let mut d = Tensor::zeros(&shape);
                let rows = g.len() / (*len).max(1);
                for r in 0..rows {
                    d.data_mut()[r * width + start..r * width + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                self.accum(grads, *src, d);
            }
            Op::Relu(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accum(grads, *a, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Softmax(a) => {
                let width = *out.shape().last().unwrap();
                let mut d = vec![T::zero(); out.len()];
                for ((y, gv), dst) in out
                    .data()
                    .chunks(width)
                    .zip(g.data().chunks(width))
                    .zip(d.chunks_mut(width))
                {
                    let dot: f64 = y.iter().zip(gv).map(|(&a, &b)| a.as_f64() * b.as_f64()).sum();
                    for ((o, &yy), &gg) in dst.iter_mut().zip(y).zip(gv) {
                        *o = T::from_f64(yy.as_f64() * (gg.as_f64() - dot));
                    }
                }
                self.accum(grads, *a, Tensor::new(out.shape().to_vec(), d).unwrap());
            }
            Op::Sum(a) => {
                let shape = self.shape(*a).to_vec();
                self.accum(grads, *a, Tensor::filled(&shape, g.item()));
            }
            Op::MeanAxis { src, axis } => {
                let shape = self.shape(*src).to_vec();
                let (outer, len, inner) = axis_extents(&shape, *axis);
                let scale = 1.0 / len as f64;
                let mut d = Tensor::zeros(&shape);
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner {
                            d.data_mut()[(o * len + k) * inner + i] =
                                T::from_f64(g.data()[o * inner + i].as_f64() * scale);
                        }
                    }
                }
                self.accum(grads, *src, d);
            }
            Op::Gather { table, ids } => {
                let shape = self.shape(*table).to_vec();
                let dim = shape[1];
                let mut d = Tensor::zeros(&shape);
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut d.data_mut()[id * dim..(id + 1) * dim];
                    for (o, &v) in dst.iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.accum(grads, *table, d);
            }
            Op::SegmentMean { src, offsets } => {
                let shape = self.shape(*src).to_vec();
                let dim = shape[1];
                let mut d = Tensor::zeros(&shape);
                for s in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[s], offsets[s + 1]);
                    if lo == hi {
                        continue;
                    }
                    let inv = T::from_f64(1.0 / (hi - lo) as f64);
                    for r in lo..hi {
                        for (o, &v) in d.data_mut()[r * dim..(r + 1) * dim].iter_mut().zip(g.row(s)) {
                            *o = v * inv;
                        }
                    }
                }
                self.accum(grads, *src, d);
            }
            Op::NormalizeRows { src, inv_std } => {
                let width = *out.shape().last().unwrap();
                let mut d = vec![T::zero(); out.len()];
                for (((y, gv), dst), &inv) in out
                    .data()
                    .chunks(width)
                    .zip(g.data().chunks(width))
                    .zip(d.chunks_mut(width))
                    .zip(inv_std)
                {
                    let n = width as f64;
                    let g_mean = gv.iter().map(|v| v.as_f64()).sum::<f64>() / n;
                    let gy_mean = gv
                        .iter()
                        .zip(y)
                        .map(|(&a, &b)| a.as_f64() * b.as_f64())
                        .sum::<f64>()
                        / n;
                    for ((o, &yy), &gg) in dst.iter_mut().zip(y).zip(gv) {
                        *o = T::from_f64(inv * (gg.as_f64() - g_mean - yy.as_f64() * gy_mean));
                    }
                }
                self.accum(grads, *src, Tensor::new(out.shape().to_vec(), d).unwrap());
            }
        }
    }
}

fn transpose_last2<T: Real>(t: &Tensor<T>) -> Option<Tensor<T>> {
    let r = t.rank();
    if r < 2 {
        return None;
    }
    let (rows, cols) = (t.shape()[r - 2], t.shape()[r - 1]);
    let block = rows * cols;
    let batches = if block == 0 { 0 } else { t.len() / block };
    let mut data = vec![T::zero(); t.len()];
    for b in 0..batches {
        let src = &t.data()[b * block..(b + 1) * block];
        let dst = &mut data[b * block..(b + 1) * block];
        for i in 0..rows {
            for j in 0..cols {
                dst[j * rows + i] = src[i * cols + j];
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape.swap(r - 2, r - 1);
    Tensor::new(shape, data).ok()
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of any node that requires one; `None` for constants or nodes
    /// the loss does not depend on.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(pid, _)| *pid == id)
            .and_then(|(_, v)| self.get(*v))
    }

    /// Per-parameter gradients indexed by [`ParamId`], for a store of
    /// `num_params` entries.
    pub fn into_param_grads(mut self, num_params: usize) -> Vec<Option<Tensor<T>>> {
        let mut out: Vec<Option<Tensor<T>>> = (0..num_params).map(|_| None).collect();
        for (id, v) in &self.params {
            if id.0 < num_params {
                out[id.0] = self.grads[v.0].take();
            }
        }
        out
    }
}
