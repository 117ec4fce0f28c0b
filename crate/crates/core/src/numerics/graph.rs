//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! pulled in from a [`ParamStore`] with [`Graph::param`]; calling
//! [`Graph::backward`] on a scalar result accumulates `∂loss/∂param` into the
//! store's gradient buffers. The tape is discarded after use.

use std::collections::HashMap;
use std::sync::Arc;

use super::attention::{attention_backward, attention_forward, check_attention_shapes, AttnDims};
use super::tensor::gemm;
use super::{AttentionMask, NumericsError, ParamStore, Scalar, Tensor};

const LN_EPS: f32 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Tanh(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Attention { q: Var, k: Var, v: Var, dims: AttnDims, probs: Vec<T> },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Gather { table: Var, idx: Vec<usize> },
    MeanRows(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Mse { x: Var, target: Tensor<T> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recorded computation for one forward pass.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<usize, Var>,
    empty_attention_rows: usize,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: String) -> NumericsError {
    NumericsError::Shape(msg)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new(), empty_attention_rows: 0 }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of attention rows so far that had no permitted key.
    pub fn empty_attention_rows(&self) -> usize {
        self.empty_attention_rows
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf from `f32` data, converted to the graph's element type.
    pub fn input(&mut self, t: &Tensor<f32>) -> Var {
        let t = t.cast();
        self.constant(t)
    }

    /// Copies the current value of `v` into a fresh leaf (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    /// Binds a named parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var, NumericsError> {
        let i = store.index_of(name)?;
        if let Some(&v) = self.params.get(&i) {
            return Ok(v);
        }
        let v = self.push(store.by_index(i).value.clone(), Op::Param(i));
        self.params.insert(i, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (n, k) = self.value(a).rows_cols();
        let bs = self.shape(b);
        if bs.len() != 2 || bs[0] != k {
            return Err(shape_err(format!("matmul [{n}x{k}] · {bs:?}")));
        }
        let m = bs[1];
        let mut out = vec![T::zero(); n * m];
        gemm(n, k, m, self.value(a).data(), false, self.value(b).data(), false, &mut out, T::zero());
        Ok(self.push(Tensor::new(&[n, m], out)?, Op::MatMul(a, b)))
    }

    /// `x · w (+ b)` with `w: [in × out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumericsError> {
        let (n, k) = self.value(x).rows_cols();
        let ws = self.shape(w);
        if ws.len() != 2 || ws[0] != k {
            return Err(shape_err(format!("linear input width {k} vs weight {ws:?}")));
        }
        let m = ws[1];
        let mut out = vec![T::zero(); n * m];
        let beta = if let Some(b) = b {
            let bv = self.value(b).data();
            if bv.len() != m {
                return Err(shape_err(format!("linear bias {} vs out {m}", bv.len())));
            }
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bv);
            }
            T::one()
        } else {
            T::zero()
        };
        gemm(n, k, m, self.value(x).data(), false, self.value(w).data(), false, &mut out, beta);
        Ok(self.push(Tensor::new(&[n, m], out)?, Op::Linear { x, w, b }))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, NumericsError> {
        self.value(a).check_same_shape(self.value(b), what)?;
        let av = self.value(a);
        let data = av.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape(), data)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a single row (`[d]` or `[1×d]`) to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NumericsError> {
        let (_, d) = self.value(x).rows_cols();
        let r = self.value(row).data();
        if r.len() != d {
            return Err(shape_err(format!("add_row: row of {} vs width {d}", r.len())));
        }
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(d) {
            chunk.iter_mut().zip(r).for_each(|(o, &b)| *o += b);
        }
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let s = T::from_f32(s);
        let t = self.value(x).map(|v| v * s);
        self.push(t, Op::Scale(x, s))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(gelu);
        self.push(t, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(T::tanh);
        self.push(t, Op::Tanh(x))
    }

    /// Per-row layer normalization with learned gain and bias of width `d`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let (n, d) = self.value(x).rows_cols();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        if g.len() != d || b.len() != d {
            return Err(shape_err(format!(
                "layer_norm width {d} vs gain {} bias {}",
                g.len(),
                b.len()
            )));
        }
        let xv = self.value(x);
        let inv_d = T::one() / T::from_f32(d as f32);
        let eps = T::from_f32(LN_EPS);
        let mut xhat = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * d];
        for i in 0..n {
            let row = &xv.data()[i * d..(i + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let r = T::one() / (var + eps).sqrt();
            rstd[i] = r;
            for c in 0..d {
                let h = (row[c] - mean) * r;
                xhat[i * d + c] = h;
                out[i * d + c] = h * g[c] + b[c];
            }
        }
        let t = Tensor::new(xv.shape(), out)?;
        Ok(self.push(t, Op::LayerNorm { x, gain, bias, xhat, rstd }))
    }

    /// Multi-head masked attention; see [`super::masked_attention`].
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: &Arc<AttentionMask>,
        heads: usize,
    ) -> Result<Var, NumericsError> {
        let dims =
            check_attention_shapes(self.value(q), self.value(k), self.value(v), mask, heads)?;
        let fwd = attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            mask,
            dims,
        );
        self.empty_attention_rows += fwd.empty_rows;
        let t = Tensor::new(&[dims.n, dims.d], fwd.out)?;
        Ok(self.push(t, Op::Attention { q, k, v, dims, probs: fwd.probs }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat of nothing".into()));
        };
        let (_, d) = self.value(first).rows_cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).rows_cols();
            if c != d {
                return Err(shape_err(format!("concat_rows width {c} vs {d}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(&[rows, d], data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (n, d) = self.value(x).rows_cols();
        if start + len > n {
            return Err(shape_err(format!("slice rows {start}..{} of {n}", start + len)));
        }
        let data = self.value(x).data()[start * d..(start + len) * d].to_vec();
        let t = Tensor::new(&[len, d], data)?;
        Ok(self.push(t, Op::SliceRows { x, start }))
    }

    /// Row lookup into an embedding table.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let (n, d) = self.value(table).rows_cols();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= n {
                return Err(shape_err(format!("gather index {i} out of {n} rows")));
            }
            data.extend_from_slice(self.value(table).row(i));
        }
        let t = Tensor::new(&[idx.len(), d], data)?;
        Ok(self.push(t, Op::Gather { table, idx: idx.to_vec() }))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (n, d) = self.value(x).rows_cols();
        let mut out = vec![T::zero(); d];
        for row in self.value(x).data().chunks(d) {
            out.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
        }
        let inv = T::one() / T::from_f32(n.max(1) as f32);
        out.iter_mut().for_each(|o| *o *= inv);
        let t = Tensor::new(&[1, d], out).expect("row");
        self.push(t, Op::MeanRows(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let s = self.value(x).mean();
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Mean of squared differences against a constant target.
    pub fn mse(&mut self, x: Var, target: &Tensor<T>) -> Result<Var, NumericsError> {
        self.value(x).check_same_shape(target, "mse")?;
        let xv = self.value(x);
        let s: T = xv.data().iter().zip(target.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let v = s / T::from_f32(xv.len().max(1) as f32);
        Ok(self.push(Tensor::scalar(v), Op::Mse { x, target: target.clone() }))
    }

    /// Runs reverse accumulation from a scalar `loss`, adding into `store` gradients.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<(), NumericsError> {
        if !self.value(loss).is_scalar() {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads, store)?;
        }
        Ok(())
    }

    fn backward_node(
        &self,
        i: usize,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        store: &mut ParamStore<T>,
    ) -> Result<(), NumericsError> {
        let one = T::one();
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Param(pi) => {
                let p = store.by_index_mut(*pi);
                if p.grad.len() != g.len() {
                    return Err(NumericsError::Contract(format!(
                        "parameter `{}` changed shape during the pass",
                        p.name
                    )));
                }
                add_into(p.grad.data_mut(), g);
            }
            Op::MatMul(a, b) => {
                let (n, k) = self.value(*a).rows_cols();
                let m = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.acc(grads, *a, |da| gemm(n, m, k, g, false, bv, true, da, one));
                self.acc(grads, *b, |db| gemm(k, n, m, av, true, g, false, db, one));
            }
            Op::Linear { x, w, b } => {
                let (n, k) = self.value(*x).rows_cols();
                let m = self.shape(*w)[1];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                self.acc(grads, *x, |dx| gemm(n, m, k, g, false, wv, true, dx, one));
                self.acc(grads, *w, |dw| gemm(k, n, m, xv, true, g, false, dw, one));
                if let Some(b) = b {
                    self.acc(grads, *b, |db| {
                        for row in g.chunks(m) {
                            add_into(db, row);
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |da| add_into(da, g));
                self.acc(grads, *b, |db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |da| add_into(da, g));
                self.acc(grads, *b, |db| db.iter_mut().zip(g).for_each(|(d, &v)| *d -= v));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.acc(grads, *a, |da| {
                    for ((d, &gv), &o) in da.iter_mut().zip(g).zip(bv) {
                        *d += gv * o;
                    }
                });
                self.acc(grads, *b, |db| {
                    for ((d, &gv), &o) in db.iter_mut().zip(g).zip(av) {
                        *d += gv * o;
                    }
                });
            }
            Op::AddRow(x, row) => {
                let d = self.value(*row).len();
                self.acc(grads, *x, |dx| add_into(dx, g));
                self.acc(grads, *row, |dr| {
                    for chunk in g.chunks(d) {
                        add_into(dr, chunk);
                    }
                });
            }
            Op::Scale(x, s) => {
                self.acc(grads, *x, |dx| dx.iter_mut().zip(g).for_each(|(d, &v)| *d += v * *s));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        *d += gv * gelu_grad(v);
                    }
                });
            }
            Op::Tanh(x) => {
                let yv = node.value.data();
                self.acc(grads, *x, |dx| {
                    for ((d, &gv), &y) in dx.iter_mut().zip(g).zip(yv) {
                        *d += gv * (one - y * y);
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = self.value(*gain).len();
                let gv = self.value(*gain).data();
                self.acc(grads, *gain, |dg| {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for c in 0..d {
                            dg[c] += grow[c] * hrow[c];
                        }
                    }
                });
                self.acc(grads, *bias, |db| {
                    for grow in g.chunks(d) {
                        add_into(db, grow);
                    }
                });
                let inv_d = one / T::from_f32(d as f32);
                self.acc(grads, *x, |dx| {
                    let mut dh = vec![T::zero(); d];
                    for (r, ((dxr, grow), hrow)) in
                        dx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate()
                    {
                        for c in 0..d {
                            dh[c] = grow[c] * gv[c];
                        }
                        let mean_dh = dh.iter().copied().sum::<T>() * inv_d;
                        let mean_dh_h =
                            dh.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                        for c in 0..d {
                            dxr[c] += rstd[r] * (dh[c] - mean_dh - hrow[c] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Attention { q, k, v, dims, probs } => {
                let (n, m, d) = (dims.n, dims.m, dims.d);
                let mut dq = vec![T::zero(); n * d];
                let mut dk = vec![T::zero(); m * d];
                let mut dv = vec![T::zero(); m * d];
                attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g,
                    *dims,
                    &mut dq,
                    &mut dk,
                    &mut dv,
                );
                self.acc(grads, *q, |t| add_into(t, &dq));
                self.acc(grads, *k, |t| add_into(t, &dk));
                self.acc(grads, *v, |t| add_into(t, &dv));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.acc(grads, p, |dp| add_into(dp, &g[off..off + len]));
                    off += len;
                }
            }
            Op::SliceRows { x, start } => {
                let (_, d) = self.value(*x).rows_cols();
                let off = start * d;
                self.acc(grads, *x, |dx| add_into(&mut dx[off..off + g.len()], g));
            }
            Op::Gather { table, idx } => {
                let (_, d) = self.value(*table).rows_cols();
                self.acc(grads, *table, |dt| {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut dt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::MeanRows(x) => {
                let (n, d) = self.value(*x).rows_cols();
                let inv = one / T::from_f32(n.max(1) as f32);
                self.acc(grads, *x, |dx| {
                    for chunk in dx.chunks_mut(d) {
                        chunk.iter_mut().zip(g).for_each(|(a, &b)| *a += b * inv);
                    }
                });
            }
            Op::Reshape(x) => self.acc(grads, *x, |dx| add_into(dx, g)),
            Op::Sum(x) => self.acc(grads, *x, |dx| dx.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let inv = g[0] / T::from_f32(self.value(*x).len().max(1) as f32);
                self.acc(grads, *x, |dx| dx.iter_mut().for_each(|d| *d += inv));
            }
            Op::Mse { x, target } => {
                let xv = self.value(*x).data();
                let c = T::from_f32(2.0) * g[0] / T::from_f32(xv.len().max(1) as f32);
                self.acc(grads, *x, |dx| {
                    for ((d, &a), &b) in dx.iter_mut().zip(xv).zip(target.data()) {
                        *d += c * (a - b);
                    }
                });
            }
        }
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        // Constants never need a gradient buffer.
        if matches!(self.nodes[v.0].op, Op::Leaf) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(slot);
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f32(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f32(0.5);
    let one = T::one();
    let t = (c * (x + a * x * x * x)).tanh();
    half * (one + t) + half * x * (one - t * t) * c * (one + T::from_f32(3.0) * a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut store = ParamStore::<f32>::new(0);
        store.insert("p", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let mut g = Graph::new();
        let p = g.param(&store, "p").unwrap();
        let loss = g.sum(p);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("p").unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        let mut store = ParamStore::<f32>::new(0);
        store.insert("p", Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let mut g = Graph::new();
        let p = g.param(&store, "p").unwrap();
        let sq = g.mul(p, p).unwrap();
        let loss = g.sum(sq);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("p").unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::<f32>::new(0);
        store.insert("p", Tensor::zeros(&[2]));
        let mut g = Graph::new();
        let p = g.param(&store, "p").unwrap();
        assert!(matches!(g.backward(p, &mut store), Err(NumericsError::Contract(_))));
    }

    #[test]
    fn param_binding_is_shared() {
        let mut store = ParamStore::<f32>::new(0);
        store.insert("p", Tensor::zeros(&[2]));
        let mut g = Graph::new();
        assert_eq!(g.param(&store, "p").unwrap(), g.param(&store, "p").unwrap());
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut store = ParamStore::<f32>::new(0);
        store.insert("p", Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let mut g = Graph::new();
        let p = g.param(&store, "p").unwrap();
        let d = g.detach(p);
        let prod = g.mul(p, d).unwrap();
        let loss = g.sum(prod);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("p").unwrap().data(), &[1.0, 2.0]);
    }
}
