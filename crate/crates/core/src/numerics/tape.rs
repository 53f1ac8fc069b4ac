//! Tensor-level reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value. `backward` walks
//! the nodes in exact reverse order of recording and accumulates gradients
//! additively, writing parameter gradients into a [`ParamStore`].

use std::collections::HashMap;
use std::sync::Arc;

use super::segment::{segment_reduce, Reduce};
use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside the tape.
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    /// Gradients with respect to each input, given the output gradient.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>>;
}

enum Op<T: Scalar> {
    Constant,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    Segment {
        input: Var,
        segment_of: Arc<[usize]>,
        mode: Reduce,
        counts: Vec<usize>,
        argmax: Option<Vec<usize>>,
    },
    MaxOf(Vec<Var>, Vec<u32>),
    MeanRows(Var),
    SumAll(Var),
    MeanAll(Var),
    Reshape(Var),
    Custom(Vec<Var>, Box<dyn CustomOp<T>>),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Ordered record of executed operations.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Records parameter `name`; repeated requests return the same handle.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.get(name)?.clone();
        let v = self.push(value, Op::Param(name.to_owned()));
        self.params.insert(name.to_owned(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape(), data).expect("shapes checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `x[R×C] + bias[C]`, bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2();
        let b = self.value(bias);
        if b.len() != c {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: self.value(x).shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut out = self.value(x).clone();
        let bias_data = b.data();
        for i in 0..r {
            for (o, &bv) in out.row_mut(i).iter_mut().zip(bias_data) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * slope });
        self.push(out, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_cols(&refs)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let out = self.value(x).gather_rows(&index)?;
        Ok(self.push(out, Op::GatherRows(x, index)))
    }

    pub fn segment_reduce(
        &mut self,
        x: Var,
        segment_of: Arc<[usize]>,
        n_segments: usize,
        mode: Reduce,
    ) -> Result<Var> {
        let out = segment_reduce(self.value(x), &segment_of, n_segments, mode)?;
        Ok(self.push(
            out.values,
            Op::Segment {
                input: x,
                segment_of,
                mode,
                counts: out.counts,
                argmax: out.argmax,
            },
        ))
    }

    /// Element-wise maximum over same-shaped tensors; ties resolve to the earliest input.
    pub fn max_of(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("max_of needs at least one input"))?;
        let mut out = self.value(first).clone();
        let mut arg = vec![0u32; out.len()];
        for (k, &p) in parts.iter().enumerate().skip(1) {
            self.same_shape("max_of", first, p)?;
            for ((o, a), &v) in out
                .data_mut()
                .iter_mut()
                .zip(arg.iter_mut())
                .zip(self.nodes[p.0].value.data())
            {
                if v > *o {
                    *o = v;
                    *a = k as u32;
                }
            }
        }
        Ok(self.push(out, Op::MaxOf(parts.to_vec(), arg)))
    }

    /// Column means, `[R×C] -> [1×C]`. Each column is summed in ascending
    /// value order, so the result does not depend on the row order.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (r, c) = t.dims2();
        let inv = T::one() / T::from_f64(r.max(1) as f64);
        let mut column = Vec::with_capacity(r);
        let out = (0..c)
            .map(|j| {
                column.clear();
                column.extend((0..r).map(|i| t.row(i)[j]));
                column.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                column.iter().fold(T::zero(), |acc, &v| acc + v) * inv
            })
            .collect();
        let out = Tensor::new(&[1, c], out).expect("shape");
        self.push(out, Op::MeanRows(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.sum() / T::from_f64(t.len().max(1) as f64);
        self.push(Tensor::scalar(m), Op::MeanAll(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn custom(&mut self, inputs: &[Var], op: Box<dyn CustomOp<T>>) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&refs)?;
        Ok(self.push(out, Op::Custom(inputs.to_vec(), op)))
    }

    /// Back-propagates from the scalar `loss`, adds parameter gradients into
    /// `store`, and clears the tape.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(name), Some(g)) = (&node.op, &grads[i]) {
                store.accumulate_grad(name, g)?;
            }
        }
        self.clear();
        Ok(())
    }

    /// Gradient of the scalar `loss` with respect to every recorded value.
    /// Entries are `None` where the loss does not depend on the value.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Tensor<T>>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = ta.dims2();
                    let n = tb.cols();
                    let mut ga = Tensor::zeros(ta.shape());
                    T::gemm(
                        m,
                        n,
                        k,
                        g.data(),
                        (n, 1),
                        tb.data(),
                        (1, n),
                        T::zero(),
                        ga.data_mut(),
                    );
                    let mut gb = Tensor::zeros(tb.shape());
                    T::gemm(
                        k,
                        m,
                        n,
                        ta.data(),
                        (1, k),
                        g.data(),
                        (n, 1),
                        T::zero(),
                        gb.data_mut(),
                    );
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = zip(&g, self.value(*b), |x, y| x * y);
                    let gb = zip(&g, self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(x, bias) => {
                    let (r, c) = g.dims2();
                    let mut gb = vec![T::zero(); c];
                    for row in 0..r {
                        for (o, &v) in gb.iter_mut().zip(g.row(row)) {
                            *o += v;
                        }
                    }
                    let gb = Tensor::new(self.value(*bias).shape(), gb)?;
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Scale(x, f) => {
                    let f = *f;
                    accumulate(&mut grads, *x, g.map(|v| v * f));
                }
                Op::LeakyRelu(x, slope) => {
                    let slope = *slope;
                    let gx = zip(&g, self.value(*x), |gv, xv| {
                        if xv > T::zero() {
                            gv
                        } else {
                            gv * slope
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = zip(&g, &node.value, |gv, s| gv * s * (T::one() - s));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Square(x) => {
                    let two = T::from_f64(2.0);
                    let gx = zip(&g, self.value(*x), |gv, xv| gv * two * xv);
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let shape = self.value(p).shape().to_vec();
                        let c = self.value(p).cols();
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[offset..offset + c]);
                        }
                        offset += c;
                        accumulate(&mut grads, p, Tensor::new(&shape, data)?);
                    }
                }
                Op::GatherRows(x, index) => {
                    let src = self.value(*x);
                    let c = src.cols();
                    let mut gx = Tensor::zeros(src.shape());
                    for (k, &row) in index.iter().enumerate() {
                        let dst = &mut gx.data_mut()[row * c..(row + 1) * c];
                        for (d, &v) in dst.iter_mut().zip(g.row(k)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Segment {
                    input,
                    segment_of,
                    mode,
                    counts,
                    argmax,
                } => {
                    let src = self.value(*input);
                    let d = src.cols();
                    let mut gx = Tensor::zeros(src.shape());
                    match mode {
                        Reduce::Sum | Reduce::Mean => {
                            for (row, &s) in segment_of.iter().enumerate() {
                                let scale = if *mode == Reduce::Mean {
                                    T::one() / T::from_f64(counts[s] as f64)
                                } else {
                                    T::one()
                                };
                                let gs = g.row(s);
                                for (o, &v) in gx.row_mut(row).iter_mut().zip(gs) {
                                    *o = v * scale;
                                }
                            }
                        }
                        Reduce::Max => {
                            let arg = argmax.as_ref().expect("max keeps argmax");
                            for (slot, &row) in arg.iter().enumerate() {
                                if row != usize::MAX {
                                    gx.data_mut()[row * d + slot % d] += g.data()[slot];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *input, gx);
                }
                Op::MaxOf(parts, arg) => {
                    let mut per: Vec<Option<Tensor<T>>> = parts.iter().map(|_| None).collect();
                    for (j, (&k, &gv)) in arg.iter().zip(g.data()).enumerate() {
                        let t = per[k as usize].get_or_insert_with(|| Tensor::zeros(g.shape()));
                        t.data_mut()[j] += gv;
                    }
                    for (p, t) in parts.iter().zip(per) {
                        if let Some(t) = t {
                            accumulate(&mut grads, *p, t);
                        }
                    }
                }
                Op::MeanRows(x) => {
                    let src = self.value(*x);
                    let r = src.rows();
                    let inv = T::one() / T::from_f64(r.max(1) as f64);
                    let mut gx = Tensor::zeros(src.shape());
                    for row in 0..r {
                        for (o, &v) in gx.row_mut(row).iter_mut().zip(g.data()) {
                            *o = v * inv;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumAll(x) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads, *x, Tensor::full(self.value(*x).shape(), gv));
                }
                Op::MeanAll(x) => {
                    let n = T::from_f64(self.value(*x).len().max(1) as f64);
                    let gv = g.data()[0] / n;
                    accumulate(&mut grads, *x, Tensor::full(self.value(*x).shape(), gv));
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, g.clone().reshape(&shape)?);
                }
                Op::Custom(inputs, op) => {
                    let refs: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                    let gin = op.backward(&refs, &node.value, &g)?;
                    if gin.len() != inputs.len() {
                        return Err(Error::contract(format!(
                            "custom op {} returned {} gradients for {} inputs",
                            op.name(),
                            gin.len(),
                            inputs.len()
                        )));
                    }
                    for (&v, t) in inputs.iter().zip(gin) {
                        accumulate(&mut grads, v, t);
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape(), data).expect("matching shapes")
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, &x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
