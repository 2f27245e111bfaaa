use crate::autodiff::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

/// Handle to a value recorded on a [`Tape`].
///
/// Only meaningful for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Ln(usize),
    Abs(usize),
    MaxScalar(usize, S),
    Clamp(usize, S, S),
    MulScalar(usize, S),
    AddScalar(usize, S),
    ConcatCols(usize, usize),
    SliceCols(usize, usize),
    TimeSlice(usize, usize),
    SelectRows(usize, Vec<usize>),
    MeanAxis(usize, usize),
    Sum(usize),
    Mean(usize),
    Dot(usize, usize),
    Reshape(usize),
}

#[derive(Debug, Clone)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Linear record of primitive operations for one forward pass.
///
/// Nodes are appended in evaluation order, so inputs always precede the
/// node that consumes them and a reverse sweep is a valid topological order.
#[derive(Debug, Clone, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Real> Gradients<S> {
    /// Gradient with respect to `var`; zeros when `var` does not reach the root.
    pub fn wrt(&self, var: Var) -> Tensor<S> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub(crate) fn take(&mut self, var: Var) -> Tensor<S> {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

fn accumulate<S: Real>(slot: &mut Option<Tensor<S>>, shape: &[usize], contribution: Vec<S>) {
    match slot {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(contribution) {
                *a = *a + b;
            }
        }
        None => *slot = Some(Tensor::from_parts(shape.to_vec(), contribution)),
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Input treated as a constant; backward does not propagate into it.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    pub fn scalar_constant(&mut self, v: S) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn push_raw(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor<S>,
        op: Op<S>,
        inputs: &[usize],
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op<S>,
        f: impl Fn(S, S) -> S,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(name, out, op, &[a.0, b.0])
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op<S>, f: impl Fn(S) -> S) -> Result<Var> {
        let out = self.value(a).map(f);
        self.push(name, out, op, &[a.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    /// Adds a length-`n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (r, c) = self.value(m).dims2();
        if self.value(row).len() != c {
            return Err(Error::shape(
                "add_row",
                format!(
                    "{:?} + row {:?}",
                    self.value(m).shape(),
                    self.value(row).shape()
                ),
            ));
        }
        let (tm, tr) = (self.value(m), self.value(row));
        let mut data = tm.data().to_vec();
        for i in 0..r {
            for (o, &b) in data[i * c..(i + 1) * c].iter_mut().zip(tr.data()) {
                *o = *o + b;
            }
        }
        let out = Tensor::from_parts(tm.shape().to_vec(), data);
        self.push("add_row", out, Op::AddRow(m.0, row.0), &[m.0, row.0])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = Tensor::from_parts(vec![m, n], matmul_raw(ta.data(), tb.data(), m, k, n));
        self.push("matmul", out, Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, Op::Sigmoid(a.0), |x| {
            // split on sign so exp never overflows
            if x >= S::zero() {
                S::one() / (S::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (S::one() + e)
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, Op::Tanh(a.0), |x| x.tanh())
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary("ln", a, Op::Ln(a.0), |x| x.ln())
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, Op::Abs(a.0), |x| x.abs())
    }

    /// Elementwise `max(x, c)`.
    pub fn max_scalar(&mut self, a: Var, c: S) -> Result<Var> {
        self.unary("max_scalar", a, Op::MaxScalar(a.0, c), |x| {
            if x > c {
                x
            } else {
                c
            }
        })
    }

    pub fn clamp(&mut self, a: Var, lo: S, hi: S) -> Result<Var> {
        self.unary("clamp", a, Op::Clamp(a.0, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn mul_scalar(&mut self, a: Var, c: S) -> Result<Var> {
        self.unary("mul_scalar", a, Op::MulScalar(a.0, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Result<Var> {
        self.unary("add_scalar", a, Op::AddScalar(a.0, c), |x| x + c)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.mul_scalar(a, -S::one())?;
        self.add_scalar(neg, S::one())
    }

    /// Joins two matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(Error::shape(
                "concat_cols",
                format!("{:?} | {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (r, ca, cb) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(&ta.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&tb.data()[i * cb..(i + 1) * cb]);
        }
        let out = Tensor::from_parts(vec![r, ca + cb], data);
        self.push("concat_cols", out, Op::ConcatCols(a.0, b.0), &[a.0, b.0])
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 || start >= end || end > ta.shape()[1] {
            return Err(Error::shape(
                "slice_cols",
                format!("{:?}[.., {start}..{end}]", ta.shape()),
            ));
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&ta.data()[i * c + start..i * c + end]);
        }
        let out = Tensor::from_parts(vec![r, w], data);
        self.push("slice_cols", out, Op::SliceCols(a.0, start), &[a.0])
    }

    /// Step `t` of a `B×T×D` batch, as a `B×D` matrix.
    pub fn time_slice(&mut self, a: Var, t: usize) -> Result<Var> {
        let ta = self.value(a);
        let [b, steps, d] = match *ta.shape() {
            [b, s, d] => [b, s, d],
            _ => {
                return Err(Error::shape(
                    "time_slice",
                    format!("expected 3-D, got {:?}", ta.shape()),
                ))
            }
        };
        if t >= steps {
            return Err(Error::shape("time_slice", format!("step {t} of {steps}")));
        }
        let mut data = Vec::with_capacity(b * d);
        for i in 0..b {
            let off = (i * steps + t) * d;
            data.extend_from_slice(&ta.data()[off..off + d]);
        }
        let out = Tensor::from_parts(vec![b, d], data);
        self.push("time_slice", out, Op::TimeSlice(a.0, t), &[a.0])
    }

    /// Gathers rows (leading-axis entries) by index.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let n = ta.shape()[0];
        if rows.is_empty() || rows.iter().any(|&r| r >= n) {
            return Err(Error::shape("select_rows", format!("rows {rows:?} of {n}")));
        }
        let width = ta.len() / n;
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            data.extend_from_slice(&ta.data()[r * width..(r + 1) * width]);
        }
        let mut shape = ta.shape().to_vec();
        shape[0] = rows.len();
        let out = Tensor::from_parts(shape, data);
        self.push(
            "select_rows",
            out,
            Op::SelectRows(a.0, rows.to_vec()),
            &[a.0],
        )
    }

    /// Mean of a matrix over `axis` (0: down columns, 1: across rows).
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 || axis > 1 {
            return Err(Error::shape(
                "mean_axis",
                format!("{:?} axis {axis}", ta.shape()),
            ));
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let out = if axis == 0 {
            let inv = S::one() / S::lit(r as f64);
            let mut acc = vec![S::zero(); c];
            for i in 0..r {
                for (o, &v) in acc.iter_mut().zip(&ta.data()[i * c..(i + 1) * c]) {
                    *o = *o + v;
                }
            }
            Tensor::from_parts(vec![c], acc.into_iter().map(|v| v * inv).collect())
        } else {
            let inv = S::one() / S::lit(c as f64);
            let data = (0..r)
                .map(|i| {
                    ta.data()[i * c..(i + 1) * c]
                        .iter()
                        .fold(S::zero(), |s, &v| s + v)
                        * inv
                })
                .collect();
            Tensor::from_parts(vec![r], data)
        };
        self.push("mean_axis", out, Op::MeanAxis(a.0, axis), &[a.0])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().fold(S::zero(), |s, &v| s + v);
        self.push("sum", Tensor::scalar(s), Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let s = ta.data().iter().fold(S::zero(), |s, &v| s + v) / S::lit(ta.len() as f64);
        self.push("mean", Tensor::scalar(s), Op::Mean(a.0), &[a.0])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(Error::shape(
                "dot",
                format!("{:?} . {:?}", ta.shape(), tb.shape()),
            ));
        }
        let s = ta
            .data()
            .iter()
            .zip(tb.data())
            .fold(S::zero(), |s, (&x, &y)| s + x * y);
        self.push("dot", Tensor::scalar(s), Op::Dot(a.0, b.0), &[a.0, b.0])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let out = Tensor::new(shape.to_vec(), ta.data().to_vec())
            .map_err(|_| Error::shape("reshape", format!("{:?} -> {shape:?}", ta.shape())))?;
        self.push("reshape", out, Op::Reshape(a.0), &[a.0])
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>> {
        let root_val = self.value(root);
        if !root_val.is_scalar() {
            return Err(Error::NonScalarRoot(root_val.shape().to_vec()));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::from_parts(
            root_val.shape().to_vec(),
            vec![S::one()],
        ));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let gd = g.data();
        let needs = |i: usize| self.nodes[i].requires_grad;
        let shape_of = |i: usize| self.nodes[i].value.shape().to_vec();
        let val = |i: usize| self.nodes[i].value.data();

        macro_rules! acc {
            ($i:expr, $contrib:expr) => {{
                let i = $i;
                if needs(i) {
                    let c: Vec<S> = $contrib;
                    accumulate(&mut grads[i], &shape_of(i), c);
                }
            }};
        }

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc!(*a, gd.to_vec());
                acc!(*b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                acc!(*a, gd.to_vec());
                acc!(*b, gd.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                acc!(*a, gd.iter().zip(val(*b)).map(|(&g, &y)| g * y).collect());
                acc!(*b, gd.iter().zip(val(*a)).map(|(&g, &x)| g * x).collect());
            }
            Op::AddRow(m, r) => {
                acc!(*m, gd.to_vec());
                acc!(*r, {
                    let c = self.nodes[*r].value.len();
                    let mut s = vec![S::zero(); c];
                    for row in gd.chunks(c) {
                        for (o, &v) in s.iter_mut().zip(row) {
                            *o = *o + v;
                        }
                    }
                    s
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = (shape_of(*a)[0], shape_of(*a)[1]);
                let n = shape_of(*b)[1];
                acc!(*a, matmul_nt(gd, val(*b), m, n, k));
                acc!(*b, matmul_tn(val(*a), gd, m, k, n));
            }
            Op::Sigmoid(a) => {
                acc!(
                    *a,
                    gd.iter()
                        .zip(out)
                        .map(|(&g, &y)| g * y * (S::one() - y))
                        .collect()
                );
            }
            Op::Tanh(a) => {
                acc!(
                    *a,
                    gd.iter()
                        .zip(out)
                        .map(|(&g, &y)| g * (S::one() - y * y))
                        .collect()
                );
            }
            Op::Ln(a) => {
                acc!(*a, gd.iter().zip(val(*a)).map(|(&g, &x)| g / x).collect());
            }
            Op::Abs(a) => {
                acc!(
                    *a,
                    gd.iter()
                        .zip(val(*a))
                        .map(|(&g, &x)| {
                            if x > S::zero() {
                                g
                            } else if x < S::zero() {
                                -g
                            } else {
                                S::zero()
                            }
                        })
                        .collect()
                );
            }
            Op::MaxScalar(a, c) => {
                acc!(
                    *a,
                    gd.iter()
                        .zip(val(*a))
                        .map(|(&g, &x)| if x > *c { g } else { S::zero() })
                        .collect()
                );
            }
            Op::Clamp(a, lo, hi) => {
                acc!(
                    *a,
                    gd.iter()
                        .zip(val(*a))
                        .map(|(&g, &x)| if x >= *lo && x <= *hi { g } else { S::zero() })
                        .collect()
                );
            }
            Op::MulScalar(a, c) => {
                acc!(*a, gd.iter().map(|&g| g * *c).collect());
            }
            Op::AddScalar(a, _) => {
                acc!(*a, gd.to_vec());
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (shape_of(*a)[1], shape_of(*b)[1]);
                let w = ca + cb;
                acc!(
                    *a,
                    gd.chunks(w).flat_map(|row| row[..ca].to_vec()).collect()
                );
                acc!(
                    *b,
                    gd.chunks(w).flat_map(|row| row[ca..].to_vec()).collect()
                );
            }
            Op::SliceCols(a, start) => {
                let (r, c) = (shape_of(*a)[0], shape_of(*a)[1]);
                let w = node.value.shape()[1];
                acc!(*a, {
                    let mut full = vec![S::zero(); r * c];
                    for i in 0..r {
                        full[i * c + start..i * c + start + w]
                            .copy_from_slice(&gd[i * w..(i + 1) * w]);
                    }
                    full
                });
            }
            Op::TimeSlice(a, t) => {
                let s = shape_of(*a);
                let (b, steps, d) = (s[0], s[1], s[2]);
                acc!(*a, {
                    let mut full = vec![S::zero(); b * steps * d];
                    for i in 0..b {
                        let off = (i * steps + t) * d;
                        full[off..off + d].copy_from_slice(&gd[i * d..(i + 1) * d]);
                    }
                    full
                });
            }
            Op::SelectRows(a, rows) => {
                let s = shape_of(*a);
                let total = self.nodes[*a].value.len();
                let width = total / s[0];
                acc!(*a, {
                    let mut full = vec![S::zero(); total];
                    for (k, &r) in rows.iter().enumerate() {
                        for (o, &v) in full[r * width..(r + 1) * width]
                            .iter_mut()
                            .zip(&gd[k * width..(k + 1) * width])
                        {
                            *o = *o + v;
                        }
                    }
                    full
                });
            }
            Op::MeanAxis(a, axis) => {
                let (r, c) = (shape_of(*a)[0], shape_of(*a)[1]);
                acc!(*a, {
                    let mut full = vec![S::zero(); r * c];
                    if *axis == 0 {
                        let inv = S::one() / S::lit(r as f64);
                        for i in 0..r {
                            for j in 0..c {
                                full[i * c + j] = gd[j] * inv;
                            }
                        }
                    } else {
                        let inv = S::one() / S::lit(c as f64);
                        for i in 0..r {
                            for j in 0..c {
                                full[i * c + j] = gd[i] * inv;
                            }
                        }
                    }
                    full
                });
            }
            Op::Sum(a) => {
                acc!(*a, vec![gd[0]; self.nodes[*a].value.len()]);
            }
            Op::Mean(a) => {
                let n = self.nodes[*a].value.len();
                acc!(*a, vec![gd[0] / S::lit(n as f64); n]);
            }
            Op::Dot(a, b) => {
                acc!(*a, val(*b).iter().map(|&y| gd[0] * y).collect());
                acc!(*b, val(*a).iter().map(|&x| gd[0] * x).collect());
            }
            Op::Reshape(a) => {
                acc!(*a, gd.to_vec());
            }
        }
    }
}
