//! Reverse-mode automatic differentiation on a per-forward tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so a reverse sweep over the node list is a valid
//! topological order for backpropagation.

use super::tensor::{matmul_into, matmul_t_into, matmul_tn_acc, Tensor};
use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
    RowDot(Var, Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Min(Var, Var),
    Clamp(Var, f64, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every node that requires them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Row-wise log-softmax of a `[n, m]` buffer.
pub(crate) fn log_softmax_rows(data: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (row, o) in data.chunks(m).zip(out.chunks_mut(m)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        for (oi, x) in o.iter_mut().zip(row) {
            *oi = x - lse;
        }
    }
    out
}

impl Graph {
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

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; gradients are not propagated into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf (a parameter).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", av.shape(), bv.shape())));
        }
        let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; n * m];
        matmul_into(av.data(), bv.data(), &mut out, n, k, m);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for `a: [n, k]`, `b: [m, k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[1] {
            return Err(Error::Shape(format!("matmul_t {:?} x {:?}ᵀ", av.shape(), bv.shape())));
        }
        let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
        let mut out = vec![0.0; n * m];
        matmul_t_into(av.data(), bv.data(), &mut out, n, k, m);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMulT(a, b), rg))
    }

    /// Adds a bias vector `[m]` to every row of `a: [n, m]`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let m = av.cols();
        if bv.len() != m {
            return Err(Error::Shape(format!("add_row {:?} + {:?}", av.shape(), bv.shape())));
        }
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(m) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let t = Tensor::new(av.shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(t, Op::AddRow(a, bias), rg))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same(av, bv, "elementwise")?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Min(a, b), |x, y| if y < x { y } else { x })
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), relu)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the open interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum() / v.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Sums over the last axis: `[n, m] -> [n]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let data: Vec<f64> = v.data().chunks(v.cols()).map(|r| r.iter().sum()).collect();
        let t = Tensor::vector(data);
        let rg = self.rg(a);
        self.push(t, Op::SumCols(a), rg)
    }

    /// Row-wise log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let data = log_softmax_rows(v.data(), v.cols());
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::LogSoftmax(a), rg))
    }

    /// Selects `a[i, idx[i]]` for each row: `[n, m] -> [n]`.
    pub fn pick(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let v = self.value(a);
        let m = v.cols();
        if idx.len() != v.rows() || idx.iter().any(|&j| j >= m) {
            return Err(Error::Shape(format!("pick {} indices from {:?}", idx.len(), v.shape())));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| v.data()[i * m + j]).collect();
        let t = Tensor::vector(data);
        let rg = self.rg(a);
        Ok(self.push(t, Op::Pick(a, idx), rg))
    }

    /// Row-wise dot product: `[n, m] · [n, m] -> [n]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same(av, bv, "row_dot")?;
        let m = av.cols();
        let data = av
            .data()
            .chunks(m)
            .zip(bv.data().chunks(m))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::vector(data), Op::RowDot(a, b), rg))
    }

    /// `[n, p] ++ [n, q] -> [n, p + q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::Shape(format!("concat_cols {:?} ++ {:?}", av.shape(), bv.shape())));
        }
        let (n, p, q) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let t = Tensor::matrix(n, p + q, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::ConcatCols(a, b), rg))
    }

    /// Stacks `[n_i, m]` blocks along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat_rows of nothing".into()));
        };
        let m = self.value(first).cols();
        let mut data = Vec::new();
        let mut rg = false;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != m {
                return Err(Error::Shape(format!("concat_rows width {} vs {m}", v.cols())));
            }
            data.extend_from_slice(v.data());
            rg |= self.rg(p);
        }
        let n = data.len() / m;
        let t = Tensor::matrix(n, m, data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Selects rows `idx` of `a: [n, m]` (repetition allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let v = self.value(a);
        let (n, m) = (v.rows(), v.cols());
        if idx.is_empty() || idx.iter().any(|&i| i >= n) {
            return Err(Error::Shape(format!("gather_rows out of range for {:?}", v.shape())));
        }
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in &idx {
            data.extend_from_slice(v.row(i));
        }
        let t = Tensor::matrix(idx.len(), m, data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::GatherRows(a, idx), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Backpropagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!("loss must be scalar, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::NonFinite("backward pass".into()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        f(slot.as_mut().expect("initialised above").data_mut());
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                self.accumulate(grads, *a, |ga| {
                    // ga[n,k] += g[n,m] · bᵀ
                    for i in 0..n {
                        let g_row = &gd[i * m..(i + 1) * m];
                        for p in 0..k {
                            let b_row = &bv.data()[p * m..(p + 1) * m];
                            ga[i * k + p] += g_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| matmul_tn_acc(av.data(), gd, gb, n, k, m));
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
                // out[i,j] = Σ_p a[i,p] b[j,p]
                self.accumulate(grads, *a, |ga| {
                    for i in 0..n {
                        for j in 0..m {
                            let gij = gd[i * m + j];
                            for p in 0..k {
                                ga[i * k + p] += gij * bv.data()[j * k + p];
                            }
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..n {
                        for j in 0..m {
                            let gij = gd[i * m + j];
                            for p in 0..k {
                                gb[j * k + p] += gij * av.data()[i * k + p];
                            }
                        }
                    }
                });
            }
            Op::AddRow(a, bias) => {
                let m = out.cols();
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *bias, |gb| {
                    for row in gd.chunks(m) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *b, |gb| gb.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *b, |gb| gb.iter_mut().zip(gd).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gd[i] * bv[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += gd[i] * av[i];
                    }
                });
            }
            Op::Min(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        if !(bv[i] < av[i]) {
                            ga[i] += gd[i];
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        if bv[i] < av[i] {
                            gb[i] += gd[i];
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(gd).for_each(|(x, y)| *x += c * y));
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        if av[i] > 0.0 {
                            ga[i] += gd[i];
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let od = out.data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gd[i] * (1.0 - od[i] * od[i]);
                    }
                });
            }
            Op::Exp(a) => {
                let od = out.data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gd[i] * od[i];
                    }
                });
            }
            Op::Log(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gd[i] / av[i];
                    }
                });
            }
            Op::Square(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += 2.0 * av[i] * gd[i];
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        if av[i] > *lo && av[i] < *hi {
                            ga[i] += gd[i];
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let s = gd[0];
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += s));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let s = gd[0] / n;
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += s));
            }
            Op::SumCols(a) => {
                let m = self.value(*a).cols();
                self.accumulate(grads, *a, |ga| {
                    for (row, &gi) in ga.chunks_mut(m).zip(gd) {
                        row.iter_mut().for_each(|x| *x += gi);
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let m = out.cols();
                let od = out.data();
                self.accumulate(grads, *a, |ga| {
                    for ((ga_row, g_row), o_row) in ga.chunks_mut(m).zip(gd.chunks(m)).zip(od.chunks(m)) {
                        let gsum: f64 = g_row.iter().sum();
                        for j in 0..m {
                            ga_row[j] += g_row[j] - o_row[j].exp() * gsum;
                        }
                    }
                });
            }
            Op::Pick(a, idx) => {
                let m = self.value(*a).cols();
                self.accumulate(grads, *a, |ga| {
                    for (i, &j) in idx.iter().enumerate() {
                        ga[i * m + j] += gd[i];
                    }
                });
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let m = self.value(*a).cols();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gd[i / m] * bv[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += gd[i / m] * av[i];
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (p, q) = (self.value(*a).cols(), self.value(*b).cols());
                self.accumulate(grads, *a, |ga| {
                    for (i, row) in ga.chunks_mut(p).enumerate() {
                        row.iter_mut().zip(&gd[i * (p + q)..i * (p + q) + p]).for_each(|(x, y)| *x += y);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for (i, row) in gb.chunks_mut(q).enumerate() {
                        let start = i * (p + q) + p;
                        row.iter_mut().zip(&gd[start..start + q]).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(grads, p, |gp| {
                        gp.iter_mut().zip(&gd[offset..offset + len]).for_each(|(x, y)| *x += y)
                    });
                    offset += len;
                }
            }
            Op::GatherRows(a, idx) => {
                let m = self.value(*a).cols();
                self.accumulate(grads, *a, |ga| {
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..m {
                            ga[i * m + j] += gd[r * m + j];
                        }
                    }
                });
            }
        }
        Ok(())
    }
}
