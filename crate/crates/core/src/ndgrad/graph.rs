//! Define-by-run tape. A [`Graph`] is built fresh for every forward pass;
//! nodes are appended in creation order, which is a topological order.

use super::tensor::{matmul, matmul_at, matmul_bt, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of the graph that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Relu(Var),
    LogSoftmax(Var),
    Exp(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Gather(Var, Vec<usize>),
    SqDiff(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Config(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adds an input node. Trainable inputs accumulate gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::numeric("leaf contains non-finite values"));
        }
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of `v`, or zeros of its shape when none was accumulated.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// `x · w + b` with `x: n×d`, `w: d×k`, `b: k`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(shape_err("affine", xs, ws));
        }
        if bs != [ws[1]] {
            return Err(shape_err("affine bias", bs, ws));
        }
        let (n, d, k) = (xs[0], xs[1], ws[1]);
        let mut out = matmul(self.value(x).data(), self.value(w).data(), n, d, k);
        let bias = self.value(b).data();
        for row in out.chunks_mut(k.max(1)) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let value = Tensor::new(vec![n, k], out)?;
        Ok(self.push(value, Op::Affine { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(x);
        Ok(self.push(value, Op::Relu(x), rg))
    }

    /// Log-softmax over the last axis, stabilised by the row maximum.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() == 0 || xv.rank() > 2 {
            return Err(Error::config(format!(
                "log_softmax needs rank 1 or 2, got shape {:?}",
                xv.shape()
            )));
        }
        if !xv.all_finite() {
            return Err(Error::numeric("log_softmax input is not finite"));
        }
        let c = xv.cols();
        let mut out = xv.data().to_vec();
        if c > 0 {
            for row in out.chunks_mut(c) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                for v in row.iter_mut() {
                    *v -= lse;
                }
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::LogSoftmax(x), rg))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(f64::exp);
        let rg = self.rg(x);
        Ok(self.push(value, Op::Exp(x), rg))
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(shape_err(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `(a − b)²` elementwise.
    pub fn sq_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("sq_diff", a, b, |x, y| (x - y) * (x - y))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::SqDiff(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        if !c.is_finite() {
            return Err(Error::numeric("scale factor is not finite"));
        }
        let value = self.value(x).map(|v| c * v);
        let rg = self.rg(x);
        Ok(self.push(value, Op::Scale(x, c), rg))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    /// Mean of all entries, computed as sum / count.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::usage("mean of an empty tensor"));
        }
        let m = xv.data().iter().sum::<f64>() / xv.len() as f64;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), rg))
    }

    /// Row sums of an n × c matrix, giving a length-n vector.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::config(format!(
                "sum_rows needs a matrix, got shape {:?}",
                xv.shape()
            )));
        }
        let c = xv.cols();
        let n = xv.rows();
        let data: Vec<f64> = (0..n).map(|i| xv.data()[i * c..(i + 1) * c].iter().sum()).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::vector(data), Op::SumRows(x), rg))
    }

    /// Picks `x[i, idx[i]]` for every row.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || xv.rows() != idx.len() {
            return Err(shape_err("gather", xv.shape(), &[idx.len()]));
        }
        let c = xv.cols();
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(Error::config(format!("gather index {bad} out of range for {c} columns")));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| xv.data()[i * c + j]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::vector(data), Op::Gather(x, idx.to_vec()), rg))
    }

    /// Copy of `x` that blocks every gradient.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::Leaf, false)
    }

    /// Reverse sweep from a scalar root. Gradients accumulate into the
    /// trainable leaves until [`Graph::zero_grad`] is called.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        if !self.value(root).all_finite() {
            return Err(Error::numeric("backward from a non-finite root"));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {
                    let node = &mut self.nodes[i];
                    match &mut node.grad {
                        Some(t) => {
                            for (a, b) in t.data_mut().iter_mut().zip(&g) {
                                *a += b;
                            }
                        }
                        None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
                    }
                }
                Op::Affine { x, w, b } => {
                    let xs = self.value(x).shape().to_vec();
                    let (n, d, k) = (xs[0], xs[1], self.value(w).shape()[1]);
                    if self.rg(x) {
                        let dx = matmul_bt(&g, self.value(w).data(), n, d, k);
                        accumulate(&mut adj, x, dx);
                    }
                    if self.rg(w) {
                        let dw = matmul_at(self.value(x).data(), &g, n, d, k);
                        accumulate(&mut adj, w, dw);
                    }
                    if self.rg(b) {
                        let mut db = vec![0.0; k];
                        for row in g.chunks(k.max(1)) {
                            for (o, v) in db.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        accumulate(&mut adj, b, db);
                    }
                }
                Op::Relu(x) => {
                    let dx = g
                        .iter()
                        .zip(self.value(x).data())
                        .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, x, dx);
                }
                Op::LogSoftmax(x) => {
                    let out = self.nodes[i].value.data();
                    let c = self.nodes[i].value.cols().max(1);
                    let mut dx = vec![0.0; g.len()];
                    for ((drow, grow), orow) in dx.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let total: f64 = grow.iter().sum();
                        for ((d, gv), o) in drow.iter_mut().zip(grow).zip(orow) {
                            *d = gv - o.exp() * total;
                        }
                    }
                    accumulate(&mut adj, x, dx);
                }
                Op::Exp(x) => {
                    let out = self.nodes[i].value.data();
                    let dx = g.iter().zip(out).map(|(a, b)| a * b).collect();
                    accumulate(&mut adj, x, dx);
                }
                Op::Add(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut adj, a, g.clone());
                    }
                    if self.rg(b) {
                        accumulate(&mut adj, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut adj, a, g.clone());
                    }
                    if self.rg(b) {
                        accumulate(&mut adj, b, g.iter().map(|v| -v).collect());
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(a) {
                        let da = g.iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut adj, a, da);
                    }
                    if self.rg(b) {
                        let db = g.iter().zip(self.value(a).data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut adj, b, db);
                    }
                }
                Op::SqDiff(a, b) => {
                    let diff: Vec<f64> = self
                        .value(a)
                        .data()
                        .iter()
                        .zip(self.value(b).data())
                        .zip(&g)
                        .map(|((x, y), gv)| 2.0 * (x - y) * gv)
                        .collect();
                    if self.rg(a) {
                        accumulate(&mut adj, a, diff.clone());
                    }
                    if self.rg(b) {
                        accumulate(&mut adj, b, diff.iter().map(|v| -v).collect());
                    }
                }
                Op::Scale(x, c) => {
                    accumulate(&mut adj, x, g.iter().map(|v| c * v).collect());
                }
                Op::Sum(x) => {
                    let n = self.value(x).len();
                    accumulate(&mut adj, x, vec![g[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.value(x).len();
                    accumulate(&mut adj, x, vec![g[0] / n as f64; n]);
                }
                Op::SumRows(x) => {
                    let c = self.value(x).cols();
                    let mut dx = Vec::with_capacity(g.len() * c);
                    for gv in &g {
                        dx.extend(std::iter::repeat_n(*gv, c));
                    }
                    accumulate(&mut adj, x, dx);
                }
                Op::Gather(x, idx) => {
                    let c = self.value(x).cols();
                    let mut dx = vec![0.0; self.value(x).len()];
                    for (r, (&j, gv)) in idx.iter().zip(&g).enumerate() {
                        dx[r * c + j] += gv;
                    }
                    accumulate(&mut adj, x, dx);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(&contribution) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}
