//! Define-by-run gradient tape.
//!
//! A [`Tape`] owns every value produced during one forward pass. Leaves
//! are registered with [`Tape::leaf`]; every op appends a node and returns
//! a [`Var`] handle. [`Tape::backward`] walks the nodes in reverse and
//! accumulates `d loss / d leaf` into each leaf that requires a gradient.
//! Build a fresh tape per minibatch.

use crate::tensor::gemm;
use crate::{NumError, Tensor};

/// Handle to a node on a [`Tape`].
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Elu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Log(Var),
    Exp(Var),
    Sqrt(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    SqDist(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Registers an input. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies the value of `v` into a new constant leaf (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of a leaf, or zeros of the leaf's shape if none arrived.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => {
                let val = &self.nodes[v.0].value;
                Tensor::zeros(val.rows(), val.cols())
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.0].value.map(f);
        self.push(value, op, &[a])
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (rows, cols) = broadcast_shape(name, va, vb)?;
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let ra = if va.rows() == 1 { 0 } else { r };
            let rb = if vb.rows() == 1 { 0 } else { r };
            for c in 0..cols {
                let ca = if va.cols() == 1 { 0 } else { c };
                let cb = if vb.cols() == 1 { 0 } else { c };
                data.push(f(va.get(ra, ca), vb.get(rb, cb)));
            }
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    /// Elementwise sum with broadcasting of size-1 dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { x.exp_m1() }, Op::Elu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var, NumError> {
        let v = &self.nodes[a.0].value;
        if let Some(&bad) = v.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(NumError::Domain { op: "log", value: bad });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    /// Square root; inputs must be non-negative. The derivative at 0 is
    /// reported as infinite, so keep inputs away from 0 if differentiating.
    pub fn sqrt(&mut self, a: Var) -> Result<Var, NumError> {
        let v = &self.nodes[a.0].value;
        if let Some(&bad) = v.data().iter().find(|&&x| !(x >= 0.0)) {
            return Err(NumError::Domain { op: "sqrt", value: bad });
        }
        Ok(self.unary(a, f64::sqrt, Op::Sqrt(a)))
    }

    /// Clamps into `[lo, hi]`; gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.nodes[a.0].value.sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let value = Tensor::scalar(v.sum() / v.len() as f64);
        self.push(value, Op::Mean(a), &[a])
    }

    /// Sums each row, giving an `n x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let data = (0..v.rows()).map(|r| v.row_slice(r).iter().sum()).collect();
        let value = Tensor::from_vec(v.rows(), 1, data).expect("rows > 0");
        self.push(value, Op::SumCols(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let values: Vec<&Tensor> = parts.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = Tensor::concat_cols(&values)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Gathers rows by index (duplicates allowed).
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumError> {
        let value = self.nodes[a.0].value.select_rows(idx)?;
        Ok(self.push(value, Op::SelectRows(a, idx.to_vec()), &[a]))
    }

    /// Pairwise squared Euclidean distances between the rows of `a`
    /// (`n x d`) and `b` (`m x d`), giving `n x m`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = sq_dist(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        Ok(self.push(value, Op::SqDist(a, b), &[a, b]))
    }

    /// Accumulates `d loss / d leaf` into every leaf that requires a
    /// gradient. Calling twice without [`Tape::zero_grad`] adds up.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumError> {
        let shape = self.nodes[loss.0].value.shape();
        if shape != [1, 1] {
            return Err(NumError::NotScalar { shape });
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => add_into(acc, &g),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn send(&self, grads: &mut [Option<Tensor>], to: Var, g: Tensor) {
        if !self.nodes[to.0].requires_grad {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => add_into(acc, &g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.send(grads, *a, reduce_to(g, va.rows(), va.cols()));
                self.send(grads, *b, reduce_to(g, vb.rows(), vb.cols()));
            }
            Op::Sub(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.send(grads, *a, reduce_to(g, va.rows(), va.cols()));
                let gb = reduce_to(g, vb.rows(), vb.cols()).map(|x| -x);
                self.send(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let ga = broadcast_product(g, vb);
                    self.send(grads, *a, reduce_to(&ga, va.rows(), va.cols()));
                }
                if self.requires_grad(*b) {
                    let gb = broadcast_product(g, va);
                    self.send(grads, *b, reduce_to(&gb, vb.rows(), vb.cols()));
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.requires_grad(*a) {
                    // dA = G · Bᵀ
                    let mut ga = Tensor::zeros(m, k);
                    gemm(m, n, k, g.data(), (n, 1), vb.data(), (1, n), ga.data_mut(), false);
                    self.send(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    // dB = Aᵀ · G
                    let mut gb = Tensor::zeros(k, n);
                    gemm(k, m, n, va.data(), (1, k), g.data(), (n, 1), gb.data_mut(), false);
                    self.send(grads, *b, gb);
                }
            }
            Op::Scale(a, c) => self.send(grads, *a, g.map(|x| c * x)),
            Op::AddScalar(a) => self.send(grads, *a, g.clone()),
            Op::Relu(a) => {
                let d = zip(g, self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                self.send(grads, *a, d);
            }
            Op::Elu(a) => {
                let d = zip(g, self.value(*a), |gi, x| if x > 0.0 { gi } else { gi * x.exp() });
                self.send(grads, *a, d);
            }
            Op::Sigmoid(a) => self.send(grads, *a, zip(g, out, |gi, y| gi * y * (1.0 - y))),
            Op::Softplus(a) => self.send(grads, *a, zip(g, self.value(*a), |gi, x| gi * sigmoid(x))),
            Op::Log(a) => self.send(grads, *a, zip(g, self.value(*a), |gi, x| gi / x)),
            Op::Exp(a) => self.send(grads, *a, zip(g, out, |gi, y| gi * y)),
            Op::Sqrt(a) => self.send(grads, *a, zip(g, out, |gi, y| gi * 0.5 / y)),
            Op::Square(a) => self.send(grads, *a, zip(g, self.value(*a), |gi, x| 2.0 * gi * x)),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = zip(g, self.value(*a), |gi, x| if x > lo && x < hi { gi } else { 0.0 });
                self.send(grads, *a, d);
            }
            Op::Sum(a) => {
                let va = self.value(*a);
                self.send(grads, *a, Tensor::filled(va.rows(), va.cols(), g.data()[0]));
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let c = g.data()[0] / va.len() as f64;
                self.send(grads, *a, Tensor::filled(va.rows(), va.cols(), c));
            }
            Op::SumCols(a) => {
                let va = self.value(*a);
                let mut d = Tensor::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    let gr = g.data()[r];
                    for c in 0..va.cols() {
                        d.set(r, c, gr);
                    }
                }
                self.send(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let vp = self.value(*p);
                    let w = vp.cols();
                    if self.requires_grad(*p) {
                        let mut d = Tensor::zeros(vp.rows(), w);
                        for r in 0..vp.rows() {
                            let src = &g.row_slice(r)[offset..offset + w];
                            d.data_mut()[r * w..(r + 1) * w].copy_from_slice(src);
                        }
                        self.send(grads, *p, d);
                    }
                    offset += w;
                }
            }
            Op::SelectRows(a, idx) => {
                let va = self.value(*a);
                let w = va.cols();
                let mut d = Tensor::zeros(va.rows(), w);
                for (k, &r) in idx.iter().enumerate() {
                    let src = g.row_slice(k);
                    for (dst, s) in d.data_mut()[r * w..(r + 1) * w].iter_mut().zip(src) {
                        *dst += s;
                    }
                }
                self.send(grads, *a, d);
            }
            Op::SqDist(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, m, d) = (va.rows(), vb.rows(), va.cols());
                if self.requires_grad(*a) {
                    // dA_i = 2 (rowsum(G)_i a_i - (G B)_i)
                    let mut ga = Tensor::zeros(n, d);
                    gemm(n, m, d, g.data(), (m, 1), vb.data(), (d, 1), ga.data_mut(), false);
                    for i in 0..n {
                        let rs: f64 = g.row_slice(i).iter().sum();
                        for c in 0..d {
                            let v = 2.0 * (rs * va.get(i, c) - ga.get(i, c));
                            ga.set(i, c, v);
                        }
                    }
                    self.send(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    // dB_j = 2 (colsum(G)_j b_j - (Gᵀ A)_j)
                    let mut gb = Tensor::zeros(m, d);
                    gemm(m, n, d, g.data(), (1, m), va.data(), (d, 1), gb.data_mut(), false);
                    let mut cs = vec![0.0; m];
                    for i in 0..n {
                        for (j, c) in cs.iter_mut().enumerate() {
                            *c += g.get(i, j);
                        }
                    }
                    for j in 0..m {
                        for c in 0..d {
                            let v = 2.0 * (cs[j] * vb.get(j, c) - gb.get(j, c));
                            gb.set(j, c, v);
                        }
                    }
                    self.send(grads, *b, gb);
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Pairwise squared distances between rows, clamped at 0 against rounding.
pub fn sq_dist(a: &Tensor, b: &Tensor) -> Result<Tensor, NumError> {
    if a.cols() != b.cols() {
        return Err(NumError::ShapeMismatch {
            op: "sq_dist",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (n, m, d) = (a.rows(), b.rows(), a.cols());
    let mut out = Tensor::zeros(n, m);
    // -2 A Bᵀ, then add the squared norms.
    gemm(n, d, m, a.data(), (d, 1), b.data(), (1, d), out.data_mut(), false);
    let na: Vec<f64> = (0..n).map(|i| a.row_slice(i).iter().map(|v| v * v).sum()).collect();
    let nb: Vec<f64> = (0..m).map(|j| b.row_slice(j).iter().map(|v| v * v).sum()).collect();
    for i in 0..n {
        for j in 0..m {
            let v = na[i] + nb[j] - 2.0 * out.get(i, j);
            out.set(i, j, v.max(0.0));
        }
    }
    Ok(out)
}

fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(usize, usize), NumError> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.rows(), b.rows()), dim(a.cols(), b.cols())) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(NumError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        }),
    }
}

/// `g * other` where `other` may be broadcast up to `g`'s shape.
fn broadcast_product(g: &Tensor, other: &Tensor) -> Tensor {
    let (rows, cols) = (g.rows(), g.cols());
    let mut out = Tensor::zeros(rows, cols);
    for r in 0..rows {
        let ro = if other.rows() == 1 { 0 } else { r };
        for c in 0..cols {
            let co = if other.cols() == 1 { 0 } else { c };
            out.set(r, c, g.get(r, c) * other.get(ro, co));
        }
    }
    out
}

/// Sums `g` down to `rows x cols` over broadcast dimensions.
fn reduce_to(g: &Tensor, rows: usize, cols: usize) -> Tensor {
    if g.rows() == rows && g.cols() == cols {
        return g.clone();
    }
    let mut out = Tensor::zeros(rows, cols);
    for r in 0..g.rows() {
        let ro = if rows == 1 { 0 } else { r };
        for c in 0..g.cols() {
            let co = if cols == 1 { 0 } else { c };
            let v = out.get(ro, co) + g.get(r, c);
            out.set(ro, co, v);
        }
    }
    out
}

fn zip(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::from_vec(g.rows(), g.cols(), data).expect("same shape")
}

fn add_into(acc: &mut Tensor, g: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn forward_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = tape.constant(t(&[vec![1.0], vec![1.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);

        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).item().unwrap(), 0.5);

        let m = tape.constant(Tensor::scalar(-3.0));
        let r = tape.relu(m);
        assert_eq!(tape.value(r).item().unwrap(), 0.0);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::row(vec![1.0, 2.0]).unwrap(), true);
        let sq = tape.square(w);
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(0.0), true);
        let s = tape.sigmoid(w);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap().item().unwrap(), 0.25);
    }

    #[test]
    fn backward_accumulates() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::row(vec![1.0, -2.0, 0.5]).unwrap(), true);
        let e = tape.exp(w);
        let loss = tape.mean(e);
        tape.backward(loss).unwrap();
        let once = tape.grad(w).unwrap().clone();
        tape.backward(loss).unwrap();
        let twice = tape.grad(w).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn non_scalar_backward_errors() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::row(vec![1.0, 2.0]).unwrap(), true);
        let sq = tape.square(w);
        assert!(matches!(tape.backward(sq), Err(NumError::NotScalar { .. })));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 2));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
        let c = tape.constant(Tensor::zeros(3, 3));
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn domain_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(vec![1.0, 0.0]).unwrap());
        assert!(matches!(tape.log(a), Err(NumError::Domain { .. })));
        let b = tape.constant(Tensor::scalar(-1.0));
        assert!(matches!(tape.sqrt(b), Err(NumError::Domain { .. })));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(3.0), true);
        let d = tape.detach(w);
        let p = tape.mul(w, d).unwrap();
        tape.backward(p).unwrap();
        assert_eq!(tape.grad(w).unwrap().item().unwrap(), 3.0);
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(4, 3));
        let b = tape.leaf(Tensor::row(vec![1.0, 2.0, 3.0]).unwrap(), true);
        let y = tape.add(x, b).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(b).unwrap().data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(0.0), true);
        let r = tape.relu(w);
        tape.backward(r).unwrap();
        assert_eq!(tape.grad(w).unwrap().item().unwrap(), 0.0);
    }
}
