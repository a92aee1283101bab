//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as it executes (define-by-run); a
//! [`Tensor`] is a cheap handle onto one recorded node. Calling
//! [`Tape::backward`] on a scalar result walks the recording once in
//! reverse and accumulates gradients for every node that needs them.
//!
//! The op set is deliberately small: elementwise arithmetic, matrix
//! products, the handful of nonlinearities the model uses, and two fused
//! ops (layer normalization and the zero-inflated zero-mass term) whose
//! composed forms are numerically fragile. Everything runs in `f64`.
//!
//! Tapes are single-threaded by construction (`Rc<RefCell<..>>`); code
//! that wants parallelism builds an independent tape per work item.

pub mod check;
pub mod special;

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Recorded operation. Operands are node indices on the same tape.
#[derive(Debug, Clone)]
enum Op {
    /// Input node; gradient accumulates here if `requires_grad`.
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    /// Elementwise product.
    Mul(usize, usize),
    /// Elementwise quotient.
    Div(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    /// `1 − x`, kept as its own op so `log(1−x)` is exact at `x = 0`.
    OneMinus(usize),
    MatMul(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    LnGamma(usize),
    Abs(usize),
    Clamp(usize, f64, f64),
    /// Row-wise layer normalization with learned scale and shift.
    LayerNorm { x: usize, gamma: usize, beta: usize, eps: f64 },
    /// Reduce all entries to a 1x1 scalar.
    Sum(usize),
    /// Broadcast-add a 1xC row vector to every row.
    AddRowVec(usize, usize),
    /// Horizontal concatenation `[A | B]`.
    ConcatCols(usize, usize),
    /// Fused `log(π + (1−π)·pⁿ)`, the zero-inflated mass at a zero count.
    ZinbZeroMass { pi: usize, n: usize, p: usize },
}

struct Node {
    op: Op,
    value: Mat,
    requires_grad: bool,
}

/// One recording of a computation. Cloning shares the recording.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<Vec<Node>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one node on a tape. Cloning is cheap and refers to the same
/// node.
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    idx: usize,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Tensor(node {}, {r}x{c})", self.idx)
    }
}

/// Gradients produced by one backward pass, indexed by tensor.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `t` (zeros if the
    /// root does not depend on it).
    pub fn wrt(&self, t: &Tensor) -> Mat {
        match self.grads.get(t.idx).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = t.shape();
                Mat::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { inner: Rc::new(RefCell::new(Vec::new())) }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record an input that gradients should flow into.
    pub fn leaf(&self, value: Mat) -> Tensor {
        self.push(Op::Leaf, value, true)
    }

    /// Record an input treated as a constant (no gradient).
    pub fn constant(&self, value: Mat) -> Tensor {
        self.push(Op::Leaf, value, false)
    }

    /// Convenience: a 1x1 constant.
    pub fn scalar(&self, value: f64) -> Tensor {
        self.constant(Mat::from_vec(1, 1, vec![value]).expect("1x1"))
    }

    fn push(&self, op: Op, value: Mat, requires_grad: bool) -> Tensor {
        let mut nodes = self.inner.borrow_mut();
        nodes.push(Node { op, value, requires_grad });
        Tensor { tape: self.clone(), idx: nodes.len() - 1 }
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Reverse pass from a scalar (1x1) tensor recorded on this tape.
    pub fn backward(&self, root: &Tensor) -> Result<Gradients> {
        if !self.same_tape(&root.tape) {
            return Err(Error::StaleTape("backward root lives on a different tape"));
        }
        let nodes = self.inner.borrow();
        {
            let rv = &nodes[root.idx].value;
            if rv.shape() != (1, 1) {
                return Err(Error::Contract(format!(
                    "backward requires a scalar root, got {}",
                    rv.shape_str()
                )));
            }
        }
        let mut grads: Vec<Option<Mat>> = vec![None; nodes.len()];
        grads[root.idx] = Some(Mat::from_vec(1, 1, vec![1.0])?);

        for idx in (0..=root.idx).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[idx];
            if !node.requires_grad {
                // Restore for `wrt` queries on constants' consumers; no
                // parents to visit.
                grads[idx] = Some(g);
                continue;
            }
            match node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, &nodes, |_| g.clone());
                    accumulate(&mut grads, b, &nodes, |_| g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a, &nodes, |_| g.clone());
                    accumulate(&mut grads, b, &nodes, |_| g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a].value, &nodes[b].value);
                    accumulate(&mut grads, a, &nodes, |_| ew(&g, vb, |x, y| x * y));
                    accumulate(&mut grads, b, &nodes, |_| ew(&g, va, |x, y| x * y));
                }
                Op::Div(a, b) => {
                    let (va, vb) = (&nodes[a].value, &nodes[b].value);
                    accumulate(&mut grads, a, &nodes, |_| ew(&g, vb, |x, y| x / y));
                    accumulate(&mut grads, b, &nodes, |_| {
                        let mut out = g.clone();
                        for (o, (&x, &y)) in out
                            .as_mut_slice()
                            .iter_mut()
                            .zip(va.as_slice().iter().zip(vb.as_slice()))
                        {
                            *o *= -x / (y * y);
                        }
                        out
                    });
                }
                Op::AddScalar(a) => accumulate(&mut grads, a, &nodes, |_| g.clone()),
                Op::MulScalar(a, c) => {
                    accumulate(&mut grads, a, &nodes, |_| g.map(|v| v * c))
                }
                Op::OneMinus(a) => accumulate(&mut grads, a, &nodes, |_| g.map(|v| -v)),
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a].value, &nodes[b].value);
                    let ga = g.matmul(&vb.transpose())?;
                    let gb = va.transpose().matmul(&g)?;
                    accumulate(&mut grads, a, &nodes, |_| ga.clone());
                    accumulate(&mut grads, b, &nodes, |_| gb.clone());
                }
                Op::Relu(a) => {
                    let va = &nodes[a].value;
                    accumulate(&mut grads, a, &nodes, |_| {
                        ew(&g, va, |gv, x| if x > 0.0 { gv } else { 0.0 })
                    });
                }
                Op::Sigmoid(a) => {
                    let out = &node.value;
                    accumulate(&mut grads, a, &nodes, |_| {
                        ew(&g, out, |gv, s| gv * s * (1.0 - s))
                    });
                }
                Op::Softplus(a) => {
                    let va = &nodes[a].value;
                    accumulate(&mut grads, a, &nodes, |_| {
                        ew(&g, va, |gv, x| gv * stable_sigmoid(x))
                    });
                }
                Op::Exp(a) => {
                    let out = &node.value;
                    accumulate(&mut grads, a, &nodes, |_| ew(&g, out, |gv, e| gv * e));
                }
                Op::Log(a) => {
                    let va = &nodes[a].value;
                    accumulate(&mut grads, a, &nodes, |_| ew(&g, va, |gv, x| gv / x));
                }
                Op::LnGamma(a) => {
                    let va = &nodes[a].value;
                    accumulate(&mut grads, a, &nodes, |_| {
                        ew(&g, va, |gv, x| gv * special::digamma(x))
                    });
                }
                Op::Abs(a) => {
                    let va = &nodes[a].value;
                    accumulate(&mut grads, a, &nodes, |_| {
                        ew(&g, va, |gv, x| gv * if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
                    });
                }
                Op::Clamp(a, lo, hi) => {
                    let va = &nodes[a].value;
                    accumulate(&mut grads, a, &nodes, |_| {
                        ew(&g, va, |gv, x| if x >= lo && x <= hi { gv } else { 0.0 })
                    });
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let (gx, gg, gb) =
                        layer_norm_backward(&g, &nodes[x].value, &nodes[gamma].value, eps);
                    accumulate(&mut grads, x, &nodes, |_| gx.clone());
                    accumulate(&mut grads, gamma, &nodes, |_| gg.clone());
                    accumulate(&mut grads, beta, &nodes, |_| gb.clone());
                }
                Op::Sum(a) => {
                    let (r, c) = nodes[a].value.shape();
                    let gv = g.get(0, 0);
                    accumulate(&mut grads, a, &nodes, |_| Mat::full(r, c, gv));
                }
                Op::AddRowVec(a, b) => {
                    accumulate(&mut grads, a, &nodes, |_| g.clone());
                    let cols = g.cols();
                    accumulate(&mut grads, b, &nodes, |_| {
                        let mut gb = Mat::zeros(1, cols);
                        for r in 0..g.rows() {
                            for (o, &gv) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                                *o += gv;
                            }
                        }
                        gb
                    });
                }
                Op::ConcatCols(a, b) => {
                    let ca = nodes[a].value.cols();
                    let cb = nodes[b].value.cols();
                    accumulate(&mut grads, a, &nodes, |_| {
                        let mut ga = Mat::zeros(g.rows(), ca);
                        for r in 0..g.rows() {
                            ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        }
                        ga
                    });
                    accumulate(&mut grads, b, &nodes, |_| {
                        let mut gb = Mat::zeros(g.rows(), cb);
                        for r in 0..g.rows() {
                            gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                        }
                        gb
                    });
                }
                Op::ZinbZeroMass { pi, n, p } => {
                    let (gpi, gn, gp) = zinb_zero_mass_backward(
                        &g,
                        &nodes[pi].value,
                        &nodes[n].value,
                        &nodes[p].value,
                    );
                    accumulate(&mut grads, pi, &nodes, |_| gpi.clone());
                    accumulate(&mut grads, n, &nodes, |_| gn.clone());
                    accumulate(&mut grads, p, &nodes, |_| gp.clone());
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Add `make()` into the gradient slot for node `parent` (skipping
/// constants, whose gradients are never consumed).
fn accumulate(
    grads: &mut [Option<Mat>],
    parent: usize,
    nodes: &[Node],
    make: impl FnOnce(()) -> Mat,
) {
    if !nodes[parent].requires_grad {
        return;
    }
    let add = make(());
    match &mut grads[parent] {
        Some(existing) => {
            for (o, &v) in existing.as_mut_slice().iter_mut().zip(add.as_slice()) {
                *o += v;
            }
        }
        slot @ None => *slot = Some(add),
    }
}

/// Elementwise combine of two same-shape matrices.
fn ew(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    debug_assert_eq!(a.shape(), b.shape());
    let mut out = a.clone();
    for (o, &bv) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o = f(*o, bv);
    }
    out
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
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log(π + (1−π)pⁿ)` elementwise, with an exact fast path at π = 0 so the
/// value degenerates to the plain negative-binomial mass `n·ln p` bit for
/// bit.
fn zinb_zero_mass_forward(pi: &Mat, n: &Mat, p: &Mat) -> Mat {
    let mut out = pi.clone();
    for ((o, &nv), &pv) in out
        .as_mut_slice()
        .iter_mut()
        .zip(n.as_slice())
        .zip(p.as_slice())
    {
        let la = nv * pv.ln();
        *o = if *o <= 0.0 {
            la
        } else {
            log_add_exp(o.ln(), (1.0 - *o).ln() + la)
        };
    }
    out
}

fn zinb_zero_mass_backward(g: &Mat, pi: &Mat, n: &Mat, p: &Mat) -> (Mat, Mat, Mat) {
    let (r, c) = pi.shape();
    let mut gpi = Mat::zeros(r, c);
    let mut gn = Mat::zeros(r, c);
    let mut gp = Mat::zeros(r, c);
    for i in 0..r * c {
        let (piv, nv, pv, gv) = (
            pi.as_slice()[i],
            n.as_slice()[i],
            p.as_slice()[i],
            g.as_slice()[i],
        );
        let la = nv * pv.ln();
        let lz = if piv <= 0.0 {
            la
        } else {
            log_add_exp(piv.ln(), (1.0 - piv).ln() + la)
        };
        // With z = π + (1−π)pⁿ: ∂lz/∂π = (1 − pⁿ)/z, and the shared factor
        // r = (1−π)pⁿ/z drives ∂lz/∂n = r·ln p and ∂lz/∂p = r·n/p.
        let resp = ((1.0 - piv).ln() + la - lz).exp();
        gpi.as_mut_slice()[i] = gv * (-la.exp_m1()) * (-lz).exp();
        gn.as_mut_slice()[i] = gv * resp * pv.ln();
        gp.as_mut_slice()[i] = gv * resp * nv / pv;
    }
    (gpi, gn, gp)
}

/// `log(e^a + e^b)` without overflow; used by the fused zero-mass op
/// and by the scalar likelihood twins in the losses module.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn layer_norm_forward(x: &Mat, gamma: &Mat, beta: &Mat, eps: f64) -> Mat {
    let (r, c) = x.shape();
    let mut out = Mat::zeros(r, c);
    for i in 0..r {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv_s = 1.0 / (var + eps).sqrt();
        for j in 0..c {
            out.set(i, j, gamma.get(0, j) * (row[j] - mean) * inv_s + beta.get(0, j));
        }
    }
    out
}

fn layer_norm_backward(g: &Mat, x: &Mat, gamma: &Mat, eps: f64) -> (Mat, Mat, Mat) {
    let (r, c) = x.shape();
    let cf = c as f64;
    let mut gx = Mat::zeros(r, c);
    let mut ggamma = Mat::zeros(1, c);
    let mut gbeta = Mat::zeros(1, c);
    for i in 0..r {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / cf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cf;
        let inv_s = 1.0 / (var + eps).sqrt();
        let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv_s).collect();
        let gr = g.row(i);
        let dxhat: Vec<f64> = (0..c).map(|j| gr[j] * gamma.get(0, j)).collect();
        let m1 = dxhat.iter().sum::<f64>() / cf;
        let m2 = dxhat.iter().zip(&xhat).map(|(&d, &h)| d * h).sum::<f64>() / cf;
        for j in 0..c {
            ggamma.add_at(0, j, gr[j] * xhat[j]);
            gbeta.add_at(0, j, gr[j]);
            gx.set(i, j, (dxhat[j] - m1 - xhat[j] * m2) * inv_s);
        }
    }
    (gx, ggamma, gbeta)
}

impl Tensor {
    /// The tape this tensor is recorded on.
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn shape(&self) -> (usize, usize) {
        let nodes = self.tape.inner.borrow();
        nodes[self.idx].value.shape()
    }

    /// Copy of the node's value.
    pub fn value(&self) -> Mat {
        self.tape.inner.borrow()[self.idx].value.clone()
    }

    /// The value of a 1x1 tensor as a plain float.
    pub fn scalar_value(&self) -> Result<f64> {
        let nodes = self.tape.inner.borrow();
        let v = &nodes[self.idx].value;
        if v.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "expected a scalar tensor, got {}",
                v.shape_str()
            )));
        }
        Ok(v.get(0, 0))
    }

    fn binary_check(&self, rhs: &Tensor, op: &'static str) -> Result<()> {
        if !self.tape.same_tape(&rhs.tape) {
            return Err(Error::StaleTape("operands live on different tapes"));
        }
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls != rs {
            return Err(Error::Dimension {
                op,
                left: format!("{}x{}", ls.0, ls.1),
                right: format!("{}x{}", rs.0, rs.1),
            });
        }
        Ok(())
    }

    fn push_unary(&self, op: Op, value: Mat) -> Tensor {
        let requires = self.tape.inner.borrow()[self.idx].requires_grad;
        self.tape.push(op, value, requires)
    }

    fn push_binary(&self, rhs: &Tensor, op: Op, value: Mat) -> Tensor {
        let nodes = self.tape.inner.borrow();
        let requires = nodes[self.idx].requires_grad || nodes[rhs.idx].requires_grad;
        drop(nodes);
        self.tape.push(op, value, requires)
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_check(rhs, "add")?;
        let v = ew(&self.value(), &rhs.value(), |a, b| a + b);
        Ok(self.push_binary(rhs, Op::Add(self.idx, rhs.idx), v))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_check(rhs, "sub")?;
        let v = ew(&self.value(), &rhs.value(), |a, b| a - b);
        Ok(self.push_binary(rhs, Op::Sub(self.idx, rhs.idx), v))
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_check(rhs, "mul")?;
        let v = ew(&self.value(), &rhs.value(), |a, b| a * b);
        Ok(self.push_binary(rhs, Op::Mul(self.idx, rhs.idx), v))
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_check(rhs, "div")?;
        let rv = rhs.value();
        if let Some(i) = rv.as_slice().iter().position(|&v| v == 0.0) {
            return Err(Error::NumericDomain { op: "div", index: i, value: 0.0 });
        }
        let v = ew(&self.value(), &rv, |a, b| a / b);
        Ok(self.push_binary(rhs, Op::Div(self.idx, rhs.idx), v))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let v = self.value().map(|x| x + c);
        self.push_unary(Op::AddScalar(self.idx), v)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let v = self.value().map(|x| x * c);
        self.push_unary(Op::MulScalar(self.idx, c), v)
    }

    /// `1 − x`. Exact where `x` is exactly 0 or 1.
    pub fn one_minus(&self) -> Tensor {
        let v = self.value().map(|x| 1.0 - x);
        self.push_unary(Op::OneMinus(self.idx), v)
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if !self.tape.same_tape(&rhs.tape) {
            return Err(Error::StaleTape("operands live on different tapes"));
        }
        let v = self.value().matmul(&rhs.value())?;
        Ok(self.push_binary(rhs, Op::MatMul(self.idx, rhs.idx), v))
    }

    pub fn relu(&self) -> Tensor {
        let v = self.value().map(|x| x.max(0.0));
        self.push_unary(Op::Relu(self.idx), v)
    }

    pub fn sigmoid(&self) -> Tensor {
        let v = self.value().map(stable_sigmoid);
        self.push_unary(Op::Sigmoid(self.idx), v)
    }

    pub fn softplus(&self) -> Tensor {
        let v = self.value().map(stable_softplus);
        self.push_unary(Op::Softplus(self.idx), v)
    }

    pub fn exp(&self) -> Tensor {
        let v = self.value().map(f64::exp);
        self.push_unary(Op::Exp(self.idx), v)
    }

    pub fn log(&self) -> Result<Tensor> {
        let val = self.value();
        if let Some(i) = val.as_slice().iter().position(|&v| v <= 0.0) {
            return Err(Error::NumericDomain {
                op: "log",
                index: i,
                value: val.as_slice()[i],
            });
        }
        let v = val.map(f64::ln);
        Ok(self.push_unary(Op::Log(self.idx), v))
    }

    pub fn ln_gamma(&self) -> Result<Tensor> {
        let val = self.value();
        if let Some(i) = val.as_slice().iter().position(|&v| v <= 0.0) {
            return Err(Error::NumericDomain {
                op: "ln_gamma",
                index: i,
                value: val.as_slice()[i],
            });
        }
        let v = val.map(special::ln_gamma);
        Ok(self.push_unary(Op::LnGamma(self.idx), v))
    }

    pub fn abs(&self) -> Tensor {
        let v = self.value().map(f64::abs);
        self.push_unary(Op::Abs(self.idx), v)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let v = self.value().map(|x| x.clamp(lo, hi));
        self.push_unary(Op::Clamp(self.idx, lo, hi), v)
    }

    /// Row-wise layer normalization; `gamma` and `beta` are 1xC.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        if !self.tape.same_tape(&gamma.tape) || !self.tape.same_tape(&beta.tape) {
            return Err(Error::StaleTape("operands live on different tapes"));
        }
        let c = self.shape().1;
        for (t, name) in [(gamma, "layer_norm gamma"), (beta, "layer_norm beta")] {
            if t.shape() != (1, c) {
                return Err(Error::Dimension {
                    op: name,
                    left: format!("{}x{}", self.shape().0, c),
                    right: format!("{}x{}", t.shape().0, t.shape().1),
                });
            }
        }
        let v = layer_norm_forward(&self.value(), &gamma.value(), &beta.value(), eps);
        let nodes = self.tape.inner.borrow();
        let requires = nodes[self.idx].requires_grad
            || nodes[gamma.idx].requires_grad
            || nodes[beta.idx].requires_grad;
        drop(nodes);
        Ok(self.tape.push(
            Op::LayerNorm { x: self.idx, gamma: gamma.idx, beta: beta.idx, eps },
            v,
            requires,
        ))
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&self) -> Tensor {
        let v = Mat::from_vec(1, 1, vec![self.value().sum()]).expect("1x1");
        self.push_unary(Op::Sum(self.idx), v)
    }

    /// Broadcast-add a 1xC bias row to every row of `self`.
    pub fn add_row_vec(&self, bias: &Tensor) -> Result<Tensor> {
        if !self.tape.same_tape(&bias.tape) {
            return Err(Error::StaleTape("operands live on different tapes"));
        }
        let (r, c) = self.shape();
        if bias.shape() != (1, c) {
            return Err(Error::Dimension {
                op: "add_row_vec",
                left: format!("{r}x{c}"),
                right: format!("{}x{}", bias.shape().0, bias.shape().1),
            });
        }
        let bv = bias.value();
        let mut v = self.value();
        for i in 0..r {
            for (o, &b) in v.row_mut(i).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        Ok(self.push_binary(bias, Op::AddRowVec(self.idx, bias.idx), v))
    }

    /// `[self | rhs]` column concatenation; row counts must match.
    pub fn concat_cols(&self, rhs: &Tensor) -> Result<Tensor> {
        if !self.tape.same_tape(&rhs.tape) {
            return Err(Error::StaleTape("operands live on different tapes"));
        }
        let (ra, ca) = self.shape();
        let (rb, cb) = rhs.shape();
        if ra != rb {
            return Err(Error::Dimension {
                op: "concat_cols",
                left: format!("{ra}x{ca}"),
                right: format!("{rb}x{cb}"),
            });
        }
        let (va, vb) = (self.value(), rhs.value());
        let mut v = Mat::zeros(ra, ca + cb);
        for i in 0..ra {
            v.row_mut(i)[..ca].copy_from_slice(va.row(i));
            v.row_mut(i)[ca..].copy_from_slice(vb.row(i));
        }
        Ok(self.push_binary(rhs, Op::ConcatCols(self.idx, rhs.idx), v))
    }

    /// Fused `log(π + (1−π)pⁿ)` — the probability mass a zero-inflated
    /// negative binomial puts on a zero count, in log space.
    ///
    /// Requires `π ∈ [0, 1]`, `n > 0`, `p ∈ (0, 1)` elementwise. At `π = 0`
    /// the result is exactly `n·ln p`, matching the plain negative
    /// binomial.
    pub fn zinb_zero_mass(&self, n: &Tensor, p: &Tensor) -> Result<Tensor> {
        self.binary_check(n, "zinb_zero_mass")?;
        self.binary_check(p, "zinb_zero_mass")?;
        let (piv, nv, pv) = (self.value(), n.value(), p.value());
        for (i, &x) in piv.as_slice().iter().enumerate() {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::NumericDomain { op: "zinb_zero_mass(pi)", index: i, value: x });
            }
        }
        for (i, &x) in nv.as_slice().iter().enumerate() {
            if x <= 0.0 {
                return Err(Error::NumericDomain { op: "zinb_zero_mass(n)", index: i, value: x });
            }
        }
        for (i, &x) in pv.as_slice().iter().enumerate() {
            if x <= 0.0 || x >= 1.0 {
                return Err(Error::NumericDomain { op: "zinb_zero_mass(p)", index: i, value: x });
            }
        }
        let v = zinb_zero_mass_forward(&piv, &nv, &pv);
        let nodes = self.tape.inner.borrow();
        let requires = nodes[self.idx].requires_grad
            || nodes[n.idx].requires_grad
            || nodes[p.idx].requires_grad;
        drop(nodes);
        Ok(self.tape.push(
            Op::ZinbZeroMass { pi: self.idx, n: n.idx, p: p.idx },
            v,
            requires,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mat(rows: &[Vec<f64>]) -> Mat {
        Mat::from_rows(rows).unwrap()
    }

    #[test]
    fn forward_values_match_hand_computation() {
        let tape = Tape::new();
        let x = tape.leaf(mat(&[vec![0.0, 1.0, -2.0]]));
        assert_eq!(x.relu().value().as_slice(), &[0.0, 1.0, 0.0]);
        assert_abs_diff_eq!(x.sigmoid().value().as_slice()[1], 0.7310585786300049, epsilon = 1e-15);
        assert_abs_diff_eq!(
            x.softplus().value().as_slice()[0],
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        let g = tape.leaf(mat(&[vec![5.0]]));
        assert_abs_diff_eq!(g.ln_gamma().unwrap().value().get(0, 0), 24.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn matmul_forward_known() {
        let tape = Tape::new();
        let a = tape.leaf(mat(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = tape.leaf(mat(&[vec![1.0], vec![1.0]]));
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.value().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn backward_accumulates_shared_subexpressions() {
        // y = sum(x + x): dy/dx = 2 everywhere.
        let tape = Tape::new();
        let x = tape.leaf(mat(&[vec![1.0, -2.0], vec![0.5, 3.0]]));
        let y = x.add(&x).unwrap().sum();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.wrt(&x).as_slice(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn square_via_self_multiplication_differentiates() {
        let tape = Tape::new();
        let x = tape.leaf(mat(&[vec![3.0]]));
        let y = x.mul(&x).unwrap().sum();
        let grads = tape.backward(&y).unwrap();
        assert_abs_diff_eq!(grads.wrt(&x).get(0, 0), 6.0);
    }

    #[test]
    fn constants_receive_no_gradient_and_block_flow() {
        let tape = Tape::new();
        let x = tape.leaf(mat(&[vec![2.0]]));
        let c = tape.constant(mat(&[vec![10.0]]));
        let y = x.mul(&c).unwrap().sum();
        let grads = tape.backward(&y).unwrap();
        assert_abs_diff_eq!(grads.wrt(&x).get(0, 0), 10.0);
        assert_eq!(grads.wrt(&c).as_slice(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let tape = Tape::new();
        let x = tape.leaf(mat(&[vec![1.0, 2.0]]));
        let err = tape.backward(&x).unwrap_err();
        assert!(err.to_string().contains("scalar"));
    }

    #[test]
    fn cross_tape_operands_are_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.leaf(mat(&[vec![1.0]]));
        let b = t2.leaf(mat(&[vec![1.0]]));
        assert!(matches!(a.add(&b), Err(Error::StaleTape(_))));
    }

    #[test]
    fn log_domain_error_names_offending_index() {
        let tape = Tape::new();
        let x = tape.leaf(mat(&[vec![1.0, -3.0]]));
        let err = x.log().unwrap_err();
        match err {
            Error::NumericDomain { op, index, value } => {
                assert_eq!(op, "log");
                assert_eq!(index, 1);
                assert_eq!(value, -3.0);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn dimension_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Mat::zeros(2, 3));
        let b = tape.leaf(Mat::zeros(3, 2));
        let msg = a.add(&b).unwrap_err().to_string();
        assert!(msg.contains("2x3") && msg.contains("3x2"), "got: {msg}");
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let tape = Tape::new();
        let x = tape.leaf(mat(&[vec![1.0, 2.0, 3.0, 4.0]]));
        let gamma = tape.leaf(mat(&[vec![1.0, 1.0, 1.0, 1.0]]));
        let beta = tape.leaf(mat(&[vec![0.0, 0.0, 0.0, 0.0]]));
        let y = x.layer_norm(&gamma, &beta, 1e-5).unwrap();
        let v = y.value();
        let mean: f64 = v.as_slice().iter().sum::<f64>() / 4.0;
        let var: f64 = v.as_slice().iter().map(|&u| (u - mean) * (u - mean)).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn zinb_zero_mass_at_pi_zero_is_exactly_nb() {
        let tape = Tape::new();
        let pi = tape.leaf(mat(&[vec![0.0, 0.0]]));
        let n = tape.leaf(mat(&[vec![2.0, 0.5]]));
        let p = tape.leaf(mat(&[vec![0.3, 0.9]]));
        let v = pi.zinb_zero_mass(&n, &p).unwrap().value();
        // Exactly n·ln p, bit for bit.
        assert_eq!(v.as_slice()[0], 2.0 * 0.3_f64.ln());
        assert_eq!(v.as_slice()[1], 0.5 * 0.9_f64.ln());
    }

    #[test]
    fn zinb_zero_mass_matches_direct_formula() {
        let tape = Tape::new();
        let pi = tape.leaf(mat(&[vec![0.3]]));
        let n = tape.leaf(mat(&[vec![2.0]]));
        let p = tape.leaf(mat(&[vec![0.5]]));
        let v = pi.zinb_zero_mass(&n, &p).unwrap().value().get(0, 0);
        assert_abs_diff_eq!(v, (0.3 + 0.7 * 0.25_f64).ln(), epsilon = 1e-14);
    }

    #[test]
    fn concat_cols_splits_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(mat(&[vec![1.0], vec![2.0]]));
        let b = tape.leaf(mat(&[vec![3.0, 4.0], vec![5.0, 6.0]]));
        let w = tape.constant(mat(&[vec![1.0, 10.0, 100.0], vec![1.0, 10.0, 100.0]]));
        let y = a.concat_cols(&b).unwrap().mul(&w).unwrap().sum();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.wrt(&a).as_slice(), &[1.0, 1.0]);
        assert_eq!(grads.wrt(&b).as_slice(), &[10.0, 100.0, 10.0, 100.0]);
    }
}
