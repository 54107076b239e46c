//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A `Tape` records every operation as it runs (define-by-run). Each node
//! stores its forward value plus a closure that maps the node's output
//! gradient to gradient contributions for its parents. `Tape::backward`
//! replays the record in reverse and accumulates gradients into every
//! reachable tensor that requires them.
//!
//! Tensors are rank-1 or rank-2 in practice (vectors and matrices); shapes
//! are stored generally. Broadcasting is limited to scalar operands and
//! leading-axis expansion of the right-hand side; anything else needs an
//! explicit reshape or transpose.

use std::cell::RefCell;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("invalid axis {axis} for shape {shape:?} in {op}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("index {id} out of range (size {size}) in {op}")]
    IndexOutOfRange {
        op: &'static str,
        id: usize,
        size: usize,
    },
    #[error("operands recorded on different tapes in {0}")]
    TapeMismatch(&'static str),
    #[error("backward already run on this tape (reset_backward to rerun)")]
    BackwardConsumed,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-deterministic function: {0}")]
    NonDeterministic(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Loss reduction for `cross_entropy`. `Sum` matches a plain summation
/// objective over target tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Gradient closure: maps the node's output gradient to per-parent
/// contributions. `need[i]` tells the closure whether parent `i` actually
/// requires a gradient, so frozen branches cost nothing.
type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    shape: Vec<usize>,
    data: Rc<[f64]>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

struct TapeInner {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Operation record shared by all tensors of one forward pass.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one node on a tape.
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    index: usize,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

// Raw matrix kernels. `a` is m×k, `b` is k×n, row-major.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

// aᵀ·b where a is m×k (so result is k×n), b is m×n.
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

// a·bᵀ where a is m×n, b is k×n (so result is m×k).
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (p, o) in orow.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            *o += s;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                backward_done: false,
            })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn push(
        &self,
        op: &'static str,
        shape: Vec<usize>,
        data: Rc<[f64]>,
        parents: Vec<usize>,
        back: Option<BackwardFn>,
    ) -> Result<Tensor> {
        check_finite(op, &data)?;
        let mut inner = self.inner.borrow_mut();
        let requires_grad = parents.iter().any(|&p| inner.nodes[p].requires_grad);
        inner.nodes.push(Node {
            shape,
            data,
            requires_grad,
            grad: None,
            parents,
            backward: if requires_grad { back } else { None },
        });
        Ok(Tensor {
            tape: self.clone(),
            index: inner.nodes.len() - 1,
        })
    }

    /// Record a leaf tensor, copying the data.
    pub fn tensor(&self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        self.leaf(Rc::from(data), shape, requires_grad)
    }

    /// Record a leaf tensor that shares an existing buffer (no copy).
    pub fn leaf(&self, data: Rc<[f64]>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(TensorError::Contract(format!(
                "shape {:?} does not cover {} elements",
                shape,
                data.len()
            )));
        }
        check_finite("leaf", &data)?;
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            shape: shape.to_vec(),
            data,
            requires_grad,
            grad: None,
            parents: Vec::new(),
            backward: None,
        });
        Ok(Tensor {
            tape: self.clone(),
            index: inner.nodes.len() - 1,
        })
    }

    pub fn scalar(&self, v: f64) -> Result<Tensor> {
        self.tensor(vec![v], &[1], false)
    }

    pub fn zeros(&self, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        self.tensor(vec![0.0; numel(shape)], shape, requires_grad)
    }

    /// Reverse pass from a scalar loss. Every tensor that requires a
    /// gradient and is reachable from the loss ends up with its gradient
    /// accumulated (summed over all paths).
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if !self.same_tape(&loss.tape) {
            return Err(TensorError::TapeMismatch("backward"));
        }
        let mut inner = self.inner.borrow_mut();
        if inner.backward_done {
            return Err(TensorError::BackwardConsumed);
        }
        if inner.nodes[loss.index].data.len() != 1 {
            return Err(TensorError::Contract(
                "backward requires a scalar loss".into(),
            ));
        }
        inner.backward_done = true;
        inner.nodes[loss.index].grad = Some(vec![1.0]);
        for i in (0..=loss.index).rev() {
            let (parents, contribs) = {
                let node = &inner.nodes[i];
                let Some(g) = node.grad.as_ref() else { continue };
                let Some(f) = node.backward.as_ref() else {
                    continue;
                };
                let need: Vec<bool> = node
                    .parents
                    .iter()
                    .map(|&p| inner.nodes[p].requires_grad)
                    .collect();
                (node.parents.clone(), f(g, &need))
            };
            for (&p, contrib) in parents.iter().zip(contribs) {
                let Some(c) = contrib else { continue };
                let pn = &mut inner.nodes[p];
                match pn.grad.as_mut() {
                    Some(buf) => {
                        for (b, v) in buf.iter_mut().zip(&c) {
                            *b += v;
                        }
                    }
                    None => pn.grad = Some(c),
                }
            }
        }
        Ok(())
    }

    /// Clear all gradients so the tape can run another backward pass.
    pub fn reset_backward(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.backward_done = false;
        for n in &mut inner.nodes {
            n.grad = None;
        }
    }
}

impl Tensor {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.index].shape.clone()
    }

    pub fn data(&self) -> Rc<[f64]> {
        Rc::clone(&self.tape.inner.borrow().nodes[self.index].data)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().to_vec()
    }

    pub fn len(&self) -> usize {
        self.tape.inner.borrow().nodes[self.index].data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.index].requires_grad
    }

    /// Gradient accumulated by the last backward pass, if any reached this
    /// tensor. Frozen or unreachable tensors report `None`.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.inner.borrow().nodes[self.index].grad.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.index];
        assert_eq!(node.data.len(), 1, "item() on non-scalar tensor");
        node.data[0]
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward(self)
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape();
        match s.len() {
            2 => Ok((s[0], s[1])),
            _ => Err(TensorError::ShapeMismatch {
                op,
                lhs: s,
                rhs: vec![],
            }),
        }
    }

    fn bin_prep(&self, rhs: &Tensor, op: &'static str) -> Result<()> {
        if !self.tape.same_tape(&rhs.tape) {
            return Err(TensorError::TapeMismatch(op));
        }
        Ok(())
    }

    /// Elementwise addition. The right-hand side may broadcast: a scalar,
    /// or a tensor whose shape (ignoring leading 1s) is a suffix of the
    /// left-hand shape.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.broadcast_bin(rhs, "add", |a, b| a + b, 1.0)
    }

    /// Elementwise subtraction with the same broadcast rule as `add`.
    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.broadcast_bin(rhs, "sub", |a, b| a - b, -1.0)
    }

    fn broadcast_bin(
        &self,
        rhs: &Tensor,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        rhs_sign: f64,
    ) -> Result<Tensor> {
        self.bin_prep(rhs, op)?;
        let ls = self.shape();
        let rs = rhs.shape();
        let a = self.data();
        let b = rhs.data();
        // strip leading 1s from rhs, require a suffix match
        let rs_eff: Vec<usize> = {
            let mut v = rs.clone();
            while v.len() > 1 && v[0] == 1 {
                v.remove(0);
            }
            if v == [1] {
                v.clear(); // scalar broadcast
            }
            v
        };
        let suffix_ok = rs_eff.len() <= ls.len() && ls[ls.len() - rs_eff.len()..] == rs_eff[..];
        if !suffix_ok {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: ls,
                rhs: rs,
            });
        }
        let span = numel(&rs_eff).max(1);
        let out: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(i, &av)| f(av, b[i % span]))
            .collect();
        let b_len = b.len();
        let a_len = a.len();
        let back: BackwardFn = Box::new(move |g, need| {
            let lg = need[0].then(|| g.to_vec());
            let rg = need[1].then(|| {
                let mut acc = vec![0.0; b_len];
                for (i, &gv) in g.iter().enumerate().take(a_len) {
                    acc[i % span] += rhs_sign * gv;
                }
                acc
            });
            vec![lg, rg]
        });
        self.tape.push(
            op,
            ls,
            Rc::from(out),
            vec![self.index, rhs.index],
            Some(back),
        )
    }

    /// Elementwise product. Shapes must match exactly, or the right-hand
    /// side is a single-element tensor broadcast over the left.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.bin_prep(rhs, "mul")?;
        let ls = self.shape();
        let rs = rhs.shape();
        let a = self.data();
        let b = rhs.data();
        let out: Vec<f64>;
        if a.len() == b.len() && ls == rs {
            out = a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect();
        } else if b.len() == 1 {
            let s = b[0];
            out = a.iter().map(|&x| x * s).collect();
        } else {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: ls,
                rhs: rs,
            });
        }
        let (ac, bc) = (Rc::clone(&a), Rc::clone(&b));
        let back: BackwardFn = Box::new(move |g, need| {
            let lg = need[0].then(|| {
                if bc.len() == 1 {
                    g.iter().map(|&gv| gv * bc[0]).collect()
                } else {
                    g.iter().zip(bc.iter()).map(|(&gv, &y)| gv * y).collect()
                }
            });
            let rg = need[1].then(|| {
                if bc.len() == 1 {
                    vec![g.iter().zip(ac.iter()).map(|(&gv, &x)| gv * x).sum()]
                } else {
                    g.iter().zip(ac.iter()).map(|(&gv, &x)| gv * x).collect()
                }
            });
            vec![lg, rg]
        });
        self.tape.push(
            "mul",
            ls,
            Rc::from(out),
            vec![self.index, rhs.index],
            Some(back),
        )
    }

    /// Multiply by a constant (not differentiated through the constant).
    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let out: Vec<f64> = self.data().iter().map(|&x| x * c).collect();
        let back: BackwardFn = Box::new(move |g, need| {
            vec![need[0].then(|| g.iter().map(|&gv| gv * c).collect())]
        });
        self.tape
            .push("scale", self.shape(), Rc::from(out), vec![self.index], Some(back))
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    /// Add a constant to every element.
    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let out: Vec<f64> = self.data().iter().map(|&x| x + c).collect();
        let back: BackwardFn = Box::new(move |g, need| vec![need[0].then(|| g.to_vec())]);
        self.tape.push(
            "add_scalar",
            self.shape(),
            Rc::from(out),
            vec![self.index],
            Some(back),
        )
    }

    /// Standard matrix product for rank-2 operands.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.bin_prep(rhs, "matmul")?;
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let a = self.data();
        let b = rhs.data();
        let out = matmul_raw(&a, &b, m, k, n);
        let (ac, bc) = (Rc::clone(&a), Rc::clone(&b));
        let back: BackwardFn = Box::new(move |g, need| {
            let lg = need[0].then(|| matmul_nt(g, &bc, m, n, k));
            let rg = need[1].then(|| matmul_tn(&ac, g, m, k, n));
            vec![lg, rg]
        });
        self.tape.push(
            "matmul",
            vec![m, n],
            Rc::from(out),
            vec![self.index, rhs.index],
            Some(back),
        )
    }

    /// Transpose a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("transpose")?;
        let a = self.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a[i * n + j];
            }
        }
        let back: BackwardFn = Box::new(move |g, need| {
            vec![need[0].then(|| {
                let mut gg = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        gg[i * n + j] = g[j * m + i];
                    }
                }
                gg
            })]
        });
        self.tape.push(
            "transpose",
            vec![n, m],
            Rc::from(out),
            vec![self.index],
            Some(back),
        )
    }

    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        // derivative expressed from (input, output)
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Tensor> {
        let a = self.data();
        let out: Vec<f64> = a.iter().map(|&x| f(x)).collect();
        let out_rc: Rc<[f64]> = Rc::from(out);
        let (ac, yc) = (Rc::clone(&a), Rc::clone(&out_rc));
        let back: BackwardFn = Box::new(move |g, need| {
            vec![need[0].then(|| {
                g.iter()
                    .zip(ac.iter().zip(yc.iter()))
                    .map(|(&gv, (&x, &y))| gv * df(x, y))
                    .collect()
            })]
        });
        self.tape
            .push(op, self.shape(), out_rc, vec![self.index], Some(back))
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary(
            "sigmoid",
            |x| 1.0 / (1.0 + (-x).exp()),
            |_, y| y * (1.0 - y),
        )
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    /// ln(1 + e^x), computed stably for large |x|.
    pub fn softplus(&self) -> Result<Tensor> {
        self.unary(
            "softplus",
            |x| {
                if x > 30.0 {
                    x
                } else if x < -30.0 {
                    x.exp()
                } else {
                    x.exp().ln_1p()
                }
            },
            |x, _| 1.0 / (1.0 + (-x).exp()),
        )
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Result<Tensor> {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    /// Sum of all elements, as a single-element tensor.
    pub fn sum_all(&self) -> Result<Tensor> {
        let a = self.data();
        let s: f64 = a.iter().sum();
        let n = a.len();
        let back: BackwardFn =
            Box::new(move |g, need| vec![need[0].then(|| vec![g[0]; n])]);
        self.tape
            .push("sum_all", vec![1], Rc::from(vec![s]), vec![self.index], Some(back))
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let n = self.len() as f64;
        self.sum_all()?.scale(1.0 / n)
    }

    /// Numerically stabilized softmax along `axis` (max subtraction).
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let s = self.shape();
        let (rows, cols) = match s.len() {
            1 => (1, s[0]),
            2 => (s[0], s[1]),
            _ => {
                return Err(TensorError::InvalidAxis {
                    op: "softmax",
                    axis,
                    shape: s,
                })
            }
        };
        if axis >= s.len() {
            return Err(TensorError::InvalidAxis {
                op: "softmax",
                axis,
                shape: s,
            });
        }
        // normalize along columns by transposing the iteration
        let along_rows = s.len() == 1 || axis == 1;
        let a = self.data();
        let mut out = vec![0.0; a.len()];
        let (outer, span, stride) = if along_rows {
            (rows, cols, 1)
        } else {
            (cols, rows, cols)
        };
        for o in 0..outer {
            let base = if along_rows { o * cols } else { o };
            let mut m = f64::NEG_INFINITY;
            for i in 0..span {
                m = m.max(a[base + i * stride]);
            }
            let mut denom = 0.0;
            for i in 0..span {
                let e = (a[base + i * stride] - m).exp();
                out[base + i * stride] = e;
                denom += e;
            }
            for i in 0..span {
                out[base + i * stride] /= denom;
            }
        }
        let out_rc: Rc<[f64]> = Rc::from(out);
        let yc = Rc::clone(&out_rc);
        let back: BackwardFn = Box::new(move |g, need| {
            vec![need[0].then(|| {
                let mut gg = vec![0.0; g.len()];
                for o in 0..outer {
                    let base = if along_rows { o * span } else { o };
                    let mut dot = 0.0;
                    for i in 0..span {
                        let idx = base + i * stride;
                        dot += g[idx] * yc[idx];
                    }
                    for i in 0..span {
                        let idx = base + i * stride;
                        gg[idx] = yc[idx] * (g[idx] - dot);
                    }
                }
                gg
            })]
        });
        self.tape
            .push("softmax", s, out_rc, vec![self.index], Some(back))
    }

    /// log(sum(exp(x))) along `axis` of a rank-2 tensor, keeping the
    /// reduced axis with size 1. Stable via max subtraction.
    pub fn logsumexp(&self, axis: usize) -> Result<Tensor> {
        let (rows, cols) = self.dims2("logsumexp")?;
        if axis > 1 {
            return Err(TensorError::InvalidAxis {
                op: "logsumexp",
                axis,
                shape: self.shape(),
            });
        }
        let a = self.data();
        let (outer, span, stride, out_shape) = if axis == 1 {
            (rows, cols, 1, vec![rows, 1])
        } else {
            (cols, rows, cols, vec![1, cols])
        };
        let mut out = vec![0.0; outer];
        for o in 0..outer {
            let base = if axis == 1 { o * cols } else { o };
            let mut m = f64::NEG_INFINITY;
            for i in 0..span {
                m = m.max(a[base + i * stride]);
            }
            let mut s = 0.0;
            for i in 0..span {
                s += (a[base + i * stride] - m).exp();
            }
            out[o] = m + s.ln();
        }
        let out_rc: Rc<[f64]> = Rc::from(out);
        let (ac, yc) = (Rc::clone(&a), Rc::clone(&out_rc));
        let back: BackwardFn = Box::new(move |g, need| {
            vec![need[0].then(|| {
                let mut gg = vec![0.0; ac.len()];
                for o in 0..outer {
                    let base = if axis == 1 { o * span } else { o };
                    for i in 0..span {
                        let idx = base + i * stride;
                        gg[idx] = g[o] * (ac[idx] - yc[o]).exp();
                    }
                }
                gg
            })]
        });
        self.tape
            .push("logsumexp", out_shape, out_rc, vec![self.index], Some(back))
    }

    /// Per-position layer normalization over the last axis, then affine.
    /// `gain` and `bias` have the last-axis length.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        self.bin_prep(gain, "layer_norm")?;
        self.bin_prep(bias, "layer_norm")?;
        let s = self.shape();
        let d = *s.last().unwrap();
        if gain.len() != d || bias.len() != d {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: s,
                rhs: gain.shape(),
            });
        }
        let rows = numel(&s) / d;
        let x = self.data();
        let gw = gain.data();
        let bw = bias.data();
        let mut out = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for j in 0..d {
                let xh = (row[j] - mu) * istd;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * gw[j] + bw[j];
            }
        }
        let xhat = Rc::<[f64]>::from(xhat);
        let inv_std = Rc::<[f64]>::from(inv_std);
        let gwc = Rc::clone(&gw);
        let xh2 = Rc::clone(&xhat);
        let back: BackwardFn = Box::new(move |g, need| {
            let dn = d as f64;
            let gx = need[0].then(|| {
                let mut gg = vec![0.0; g.len()];
                for r in 0..rows {
                    let istd = inv_std[r];
                    let base = r * d;
                    // dxhat_j = g_j * gain_j
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..d {
                        let dxh = g[base + j] * gwc[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xh2[base + j];
                    }
                    mean_dxhat /= dn;
                    mean_dxhat_xhat /= dn;
                    for j in 0..d {
                        let dxh = g[base + j] * gwc[j];
                        gg[base + j] =
                            istd * (dxh - mean_dxhat - xh2[base + j] * mean_dxhat_xhat);
                    }
                }
                gg
            });
            let ggain = need[1].then(|| {
                let mut acc = vec![0.0; d];
                for r in 0..rows {
                    for j in 0..d {
                        acc[j] += g[r * d + j] * xh2[r * d + j];
                    }
                }
                acc
            });
            let gbias = need[2].then(|| {
                let mut acc = vec![0.0; d];
                for r in 0..rows {
                    for j in 0..d {
                        acc[j] += g[r * d + j];
                    }
                }
                acc
            });
            vec![gx, ggain, gbias]
        });
        self.tape.push(
            "layer_norm",
            s,
            Rc::from(out),
            vec![self.index, gain.index, bias.index],
            Some(back),
        )
    }

    /// Negative log-likelihood of `targets` under row-wise softmax of the
    /// logits (rank-2, one row per position). Stable log-sum-exp inside.
    pub fn cross_entropy(&self, targets: &[usize], reduction: Reduction) -> Result<Tensor> {
        let (t, v) = self.dims2("cross_entropy")?;
        if targets.len() != t {
            return Err(TensorError::Contract(format!(
                "cross_entropy: {} targets for {} logit rows",
                targets.len(),
                t
            )));
        }
        for &id in targets {
            if id >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    id,
                    size: v,
                });
            }
        }
        let a = self.data();
        let mut probs = vec![0.0; a.len()];
        let mut total = 0.0;
        for (r, &tgt) in targets.iter().enumerate() {
            let row = &a[r * v..(r + 1) * v];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - m).exp();
                probs[r * v + j] = e;
                denom += e;
            }
            for p in &mut probs[r * v..(r + 1) * v] {
                *p /= denom;
            }
            total += m + denom.ln() - row[tgt];
        }
        let scale = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / t as f64,
        };
        total *= scale;
        let probs = Rc::<[f64]>::from(probs);
        let tgts = targets.to_vec();
        let back: BackwardFn = Box::new(move |g, need| {
            vec![need[0].then(|| {
                let mut gg = Vec::with_capacity(probs.len());
                gg.extend(probs.iter().map(|&p| p * scale * g[0]));
                for (r, &tgt) in tgts.iter().enumerate() {
                    gg[r * v + tgt] -= scale * g[0];
                }
                gg
            })]
        });
        self.tape.push(
            "cross_entropy",
            vec![1],
            Rc::from(vec![total]),
            vec![self.index],
            Some(back),
        )
    }

    /// Columns `[from, to)` of a rank-2 tensor.
    pub fn slice_cols(&self, from: usize, to: usize) -> Result<Tensor> {
        let (rows, cols) = self.dims2("slice_cols")?;
        if from > to || to > cols {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                id: to,
                size: cols,
            });
        }
        let w = to - from;
        let a = self.data();
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            out.extend_from_slice(&a[r * cols + from..r * cols + to]);
        }
        let back: BackwardFn = Box::new(move |g, need| {
            vec![need[0].then(|| {
                let mut gg = vec![0.0; rows * cols];
                for r in 0..rows {
                    gg[r * cols + from..r * cols + to].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                gg
            })]
        });
        self.tape.push(
            "slice_cols",
            vec![rows, w],
            Rc::from(out),
            vec![self.index],
            Some(back),
        )
    }

    /// Rows `[from, to)` of a rank-2 tensor.
    pub fn slice_rows(&self, from: usize, to: usize) -> Result<Tensor> {
        let (rows, cols) = self.dims2("slice_rows")?;
        if from > to || to > rows {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_rows",
                id: to,
                size: rows,
            });
        }
        let a = self.data();
        let out = a[from * cols..to * cols].to_vec();
        let h = to - from;
        let back: BackwardFn = Box::new(move |g, need| {
            vec![need[0].then(|| {
                let mut gg = vec![0.0; rows * cols];
                gg[from * cols..to * cols].copy_from_slice(&g[..h * cols]);
                gg
            })]
        });
        self.tape.push(
            "slice_rows",
            vec![h, cols],
            Rc::from(out),
            vec![self.index],
            Some(back),
        )
    }

    /// Reinterpret the buffer with a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(),
                rhs: shape.to_vec(),
            });
        }
        let back: BackwardFn = Box::new(move |g, need| vec![need[0].then(|| g.to_vec())]);
        self.tape.push(
            "reshape",
            shape.to_vec(),
            self.data(),
            vec![self.index],
            Some(back),
        )
    }
}

/// Concatenate rank-2 tensors along `axis` (0 = stack rows, 1 = widen).
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(TensorError::Contract("concat of zero tensors".into()));
    }
    let tape = parts[0].tape.clone();
    for p in parts {
        if !tape.same_tape(&p.tape) {
            return Err(TensorError::TapeMismatch("concat"));
        }
    }
    let shapes: Vec<(usize, usize)> = parts
        .iter()
        .map(|p| p.dims2("concat"))
        .collect::<Result<_>>()?;
    let (r0, c0) = shapes[0];
    let out_shape;
    let mut out;
    match axis {
        0 => {
            if shapes.iter().any(|&(_, c)| c != c0) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: vec![r0, c0],
                    rhs: vec![],
                });
            }
            let rows: usize = shapes.iter().map(|&(r, _)| r).sum();
            out = Vec::with_capacity(rows * c0);
            for p in parts {
                out.extend_from_slice(&p.data());
            }
            out_shape = vec![rows, c0];
        }
        1 => {
            if shapes.iter().any(|&(r, _)| r != r0) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: vec![r0, c0],
                    rhs: vec![],
                });
            }
            let cols: usize = shapes.iter().map(|&(_, c)| c).sum();
            out = vec![0.0; r0 * cols];
            let datas: Vec<Rc<[f64]>> = parts.iter().map(|p| p.data()).collect();
            let mut off = 0;
            for (d, &(_, c)) in datas.iter().zip(&shapes) {
                for r in 0..r0 {
                    out[r * cols + off..r * cols + off + c].copy_from_slice(&d[r * c..(r + 1) * c]);
                }
                off += c;
            }
            out_shape = vec![r0, cols];
        }
        _ => {
            return Err(TensorError::InvalidAxis {
                op: "concat",
                axis,
                shape: vec![r0, c0],
            })
        }
    }
    let sh = shapes.clone();
    let out_cols = out_shape[1];
    let back: BackwardFn = Box::new(move |g, need| {
        let mut grads = Vec::with_capacity(sh.len());
        let mut off = 0;
        for (i, &(r, c)) in sh.iter().enumerate() {
            if !need[i] {
                grads.push(None);
                match axis {
                    0 => off += r * c,
                    _ => off += c,
                }
                continue;
            }
            match axis {
                0 => {
                    grads.push(Some(g[off..off + r * c].to_vec()));
                    off += r * c;
                }
                _ => {
                    let mut gg = vec![0.0; r * c];
                    for row in 0..r {
                        gg[row * c..(row + 1) * c]
                            .copy_from_slice(&g[row * out_cols + off..row * out_cols + off + c]);
                    }
                    grads.push(Some(gg));
                    off += c;
                }
            }
        }
        grads
    });
    let parents = parts.iter().map(|p| p.index).collect();
    tape.push("concat", out_shape, Rc::from(out), parents, Some(back))
}

/// Gather rows of an embedding table by token id; gradients scatter back
/// into the table rows.
pub fn embedding(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let (vocab, d) = table.dims2("embedding")?;
    for &id in ids {
        if id >= vocab {
            return Err(TensorError::IndexOutOfRange {
                op: "embedding",
                id,
                size: vocab,
            });
        }
    }
    let a = table.data();
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        out.extend_from_slice(&a[id * d..(id + 1) * d]);
    }
    let ids_c = ids.to_vec();
    let back: BackwardFn = Box::new(move |g, need| {
        vec![need[0].then(|| {
            let mut gg = vec![0.0; vocab * d];
            for (r, &id) in ids_c.iter().enumerate() {
                for j in 0..d {
                    gg[id * d + j] += g[r * d + j];
                }
            }
            gg
        })]
    });
    table.tape.push(
        "embedding",
        vec![ids.len(), d],
        Rc::from(out),
        vec![table.index],
        Some(back),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(tape: &Tape, data: &[f64], shape: &[usize]) -> Tensor {
        tape.tensor(data.to_vec(), shape, true).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let t = Tape::new();
        let i2 = tensor(&t, &[1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let a = tensor(&t, &[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let y = i2.matmul(&a).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_annihilating() {
        let t = Tape::new();
        let a = tensor(&t, &[1.0, 0.0], &[1, 2]);
        let b = tensor(&t, &[0.0, 5.0], &[2, 1]);
        let y = a.matmul(&b).unwrap();
        assert_eq!(y.to_vec(), vec![0.0]);
    }

    // independent oracle: same product accumulated in a different loop order
    fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for j in 0..n {
            for p in 0..k {
                for i in 0..m {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let t = Tape::new();
        // fixed pseudo-random values
        let a_data: Vec<f64> = (0..12).map(|i| ((i * 37 + 11) % 17) as f64 / 7.0 - 1.0).collect();
        let b_data: Vec<f64> = (0..8).map(|i| ((i * 53 + 5) % 19) as f64 / 9.0 - 1.0).collect();
        let a = tensor(&t, &a_data, &[3, 4]);
        let b = tensor(&t, &b_data, &[4, 2]);
        let y = a.matmul(&b).unwrap();
        let want = matmul_oracle(&a_data, &b_data, 3, 4, 2);
        for (got, want) in y.to_vec().iter().zip(&want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let t = Tape::new();
        let a = tensor(&t, &[1.0, 2.0], &[1, 2]);
        let b = tensor(&t, &[1.0, 2.0, 3.0], &[3, 1]);
        assert!(matches!(
            a.matmul(&b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn softmax_symmetry() {
        let t = Tape::new();
        let x = tensor(&t, &[0.0, 0.0], &[2]);
        let y = x.softmax(0).unwrap();
        assert_eq!(y.to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_large_magnitude_stable() {
        let t = Tape::new();
        let x = tensor(&t, &[1000.0, 0.0], &[2]);
        let y = x.softmax(0).unwrap();
        let v = y.to_vec();
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!(v[1] >= 0.0 && v[1] < 1e-12);
    }

    #[test]
    fn softmax_matches_high_precision_oracle() {
        // frozen from a 50-digit decimal computation of exp(x)/sum(exp(x))
        let want = [
            0.090030573170380458_f64,
            0.244728471054797652,
            0.665240955774821890,
        ];
        let t = Tape::new();
        let x = tensor(&t, &[1.0, 2.0, 3.0], &[3]);
        let y = x.softmax(0).unwrap();
        for (got, want) in y.to_vec().iter().zip(&want) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        let sum: f64 = y.to_vec().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_axis0_columns_sum_to_one() {
        let t = Tape::new();
        let x = tensor(&t, &[1.0, 4.0, -2.0, 0.5, 3.0, 2.0], &[3, 2]);
        let y = x.softmax(0).unwrap();
        let v = y.to_vec();
        for c in 0..2 {
            let s: f64 = (0..3).map(|r| v[r * 2 + c]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_vector_zeroed() {
        let t = Tape::new();
        let x = tensor(&t, &[3.0, 3.0, 3.0, 3.0], &[4]);
        let g = tensor(&t, &[1.0; 4], &[4]);
        let b = tensor(&t, &[0.0; 4], &[4]);
        let y = x.layer_norm(&g, &b, 1e-5).unwrap();
        for v in y.to_vec() {
            assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn layer_norm_already_normalized() {
        let t = Tape::new();
        let x = tensor(&t, &[1.0, -1.0], &[2]);
        let g = tensor(&t, &[1.0, 1.0], &[2]);
        let b = tensor(&t, &[0.0, 0.0], &[2]);
        // eps = 0 keeps the identity exact
        let y = x.layer_norm(&g, &b, 0.0).unwrap();
        let v = y.to_vec();
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!((v[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_statistics() {
        let t = Tape::new();
        let data: Vec<f64> = (0..16).map(|i| ((i * 31 + 7) % 23) as f64 * 10.0 - 100.0).collect();
        let x = tensor(&t, &data, &[2, 8]);
        let g = tensor(&t, &[1.0; 8], &[8]);
        let b = tensor(&t, &[0.0; 8], &[8]);
        let y = x.layer_norm(&g, &b, 0.0).unwrap();
        let v = y.to_vec();
        for r in 0..2 {
            let row = &v[r * 8..(r + 1) * 8];
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let var: f64 = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let t = Tape::new();
        let (tt, v) = (3, 5);
        let x = tensor(&t, &vec![0.0; tt * v], &[tt, v]);
        let loss = x.cross_entropy(&[0, 2, 4], Reduction::Sum).unwrap();
        assert!((loss.item() - tt as f64 * (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_certain_logit() {
        let t = Tape::new();
        let mut data = vec![0.0; 4];
        data[1] = 1e6;
        let x = tensor(&t, &data, &[1, 4]);
        let loss = x.cross_entropy(&[1], Reduction::Sum).unwrap();
        assert!(loss.item().abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_matches_lse_oracle() {
        // frozen from a 50-digit decimal evaluation of sum_t(lse(row) - row[t])
        let logits = [
            0.3, -1.2, 2.0, 0.7, -0.4, 1.5, -2.1, //
            -0.8, 0.1, 0.9, -1.5, 2.2, 0.4, -0.3, //
            1.1, -0.6, 0.2, 1.8, -2.0, 0.5, 0.9, //
            -1.4, 2.5, -0.7, 0.3, 1.0, -0.2, 0.8,
        ];
        let targets = [2usize, 4, 3, 1];
        let t = Tape::new();
        let x = tensor(&t, &logits, &[4, 7]);
        let sum = x.cross_entropy(&targets, Reduction::Sum).unwrap();
        assert!((sum.item() - 2.7435991826257321).abs() < 1e-10);
        let t2 = Tape::new();
        let x2 = tensor(&t2, &logits, &[4, 7]);
        let mean = x2.cross_entropy(&targets, Reduction::Mean).unwrap();
        assert!((mean.item() - 0.6858997956564330).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let t = Tape::new();
        let x = tensor(&t, &[0.0, 0.0], &[1, 2]);
        assert!(matches!(
            x.cross_entropy(&[2], Reduction::Sum),
            Err(TensorError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn backward_square() {
        let t = Tape::new();
        let x = tensor(&t, &[3.0], &[1]);
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn backward_product_rule() {
        let t = Tape::new();
        let x = tensor(&t, &[2.0], &[1]);
        let y = tensor(&t, &[5.0], &[1]);
        let z = x.mul(&y).unwrap();
        z.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0]);
        assert_eq!(y.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn backward_shared_subexpression_accumulates() {
        let t = Tape::new();
        let x = tensor(&t, &[1.5], &[1]);
        let y = x.add(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let t = Tape::new();
        let x = tensor(&t, &[1.0, 2.0], &[2]);
        let y = x.relu().unwrap();
        assert!(matches!(y.backward(), Err(TensorError::Contract(_))));
    }

    #[test]
    fn backward_twice_errors_until_reset() {
        let t = Tape::new();
        let x = tensor(&t, &[2.0], &[1]);
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert!(matches!(y.backward(), Err(TensorError::BackwardConsumed)));
        t.reset_backward();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }

    #[test]
    fn frozen_leaf_gets_no_grad() {
        let t = Tape::new();
        let x = tensor(&t, &[2.0], &[1]);
        let w = t.tensor(vec![3.0], &[1], false).unwrap();
        let y = x.mul(&w).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0]);
        assert!(w.grad().is_none());
    }

    #[test]
    fn non_finite_forward_rejected() {
        let t = Tape::new();
        let x = tensor(&t, &[1e308], &[1]);
        // 1e308 * 10 overflows
        assert!(matches!(x.scale(10.0), Err(TensorError::NonFinite { .. })));
        assert!(t.tensor(vec![f64::NAN], &[1], false).is_err());
    }

    #[test]
    fn broadcast_add_row_vector() {
        let t = Tape::new();
        let x = tensor(&t, &[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = tensor(&t, &[10.0, 20.0], &[2]);
        let y = x.add(&b).unwrap();
        assert_eq!(y.to_vec(), vec![11.0, 22.0, 13.0, 24.0]);
        let loss = y.sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0]);
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn concat_and_slice_roundtrip_gradients() {
        let t = Tape::new();
        let a = tensor(&t, &[1.0, 2.0], &[1, 2]);
        let b = tensor(&t, &[3.0, 4.0], &[1, 2]);
        let cat = concat(&[&a, &b], 0).unwrap();
        assert_eq!(cat.shape(), vec![2, 2]);
        let right = cat.slice_cols(1, 2).unwrap();
        assert_eq!(right.to_vec(), vec![2.0, 4.0]);
        let loss = right.sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0, 1.0]);
        assert_eq!(b.grad().unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn concat_axis1_layout() {
        let t = Tape::new();
        let a = tensor(&t, &[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = tensor(&t, &[5.0, 6.0], &[2, 1]);
        let cat = concat(&[&a, &b], 1).unwrap();
        assert_eq!(cat.shape(), vec![2, 3]);
        assert_eq!(cat.to_vec(), vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
    }

    #[test]
    fn embedding_scatters_gradients() {
        let t = Tape::new();
        let table = tensor(&t, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]);
        let e = embedding(&table, &[2, 0, 2]).unwrap();
        assert_eq!(e.to_vec(), vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = e.sum_all().unwrap();
        loss.backward().unwrap();
        // row 2 used twice, row 0 once, row 1 never
        assert_eq!(table.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn logsumexp_matches_direct() {
        let t = Tape::new();
        let x = tensor(&t, &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0], &[2, 3]);
        let y = x.logsumexp(1).unwrap();
        assert_eq!(y.shape(), vec![2, 1]);
        let v = y.to_vec();
        let want0 = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        let want1 = ((-1f64).exp() + 0f64.exp() + 1f64.exp()).ln();
        assert!((v[0] - want0).abs() < 1e-12);
        assert!((v[1] - want1).abs() < 1e-12);
    }
}
