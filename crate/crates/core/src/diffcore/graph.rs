//! Tape of tensor operations with a reverse pass.
//!
//! Every node holds a dense row-major `[rows, cols]` value. Parameter leaves
//! borrow their data from the [`ParamSet`] instead of copying it, so a graph
//! lives no longer than the parameters it reads. The tape is rebuilt for each
//! training iteration; routing decisions change the topology batch to batch.

use super::tensor::{ParamId, ParamSet};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Inputs handed to [`CustomOp::backward`].
pub struct BackwardCtx<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub input_shapes: Vec<(usize, usize)>,
    /// Whether each input needs a gradient; ops may skip the others.
    pub needs: Vec<bool>,
    pub output: &'a [f64],
    pub grad_output: &'a [f64],
}

/// An operation whose forward value is computed by its constructor and
/// whose vector-Jacobian product is hand written.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// One entry per input. `None` means "no contribution".
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f64>>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Sigmoid,
    Softplus,
    Relu,
    Abs,
    Square,
    Sqrt,
    Recip,
    Scale(f64),
    Offset(f64),
    Clamp(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op {
    Param(ParamId),
    Const,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    MatMul(Var, Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectCols(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    Scatter(Vec<(Var, Vec<usize>)>),
    Reshape(Var),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Const => "const",
            Op::Unary(u, _) => match u {
                Unary::Neg => "neg",
                Unary::Exp => "exp",
                Unary::Log => "log",
                Unary::Sin => "sin",
                Unary::Cos => "cos",
                Unary::Sigmoid => "sigmoid",
                Unary::Softplus => "softplus",
                Unary::Relu => "relu",
                Unary::Abs => "abs",
                Unary::Square => "square",
                Unary::Sqrt => "sqrt",
                Unary::Recip => "recip",
                Unary::Scale(_) => "scale",
                Unary::Offset(_) => "offset",
                Unary::Clamp(..) => "clamp",
            },
            Op::Binary(b, ..) => match b {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
                Binary::Div => "div",
            },
            Op::MatMul(..) => "matmul",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumCols(_) => "sum_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SelectCols(..) => "select_cols",
            Op::Gather(..) => "gather_rows",
            Op::Scatter(_) => "scatter_rows",
            Op::Reshape(_) => "reshape",
            Op::Custom(_, c) => c.name(),
        }
    }
}

enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to parameter leaves.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    per_param: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.per_param.get(id.0).and_then(|g| g.as_deref())
    }
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn unary_forward(u: Unary, x: f64) -> f64 {
    match u {
        Unary::Neg => -x,
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Sin => x.sin(),
        Unary::Cos => x.cos(),
        Unary::Sigmoid => sigmoid(x),
        Unary::Softplus => softplus(x),
        Unary::Relu => x.max(0.0),
        Unary::Abs => x.abs(),
        Unary::Square => x * x,
        Unary::Sqrt => x.sqrt(),
        Unary::Recip => 1.0 / x,
        Unary::Scale(k) => k * x,
        Unary::Offset(k) => x + k,
        Unary::Clamp(lo, hi) => x.clamp(lo, hi),
    }
}

fn unary_derivative(u: Unary, x: f64, y: f64) -> f64 {
    match u {
        Unary::Neg => -1.0,
        Unary::Exp => y,
        Unary::Log => 1.0 / x,
        Unary::Sin => x.cos(),
        Unary::Cos => -x.sin(),
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Softplus => sigmoid(x),
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Unary::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Unary::Square => 2.0 * x,
        Unary::Sqrt => 0.5 / y,
        Unary::Recip => -y * y,
        Unary::Scale(k) => k,
        Unary::Offset(_) => 1.0,
        Unary::Clamp(lo, hi) => {
            if x >= lo && x <= hi {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contrib: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(&contrib) {
                *a += c;
            }
        }
        None => *slot = Some(contrib),
    }
}

/// `c[m×n] (+)= a[m×k] · b[k×n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices hold at least the strided extents addressed here;
    // callers pass dimensions taken from the same buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(id) => self.params.get(*id).data(),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn rows(&self, v: Var) -> usize {
        self.nodes[v.0].rows
    }

    pub fn cols(&self, v: Var) -> usize {
        self.nodes[v.0].cols
    }

    /// Value of a `[1, 1]` node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.shape(v), (1, 1));
        self.value(v)[0]
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols, "op {}", op.name());
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf reading a registered parameter. 2-D tensors keep their shape,
    /// everything else is viewed as a single row.
    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.params.get(id);
        let (rows, cols) = match t.shape() {
            [r, c] => (*r, *c),
            _ => (1, t.numel()),
        };
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite constant");
        self.push(rows, cols, data, Op::Const, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.constant(1, 1, vec![v])
    }

    pub fn unary(&mut self, u: Unary, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self.value(x).iter().map(|&v| unary_forward(u, v)).collect();
        let ng = self.needs_grad(x);
        self.push(r, c, out, Op::Unary(u, x), ng)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(Unary::Neg, x)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x)
    }
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(Unary::Log, x)
    }
    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(Unary::Sin, x)
    }
    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(Unary::Cos, x)
    }
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Unary::Softplus, x)
    }
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(Unary::Abs, x)
    }
    pub fn square(&mut self, x: Var) -> Var {
        self.unary(Unary::Square, x)
    }
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(Unary::Sqrt, x)
    }
    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(Unary::Recip, x)
    }
    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(Unary::Scale(k), x)
    }
    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        self.unary(Unary::Offset(k), x)
    }
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(Unary::Clamp(lo, hi), x)
    }

    fn broadcast_shape(&self, a: Var, b: Var, op: Binary) -> (usize, usize) {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        let dim = |x: usize, y: usize| {
            if x == y || y == 1 {
                x
            } else if x == 1 {
                y
            } else {
                panic!("cannot broadcast [{ra}, {ca}] with [{rb}, {cb}] in {op:?}")
            }
        };
        (dim(ra, rb), dim(ca, cb))
    }

    fn binary(&mut self, op: Binary, a: Var, b: Var) -> Var {
        let (r, c) = self.broadcast_shape(a, b, op);
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        let va = self.value(a);
        let vb = self.value(b);
        let f = |x: f64, y: f64| match op {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let out: Vec<f64> = if (ra, ca) == (rb, cb) {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                let ia = if ra == 1 { 0 } else { i };
                let ib = if rb == 1 { 0 } else { i };
                for j in 0..c {
                    let x = va[ia * ca + if ca == 1 { 0 } else { j }];
                    let y = vb[ib * cb + if cb == 1 { 0 } else { j }];
                    out.push(f(x, y));
                }
            }
            out
        };
        let ng = self.needs_grad(a) || self.needs_grad(b);
        self.push(r, c, out, Op::Binary(op, a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Div, a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            k as isize,
            1,
            self.value(b),
            n as isize,
            1,
            &mut out,
        );
        let ng = self.needs_grad(a) || self.needs_grad(b);
        self.push(m, n, out, Op::MatMul(a, b), ng)
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add(xw, b)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.needs_grad(x);
        self.push(1, 1, vec![s], Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let ng = self.needs_grad(x);
        self.push(1, 1, vec![s], Op::Mean(x), ng)
    }

    /// Row sums: `[r, c] -> [r, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let v = self.value(x);
        let out: Vec<f64> = (0..r).map(|i| v[i * c..(i + 1) * c].iter().sum()).collect();
        let ng = self.needs_grad(x);
        self.push(r, 1, out, Op::SumCols(x), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let r = self.rows(parts[0]);
        assert!(parts.iter().all(|&p| self.rows(p) == r), "concat_cols row mismatch");
        let c: usize = parts.iter().map(|&p| self.cols(p)).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                let pc = self.cols(p);
                out.extend_from_slice(&self.value(p)[i * pc..(i + 1) * pc]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs_grad(p));
        self.push(r, c, out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let c = self.cols(parts[0]);
        assert!(parts.iter().all(|&p| self.cols(p) == c), "concat_rows col mismatch");
        let r: usize = parts.iter().map(|&p| self.rows(p)).sum();
        let mut out = Vec::with_capacity(r * c);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let ng = parts.iter().any(|&p| self.needs_grad(p));
        self.push(r, c, out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn select_cols(&mut self, x: Var, cols: &[usize]) -> Var {
        let (r, c) = self.shape(x);
        assert!(cols.iter().all(|&j| j < c), "select_cols out of range");
        let v = self.value(x);
        let mut out = Vec::with_capacity(r * cols.len());
        for i in 0..r {
            out.extend(cols.iter().map(|&j| v[i * c + j]));
        }
        let ng = self.needs_grad(x);
        self.push(r, cols.len(), out, Op::SelectCols(x, cols.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let cols: Vec<usize> = (start..end).collect();
        self.select_cols(x, &cols)
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let (r, c) = self.shape(x);
        let v = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            assert!(i < r, "gather_rows index {i} out of {r}");
            out.extend_from_slice(&v[i * c..(i + 1) * c]);
        }
        let ng = self.needs_grad(x);
        self.push(idx.len(), c, out, Op::Gather(x, idx.to_vec()), ng)
    }

    /// Assemble a `[rows, c]` node whose row `idx[k]` comes from row `k` of
    /// the matching part. Rows no part writes stay zero; each row may be
    /// written at most once.
    pub fn scatter_rows(&mut self, rows: usize, cols: usize, parts: Vec<(Var, Vec<usize>)>) -> Var {
        let mut out = vec![0.0; rows * cols];
        let mut written = vec![false; rows];
        for (p, idx) in &parts {
            assert_eq!(self.cols(*p), cols, "scatter_rows col mismatch");
            assert_eq!(self.rows(*p), idx.len(), "scatter_rows index count");
            let v = self.value(*p);
            for (k, &i) in idx.iter().enumerate() {
                assert!(!written[i], "scatter_rows writes row {i} twice");
                written[i] = true;
                out[i * cols..(i + 1) * cols].copy_from_slice(&v[k * cols..(k + 1) * cols]);
            }
        }
        let ng = parts.iter().any(|(p, _)| self.needs_grad(*p));
        self.push(rows, cols, out, Op::Scatter(parts), ng)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(r * c, rows * cols, "reshape size mismatch");
        let out = self.value(x).to_vec();
        let ng = self.needs_grad(x);
        self.push(rows, cols, out, Op::Reshape(x), ng)
    }

    pub fn custom(
        &mut self,
        inputs: &[Var],
        rows: usize,
        cols: usize,
        value: Vec<f64>,
        op: impl CustomOp + 'static,
    ) -> Var {
        let ng = inputs.iter().any(|&v| self.needs_grad(v));
        self.push(rows, cols, value, Op::Custom(inputs.to_vec(), Box::new(op)), ng)
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every parameter reachable from the loss gets `d(loss)/d(param)`;
    /// the rest are absent from the result (zero once stored).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss { rows: r, cols: c });
        }
        let mut out = Gradients {
            per_param: vec![None; self.params.len()],
        };
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let contribs = self.node_backward(node, &g);
            for (parent, contrib) in contribs {
                if contrib.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient {
                        op: node.op.name(),
                        node: i,
                    });
                }
                match parent {
                    Target::Node(p) => accumulate(&mut grads[p.0], contrib),
                    Target::Param(id) => accumulate(&mut out.per_param[id.0], contrib),
                }
            }
        }
        Ok(out)
    }

    fn node_backward(&self, node: &Node, g: &[f64]) -> Vec<(Target, Vec<f64>)> {
        let mut res = Vec::new();
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Param(id) => res.push((Target::Param(*id), g.to_vec())),
            Op::Const => {}
            Op::Unary(u, x) => {
                let xv = self.value(*x);
                let yv = match &node.value {
                    Value::Owned(d) => d.as_slice(),
                    Value::Param(_) => unreachable!(),
                };
                let d = xv
                    .iter()
                    .zip(yv)
                    .zip(g)
                    .map(|((&x, &y), &g)| g * unary_derivative(*u, x, y))
                    .collect();
                res.push((Target::Node(*x), d));
            }
            Op::Binary(op, a, b) => {
                let (r, c) = (node.rows, node.cols);
                let (ra, ca) = self.shape(*a);
                let (rb, cb) = self.shape(*b);
                let va = self.value(*a);
                let vb = self.value(*b);
                let mut ga = if wants(*a) { Some(vec![0.0; ra * ca]) } else { None };
                let mut gb = if wants(*b) { Some(vec![0.0; rb * cb]) } else { None };
                for i in 0..r {
                    let ia = if ra == 1 { 0 } else { i };
                    let ib = if rb == 1 { 0 } else { i };
                    for j in 0..c {
                        let ka = ia * ca + if ca == 1 { 0 } else { j };
                        let kb = ib * cb + if cb == 1 { 0 } else { j };
                        let gij = g[i * c + j];
                        let (da, db) = match op {
                            Binary::Add => (gij, gij),
                            Binary::Sub => (gij, -gij),
                            Binary::Mul => (gij * vb[kb], gij * va[ka]),
                            Binary::Div => {
                                let y = vb[kb];
                                (gij / y, -gij * va[ka] / (y * y))
                            }
                        };
                        if let Some(ga) = ga.as_mut() {
                            ga[ka] += da;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[kb] += db;
                        }
                    }
                }
                if let Some(ga) = ga {
                    res.push((Target::Node(*a), ga));
                }
                if let Some(gb) = gb {
                    res.push((Target::Node(*b), gb));
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = node.cols;
                if wants(*a) {
                    // dA = G · Bᵀ
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, n as isize, 1, self.value(*b), 1, n as isize, &mut ga);
                    res.push((Target::Node(*a), ga));
                }
                if wants(*b) {
                    // dB = Aᵀ · G
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a), 1, k as isize, g, n as isize, 1, &mut gb);
                    res.push((Target::Node(*b), gb));
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                res.push((Target::Node(*x), vec![g[0]; n]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                res.push((Target::Node(*x), vec![g[0] / n.max(1) as f64; n]));
            }
            Op::SumCols(x) => {
                let (r, c) = self.shape(*x);
                let mut d = Vec::with_capacity(r * c);
                for &gi in g.iter().take(r) {
                    d.extend(std::iter::repeat_n(gi, c));
                }
                res.push((Target::Node(*x), d));
            }
            Op::ConcatCols(parts) => {
                let r = node.rows;
                let c = node.cols;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.cols(p);
                    if wants(p) {
                        let mut d = Vec::with_capacity(r * pc);
                        for i in 0..r {
                            d.extend_from_slice(&g[i * c + offset..i * c + offset + pc]);
                        }
                        res.push((Target::Node(p), d));
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if wants(p) {
                        res.push((Target::Node(p), g[offset..offset + n].to_vec()));
                    }
                    offset += n;
                }
            }
            Op::SelectCols(x, cols) => {
                let (r, c) = self.shape(*x);
                let k = cols.len();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for (jj, &j) in cols.iter().enumerate() {
                        d[i * c + j] += g[i * k + jj];
                    }
                }
                res.push((Target::Node(*x), d));
            }
            Op::Gather(x, idx) => {
                let (r, c) = self.shape(*x);
                let mut d = vec![0.0; r * c];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        d[i * c + j] += g[k * c + j];
                    }
                }
                res.push((Target::Node(*x), d));
            }
            Op::Scatter(parts) => {
                let c = node.cols;
                for (p, idx) in parts {
                    if !wants(*p) {
                        continue;
                    }
                    let mut d = Vec::with_capacity(idx.len() * c);
                    for &i in idx {
                        d.extend_from_slice(&g[i * c..(i + 1) * c]);
                    }
                    res.push((Target::Node(*p), d));
                }
            }
            Op::Reshape(x) => res.push((Target::Node(*x), g.to_vec())),
            Op::Custom(inputs, op) => {
                let ctx = BackwardCtx {
                    inputs: inputs.iter().map(|&v| self.value(v)).collect(),
                    input_shapes: inputs.iter().map(|&v| self.shape(v)).collect(),
                    needs: inputs.iter().map(|&v| wants(v)).collect(),
                    output: match &node.value {
                        Value::Owned(d) => d,
                        Value::Param(_) => unreachable!(),
                    },
                    grad_output: g,
                };
                let grads = op.backward(&ctx);
                debug_assert_eq!(grads.len(), inputs.len(), "{} grad count", op.name());
                for (&v, gi) in inputs.iter().zip(grads) {
                    if let (Some(gi), true) = (gi, wants(v)) {
                        debug_assert_eq!(gi.len(), self.value(v).len(), "{} grad len", op.name());
                        res.push((Target::Node(v), gi));
                    }
                }
            }
        }
        res
    }
}

enum Target {
    Node(Var),
    Param(ParamId),
}
