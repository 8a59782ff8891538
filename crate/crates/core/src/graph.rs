//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients
//! for nodes that depend on a leaf created with `requires_grad = true`.
//! Nodes built only from constants are never visited.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::tensor::{gemm, Tensor};

const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean attention pattern: `allowed[i * cols + j]` lets row `i` see
/// column `j`. Disallowed entries get exactly zero weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    pub allowed: Vec<bool>,
}

impl Mask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    pub fn causal(n: usize) -> Self {
        let mut m = Self::full(n, n);
        for i in 0..n {
            for j in i + 1..n {
                m.allowed[i * n + j] = false;
            }
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow { a: Var, row: Var },
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Powf(Var, f64),
    Abs(Var),
    Maximum(Var, Var),
    Minimum(Var, Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    SoftmaxRows { a: Var, mask: Option<Rc<Mask>> },
    LayerNorm { a: Var, gain: Var, bias: Var, xhat: Tensor, inv_std: Vec<f64> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    Gather { a: Var, index: Rc<Vec<usize>> },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.shape(), (1, 1), "not a scalar");
        t.data()[0]
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.zip_map(&nodes[b.0].value, f)
        };
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&self, a: Var, b: Var, tb: bool) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let n = if tb { bv.rows() } else { bv.cols() };
            let mut out = Tensor::zeros(av.rows(), n);
            gemm(&mut out, av, false, bv, tb, false);
            out
        };
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul { a, b, tb }, rg)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn maximum(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, f64::max, Op::Maximum(a, b))
    }

    pub fn minimum(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, f64::min, Op::Minimum(a, b))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, rv) = (&nodes[a.0].value, &nodes[row.0].value);
            assert_eq!(rv.shape(), (1, av.cols()), "add_row expects a 1 x cols row");
            let mut out = av.clone();
            for r in 0..out.rows() {
                for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                    *o += b;
                }
            }
            out
        };
        let rg = self.rg(&[a, row]);
        self.push(value, Op::AddRow { a, row }, rg)
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// Elementwise `x^p`.
    pub fn powf(&self, a: Var, p: f64) -> Var {
        self.unary(a, |x| x.powf(p), Op::Powf(a, p))
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { a, lo, hi })
    }

    /// Row-wise softmax. Masked-out entries receive exactly zero weight and
    /// are skipped when normalising.
    pub fn softmax_rows(&self, a: Var, mask: Option<Rc<Mask>>) -> Var {
        let value = {
            let av = self.value(a);
            let (rows, cols) = av.shape();
            if let Some(m) = &mask {
                assert_eq!((m.rows, m.cols), (rows, cols), "mask shape mismatch");
            }
            let mut out = Tensor::zeros(rows, cols);
            for r in 0..rows {
                let src = av.row(r);
                let ok = |j: usize| mask.as_ref().is_none_or(|m| m.get(r, j));
                let max = (0..cols)
                    .filter(|&j| ok(j))
                    .map(|j| src[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                let dst = out.row_mut(r);
                let mut total = 0.0;
                for j in 0..cols {
                    if ok(j) {
                        dst[j] = (src[j] - max).exp();
                        total += dst[j];
                    }
                }
                if total > 0.0 {
                    for j in 0..cols {
                        if ok(j) {
                            dst[j] /= total;
                        }
                    }
                }
            }
            out
        };
        let rg = self.rg(&[a]);
        self.push(value, Op::SoftmaxRows { a, mask }, rg)
    }

    /// Row-wise layer normalisation with `1 × cols` gain and bias.
    pub fn layer_norm(&self, a: Var, gain: Var, bias: Var) -> Var {
        let (value, xhat, inv_std) = {
            let nodes = self.nodes.borrow();
            let (av, g, b) = (&nodes[a.0].value, &nodes[gain.0].value, &nodes[bias.0].value);
            let (rows, cols) = av.shape();
            assert_eq!(g.shape(), (1, cols), "layer norm gain shape");
            assert_eq!(b.shape(), (1, cols), "layer norm bias shape");
            let mut xhat = Tensor::zeros(rows, cols);
            let mut out = Tensor::zeros(rows, cols);
            let mut inv_std = Vec::with_capacity(rows);
            for r in 0..rows {
                let x = av.row(r);
                let mean = x.iter().sum::<f64>() / cols as f64;
                let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                let is = 1.0 / (var + LN_EPS).sqrt();
                inv_std.push(is);
                for c in 0..cols {
                    let h = (x[c] - mean) * is;
                    xhat.set(r, c, h);
                    out.set(r, c, h * g.data()[c] + b.data()[c]);
                }
            }
            (out, xhat, inv_std)
        };
        let rg = self.rg(&[a, gain, bias]);
        self.push(
            value,
            Op::LayerNorm {
                a,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].0].value.rows();
            let cols: usize = parts.iter().map(|p| nodes[p.0].value.cols()).sum();
            let mut out = Tensor::zeros(rows, cols);
            for r in 0..rows {
                let mut off = 0;
                for p in parts {
                    let v = &nodes[p.0].value;
                    assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                    out.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
                    off += v.cols();
                }
            }
            out
        };
        let rg = self.rg(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let refs: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.0].value).collect();
            Tensor::vstack(&refs)
        };
        let rg = self.rg(parts);
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        let value = {
            let av = self.value(a);
            assert!(start + len <= av.cols(), "slice_cols out of range");
            let mut out = Tensor::zeros(av.rows(), len);
            for r in 0..av.rows() {
                out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
            }
            out
        };
        let rg = self.rg(&[a]);
        self.push(value, Op::SliceCols { a, start }, rg)
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Var {
        let value = {
            let av = self.value(a);
            assert!(start + len <= av.rows(), "slice_rows out of range");
            let c = av.cols();
            Tensor::from_vec(len, c, av.data()[start * c..(start + len) * c].to_vec())
        };
        let rg = self.rg(&[a]);
        self.push(value, Op::SliceRows { a, start }, rg)
    }

    /// `out.data[i] = a.data[index[i]]`, reshaped to `rows × cols`.
    pub fn gather(&self, a: Var, index: Rc<Vec<usize>>, rows: usize, cols: usize) -> Var {
        assert_eq!(index.len(), rows * cols, "gather index length");
        let value = {
            let av = self.value(a);
            let src = av.data();
            Tensor::from_vec(rows, cols, index.iter().map(|&i| src[i]).collect())
        };
        let rg = self.rg(&[a]);
        self.push(value, Op::Gather { a, index }, rg)
    }

    /// Selects whole rows of `a`.
    pub fn select_rows(&self, a: Var, rows: &[usize]) -> Var {
        let cols = self.shape(a).1;
        let index: Vec<usize> = rows
            .iter()
            .flat_map(|&r| (r * cols..(r + 1) * cols).collect::<Vec<_>>())
            .collect();
        self.gather(a, Rc::new(index), rows.len(), cols)
    }

    pub fn sum(&self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[output.0].value.shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));

        for i in (0..=output.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            let val = |v: Var| &nodes[v.0].value;
            let needs = |v: Var| nodes[v.0].requires_grad;
            let mut acc = |v: Var, t: Tensor| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(e) => e.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul { a, b, tb } => {
                    let (av, bv) = (val(*a), val(*b));
                    if needs(*a) {
                        let mut ga = Tensor::zeros(av.rows(), av.cols());
                        // C = A·B → dA = dC·Bᵀ ;  C = A·Bᵀ → dA = dC·B
                        gemm(&mut ga, &g, false, bv, !tb, false);
                        acc(*a, ga);
                    }
                    if needs(*b) {
                        let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                        if *tb {
                            gemm(&mut gb, &g, true, av, false, false);
                        } else {
                            gemm(&mut gb, av, true, &g, false, false);
                        }
                        acc(*b, gb);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|x| -x));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip_map(val(*b), |d, y| d * y));
                    acc(*b, g.zip_map(val(*a), |d, x| d * x));
                }
                Op::Div(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, g.zip_map(bv, |d, y| d / y));
                    let gb: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(av.data())
                        .zip(bv.data())
                        .map(|((d, x), y)| -d * x / (y * y))
                        .collect();
                    acc(*b, Tensor::from_vec(g.rows(), g.cols(), gb));
                }
                Op::AddRow { a, row } => {
                    if needs(*row) {
                        let mut gr = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, d) in gr.data_mut().iter_mut().zip(g.row(r)) {
                                *o += d;
                            }
                        }
                        acc(*row, gr);
                    }
                    acc(*a, g);
                }
                Op::Scale(a, s) => acc(*a, g.map(|d| d * s)),
                Op::AddScalar(a) => acc(*a, g),
                Op::Relu(a) => acc(*a, g.zip_map(val(*a), |d, x| if x > 0.0 { d } else { 0.0 })),
                Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |d, y| d * y * (1.0 - y))),
                Op::Log(a) => acc(*a, g.zip_map(val(*a), |d, x| d / x)),
                Op::Powf(a, p) => acc(*a, g.zip_map(val(*a), |d, x| d * p * x.powf(p - 1.0))),
                Op::Abs(a) => acc(*a, g.zip_map(val(*a), |d, x| d * x.signum() * (x != 0.0) as u8 as f64)),
                Op::Maximum(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let pick_a = |x: f64, y: f64| x >= y;
                    acc(*a, mask_grad(&g, av, bv, pick_a));
                    acc(*b, mask_grad(&g, av, bv, |x, y| !pick_a(x, y)));
                }
                Op::Minimum(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let pick_a = |x: f64, y: f64| x <= y;
                    acc(*a, mask_grad(&g, av, bv, pick_a));
                    acc(*b, mask_grad(&g, av, bv, |x, y| !pick_a(x, y)));
                }
                Op::Clamp { a, lo, hi } => acc(
                    *a,
                    g.zip_map(val(*a), |d, x| if x >= *lo && x <= *hi { d } else { 0.0 }),
                ),
                Op::SoftmaxRows { a, mask } => {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let out = ga.row_mut(r);
                        for j in 0..yr.len() {
                            if mask.as_ref().is_none_or(|m| m.get(r, j)) {
                                out[j] = yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                    acc(*a, ga);
                }
                Op::LayerNorm {
                    a,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = val(*gain);
                    let (rows, cols) = xhat.shape();
                    if needs(*gain) || needs(*bias) {
                        let mut gg = Tensor::zeros(1, cols);
                        let mut gb = Tensor::zeros(1, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                gg.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                                gb.data_mut()[c] += g.get(r, c);
                            }
                        }
                        acc(*gain, gg);
                        acc(*bias, gb);
                    }
                    if needs(*a) {
                        let mut ga = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            let dxh: Vec<f64> = (0..cols).map(|c| g.get(r, c) * gv.data()[c]).collect();
                            let m1 = dxh.iter().sum::<f64>() / cols as f64;
                            let m2 = dxh
                                .iter()
                                .zip(xhat.row(r))
                                .map(|(d, h)| d * h)
                                .sum::<f64>()
                                / cols as f64;
                            for c in 0..cols {
                                ga.set(r, c, inv_std[r] * (dxh[c] - m1 - xhat.get(r, c) * m2));
                            }
                        }
                        acc(*a, ga);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let c = val(*p).cols();
                        if needs(*p) {
                            let mut gp = Tensor::zeros(g.rows(), c);
                            for r in 0..g.rows() {
                                gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                            }
                            acc(*p, gp);
                        }
                        off += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (r, c) = val(*p).shape();
                        if needs(*p) && r > 0 {
                            let start = off * g.cols();
                            let gp = Tensor::from_vec(r, c, g.data()[start..start + r * c].to_vec());
                            acc(*p, gp);
                        }
                        off += r;
                    }
                }
                Op::SliceCols { a, start } => {
                    let (rows, cols) = val(*a).shape();
                    let mut ga = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(*a, ga);
                }
                Op::SliceRows { a, start } => {
                    let (rows, cols) = val(*a).shape();
                    let mut ga = Tensor::zeros(rows, cols);
                    ga.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
                    acc(*a, ga);
                }
                Op::Gather { a, index } => {
                    let (rows, cols) = val(*a).shape();
                    let mut ga = Tensor::zeros(rows, cols);
                    for (k, &src) in index.iter().enumerate() {
                        ga.data_mut()[src] += g.data()[k];
                    }
                    acc(*a, ga);
                }
                Op::Sum(a) => {
                    let (rows, cols) = val(*a).shape();
                    acc(*a, Tensor::filled(rows, cols, g.data()[0]));
                }
            }
        }
        Gradients { grads }
    }
}

fn mask_grad(g: &Tensor, a: &Tensor, b: &Tensor, pick: impl Fn(f64, f64) -> bool) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(a.data().iter().zip(b.data()))
        .map(|(d, (&x, &y))| if pick(x, y) { *d } else { 0.0 })
        .collect();
    Tensor::from_vec(g.rows(), g.cols(), data)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn inverse_sigmoid(p: f64) -> f64 {
    let p = p.clamp(1e-5, 1.0 - 1e-5);
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn matmul_gradients() {
        let mut r = rng();
        let a = Tensor::randn(3, 4, 1.0, &mut r);
        let b = Tensor::randn(4, 2, 1.0, &mut r);
        let c = Tensor::randn(5, 4, 1.0, &mut r);
        check_gradients(&[a, b, c], |g, v| {
            let x = g.matmul(v[0], v[1]);
            let y = g.matmul_nt(v[2], v[0]);
            let s = g.add(g.sum(g.mul(x, x)), g.sum(g.mul(y, y)));
            s
        })
        .unwrap();
    }

    #[test]
    fn elementwise_gradients() {
        let mut r = rng();
        let a = Tensor::randn(2, 3, 1.0, &mut r);
        let b = Tensor::randn(2, 3, 1.0, &mut r).map(|x| x.abs() + 0.5);
        let row = Tensor::randn(1, 3, 1.0, &mut r);
        check_gradients(&[a, b, row], |g, v| {
            let s = g.sigmoid(g.add_row(v[0], v[2]));
            let d = g.div(s, v[1]);
            let l = g.log(g.add_scalar(g.abs(g.sub(d, v[0])), 0.1));
            let m = g.maximum(g.minimum(v[0], v[1]), g.scale(v[1], -0.3));
            let p = g.powf(v[1], 2.5);
            g.add(g.sum(g.add(l, g.mul(m, g.relu(v[0])))), g.sum(p))
        })
        .unwrap();
    }

    #[test]
    fn softmax_and_layer_norm_gradients() {
        let mut r = rng();
        let a = Tensor::randn(3, 5, 1.0, &mut r);
        let gain = Tensor::randn(1, 5, 1.0, &mut r);
        let bias = Tensor::randn(1, 5, 1.0, &mut r);
        let w = Tensor::randn(3, 5, 1.0, &mut r);
        let mask = Rc::new(Mask::causal(5).rows_prefix(3));
        check_gradients(&[a, gain, bias, w], |g, v| {
            let n = g.layer_norm(v[0], v[1], v[2]);
            let s = g.softmax_rows(n, Some(mask.clone()));
            let t = g.softmax_rows(v[0], None);
            g.sum(g.mul(g.add(s, t), v[3]))
        })
        .unwrap();
    }

    #[test]
    fn structural_gradients() {
        let mut r = rng();
        let a = Tensor::randn(4, 3, 1.0, &mut r);
        let b = Tensor::randn(4, 2, 1.0, &mut r);
        let w = Tensor::randn(4, 5, 1.0, &mut r);
        check_gradients(&[a, b, w], |g, v| {
            let c = g.concat_cols(&[v[0], v[1]]);
            let top = g.slice_rows(c, 1, 2);
            let left = g.slice_cols(v[0], 1, 2);
            let rows = g.concat_rows(&[top, g.concat_cols(&[left, g.slice_cols(v[1], 0, 1), g.slice_cols(v[1], 0, 2)])]);
            let picked = g.select_rows(rows, &[2, 0, 2]);
            let w3 = g.slice_rows(v[2], 0, 3);
            g.sum(g.mul(picked, w3))
        })
        .unwrap();
    }

    #[test]
    fn masked_entries_get_zero_weight() {
        let g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 100.0], vec![2.0, 3.0]]));
        let s = g.softmax_rows(a, Some(Rc::new(Mask::causal(2))));
        let v = g.value(s);
        assert_eq!(v.row(0), &[1.0, 0.0]);
        assert!((v.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constants_are_not_differentiated() {
        let g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let p = g.param(Tensor::scalar(3.0));
        let y = g.sum(g.mul(c, p));
        let grads = g.backward(y);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().data(), &[2.0]);
    }

    impl Mask {
        fn rows_prefix(&self, rows: usize) -> Mask {
            Mask {
                rows,
                cols: self.cols,
                allowed: self.allowed[..rows * self.cols].to_vec(),
            }
        }
    }
}
