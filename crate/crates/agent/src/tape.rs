//! Minimal reverse-mode automatic differentiation over dense f64 matrices.
//!
//! A [`Tape`] records every operation in evaluation order; [`Tape::backward`]
//! walks it in reverse and accumulates gradients. Only the operations needed
//! by the graph networks and the PPO loss are provided.

use std::borrow::Cow;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape does not match data");
        Self { rows, cols, data }
    }

    pub fn column(values: Vec<f64>) -> Self {
        let rows = values.len();
        Self::from_vec(rows, 1, values)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` with optional transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(
    alpha: f64,
    a: &Matrix,
    trans_a: bool,
    b: &Matrix,
    trans_b: bool,
    beta: f64,
    c: &mut Matrix,
) {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "inner dimensions differ");
    assert_eq!((c.rows, c.cols), (m, n), "output shape mismatch");
    let (rsa, csa) = if trans_a { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.data.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    // SAFETY: strides and dimensions describe the owned buffers exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm(1.0, a, false, b, false, 0.0, &mut c);
    c
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Sparse linear map `out[o] += w * in[i]` over rows.
pub type RowMap = Rc<Vec<(usize, usize, f64)>>;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    MulConst(Var, Rc<Matrix>),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Minimum(Var, Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    RowCombine(Var, RowMap),
    Reshape(Var),
    SegmentSoftmax(Var, Rc<Vec<usize>>),
    MaskedLogSoftmax(Var, Rc<Vec<bool>>),
    Pick(Var, Rc<Vec<usize>>),
    Sum(Var),
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
}

/// Recording of a computation; borrowed leaves avoid copying parameters.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn leaf_ref(&mut self, value: &'a Matrix) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// Adds a `1 x n` row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!((bv.rows, bv.cols), (1, xv.cols), "bias shape");
        let mut out = xv.clone();
        for row in out.data.chunks_mut(bv.cols.max(1)) {
            for (o, b) in row.iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(x, bias))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "elementwise shape");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect();
        let out = Matrix::from_vec(av.rows, av.cols, data);
        self.push(out, op)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = self.value(x);
        let out = Matrix::from_vec(xv.rows, xv.cols, xv.data.iter().map(|v| f(*v)).collect());
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, f64::min, Op::Minimum(a, b))
    }

    /// Scales row `i` of `x` by `c[i]` where `c` is a column.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Var {
        let (xv, cv) = (self.value(x), self.value(c));
        assert_eq!((cv.rows, cv.cols), (xv.rows, 1), "column shape");
        let mut out = xv.clone();
        for (row, s) in out.data.chunks_mut(xv.cols.max(1)).zip(&cv.data) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        self.push(out, Op::MulCol(x, c))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Rc<Matrix>) -> Var {
        let xv = self.value(x);
        assert_eq!((c.rows, c.cols), (xv.rows, xv.cols), "constant shape");
        let data = xv.data.iter().zip(&c.data).map(|(a, b)| a * b).collect();
        let out = Matrix::from_vec(xv.rows, xv.cols, data);
        self.push(out, Op::MulConst(x, c))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.map(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// Horizontal concatenation of equal-height matrices.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows, "concat height");
            for r in 0..rows {
                out.data[r * cols + offset..r * cols + offset + pv.cols].copy_from_slice(pv.row(r));
            }
            offset += pv.cols;
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    /// `out[o] = sum of w * x[i]` over `(o, i, w)` entries; `out` has `rows` rows.
    pub fn row_combine(&mut self, x: Var, map: RowMap, rows: usize) -> Var {
        let xv = self.value(x);
        let cols = xv.cols;
        let mut out = Matrix::zeros(rows, cols);
        for &(o, i, w) in map.iter() {
            let src = &xv.data[i * cols..(i + 1) * cols];
            for (d, s) in out.data[o * cols..(o + 1) * cols].iter_mut().zip(src) {
                *d += w * s;
            }
        }
        self.push(out, Op::RowCombine(x, map))
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let mut out = self.value(x).clone();
        assert_eq!(out.len(), rows * cols, "reshape size");
        out.rows = rows;
        out.cols = cols;
        self.push(out, Op::Reshape(x))
    }

    /// Softmax of a column within groups given by `segment[i]`.
    pub fn segment_softmax(&mut self, x: Var, segment: Rc<Vec<usize>>) -> Var {
        let xv = self.value(x);
        assert_eq!((xv.rows, xv.cols), (segment.len(), 1), "segment softmax shape");
        let groups = segment.iter().copied().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; groups];
        for (v, &s) in xv.data.iter().zip(segment.iter()) {
            max[s] = max[s].max(*v);
        }
        let mut sum = vec![0.0; groups];
        let mut out: Vec<f64> = xv
            .data
            .iter()
            .zip(segment.iter())
            .map(|(v, &s)| {
                let e = (v - max[s]).exp();
                sum[s] += e;
                e
            })
            .collect();
        for (o, &s) in out.iter_mut().zip(segment.iter()) {
            *o /= sum[s];
        }
        let out = Matrix::column(out);
        self.push(out, Op::SegmentSoftmax(x, segment))
    }

    /// Row-wise log-softmax restricted to `mask`; masked cells (and rows
    /// with no valid cell) hold 0 and receive no gradient.
    pub fn masked_log_softmax(&mut self, x: Var, mask: Rc<Vec<bool>>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), mask.len(), "mask shape");
        let mut out = Matrix::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let m = &mask[r * xv.cols..(r + 1) * xv.cols];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &ok)| ok)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let lse = max
                + row
                    .iter()
                    .zip(m)
                    .filter(|(_, &ok)| ok)
                    .map(|(v, _)| (v - max).exp())
                    .sum::<f64>()
                    .ln();
            for c in 0..xv.cols {
                if m[c] {
                    out.data[r * xv.cols + c] = row[c] - lse;
                }
            }
        }
        self.push(out, Op::MaskedLogSoftmax(x, mask))
    }

    /// Picks column `index[r]` from each row into a column vector.
    pub fn pick(&mut self, x: Var, index: Rc<Vec<usize>>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows, index.len(), "pick length");
        let out = Matrix::column(
            index
                .iter()
                .enumerate()
                .map(|(r, &c)| xv.data[r * xv.cols + c])
                .collect(),
        );
        self.push(out, Op::Pick(x, index))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Matrix::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Gradients of the scalar `output` with respect to every recorded value.
    pub fn backward(&self, output: Var) -> Gradients {
        let ov = self.value(output);
        assert_eq!(ov.len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            let out = &node.value;
            let mut acc = |v: Var, delta: Matrix| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    gemm(1.0, &g, false, bv, true, 0.0, &mut ga);
                    let mut gb = Matrix::zeros(bv.rows, bv.cols);
                    gemm(1.0, av, true, &g, false, 0.0, &mut gb);
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::AddBias(x, b) => {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for row in g.data.chunks(g.cols.max(1)) {
                        for (s, v) in gb.data.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    acc(*b, gb);
                    acc(*x, g);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    let neg = Matrix::from_vec(g.rows, g.cols, g.data.iter().map(|v| -v).collect());
                    acc(*a, g);
                    acc(*b, neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, elementwise(&g, bv, |x, y| x * y));
                    acc(*b, elementwise(&g, av, |x, y| x * y));
                }
                Op::MulCol(x, c) => {
                    let (xv, cv) = (self.value(*x), self.value(*c));
                    let cols = xv.cols.max(1);
                    let mut gx = g.clone();
                    let mut gc = Matrix::zeros(cv.rows, 1);
                    for r in 0..xv.rows {
                        let s = cv.data[r];
                        let mut dot = 0.0;
                        for j in 0..xv.cols {
                            dot += g.data[r * cols + j] * xv.data[r * cols + j];
                            gx.data[r * cols + j] *= s;
                        }
                        gc.data[r] = dot;
                    }
                    acc(*x, gx);
                    acc(*c, gc);
                }
                Op::MulConst(x, c) => acc(*x, elementwise(&g, c, |a, b| a * b)),
                Op::Scale(x, s) => acc(*x, elementwise(&g, &g, |a, _| a * s)),
                Op::AddScalar(x) => acc(*x, g),
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    acc(*x, elementwise(&g, xv, |d, v| if v > 0.0 { d } else { 0.0 }));
                }
                Op::LeakyRelu(x, slope) => {
                    let xv = self.value(*x);
                    acc(*x, elementwise(&g, xv, |d, v| if v > 0.0 { d } else { slope * d }));
                }
                Op::Tanh(x) => acc(*x, elementwise(&g, out, |d, y| d * (1.0 - y * y))),
                Op::Exp(x) => acc(*x, elementwise(&g, out, |d, y| d * y)),
                Op::Square(x) => {
                    let xv = self.value(*x);
                    acc(*x, elementwise(&g, xv, |d, v| 2.0 * d * v));
                }
                Op::Minimum(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = Matrix::from_vec(
                        g.rows,
                        g.cols,
                        (0..g.len())
                            .map(|i| if av.data[i] <= bv.data[i] { g.data[i] } else { 0.0 })
                            .collect(),
                    );
                    let gb = Matrix::from_vec(
                        g.rows,
                        g.cols,
                        (0..g.len())
                            .map(|i| if av.data[i] <= bv.data[i] { 0.0 } else { g.data[i] })
                            .collect(),
                    );
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Clamp(x, lo, hi) => {
                    let xv = self.value(*x);
                    acc(
                        *x,
                        elementwise(&g, xv, |d, v| if v >= *lo && v <= *hi { d } else { 0.0 }),
                    );
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols;
                        let mut gp = Matrix::zeros(g.rows, pc);
                        for r in 0..g.rows {
                            gp.data[r * pc..(r + 1) * pc]
                                .copy_from_slice(&g.data[r * g.cols + offset..r * g.cols + offset + pc]);
                        }
                        offset += pc;
                        acc(p, gp);
                    }
                }
                Op::RowCombine(x, map) => {
                    let xv = self.value(*x);
                    let cols = xv.cols;
                    let mut gx = Matrix::zeros(xv.rows, cols);
                    for &(o, i, w) in map.iter() {
                        let src = &g.data[o * cols..(o + 1) * cols];
                        for (d, s) in gx.data[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                    acc(*x, gx);
                }
                Op::Reshape(x) => {
                    let xv = self.value(*x);
                    acc(*x, Matrix::from_vec(xv.rows, xv.cols, g.data));
                }
                Op::SegmentSoftmax(x, segment) => {
                    let groups = segment.iter().copied().max().map_or(0, |m| m + 1);
                    let mut dot = vec![0.0; groups];
                    for ((y, d), &s) in out.data.iter().zip(&g.data).zip(segment.iter()) {
                        dot[s] += y * d;
                    }
                    let gx = out
                        .data
                        .iter()
                        .zip(&g.data)
                        .zip(segment.iter())
                        .map(|((y, d), &s)| y * (d - dot[s]))
                        .collect();
                    acc(*x, Matrix::column(gx));
                }
                Op::MaskedLogSoftmax(x, mask) => {
                    let cols = out.cols;
                    let mut gx = Matrix::zeros(out.rows, cols);
                    for r in 0..out.rows {
                        let m = &mask[r * cols..(r + 1) * cols];
                        let total: f64 = (0..cols).filter(|&c| m[c]).map(|c| g.data[r * cols + c]).sum();
                        for c in 0..cols {
                            if m[c] {
                                let p = out.data[r * cols + c].exp();
                                gx.data[r * cols + c] = g.data[r * cols + c] - p * total;
                            }
                        }
                    }
                    acc(*x, gx);
                }
                Op::Pick(x, index) => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    for (r, &c) in index.iter().enumerate() {
                        gx.data[r * xv.cols + c] += g.data[r];
                    }
                    acc(*x, gx);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    acc(*x, Matrix::from_vec(xv.rows, xv.cols, vec![g.data[0]; xv.len()]));
                }
            }
        }
        Gradients(grads)
    }
}

fn elementwise(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect(),
    )
}

/// Gradients indexed by [`Var`]; `None` where the output does not depend on it.
pub struct Gradients(Vec<Option<Matrix>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: &dyn Fn(&Matrix) -> f64, x: &Matrix) -> Matrix {
        let h = 1e-6;
        let mut g = Matrix::zeros(x.rows, x.cols);
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data[i] += h;
            let mut minus = x.clone();
            minus.data[i] -= h;
            g.data[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    fn check(build: impl Fn(&mut Tape, Var) -> Var, x: Matrix) {
        let eval = |m: &Matrix| {
            let mut t = Tape::new();
            let v = t.leaf(m.clone());
            let out = build(&mut t, v);
            t.value(out).data[0]
        };
        let mut t = Tape::new();
        let v = t.leaf(x.clone());
        let out = build(&mut t, v);
        let grads = t.backward(out);
        let analytic = grads.get(v).cloned().unwrap_or_else(|| Matrix::zeros(x.rows, x.cols));
        let numeric = numeric_grad(&eval, &x);
        for (a, n) in analytic.data.iter().zip(&numeric.data) {
            assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "analytic {a} numeric {n}");
        }
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    #[test]
    fn matmul_matches_naive() {
        let a = sample(3, 4, 1);
        let b = sample(4, 2, 2);
        let c = matmul(&a, &b);
        for i in 0..3 {
            for j in 0..2 {
                let want: f64 = (0..4).map(|k| a.get(i, k) * b.get(k, j)).sum();
                assert!((c.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_of_each_op() {
        let w = sample(4, 3, 9);
        let bias = sample(1, 3, 10);
        check(
            |t, x| {
                let wv = t.leaf(w.clone());
                let bv = t.leaf(bias.clone());
                let y = t.matmul(x, wv);
                let y = t.add_bias(y, bv);
                let y = t.tanh(y);
                let y = t.square(y);
                t.sum(y)
            },
            sample(5, 4, 3),
        );
        check(
            |t, x| {
                let y = t.leaky_relu(x, 0.2);
                let z = t.relu(x);
                let y = t.mul(y, z);
                let y = t.exp(y);
                t.mean(y)
            },
            sample(3, 3, 4),
        );
        check(
            |t, x| {
                let map: RowMap = Rc::new(vec![(0, 0, 1.0), (0, 2, 0.5), (1, 1, -2.0), (1, 2, 1.0)]);
                let y = t.row_combine(x, map, 2);
                let y = t.concat(&[y, y]);
                let y = t.reshape(y, 4, 2);
                let y = t.scale(y, 3.0);
                let y = t.add_scalar(y, 1.0);
                let y = t.square(y);
                t.sum(y)
            },
            sample(3, 2, 5),
        );
        check(
            |t, x| {
                let seg = Rc::new(vec![0, 1, 0, 1, 1]);
                let col = t.reshape(x, 5, 1);
                let y = t.segment_softmax(col, seg);
                let w = t.leaf(sample(5, 1, 6));
                let y = t.mul(y, w);
                t.sum(y)
            },
            sample(1, 5, 7),
        );
        check(
            |t, x| {
                let mask = Rc::new(vec![true, false, true, true, true, false, false, false, false]);
                let l = t.masked_log_softmax(x, mask);
                let picked = t.pick(l, Rc::new(vec![2, 0, 1]));
                let e = t.exp(l);
                let ent = t.mul(e, l);
                let a = t.sum(ent);
                let b = t.sum(picked);
                t.add(a, b)
            },
            sample(3, 3, 8),
        );
        check(
            |t, x| {
                let c = t.leaf(sample(4, 1, 11));
                let y = t.mul_col(x, c);
                let other = t.leaf(sample(4, 2, 12));
                let m = t.minimum(y, other);
                let cl = t.clamp(m, -0.3, 0.3);
                let k = t.mul_const(cl, Rc::new(sample(4, 2, 13)));
                let d = t.sub(k, other);
                t.sum(d)
            },
            sample(4, 2, 14),
        );
    }

    #[test]
    fn masked_log_softmax_normalizes() {
        let mut t = Tape::new();
        let x = t.leaf(sample(2, 4, 20));
        let mask = Rc::new(vec![true, true, false, true, false, false, false, false]);
        let l = t.masked_log_softmax(x, mask);
        let v = t.value(l);
        let total: f64 = [0, 1, 3].iter().map(|&c| v.get(0, c).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(v.get(0, 2), 0.0);
        assert!(v.row(1).iter().all(|&x| x == 0.0));
    }
}
