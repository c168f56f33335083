//! Reverse-mode differentiation over matrix-valued operations.
//!
//! A [`Tape`] records every operation in evaluation order; [`Tape::backward`]
//! walks it in reverse and accumulates vector-Jacobian products.

use std::sync::Arc;

use crate::tensor::Matrix;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Row-major boolean attention mask; `true` marks an allowed position.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    pub allowed: Vec<bool>,
}

impl Mask {
    pub fn allows(&self, r: usize, c: usize) -> bool {
        self.allowed[r * self.cols + c]
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Softmax(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds the `1×cols` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!(bias.rows(), 1, "add_row expects a single row");
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            v.row_mut(r).iter_mut().zip(bias.row(0)).for_each(|(x, b)| *x += b);
        }
        self.push(v, Op::AddRow(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Row-wise softmax. Masked entries are exactly zero; a fully masked row is all zeros.
    pub fn softmax(&mut self, a: Var, mask: Option<Arc<Mask>>) -> Var {
        let v = softmax_rows(self.value(a), mask.as_deref());
        self.push(v, Op::Softmax(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        let mut v = Matrix::zeros(src.rows(), len);
        for r in 0..src.rows() {
            v.row_mut(r).copy_from_slice(&src.row(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let src = self.value(*p);
                v.row_mut(r)[c0..c0 + src.cols()].copy_from_slice(src.row(r));
                c0 += src.cols();
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Per-row normalization followed by the `gain` and `bias` rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut normalized = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            normalized
                .row_mut(r)
                .iter_mut()
                .zip(row)
                .for_each(|(n, v)| *n = (v - mean) * is);
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let mut out = normalized.clone();
        for r in 0..rows {
            for c in 0..cols {
                out.set(r, c, normalized.get(r, c) * g.get(0, c) + b.get(0, c));
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
        )
    }

    /// Propagates `seed = ∂L/∂output` back through the tape.
    pub fn backward(&self, output: Var, seed: Matrix) -> Gradients {
        assert_eq!(seed.shape(), self.value(output).shape(), "seed shape");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = g.matmul(self.value(*b));
                    let db = g.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        db.row_mut(0).iter_mut().zip(g.row(r)).for_each(|(d, x)| *d += x);
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.map(|x| x * s)),
                Op::Tanh(a) => {
                    let y = &node.value;
                    let mut d = g;
                    d.data_mut()
                        .iter_mut()
                        .zip(y.data())
                        .for_each(|(d, y)| *d *= 1.0 - y * y);
                    accumulate(&mut grads, *a, d);
                }
                Op::Softmax(a) => {
                    let p = &node.value;
                    let mut d = Matrix::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let dot: f64 = p.row(r).iter().zip(g.row(r)).map(|(p, g)| p * g).sum();
                        for c in 0..p.cols() {
                            d.set(r, c, p.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let cols = self.value(*p).cols();
                        let mut d = Matrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + cols]);
                        }
                        c0 += cols;
                        accumulate(&mut grads, *p, d);
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let (rows, cols) = normalized.shape();
                    let mut dgain = Matrix::zeros(1, cols);
                    let mut dbias = Matrix::zeros(1, cols);
                    let mut dx = Matrix::zeros(rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let mut sum_dn = 0.0;
                        let mut sum_dn_n = 0.0;
                        let mut dn = vec![0.0; cols];
                        for c in 0..cols {
                            let gi = g.get(r, c);
                            dgain.data_mut()[c] += gi * normalized.get(r, c);
                            dbias.data_mut()[c] += gi;
                            dn[c] = gi * gv.get(0, c);
                            sum_dn += dn[c];
                            sum_dn_n += dn[c] * normalized.get(r, c);
                        }
                        for c in 0..cols {
                            let v = inv_std[r] / n * (n * dn[c] - sum_dn - normalized.get(r, c) * sum_dn_n);
                            dx.set(r, c, v);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *bias, dbias);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut grads[v.0] {
        Some(g) => g.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

/// Gradients of leaves after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

/// Row-wise softmax honouring an optional mask.
pub fn softmax_rows(x: &Matrix, mask: Option<&Mask>) -> Matrix {
    let (rows, cols) = x.shape();
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let allowed = |c: usize| mask.is_none_or(|m| m.allows(r, c));
        let max = (0..cols)
            .filter(|&c| allowed(c))
            .map(|c| x.get(r, c))
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        for c in 0..cols {
            if allowed(c) {
                let e = (x.get(r, c) - max).exp();
                out.set(r, c, e);
                sum += e;
            }
        }
        out.row_mut(r).iter_mut().for_each(|v| *v /= sum);
    }
    out
}
