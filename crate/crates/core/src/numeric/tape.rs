//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its forward value plus whatever it
//! needs for the backward pass. Parents always precede children, so the
//! backward sweep is a single reverse scan. A tape lives for one forward pass
//! and is dropped after `backward`; parameters are borrowed, not copied.

use std::borrow::Cow;

use rand::Rng;

use super::kernels::{axpy, dot};
use super::{NumericError, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    /// `x · wᵀ + b` with `x: [rows × inp]`, `w: [out × inp]`.
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
        inp: usize,
        out: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Reshape(Var),
    Transpose {
        x: Var,
        rows: usize,
        cols: usize,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
        width: usize,
    },
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        width: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
    Rows {
        x: Var,
        start: usize,
    },
    Cols {
        x: Var,
        start: usize,
        width_in: usize,
    },
    ConcatCols {
        parts: Vec<(Var, usize)>,
        rows: usize,
    },
}

struct Node<'p, T: Clone> {
    shape: Vec<usize>,
    value: Cow<'p, [T]>,
    op: Op<T>,
    needs_grad: bool,
}

fn slot<'g, T: Scalar>(
    nodes: &[Node<'_, T>],
    grads: &'g mut [Option<Vec<T>>],
    v: Var,
) -> Option<&'g mut Vec<T>> {
    let n = &nodes[v.0];
    if !n.needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n.value.len()]))
}

/// Gradients of a scalar loss with respect to every recorded value.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when `var` does not influence the loss through a trainable path.
    pub fn wrt(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

pub struct Tape<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims2(op: &'static str, shape: &[usize]) -> Result<(usize, usize), NumericError> {
    match *shape {
        [r, c] => Ok((r, c)),
        _ => Err(NumericError::InvalidArgument {
            op,
            msg: format!("expected a 2-D tensor, got shape {shape:?}"),
        }),
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'p, [T]>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a borrowed tensor; trainable iff `tensor.requires_grad()`.
    pub fn bind(&mut self, tensor: &'p Tensor<T>) -> Var {
        self.push(
            tensor.shape().to_vec(),
            Cow::Borrowed(tensor.values()),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    /// Records an owned tensor; trainable iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        self.push(shape, Cow::Owned(tensor.into_values()), Op::Leaf, needs)
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<T>) -> Result<Var, NumericError> {
        Ok(self.leaf(Tensor::new(shape, values)?))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Copies a recorded value out as a standalone tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("recorded shape is consistent")
    }

    pub fn is_finite(&self, v: Var) -> bool {
        self.value(v).iter().all(|x| x.is_finite())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (m, k) = dims2("matmul", self.shape(a))?;
        let (k2, n) = dims2("matmul", self.shape(b))?;
        if k != k2 {
            return Err(NumericError::ShapeMismatch {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for kk in 0..k {
                axpy(row, av[i * k + kk], &bv[kk * n..(kk + 1) * n]);
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], Cow::Owned(out), Op::MatMul { a, b, m, k, n }, needs))
    }

    /// Affine map `x · wᵀ + b`, the layout used by every projection here.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumericError> {
        let (rows, inp) = dims2("linear", self.shape(x))?;
        let (out, inp2) = dims2("linear", self.shape(w))?;
        if inp != inp2 {
            return Err(NumericError::ShapeMismatch {
                op: "linear",
                left: self.shape(x).to_vec(),
                right: self.shape(w).to_vec(),
            });
        }
        if let Some(b) = b {
            if self.value(b).len() != out {
                return Err(NumericError::ShapeMismatch {
                    op: "linear bias",
                    left: self.shape(w).to_vec(),
                    right: self.shape(b).to_vec(),
                });
            }
        }
        let (xv, wv) = (self.value(x), self.value(w));
        let bv = b.map(|b| self.value(b));
        let mut y = vec![T::zero(); rows * out];
        for i in 0..rows {
            let xi = &xv[i * inp..(i + 1) * inp];
            for o in 0..out {
                let mut acc = dot(xi, &wv[o * inp..(o + 1) * inp]);
                if let Some(bv) = bv {
                    acc += bv[o];
                }
                y[i * out + o] = acc;
            }
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(
            vec![rows, out],
            Cow::Owned(y),
            Op::Linear {
                x,
                w,
                b,
                rows,
                inp,
                out,
            },
            needs,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericError::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.same_shape("add", a, b)?;
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| *x + *y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), Cow::Owned(out), Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.same_shape("mul", a, b)?;
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| *x * *y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), Cow::Owned(out), Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out: Vec<T> = self.value(x).iter().map(|v| *v * factor).collect();
        let needs = self.needs(x);
        self.push(self.shape(x).to_vec(), Cow::Owned(out), Op::Scale(x, factor), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let needs = self.needs(x);
        self.push(vec![1], Cow::Owned(vec![s]), Op::Sum(x), needs)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NumericError> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(NumericError::ShapeMismatch {
                op: "reshape",
                left: self.shape(x).to_vec(),
                right: shape,
            });
        }
        let value = self.value(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(shape, Cow::Owned(value), Op::Reshape(x), needs))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericError> {
        let (rows, cols) = dims2("transpose", self.shape(x))?;
        let xv = self.value(x);
        let mut out = vec![T::zero(); rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = xv[i * cols + j];
            }
        }
        let needs = self.needs(x);
        Ok(self.push(vec![cols, rows], Cow::Owned(out), Op::Transpose { x, rows, cols }, needs))
    }

    /// Embedding lookup: row `i` of the result is `table[ids[i]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericError> {
        let (vocab, width) = dims2("gather_rows", self.shape(table))?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(NumericError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                len: vocab,
            });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            out.extend_from_slice(&tv[id * width..(id + 1) * width]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            vec![ids.len(), width],
            Cow::Owned(out),
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
                width,
            },
            needs,
        ))
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, NumericError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(NumericError::InvalidArgument {
                op: "softmax",
                msg: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let len = shape[axis];
        if len == 0 {
            return Err(NumericError::InvalidArgument {
                op: "softmax",
                msg: "empty axis".into(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x);
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| xv[idx(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..len {
                    let e = (xv[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(shape, Cow::Owned(out), Op::Softmax { x, outer, len, inner }, needs))
    }

    /// Row-wise softmax of a 2-D tensor over the columns where `keep` is true.
    ///
    /// Masked columns get probability exactly zero, which is the same as
    /// adding −∞ to their scores but keeps every stored value finite.
    pub fn masked_softmax_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var, NumericError> {
        let (rows, cols) = dims2("masked_softmax_rows", self.shape(x))?;
        if keep.len() != cols {
            return Err(NumericError::ShapeMismatch {
                op: "masked_softmax_rows",
                left: self.shape(x).to_vec(),
                right: vec![keep.len()],
            });
        }
        if !keep.iter().any(|&k| k) {
            return Err(NumericError::InvalidArgument {
                op: "masked_softmax_rows",
                msg: "every position is masked".into(),
            });
        }
        let xv = self.value(x);
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let dst = &mut out[r * cols..(r + 1) * cols];
            let max = row
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for ((d, v), &k) in dst.iter_mut().zip(row).zip(keep) {
                if k {
                    *d = (*v - max).exp();
                    total += *d;
                }
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            vec![rows, cols],
            Cow::Owned(out),
            Op::Softmax {
                x,
                outer: rows,
                len: cols,
                inner: 1,
            },
            needs,
        ))
    }

    /// Layer normalization over the last dimension.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var, NumericError> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().unwrap_or(&0);
        if width == 0 {
            return Err(NumericError::InvalidArgument {
                op: "layer_norm",
                msg: "zero-length row".into(),
            });
        }
        if self.value(gain).len() != width || self.value(bias).len() != width {
            return Err(NumericError::ShapeMismatch {
                op: "layer_norm",
                left: shape,
                right: self.shape(gain).to_vec(),
            });
        }
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let rows = xv.len() / width;
        let inv_w = T::one() / T::lit(width as f64);
        let mut out = vec![T::zero(); xv.len()];
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xv[r * width..(r + 1) * width];
            let mean = row.iter().copied().sum::<T>() * inv_w;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_w;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..width {
                let h = (row[j] - mean) * rs;
                xhat[r * width + j] = h;
                out[r * width + j] = h * gv[j] + bv[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            shape,
            Cow::Owned(out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                width,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// Exact GELU: `x · Φ(x) = 0.5 x (1 + erf(x / √2))`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let half = T::lit(0.5);
        let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        let out: Vec<T> = self
            .value(x)
            .iter()
            .map(|&v| half * v * (T::one() + (v * inv_sqrt2).erf()))
            .collect();
        let needs = self.needs(x);
        self.push(self.shape(x).to_vec(), Cow::Owned(out), Op::Gelu(x), needs)
    }

    /// Inverted dropout. Identity (and no new node) when `rate == 0` or not training.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, NumericError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumericError::InvalidArgument {
                op: "dropout",
                msg: format!("rate {rate} outside [0, 1)"),
            });
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = T::lit(1.0 / (1.0 - rate));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let out: Vec<T> = self.value(x).iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        let needs = self.needs(x);
        Ok(self.push(self.shape(x).to_vec(), Cow::Owned(out), Op::Dropout { x, mask }, needs))
    }

    /// `−log softmax(logits)[target]` over all elements of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, NumericError> {
        let xv = self.value(logits);
        if target >= xv.len() {
            return Err(NumericError::IndexOutOfRange {
                op: "cross_entropy",
                index: target,
                len: xv.len(),
            });
        }
        let max = xv.iter().copied().fold(T::neg_infinity(), T::max);
        let total: T = xv.iter().map(|v| (*v - max).exp()).sum();
        let lse = max + total.ln();
        let probs: Vec<T> = xv.iter().map(|v| (*v - lse).exp()).collect();
        let loss = lse - xv[target];
        let needs = self.needs(logits);
        Ok(self.push(
            vec![1],
            Cow::Owned(vec![loss]),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            needs,
        ))
    }

    /// Rows `start..start + count` of a 2-D tensor.
    pub fn rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var, NumericError> {
        let (rows, width) = dims2("rows", self.shape(x))?;
        if start + count > rows {
            return Err(NumericError::IndexOutOfRange {
                op: "rows",
                index: start + count,
                len: rows,
            });
        }
        let value = self.value(x)[start * width..(start + count) * width].to_vec();
        let needs = self.needs(x);
        Ok(self.push(vec![count, width], Cow::Owned(value), Op::Rows { x, start }, needs))
    }

    /// Columns `start..start + count` of a 2-D tensor.
    pub fn cols(&mut self, x: Var, start: usize, count: usize) -> Result<Var, NumericError> {
        let (rows, width_in) = dims2("cols", self.shape(x))?;
        if start + count > width_in {
            return Err(NumericError::IndexOutOfRange {
                op: "cols",
                index: start + count,
                len: width_in,
            });
        }
        let xv = self.value(x);
        let mut value = Vec::with_capacity(rows * count);
        for r in 0..rows {
            value.extend_from_slice(&xv[r * width_in + start..r * width_in + start + count]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            vec![rows, count],
            Cow::Owned(value),
            Op::Cols { x, start, width_in },
            needs,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let first = parts.first().ok_or(NumericError::InvalidArgument {
            op: "concat_cols",
            msg: "no inputs".into(),
        })?;
        let (rows, _) = dims2("concat_cols", self.shape(*first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, w) = dims2("concat_cols", self.shape(p))?;
            if r != rows {
                return Err(NumericError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(*first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            widths.push(w);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            vec![rows, total],
            Cow::Owned(out),
            Op::ConcatCols {
                parts: parts.iter().copied().zip(widths).collect(),
                rows,
            },
            needs,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericError> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(NumericError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if !self.needs(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&self.nodes[i], &g, &mut grads);
            debug_assert!(g.iter().all(|v| v.is_finite()), "non-finite gradient at node {i}");
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'p, T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = slot(nodes, grads, a) {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            ga[i * k + kk] += dot(gi, &bv[kk * n..(kk + 1) * n]);
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            axpy(&mut gb[kk * n..(kk + 1) * n], av[i * k + kk], gi);
                        }
                    }
                }
            }
            &Op::Linear {
                x,
                w,
                b,
                rows,
                inp,
                out,
            } => {
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                if let Some(gx) = slot(nodes, grads, x) {
                    for i in 0..rows {
                        let gxi = &mut gx[i * inp..(i + 1) * inp];
                        for o in 0..out {
                            axpy(gxi, g[i * out + o], &wv[o * inp..(o + 1) * inp]);
                        }
                    }
                }
                if let Some(gw) = slot(nodes, grads, w) {
                    for i in 0..rows {
                        let xi = &xv[i * inp..(i + 1) * inp];
                        for o in 0..out {
                            axpy(&mut gw[o * inp..(o + 1) * inp], g[i * out + o], xi);
                        }
                    }
                }
                if let Some(gb) = b.and_then(|b| slot(nodes, grads, b)) {
                    for i in 0..rows {
                        for o in 0..out {
                            gb[o] += g[i * out + o];
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, grads, a) {
                    axpy(ga, T::one(), g);
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    axpy(gb, T::one(), g);
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = slot(nodes, grads, a) {
                    for ((d, gi), bi) in ga.iter_mut().zip(g).zip(bv.iter()) {
                        *d += *gi * *bi;
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for ((d, gi), ai) in gb.iter_mut().zip(g).zip(av.iter()) {
                        *d += *gi * *ai;
                    }
                }
            }
            &Op::Scale(x, factor) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    axpy(gx, factor, g);
                }
            }
            &Op::Sum(x) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Reshape(x) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    axpy(gx, T::one(), g);
                }
            }
            &Op::Transpose { x, rows, cols } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    for i in 0..rows {
                        for j in 0..cols {
                            gx[i * cols + j] += g[j * rows + i];
                        }
                    }
                }
            }
            Op::GatherRows { table, ids, width } => {
                let width = *width;
                if let Some(gt) = slot(nodes, grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(&mut gt[id * width..(id + 1) * width], T::one(), &g[r * width..(r + 1) * width]);
                    }
                }
            }
            &Op::Softmax { x, outer, len, inner } => {
                let y = &node.value;
                if let Some(gx) = slot(nodes, grads, x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + i;
                            let s: T = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..len {
                                gx[idx(j)] += y[idx(j)] * (g[idx(j)] - s);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                width,
                xhat,
                rstd,
            } => {
                let width = *width;
                let gv = &nodes[gain.0].value;
                let rows = xhat.len() / width;
                if let Some(gg) = slot(nodes, grads, *gain) {
                    for r in 0..rows {
                        for j in 0..width {
                            gg[j] += g[r * width + j] * xhat[r * width + j];
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *bias) {
                    for r in 0..rows {
                        axpy(gb, T::one(), &g[r * width..(r + 1) * width]);
                    }
                }
                if let Some(gx) = slot(nodes, grads, *x) {
                    let inv_w = T::one() / T::lit(width as f64);
                    let mut dxhat = vec![T::zero(); width];
                    for r in 0..rows {
                        let gr = &g[r * width..(r + 1) * width];
                        let hr = &xhat[r * width..(r + 1) * width];
                        for j in 0..width {
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let m1 = dxhat.iter().copied().sum::<T>() * inv_w;
                        let m2 = dot(&dxhat, hr) * inv_w;
                        for j in 0..width {
                            gx[r * width + j] += rstd[r] * (dxhat[j] - m1 - hr[j] * m2);
                        }
                    }
                }
            }
            &Op::Gelu(x) => {
                let xv = &nodes[x.0].value;
                if let Some(gx) = slot(nodes, grads, x) {
                    let half = T::lit(0.5);
                    let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
                    let inv_sqrt_2pi = T::lit(1.0 / (2.0 * std::f64::consts::PI).sqrt());
                    for ((d, gi), &v) in gx.iter_mut().zip(g).zip(xv.iter()) {
                        let cdf = half * (T::one() + (v * inv_sqrt2).erf());
                        let pdf = (-half * v * v).exp() * inv_sqrt_2pi;
                        *d += *gi * (cdf + v * pdf);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((d, gi), m) in gx.iter_mut().zip(g).zip(mask) {
                        *d += *gi * *m;
                    }
                }
            }
            Op::CrossEntropy { logits, target, probs } => {
                if let Some(gl) = slot(nodes, grads, *logits) {
                    for (j, (d, p)) in gl.iter_mut().zip(probs).enumerate() {
                        let onehot = if j == *target { T::one() } else { T::zero() };
                        *d += g[0] * (*p - onehot);
                    }
                }
            }
            &Op::Rows { x, start } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    let offset = start * node.shape[1];
                    axpy(&mut gx[offset..offset + g.len()], T::one(), g);
                }
            }
            &Op::Cols { x, start, width_in } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    let (rows, count) = (node.shape[0], node.shape[1]);
                    for r in 0..rows {
                        axpy(
                            &mut gx[r * width_in + start..r * width_in + start + count],
                            T::one(),
                            &g[r * count..(r + 1) * count],
                        );
                    }
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total = node.shape[1];
                let mut offset = 0;
                for &(p, w) in parts {
                    if let Some(gp) = slot(nodes, grads, p) {
                        for r in 0..*rows {
                            axpy(
                                &mut gp[r * w..(r + 1) * w],
                                T::one(),
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
        }
    }
}
