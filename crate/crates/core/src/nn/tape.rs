//! Wengert-list reverse-mode differentiation over row-major matrices.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the list in reverse, accumulating gradients for every node that
//! (transitively) depends on a leaf created with `requires_grad`.

use std::borrow::Cow;

use super::tensor::{Real, Tensor};
use super::NnError;

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Selu(Var),
    Exp(Var),
    Scale(Var, T),
    AddScalar(Var),
    Clamp(Var, T, T),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Gather { table: Var, indices: Vec<usize> },
    Mask(Var, Vec<T>),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    Sum(Var),
}

struct Node<'a, T: Clone> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(what: &str, a: &[usize], b: &[usize]) -> NnError {
    NnError::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf borrowing a parameter tensor without copying it.
    pub fn param(&mut self, value: &'a Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// `x·W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.rows() || wv.shape().len() != 2 {
            return Err(mismatch("linear", xv.shape(), wv.shape()));
        }
        let mut out = xv.matmul(wv)?;
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != out.cols() {
                return Err(mismatch("linear bias", out.shape(), bv.shape()));
            }
            let m = out.cols();
            for (i, o) in out.data_mut().iter_mut().enumerate() {
                *o += bv.data()[i % m];
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(Cow::Owned(out), Op::Linear { x, w, b }, rg))
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var, NnError> {
        self.linear(x, w, None)
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() || av.cols() != bv.cols() {
            return Err(mismatch(what, av.shape(), bv.shape()));
        }
        let out = av.zip_map(bv, f);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Cow::Owned(out), op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(out), op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, relu, Op::Relu(a))
    }

    pub fn selu(&mut self, a: Var) -> Var {
        self.unary(a, selu, Op::Selu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let v = self.value(*p);
                if v.rows() != rows {
                    return Err(mismatch("concat_cols", self.value(parts[0]).shape(), v.shape()));
                }
                out.extend_from_slice(v.row(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Cow::Owned(Tensor::matrix(rows, total, out)), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a);
        assert!(start + len <= v.cols(), "slice_cols out of range");
        let rows = v.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v.row(r)[start..start + len]);
        }
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(Tensor::matrix(rows, len, out)), Op::SliceCols(a, start), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let cols = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]).shape(), v.shape()));
            }
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let rg = self.rg(parts);
        Ok(self.push(Cow::Owned(Tensor::matrix(rows, cols, out)), Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a);
        let cols = v.cols();
        assert!(start + len <= v.rows(), "slice_rows out of range");
        let out = v.data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(Tensor::matrix(len, cols, out)), Op::SliceRows(a, start), rg)
    }

    /// Row lookup: output row `i` is `table[indices[i]]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var, NnError> {
        let t = self.value(table);
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(NnError::IndexOutOfRange { index: i, len: rows });
            }
            out.extend_from_slice(t.row(i));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Cow::Owned(Tensor::matrix(indices.len(), cols, out)),
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Vec<T>) -> Var {
        let v = self.value(a);
        assert_eq!(v.len(), mask.len(), "mask length");
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect())
            .expect("same shape");
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(out), Op::Mask(a, mask), rg)
    }

    /// Summed softmax cross-entropy (nats) of each logit row against its target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NnError> {
        let l = self.value(logits);
        if l.rows() != targets.len() {
            return Err(NnError::ShapeMismatch(format!(
                "cross_entropy: {} rows, {} targets",
                l.rows(),
                targets.len()
            )));
        }
        let k = l.cols();
        let mut probs = Vec::with_capacity(l.len());
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(NnError::IndexOutOfRange { index: t, len: k });
            }
            let row = l.row(r);
            let (p, nll) = softmax_nll(row, t);
            total += nll;
            probs.extend(p);
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(total)),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum(a), rg)
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), T::one()));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.as_ref();
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, k, m) = (xv.rows(), xv.cols(), wv.cols());
                if needs(x) {
                    let mut gx = vec![T::zero(); n * k];
                    T::gemm(n, m, k, g.data(), m as isize, 1, wv.data(), 1, m as isize, &mut gx, T::zero());
                    acc(*x, Tensor::new(xv.shape().to_vec(), gx).expect("shape"));
                }
                if needs(w) {
                    let mut gw = vec![T::zero(); k * m];
                    T::gemm(k, n, m, xv.data(), 1, k as isize, g.data(), m as isize, 1, &mut gw, T::zero());
                    acc(*w, Tensor::new(wv.shape().to_vec(), gw).expect("shape"));
                }
                if let Some(b) = b.filter(|b| needs(b)) {
                    let mut gb = vec![T::zero(); m];
                    for r in 0..n {
                        for (o, &v) in gb.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(b, Tensor::new(self.value(b).shape().to_vec(), gb).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    acc(*a, g.clone());
                }
                if needs(b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    acc(*a, g.clone());
                }
                if needs(b) {
                    acc(*b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if needs(b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Sigmoid(a) => acc(*a, g.zip_map(out, |g, y| g * y * (T::one() - y))),
            Op::Tanh(a) => acc(*a, g.zip_map(out, |g, y| g * (T::one() - y * y))),
            Op::Relu(a) => acc(*a, g.zip_map(out, |g, y| if y > T::zero() { g } else { T::zero() })),
            Op::Selu(a) => {
                let (lambda, la) = (T::c(SELU_LAMBDA), T::c(SELU_LAMBDA * SELU_ALPHA));
                let xin = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(xin.data())
                    .map(|((&g, &y), &x)| if x > T::zero() { g * lambda } else { g * (y + la) })
                    .collect();
                acc(*a, Tensor::new(g.shape().to_vec(), data).expect("shape"));
            }
            Op::Exp(a) => acc(*a, g.zip_map(out, |g, y| g * y)),
            Op::Scale(a, c) => acc(*a, g.map(|x| x * *c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Clamp(a, lo, hi) => {
                let xin = self.value(*a);
                acc(*a, g.zip_map(xin, |g, x| if x > *lo && x < *hi { g } else { T::zero() }));
            }
            Op::ConcatCols(parts) => {
                let rows = out.rows();
                let mut start = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let c = pv.cols();
                    if needs(p) {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row(r)[start..start + c]);
                        }
                        acc(*p, Tensor::new(pv.shape().to_vec(), d).expect("shape"));
                    }
                    start += c;
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let mut d = Tensor::zeros(av.shape());
                let (cols, len) = (av.cols(), out.cols());
                for r in 0..out.rows() {
                    d.data_mut()[r * cols + start..r * cols + start + len].copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let n = pv.len();
                    if needs(p) {
                        acc(*p, Tensor::new(pv.shape().to_vec(), g.data()[offset..offset + n].to_vec()).expect("shape"));
                    }
                    offset += n;
                }
            }
            Op::SliceRows(a, start) => {
                let av = self.value(*a);
                let mut d = Tensor::zeros(av.shape());
                let off = start * av.cols();
                d.data_mut()[off..off + g.len()].copy_from_slice(g.data());
                acc(*a, d);
            }
            Op::Gather { table, indices } => {
                let tv = self.value(*table);
                let cols = tv.cols();
                let mut d = Tensor::zeros(tv.shape());
                for (r, &i) in indices.iter().enumerate() {
                    for (o, &v) in d.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*table, d);
            }
            Op::Mask(a, mask) => {
                let data = g.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                acc(*a, Tensor::new(g.shape().to_vec(), data).expect("shape"));
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let lv = self.value(*logits);
                let k = lv.cols();
                let s = g.item();
                let mut d: Vec<T> = probs.iter().map(|&p| p * s).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * k + t] -= s;
                }
                acc(*logits, Tensor::new(lv.shape().to_vec(), d).expect("shape"));
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                acc(*a, Tensor::full(av.shape(), g.item()));
            }
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn relu<T: Real>(x: T) -> T {
    x.max(T::zero())
}

pub fn selu<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::c(SELU_LAMBDA) * x
    } else {
        T::c(SELU_LAMBDA * SELU_ALPHA) * (x.exp() - T::one())
    }
}

/// Softmax probabilities of `row` and `-log p[target]`, max-subtracted.
pub fn softmax_nll<T: Real>(row: &[T], target: usize) -> (Vec<T>, T) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&x| (x - max).exp()).collect();
    let z: T = exps.iter().copied().sum();
    let nll = z.ln() - (row[target] - max);
    (exps.into_iter().map(|e| e / z).collect(), nll)
}
