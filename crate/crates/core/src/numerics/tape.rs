//! Reverse-mode differentiation over a linear tape of tensor operations.

use std::sync::Arc;

use rand::Rng;

use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
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
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Concat {
        parts: Vec<Var>,
        sizes: Vec<usize>,
        outer: usize,
        inner: usize,
    },
    MeanPool {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<F>,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<(usize, usize, F)>,
        probs: Vec<F>,
    },
    Kl {
        logits: Var,
        target: Vec<F>,
        probs: Vec<F>,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Arc<Tensor<F>>,
    op: Op<F>,
    requires_grad: bool,
}

/// Ordered record of executed operations. Backward walks it in exact reverse
/// order. Gradients from repeated `backward` calls accumulate until
/// [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape<F: Real = f32> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
}

fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape("axis", format!("axis {axis} for shape {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn check_finite<F: Real>(data: &[F], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

fn log_softmax_row<F: Real>(row: &[F], probs: &mut [F]) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for (p, &v) in probs.iter_mut().zip(row) {
        *p = (v - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    max + sum.ln()
}

fn accumulate<F: Real>(slot: &mut Option<Vec<F>>, len: usize) -> &mut Vec<F> {
    slot.get_or_insert_with(|| vec![F::zero(); len])
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
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

    /// Drops every recorded node together with saved intermediates and gradients.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool, name: &'static str) -> Result<Var> {
        check_finite(value.data(), name)?;
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf, requires_grad, "leaf")
    }

    /// Records a leaf that shares storage with the caller (parameters).
    pub fn leaf_shared(&mut self, value: Arc<Tensor<F>>, requires_grad: bool) -> Result<Var> {
        check_finite(value.data(), "leaf")?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value.data()[0]
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads[v.0].as_deref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg, "matmul")
    }

    /// `a · bᵀ` with `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("matmul_nt", format!("{sa:?} x {sb:?}ᵀ")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![F::zero(); m * n];
        gemm_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), rg, "matmul_nt")
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Sub(a, b), rg, "sub")
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Mul(a, b), rg, "mul")
    }

    /// Adds a row vector (length = last dimension of `a`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (_, c) = ta.dims2();
        if tr.len() != c {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", ta.shape(), tr.shape())));
        }
        let r = tr.data();
        let data = ta
            .data()
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| x + y))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(row);
        self.push(t, Op::AddRow(a, row), rg, "add_row")
    }

    pub fn scale(&mut self, a: Var, s: F) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| x * s).collect())?;
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, s), rg, "scale")
    }

    fn map(&mut self, a: Var, f: impl Fn(F) -> F) -> Result<Tensor<F>> {
        let ta = self.value(a);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, |x| if x > F::zero() { x } else { F::zero() })?;
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg, "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, |x| x.tanh())?;
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg, "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, |x| F::one() / (F::one() + (-x).exp()))?;
        let rg = self.rg(a);
        self.push(t, Op::Sigmoid(a), rg, "sigmoid")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.masked_softmax(x, axis, None)
    }

    /// Softmax along `axis`, max-subtracted. Entries whose mask is `false`
    /// receive probability exactly zero (additive −∞ masking).
    pub fn masked_softmax(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let tx = self.value(x);
        let (outer, len, inner) = split_axis(tx.shape(), axis)?;
        if let Some(m) = mask {
            if m.len() != tx.len() {
                return Err(Error::shape("softmax", "mask size differs from input"));
            }
        }
        let src = tx.data();
        let mut out = vec![F::zero(); src.len()];
        let keep = |i: usize| mask.map_or(true, |m| m[i]);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = F::neg_infinity();
                for l in 0..len {
                    let idx = base + l * inner;
                    if keep(idx) && src[idx] > max {
                        max = src[idx];
                    }
                }
                if max == F::neg_infinity() {
                    return Err(Error::shape("softmax", "every entry of a slice is masked"));
                }
                let mut sum = F::zero();
                for l in 0..len {
                    let idx = base + l * inner;
                    if keep(idx) {
                        let e = (src[idx] - max).exp();
                        out[idx] = e;
                        sum += e;
                    }
                }
                for l in 0..len {
                    out[base + l * inner] /= sum;
                }
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(x);
        self.push(t, Op::Softmax { x, outer, len, inner }, rg, "softmax")
    }

    /// Normalises each row (last axis) to zero mean and unit variance, then
    /// applies `gain` and `bias`. Epsilon 1e-5 inside the square root.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = tx.dims2();
        if cols < 2 {
            return Err(Error::shape("layer_norm", "last axis must have length >= 2"));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        if g.len() != cols || b.len() != cols {
            return Err(Error::shape("layer_norm", format!("gain/bias length vs {cols} columns")));
        }
        let eps = F::lit(1e-5);
        let n = F::from_usize(cols).unwrap();
        let mut xhat = vec![F::zero(); rows * cols];
        let mut rstd = vec![F::zero(); rows];
        let mut out = vec![F::zero(); rows * cols];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(t, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg, "layer_norm")
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base_shape = self.shape(*first).to_vec();
        let (outer, _, inner) = split_axis(&base_shape, axis)?;
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{s:?} vs {base_shape:?} on axis {axis}")));
            }
            sizes.push(s[axis]);
        }
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &sz) in parts.iter().zip(&sizes) {
                let d = self.value(p).data();
                out.extend_from_slice(&d[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                sizes,
                outer,
                inner,
            },
            rg,
            "concat",
        )
    }

    /// Mean over `axis`; the reduced axis is kept with length 1.
    pub fn mean_pool(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        let (outer, len, inner) = split_axis(tx.shape(), axis)?;
        let src = tx.data();
        let inv = F::one() / F::from_usize(len).unwrap();
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &src[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = tx.shape().to_vec();
        shape[axis] = 1;
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::MeanPool { x, outer, len, inner }, rg, "mean_pool")
    }

    /// Gathers rows of `table` (`V×d`) → `ids.len()×d`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = tt.dims2();
        if ids.is_empty() {
            return Err(Error::shape("embedding", "no ids"));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::IndexOutOfVocab { id, size: v });
            }
            out.extend_from_slice(tt.row(id));
        }
        let rg = self.rg(table);
        self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
            "embedding",
        )
    }

    /// Inverted dropout. Identity (same handle) when `train` is false.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = F::lit(1.0 / (1.0 - p));
        let tx = self.value(x);
        let mask: Vec<F> = (0..tx.len())
            .map(|_| if rng.random::<f64>() >= p { keep } else { F::zero() })
            .collect();
        let data = tx.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        self.push(t, Op::Dropout { x, mask }, rg, "dropout")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<F>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg, "sum")
    }

    /// `−Σ w · log softmax(logits)[row, class]` over `(row, class, w)` triples.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize, F)]) -> Result<Var> {
        let tl = self.value(logits);
        let (rows, cols) = tl.dims2();
        let mut probs = vec![F::zero(); rows * cols];
        let mut lse = vec![F::zero(); rows];
        for r in 0..rows {
            lse[r] = log_softmax_row(tl.row(r), &mut probs[r * cols..(r + 1) * cols]);
        }
        let mut loss = F::zero();
        for &(r, c, w) in targets {
            if r >= rows {
                return Err(Error::shape("cross_entropy", format!("row {r} of {rows}")));
            }
            if c >= cols {
                return Err(Error::IndexOutOfVocab { id: c, size: cols });
            }
            loss -= w * (tl.row(r)[c] - lse[r]);
        }
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
            "cross_entropy",
        )
    }

    /// `D_KL(target ‖ softmax(logits))` with `0·log 0 = 0`; `logits` is one row.
    pub fn kl_div(&mut self, logits: Var, target: &[F]) -> Result<Var> {
        let tl = self.value(logits);
        if tl.len() != target.len() {
            return Err(Error::shape("kl_div", format!("{} logits vs {} targets", tl.len(), target.len())));
        }
        let mut probs = vec![F::zero(); tl.len()];
        let lse = log_softmax_row(tl.data(), &mut probs);
        let mut loss = F::zero();
        for (&t, &z) in target.iter().zip(tl.data()) {
            if t > F::zero() {
                loss += t * (t.ln() - (z - lse));
            }
        }
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::Kl {
                logits,
                target: target.to_vec(),
                probs,
            },
            rg,
            "kl_div",
        )
    }

    /// Populates gradients of `loss` with respect to every node that requires
    /// them, adding to gradients left by earlier calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        let mut g: Vec<Option<Vec<F>>> = (0..=loss.0).map(|_| None).collect();
        g[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = g[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &gout, &mut g)?;
            check_finite(&gout, "backward")?;
            let slot = accumulate(&mut self.grads[i], gout.len());
            for (a, b) in slot.iter_mut().zip(&gout) {
                *a += *b;
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, gout: &[F], g: &mut [Option<Vec<F>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.as_ref();
        let want = |v: Var| self.nodes[v.0].requires_grad;
        macro_rules! gbuf {
            ($v:expr) => {
                accumulate(&mut g[$v.0], self.nodes[$v.0].value.len())
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2();
                let n = val(*b).dims2().1;
                if want(*a) {
                    gemm_nt_acc(gout, val(*b).data(), gbuf!(*a), m, n, k);
                }
                if want(*b) {
                    gemm_tn_acc(val(*a).data(), gout, gbuf!(*b), m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = val(*a).dims2();
                let n = val(*b).dims2().0;
                if want(*a) {
                    gemm_acc(gout, val(*b).data(), gbuf!(*a), m, n, k);
                }
                if want(*b) {
                    gemm_tn_acc(gout, val(*a).data(), gbuf!(*b), m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if want(v) {
                        add_into(gbuf!(v), gout);
                    }
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    add_into(gbuf!(*a), gout);
                }
                if want(*b) {
                    for (d, &s) in gbuf!(*b).iter_mut().zip(gout) {
                        *d -= s;
                    }
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    let other = val(*b).data();
                    for ((d, &s), &o) in gbuf!(*a).iter_mut().zip(gout).zip(other) {
                        *d += s * o;
                    }
                }
                if want(*b) {
                    let other = val(*a).data();
                    for ((d, &s), &o) in gbuf!(*b).iter_mut().zip(gout).zip(other) {
                        *d += s * o;
                    }
                }
            }
            Op::AddRow(a, r) => {
                if want(*a) {
                    add_into(gbuf!(*a), gout);
                }
                if want(*r) {
                    let buf = gbuf!(*r);
                    let c = buf.len();
                    for chunk in gout.chunks(c) {
                        add_into(buf, chunk);
                    }
                }
            }
            Op::Scale(a, s) => {
                if want(*a) {
                    for (d, &v) in gbuf!(*a).iter_mut().zip(gout) {
                        *d += v * *s;
                    }
                }
            }
            Op::Relu(a) => {
                if want(*a) {
                    for ((d, &v), &y) in gbuf!(*a).iter_mut().zip(gout).zip(out) {
                        if y > F::zero() {
                            *d += v;
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if want(*a) {
                    for ((d, &v), &y) in gbuf!(*a).iter_mut().zip(gout).zip(out) {
                        *d += v * (F::one() - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if want(*a) {
                    for ((d, &v), &y) in gbuf!(*a).iter_mut().zip(gout).zip(out) {
                        *d += v * y * (F::one() - y);
                    }
                }
            }
            Op::Softmax { x, outer, len, inner } => {
                if want(*x) {
                    let buf = gbuf!(*x);
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let base = o * len * inner + i;
                            let mut s = F::zero();
                            for l in 0..*len {
                                let idx = base + l * inner;
                                s += gout[idx] * out[idx];
                            }
                            for l in 0..*len {
                                let idx = base + l * inner;
                                buf[idx] += out[idx] * (gout[idx] - s);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let cols = val(*gain).len();
                let rows = rstd.len();
                let gv = val(*gain).data();
                if want(*gain) {
                    let buf = gbuf!(*gain);
                    for r in 0..rows {
                        for c in 0..cols {
                            buf[c] += gout[r * cols + c] * xhat[r * cols + c];
                        }
                    }
                }
                if want(*bias) {
                    let buf = gbuf!(*bias);
                    for chunk in gout.chunks(cols) {
                        add_into(buf, chunk);
                    }
                }
                if want(*x) {
                    let buf = gbuf!(*x);
                    let n = F::from_usize(cols).unwrap();
                    let mut dxhat = vec![F::zero(); cols];
                    for r in 0..rows {
                        let off = r * cols;
                        let mut mean_d = F::zero();
                        let mut mean_dx = F::zero();
                        for c in 0..cols {
                            dxhat[c] = gout[off + c] * gv[c];
                            mean_d += dxhat[c];
                            mean_dx += dxhat[c] * xhat[off + c];
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        for c in 0..cols {
                            buf[off + c] += rstd[r] * (dxhat[c] - mean_d - xhat[off + c] * mean_dx);
                        }
                    }
                }
            }
            Op::Concat { parts, sizes, outer, inner } => {
                let total: usize = sizes.iter().sum();
                let mut offset = 0;
                for (&p, &sz) in parts.iter().zip(sizes) {
                    if want(p) {
                        let buf = gbuf!(p);
                        for o in 0..*outer {
                            let src = &gout[(o * total + offset) * inner..(o * total + offset + sz) * inner];
                            add_into(&mut buf[o * sz * inner..(o + 1) * sz * inner], src);
                        }
                    }
                    offset += sz;
                }
            }
            Op::MeanPool { x, outer, len, inner } => {
                if want(*x) {
                    let buf = gbuf!(*x);
                    let inv = F::one() / F::from_usize(*len).unwrap();
                    for o in 0..*outer {
                        for l in 0..*len {
                            let dst = &mut buf[(o * len + l) * inner..(o * len + l + 1) * inner];
                            for (d, &v) in dst.iter_mut().zip(&gout[o * inner..(o + 1) * inner]) {
                                *d += v * inv;
                            }
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if want(*table) {
                    let buf = gbuf!(*table);
                    let d = val(*table).dims2().1;
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut buf[id * d..(id + 1) * d], &gout[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if want(*x) {
                    for ((d, &v), &m) in gbuf!(*x).iter_mut().zip(gout).zip(mask) {
                        *d += v * m;
                    }
                }
            }
            Op::Sum(x) => {
                if want(*x) {
                    let s = gout[0];
                    gbuf!(*x).iter_mut().for_each(|d| *d += s);
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if want(*logits) {
                    let buf = gbuf!(*logits);
                    let cols = val(*logits).dims2().1;
                    let s = gout[0];
                    for &(r, c, w) in targets {
                        let row = &probs[r * cols..(r + 1) * cols];
                        let dst = &mut buf[r * cols..(r + 1) * cols];
                        for (d, &p) in dst.iter_mut().zip(row) {
                            *d += s * w * p;
                        }
                        dst[c] -= s * w;
                    }
                }
            }
            Op::Kl { logits, target, probs } => {
                if want(*logits) {
                    let buf = gbuf!(*logits);
                    let s = gout[0];
                    let mass: F = target.iter().copied().sum();
                    for ((d, &p), &t) in buf.iter_mut().zip(probs).zip(target) {
                        *d += s * (p * mass - t);
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
