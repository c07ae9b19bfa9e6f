//! Tape-based reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] borrows a [`ParamStore`] for reading, records every operation on a
//! tape, and on [`Graph::backward`] accumulates parameter gradients into a
//! [`Gradients`] buffer. Graphs are single-owner; build one per worker.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{shape_err, NumericsError, Result};
use crate::kernels::{self, all_finite};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Node handle within one graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<S> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        rstd: Vec<S>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<S>,
        count: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<S>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        causal: bool,
        probs: Vec<S>,
    },
    Sum(Var),
}

struct Node<S> {
    op: Op<S>,
    rows: usize,
    cols: usize,
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Vec<S>>,
    requires_grad: bool,
}

pub struct Graph<'p, S: Scalar> {
    store: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
    param_nodes: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<S>>>,
    backward_done: bool,
}

impl<'p, S: Scalar> Graph<'p, S> {
    pub fn new(store: &'p ParamStore<S>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    /// Clears the tape so the graph can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.param_nodes.clear();
        self.grads.clear();
        self.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[S] {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(data), _) => data,
            (None, Op::Param(id)) => self.store.get(*id).data(),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn tensor(&self, v: Var) -> Tensor<S> {
        let (r, c) = self.shape(v);
        Tensor::matrix(r, c, self.value(v).to_vec()).expect("consistent node")
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(
        &mut self,
        op: Op<S>,
        rows: usize,
        cols: usize,
        value: Vec<S>,
        requires_grad: bool,
        name: &'static str,
    ) -> Result<Var> {
        if !all_finite(&value) {
            return Err(NumericsError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value: Some(value),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: &Tensor<S>) -> Result<Var> {
        let (r, c) = t.dims2()?;
        self.push(Op::Leaf, r, c, t.data().to_vec(), false, "constant")
    }

    /// A leaf that receives a gradient (used by gradient checks).
    pub fn input(&mut self, t: &Tensor<S>) -> Result<Var> {
        let (r, c) = t.dims2()?;
        self.push(Op::Leaf, r, c, t.data().to_vec(), true, "input")
    }

    /// The node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_nodes.get(&id) {
            return Ok(v);
        }
        let (r, c) = self.store.get(id).dims2()?;
        self.nodes.push(Node {
            op: Op::Param(id),
            rows: r,
            cols: c,
            value: None,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("{n}x{k} · {k2}x{m}")));
        }
        let out = kernels::matmul(self.value(a), self.value(b), n, k, m);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), n, m, out, rg, "matmul")
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        let (m, k2) = self.shape(b);
        if k != k2 {
            return Err(shape_err("matmul_nt", format!("{n}x{k} · ({m}x{k2})ᵀ")));
        }
        let out = kernels::matmul_nt(self.value(a), self.value(b), n, k, m);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMulNT(a, b), n, m, out, rg, "matmul_nt")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let (r, c) = self.shape(a);
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add(a, b), r, c, out, rg, "add")
    }

    /// Adds a `1×cols` row to every row of `a`. The only broadcasting op.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(bias) != (1, c) {
            return Err(shape_err(
                "add_bias",
                format!("{r}x{c} + {:?}", self.shape(bias)),
            ));
        }
        let mut out = self.value(a).to_vec();
        kernels::add_bias_in_place(&mut out, self.value(bias));
        let rg = self.rg(a) || self.rg(bias);
        self.push(Op::AddBias(a, bias), r, c, out, rg, "add_bias")
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "mul",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let (r, c) = self.shape(a);
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Mul(a, b), r, c, out, rg, "mul")
    }

    pub fn scale(&mut self, a: Var, s: S) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let rg = self.rg(a);
        self.push(Op::Scale(a, s), r, c, out, rg, "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x.max(S::zero())).collect();
        let rg = self.rg(a);
        self.push(Op::Relu(a), r, c, out, rg, "relu")
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            kernels::softmax_in_place(row);
        }
        let rg = self.rg(a);
        self.push(Op::Softmax(a), r, c, out, rg, "softmax")
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (both `1×cols`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(gamma) != (1, c) || self.shape(beta) != (1, c) {
            return Err(shape_err("layer_norm", format!("x {r}x{c}, affine mismatch")));
        }
        let mut xhat = self.value(x).to_vec();
        let rstd = kernels::normalize_rows(&mut xhat, c);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut out = xhat.clone();
        for row in out.chunks_mut(c) {
            for ((v, &gg), &bb) in row.iter_mut().zip(g).zip(b) {
                *v = *v * gg + bb;
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            r,
            c,
            out,
            rg,
            "layer_norm",
        )
    }

    /// Gathers rows of `table` (`V×d`) by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.shape(table);
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(NumericsError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    bound: vocab,
                });
            }
            out.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        self.push(
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            ids.len(),
            d,
            out,
            rg,
            "embedding",
        )
    }

    /// Mean token cross entropy over rows whose target is `Some`.
    /// Returns a `1×1` node; zero when every row is ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (n, v) = self.shape(logits);
        if targets.len() != n {
            return Err(shape_err(
                "cross_entropy",
                format!("{n} rows, {} targets", targets.len()),
            ));
        }
        let mut probs = self.value(logits).to_vec();
        let mut total = 0.0f64;
        let mut count = 0usize;
        for (row, t) in probs.chunks_mut(v).zip(targets) {
            if let Some(t) = *t {
                if t >= v {
                    return Err(NumericsError::IndexOutOfRange {
                        op: "cross_entropy",
                        index: t,
                        bound: v,
                    });
                }
                kernels::softmax_in_place(row);
                total -= row[t].as_f64().max(f64::MIN_POSITIVE).ln();
                count += 1;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        let rg = self.rg(logits);
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            1,
            1,
            vec![S::from_f64(loss)],
            rg,
            "cross_entropy",
        )
    }

    /// Inverted dropout. Identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(x);
        }
        let (r, c) = self.shape(x);
        let keep = S::from_f64(1.0 / (1.0 - p));
        let mask: Vec<S> = (0..r * c)
            .map(|_| {
                if rng.random::<f64>() < p {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(&a, &m)| a * m)
            .collect();
        let rg = self.rg(x);
        self.push(Op::Dropout { x, mask }, r, c, out, rg, "dropout")
    }

    /// Fused multi-head attention (see [`kernels::attention`]).
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        causal: bool,
    ) -> Result<Var> {
        let (n, d) = self.shape(q);
        let (m, dk) = self.shape(k);
        if dk != d || self.shape(v) != (m, d) || heads == 0 || d % heads != 0 {
            return Err(shape_err(
                "attention",
                format!("q {n}x{d}, k {m}x{dk}, v {:?}, heads {heads}", self.shape(v)),
            ));
        }
        let (out, probs) = kernels::attention(
            self.value(q),
            self.value(k),
            self.value(v),
            n,
            m,
            d,
            heads,
            causal,
        );
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        self.push(
            Op::Attention {
                q,
                k,
                v,
                heads,
                causal,
                probs,
            },
            n,
            d,
            out,
            rg,
            "attention",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().copied().sum::<S>();
        let rg = self.rg(a);
        self.push(Op::Sum(a), 1, 1, vec![s], rg, "sum")
    }

    /// Back-propagates from the scalar `loss`, adding parameter gradients into `out`.
    pub fn backward(&mut self, loss: Var, out: &mut Gradients<S>) -> Result<()> {
        if self.backward_done {
            return Err(NumericsError::AlreadyBackpropagated);
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(NumericsError::NotScalar { rows: r, cols: c });
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (&id, &v) in &self.param_nodes {
            if let Some(g) = &grads[v.0] {
                for (a, &b) in out.get_mut(id).iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[idx];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.shape(*a);
                let m = cols;
                if self.rg(*a) {
                    let ga = acc(grads, *a, n * k);
                    kernels::matmul_nt_acc(g, self.value(*b), ga, n, m, k);
                }
                if self.rg(*b) {
                    let gb = acc(grads, *b, k * m);
                    kernels::matmul_tn_acc(self.value(*a), g, gb, n, k, m);
                }
            }
            Op::MatMulNT(a, b) => {
                let (n, k) = self.shape(*a);
                let m = cols;
                if self.rg(*a) {
                    let ga = acc(grads, *a, n * k);
                    kernels::matmul_acc(g, self.value(*b), ga, n, m, k);
                }
                if self.rg(*b) {
                    let gb = acc(grads, *b, m * k);
                    kernels::matmul_tn_acc(g, self.value(*a), gb, n, m, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        add_into(acc(grads, v, g.len()), g);
                    }
                }
            }
            Op::AddBias(a, bias) => {
                if self.rg(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if self.rg(*bias) {
                    let gb = acc(grads, *bias, cols);
                    for row in g.chunks(cols) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let bv = self.value(*b);
                    let ga = acc(grads, *a, g.len());
                    for ((x, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gi * bi;
                    }
                }
                if self.rg(*b) {
                    let av = self.value(*a);
                    let gb = acc(grads, *b, g.len());
                    for ((x, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                        *x += gi * ai;
                    }
                }
            }
            Op::Scale(a, s) => {
                if self.rg(*a) {
                    let ga = acc(grads, *a, g.len());
                    kernels::axpy(*s, g, ga);
                }
            }
            Op::Relu(a) => {
                if self.rg(*a) {
                    let av = self.value(*a);
                    let ga = acc(grads, *a, g.len());
                    for ((x, &gi), &ai) in ga.iter_mut().zip(g).zip(av) {
                        if ai > S::zero() {
                            *x += gi;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if self.rg(*a) {
                    let y = node.value.as_ref().expect("value");
                    let ga = acc(grads, *a, g.len());
                    for ((gr, yr), out) in g.chunks(cols).zip(y.chunks(cols)).zip(ga.chunks_mut(cols)) {
                        let s = kernels::dot(gr, yr);
                        for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                            *o += yi * (gi - s);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gamma);
                if self.rg(*gamma) {
                    let gg = acc(grads, *gamma, cols);
                    for (gr, xr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for ((o, &gi), &xi) in gg.iter_mut().zip(gr).zip(xr) {
                            *o += gi * xi;
                        }
                    }
                }
                if self.rg(*beta) {
                    let gb = acc(grads, *beta, cols);
                    for gr in g.chunks(cols) {
                        add_into(gb, gr);
                    }
                }
                if self.rg(*x) {
                    let inv_n = S::one() / S::from_f64(cols as f64);
                    let gx = acc(grads, *x, rows * cols);
                    let mut dxhat = vec![S::zero(); cols];
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let xr = &xhat[r * cols..(r + 1) * cols];
                        for ((d, &gi), &gm) in dxhat.iter_mut().zip(gr).zip(gv) {
                            *d = gi * gm;
                        }
                        let mean_d = dxhat.iter().copied().sum::<S>() * inv_n;
                        let mean_dx = kernels::dot(&dxhat, xr) * inv_n;
                        let out = &mut gx[r * cols..(r + 1) * cols];
                        for ((o, &d), &xi) in out.iter_mut().zip(&dxhat).zip(xr) {
                            *o += rstd[r] * (d - mean_d - xi * mean_dx);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if self.rg(*table) {
                    let (vocab, d) = self.shape(*table);
                    let gt = acc(grads, *table, vocab * d);
                    for (row, &id) in g.chunks(d).zip(ids) {
                        add_into(&mut gt[id * d..(id + 1) * d], row);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if self.rg(*logits) && *count > 0 {
                    let (n, v) = self.shape(*logits);
                    let scale = g[0] / S::from_f64(*count as f64);
                    let gl = acc(grads, *logits, n * v);
                    for (i, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let pr = &probs[i * v..(i + 1) * v];
                            let out = &mut gl[i * v..(i + 1) * v];
                            kernels::axpy(scale, pr, out);
                            out[t] -= scale;
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if self.rg(*x) {
                    let gx = acc(grads, *x, g.len());
                    for ((o, &gi), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *o += gi * m;
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                causal,
                probs,
            } => self.attention_backward(*q, *k, *v, *heads, *causal, probs, g, grads),
            Op::Sum(a) => {
                if self.rg(*a) {
                    let (r, c) = self.shape(*a);
                    let ga = acc(grads, *a, r * c);
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        causal: bool,
        probs: &[S],
        g: &[S],
        grads: &mut [Option<Vec<S>>],
    ) {
        let (n, d) = self.shape(q);
        let (m, _) = self.shape(k);
        let dh = d / heads;
        let scale = S::one() / S::from_f64(dh as f64).sqrt();
        let offset = m.saturating_sub(n);
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut dq = vec![S::zero(); n * d];
        let mut dk = vec![S::zero(); m * d];
        let mut dv = vec![S::zero(); m * d];
        let mut dp = vec![S::zero(); m];
        for h in 0..heads {
            let c0 = h * dh;
            for i in 0..n {
                let visible = if causal { (i + offset + 1).min(m) } else { m };
                let prow = &probs[(h * n + i) * m..(h * n + i + 1) * m];
                let gi = &g[i * d + c0..i * d + c0 + dh];
                for j in 0..visible {
                    let vj = &vv[j * d + c0..j * d + c0 + dh];
                    dp[j] = kernels::dot(gi, vj);
                    kernels::axpy(prow[j], gi, &mut dv[j * d + c0..j * d + c0 + dh]);
                }
                let s = kernels::dot(&dp[..visible], &prow[..visible]);
                let qi = &qv[i * d + c0..i * d + c0 + dh];
                for j in 0..visible {
                    let ds = prow[j] * (dp[j] - s) * scale;
                    if ds == S::zero() {
                        continue;
                    }
                    let kj = &kv[j * d + c0..j * d + c0 + dh];
                    kernels::axpy(ds, kj, &mut dq[i * d + c0..i * d + c0 + dh]);
                    kernels::axpy(ds, qi, &mut dk[j * d + c0..j * d + c0 + dh]);
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if self.rg(var) {
                add_into(acc(grads, var, buf.len()), &buf);
            }
        }
    }
}

fn acc<S: Scalar>(grads: &mut [Option<Vec<S>>], v: Var, len: usize) -> &mut Vec<S> {
    grads[v.0].get_or_insert_with(|| vec![S::zero(); len])
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}
