//! A minimal reverse-mode tape over 2-D tensors.
//!
//! Parameter nodes never copy their tensor: the graph borrows the
//! [`ParamStore`] for its whole lifetime and reads values in place, so a
//! parameter used twice (e.g. the mapping matrix on the encode and the
//! transposed decode path) is one node backed by one buffer.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul, matmul_at, matmul_bt, sigmoid, Real, Tensor};
use crate::error::{Error, Result};

/// Node handle, valid only for the graph that created it.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Batch statistics observed by a train-mode batch norm node, to be folded
/// into the running averages once the forward pass is accepted.
#[derive(Clone, Debug)]
pub struct BnStatUpdate<F> {
    pub key: ParamId,
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

enum Op<'s, F> {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Scale(Var, F),
    SelectRows {
        mask: Vec<bool>,
        on: Var,
        off: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        active: Vec<bool>,
        xhat: Tensor<F>,
        inv_std: Vec<F>,
        batch_stats: bool,
    },
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        active: Vec<bool>,
        probs: Tensor<F>,
    },
    SigmoidBce {
        logits: Var,
        labels: Vec<F>,
    },
    CosineDeviation {
        emb: Var,
        reference: &'s Tensor<F>,
        beta: F,
        cos: Vec<F>,
    },
    SumAll(Var),
}

struct Node<'s, F> {
    op: Op<'s, F>,
    value: Option<Tensor<F>>,
    requires_grad: bool,
}

/// Which statistics a batch norm node normalizes with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Inputs to [`Graph::batch_norm`] that live outside the tape.
pub struct BnArgs<'a, F> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: &'a [F],
    pub running_var: &'a [F],
    pub eps: F,
    pub mode: BnMode,
}

pub struct Graph<'s, F: Real> {
    store: &'s ParamStore<F>,
    nodes: Vec<Node<'s, F>>,
    param_nodes: HashMap<ParamId, Var>,
    first_nonfinite: Option<(usize, &'static str)>,
    bn_updates: Vec<BnStatUpdate<F>>,
}

impl<'s, F: Real> Graph<'s, F> {
    pub fn new(store: &'s ParamStore<F>) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            first_nonfinite: None,
            bn_updates: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore<F> {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.store.value(*id),
            (_, Some(t)) => t,
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> F {
        self.value(v).item()
    }

    /// Error if any node produced NaN or ±∞.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_nonfinite {
            None => Ok(()),
            Some((i, op)) => Err(Error::Numerical(format!(
                "non-finite value produced by {op} (node {i})"
            ))),
        }
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnStatUpdate<F>> {
        std::mem::take(&mut self.bn_updates)
    }

    fn push(
        &mut self,
        op: Op<'s, F>,
        value: Tensor<F>,
        requires_grad: bool,
        name: &'static str,
    ) -> Var {
        if self.first_nonfinite.is_none() && !value.all_finite() {
            self.first_nonfinite = Some((self.nodes.len(), name));
        }
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(Op::Const, t, false, "constant")
    }

    /// The node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let frozen = self.store.param(id).frozen;
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: !frozen,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), out, rg, "matmul")
    }

    /// `a · bᵀ`, reading `b` in place.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let out = matmul_bt(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMulBt(a, b), out, rg, "matmul_bt")
    }

    /// Rows `ids` of `table`, stacked.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let cols = t.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_vec(&[ids.len(), cols], data).expect("gather shape");
        let rg = self.rg(table);
        self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            out,
            rg,
            "gather",
        )
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(F, F) -> F, name: &str) -> Tensor<F> {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "{name}: shape mismatch");
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_vec(ta.shape(), data).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x + y, "add");
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add(a, b), out, rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x - y, "sub");
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Sub(a, b), out, rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x * y, "mul");
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Mul(a, b), out, rg, "mul")
    }

    /// `a + 1·row`, broadcasting a `1×m` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        assert_eq!(tr.len(), ta.cols(), "add_row: width mismatch");
        let mut out = ta.clone();
        let r = tr.data();
        for i in 0..out.rows() {
            for (x, &b) in out.row_mut(i).iter_mut().zip(r) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(Op::AddRow(a, row), out, rg, "add_row")
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| F::one() - x);
        let rg = self.rg(a);
        self.push(Op::OneMinus(a), out, rg, "one_minus")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(Op::Sigmoid(a), out, rg, "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        let rg = self.rg(a);
        self.push(Op::Tanh(a), out, rg, "tanh")
    }

    pub fn scale(&mut self, a: Var, k: F) -> Var {
        let out = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(Op::Scale(a, k), out, rg, "scale")
    }

    /// Row `i` from `on` where `mask[i]`, otherwise from `off`.
    pub fn select_rows(&mut self, mask: &[bool], on: Var, off: Var) -> Var {
        let (ton, toff) = (self.value(on), self.value(off));
        assert_eq!(ton.shape(), toff.shape(), "select_rows: shape mismatch");
        assert_eq!(mask.len(), ton.rows(), "select_rows: mask length");
        let mut out = toff.clone();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                out.row_mut(i).copy_from_slice(ton.row(i));
            }
        }
        let rg = self.rg(on) || self.rg(off);
        self.push(
            Op::SelectRows {
                mask: mask.to_vec(),
                on,
                off,
            },
            out,
            rg,
            "select_rows",
        )
    }

    /// Batch normalization of `x: B×h` over the rows flagged in `active`.
    ///
    /// In train mode with at least two active rows the active rows' biased
    /// batch statistics are used and recorded for the running averages;
    /// otherwise the running statistics are used as constants. Inactive rows
    /// are normalized with the same statistics but never influence them.
    pub fn batch_norm(&mut self, x: Var, active: &[bool], args: &BnArgs<'_, F>) -> Var {
        let tx = self.value(x);
        let (b, h) = (tx.rows(), tx.cols());
        assert_eq!(active.len(), b, "batch_norm: mask length");
        assert_eq!(args.running_mean.len(), h, "batch_norm: width");
        let n_active = active.iter().filter(|&&a| a).count();
        let batch_stats = args.mode == BnMode::Train && n_active >= 2;

        let (mean, var) = if batch_stats {
            let n = F::of(n_active as f64);
            let mut mean = vec![F::zero(); h];
            for i in (0..b).filter(|&i| active[i]) {
                for (m, &v) in mean.iter_mut().zip(tx.row(i)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![F::zero(); h];
            for i in (0..b).filter(|&i| active[i]) {
                for ((s, &v), &m) in var.iter_mut().zip(tx.row(i)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n);
            (mean, var)
        } else {
            (args.running_mean.to_vec(), args.running_var.to_vec())
        };

        let inv_std: Vec<F> = var
            .iter()
            .map(|&v| F::one() / (v + args.eps).sqrt())
            .collect();
        let mut xhat = tx.clone();
        for i in 0..b {
            for ((x, &m), &s) in xhat.row_mut(i).iter_mut().zip(&mean).zip(&inv_std) {
                *x = (*x - m) * s;
            }
        }
        let gamma_t = self.store.value(args.gamma);
        let beta_t = self.store.value(args.beta);
        let mut out = xhat.clone();
        for i in 0..b {
            for ((y, &g), &be) in out
                .row_mut(i)
                .iter_mut()
                .zip(gamma_t.data())
                .zip(beta_t.data())
            {
                *y = g * *y + be;
            }
        }
        if batch_stats {
            self.bn_updates.push(BnStatUpdate {
                key: args.gamma,
                mean,
                var,
            });
        }
        let gamma = self.param(args.gamma);
        let beta = self.param(args.beta);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                active: active.to_vec(),
                xhat,
                inv_std,
                batch_stats,
            },
            out,
            rg,
            "batch_norm",
        )
    }

    /// Sum over active rows of `−log softmax(logits_i)[target_i]`, as a 1×1 node.
    pub fn softmax_ce_sum(&mut self, logits: Var, targets: &[usize], active: &[bool]) -> Var {
        let tl = self.value(logits);
        let (b, v) = (tl.rows(), tl.cols());
        assert_eq!(targets.len(), b, "softmax_ce: targets length");
        assert_eq!(active.len(), b, "softmax_ce: mask length");
        let mut probs = Tensor::zeros(&[b, v]);
        let mut total = F::zero();
        for i in 0..b {
            let row = tl.row(i);
            let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
            let mut z = F::zero();
            for (p, &x) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            probs.row_mut(i).iter_mut().for_each(|p| *p /= z);
            if active[i] {
                assert!(targets[i] < v, "softmax_ce: target {} ≥ {}", targets[i], v);
                total += z.ln() - (row[targets[i]] - max);
            }
        }
        let rg = self.rg(logits);
        self.push(
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                active: active.to_vec(),
                probs,
            },
            Tensor::scalar(total),
            rg,
            "softmax_ce",
        )
    }

    /// Sum over rows of the binary cross entropy of `σ(logit_i)` against
    /// `labels[i]`, in the stable form `max(x,0) − x·y + log(1+e^{−|x|})`.
    pub fn sigmoid_bce_sum(&mut self, logits: Var, labels: &[F]) -> Var {
        let tl = self.value(logits);
        assert_eq!(tl.len(), labels.len(), "sigmoid_bce: labels length");
        let mut total = F::zero();
        for (&x, &y) in tl.data().iter().zip(labels) {
            total += x.max(F::zero()) - x * y + (-x.abs()).exp().ln_1p();
        }
        let rg = self.rg(logits);
        self.push(
            Op::SigmoidBce {
                logits,
                labels: labels.to_vec(),
            },
            Tensor::scalar(total),
            rg,
            "sigmoid_bce",
        )
    }

    /// `Σ_i |β − cos(emb_i, reference_i)|`; rows with a zero norm count as cos = 0.
    pub fn cosine_deviation_sum(&mut self, emb: Var, reference: &'s Tensor<F>, beta: F) -> Var {
        let te = self.value(emb);
        assert_eq!(te.shape(), reference.shape(), "cosine_deviation: shape");
        let mut cos = Vec::with_capacity(te.rows());
        let mut total = F::zero();
        for i in 0..te.rows() {
            let c = row_cosine(te.row(i), reference.row(i));
            total += (beta - c).abs();
            cos.push(c);
        }
        let rg = self.rg(emb);
        self.push(
            Op::CosineDeviation {
                emb,
                reference,
                beta,
                cos,
            },
            Tensor::scalar(total),
            rg,
            "cosine_deviation",
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Op::SumAll(a), Tensor::scalar(s), rg, "sum_all")
    }

    /// Reverse sweep from a scalar node. Returns the gradient of every
    /// unfrozen parameter reached by the sweep.
    pub fn backward(&self, loss: Var) -> Result<Vec<(ParamId, Tensor<F>)>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(format!(
                "backward from node {} but the tape holds {} nodes",
                loss.0,
                self.nodes.len()
            )));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Usage("backward requires a scalar loss".into()));
        }
        self.check_finite()?;

        let mut grads: Vec<Option<Tensor<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), F::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut out = Vec::new();
        for (id, &v) in &self.param_nodes {
            if v.0 <= loss.0 {
                if let Some(g) = grads[v.0].take() {
                    out.push((*id, g));
                }
            }
        }
        out.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Tensor<F>>], v: Var, f: impl FnOnce(&mut Tensor<F>)) {
        if !self.rg(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        f(slot.as_mut().unwrap());
    }

    fn acc_tensor(&self, grads: &mut [Option<Tensor<F>>], v: Var, t: Tensor<F>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let out_val = self.nodes[i].value.as_ref();
        match &self.nodes[i].op {
            Op::Const | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.acc_tensor(grads, *a, matmul_bt(g, self.value(*b)));
                }
                if self.rg(*b) {
                    self.acc_tensor(grads, *b, matmul_at(self.value(*a), g));
                }
            }
            Op::MatMulBt(a, b) => {
                if self.rg(*a) {
                    self.acc_tensor(grads, *a, matmul(g, self.value(*b)));
                }
                if self.rg(*b) {
                    self.acc_tensor(grads, *b, matmul_at(g, self.value(*a)));
                }
            }
            Op::Gather { table, ids } => {
                self.acc(grads, *table, |t| {
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, &s) in t.row_mut(id).iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |t| t.add_assign(g));
                self.acc(grads, *b, |t| t.add_assign(g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |t| t.add_assign(g));
                self.acc(grads, *b, |t| {
                    for (d, &s) in t.data_mut().iter_mut().zip(g.data()) {
                        *d -= s;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |t| {
                    for ((d, &s), &y) in t.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *d += s * y;
                    }
                });
                self.acc(grads, *b, |t| {
                    for ((d, &s), &x) in t.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *d += s * x;
                    }
                });
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, |t| t.add_assign(g));
                self.acc(grads, *row, |t| {
                    let td = t.data_mut();
                    for r in 0..g.rows() {
                        for (d, &s) in td.iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                });
            }
            Op::OneMinus(a) => {
                self.acc(grads, *a, |t| {
                    for (d, &s) in t.data_mut().iter_mut().zip(g.data()) {
                        *d -= s;
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = out_val.unwrap();
                self.acc(grads, *a, |t| {
                    for ((d, &s), &y) in t.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d += s * y * (F::one() - y);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = out_val.unwrap();
                self.acc(grads, *a, |t| {
                    for ((d, &s), &y) in t.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d += s * (F::one() - y * y);
                    }
                });
            }
            Op::Scale(a, k) => {
                self.acc(grads, *a, |t| {
                    for (d, &s) in t.data_mut().iter_mut().zip(g.data()) {
                        *d += s * *k;
                    }
                });
            }
            Op::SelectRows { mask, on, off } => {
                for (r, &m) in mask.iter().enumerate() {
                    let target = if m { *on } else { *off };
                    self.acc(grads, target, |t| {
                        for (d, &s) in t.row_mut(r).iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    });
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                active,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (b, h) = (xhat.rows(), xhat.cols());
                let gamma_v = self.value(*gamma).data();
                self.acc(grads, *gamma, |t| {
                    let td = t.data_mut();
                    for r in 0..b {
                        for ((d, &s), &xh) in td.iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                            *d += s * xh;
                        }
                    }
                });
                self.acc(grads, *beta, |t| {
                    let td = t.data_mut();
                    for r in 0..b {
                        for (d, &s) in td.iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                });
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(&[b, h]);
                    // Σ dŷ and Σ dŷ·x̂ over the rows that defined the statistics.
                    let (mut sum_g, mut sum_gx) = (vec![F::zero(); h], vec![F::zero(); h]);
                    let n_active = active.iter().filter(|&&a| a).count();
                    if *batch_stats {
                        for r in (0..b).filter(|&r| active[r]) {
                            for j in 0..h {
                                let gh = g.row(r)[j] * gamma_v[j];
                                sum_g[j] += gh;
                                sum_gx[j] += gh * xhat.row(r)[j];
                            }
                        }
                    }
                    let n = F::of(n_active as f64);
                    for r in 0..b {
                        let stats_row = *batch_stats && active[r];
                        for j in 0..h {
                            let gh = g.row(r)[j] * gamma_v[j];
                            dx.row_mut(r)[j] = if stats_row {
                                inv_std[j] * (gh - sum_g[j] / n - xhat.row(r)[j] * sum_gx[j] / n)
                            } else {
                                inv_std[j] * gh
                            };
                        }
                    }
                    self.acc_tensor(grads, *x, dx);
                }
            }
            Op::SoftmaxCe {
                logits,
                targets,
                active,
                probs,
            } => {
                let s = g.item();
                self.acc(grads, *logits, |t| {
                    for r in (0..probs.rows()).filter(|&r| active[r]) {
                        let row = t.row_mut(r);
                        for (d, &p) in row.iter_mut().zip(probs.row(r)) {
                            *d += s * p;
                        }
                        row[targets[r]] -= s;
                    }
                });
            }
            Op::SigmoidBce { logits, labels } => {
                let s = g.item();
                let x = self.value(*logits);
                self.acc(grads, *logits, |t| {
                    for ((d, &xv), &y) in t.data_mut().iter_mut().zip(x.data()).zip(labels) {
                        *d += s * (sigmoid(xv) - y);
                    }
                });
            }
            Op::CosineDeviation {
                emb,
                reference,
                beta,
                cos,
            } => {
                let s = g.item();
                let e = self.value(*emb);
                self.acc(grads, *emb, |t| {
                    for r in 0..e.rows() {
                        let (w, w0) = (e.row(r), reference.row(r));
                        let nw = norm(w);
                        let n0 = norm(w0);
                        if nw == F::zero() || n0 == F::zero() {
                            continue;
                        }
                        let sign = signum0(*beta - cos[r]);
                        if sign == F::zero() {
                            continue;
                        }
                        // ∂cos/∂w = w0/(|w||w0|) − cos·w/|w|²
                        let a = F::one() / (nw * n0);
                        let c = cos[r] / (nw * nw);
                        for ((d, &wi), &w0i) in t.row_mut(r).iter_mut().zip(w).zip(w0) {
                            *d -= s * sign * (w0i * a - c * wi);
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let s = g.item();
                self.acc(grads, *a, |t| {
                    t.data_mut().iter_mut().for_each(|d| *d += s);
                });
            }
        }
    }
}

fn norm<F: Real>(v: &[F]) -> F {
    v.iter().map(|&x| x * x).sum::<F>().sqrt()
}

fn signum0<F: Real>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else if x < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

/// Cosine of two rows; 0 when either norm is 0.
pub fn row_cosine<F: Real>(a: &[F], b: &[F]) -> F {
    let (na, nb) = (norm(a), norm(b));
    if na == F::zero() || nb == F::zero() {
        return F::zero();
    }
    let dot: F = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    dot / (na * nb)
}
