//! Reverse-mode differentiation over 2-D arrays.
//!
//! Forward ops append nodes to a [`Tape`]; [`Tape::backward`] walks the
//! nodes in reverse, accumulating vector-Jacobian products. Ops that need
//! intermediate results for their backward pass (layer norm, attention,
//! dropout) cache them on the node.

use ndarray::{Array2, Axis, Zip};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row layout of a padded batch: row `s * seq_len + t` is position `t` of sequence `s`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqLayout {
    pub seq_len: usize,
    /// True (unpadded) length of every sequence.
    pub lens: Vec<usize>,
}

impl SeqLayout {
    pub fn n_seq(&self) -> usize {
        self.lens.len()
    }

    pub fn rows(&self) -> usize {
        self.lens.len() * self.seq_len
    }

    pub fn row(&self, seq: usize, pos: usize) -> usize {
        seq * self.seq_len + pos
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `[n, m] + [1, m]`
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Array2<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: SeqLayout,
        heads: usize,
        probs: Vec<f64>,
    },
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    Rows {
        x: Var,
        rows: Vec<usize>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    LogClamp {
        x: Var,
        floor: f64,
    },
    /// `Σ w · x[r, c]` over the listed entries, as a 1×1 value.
    Pick {
        x: Var,
        picks: Vec<(usize, usize, f64)>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: one optional gradient per node.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads[v.0].take()
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub(crate) fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value: value.as_standard_layout().into_owned(),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value: value.as_standard_layout().into_owned(),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let value = self.value(x) + self.value(bias);
        self.push(value, Op::AddRow(x, bias), &[x, bias])
    }

    /// `x · w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x) * s;
        self.push(value, Op::Scale(x, s), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(gelu);
        self.push(value, Op::Gelu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::tanh);
        self.push(value, Op::Tanh(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Inverted dropout with a caller-supplied keep mask already scaled by `1/(1-p)`.
    pub fn dropout(&mut self, x: Var, mask: Array2<f64>) -> Var {
        let value = self.value(x) * &mask;
        self.push(value, Op::Dropout { x, mask }, &[x])
    }

    /// Multi-head scaled dot-product attention over a padded batch.
    ///
    /// `q`, `k`, `v` are `[rows, d]`; head `h` owns columns `h*dh..(h+1)*dh`.
    /// Keys at or beyond a sequence's true length get zero weight.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: &SeqLayout, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        let dh = d / heads;
        let seq_len = layout.seq_len;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qs, ks, vs) = (
            qv.as_slice().unwrap(),
            kv.as_slice().unwrap(),
            vv.as_slice().unwrap(),
        );
        let mut out = Array2::<f64>::zeros((layout.rows(), d));
        let os = out.as_slice_mut().unwrap();
        let mut probs = vec![0.0; layout.n_seq() * heads * seq_len * seq_len];
        for (s, &len) in layout.lens.iter().enumerate() {
            let base = s * seq_len;
            for h in 0..heads {
                let off = h * dh;
                for t in 0..seq_len {
                    let qrow = &qs[(base + t) * d + off..(base + t) * d + off + dh];
                    let p = &mut probs[((s * heads + h) * seq_len + t) * seq_len..][..seq_len];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..len {
                        let krow = &ks[(base + j) * d + off..(base + j) * d + off + dh];
                        let sc = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                        p[j] = sc;
                        max = max.max(sc);
                    }
                    let mut sum = 0.0;
                    for pj in &mut p[..len] {
                        *pj = (*pj - max).exp();
                        sum += *pj;
                    }
                    let orow = &mut os[(base + t) * d + off..(base + t) * d + off + dh];
                    for j in 0..len {
                        p[j] /= sum;
                        let vrow = &vs[(base + j) * d + off..(base + j) * d + off + dh];
                        for (o, vj) in orow.iter_mut().zip(vrow) {
                            *o += p[j] * vj;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                layout: layout.clone(),
                heads,
                probs,
            },
            &[q, k, v],
        )
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let mut value = Array2::zeros((ids.len(), tv.ncols()));
        for (mut row, &id) in value.rows_mut().into_iter().zip(ids) {
            row.assign(&tv.row(id));
        }
        self.push(
            value,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Selects rows of `x` in the given order.
    pub fn rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let value = self.value(x).select(Axis(0), rows);
        self.push(
            value,
            Op::Rows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        )
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let value = softmax_rows(self.value(x));
        self.push(value, Op::Softmax(x), &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let value = log_softmax_rows(self.value(x));
        self.push(value, Op::LogSoftmax(x), &[x])
    }

    /// `ln(max(x, floor))`; entries at or below the floor pass no gradient.
    pub fn log_clamp(&mut self, x: Var, floor: f64) -> Var {
        let value = self.value(x).mapv(|v| v.max(floor).ln());
        self.push(value, Op::LogClamp { x, floor }, &[x])
    }

    pub fn pick(&mut self, x: Var, picks: Vec<(usize, usize, f64)>) -> Var {
        let xv = self.value(x);
        let s = picks.iter().map(|&(r, c, w)| w * xv[[r, c]]).sum::<f64>();
        self.push(Array2::from_elem((1, 1), s), Op::Pick { x, picks }, &[x])
    }

    /// Gradients of the 1×1 node `out` with respect to every node that needs one.
    pub fn backward(&self, out: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Array2::ones(self.nodes[out.0].value.raw_dim()));

        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, value: &Array2<f64>, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs_grad(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.needs_grad(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.needs_grad(*a) {
                    self.accumulate(grads, *a, g.dot(self.value(*b)));
                }
                if self.needs_grad(*b) {
                    self.accumulate(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.needs_grad(*b) {
                    self.accumulate(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g * *s),
            Op::Gelu(x) => {
                let mut dx = self.value(*x).mapv(gelu_grad);
                dx *= g;
                self.accumulate(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let mut dx = value.mapv(|t| 1.0 - t * t);
                dx *= g;
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if self.needs_grad(*gamma) {
                    let dg = (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *gamma, dg);
                }
                if self.needs_grad(*beta) {
                    self.accumulate(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.needs_grad(*x) {
                    let gx = g * self.value(*gamma);
                    let d = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(g.raw_dim());
                    for (((mut out, gr), xr), &is) in dx
                        .rows_mut()
                        .into_iter()
                        .zip(gx.rows())
                        .zip(xhat.rows())
                        .zip(inv_std)
                    {
                        let mean_g = gr.sum() / d;
                        let mean_gx = gr.dot(&xr) / d;
                        Zip::from(&mut out)
                            .and(&gr)
                            .and(&xr)
                            .for_each(|o, &gi, &xi| *o = is * (gi - mean_g - xi * mean_gx));
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Dropout { x, mask } => self.accumulate(grads, *x, g * mask),
            Op::Attention {
                q,
                k,
                v,
                layout,
                heads,
                probs,
            } => {
                let (dq, dk, dv) = self.attention_backward(*q, *k, *v, layout, *heads, probs, g);
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
                self.accumulate(grads, *v, dv);
            }
            Op::Embed { table, ids } => {
                if self.needs_grad(*table) {
                    let mut dt = Array2::zeros(self.value(*table).raw_dim());
                    for (row, &id) in g.rows().into_iter().zip(ids) {
                        let mut target = dt.row_mut(id);
                        target += &row;
                    }
                    self.accumulate(grads, *table, dt);
                }
            }
            Op::Rows { x, rows } => {
                if self.needs_grad(*x) {
                    let mut dx = Array2::zeros(self.value(*x).raw_dim());
                    for (row, &r) in g.rows().into_iter().zip(rows) {
                        let mut target = dx.row_mut(r);
                        target += &row;
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Softmax(x) => {
                let mut dx = value * g;
                for (mut out, p) in dx.rows_mut().into_iter().zip(value.rows()) {
                    let dot = out.sum();
                    Zip::from(&mut out).and(&p).for_each(|o, &pi| *o -= pi * dot);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LogSoftmax(x) => {
                let mut dx = g.clone();
                for (mut out, lp) in dx.rows_mut().into_iter().zip(value.rows()) {
                    let total = out.sum();
                    Zip::from(&mut out)
                        .and(&lp)
                        .for_each(|o, &l| *o -= l.exp() * total);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LogClamp { x, floor } => {
                let mut dx = self
                    .value(*x)
                    .mapv(|v| if v > *floor { 1.0 / v } else { 0.0 });
                dx *= g;
                self.accumulate(grads, *x, dx);
            }
            Op::Pick { x, picks } => {
                let mut dx = Array2::zeros(self.value(*x).raw_dim());
                let g0 = g[[0, 0]];
                for &(r, c, w) in picks {
                    dx[[r, c]] += w * g0;
                }
                self.accumulate(grads, *x, dx);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        layout: &SeqLayout,
        heads: usize,
        probs: &[f64],
        g: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        let dh = d / heads;
        let seq_len = layout.seq_len;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qs, ks, vs) = (
            qv.as_slice().unwrap(),
            kv.as_slice().unwrap(),
            vv.as_slice().unwrap(),
        );
        let g = g.as_standard_layout();
        let gs = g.as_slice().unwrap();
        let mut dq = Array2::<f64>::zeros(qv.raw_dim());
        let mut dk = Array2::<f64>::zeros(kv.raw_dim());
        let mut dv = Array2::<f64>::zeros(vv.raw_dim());
        let (dqs, dks, dvs) = (
            dq.as_slice_mut().unwrap(),
            dk.as_slice_mut().unwrap(),
            dv.as_slice_mut().unwrap(),
        );
        let mut dp = vec![0.0; seq_len];
        for (s, &len) in layout.lens.iter().enumerate() {
            let base = s * seq_len;
            for h in 0..heads {
                let off = h * dh;
                for t in 0..seq_len {
                    let qi = (base + t) * d + off;
                    let p = &probs[((s * heads + h) * seq_len + t) * seq_len..][..seq_len];
                    let go = &gs[qi..qi + dh];
                    let mut pdp = 0.0;
                    for j in 0..len {
                        let vj = (base + j) * d + off;
                        let vrow = &vs[vj..vj + dh];
                        dp[j] = go.iter().zip(vrow).map(|(a, b)| a * b).sum();
                        pdp += p[j] * dp[j];
                        for c in 0..dh {
                            dvs[vj + c] += p[j] * go[c];
                        }
                    }
                    for j in 0..len {
                        let ds = p[j] * (dp[j] - pdp) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = (base + j) * d + off;
                        for c in 0..dh {
                            dqs[qi + c] += ds * ks[kj + c];
                            dks[kj + c] += ds * qs[qi + c];
                        }
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}
