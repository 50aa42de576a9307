use std::collections::HashMap;

use super::{shape_err, GroupSet, ParamId, ParamStore, Result, Scalar, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044715;

enum Op<S> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<S>, rstd: Vec<S> },
    Embedding { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    MeanRows(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<S> },
    BceWithLogits { logits: Var, targets: Vec<S> },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Define-by-run computation record.
///
/// Parameters are pulled in from an attached [`ParamStore`]; only those whose
/// group is in the trainable set receive gradients.
pub struct Graph<'s, S: Scalar> {
    nodes: Vec<Node<S>>,
    store: Option<&'s ParamStore<S>>,
    trainable: GroupSet,
    param_nodes: HashMap<ParamId, Var>,
}

impl<S: Scalar> Default for Graph<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s, S: Scalar> Graph<'s, S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), store: None, trainable: GroupSet::EMPTY, param_nodes: HashMap::new() }
    }

    pub fn with_params(store: &'s ParamStore<S>, trainable: GroupSet) -> Self {
        Self { nodes: Vec::new(), store: Some(store), trainable, param_nodes: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn trainable(&self) -> GroupSet {
        self.trainable
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Free leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_nodes.get(&id) {
            return Ok(v);
        }
        let store = self.store.ok_or(TensorError::NoStore)?;
        let p = store.get(id);
        let rg = self.trainable.contains(p.group);
        let v = self.push(p.value.clone(), Op::Param, rg);
        self.param_nodes.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor { shape: ta.shape().to_vec(), data }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `x [r, c] + row [c]`, broadcasting the row over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2("add_row")?;
        if self.shape(row) != [c] {
            return Err(shape_err("add_row", format!("[{r},{c}] + {:?}", self.shape(row))));
        }
        let mut out = self.value(x).clone();
        let b = self.value(row).data().to_vec();
        for chunk in out.data_mut().chunks_mut(c) {
            for (o, &bv) in chunk.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let rg = self.rg(&[x, row]);
        Ok(self.push(out, Op::AddRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let k = S::from_f64(k);
        let out = self.value(x).map(|v| v * k);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, k), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = S::from_f64(GELU_C);
        let a = S::from_f64(GELU_A);
        let half = S::from_f64(0.5);
        let out = self.value(x).map(|v| half * v * (S::one() + (c * (v + a * v * v * v)).tanh()));
        let rg = self.rg(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Row-wise softmax over the last axis of a rank-2 tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (_, c) = self.value(x).dims2("softmax")?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// Row-wise log-softmax (max-subtracted).
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (_, c) = self.value(x).dims2("log_softmax")?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c) {
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::LogSoftmax(x), rg))
    }

    /// Layer normalisation over the last axis with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2("layer_norm")?;
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(shape_err(
                "layer_norm",
                format!("[{r},{c}] with gain {:?} bias {:?}", self.shape(gain), self.shape(bias)),
            ));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let n = S::from_f64(c as f64);
        let eps = S::from_f64(LN_EPS);
        let mut xhat = Vec::with_capacity(r * c);
        let mut rstd = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in xs.chunks(c) {
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let rs = S::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let out = Tensor { shape: vec![r, c], data: out };
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg))
    }

    /// Gathers rows of `table [V, d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.value(table).dims2("embedding")?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Index { op: "embedding", index: id, bound: v });
            }
            data.extend_from_slice(self.value(table).row(id));
        }
        let out = Tensor { shape: vec![ids.len(), d], data };
        let rg = self.rg(&[table]);
        Ok(self.push(out, Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<S>> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::concat_rows(&tensors)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(p) => self.value(*p).dims2("concat_cols")?.0,
            None => return Err(shape_err("concat_cols", "no inputs")),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = self.value(*p).dims2("concat_cols")?;
            if r != rows {
                return Err(shape_err("concat_cols", format!("row count {r} != {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let out = Tensor { shape: vec![rows, total], data };
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(x).slice_rows(start, end)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceRows(x, start), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2("slice_cols")?;
        if start > end || end > c {
            return Err(shape_err("slice_cols", format!("cols {start}..{end} of {c}")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let out = Tensor { shape: vec![r, end - start], data };
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceCols(x, start), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<S>();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Column means of `[r, c]`, returned as `[1, c]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2("mean_rows")?;
        if r == 0 {
            return Err(shape_err("mean_rows", "no rows"));
        }
        let inv = S::one() / S::from_f64(r as f64);
        let mut acc = vec![S::zero(); c];
        for row in self.value(x).data().chunks(c) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a *= inv;
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor { shape: vec![1, c], data: acc }, Op::MeanRows(x), rg))
    }

    /// Summed token negative log-likelihood: `-sum_i log softmax(logits_i)[targets_i]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.value(logits).dims2("cross_entropy")?;
        if targets.len() != r {
            return Err(shape_err("cross_entropy", format!("{r} rows but {} targets", targets.len())));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = S::zero();
        for (row, &t) in probs.chunks_mut(c).zip(targets) {
            if t >= c {
                return Err(TensorError::Index { op: "cross_entropy", index: t, bound: c });
            }
            let lse = log_sum_exp(row);
            loss += lse - row[t];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, rg))
    }

    /// Mean binary cross-entropy of logits against targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let n = self.value(logits).len();
        if targets.len() != n {
            return Err(shape_err("bce_with_logits", format!("{n} logits but {} targets", targets.len())));
        }
        let targets: Vec<S> = targets.iter().map(|&t| S::from_f64(t)).collect();
        let mut loss = S::zero();
        for (&z, &t) in self.value(logits).data().iter().zip(&targets) {
            loss += z.max(S::zero()) - z * t + (S::one() + (-z.abs()).exp()).ln();
        }
        loss = loss / S::from_f64(n as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { logits, targets }, rg))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_node.value.shape(), S::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut params = HashMap::new();
        for (&id, &v) in &self.param_nodes {
            if self.nodes[v.0].requires_grad {
                if let Some(g) = grads[v.0].take() {
                    params.insert(id, g);
                }
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, node: &Node<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                if wants(*a) {
                    let da = slot(grads, *a, val(*a).shape());
                    // dA += dC . B^T
                    S::gemm(
                        m,
                        n,
                        k,
                        S::one(),
                        g.data(),
                        n as isize,
                        1,
                        val(*b).data(),
                        1,
                        n as isize,
                        S::one(),
                        da.data_mut(),
                        k as isize,
                        1,
                    );
                }
                if wants(*b) {
                    let db = slot(grads, *b, val(*b).shape());
                    // dB += A^T . dC
                    S::gemm(
                        k,
                        m,
                        n,
                        S::one(),
                        val(*a).data(),
                        1,
                        k as isize,
                        g.data(),
                        n as isize,
                        1,
                        S::one(),
                        db.data_mut(),
                        n as isize,
                        1,
                    );
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        accumulate(slot(grads, v, g.shape()), g.data(), S::one());
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(slot(grads, *a, g.shape()), g.data(), S::one());
                }
                if wants(*b) {
                    accumulate(slot(grads, *b, g.shape()), g.data(), -S::one());
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let da = slot(grads, *a, g.shape());
                    for ((d, &gv), &bv) in da.data_mut().iter_mut().zip(g.data()).zip(val(*b).data()) {
                        *d += gv * bv;
                    }
                }
                if wants(*b) {
                    let db = slot(grads, *b, g.shape());
                    for ((d, &gv), &av) in db.data_mut().iter_mut().zip(g.data()).zip(val(*a).data()) {
                        *d += gv * av;
                    }
                }
            }
            Op::AddRow(x, row) => {
                if wants(*x) {
                    accumulate(slot(grads, *x, g.shape()), g.data(), S::one());
                }
                if wants(*row) {
                    let c = val(*row).len();
                    let dr = slot(grads, *row, &[c]);
                    for chunk in g.data().chunks(c) {
                        accumulate_slice(dr.data_mut(), chunk, S::one());
                    }
                }
            }
            Op::Scale(x, k) => {
                if wants(*x) {
                    accumulate(slot(grads, *x, g.shape()), g.data(), *k);
                }
            }
            Op::Gelu(x) => {
                if wants(*x) {
                    let c = S::from_f64(GELU_C);
                    let a = S::from_f64(GELU_A);
                    let half = S::from_f64(0.5);
                    let three_a = S::from_f64(3.0 * GELU_A);
                    let dx = slot(grads, *x, g.shape());
                    for ((d, &gv), &xv) in dx.data_mut().iter_mut().zip(g.data()).zip(val(*x).data()) {
                        let t = (c * (xv + a * xv * xv * xv)).tanh();
                        let dt = c * (S::one() + three_a * xv * xv);
                        *d += gv * (half * (S::one() + t) + half * xv * (S::one() - t * t) * dt);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if wants(*x) {
                    let dx = slot(grads, *x, g.shape());
                    for ((d, &gv), &y) in dx.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                        *d += gv * y * (S::one() - y);
                    }
                }
            }
            Op::Softmax(x) => {
                if wants(*x) {
                    let c = *g.shape().last().unwrap();
                    let dx = slot(grads, *x, g.shape());
                    for ((drow, grow), yrow) in
                        dx.data_mut().chunks_mut(c).zip(g.data().chunks(c)).zip(node.value.data().chunks(c))
                    {
                        let dot: S = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for ((d, &gv), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (gv - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                if wants(*x) {
                    let c = *g.shape().last().unwrap();
                    let dx = slot(grads, *x, g.shape());
                    for ((drow, grow), yrow) in
                        dx.data_mut().chunks_mut(c).zip(g.data().chunks(c)).zip(node.value.data().chunks(c))
                    {
                        let total: S = grow.iter().copied().sum();
                        for ((d, &gv), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += gv - y.exp() * total;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let c = val(*gain).len();
                if wants(*gain) {
                    let dg = slot(grads, *gain, &[c]);
                    for (grow, hrow) in g.data().chunks(c).zip(xhat.chunks(c)) {
                        for ((d, &gv), &h) in dg.data_mut().iter_mut().zip(grow).zip(hrow) {
                            *d += gv * h;
                        }
                    }
                }
                if wants(*bias) {
                    let db = slot(grads, *bias, &[c]);
                    for grow in g.data().chunks(c) {
                        accumulate_slice(db.data_mut(), grow, S::one());
                    }
                }
                if wants(*x) {
                    let gain_v = val(*gain).data().to_vec();
                    let n = S::from_f64(c as f64);
                    let dx = slot(grads, *x, g.shape());
                    for (((drow, grow), hrow), &rs) in
                        dx.data_mut().chunks_mut(c).zip(g.data().chunks(c)).zip(xhat.chunks(c)).zip(rstd)
                    {
                        let mut mean_dh = S::zero();
                        let mut mean_dh_h = S::zero();
                        for j in 0..c {
                            let dh = grow[j] * gain_v[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hrow[j];
                        }
                        mean_dh = mean_dh / n;
                        mean_dh_h = mean_dh_h / n;
                        for j in 0..c {
                            let dh = grow[j] * gain_v[j];
                            drow[j] += rs * (dh - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if wants(*table) {
                    let shape = val(*table).shape().to_vec();
                    let d = shape[1];
                    let dt = slot(grads, *table, &shape);
                    for (r, &id) in ids.iter().enumerate() {
                        accumulate_slice(&mut dt.data_mut()[id * d..(id + 1) * d], &g.data()[r * d..(r + 1) * d], S::one());
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).len();
                    if wants(*p) {
                        let shape = val(*p).shape().to_vec();
                        accumulate_slice(slot(grads, *p, &shape).data_mut(), &g.data()[offset..offset + n], S::one());
                    }
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = g.shape()[1];
                let mut col = 0;
                for p in parts {
                    let shape = val(*p).shape().to_vec();
                    let w = shape[1];
                    if wants(*p) {
                        let dp = slot(grads, *p, &shape);
                        for (i, drow) in dp.data_mut().chunks_mut(w).enumerate() {
                            accumulate_slice(drow, &g.data()[i * total + col..i * total + col + w], S::one());
                        }
                    }
                    col += w;
                }
            }
            Op::SliceRows(x, start) => {
                if wants(*x) {
                    let shape = val(*x).shape().to_vec();
                    let c = shape[1];
                    let dx = slot(grads, *x, &shape);
                    accumulate_slice(&mut dx.data_mut()[start * c..start * c + g.len()], g.data(), S::one());
                }
            }
            Op::SliceCols(x, start) => {
                if wants(*x) {
                    let shape = val(*x).shape().to_vec();
                    let c = shape[1];
                    let w = g.shape()[1];
                    let dx = slot(grads, *x, &shape);
                    for (i, grow) in g.data().chunks(w).enumerate() {
                        accumulate_slice(&mut dx.data_mut()[i * c + start..i * c + start + w], grow, S::one());
                    }
                }
            }
            Op::Transpose(x) => {
                if wants(*x) {
                    let gt = g.transpose().expect("rank-2 gradient");
                    accumulate(slot(grads, *x, gt.shape()), gt.data(), S::one());
                }
            }
            Op::Reshape(x) => {
                if wants(*x) {
                    let shape = val(*x).shape().to_vec();
                    accumulate(slot(grads, *x, &shape), g.data(), S::one());
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let shape = val(*x).shape().to_vec();
                    let gv = g.item();
                    for d in slot(grads, *x, &shape).data_mut() {
                        *d += gv;
                    }
                }
            }
            Op::MeanRows(x) => {
                if wants(*x) {
                    let shape = val(*x).shape().to_vec();
                    let (r, c) = (shape[0], shape[1]);
                    let inv = S::one() / S::from_f64(r as f64);
                    let dx = slot(grads, *x, &shape);
                    for drow in dx.data_mut().chunks_mut(c) {
                        accumulate_slice(drow, g.data(), inv);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if wants(*logits) {
                    let shape = val(*logits).shape().to_vec();
                    let c = shape[1];
                    let gv = g.item();
                    let dl = slot(grads, *logits, &shape);
                    for (r, (drow, prow)) in dl.data_mut().chunks_mut(c).zip(probs.chunks(c)).enumerate() {
                        for (d, &p) in drow.iter_mut().zip(prow) {
                            *d += gv * p;
                        }
                        drow[targets[r]] -= gv;
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                if wants(*logits) {
                    let shape = val(*logits).shape().to_vec();
                    let scale = g.item() / S::from_f64(targets.len() as f64);
                    let dl = slot(grads, *logits, &shape);
                    for ((d, &z), &t) in dl.data_mut().iter_mut().zip(val(*logits).data()).zip(targets) {
                        *d += scale * (sigmoid(z) - t);
                    }
                }
            }
        }
    }
}

fn slot<'a, S: Scalar>(grads: &'a mut [Option<Tensor<S>>], v: Var, shape: &[usize]) -> &'a mut Tensor<S> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn accumulate<S: Scalar>(dst: &mut Tensor<S>, src: &[S], k: S) {
    accumulate_slice(dst.data_mut(), src, k);
}

fn accumulate_slice<S: Scalar>(dst: &mut [S], src: &[S], k: S) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub(crate) fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<S>().ln()
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Result of a backward pass.
pub struct Gradients<S> {
    nodes: Vec<Option<Tensor<S>>>,
    params: HashMap<ParamId, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of an arbitrary node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a trainable parameter, if it was reached.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.params.get(&id)
    }

    /// Gradient of a parameter, or zeros of its shape when it was unreachable or frozen.
    pub fn param_or_zeros(&self, id: ParamId, store: &ParamStore<S>) -> Tensor<S> {
        self.params.get(&id).cloned().unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))
    }

    /// Discards the gradient of one parameter so the optimizer leaves it alone.
    pub fn drop_param(&mut self, id: ParamId) {
        self.params.remove(&id);
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }

    /// Adds another set of parameter gradients into this one.
    pub fn merge(&mut self, other: Gradients<S>) {
        for (id, g) in other.params {
            match self.params.get_mut(&id) {
                Some(acc) => accumulate(acc, g.data(), S::one()),
                None => {
                    self.params.insert(id, g);
                }
            }
        }
    }

    /// Global L2 norm over parameter gradients.
    pub fn norm(&self) -> f64 {
        self.params.values().flat_map(|t| t.data().iter()).map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()
    }

    /// Rescales parameter gradients so their global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm && norm > 0.0 {
            let k = S::from_f64(max_norm / norm);
            for t in self.params.values_mut() {
                for v in t.data_mut() {
                    *v *= k;
                }
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_shape() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 4]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 4]);
        let bad = g.constant(Tensor::zeros(&[4, 4]));
        let err = g.matmul(a, bad).unwrap_err();
        assert!(err.to_string().contains("[2,3] x [4,4]"), "{err}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_f64(&[2, 4], &[1.0, 2.0, 3.0, 4.0, -50.0, 0.0, 50.0, 3.0]).unwrap());
        let y = g.softmax(x).unwrap();
        for r in 0..2 {
            let s: f64 = g.value(y).row(r).iter().map(|v| *v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 4], &[3.0, 3.0, 3.0, 3.0]));
        let gain = g.constant(t(&[4], &[1.0; 4]));
        let bias = g.constant(t(&[4], &[0.0; 4]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn grad_of_square() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[1], &[3.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn uniform_cross_entropy_is_ln_v() {
        let mut g = Graph::<f64>::new();
        let logits = g.leaf(Tensor::zeros(&[1, 16]));
        let loss = g.cross_entropy(logits, &[3]).unwrap();
        assert!((g.value(loss).item() - 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_vanishes_with_margin() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            let mut g = Graph::<f64>::new();
            let mut v = vec![0.0; 8];
            v[2] = margin;
            let logits = g.constant(t(&[1, 8], &v));
            let l = g.cross_entropy(logits, &[2]).unwrap();
            let loss = g.value(l).item();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let mut g = Graph::<f64>::new();
        let logits = g.leaf(Tensor::zeros(&[1, 4]));
        assert!(matches!(g.cross_entropy(logits, &[4]), Err(TensorError::Index { .. })));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        use crate::tensor::ParamGroup;
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", ParamGroup::Zeta, t(&[1, 2], &[1.0, 2.0]));
        let b = store.add("b", ParamGroup::Theta, t(&[2, 1], &[3.0, 4.0]));
        let unused = store.add("c", ParamGroup::Zeta, t(&[1], &[0.0]));
        let mut g = Graph::with_params(&store, GroupSet::of(&[ParamGroup::Zeta]));
        let va = g.param(a).unwrap();
        let vb = g.param(b).unwrap();
        let y = g.matmul(va, vb).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.param(a).unwrap().data(), &[3.0, 4.0]);
        assert!(grads.param(b).is_none());
        assert_eq!(grads.param_or_zeros(unused, &store).data(), &[0.0]);
    }
}
