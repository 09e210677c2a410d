//! Reverse-mode differentiation over a linear tape of matrix operations.

use std::rc::Rc;

use super::{masked_softmax, GradBuffer, NnError, ParamId, ParamStore, Tensor2};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// `x + b` with the 1×m row `b` broadcast over the rows of `x`.
    AddRow(Var, Var),
    Add(Var, Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    RepeatRow(Var),
    GatherRow(Var, usize),
    /// Row i of the output is the sum of rows `adjacency[i]` of the input.
    NeighborSum(Var, Rc<Vec<Vec<usize>>>),
    MeanRows(Var),
    /// Scalar log-probability of entry `index` under a masked softmax of an
    /// n×1 score column; `probs` caches the forward distribution.
    MaskedLogSoftmaxAt {
        scores: Var,
        index: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor2,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> NnError {
    NnError::Shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

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

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", va.shape(), vb.shape()));
        }
        let out = va.matmul(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NnError> {
        let (vx, vr) = (self.value(x), self.value(row));
        if vr.rows() != 1 || vr.cols() != vx.cols() {
            return Err(shape_err("add_row", vx.shape(), vr.shape()));
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(vr.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", va.shape(), vb.shape()));
        }
        let mut out = va.clone();
        out.add_scaled(vb, 1.0);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(shape_err("concat", self.value(parts[0]).shape(), v.shape()));
            }
            cols += v.cols();
        }
        let mut out = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks `rows` copies of a 1×m row.
    pub fn repeat_row(&mut self, row: Var, rows: usize) -> Result<Var, NnError> {
        let v = self.value(row);
        if v.rows() != 1 {
            return Err(shape_err("repeat_row", v.shape(), (1, v.cols())));
        }
        let mut out = Tensor2::zeros(rows, v.cols());
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(v.data());
        }
        Ok(self.push(out, Op::RepeatRow(row)))
    }

    pub fn gather_row(&mut self, x: Var, index: usize) -> Result<Var, NnError> {
        let v = self.value(x);
        if index >= v.rows() {
            return Err(NnError::Shape(format!(
                "row {index} of a {}-row tensor",
                v.rows()
            )));
        }
        let out = Tensor2::row_vector(v.row(index).to_vec());
        Ok(self.push(out, Op::GatherRow(x, index)))
    }

    pub fn neighbor_sum(&mut self, x: Var, adjacency: Rc<Vec<Vec<usize>>>) -> Result<Var, NnError> {
        let v = self.value(x);
        if adjacency.len() != v.rows() {
            return Err(NnError::Shape(format!(
                "adjacency over {} nodes for a {}-row tensor",
                adjacency.len(),
                v.rows()
            )));
        }
        let mut out = Tensor2::zeros(v.rows(), v.cols());
        for (i, nbrs) in adjacency.iter().enumerate() {
            for &j in nbrs {
                let src = self.nodes[x.0].value.row(j);
                for (o, s) in out.row_mut(i).iter_mut().zip(src) {
                    *o += s;
                }
            }
        }
        Ok(self.push(out, Op::NeighborSum(x, adjacency)))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mut out = Tensor2::zeros(1, v.cols());
        let scale = 1.0 / v.rows().max(1) as f64;
        for r in 0..v.rows() {
            for (o, s) in out.data_mut().iter_mut().zip(v.row(r)) {
                *o += s * scale;
            }
        }
        self.push(out, Op::MeanRows(x))
    }

    /// `log p[index]` where `p = masked_softmax(scores, mask)`.
    pub fn masked_log_softmax_at(
        &mut self,
        scores: Var,
        mask: &[bool],
        index: usize,
    ) -> Result<Var, NnError> {
        let v = self.value(scores);
        if v.cols() != 1 || v.rows() != mask.len() {
            return Err(shape_err("masked softmax", v.shape(), (mask.len(), 1)));
        }
        if index >= mask.len() || !mask[index] {
            return Err(NnError::OutsideSupport(index));
        }
        let probs = masked_softmax(v.data(), mask)?;
        // log p computed as s - max - log Σ exp(s - max) so tiny p stays finite
        let max = v
            .data()
            .iter()
            .zip(mask)
            .filter(|(_, &ok)| ok)
            .map(|(&s, _)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        let log_z: f64 = v
            .data()
            .iter()
            .zip(mask)
            .filter(|(_, &ok)| ok)
            .map(|(&s, _)| (s - max).exp())
            .sum::<f64>()
            .ln();
        let out = Tensor2::row_vector(vec![v.data()[index] - max - log_z]);
        Ok(self.push(
            out,
            Op::MaskedLogSoftmaxAt {
                scores,
                index,
                probs,
            },
        ))
    }

    /// Propagates `seed` (shaped like `output`) back through the tape and adds
    /// parameter gradients into `grads`.
    pub fn backward(
        &self,
        output: Var,
        seed: Tensor2,
        grads: &mut GradBuffer,
    ) -> Result<(), NnError> {
        if seed.shape() != self.value(output).shape() {
            return Err(shape_err(
                "backward seed",
                seed.shape(),
                self.value(output).shape(),
            ));
        }
        let mut adj: Vec<Option<Tensor2>> = (0..=output.0).map(|_| None).collect();
        adj[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads[id.0].add_scaled(&g, 1.0),
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b));
                    let db = self.value(*a).matmul_tn(&g);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::AddRow(x, row) => {
                    let mut db = Tensor2::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, s) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut adj, *row, db);
                    accumulate(&mut adj, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Relu(x) => {
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let width = self.value(p).cols();
                        let mut dp = Tensor2::zeros(g.rows(), width);
                        for r in 0..g.rows() {
                            dp.row_mut(r)
                                .copy_from_slice(&g.row(r)[offset..offset + width]);
                        }
                        offset += width;
                        accumulate(&mut adj, p, dp);
                    }
                }
                Op::RepeatRow(row) => {
                    let mut d = Tensor2::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, s) in d.data_mut().iter_mut().zip(g.row(r)) {
                            *o += s;
                        }
                    }
                    accumulate(&mut adj, *row, d);
                }
                Op::GatherRow(x, index) => {
                    let src = self.value(*x);
                    let mut d = Tensor2::zeros(src.rows(), src.cols());
                    d.row_mut(*index).copy_from_slice(g.data());
                    accumulate(&mut adj, *x, d);
                }
                Op::NeighborSum(x, adjacency) => {
                    let mut d = Tensor2::zeros(g.rows(), g.cols());
                    for (i, nbrs) in adjacency.iter().enumerate() {
                        for &j in nbrs {
                            let (src, dst) = (g.row(i).to_vec(), d.row_mut(j));
                            for (o, s) in dst.iter_mut().zip(src) {
                                *o += s;
                            }
                        }
                    }
                    accumulate(&mut adj, *x, d);
                }
                Op::MeanRows(x) => {
                    let rows = self.value(*x).rows();
                    let scale = 1.0 / rows.max(1) as f64;
                    let mut d = Tensor2::zeros(rows, g.cols());
                    for r in 0..rows {
                        for (o, s) in d.row_mut(r).iter_mut().zip(g.data()) {
                            *o = s * scale;
                        }
                    }
                    accumulate(&mut adj, *x, d);
                }
                Op::MaskedLogSoftmaxAt {
                    scores,
                    index,
                    probs,
                } => {
                    let upstream = g.data()[0];
                    let mut d = Tensor2::zeros(probs.len(), 1);
                    for (k, &p) in probs.iter().enumerate() {
                        let delta = if k == *index { 1.0 } else { 0.0 };
                        d.data_mut()[k] = upstream * (delta - p);
                    }
                    accumulate(&mut adj, *scores, d);
                }
            }
        }
        Ok(())
    }

    /// Backward from a 1×1 output with seed `scale`, straight into the store's accumulators.
    pub fn backward_into_store(
        &self,
        output: Var,
        scale: f64,
        store: &mut ParamStore,
    ) -> Result<(), NnError> {
        let mut buf = store.zero_buffer();
        self.backward(output, Tensor2::row_vector(vec![scale]), &mut buf)?;
        store.accumulate(&buf);
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Tensor2>], v: Var, g: Tensor2) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_scaled(&g, 1.0),
        slot @ None => *slot = Some(g),
    }
}
