//! Reverse-mode gradient accumulation over a fixed operator set.
//!
//! A [`Tape`] records the forward computation as a flat list of nodes; a
//! single backward sweep in reverse order fills per-node gradient buffers
//! and finally exports leaf gradients into a [`ParamStore`]. The operator
//! set is exactly what the model needs: matrix products, element-wise
//! arithmetic, sigmoid, masked row softmax, concatenation/slicing,
//! masked pooling, embedding lookup, ln/clamp and summation.

use crate::error::{CoreError, Result};
use crate::matrix::{Mask, Matrix};
use crate::params::ParamStore;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    /// `A * B^T` without materializing the transpose.
    MatmulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    RowSoftmax(NodeId, Mask),
    ConcatRows(Vec<NodeId>),
    ConcatCols(NodeId, NodeId),
    SliceRows(NodeId, usize, usize),
    SliceCols(NodeId, usize, usize),
    /// Multiply row i of the first input by entry (i, 0) of the second.
    ScaleRows(NodeId, NodeId),
    MaskedMeanRows(NodeId, Mask),
    MaskedMaxRows(NodeId, Mask, Vec<usize>),
    Embed { table: NodeId, ids: Vec<u32>, mask: Mask },
    Ln(NodeId),
    Clamp(NodeId, f64, f64),
    SumAll(NodeId),
}

pub struct Tape {
    values: Vec<Matrix>,
    ops: Vec<Op>,
    grads: Vec<Option<Matrix>>,
    param_nodes: BTreeMap<String, NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { values: Vec::new(), ops: Vec::new(), grads: Vec::new(), param_nodes: BTreeMap::new() }
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        let id = NodeId(self.values.len());
        self.values.push(value);
        self.ops.push(op);
        self.grads.push(None);
        id
    }

    /// Value of a node.
    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.values[id.0]
    }

    /// Gradient of the last backward target with respect to a node, if the
    /// node participated.
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// A constant input; no gradient is tracked beyond it.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a named parameter. Repeated requests for the same name
    /// return the same node so gradient contributions merge.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> NodeId {
        if let Some(&id) = self.param_nodes.get(name) {
            return id;
        }
        let id = self.push(store.value(name).clone(), Op::Leaf);
        self.param_nodes.insert(name.to_string(), id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.values[a.0].matmul(&self.values[b.0])?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.values[a.0].matmul_nt(&self.values[b.0])?;
        Ok(self.push(v, Op::MatmulNt(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.values[a.0].add(&self.values[b.0])?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.values[a.0].sub(&self.values[b.0])?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.values[a.0].hadamard(&self.values[b.0])?;
        Ok(self.push(v, Op::Hadamard(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.values[a.0].scale(c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].sigmoid();
        self.push(v, Op::Sigmoid(a))
    }

    pub fn row_softmax(&mut self, a: NodeId, mask: &Mask) -> Result<NodeId> {
        let v = self.values[a.0].row_softmax(mask)?;
        Ok(self.push(v, Op::RowSoftmax(a, mask.clone())))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mats: Vec<&Matrix> = parts.iter().map(|p| &self.values[p.0]).collect();
        let v = Matrix::concat_rows(&mats)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.values[a.0].concat_cols(&self.values[b.0])?;
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.values[a.0].slice_rows(start, len);
        self.push(v, Op::SliceRows(a, start, len))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.values[a.0].slice_cols(start, len);
        self.push(v, Op::SliceCols(a, start, len))
    }

    /// Row-wise scaling of `m` by the column vector `s`.
    pub fn scale_rows(&mut self, m: NodeId, s: NodeId) -> Result<NodeId> {
        let mv = &self.values[m.0];
        let sv = &self.values[s.0];
        if sv.cols() != 1 || sv.rows() != mv.rows() {
            return Err(CoreError::ShapeMismatch {
                op: "scale_rows",
                detail: format!("matrix {:?} vs scales {:?}", mv.shape(), sv.shape()),
            });
        }
        let v = Matrix::from_fn(mv.rows(), mv.cols(), |i, j| mv.get(i, j) * sv.get(i, 0));
        Ok(self.push(v, Op::ScaleRows(m, s)))
    }

    pub fn masked_mean_rows(&mut self, a: NodeId, mask: &Mask) -> Result<NodeId> {
        let v = self.values[a.0].masked_mean_rows(mask)?;
        Ok(self.push(v, Op::MaskedMeanRows(a, mask.clone())))
    }

    pub fn masked_max_rows(&mut self, a: NodeId, mask: &Mask) -> Result<NodeId> {
        let (v, argmax) = self.values[a.0].masked_max_rows(mask)?;
        Ok(self.push(v, Op::MaskedMaxRows(a, mask.clone(), argmax)))
    }

    /// Embedding lookup: row i of the output is `table[ids[i]]` where the
    /// mask is live and exactly zero elsewhere.
    pub fn embed(&mut self, table: NodeId, ids: &[u32], mask: &Mask) -> Result<NodeId> {
        let t = &self.values[table.0];
        if mask.cols() != 1 || mask.rows() != ids.len() {
            return Err(CoreError::ShapeMismatch {
                op: "embed",
                detail: format!("{} ids vs mask {:?}", ids.len(), mask.shape()),
            });
        }
        let mut out = Matrix::zeros(ids.len(), t.cols());
        for (i, &id) in ids.iter().enumerate() {
            if !mask.get(i, 0) {
                continue;
            }
            if id as usize >= t.rows() {
                return Err(CoreError::TokenOutOfRange { id, vocab: t.rows() });
            }
            out.row_mut(i).copy_from_slice(t.row(id as usize));
        }
        Ok(self.push(out, Op::Embed { table, ids: ids.to_vec(), mask: mask.clone() }))
    }

    /// Natural log; entries must already be positive (clamp first).
    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].map(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.values[a.0].clamp_entries(lo, hi);
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::from_vec(1, 1, vec![self.values[a.0].sum_all()]);
        self.push(v, Op::SumAll(a))
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = &self.values[id.0];
        assert_eq!(v.shape(), (1, 1), "scalar() expects a 1x1 node");
        v.get(0, 0)
    }

    fn add_grad(&mut self, id: NodeId, delta: Matrix) {
        match &mut self.grads[id.0] {
            Some(g) => *g = g.add(&delta).expect("gradient shapes agree"),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Backward sweep from a 1x1 node. Fills per-node gradients; call
    /// [`Tape::export_grads`] afterwards to move leaf gradients into a store.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let v = &self.values[loss.0];
        if v.shape() != (1, 1) {
            return Err(CoreError::ShapeMismatch {
                op: "backward",
                detail: format!("loss must be 1x1, got {:?}", v.shape()),
            });
        }
        if !v.get(0, 0).is_finite() {
            return Err(CoreError::NonFinite("loss".to_string()));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        for idx in (0..self.ops.len()).rev() {
            let Some(g) = self.grads[idx].take() else { continue };
            let op = self.ops[idx].clone();
            match op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let da = g.matmul_nt(&self.values[b.0])?;
                    let db = self.values[a.0].transpose().matmul(&g)?;
                    self.add_grad(a, da);
                    self.add_grad(b, db);
                }
                Op::MatmulNt(a, b) => {
                    let da = g.matmul(&self.values[b.0])?;
                    let db = g.transpose().matmul(&self.values[a.0])?;
                    self.add_grad(a, da);
                    self.add_grad(b, db);
                }
                Op::Add(a, b) => {
                    self.add_grad(a, g.clone());
                    self.add_grad(b, g.clone());
                }
                Op::Sub(a, b) => {
                    self.add_grad(a, g.clone());
                    self.add_grad(b, g.scale(-1.0));
                }
                Op::Hadamard(a, b) => {
                    let da = g.hadamard(&self.values[b.0])?;
                    let db = g.hadamard(&self.values[a.0])?;
                    self.add_grad(a, da);
                    self.add_grad(b, db);
                }
                Op::Scale(a, c) => self.add_grad(a, g.scale(c)),
                Op::Sigmoid(a) => {
                    let s = &self.values[idx];
                    let da = Matrix::from_fn(s.rows(), s.cols(), |i, j| {
                        let y = s.get(i, j);
                        g.get(i, j) * y * (1.0 - y)
                    });
                    self.add_grad(a, da);
                }
                Op::RowSoftmax(a, _mask) => {
                    let y = &self.values[idx];
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let mut dot = 0.0;
                        for j in 0..y.cols() {
                            dot += g.get(i, j) * y.get(i, j);
                        }
                        for j in 0..y.cols() {
                            da.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    self.add_grad(a, da);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.values[p.0].rows();
                        let dp = g.slice_rows(offset, rows);
                        offset += rows;
                        self.add_grad(p, dp);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.values[a.0].cols();
                    let cb = self.values[b.0].cols();
                    let da = g.slice_cols(0, ca);
                    let db = g.slice_cols(ca, cb);
                    self.add_grad(a, da);
                    self.add_grad(b, db);
                }
                Op::SliceRows(a, start, len) => {
                    let (rows, cols) = self.values[a.0].shape();
                    let mut da = Matrix::zeros(rows, cols);
                    for i in 0..len {
                        da.row_mut(start + i).copy_from_slice(g.row(i));
                    }
                    self.add_grad(a, da);
                }
                Op::SliceCols(a, start, len) => {
                    let (rows, cols) = self.values[a.0].shape();
                    let mut da = Matrix::zeros(rows, cols);
                    for i in 0..rows {
                        for j in 0..len {
                            da.set(i, start + j, g.get(i, j));
                        }
                    }
                    self.add_grad(a, da);
                }
                Op::ScaleRows(m, s) => {
                    let mv = &self.values[m.0];
                    let sv = &self.values[s.0];
                    let dm = Matrix::from_fn(mv.rows(), mv.cols(), |i, j| g.get(i, j) * sv.get(i, 0));
                    let mut ds = Matrix::zeros(sv.rows(), 1);
                    for i in 0..mv.rows() {
                        let mut acc = 0.0;
                        for j in 0..mv.cols() {
                            acc += g.get(i, j) * mv.get(i, j);
                        }
                        ds.set(i, 0, acc);
                    }
                    self.add_grad(m, dm);
                    self.add_grad(s, ds);
                }
                Op::MaskedMeanRows(a, mask) => {
                    let (rows, cols) = self.values[a.0].shape();
                    let cnt = mask.count_live() as f64;
                    let mut da = Matrix::zeros(rows, cols);
                    for i in 0..rows {
                        if mask.get(i, 0) {
                            for j in 0..cols {
                                da.set(i, j, g.get(0, j) / cnt);
                            }
                        }
                    }
                    self.add_grad(a, da);
                }
                Op::MaskedMaxRows(a, _mask, argmax) => {
                    let (rows, cols) = self.values[a.0].shape();
                    let mut da = Matrix::zeros(rows, cols);
                    for (j, &i) in argmax.iter().enumerate() {
                        da.set(i, j, g.get(0, j));
                    }
                    self.add_grad(a, da);
                }
                Op::Embed { table, ids, mask } => {
                    let t = &self.values[table.0];
                    let mut dt = Matrix::zeros(t.rows(), t.cols());
                    for (i, &id) in ids.iter().enumerate() {
                        if !mask.get(i, 0) {
                            continue;
                        }
                        let row = dt.row_mut(id as usize);
                        for j in 0..t.cols() {
                            row[j] += g.get(i, j);
                        }
                    }
                    self.add_grad(table, dt);
                }
                Op::Ln(a) => {
                    let x = &self.values[a.0];
                    let da = Matrix::from_fn(x.rows(), x.cols(), |i, j| g.get(i, j) / x.get(i, j));
                    self.add_grad(a, da);
                }
                Op::Clamp(a, lo, hi) => {
                    let x = &self.values[a.0];
                    let da = Matrix::from_fn(x.rows(), x.cols(), |i, j| {
                        let v = x.get(i, j);
                        if v > lo && v < hi {
                            g.get(i, j)
                        } else {
                            0.0
                        }
                    });
                    self.add_grad(a, da);
                }
                Op::SumAll(a) => {
                    let (rows, cols) = self.values[a.0].shape();
                    let s = g.get(0, 0);
                    self.add_grad(a, Matrix::from_fn(rows, cols, |_, _| s));
                }
            }
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    /// Gradient with respect to the named parameter, if it was used.
    pub fn param_grad(&self, name: &str) -> Option<&Matrix> {
        self.param_nodes.get(name).and_then(|id| self.grads[id.0].as_ref())
    }

    /// Move leaf gradients into the store's gradient buffers (additive).
    pub fn export_grads(&self, store: &mut ParamStore) -> Result<()> {
        for (name, id) in &self.param_nodes {
            if let Some(g) = &self.grads[id.0] {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Maximum relative error between analytic and central-difference gradients,
/// over every entry of every parameter touched by `build`.
///
/// `build` constructs the forward graph on a fresh tape and returns the 1x1
/// loss node; the analytic route is one backward sweep, the numeric route
/// re-evaluates the same construction at perturbed parameter values.
pub fn grad_check<F>(build: F, params: &ParamStore, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(CoreError::NonFinite("objective".to_string()));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let loss = build(&mut tape, params)?;
    if !tape.scalar(loss).is_finite() {
        return Err(CoreError::NonFinite("objective".to_string()));
    }
    tape.backward(loss)?;

    let mut report = GradCheckReport { max_rel_err: 0.0, worst_param: String::new(), checked: 0 };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let shape = params.value(name).shape();
        let zero = Matrix::zeros(shape.0, shape.1);
        let analytic = tape.param_grad(name).unwrap_or(&zero);
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let orig = params.value(name).get(i, j);

                let mut plus = params.clone();
                let mut m = plus.value(name).clone();
                m.set(i, j, orig + eps);
                plus.set_value(name, m);
                let f_plus = eval(&plus)?;

                let mut minus = params.clone();
                let mut m = minus.value(name).clone();
                m.set(i, j, orig - eps);
                minus.set_value(name, m);
                let f_minus = eval(&minus)?;

                let numeric = (f_plus - f_minus) / (2.0 * eps);
                let a = analytic.get(i, j);
                let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
                report.checked += 1;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst_param = format!("{name}[{i},{j}]");
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
}
