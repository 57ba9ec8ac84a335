//! Reverse-mode accumulation over an explicitly recorded operation
//! sequence. A tape is rebuilt per forward pass: values are computed
//! eagerly as ops are recorded, and [`Tape::backward`] replays the
//! sequence in reverse, accumulating gradients into every node.
//!
//! Leaves are either constants ([`Tape::input`]) or parameter bindings
//! ([`Tape::param`]); after backward, [`Tape::param_grads`] collects the
//! gradient per parameter slot so callers can merge gradients from many
//! tapes (one per sentence) into shared parameters.

use crate::tensor::matrix::Matrix;
use crate::tensor::ops;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapeId(usize);

#[derive(Debug)]
enum OpKind {
    Input,
    Param(usize),
    MatMul(TapeId, TapeId),
    Transpose(TapeId),
    Add(TapeId, TapeId),
    /// Broadcast-add a 1×c row vector over the rows of a r×c matrix.
    AddRowVec(TapeId, TapeId),
    Relu(TapeId),
    /// Elementwise product with a constant matrix (masks, dropout).
    HadamardConst(TapeId, Matrix),
    Scale(TapeId, f64),
    /// Row-wise layer normalization; gain and bias are 1×d nodes.
    LayerNormRows {
        x: TapeId,
        gain: TapeId,
        bias: TapeId,
        eps: f64,
    },
    /// Row-wise masked softmax against a constant 0/1 mask matrix.
    MaskedSoftmaxRows(TapeId, Matrix),
    /// Gather rows of a table by index (embedding lookup).
    SelectRows(TapeId, Vec<usize>),
    /// Scalar node: mean over rows of softmax cross-entropy at `targets`.
    CrossEntropyMeanRows(TapeId, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    op: OpKind,
    value: Matrix,
    grad: Matrix,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: OpKind, value: Matrix) -> TapeId {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.nodes.push(Node { op, value, grad });
        TapeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: TapeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TapeId) -> &Matrix {
        &self.nodes[id.0].grad
    }

    pub fn scalar(&self, id: TapeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.shape(), (1, 1), "node is not a scalar");
        v.get(0, 0)
    }

    pub fn input(&mut self, value: Matrix) -> TapeId {
        self.push(OpKind::Input, value)
    }

    /// Binds a parameter slot; the current value is copied onto the tape.
    pub fn param(&mut self, slot: usize, value: &Matrix) -> TapeId {
        self.push(OpKind::Param(slot), value.clone())
    }

    pub fn matmul(&mut self, a: TapeId, b: TapeId) -> TapeId {
        let value = ops::matmul(self.value(a), self.value(b));
        self.push(OpKind::MatMul(a, b), value)
    }

    pub fn transpose(&mut self, a: TapeId) -> TapeId {
        let value = self.value(a).transpose();
        self.push(OpKind::Transpose(a), value)
    }

    pub fn add(&mut self, a: TapeId, b: TapeId) -> TapeId {
        let value = self.value(a).add(self.value(b));
        self.push(OpKind::Add(a, b), value)
    }

    pub fn add_row_vec(&mut self, a: TapeId, v: TapeId) -> TapeId {
        let value = ops::add_bias(self.value(a), self.value(v));
        self.push(OpKind::AddRowVec(a, v), value)
    }

    pub fn relu(&mut self, a: TapeId) -> TapeId {
        let value = ops::relu(self.value(a));
        self.push(OpKind::Relu(a), value)
    }

    pub fn hadamard_const(&mut self, a: TapeId, mask: Matrix) -> TapeId {
        let value = self.value(a).hadamard(&mask);
        self.push(OpKind::HadamardConst(a, mask), value)
    }

    pub fn scale(&mut self, a: TapeId, factor: f64) -> TapeId {
        let value = self.value(a).scale(factor);
        self.push(OpKind::Scale(a, factor), value)
    }

    pub fn layer_norm_rows(&mut self, x: TapeId, gain: TapeId, bias: TapeId, eps: f64) -> TapeId {
        let xm = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        assert_eq!(g.rows(), 1);
        assert_eq!(b.rows(), 1);
        assert_eq!(g.cols(), xm.cols());
        assert_eq!(b.cols(), xm.cols());
        let mut value = Matrix::zeros(xm.rows(), xm.cols());
        for i in 0..xm.rows() {
            let out = ops::layer_norm(xm.row(i), g.row(0), b.row(0), eps);
            value.row_mut(i).copy_from_slice(&out);
        }
        self.push(OpKind::LayerNormRows { x, gain, bias, eps }, value)
    }

    /// `mask` must select at least one entry per row.
    pub fn masked_softmax_rows(&mut self, logits: TapeId, mask: Matrix) -> TapeId {
        let lm = self.value(logits);
        assert_eq!(lm.shape(), mask.shape());
        let mut value = Matrix::zeros(lm.rows(), lm.cols());
        for i in 0..lm.rows() {
            let out = ops::masked_softmax(lm.row(i), mask.row(i))
                .expect("masked_softmax_rows: empty mask row");
            value.row_mut(i).copy_from_slice(&out);
        }
        self.push(OpKind::MaskedSoftmaxRows(logits, mask), value)
    }

    pub fn select_rows(&mut self, table: TapeId, indices: Vec<usize>) -> TapeId {
        let t = self.value(table);
        let mut value = Matrix::zeros(indices.len(), t.cols());
        for (i, &idx) in indices.iter().enumerate() {
            value.row_mut(i).copy_from_slice(t.row(idx));
        }
        self.push(OpKind::SelectRows(table, indices), value)
    }

    pub fn cross_entropy_mean_rows(&mut self, logits: TapeId, targets: Vec<usize>) -> TapeId {
        let lm = self.value(logits);
        assert_eq!(lm.rows(), targets.len());
        let n = targets.len() as f64;
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| ops::cross_entropy_row(lm.row(i), t))
            .sum::<f64>()
            / n;
        self.push(
            OpKind::CrossEntropyMeanRows(logits, targets),
            Matrix::from_vec(1, 1, vec![loss]),
        )
    }

    /// Seeds the (scalar) root with gradient 1 and sweeps the tape in
    /// reverse, accumulating into every node's gradient buffer.
    pub fn backward(&mut self, root: TapeId) {
        assert_eq!(
            self.nodes[root.0].value.shape(),
            (1, 1),
            "backward root must be scalar"
        );
        for node in self.nodes.iter_mut() {
            node.grad.fill_zero();
        }
        self.nodes[root.0].grad.set(0, 0, 1.0);

        for idx in (0..=root.0).rev() {
            // Split borrows: take the node's grad out, write into parents.
            let placeholder =
                Matrix::zeros(self.nodes[idx].value.rows(), self.nodes[idx].value.cols());
            let dout = std::mem::replace(&mut self.nodes[idx].grad, placeholder);
            match &self.nodes[idx].op {
                OpKind::Input | OpKind::Param(_) => {}
                OpKind::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (da, db) =
                        ops::matmul_backward(&self.nodes[a.0].value, &self.nodes[b.0].value, &dout);
                    self.nodes[a.0].grad.add_assign(&da);
                    self.nodes[b.0].grad.add_assign(&db);
                }
                OpKind::Transpose(a) => {
                    let a = *a;
                    let da = dout.transpose();
                    self.nodes[a.0].grad.add_assign(&da);
                }
                OpKind::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.nodes[a.0].grad.add_assign(&dout);
                    self.nodes[b.0].grad.add_assign(&dout);
                }
                OpKind::AddRowVec(a, v) => {
                    let (a, v) = (*a, *v);
                    let (da, dv) = ops::add_bias_backward(&dout);
                    self.nodes[a.0].grad.add_assign(&da);
                    self.nodes[v.0].grad.add_assign(&dv);
                }
                OpKind::Relu(a) => {
                    let a = *a;
                    let da = ops::relu_backward(&self.nodes[a.0].value, &dout);
                    self.nodes[a.0].grad.add_assign(&da);
                }
                OpKind::HadamardConst(a, mask) => {
                    let a = *a;
                    let da = dout.hadamard(mask);
                    self.nodes[a.0].grad.add_assign(&da);
                }
                OpKind::Scale(a, factor) => {
                    let (a, factor) = (*a, *factor);
                    let da = dout.scale(factor);
                    self.nodes[a.0].grad.add_assign(&da);
                }
                OpKind::LayerNormRows { x, gain, bias, eps } => {
                    let (x, gain, bias, eps) = (*x, *gain, *bias, *eps);
                    let rows = self.nodes[x.0].value.rows();
                    let cols = self.nodes[x.0].value.cols();
                    let mut dx = Matrix::zeros(rows, cols);
                    let mut dgain = Matrix::zeros(1, cols);
                    let mut dbias = Matrix::zeros(1, cols);
                    for i in 0..rows {
                        let (dxr, dgr, dbr) = ops::layer_norm_backward(
                            self.nodes[x.0].value.row(i),
                            self.nodes[gain.0].value.row(0),
                            eps,
                            dout.row(i),
                        );
                        dx.row_mut(i).copy_from_slice(&dxr);
                        for j in 0..cols {
                            dgain.set(0, j, dgain.get(0, j) + dgr[j]);
                            dbias.set(0, j, dbias.get(0, j) + dbr[j]);
                        }
                    }
                    self.nodes[x.0].grad.add_assign(&dx);
                    self.nodes[gain.0].grad.add_assign(&dgain);
                    self.nodes[bias.0].grad.add_assign(&dbias);
                }
                OpKind::MaskedSoftmaxRows(logits, mask) => {
                    let logits = *logits;
                    let rows = dout.rows();
                    let mut dl = Matrix::zeros(rows, dout.cols());
                    for i in 0..rows {
                        let dr = ops::masked_softmax_backward(
                            self.nodes[idx].value.row(i),
                            mask.row(i),
                            dout.row(i),
                        );
                        dl.row_mut(i).copy_from_slice(&dr);
                    }
                    self.nodes[logits.0].grad.add_assign(&dl);
                }
                OpKind::SelectRows(table, indices) => {
                    let table = *table;
                    let indices = indices.clone();
                    for (i, idx_row) in indices.iter().enumerate() {
                        let src = dout.row(i).to_vec();
                        let dst = self.nodes[table.0].grad.row_mut(*idx_row);
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                OpKind::CrossEntropyMeanRows(logits, targets) => {
                    let logits = *logits;
                    let targets = targets.clone();
                    let seed = dout.get(0, 0);
                    let n = targets.len() as f64;
                    let rows = self.nodes[logits.0].value.rows();
                    let mut dl = Matrix::zeros(rows, self.nodes[logits.0].value.cols());
                    for (i, &t) in targets.iter().enumerate() {
                        let g = ops::cross_entropy_row_backward(
                            self.nodes[logits.0].value.row(i),
                            t,
                        );
                        for (j, gv) in g.iter().enumerate() {
                            dl.set(i, j, seed * gv / n);
                        }
                    }
                    self.nodes[logits.0].grad.add_assign(&dl);
                }
            }
            // Put the accumulated gradient back for readout.
            self.nodes[idx].grad = dout;
        }
    }

    /// Gradients accumulated per parameter slot (summed over bindings).
    pub fn param_grads(&self) -> Vec<(usize, Matrix)> {
        let mut out: Vec<(usize, Matrix)> = Vec::new();
        for node in &self.nodes {
            if let OpKind::Param(slot) = node.op {
                if let Some(entry) = out.iter_mut().find(|(s, _)| *s == slot) {
                    entry.1.add_assign(&node.grad);
                } else {
                    out.push((slot, node.grad.clone()));
                }
            }
        }
        out
    }

    /// ReLU inputs currently on the tape; used to exclude kinks from
    /// finite-difference checks.
    pub fn min_relu_input_magnitude(&self) -> f64 {
        let mut min = f64::INFINITY;
        for node in &self.nodes {
            if let OpKind::Relu(a) = node.op {
                for v in self.nodes[a.0].value.data() {
                    min = min.min(v.abs());
                }
            }
        }
        min
    }
}
