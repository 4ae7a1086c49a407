//! Reverse-mode differentiation over a fixed set of matrix operations.
//!
//! A [`Tape`] borrows a [`ParamStore`] read-only, records every operation of
//! one forward pass and then walks the record backwards. Each operation has a
//! hand-written adjoint. Gradients for parameters are returned as a
//! [`Gradients`] buffer so that several tapes over the same store can run
//! concurrently and be reduced afterwards.

use super::matrix::Matrix;
use super::ops::{self, PROB_CLAMP};
use super::params::{Gradients, ParamId, ParamStore};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    SliceCols {
        src: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    LastRow(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
        frozen_row: Option<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    Lstm {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        gates: Matrix,
        cells: Matrix,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        label: u8,
        probs: [f64; 2],
    },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Option<Matrix>,
    op: Op,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("node without a value"),
        }
    }

    /// Parameters read by this tape so far.
    pub fn touched_params(&self) -> Vec<ParamId> {
        self.param_vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_some())
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf for a stored parameter. Repeated requests return the same leaf.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_bt(self.value(b))?;
        Ok(self.push(out, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1 x cols` row to each row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.value(a).add_row(self.value(row))?;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = ops::softmax_rows(self.value(a));
        self.push(out, Op::Softmax(a))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(src).slice_cols(start, len)?;
        Ok(self.push(out, Op::SliceCols { src, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let out = {
            let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
            Matrix::concat_cols(&mats)?
        };
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn last_row(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.rows() == 0 {
            return Err(Error::shape("last_row", "empty sequence"));
        }
        let out = Matrix::row_vector(m.row(m.rows() - 1));
        Ok(self.push(out, Op::LastRow(a)))
    }

    /// Row lookup `table[ids]`. Gradients never flow into `frozen_row`.
    pub fn gather(&mut self, table: Var, ids: &[usize], frozen_row: Option<usize>) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Validation(format!(
                "token id {bad} out of range for a table of {} rows",
                t.rows()
            )));
        }
        let mut out = Matrix::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
                frozen_row,
            },
        ))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let ln = ops::layer_norm(self.value(x), self.value(gain), self.value(bias))?;
        Ok(self.push(
            ln.output,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized: ln.normalized,
                inv_std: ln.inv_std,
            },
        ))
    }

    /// Single-layer LSTM from zero initial state; returns all hidden states.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var) -> Result<Var> {
        let h = self.value(w_hh).cols();
        let zeros = vec![0.0; h];
        let cache = ops::lstm_forward_cached(
            self.value(x),
            self.value(w_ih),
            self.value(w_hh),
            self.value(bias),
            &zeros,
            &zeros,
        )?;
        Ok(self.push(
            cache.hidden,
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                bias,
                gates: cache.gates,
                cells: cache.cells,
            },
        ))
    }

    /// Two-class softmax followed by cross-entropy against `label`;
    /// `logits` must be `1 x 2`. The result is a `1 x 1` loss.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: u8) -> Result<Var> {
        let l = self.value(logits);
        if l.shape() != (1, 2) {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {:?}", l.shape()),
            ));
        }
        let (p0, p1) = ops::softmax_pair([l.as_slice()[0], l.as_slice()[1]]);
        let loss = ops::cross_entropy(p1, label);
        Ok(self.push(
            Matrix::row_vector(&[loss]),
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs: [p0, p1],
            },
        ))
    }

    /// `Σ wᵢ·xᵢ` over same-shaped values.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let first = terms
            .first()
            .ok_or_else(|| Error::shape("weighted_sum", "no terms"))?;
        let mut out = Matrix::zeros(self.value(first.0).rows(), self.value(first.0).cols());
        for &(v, w) in terms {
            let m = self.value(v);
            if m.shape() != out.shape() {
                return Err(Error::shape("weighted_sum", "terms differ in shape"));
            }
            out.axpy(w, m);
        }
        Ok(self.push(out, Op::WeightedSum(terms.to_vec())))
    }

    /// Backpropagates from a scalar (`1 x 1`) output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("output is {:?}, expected a scalar", self.value(output).shape()),
            ));
        }
        let mut adj: Vec<Option<Matrix>> = Vec::with_capacity(output.0 + 1);
        adj.resize_with(output.0 + 1, || None);
        adj[output.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut grads = Gradients::empty(self.store.len());

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Constant => {}
                Op::Param(id) => grads.accumulate(*id, g),
                Op::MatMul(a, b) => {
                    // dA = G Bᵀ, dB = Aᵀ G
                    let da = g.matmul_bt(self.value(*b))?;
                    let db = self.value(*a).matmul_at(&g)?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::MatMulBt(a, b) => {
                    // C = A Bᵀ: dA = G B, dB = Gᵀ A
                    let da = g.matmul(self.value(*b))?;
                    let db = g.matmul_at(self.value(*a))?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut adj, *row, g.sum_rows());
                    accumulate(&mut adj, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.scale(*s)),
                Op::Softmax(a) => {
                    let y = self.nodes[idx].value.as_ref().expect("softmax value");
                    let mut dx = g;
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let dot = ops::dot(dx.row(i), yr);
                        for (d, &yv) in dx.row_mut(i).iter_mut().zip(yr) {
                            *d = yv * (*d - dot);
                        }
                    }
                    accumulate(&mut adj, *a, dx);
                }
                Op::SliceCols { src, start } => {
                    let (rows, cols) = self.value(*src).shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for i in 0..rows {
                        d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut adj, *src, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        accumulate(&mut adj, p, g.slice_cols(offset, w)?);
                        offset += w;
                    }
                }
                Op::LastRow(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut d = Matrix::zeros(rows, cols);
                    d.row_mut(rows - 1).copy_from_slice(g.row(0));
                    accumulate(&mut adj, *a, d);
                }
                Op::Gather {
                    table,
                    ids,
                    frozen_row,
                } => {
                    let (rows, cols) = self.value(*table).shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for (r, &id) in ids.iter().enumerate() {
                        if Some(id) == *frozen_row {
                            continue;
                        }
                        for (acc, v) in d.row_mut(id).iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut adj, *table, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let (dx, dgain, dbias) =
                        ops::layer_norm_backward(&g, self.value(*gain), normalized, inv_std);
                    accumulate(&mut adj, *x, dx);
                    accumulate(&mut adj, *gain, dgain);
                    accumulate(&mut adj, *bias, dbias);
                }
                Op::Lstm {
                    x,
                    w_ih,
                    w_hh,
                    bias,
                    gates,
                    cells,
                } => {
                    let hidden = self.nodes[idx].value.as_ref().expect("lstm value");
                    let h = self.value(*w_hh).cols();
                    let zeros = vec![0.0; h];
                    let lg = ops::lstm_backward(
                        gates,
                        cells,
                        hidden,
                        self.value(*x),
                        self.value(*w_ih),
                        self.value(*w_hh),
                        &zeros,
                        &zeros,
                        &g,
                    )?;
                    accumulate(&mut adj, *x, lg.dx);
                    accumulate(&mut adj, *w_ih, lg.dw_ih);
                    accumulate(&mut adj, *w_hh, lg.dw_hh);
                    accumulate(&mut adj, *bias, lg.dbias);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let upstream = g.as_slice()[0];
                    let p1 = probs[1];
                    // Inside the clamp, dL/dz = p - onehot(y). Where the clamp
                    // is active the loss is flat in the logits.
                    let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p1);
                    let d = if clamped {
                        Matrix::zeros(1, 2)
                    } else {
                        let y = f64::from(*label);
                        Matrix::row_vector(&[
                            upstream * (probs[0] - (1.0 - y)),
                            upstream * (probs[1] - y),
                        ])
                    };
                    accumulate(&mut adj, *logits, d);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        accumulate(&mut adj, v, g.scale(w));
                    }
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
