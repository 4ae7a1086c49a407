//! Composite differentiable layers built from tape primitives.

use super::ops::check_heads;
use super::params::ParamId;
use super::tape::{Tape, Var};
use crate::{Error, Result};

/// `softmax(Q Kᵀ / √d_k) V` recorded on the tape.
pub fn scaled_dot_attention(tape: &mut Tape<'_>, q: Var, k: Var, v: Var) -> Result<Var> {
    let d_k = tape.value(q).cols();
    if d_k == 0 || tape.value(k).cols() != d_k || tape.value(k).rows() != tape.value(v).rows() {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!(
                "Q {:?}, K {:?}, V {:?}",
                tape.value(q).shape(),
                tape.value(k).shape(),
                tape.value(v).shape()
            ),
        ));
    }
    let scores = tape.matmul_bt(q, k)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    let weights = tape.softmax_rows(scaled);
    tape.matmul(weights, v)
}

/// Attention per column block with the head outputs concatenated.
pub fn split_head_attention(
    tape: &mut Tape<'_>,
    q: Var,
    k: Var,
    v: Var,
    n_heads: usize,
) -> Result<Var> {
    let d = tape.value(q).cols();
    check_heads("split_head_attention", d, n_heads)?;
    if tape.value(k).cols() != d || tape.value(v).cols() != d {
        return Err(Error::shape(
            "split_head_attention",
            format!(
                "Q width {d}, K width {}, V width {}",
                tape.value(k).cols(),
                tape.value(v).cols()
            ),
        ));
    }
    if n_heads == 1 {
        return scaled_dot_attention(tape, q, k, v);
    }
    let d_head = d / n_heads;
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let s = h * d_head;
        let qh = tape.slice_cols(q, s, d_head)?;
        let kh = tape.slice_cols(k, s, d_head)?;
        let vh = tape.slice_cols(v, s, d_head)?;
        heads.push(scaled_dot_attention(tape, qh, kh, vh)?);
    }
    tape.concat_cols(&heads)
}

/// Parameter handles of an affine layer `x Wᵀ + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearIds {
    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul_bt(x, w)?;
        tape.add_row(xw, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MultiHeadIds {
    pub query: LinearIds,
    pub key: LinearIds,
    pub value: LinearIds,
    pub output: LinearIds,
}

impl MultiHeadIds {
    pub fn apply(&self, tape: &mut Tape<'_>, q: Var, k: Var, v: Var, n_heads: usize) -> Result<Var> {
        let qp = self.query.apply(tape, q)?;
        let kp = self.key.apply(tape, k)?;
        let vp = self.value.apply(tape, v)?;
        let heads = split_head_attention(tape, qp, kp, vp, n_heads)?;
        self.output.apply(tape, heads)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmIds {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl LstmIds {
    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w_ih = tape.param(self.w_ih);
        let w_hh = tape.param(self.w_hh);
        let b = tape.param(self.bias);
        tape.lstm(x, w_ih, w_hh, b)
    }
}
