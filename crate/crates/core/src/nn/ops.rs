//! Forward kernels shared by the tape and by the plain matrix API.
//!
//! Functions here take and return concrete matrices; the differentiable
//! versions in [`super::tape`] call into the same kernels so that a value
//! computed through either route is bit-identical.

use super::matrix::Matrix;
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const PROB_CLAMP: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// `softmax(Q Kᵀ / √d_k)`, the attention weights of [`scaled_dot_attention`].
pub fn attention_weights(q: &Matrix, k: &Matrix) -> Result<Matrix> {
    if q.cols() != k.cols() {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!("Q is {:?} but K is {:?}", q.shape(), k.shape()),
        ));
    }
    if q.cols() == 0 {
        return Err(Error::shape("scaled_dot_attention", "d_k must be positive"));
    }
    let scores = q.matmul_bt(k)?.scale(1.0 / (q.cols() as f64).sqrt());
    Ok(softmax_rows(&scores))
}

/// `softmax(Q Kᵀ / √d_k) V`.
pub fn scaled_dot_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    if k.rows() != v.rows() {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!("K is {:?} but V is {:?}", k.shape(), v.shape()),
        ));
    }
    attention_weights(q, k)?.matmul(v)
}

/// Head-split attention without projections: head `i` attends with the
/// `i`-th column block of Q, K and V, and the head outputs are concatenated.
pub fn split_head_attention(q: &Matrix, k: &Matrix, v: &Matrix, n_heads: usize) -> Result<Matrix> {
    check_heads("split_head_attention", q.cols(), n_heads)?;
    if k.cols() != q.cols() || v.cols() != q.cols() || k.rows() != v.rows() {
        return Err(Error::shape(
            "split_head_attention",
            format!(
                "Q {:?}, K {:?}, V {:?}",
                q.shape(),
                k.shape(),
                v.shape()
            ),
        ));
    }
    let d_head = q.cols() / n_heads;
    let heads = (0..n_heads)
        .map(|h| {
            let s = h * d_head;
            scaled_dot_attention(
                &q.slice_cols(s, d_head)?,
                &k.slice_cols(s, d_head)?,
                &v.slice_cols(s, d_head)?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::concat_cols(&heads.iter().collect::<Vec<_>>())
}

pub(crate) fn check_heads(op: &'static str, d_model: usize, n_heads: usize) -> Result<()> {
    if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
        return Err(Error::shape(
            op,
            format!("d_model {d_model} is not divisible by {n_heads} heads"),
        ));
    }
    Ok(())
}

/// Affine map `x Wᵀ + b` with `W: [out x in]`, `b: [1 x out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn new(weight: Matrix, bias: Matrix) -> Result<Self> {
        if bias.shape() != (1, weight.rows()) {
            return Err(Error::shape(
                "Linear::new",
                format!("bias {:?} for weight {:?}", bias.shape(), weight.shape()),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            weight: Matrix::identity(n),
            bias: Matrix::zeros(1, n),
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul_bt(&self.weight)?.add_row(&self.bias)
    }
}

/// Learned projections of a multi-head attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadWeights {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

/// Multi-head attention: per-head projected Q, K, V, scaled dot-product
/// attention with `d_model / n_heads` columns per head, concatenation and an
/// output projection.
pub fn multi_head_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    n_heads: usize,
    w: &MultiHeadWeights,
) -> Result<Matrix> {
    let qp = w.query.apply(q)?;
    let kp = w.key.apply(k)?;
    let vp = w.value.apply(v)?;
    let heads = split_head_attention(&qp, &kp, &vp, n_heads)?;
    w.output.apply(&heads)
}

/// Layer normalization of `x + sublayer_out` with per-feature gain and bias.
pub fn layer_norm_residual(
    x: &Matrix,
    sublayer_out: &Matrix,
    gain: &Matrix,
    bias: &Matrix,
) -> Result<Matrix> {
    let sum = x.add(sublayer_out)?;
    Ok(layer_norm(&sum, gain, bias)?.output)
}

pub(crate) struct LayerNormOut {
    pub output: Matrix,
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> Result<LayerNormOut> {
    let d = x.cols();
    if gain.shape() != (1, d) || bias.shape() != (1, d) {
        return Err(Error::shape(
            "layer_norm",
            format!(
                "gain {:?} / bias {:?} for width {d}",
                gain.shape(),
                bias.shape()
            ),
        ));
    }
    let mut normalized = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = normalized.row_mut(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * s;
        }
        inv_std.push(s);
    }
    let mut output = normalized.clone();
    for i in 0..output.rows() {
        for ((o, g), b) in output
            .row_mut(i)
            .iter_mut()
            .zip(gain.as_slice())
            .zip(bias.as_slice())
        {
            *o = *o * g + b;
        }
    }
    Ok(LayerNormOut {
        output,
        normalized,
        inv_std,
    })
}

/// Returns `(dx, dgain, dbias)`.
pub(crate) fn layer_norm_backward(
    dy: &Matrix,
    gain: &Matrix,
    normalized: &Matrix,
    inv_std: &[f64],
) -> (Matrix, Matrix, Matrix) {
    let (n, d) = dy.shape();
    let mut dx = Matrix::zeros(n, d);
    let mut dgain = Matrix::zeros(1, d);
    let dbias = dy.sum_rows();
    let mut dxhat = vec![0.0; d];
    for (i, &inv) in inv_std.iter().enumerate().take(n) {
        let dyr = dy.row(i);
        let xh = normalized.row(i);
        for j in 0..d {
            dgain.as_mut_slice()[j] += dyr[j] * xh[j];
            dxhat[j] = dyr[j] * gain.as_slice()[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for (j, out) in dx.row_mut(i).iter_mut().enumerate() {
            *out = inv * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    (dx, dgain, dbias)
}

/// `softmax(W h + b)` for a two-class projection; returns
/// `(p_negative, p_positive)`.
pub fn dense_softmax(h: &[f64], w: &Matrix, b: &[f64; 2]) -> Result<(f64, f64)> {
    if w.shape() != (2, h.len()) {
        return Err(Error::shape(
            "dense_softmax",
            format!("W is {:?} for h of length {}", w.shape(), h.len()),
        ));
    }
    let logits = [dot(w.row(0), h) + b[0], dot(w.row(1), h) + b[1]];
    Ok(softmax_pair(logits))
}

pub(crate) fn softmax_pair(logits: [f64; 2]) -> (f64, f64) {
    let p = softmax_rows(&Matrix::row_vector(&logits));
    (p.as_slice()[0], p.as_slice()[1])
}

/// Binary cross-entropy of the positive-class probability.
pub fn cross_entropy(p_positive: f64, label: u8) -> f64 {
    let p = p_positive.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean binary cross-entropy over a batch.
pub fn mean_cross_entropy(batch: &[(f64, u8)]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().map(|&(p, y)| cross_entropy(p, y)).sum::<f64>() / batch.len() as f64
}

/// Weights of a single-layer unidirectional LSTM. Gate blocks in `w_ih`,
/// `w_hh` and `bias` are ordered input, forget, cell candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights {
    /// `[4h x d_in]`
    pub w_ih: Matrix,
    /// `[4h x h]`
    pub w_hh: Matrix,
    /// `[1 x 4h]`
    pub bias: Matrix,
}

impl LstmWeights {
    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }
}

pub(crate) struct LstmCache {
    /// Activated gates `[n x 4h]`: i, f, g, o.
    pub gates: Matrix,
    /// Cell states `[n x h]`.
    pub cells: Matrix,
    /// Hidden states `[n x h]`.
    pub hidden: Matrix,
}

pub(crate) fn check_lstm(
    x: &Matrix,
    w_ih: &Matrix,
    w_hh: &Matrix,
    bias: &Matrix,
    h0: &[f64],
    c0: &[f64],
) -> Result<()> {
    let h = w_hh.cols();
    let ok = w_hh.rows() == 4 * h
        && w_ih.rows() == 4 * h
        && w_ih.cols() == x.cols()
        && bias.shape() == (1, 4 * h)
        && h0.len() == h
        && c0.len() == h;
    if !ok {
        return Err(Error::shape(
            "lstm_forward",
            format!(
                "inputs {:?}, w_ih {:?}, w_hh {:?}, bias {:?}, h0 {}, c0 {}",
                x.shape(),
                w_ih.shape(),
                w_hh.shape(),
                bias.shape(),
                h0.len(),
                c0.len()
            ),
        ));
    }
    Ok(())
}

pub(crate) fn lstm_forward_cached(
    x: &Matrix,
    w_ih: &Matrix,
    w_hh: &Matrix,
    bias: &Matrix,
    h0: &[f64],
    c0: &[f64],
) -> Result<LstmCache> {
    check_lstm(x, w_ih, w_hh, bias, h0, c0)?;
    let h = w_hh.cols();
    let n = x.rows();
    let mut gates = x.matmul_bt(w_ih)?.add_row(bias)?;
    let mut cells = Matrix::zeros(n, h);
    let mut hidden = Matrix::zeros(n, h);
    let mut h_prev = h0.to_vec();
    let mut c_prev = c0.to_vec();
    for t in 0..n {
        let z = gates.row_mut(t);
        for (r, zr) in z.iter_mut().enumerate() {
            *zr += dot(w_hh.row(r), &h_prev);
        }
        for j in 0..h {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[h + j]);
            let g_g = z[2 * h + j].tanh();
            let o_g = sigmoid(z[3 * h + j]);
            z[j] = i_g;
            z[h + j] = f_g;
            z[2 * h + j] = g_g;
            z[3 * h + j] = o_g;
            let c = f_g * c_prev[j] + i_g * g_g;
            c_prev[j] = c;
            h_prev[j] = o_g * c.tanh();
        }
        cells.row_mut(t).copy_from_slice(&c_prev);
        hidden.row_mut(t).copy_from_slice(&h_prev);
    }
    Ok(LstmCache {
        gates,
        cells,
        hidden,
    })
}

pub(crate) struct LstmGrads {
    pub dx: Matrix,
    pub dw_ih: Matrix,
    pub dw_hh: Matrix,
    pub dbias: Matrix,
}

/// Backpropagation through time for [`lstm_forward_cached`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward(
    gates: &Matrix,
    cells: &Matrix,
    hidden: &Matrix,
    x: &Matrix,
    w_ih: &Matrix,
    w_hh: &Matrix,
    h0: &[f64],
    c0: &[f64],
    d_hidden: &Matrix,
) -> Result<LstmGrads> {
    let h = w_hh.cols();
    let n = x.rows();
    let mut dz = Matrix::zeros(n, 4 * h);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for t in (0..n).rev() {
        let g = gates.row(t);
        let c = cells.row(t);
        let c_prev: &[f64] = if t == 0 { c0 } else { cells.row(t - 1) };
        let dzt = dz.row_mut(t);
        for j in 0..h {
            let (i_g, f_g, g_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let dh = d_hidden[(t, j)] + dh_next[j];
            let tc = c[j].tanh();
            let d_o = dh * tc;
            let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
            let d_i = dc * g_g;
            let d_g = dc * i_g;
            let d_f = dc * c_prev[j];
            dc_next[j] = dc * f_g;
            dzt[j] = d_i * i_g * (1.0 - i_g);
            dzt[h + j] = d_f * f_g * (1.0 - f_g);
            dzt[2 * h + j] = d_g * (1.0 - g_g * g_g);
            dzt[3 * h + j] = d_o * o_g * (1.0 - o_g);
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for (r, &dzr) in dzt.iter().enumerate() {
            if dzr != 0.0 {
                for (acc, w) in dh_next.iter_mut().zip(w_hh.row(r)) {
                    *acc += dzr * w;
                }
            }
        }
    }
    let mut h_prev = Matrix::zeros(n, h);
    if n > 0 {
        h_prev.row_mut(0).copy_from_slice(h0);
        for t in 1..n {
            h_prev.row_mut(t).copy_from_slice(hidden.row(t - 1));
        }
    }
    Ok(LstmGrads {
        dx: dz.matmul(w_ih)?,
        dw_ih: dz.matmul_at(x)?,
        dw_hh: dz.matmul_at(&h_prev)?,
        dbias: dz.sum_rows(),
    })
}

/// Runs the LSTM over `inputs` and returns every hidden state `[n x h]`.
/// `h0`/`c0` default to zeros when `None`.
pub fn lstm_forward(
    inputs: &Matrix,
    weights: &LstmWeights,
    h0: Option<&[f64]>,
    c0: Option<&[f64]>,
) -> Result<Matrix> {
    let zeros = vec![0.0; weights.hidden()];
    let cache = lstm_forward_cached(
        inputs,
        &weights.w_ih,
        &weights.w_hh,
        &weights.bias,
        h0.unwrap_or(&zeros),
        c0.unwrap_or(&zeros),
    )?;
    Ok(cache.hidden)
}
