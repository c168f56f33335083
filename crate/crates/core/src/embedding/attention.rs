//! Scaled dot-product attention, plain and on a tape.

use std::sync::Arc;

use crate::autodiff::{softmax_rows, Mask, Tape, Var};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub output: Matrix,
    /// Row-stochastic attention weights; masked entries are exactly zero.
    pub weights: Matrix,
}

/// `softmax(QKᵀ/√d ⊙ mask) V`.
///
/// A query row whose every key is masked gets a zero output row.
pub fn attention_forward(q: &Matrix, k: &Matrix, v: &Matrix, mask: Option<&Mask>) -> AttentionOutput {
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let scores = q.matmul_t(k).map(|s| s * scale);
    let weights = softmax_rows(&scores, mask);
    AttentionOutput {
        output: weights.matmul(v),
        weights,
    }
}

/// Tape handles for one multi-head attention block.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Multi-head attention: queries from `query_src`, keys and values from `kv_src`.
pub(crate) fn multi_head(
    tape: &mut Tape,
    query_src: Var,
    kv_src: Var,
    p: AttentionVars,
    heads: usize,
    mask: Option<Arc<Mask>>,
) -> Var {
    let q = tape.matmul(query_src, p.wq);
    let k = tape.matmul(kv_src, p.wk);
    let v = tape.matmul(kv_src, p.wv);
    let d = tape.value(q).cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let s = tape.matmul_t(qh, kh);
        let s = tape.scale(s, scale);
        let a = tape.softmax(s, mask.clone());
        outs.push(tape.matmul(a, vh));
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
    let o = tape.matmul(cat, p.wo);
    tape.add_row(o, p.bo)
}
