//! Layers built from graph primitives.

use rand::Rng;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{invalid, Result};
use crate::math;

/// Uniform samples on `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
}

/// `x · w + b` for `x: [B, in]`, `w: [in, out]`, `b: [out]`.
pub fn dense(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

/// Weights of one LSTM cell. Gate blocks along the last axis are ordered
/// input, forget, output, candidate.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    /// `[D_in, 4H]`
    pub w_x: NodeId,
    /// `[H, 4H]`
    pub w_h: NodeId,
    /// `[4H]`
    pub b: NodeId,
}

/// One LSTM step on a batch: `x: [B, D_in]`, `h, c: [B, H]`. Returns `(h, c)`.
pub fn lstm_cell(g: &mut Graph, x: NodeId, h: NodeId, c: NodeId, w: &LstmWeights) -> Result<(NodeId, NodeId)> {
    let hidden = *g.shape(h).last().ok_or_else(|| invalid("lstm hidden state is a scalar"))?;
    if g.shape(w.b) != [4 * hidden] || g.shape(c) != g.shape(h) {
        return Err(invalid("lstm state and weight shapes disagree"));
    }
    let zx = g.matmul(x, w.w_x)?;
    let zh = g.matmul(h, w.w_h)?;
    let z = g.add(zx, zh)?;
    let z = g.add_row(z, w.b)?;
    let axis = g.shape(z).len() - 1;
    let zi = g.slice(z, axis, 0, hidden)?;
    let zf = g.slice(z, axis, hidden, hidden)?;
    let zo = g.slice(z, axis, 2 * hidden, hidden)?;
    let zg = g.slice(z, axis, 3 * hidden, hidden)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let o = g.sigmoid(zo);
    let cand = g.tanh(zg);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}
