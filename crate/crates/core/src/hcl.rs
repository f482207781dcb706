//! Historical-channels convolutional LSTM (HCL) beamforming network.
//!
//! At each of the `τ` history steps, every vehicle's `Nt`-antenna channel is
//! treated as an `Nt × 1` image with two channels (real, imaginary) and passed
//! through that vehicle's own convolution, ReLU, max-pool and flatten stage.
//! The `K` feature vectors are concatenated and fed to one LSTM cell shared
//! across steps. A linear layer maps the last hidden state to the `Nt × 2K`
//! real output, read as `[Re W, Im W]`.
//!
//! Inputs are multiplied by `input_scale` and the head output by
//! `output_scale`; both are fixed constants, not trained.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::layers::{dense, glorot_uniform, lstm_cell, LstmWeights};
use crate::autodiff::{Graph, NodeId, Padding, ParameterSet, Tensor};
use crate::error::{invalid, Result};
use crate::kinematics::EstimatedHistory;
use crate::math;
use crate::system::{BeamformingMatrix, ChannelSnapshot, ComplexColumns};
use crate::Complex64;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HclConfig {
    pub tau: usize,
    pub k_vehicles: usize,
    pub n_tx: usize,
    pub conv_filters: usize,
    pub conv_kernel: (usize, usize),
    /// Max-pool (size, stride) along the antenna axis.
    pub pool: (usize, usize),
    pub lstm_hidden: usize,
    pub input_scale: f64,
    pub output_scale: f64,
}

impl HclConfig {
    /// Defaults for the given dimensions: 4 filters of 3×3, pool (4, 4), 64 hidden units.
    pub fn new(tau: usize, k_vehicles: usize, n_tx: usize) -> Self {
        Self {
            tau,
            k_vehicles,
            n_tx,
            conv_filters: 4,
            conv_kernel: (3, 3),
            pool: (4, 4),
            lstm_hidden: 64,
            input_scale: 1.0,
            output_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (ps, st) = self.pool;
        if self.tau == 0 || self.k_vehicles == 0 || self.n_tx == 0 {
            return Err(invalid("tau, k_vehicles and n_tx must be positive"));
        }
        if self.conv_filters == 0 || self.conv_kernel.0 == 0 || self.conv_kernel.1 == 0 || self.lstm_hidden == 0 {
            return Err(invalid("layer sizes must be positive"));
        }
        if ps == 0 || st == 0 || ps > self.n_tx {
            return Err(invalid(format!(
                "pool {:?} does not fit {} antennas",
                self.pool, self.n_tx
            )));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0)
            || !(self.output_scale.is_finite() && self.output_scale > 0.0)
        {
            return Err(invalid("input and output scales must be finite and positive"));
        }
        Ok(())
    }

    /// Pooled length along the antenna axis.
    pub fn pooled_len(&self) -> usize {
        (self.n_tx - self.pool.0) / self.pool.1 + 1
    }

    pub fn flatten_dim(&self) -> usize {
        self.pooled_len() * self.conv_filters
    }

    pub fn concat_dim(&self) -> usize {
        self.k_vehicles * self.flatten_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.n_tx * 2 * self.k_vehicles
    }
}

/// `[τ, K, Nt, 2]` real tensor of a channel history, oldest slot first.
pub fn map_input(history: &EstimatedHistory, cfg: &HclConfig) -> Result<Tensor> {
    if history.len() != cfg.tau {
        return Err(invalid(format!(
            "history has {} slots, network expects {}",
            history.len(),
            cfg.tau
        )));
    }
    let mut data = Vec::with_capacity(cfg.tau * cfg.k_vehicles * cfg.n_tx * 2);
    for snap in &history.snapshots {
        if snap.n_tx() != cfg.n_tx || snap.n_vehicles() != cfg.k_vehicles {
            return Err(invalid(format!(
                "snapshot is {}x{}, network expects {}x{}",
                snap.n_tx(),
                snap.n_vehicles(),
                cfg.n_tx,
                cfg.k_vehicles
            )));
        }
        for k in 0..cfg.k_vehicles {
            for h in snap.column(k) {
                data.push(h.re);
                data.push(h.im);
            }
        }
    }
    Tensor::new(&[cfg.tau, cfg.k_vehicles, cfg.n_tx, 2], data)
}

/// Inverse of [`map_input`]; slot indices are numbered from zero.
pub fn unmap_input(t: &Tensor) -> Result<Vec<ChannelSnapshot>> {
    let [tau, k, nt, two] = match t.shape() {
        [a, b, c, d] => [*a, *b, *c, *d],
        s => return Err(invalid(format!("expected a rank-4 history tensor, got {s:?}"))),
    };
    if two != 2 {
        return Err(invalid("last axis must hold real and imaginary parts"));
    }
    let d = t.data();
    (0..tau)
        .map(|l| {
            let cols: Vec<Vec<Complex64>> = (0..k)
                .map(|kk| {
                    (0..nt)
                        .map(|m| {
                            let i = ((l * k + kk) * nt + m) * 2;
                            Complex64::new(d[i], d[i + 1])
                        })
                        .collect()
                })
                .collect();
            Ok(ChannelSnapshot {
                entries: ComplexColumns::from_columns(&cols)?,
                slot_index: l as i64,
            })
        })
        .collect()
}

/// Complex beamformer from an `Nt × 2K` row-major raw output.
pub fn map_output(raw: &[f64], cfg: &HclConfig) -> Result<BeamformingMatrix> {
    raw_to_beamformer(raw, cfg.n_tx, cfg.k_vehicles)
}

/// Column `k` of the result is `raw[:, k] + j raw[:, K + k]`.
pub fn raw_to_beamformer(raw: &[f64], nt: usize, k: usize) -> Result<BeamformingMatrix> {
    if raw.len() != nt * 2 * k {
        return Err(invalid(format!(
            "raw output has {} values, expected {}",
            raw.len(),
            nt * 2 * k
        )));
    }
    let mut e = ComplexColumns::zeros(nt, k);
    for kk in 0..k {
        let col = e.column_mut(kk);
        for m in 0..nt {
            col[m] = Complex64::new(raw[m * 2 * k + kk], raw[m * 2 * k + k + kk]);
        }
    }
    Ok(BeamformingMatrix::new(e))
}

/// Stacks equally shaped tensors along a new leading batch axis.
pub fn stack(items: &[Tensor]) -> Result<Tensor> {
    let first = items.first().ok_or_else(|| invalid("nothing to stack"))?;
    let mut shape = alloc::vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(items.len() * first.len());
    for t in items {
        if t.shape() != first.shape() {
            return Err(invalid("cannot stack tensors of different shapes"));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(&shape, data)
}

pub fn conv_kernel_name(k: usize) -> alloc::string::String {
    format!("cnn{k}.kernel")
}

pub fn conv_bias_name(k: usize) -> alloc::string::String {
    format!("cnn{k}.bias")
}

/// Seeded initial parameters: Glorot-uniform weights, zero biases, LSTM forget bias 1.
pub fn init_params<R: Rng + ?Sized>(cfg: &HclConfig, rng: &mut R) -> Result<ParameterSet> {
    cfg.validate()?;
    let (kh, kw) = cfg.conv_kernel;
    let f = cfg.conv_filters;
    let h = cfg.lstm_hidden;
    let mut ps = ParameterSet::new();
    for k in 0..cfg.k_vehicles {
        ps.insert(&conv_kernel_name(k), glorot_uniform(&[f, kh, kw, 2], kh * kw * 2, kh * kw * f, rng))?;
        ps.insert(&conv_bias_name(k), Tensor::zeros(&[f]))?;
    }
    let d_in = cfg.concat_dim();
    ps.insert("lstm.w_x", glorot_uniform(&[d_in, 4 * h], d_in, 4 * h, rng))?;
    ps.insert("lstm.w_h", glorot_uniform(&[h, 4 * h], h, 4 * h, rng))?;
    ps.insert(
        "lstm.b",
        Tensor::from_fn(&[4 * h], |i| if (h..2 * h).contains(&i) { 1.0 } else { 0.0 }),
    )?;
    let out = cfg.output_dim();
    ps.insert("head.w", glorot_uniform(&[h, out], h, out, rng))?;
    ps.insert("head.b", Tensor::zeros(&[out]))?;
    Ok(ps)
}

/// Parameter nodes bound into a graph.
#[derive(Debug, Clone)]
pub struct HclNodes {
    conv: Vec<(NodeId, NodeId)>,
    lstm: LstmWeights,
    head_w: NodeId,
    head_b: NodeId,
}

fn lookup(ps: &ParameterSet, name: &str, shape: &[usize]) -> Result<usize> {
    let idx = ps
        .index_of(name)
        .ok_or_else(|| invalid(format!("missing parameter {name:?}")))?;
    if ps.entry(idx).shape() != shape {
        return Err(invalid(format!(
            "parameter {name:?} has shape {:?}, config needs {shape:?}",
            ps.entry(idx).shape()
        )));
    }
    Ok(idx)
}

/// Binds `ps` into `g`, checking every shape against `cfg`.
pub fn bind(g: &mut Graph, ps: &ParameterSet, cfg: &HclConfig) -> Result<HclNodes> {
    cfg.validate()?;
    let (kh, kw) = cfg.conv_kernel;
    let f = cfg.conv_filters;
    let h = cfg.lstm_hidden;
    let mut conv = Vec::with_capacity(cfg.k_vehicles);
    for k in 0..cfg.k_vehicles {
        let ki = lookup(ps, &conv_kernel_name(k), &[f, kh, kw, 2])?;
        let bi = lookup(ps, &conv_bias_name(k), &[f])?;
        conv.push((g.param(ps, ki), g.param(ps, bi)));
    }
    let wx = lookup(ps, "lstm.w_x", &[cfg.concat_dim(), 4 * h])?;
    let wh = lookup(ps, "lstm.w_h", &[h, 4 * h])?;
    let b = lookup(ps, "lstm.b", &[4 * h])?;
    let hw = lookup(ps, "head.w", &[h, cfg.output_dim()])?;
    let hb = lookup(ps, "head.b", &[cfg.output_dim()])?;
    Ok(HclNodes {
        conv,
        lstm: LstmWeights {
            w_x: g.param(ps, wx),
            w_h: g.param(ps, wh),
            b: g.param(ps, b),
        },
        head_w: g.param(ps, hw),
        head_b: g.param(ps, hb),
    })
}

/// Output of a batched forward pass.
#[derive(Debug, Clone)]
pub struct HclForward {
    /// `[B, Nt, 2K]`
    pub raw: NodeId,
    /// Concatenated CNN features fed to the LSTM at each step, `[B, concat_dim]`.
    pub concat: Vec<NodeId>,
}

/// Forward pass over a batch `[B, τ, K, Nt, 2]`.
pub fn forward_graph(g: &mut Graph, nodes: &HclNodes, input: &Tensor, cfg: &HclConfig) -> Result<HclForward> {
    let (b, tau, k, nt) = match input.shape() {
        [b, t, k, n, 2] => (*b, *t, *k, *n),
        s => return Err(invalid(format!("expected [B, τ, K, Nt, 2] input, got {s:?}"))),
    };
    if tau != cfg.tau || k != cfg.k_vehicles || nt != cfg.n_tx {
        return Err(invalid(format!(
            "input {:?} does not match config (τ={}, K={}, Nt={})",
            input.shape(),
            cfg.tau,
            cfg.k_vehicles,
            cfg.n_tx
        )));
    }
    let h = cfg.lstm_hidden;
    let slab = nt * 2;
    let mut hidden = g.constant(Tensor::zeros(&[b, h]));
    let mut cell = g.constant(Tensor::zeros(&[b, h]));
    let mut concat = Vec::with_capacity(tau);
    for l in 0..tau {
        let mut feats = Vec::with_capacity(k);
        for (kk, (kern, bias)) in nodes.conv.iter().enumerate() {
            let mut data = Vec::with_capacity(b * slab);
            for bi in 0..b {
                let base = ((bi * tau + l) * k + kk) * slab;
                data.extend(input.data()[base..base + slab].iter().map(|v| v * cfg.input_scale));
            }
            let x = g.constant(Tensor::new(&[b, nt, 1, 2], data)?);
            let y = g.conv2d(x, *kern, *bias, Padding::Same, (1, 1))?;
            let y = g.relu(y);
            let y = g.maxpool2d(y, cfg.pool.0, 1, cfg.pool.1, 1)?;
            feats.push(g.reshape(y, &[b, cfg.flatten_dim()])?);
        }
        let z = g.concat(&feats, 1)?;
        concat.push(z);
        let (hn, cn) = lstm_cell(g, z, hidden, cell, &nodes.lstm)?;
        hidden = hn;
        cell = cn;
    }
    let out = dense(g, hidden, nodes.head_w, nodes.head_b)?;
    let out = g.scale(out, cfg.output_scale);
    let raw = g.reshape(out, &[b, nt, 2 * k])?;
    Ok(HclForward { raw, concat })
}

/// Raw `Nt × 2K` output for one `[τ, K, Nt, 2]` input.
pub fn forward(input: &Tensor, ps: &ParameterSet, cfg: &HclConfig) -> Result<Tensor> {
    let batched = input.clone().reshaped(&[1, cfg.tau, cfg.k_vehicles, cfg.n_tx, 2]).map_err(|_| {
        invalid(format!(
            "input {:?} does not match config (τ={}, K={}, Nt={})",
            input.shape(),
            cfg.tau,
            cfg.k_vehicles,
            cfg.n_tx
        ))
    })?;
    let mut g = Graph::new();
    let nodes = bind(&mut g, ps, cfg)?;
    let out = forward_graph(&mut g, &nodes, &batched, cfg)?;
    g.value(out.raw).clone().reshaped(&[cfg.n_tx, 2 * cfg.k_vehicles])
}

/// `1 / RMS` of all entries, for use as `input_scale`.
pub fn rms_scale<'a>(values: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v * v;
        n += 1;
    }
    if n == 0 || s == 0.0 {
        1.0
    } else {
        1.0 / math::sqrt(s / n as f64)
    }
}
