//! Penalty-transformed sum-rate objective.
//!
//! For a batch of `N` examples with beamformers `W_i`:
//!
//! ```text
//! total = mean_i Σ_k log2(1 + SINR_ik)
//!       - λ1 [max(0, mean_ik CRLB(θ_ik) - γ_θ)]²
//!       - λ2 [max(0, mean_ik CRLB(d_ik) - γ_d)]²
//!       - λ3 mean_i [max(0, ‖W_i‖² - P)]²
//! ```
//!
//! Bounds are evaluated at the true slot-`n` geometry and saturated at
//! [`SystemParams::crlb_cap`]. [`batch_objective`] evaluates this directly;
//! [`cost_graph`] builds the same quantity on an autodiff [`Graph`] so that
//! training can differentiate it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::crlb;
use crate::error::{invalid, Result};
use crate::kinematics::VehicleState;
use crate::math;
use crate::params::SystemParams;
use crate::system::{reflection_coeff, steering_vector, sum_rate, BeamformingMatrix, ChannelSnapshot};

/// True channel and geometry of the prediction slot.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SlotTruth {
    pub channel: ChannelSnapshot,
    pub states: Vec<VehicleState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PenaltyBreakdown {
    pub sum_rate_term: f64,
    pub angle_penalty: f64,
    pub dist_penalty: f64,
    pub power_penalty: f64,
    /// `sum_rate_term - angle_penalty - dist_penalty - power_penalty`.
    pub total: f64,
    pub mean_crlb_angle: f64,
    pub mean_crlb_dist: f64,
    /// Mean `‖W‖_F²` over the batch.
    pub power_used_w: f64,
}

/// Slack of each constraint; non-negative entries are satisfied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slack {
    pub angle: f64,
    pub dist: f64,
    pub power: f64,
}

impl Slack {
    pub fn feasible(&self) -> bool {
        self.angle >= 0.0 && self.dist >= 0.0 && self.power >= 0.0
    }
}

fn hinge(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `(CRLB(θ), CRLB(d))` of vehicle `k`, saturated at the cap.
pub fn capped_crlbs(truth: &SlotTruth, w: &BeamformingMatrix, k: usize, p: &SystemParams) -> Result<(f64, f64)> {
    let pair = crlb::crlb_pair(&truth.states, w, k, p)?;
    Ok((pair.crlb_angle.min(p.crlb_cap), pair.crlb_dist.min(p.crlb_cap)))
}

/// Mean capped bounds over the vehicles of one example.
fn mean_crlbs(truth: &SlotTruth, w: &BeamformingMatrix, p: &SystemParams) -> Result<(f64, f64)> {
    let k = truth.states.len();
    let mut sa = 0.0;
    let mut sd = 0.0;
    for i in 0..k {
        let (a, d) = capped_crlbs(truth, w, i, p)?;
        sa += a;
        sd += d;
    }
    Ok((sa / k as f64, sd / k as f64))
}

pub fn batch_objective(truths: &[SlotTruth], ws: &[BeamformingMatrix], p: &SystemParams) -> Result<PenaltyBreakdown> {
    if truths.is_empty() {
        return Err(invalid("empty batch"));
    }
    if truths.len() != ws.len() {
        return Err(invalid(format!(
            "{} examples but {} beamformers",
            truths.len(),
            ws.len()
        )));
    }
    let n = truths.len() as f64;
    let mut rate = 0.0;
    let mut ca = 0.0;
    let mut cd = 0.0;
    let mut power_hinge = 0.0;
    let mut power = 0.0;
    for (t, w) in truths.iter().zip(ws) {
        rate += sum_rate(&t.channel, w, p)?;
        let (a, d) = mean_crlbs(t, w, p)?;
        ca += a;
        cd += d;
        let pw = w.power_used_w();
        power += pw;
        let h = hinge(pw - p.power_budget_w);
        power_hinge += h * h;
    }
    let mean_crlb_angle = ca / n;
    let mean_crlb_dist = cd / n;
    let ha = hinge(mean_crlb_angle - p.crlb_angle_max);
    let hd = hinge(mean_crlb_dist - p.crlb_dist_max);
    let out = PenaltyBreakdown {
        sum_rate_term: rate / n,
        angle_penalty: p.penalty_angle * ha * ha,
        dist_penalty: p.penalty_dist * hd * hd,
        power_penalty: p.penalty_power * power_hinge / n,
        total: 0.0,
        mean_crlb_angle,
        mean_crlb_dist,
        power_used_w: power / n,
    };
    Ok(PenaltyBreakdown {
        total: out.sum_rate_term - out.angle_penalty - out.dist_penalty - out.power_penalty,
        ..out
    })
}

/// Per-constraint slacks of one example.
pub fn feasibility_report(w: &BeamformingMatrix, truth: &SlotTruth, p: &SystemParams) -> Result<Slack> {
    let (a, d) = mean_crlbs(truth, w, p)?;
    Ok(Slack {
        angle: p.crlb_angle_max - a,
        dist: p.crlb_dist_max - d,
        power: p.power_budget_w - w.power_used_w(),
    })
}

/// Constant tensors the differentiable cost needs for one batch.
#[derive(Debug, Clone)]
pub struct CostBatch {
    batch: usize,
    n_tx: usize,
    k: usize,
    /// Rows are channel vectors: `[B, K, Nt]`.
    h_re: Tensor,
    h_im: Tensor,
    /// Rows are steering vectors toward the true angles: `[B, K, Nt]`.
    a_re: Tensor,
    a_im: Tensor,
    /// `m e^{jπ m cos θ_k}` laid out like `W`: `[B, Nt, K]`.
    c_re: Tensor,
    c_im: Tensor,
    /// `σ_r² / (Nr ξ² |β_k|² π² sin² θ_k)`: `[B, K]`.
    angle_num: Tensor,
    /// `G² |β_i|²` at `[b, k, i]`.
    echo_weight: Tensor,
    noise_rx: Tensor,
    diag: Tensor,
    off_diag: Tensor,
}

impl CostBatch {
    pub fn new(truths: &[&SlotTruth], p: &SystemParams) -> Result<Self> {
        let first = truths.first().ok_or_else(|| invalid("empty batch"))?;
        let batch = truths.len();
        let n_tx = p.n_tx;
        let k = first.states.len();
        let mut h_re = vec![0.0; batch * k * n_tx];
        let mut h_im = h_re.clone();
        let mut a_re = h_re.clone();
        let mut a_im = h_re.clone();
        let mut c_re = h_re.clone();
        let mut c_im = h_re.clone();
        let mut angle_num = vec![0.0; batch * k];
        let mut noise_rx = vec![0.0; batch * k];
        let mut echo_weight = vec![0.0; batch * k * k];
        let mut diag = vec![0.0; batch * k * k];
        let g2 = (p.n_tx * p.n_rx) as f64;
        for (b, t) in truths.iter().enumerate() {
            if t.states.len() != k || t.channel.n_vehicles() != k || t.channel.n_tx() != n_tx {
                return Err(invalid("inconsistent example shapes in batch"));
            }
            for kk in 0..k {
                let s = &t.states[kk];
                let h = t.channel.column(kk);
                let a = steering_vector(s.theta, n_tx)?;
                let beta2 = reflection_coeff(s.dist, p)?.norm_sqr();
                let cos = math::cos(s.theta);
                let sin = math::sin(s.theta);
                for m in 0..n_tx {
                    let row = (b * k + kk) * n_tx + m;
                    h_re[row] = h[m].re;
                    h_im[row] = h[m].im;
                    a_re[row] = a[m].re;
                    a_im[row] = a[m].im;
                    let col = (b * n_tx + m) * k + kk;
                    let ph = PI * m as f64 * cos;
                    c_re[col] = m as f64 * math::cos(ph);
                    c_im[col] = m as f64 * math::sin(ph);
                }
                let denom = p.n_rx as f64 * p.mf_gain * p.mf_gain * beta2 * PI * PI * sin * sin;
                angle_num[b * k + kk] = p.echo_obs_var_w / denom;
                noise_rx[b * k + kk] = p.noise_rx(kk);
                for i in 0..k {
                    let beta_i = reflection_coeff(t.states[i].dist, p)?.norm_sqr();
                    echo_weight[(b * k + kk) * k + i] = g2 * beta_i;
                }
                diag[(b * k + kk) * k + kk] = 1.0;
            }
        }
        let off_diag = diag.iter().map(|d| 1.0 - d).collect();
        let t3 = |d: Vec<f64>, s: [usize; 3]| Tensor::new(&s, d);
        Ok(Self {
            batch,
            n_tx,
            k,
            h_re: t3(h_re, [batch, k, n_tx])?,
            h_im: t3(h_im, [batch, k, n_tx])?,
            a_re: t3(a_re, [batch, k, n_tx])?,
            a_im: t3(a_im, [batch, k, n_tx])?,
            c_re: t3(c_re, [batch, n_tx, k])?,
            c_im: t3(c_im, [batch, n_tx, k])?,
            angle_num: Tensor::new(&[batch, k], angle_num)?,
            echo_weight: t3(echo_weight, [batch, k, k])?,
            noise_rx: Tensor::new(&[batch, k], noise_rx)?,
            diag: t3(diag, [batch, k, k])?,
            off_diag: t3(off_diag, [batch, k, k])?,
        })
    }

    pub fn len(&self) -> usize {
        self.batch
    }

    pub fn is_empty(&self) -> bool {
        self.batch == 0
    }
}

/// Nodes of the differentiable objective.
#[derive(Debug, Clone, Copy)]
pub struct CostNodes {
    /// Scalar to minimise: `-total`.
    pub cost: NodeId,
    pub total: NodeId,
    pub sum_rate: NodeId,
    pub angle_penalty: NodeId,
    pub dist_penalty: NodeId,
    pub power_penalty: NodeId,
    pub mean_crlb_angle: NodeId,
    pub mean_crlb_dist: NodeId,
    pub mean_power: NodeId,
}

impl CostNodes {
    pub fn breakdown(&self, g: &Graph) -> PenaltyBreakdown {
        let v = |id| g.value(id).item();
        PenaltyBreakdown {
            sum_rate_term: v(self.sum_rate),
            angle_penalty: v(self.angle_penalty),
            dist_penalty: v(self.dist_penalty),
            power_penalty: v(self.power_penalty),
            total: v(self.total),
            mean_crlb_angle: v(self.mean_crlb_angle),
            mean_crlb_dist: v(self.mean_crlb_dist),
            power_used_w: v(self.mean_power),
        }
    }
}

/// `|Xᴴ W|²` for rows `x` of `[B, K, Nt]` against `W = w_re + j w_im` of `[B, Nt, K]`.
fn gain_sq(g: &mut Graph, x_re: NodeId, x_im: NodeId, w_re: NodeId, w_im: NodeId) -> Result<NodeId> {
    let rr = g.matmul(x_re, w_re)?;
    let ii = g.matmul(x_im, w_im)?;
    let ri = g.matmul(x_re, w_im)?;
    let ir = g.matmul(x_im, w_re)?;
    let re = g.add(rr, ii)?;
    let im = g.sub(ri, ir)?;
    let re2 = g.square(re);
    let im2 = g.square(im);
    g.add(re2, im2)
}

fn squared_hinge(g: &mut Graph, x: NodeId, threshold: f64, weight: f64) -> NodeId {
    let shifted = g.add_scalar(x, -threshold);
    let r = g.ramp(shifted);
    let sq = g.square(r);
    g.scale(sq, weight)
}

/// Builds the objective for beamformers `w_re`, `w_im` of shape `[B, Nt, K]`.
pub fn cost_graph(
    g: &mut Graph,
    w_re: NodeId,
    w_im: NodeId,
    batch: &CostBatch,
    p: &SystemParams,
) -> Result<CostNodes> {
    let want = [batch.batch, batch.n_tx, batch.k];
    if g.shape(w_re) != want || g.shape(w_im) != want {
        return Err(invalid(format!(
            "beamformer shape {:?} does not match batch {want:?}",
            g.shape(w_re)
        )));
    }
    let (bsz, k) = (batch.batch, batch.k);
    let diag = g.constant(batch.diag.clone());
    let off = g.constant(batch.off_diag.clone());

    // Sum rate: log2(S + I + σ²) - log2(I + σ²) per vehicle.
    let h_re = g.constant(batch.h_re.clone());
    let h_im = g.constant(batch.h_im.clone());
    let gains = gain_sq(g, h_re, h_im, w_re, w_im)?;
    let sig_m = g.mul(gains, diag)?;
    let sig = g.sum_axis(sig_m, 2)?;
    let int_m = g.mul(gains, off)?;
    let intf = g.sum_axis(int_m, 2)?;
    let noise = g.constant(batch.noise_rx.clone());
    let floor = g.add(intf, noise)?;
    let all = g.add(floor, sig)?;
    let l_all = g.log2(all);
    let l_floor = g.log2(floor);
    let rates = g.sub(l_all, l_floor)?;
    let rate_sum = g.sum(rates);
    let sum_rate = g.scale(rate_sum, 1.0 / bsz as f64);

    // Angle bound: σ_r² / (Nr ξ² |β|² π² sin²θ |Σ_m m e^{jπ m cosθ} w_m|²).
    let c_re = g.constant(batch.c_re.clone());
    let c_im = g.constant(batch.c_im.clone());
    let t1 = g.mul(c_re, w_re)?;
    let t2 = g.mul(c_im, w_im)?;
    let t3 = g.mul(c_re, w_im)?;
    let t4 = g.mul(c_im, w_re)?;
    let s_re_m = g.sub(t1, t2)?;
    let s_im_m = g.add(t3, t4)?;
    let s_re = g.sum_axis(s_re_m, 1)?;
    let s_im = g.sum_axis(s_im_m, 1)?;
    let s_re2 = g.square(s_re);
    let s_im2 = g.square(s_im);
    let deriv = g.add(s_re2, s_im2)?;
    let angle_num = g.constant(batch.angle_num.clone());
    let crlb_angle = g.capped_div(angle_num, deriv, p.crlb_cap)?;
    let mean_crlb_angle = g.mean(crlb_angle)?;

    // Distance bound: (ρ_ν² c² / 4) (I_echo + σ_z²) / S_echo.
    let a_re = g.constant(batch.a_re.clone());
    let a_im = g.constant(batch.a_im.clone());
    let beam = gain_sq(g, a_re, a_im, w_re, w_im)?;
    let weight = g.constant(batch.echo_weight.clone());
    let echo = g.mul(beam, weight)?;
    let es_m = g.mul(echo, diag)?;
    let echo_sig = g.sum_axis(es_m, 2)?;
    let ei_m = g.mul(echo, off)?;
    let echo_int = g.sum_axis(ei_m, 2)?;
    let echo_floor = g.add_scalar(echo_int, p.noise_echo_w);
    let dist_scale = p.delay_const * p.delay_const * p.wave_speed_mps * p.wave_speed_mps / 4.0;
    let dist_num = g.scale(echo_floor, dist_scale);
    let crlb_dist = g.capped_div(dist_num, echo_sig, p.crlb_cap)?;
    let mean_crlb_dist = g.mean(crlb_dist)?;

    // Power: per-example squared hinge.
    let wr2 = g.square(w_re);
    let wi2 = g.square(w_im);
    let w2 = g.add(wr2, wi2)?;
    let per_ant = g.sum_axis(w2, 2)?;
    let power = g.sum_axis(per_ant, 1)?;
    let mean_power = g.mean(power)?;
    let excess = g.add_scalar(power, -p.power_budget_w);
    let over = g.ramp(excess);
    let over2 = g.square(over);
    let mean_over2 = g.mean(over2)?;
    let power_penalty = g.scale(mean_over2, p.penalty_power);

    let angle_penalty = squared_hinge(g, mean_crlb_angle, p.crlb_angle_max, p.penalty_angle);
    let dist_penalty = squared_hinge(g, mean_crlb_dist, p.crlb_dist_max, p.penalty_dist);
    let t = g.sub(sum_rate, angle_penalty)?;
    let t = g.sub(t, dist_penalty)?;
    let total = g.sub(t, power_penalty)?;
    let cost = g.scale(total, -1.0);
    let _ = k;
    Ok(CostNodes {
        cost,
        total,
        sum_rate,
        angle_penalty,
        dist_penalty,
        power_penalty,
        mean_crlb_angle,
        mean_crlb_dist,
        mean_power,
    })
}

/// Splits `[B, Nt, 2K]` raw network output into real and imaginary `[B, Nt, K]` halves.
pub fn split_raw(g: &mut Graph, raw: NodeId, k: usize) -> Result<(NodeId, NodeId)> {
    let re = g.slice(raw, 2, 0, k)?;
    let im = g.slice(raw, 2, k, k)?;
    Ok((re, im))
}

/// Real/imaginary `[B, Nt, K]` tensors of a list of beamformers.
pub fn beamformers_to_tensors(ws: &[BeamformingMatrix]) -> Result<(Tensor, Tensor)> {
    let first = ws.first().ok_or_else(|| invalid("no beamformers"))?;
    let (nt, k) = (first.n_tx(), first.n_vehicles());
    let mut re = Vec::with_capacity(ws.len() * nt * k);
    let mut im = Vec::with_capacity(ws.len() * nt * k);
    for w in ws {
        if w.n_tx() != nt || w.n_vehicles() != k {
            return Err(invalid("beamformers of different shapes"));
        }
        for m in 0..nt {
            for kk in 0..k {
                let v = w.entries().get(m, kk);
                re.push(v.re);
                im.push(v.im);
            }
        }
    }
    Ok((
        Tensor::new(&[ws.len(), nt, k], re)?,
        Tensor::new(&[ws.len(), nt, k], im)?,
    ))
}
