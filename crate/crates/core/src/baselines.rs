//! Comparison schemes: the interference-free water-filling upper bound, a
//! fully connected network fed only the latest estimated channel, and random
//! beams.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::layers::{dense, glorot_uniform};
use crate::autodiff::{Graph, NodeId, ParameterSet, Tensor};
use crate::error::{invalid, Result};
use crate::kinematics::EstimatedHistory;
use crate::math;
use crate::params::SystemParams;
use crate::rng::SimRng;
use crate::system::{norm_sqr, BeamformingMatrix, ChannelSnapshot, ComplexColumns};
use crate::training::{self, Dataset, Network, TrainConfig, TrainingReport};
use crate::Complex64;

/// Powers `max(0, μ - 1/g_k)` summing to `budget`.
///
/// Non-positive gains receive no power. The water level is found by repeatedly
/// dropping channels whose share would be negative.
pub fn waterfilling(gains: &[f64], budget: f64) -> Result<Vec<f64>> {
    if gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(invalid("gains must be finite and non-negative"));
    }
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(invalid("power budget must be positive"));
    }
    let mut active: Vec<usize> = (0..gains.len()).filter(|&k| gains[k] > 0.0).collect();
    if active.is_empty() {
        return Err(invalid("all gains are zero"));
    }
    loop {
        let inv: f64 = active.iter().map(|&k| 1.0 / gains[k]).sum();
        let mu = (budget + inv) / active.len() as f64;
        let before = active.len();
        active.retain(|&k| mu - 1.0 / gains[k] > 0.0);
        if active.len() == before {
            let mut p = alloc::vec![0.0; gains.len()];
            for &k in &active {
                p[k] = mu - 1.0 / gains[k];
            }
            return Ok(p);
        }
    }
}

/// `Σ log2(1 + p_k g_k)`.
pub fn parallel_rate(gains: &[f64], powers: &[f64]) -> f64 {
    gains
        .iter()
        .zip(powers)
        .map(|(g, p)| math::log2(1.0 + p * g))
        .sum()
}

/// Matched beams with water-filled powers on the true channel, and their
/// interference-free rate.
pub fn upper_bound(h: &ChannelSnapshot, p: &SystemParams) -> Result<(BeamformingMatrix, f64)> {
    let k = h.n_vehicles();
    let gains: Vec<f64> = (0..k).map(|i| norm_sqr(h.column(i)) / p.noise_rx(i)).collect();
    let powers = waterfilling(&gains, p.power_budget_w)?;
    let cols: Vec<Vec<Complex64>> = (0..k)
        .map(|i| {
            let col = h.column(i);
            let s = math::sqrt(powers[i] / norm_sqr(col));
            col.iter().map(|v| v * s).collect()
        })
        .collect();
    Ok((
        BeamformingMatrix::new(ComplexColumns::from_columns(&cols)?),
        parallel_rate(&gains, &powers),
    ))
}

/// Upper-bound rate of every example.
pub fn upper_bound_rates(data: &Dataset, p: &SystemParams) -> Result<Vec<f64>> {
    data.examples
        .iter()
        .map(|e| upper_bound(&e.truth.channel, p).map(|(_, r)| r))
        .collect()
}

/// I.i.d. complex Gaussian entries rescaled to use the whole budget.
pub fn random_beamformer<R: Rng + ?Sized>(p: &SystemParams, rng: &mut R) -> BeamformingMatrix {
    let (nt, k) = (p.n_tx, p.n_vehicles);
    let mut e = ComplexColumns::zeros(nt, k);
    for v in e.data.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *v = Complex64::new(re, im) * core::f64::consts::FRAC_1_SQRT_2;
    }
    let w = BeamformingMatrix::new(e);
    let pw = w.power_used_w();
    w.scaled(math::sqrt(p.power_budget_w / pw))
        .project_to_power(p.power_budget_w)
}

/// Fully connected network on the latest estimated channel.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NaiveNetConfig {
    pub n_tx: usize,
    pub k_vehicles: usize,
    pub hidden: [usize; 2],
    pub input_scale: f64,
    pub output_scale: f64,
}

impl NaiveNetConfig {
    pub fn new(k_vehicles: usize, n_tx: usize) -> Self {
        Self {
            n_tx,
            k_vehicles,
            hidden: [256, 256],
            input_scale: 1.0,
            output_scale: 1.0,
        }
    }

    pub fn io_dim(&self) -> usize {
        2 * self.k_vehicles * self.n_tx
    }

    fn dims(&self) -> [usize; 4] {
        [self.io_dim(), self.hidden[0], self.hidden[1], self.io_dim()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(invalid("naive network dimensions must be positive"));
        }
        Ok(())
    }
}

const LAYERS: [&str; 3] = ["fc1", "fc2", "out"];

impl Network for NaiveNetConfig {
    fn n_tx(&self) -> usize {
        self.n_tx
    }

    fn k_vehicles(&self) -> usize {
        self.k_vehicles
    }

    fn init_params(&self, rng: &mut SimRng) -> Result<ParameterSet> {
        self.validate()?;
        let d = self.dims();
        let mut ps = ParameterSet::new();
        for (l, name) in LAYERS.iter().enumerate() {
            ps.insert(&format!("{name}.w"), glorot_uniform(&[d[l], d[l + 1]], d[l], d[l + 1], rng))?;
            ps.insert(&format!("{name}.b"), Tensor::zeros(&[d[l + 1]]))?;
        }
        Ok(ps)
    }

    fn encode(&self, history: &EstimatedHistory) -> Result<Tensor> {
        let h = history.latest().ok_or_else(|| invalid("empty history"))?;
        if h.n_tx() != self.n_tx || h.n_vehicles() != self.k_vehicles {
            return Err(invalid(format!(
                "snapshot is {}x{}, network expects {}x{}",
                h.n_tx(),
                h.n_vehicles(),
                self.n_tx,
                self.k_vehicles
            )));
        }
        let mut data = Vec::with_capacity(self.io_dim());
        for k in 0..self.k_vehicles {
            for v in h.column(k) {
                data.push(v.re);
                data.push(v.im);
            }
        }
        Tensor::new(&[self.io_dim()], data)
    }

    fn raw_output(&self, g: &mut Graph, ps: &ParameterSet, inputs: &Tensor) -> Result<NodeId> {
        self.validate()?;
        let b = match inputs.shape() {
            [b, d] if *d == self.io_dim() => *b,
            s => {
                return Err(invalid(format!(
                    "expected [B, {}] input, got {s:?}",
                    self.io_dim()
                )))
            }
        };
        let d = self.dims();
        let mut bound = Vec::with_capacity(LAYERS.len());
        for (l, name) in LAYERS.iter().enumerate() {
            let mut find = |suffix: &str, shape: &[usize]| {
                let key = format!("{name}.{suffix}");
                let idx = ps
                    .index_of(&key)
                    .ok_or_else(|| invalid(format!("missing parameter {key:?}")))?;
                if ps.entry(idx).shape() != shape {
                    return Err(invalid(format!("parameter {key:?} has the wrong shape")));
                }
                Ok(g.param(ps, idx))
            };
            let w = find("w", &[d[l], d[l + 1]])?;
            let bias = find("b", &[d[l + 1]])?;
            bound.push((w, bias));
        }
        let x = g.constant(Tensor::new(
            inputs.shape(),
            inputs.data().iter().map(|v| v * self.input_scale).collect(),
        )?);
        let mut y = x;
        for (l, (w, bias)) in bound.iter().enumerate() {
            y = dense(g, y, *w, *bias)?;
            if l + 1 < bound.len() {
                y = g.relu(y);
            }
        }
        let y = g.scale(y, self.output_scale);
        g.reshape(y, &[b, self.n_tx, 2 * self.k_vehicles])
    }
}

pub fn naive_train(
    cfg: &NaiveNetConfig,
    data: &Dataset,
    p: &SystemParams,
    tc: &TrainConfig,
    clock: &mut dyn FnMut() -> f64,
) -> Result<(ParameterSet, TrainingReport)> {
    training::train(cfg, data, p, tc, clock)
}

pub fn naive_predict(
    cfg: &NaiveNetConfig,
    ps: &ParameterSet,
    history: &EstimatedHistory,
    p: &SystemParams,
    project: bool,
) -> Result<BeamformingMatrix> {
    training::predict(cfg, ps, history, p, project)
}
