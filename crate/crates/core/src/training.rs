//! Dataset generation, unsupervised training, prediction and evaluation.
//!
//! Networks only ever see the estimated history of slots `n - τ .. n - 1`.
//! The true slot-`n` channel and states enter through the cost alone.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::autodiff::{AdamConfig, Graph, NodeId, ParameterSet, Tensor};
use crate::error::{invalid, Error, Result};
use crate::hcl::{self, HclConfig};
use crate::kinematics::{perturb_history, simulate_window, true_snapshot, EstimatedHistory};
use crate::math;
use crate::objective::{
    batch_objective, cost_graph, feasibility_report, split_raw, CostBatch, PenaltyBreakdown, SlotTruth,
};
use crate::params::SystemParams;
use crate::rng::{rng_from_seed, rng_stream, substream_seed, SimRng};
use crate::system::{sum_rate, BeamformingMatrix};

/// Mean initial vehicle positions of the reference scenario, in metres.
pub const DEFAULT_MEAN_POSITIONS: [(f64, f64); 3] = [(15.0, 20.0), (25.0, 20.0), (35.0, 20.0)];

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Example {
    pub history: EstimatedHistory,
    pub truth: SlotTruth,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub seed: u64,
    pub params: SystemParams,
    pub mean_positions: Vec<(f64, f64)>,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn truths(&self) -> Vec<SlotTruth> {
        self.examples.iter().map(|e| e.truth.clone()).collect()
    }

    /// Largest entrywise gap between a stored true channel and the one rebuilt from its states.
    pub fn consistency_error(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for e in &self.examples {
            let h = true_snapshot(&e.truth.states, &self.params, e.truth.channel.slot_index)?;
            for (a, b) in h.entries.data.iter().zip(&e.truth.channel.entries.data) {
                worst = worst.max((a - b).norm());
            }
        }
        Ok(worst)
    }
}

/// `n_examples` independent windows; example `i` draws from stream `i` of `seed`.
pub fn generate_dataset(
    p: &SystemParams,
    mean_positions: &[(f64, f64)],
    n_examples: usize,
    seed: u64,
) -> Result<Dataset> {
    p.validate()?;
    if n_examples == 0 {
        return Err(invalid("a dataset needs at least one example"));
    }
    if mean_positions.len() != p.n_vehicles {
        return Err(invalid(format!(
            "{} mean positions for {} vehicles",
            mean_positions.len(),
            p.n_vehicles
        )));
    }
    let examples = (0..n_examples)
        .map(|i| {
            let mut rng = rng_stream(seed, i as u64);
            let w = simulate_window(p, mean_positions, &mut rng)?;
            let history = perturb_history(&w, p, &mut rng)?;
            let states = w.current().to_vec();
            let channel = true_snapshot(&states, p, p.history_len as i64)?;
            Ok(Example {
                history,
                truth: SlotTruth { channel, states },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        seed,
        params: p.clone(),
        mean_positions: mean_positions.to_vec(),
        examples,
    })
}

/// `1 / RMS` of every real and imaginary history entry in `data`.
pub fn history_input_scale(data: &Dataset) -> f64 {
    hcl::rms_scale(
        data.examples
            .iter()
            .flat_map(|e| &e.history.snapshots)
            .flat_map(|s| &s.entries.data)
            .flat_map(|c| [&c.re, &c.im]),
    )
}

/// Mean unprojected beam power of `ps` over `data`.
pub fn mean_power<N: Network + ?Sized>(net: &N, ps: &ParameterSet, data: &Dataset, p: &SystemParams) -> Result<f64> {
    let ws = predict_all(net, ps, data, p, false)?;
    Ok(ws.iter().map(BeamformingMatrix::power_used_w).sum::<f64>() / ws.len().max(1) as f64)
}

/// Rescales `current_scale` so that `ps` uses the power budget on average over `data`.
pub fn calibrated_output_scale<N: Network + ?Sized>(
    net: &N,
    current_scale: f64,
    ps: &ParameterSet,
    data: &Dataset,
    p: &SystemParams,
) -> Result<f64> {
    let pw = mean_power(net, ps, data, p)?;
    if !(pw > 0.0 && pw.is_finite()) {
        return Err(invalid(format!("cannot calibrate output scale from mean power {pw}")));
    }
    Ok(current_scale * math::sqrt(p.power_budget_w / pw))
}

/// Initial parameters `train` would start from.
pub fn initial_params<N: Network + ?Sized>(net: &N, seed: u64) -> Result<ParameterSet> {
    net.init_params(&mut rng_from_seed(substream_seed(seed, "init")))
}

/// A trainable map from a channel history to a raw `[Nt, 2K]` beamformer.
pub trait Network {
    fn n_tx(&self) -> usize;
    fn k_vehicles(&self) -> usize;
    fn init_params(&self, rng: &mut SimRng) -> Result<ParameterSet>;
    /// Per-example network input.
    fn encode(&self, history: &EstimatedHistory) -> Result<Tensor>;
    /// Raw output `[B, Nt, 2K]` for stacked inputs.
    fn raw_output(&self, g: &mut Graph, ps: &ParameterSet, inputs: &Tensor) -> Result<NodeId>;
}

impl Network for HclConfig {
    fn n_tx(&self) -> usize {
        self.n_tx
    }

    fn k_vehicles(&self) -> usize {
        self.k_vehicles
    }

    fn init_params(&self, rng: &mut SimRng) -> Result<ParameterSet> {
        hcl::init_params(self, rng)
    }

    fn encode(&self, history: &EstimatedHistory) -> Result<Tensor> {
        hcl::map_input(history, self)
    }

    fn raw_output(&self, g: &mut Graph, ps: &ParameterSet, inputs: &Tensor) -> Result<NodeId> {
        let nodes = hcl::bind(g, ps, self)?;
        Ok(hcl::forward_graph(g, &nodes, inputs, self)?.raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 32,
            epochs: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    /// Objective over the whole training set after the epoch's updates.
    pub objective: PenaltyBreakdown,
    /// Size-weighted mean of the minibatch costs seen during the epoch.
    pub mean_batch_cost: f64,
    pub seconds: f64,
}

impl EpochRecord {
    /// Minimised cost (negated objective).
    pub fn cost(&self) -> f64 {
        -self.objective.total
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingReport {
    pub initial: PenaltyBreakdown,
    pub epochs: Vec<EpochRecord>,
    pub seconds: f64,
}

fn encode_all<N: Network + ?Sized>(net: &N, data: &Dataset) -> Result<Vec<Tensor>> {
    data.examples.iter().map(|e| net.encode(&e.history)).collect()
}

fn gather(inputs: &[Tensor], idx: &[usize]) -> Result<Tensor> {
    let picked: Vec<Tensor> = idx.iter().map(|&i| inputs[i].clone()).collect();
    hcl::stack(&picked)
}

fn check_dims<N: Network + ?Sized>(net: &N, p: &SystemParams) -> Result<()> {
    if net.n_tx() != p.n_tx || net.k_vehicles() != p.n_vehicles {
        return Err(invalid(format!(
            "network is {}x{}, system is {}x{}",
            net.n_tx(),
            net.k_vehicles(),
            p.n_tx,
            p.n_vehicles
        )));
    }
    Ok(())
}

fn full_objective<N: Network + ?Sized>(
    net: &N,
    ps: &ParameterSet,
    inputs: &[Tensor],
    data: &Dataset,
    p: &SystemParams,
) -> Result<PenaltyBreakdown> {
    let idx: Vec<usize> = (0..inputs.len()).collect();
    let truths: Vec<&SlotTruth> = data.examples.iter().map(|e| &e.truth).collect();
    let batch = CostBatch::new(&truths, p)?;
    let mut g = Graph::new();
    let raw = net.raw_output(&mut g, ps, &gather(inputs, &idx)?)?;
    let (re, im) = split_raw(&mut g, raw, net.k_vehicles())?;
    Ok(cost_graph(&mut g, re, im, &batch, p)?.breakdown(&g))
}

/// Minibatch Adam on the negated objective of `p` (penalty weights and thresholds included).
///
/// `clock` returns seconds from an arbitrary origin and is only used for timing.
pub fn train<N: Network + ?Sized>(
    net: &N,
    data: &Dataset,
    p: &SystemParams,
    tc: &TrainConfig,
    clock: &mut dyn FnMut() -> f64,
) -> Result<(ParameterSet, TrainingReport)> {
    let mut ps = initial_params(net, tc.seed)?;
    train_from(net, &mut ps, data, p, tc, clock).map(|r| (ps, r))
}

/// Continues training `ps` in place.
pub fn train_from<N: Network + ?Sized>(
    net: &N,
    ps: &mut ParameterSet,
    data: &Dataset,
    p: &SystemParams,
    tc: &TrainConfig,
    clock: &mut dyn FnMut() -> f64,
) -> Result<TrainingReport> {
    p.validate()?;
    check_dims(net, p)?;
    if tc.epochs == 0 || tc.batch_size == 0 {
        return Err(invalid("epochs and batch size must be positive"));
    }
    if data.is_empty() {
        return Err(invalid("empty training set"));
    }
    let t0 = clock();
    let inputs = encode_all(net, data)?;
    let initial = full_objective(net, ps, &inputs, data, p)?;
    let shuffle_seed = substream_seed(tc.seed, "shuffle");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(tc.epochs);
    for epoch in 1..=tc.epochs {
        let te = clock();
        order.shuffle(&mut rng_stream(shuffle_seed, epoch as u64));
        let mut cost_sum = 0.0;
        for (bi, idx) in order.chunks(tc.batch_size).enumerate() {
            let truths: Vec<&SlotTruth> = idx.iter().map(|&i| &data.examples[i].truth).collect();
            let batch = CostBatch::new(&truths, p)?;
            let mut g = Graph::new();
            let raw = net.raw_output(&mut g, ps, &gather(&inputs, idx)?)?;
            let (re, im) = split_raw(&mut g, raw, net.k_vehicles())?;
            let nodes = cost_graph(&mut g, re, im, &batch, p)?;
            let cost = g.value(nodes.cost).item();
            if !cost.is_finite() {
                return Err(Error::NonFiniteCost {
                    epoch,
                    batch: bi,
                    detail: format!("{:?}", nodes.breakdown(&g)),
                });
            }
            cost_sum += cost * idx.len() as f64;
            g.backward(nodes.cost)?;
            let grads = g.param_grads(ps);
            ps.adam_step(&grads, &tc.adam)?;
        }
        let objective = full_objective(net, ps, &inputs, data, p)?;
        if !objective.total.is_finite() {
            return Err(Error::NonFiniteCost {
                epoch,
                batch: usize::MAX,
                detail: format!("training-set objective {objective:?}"),
            });
        }
        epochs.push(EpochRecord {
            epoch,
            objective,
            mean_batch_cost: cost_sum / data.len() as f64,
            seconds: clock() - te,
        });
    }
    Ok(TrainingReport {
        initial,
        epochs,
        seconds: clock() - t0,
    })
}

fn finish(w: BeamformingMatrix, p: &SystemParams, project: bool) -> BeamformingMatrix {
    if project {
        w.project_to_power(p.power_budget_w)
    } else {
        w
    }
}

/// Beamformer for one history, optionally projected onto the power budget.
pub fn predict<N: Network + ?Sized>(
    net: &N,
    ps: &ParameterSet,
    history: &EstimatedHistory,
    p: &SystemParams,
    project: bool,
) -> Result<BeamformingMatrix> {
    check_dims(net, p)?;
    let x = net.encode(history)?;
    let mut g = Graph::new();
    let raw = net.raw_output(&mut g, ps, &hcl::stack(&[x])?)?;
    let w = hcl::raw_to_beamformer(g.value(raw).data(), net.n_tx(), net.k_vehicles())?;
    Ok(finish(w, p, project))
}

/// Beamformers for every example, computed in batches of 256.
pub fn predict_all<N: Network + ?Sized>(
    net: &N,
    ps: &ParameterSet,
    data: &Dataset,
    p: &SystemParams,
    project: bool,
) -> Result<Vec<BeamformingMatrix>> {
    check_dims(net, p)?;
    let inputs = encode_all(net, data)?;
    let per = net.n_tx() * 2 * net.k_vehicles();
    let idx: Vec<usize> = (0..inputs.len()).collect();
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in idx.chunks(256) {
        let mut g = Graph::new();
        let raw = net.raw_output(&mut g, ps, &gather(&inputs, chunk)?)?;
        for row in g.value(raw).data().chunks(per) {
            out.push(finish(hcl::raw_to_beamformer(row, net.n_tx(), net.k_vehicles())?, p, project));
        }
    }
    Ok(out)
}

/// Per-example evaluation; CRLBs are vehicle means saturated at `crlb_cap`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExampleMetrics {
    pub sum_rate: f64,
    pub crlb_theta: f64,
    pub crlb_dist: f64,
    pub power_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    pub n_examples: usize,
    pub mean_sum_rate: f64,
    pub mean_crlb_theta: f64,
    pub sqrt_crlb_theta: f64,
    pub mean_crlb_dist: f64,
    pub sqrt_crlb_dist: f64,
    pub violation_rate_theta: f64,
    pub violation_rate_dist: f64,
    pub violation_rate_power: f64,
    pub mean_power_w: f64,
}

impl Metrics {
    pub fn is_finite(&self) -> bool {
        [
            self.mean_sum_rate,
            self.mean_crlb_theta,
            self.mean_crlb_dist,
            self.mean_power_w,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Dataset means of per-example rows against the thresholds of `p`.
pub fn aggregate(rows: &[ExampleMetrics], p: &SystemParams) -> Metrics {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&ExampleMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let rate = |f: &dyn Fn(&ExampleMetrics) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
    let mean_crlb_theta = mean(|r| r.crlb_theta);
    let mean_crlb_dist = mean(|r| r.crlb_dist);
    Metrics {
        n_examples: rows.len(),
        mean_sum_rate: mean(|r| r.sum_rate),
        mean_crlb_theta,
        sqrt_crlb_theta: math::sqrt(mean_crlb_theta),
        mean_crlb_dist,
        sqrt_crlb_dist: math::sqrt(mean_crlb_dist),
        violation_rate_theta: rate(&|r| r.crlb_theta > p.crlb_angle_max),
        violation_rate_dist: rate(&|r| r.crlb_dist > p.crlb_dist_max),
        violation_rate_power: rate(&|r| r.power_w > p.power_budget_w),
        mean_power_w: mean(|r| r.power_w),
    }
}

/// Scores given beamformers on the true slot-`n` channels of `data`.
pub fn evaluate_beamformers(
    data: &Dataset,
    ws: &[BeamformingMatrix],
    p: &SystemParams,
) -> Result<(Metrics, Vec<ExampleMetrics>)> {
    if ws.len() != data.len() {
        return Err(invalid(format!(
            "{} beamformers for {} examples",
            ws.len(),
            data.len()
        )));
    }
    let rows = data
        .examples
        .iter()
        .zip(ws)
        .map(|(e, w)| {
            let slack = feasibility_report(w, &e.truth, p)?;
            Ok(ExampleMetrics {
                sum_rate: sum_rate(&e.truth.channel, w, p)?,
                crlb_theta: p.crlb_angle_max - slack.angle,
                crlb_dist: p.crlb_dist_max - slack.dist,
                power_w: w.power_used_w(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((aggregate(&rows, p), rows))
}

pub fn evaluate<N: Network + ?Sized>(
    net: &N,
    ps: &ParameterSet,
    data: &Dataset,
    p: &SystemParams,
    project: bool,
) -> Result<(Metrics, Vec<ExampleMetrics>)> {
    let ws = predict_all(net, ps, data, p, project)?;
    evaluate_beamformers(data, &ws, p)
}

/// Objective of given beamformers over a whole dataset.
pub fn dataset_objective(data: &Dataset, ws: &[BeamformingMatrix], p: &SystemParams) -> Result<PenaltyBreakdown> {
    batch_objective(&data.truths(), ws, p)
}
