//! Sweep execution: datasets, training, evaluation and output files.
//!
//! Every random stream of a sweep point comes from a named substream of the
//! top-level seed (`train`, `test`, `hcl`, `naive`, `random`), so points are
//! independent and can run in parallel without changing any output byte.

use std::path::{Path, PathBuf};
use std::time::Instant;

use isac_core::baselines::upper_bound;
use isac_core::rng::{rng_from_seed, substream_seed};
use isac_core::training::{
    aggregate, calibrated_output_scale, evaluate, evaluate_beamformers, generate_dataset, history_input_scale,
    initial_params, train, Dataset, ExampleMetrics, Metrics, TrainingReport,
};
use isac_core::{BeamformingMatrix, SystemParams};
use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, NetworkSpec};
use crate::config::{ExperimentConfig, Method, SweepAxis};
use crate::error::{io_err, SimError, SimResult};
use crate::plot::plot_svg;
use crate::results::{results_to_csv, train_log_to_csv, write_file, ResultRow, TrainLogRow};

/// Train and test sets for one top-level seed.
pub fn datasets(cfg: &ExperimentConfig, seed: u64) -> SimResult<(Dataset, Dataset)> {
    let p = cfg.system_params()?;
    let means = cfg.mean_positions()?;
    let train = generate_dataset(&p, &means, cfg.dataset.train_examples, substream_seed(seed, "train"))?;
    let test = generate_dataset(&p, &means, cfg.dataset.test_examples, substream_seed(seed, "test"))?;
    Ok((train, test))
}

fn clock(record: bool) -> impl FnMut() -> f64 {
    let start = Instant::now();
    move || if record { start.elapsed().as_secs_f64() } else { 0.0 }
}

/// A trained network and its training trace.
#[derive(Debug, Clone)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub report: TrainingReport,
}

/// Trains `method` from scratch on `data`, calibrating input and output scales first.
pub fn train_method(cfg: &ExperimentConfig, method: Method, data: &Dataset, seed: u64) -> SimResult<Trained> {
    let p = cfg.system_params()?;
    let tc = cfg.train_config(substream_seed(seed, method.as_str()));
    let input_scale = history_input_scale(data);
    let mut clk = clock(cfg.output.record_wall_time);
    let (network, params, report) = match method {
        Method::Hcl => {
            let mut net = cfg.hcl_config();
            net.input_scale = input_scale;
            net.output_scale = calibrated_output_scale(&net, 1.0, &initial_params(&net, tc.seed)?, data, &p)?;
            let (ps, r) = train(&net, data, &p, &tc, &mut clk)?;
            (NetworkSpec::Hcl(net), ps, r)
        }
        Method::Naive => {
            let mut net = cfg.naive_config();
            net.input_scale = input_scale;
            net.output_scale = calibrated_output_scale(&net, 1.0, &initial_params(&net, tc.seed)?, data, &p)?;
            let (ps, r) = train(&net, data, &p, &tc, &mut clk)?;
            (NetworkSpec::Naive(net), ps, r)
        }
        _ => {
            return Err(SimError::Config(format!("{method} has no trainable parameters")));
        }
    };
    Ok(Trained {
        checkpoint: Checkpoint { network, params },
        report,
    })
}

pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    data: &Dataset,
    p: &SystemParams,
    project: bool,
) -> SimResult<(Metrics, Vec<ExampleMetrics>)> {
    Ok(evaluate(ck.network.as_network(), &ck.params, data, p, project)?)
}

/// Genie-aided bound: the rate column is the interference-free water-filling rate.
pub fn evaluate_upper_bound(data: &Dataset, p: &SystemParams) -> SimResult<(Metrics, Vec<ExampleMetrics>)> {
    let (ws, rates): (Vec<BeamformingMatrix>, Vec<f64>) = data
        .examples
        .iter()
        .map(|e| upper_bound(&e.truth.channel, p))
        .collect::<isac_core::Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let (_, mut rows) = evaluate_beamformers(data, &ws, p)?;
    for (r, rate) in rows.iter_mut().zip(rates) {
        r.sum_rate = rate;
    }
    Ok((aggregate(&rows, p), rows))
}

pub fn evaluate_random(data: &Dataset, p: &SystemParams, seed: u64) -> SimResult<(Metrics, Vec<ExampleMetrics>)> {
    let mut rng = rng_from_seed(substream_seed(seed, "random"));
    let ws: Vec<_> = (0..data.len())
        .map(|_| isac_core::baselines::random_beamformer(p, &mut rng))
        .collect();
    Ok(evaluate_beamformers(data, &ws, p)?)
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub metrics: Metrics,
    pub per_example: Vec<ExampleMetrics>,
    pub train_seconds: f64,
    pub trained: Option<Trained>,
}

#[derive(Debug, Clone)]
pub struct PointOutcome {
    pub seed: u64,
    pub axis: SweepAxis,
    pub value: f64,
    pub methods: Vec<MethodOutcome>,
}

impl PointOutcome {
    pub fn get(&self, m: Method) -> Option<&MethodOutcome> {
        self.methods.iter().find(|o| o.method == m)
    }
}

/// Evaluates every configured method at one sweep point.
///
/// `cfg` must already have the axis value applied.
pub fn run_point(cfg: &ExperimentConfig, seed: u64, axis: SweepAxis, value: f64, project: bool) -> SimResult<PointOutcome> {
    let p = cfg.system_params()?;
    let (train_set, test_set) = datasets(cfg, seed)?;
    let mut methods = Vec::with_capacity(cfg.methods.len());
    for &m in &cfg.methods {
        let (trained, (metrics, per_example)) = match m {
            Method::UpperBound => (None, evaluate_upper_bound(&test_set, &p)?),
            Method::Random => (None, evaluate_random(&test_set, &p, seed)?),
            Method::Hcl | Method::Naive => {
                let t = train_method(cfg, m, &train_set, seed)?;
                let e = evaluate_checkpoint(&t.checkpoint, &test_set, &p, project)?;
                (Some(t), e)
            }
        };
        if !metrics.is_finite() {
            return Err(SimError::NonFinite {
                context: format!("seed {seed}, {axis} = {value}, method {m}: {metrics:?}"),
            });
        }
        methods.push(MethodOutcome {
            method: m,
            metrics,
            per_example,
            train_seconds: trained.as_ref().map_or(0.0, |t| t.report.seconds),
            trained,
        });
    }
    Ok(PointOutcome {
        seed,
        axis,
        value,
        methods,
    })
}

/// Sweep points in output order: seeds outermost, then axis values.
pub fn sweep_points(cfg: &ExperimentConfig) -> Vec<(u64, SweepAxis, f64)> {
    let (axis, values) = match &cfg.sweep {
        Some(s) => (s.axis, s.values.clone()),
        None => (SweepAxis::PowerDbm, vec![cfg.system.power_dbm]),
    };
    cfg.dataset
        .seeds
        .iter()
        .flat_map(|&s| values.iter().map(move |&v| (s, axis, v)))
        .collect()
}

pub fn run_sweep(cfg: &ExperimentConfig, project: bool) -> SimResult<Vec<PointOutcome>> {
    sweep_points(cfg)
        .into_par_iter()
        .map(|(seed, axis, value)| run_point(&cfg.at_point(axis, value)?, seed, axis, value, project))
        .collect()
}

pub fn checkpoint_name(method: Method, seed: u64, axis: SweepAxis, value: f64) -> String {
    format!("{method}-seed{seed}-{axis}-{value}.ckpt")
}

/// Files a sweep writes, as `(relative path, contents)`.
pub fn sweep_files(cfg: &ExperimentConfig, outcomes: &[PointOutcome], plots: bool) -> SimResult<Vec<(PathBuf, String)>> {
    let mut rows = Vec::new();
    let mut log = Vec::new();
    let mut files = Vec::new();
    let wall = cfg.output.record_wall_time;
    for o in outcomes {
        for m in &o.methods {
            rows.push(ResultRow::new(o.seed, o.axis, o.value, m.method, &m.metrics, m.train_seconds));
            if let Some(t) = &m.trained {
                log.push(TrainLogRow::new(o.seed, o.axis, o.value, m.method, 0, &t.report.initial, 0.0));
                for e in &t.report.epochs {
                    let secs = if wall { e.seconds } else { 0.0 };
                    log.push(TrainLogRow::new(o.seed, o.axis, o.value, m.method, e.epoch, &e.objective, secs));
                }
                if cfg.output.checkpoints {
                    files.push((
                        Path::new("checkpoints").join(checkpoint_name(m.method, o.seed, o.axis, o.value)),
                        t.checkpoint.to_text(),
                    ));
                }
            }
        }
    }
    files.insert(0, (PathBuf::from("results.csv"), results_to_csv(&rows)?));
    if !log.is_empty() {
        files.insert(1, (PathBuf::from("train_log.csv"), train_log_to_csv(&log)?));
    }
    files.push((PathBuf::from("config.toml"), cfg.to_toml_string()));
    if plots && !rows.is_empty() {
        let axis = rows[0].axis_name.clone();
        let present: Vec<Method> = cfg.methods.clone();
        for (metric, log_y) in [("mean_sum_rate", false), ("sqrt_crlb_theta", true), ("sqrt_crlb_dist", true)] {
            let svg = plot_svg(&rows, &axis, metric, log_y, &present)?;
            files.push((Path::new("plots").join(format!("{metric}.svg")), svg));
        }
    }
    Ok(files)
}

pub fn write_files(dir: &Path, files: &[(PathBuf, String)]) -> SimResult<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (rel, text) in files {
        write_file(&dir.join(rel), text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SweepSection;
    use crate::results::parse_results;

    pub(crate) fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.system.n_tx = 4;
        c.system.n_rx = 4;
        c.system.n_vehicles = 2;
        c.system.history_len = 2;
        c.model.lstm_hidden = 8;
        c.model.naive_hidden = [8, 8];
        c.model.epochs = 2;
        c.model.batch_size = 8;
        c.dataset.train_examples = 16;
        c.dataset.test_examples = 8;
        c.dataset.seeds = vec![3, 4];
        c
    }

    #[test]
    fn power_sweep_row_count() {
        let mut c = tiny();
        c.sweep = Some(SweepSection {
            axis: SweepAxis::PowerDbm,
            values: vec![10.0, 20.0, 30.0],
        });
        c.dataset.seeds = vec![5];
        let out = run_sweep(&c, true).unwrap();
        let files = sweep_files(&c, &out, true).unwrap();
        let rows = parse_results(&files[0].1).unwrap();
        assert_eq!(rows.len(), 12);
        assert!(files.iter().any(|f| f.0.ends_with("mean_sum_rate.svg")));
        assert_eq!(files.iter().filter(|f| f.0.starts_with("checkpoints")).count(), 6);
    }

    #[test]
    fn parallel_sweep_matches_sequential_points() {
        let c = tiny();
        let par = run_sweep(&c, true).unwrap();
        for (o, (seed, axis, value)) in par.iter().zip(sweep_points(&c)) {
            let s = run_point(&c.at_point(axis, value).unwrap(), seed, axis, value, true).unwrap();
            for (a, b) in o.methods.iter().zip(&s.methods) {
                assert_eq!(a.metrics, b.metrics);
            }
        }
    }

    #[test]
    fn upper_bound_row_uses_interference_free_rate() {
        let c = tiny();
        let p = c.system_params().unwrap();
        let (_, test) = datasets(&c, 1).unwrap();
        let (m, rows) = evaluate_upper_bound(&test, &p).unwrap();
        for (e, r) in test.examples.iter().zip(&rows) {
            assert_eq!(r.sum_rate, upper_bound(&e.truth.channel, &p).unwrap().1);
        }
        assert!((m.mean_power_w - p.power_budget_w).abs() < 1e-9);
    }

    #[test]
    fn wall_time_off_writes_zero_seconds() {
        let c = tiny();
        let out = run_sweep(&c, true).unwrap();
        let files = sweep_files(&c, &out, false).unwrap();
        let rows = parse_results(&files[0].1).unwrap();
        assert!(rows.iter().all(|r| r.train_seconds == 0.0));
    }

    #[test]
    fn static_methods_cannot_be_trained() {
        let c = tiny();
        let (train_set, _) = datasets(&c, 1).unwrap();
        assert!(train_method(&c, Method::Random, &train_set, 1).is_err());
    }
}
