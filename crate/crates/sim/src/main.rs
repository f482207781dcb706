use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isac_core::complexity::complexity_report;
use isac_core::crlb::crlb_pair;
use isac_core::kinematics::VehicleState;
use isac_core::system::steering_vector;
use isac_core::{BeamformingMatrix, Complex64};
use isac_sim::checkpoint::Checkpoint;
use isac_sim::config::{ExperimentConfig, Method, SweepAxis};
use isac_sim::plot::plot_svg;
use isac_sim::results::{read_results, results_to_csv, train_log_to_csv, write_file, ResultRow, TrainLogRow};
use isac_sim::runner::{datasets, evaluate_checkpoint, run_sweep, sweep_files, train_method, write_files};
use isac_sim::{dataset_io, SimError, SimResult};

#[derive(Parser)]
#[command(name = "isac", version, about = "Predictive ISAC beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> SimResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.dataset.seeds = vec![s];
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write train and test datasets as JSON.
    Generate(Common),
    /// Train one network and write its checkpoint and training log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "hcl")]
        method: String,
    },
    /// Score a checkpoint on the test set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        no_projection: bool,
    },
    /// Run the configured sweep over seeds, axis values and methods.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_plots: bool,
        #[arg(long)]
        no_projection: bool,
    },
    /// Draw one metric of a results file as SVG.
    Plot {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "mean_sum_rate")]
        metric: String,
        /// Defaults to the axis of the first row.
        #[arg(long)]
        axis: Option<String>,
        #[arg(long)]
        log: bool,
        /// Comma-separated subset of methods.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Angle and distance CRLBs for given vehicle positions and beams.
    Crlb {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Angles in radians, one per vehicle.
        #[arg(long, value_delimiter = ',', required = true)]
        theta: Vec<f64>,
        /// Distances in metres, one per vehicle.
        #[arg(long, value_delimiter = ',', required = true)]
        dist: Vec<f64>,
        /// JSON array of beam columns, each a list of [re, im] pairs.
        /// Defaults to equal-power beams steered at each vehicle.
        #[arg(long)]
        beams: Option<PathBuf>,
        #[arg(long)]
        power_dbm: Option<f64>,
    },
    /// Operation counts of the configured network.
    Complexity {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> SimResult<()> {
    match cmd {
        Command::Generate(c) => generate(&c),
        Command::Train { common, method } => train_cmd(&common, &method),
        Command::Evaluate {
            common,
            checkpoint,
            no_projection,
        } => evaluate_cmd(&common, &checkpoint, !no_projection),
        Command::Sweep {
            common,
            no_plots,
            no_projection,
        } => sweep_cmd(&common, no_plots, no_projection),
        Command::Plot {
            results,
            metric,
            axis,
            log,
            methods,
            out,
        } => plot_cmd(&results, &metric, axis, log, methods, &out),
        Command::Crlb {
            config,
            theta,
            dist,
            beams,
            power_dbm,
        } => crlb_cmd(config.as_deref(), &theta, &dist, beams.as_deref(), power_dbm),
        Command::Complexity { config } => complexity_cmd(config.as_deref()),
    }
}

fn generate(c: &Common) -> SimResult<()> {
    let cfg = c.load()?;
    for &seed in &cfg.dataset.seeds {
        let (train, test) = datasets(&cfg, seed)?;
        let dir = cfg.output.dir.join(format!("seed{seed}"));
        dataset_io::save(&train, &dir.join("train.json"))?;
        dataset_io::save(&test, &dir.join("test.json"))?;
        eprintln!("wrote {} + {} examples to {}", train.len(), test.len(), dir.display());
    }
    Ok(())
}

fn parse_method(s: &str) -> SimResult<Method> {
    Method::parse(s).ok_or_else(|| SimError::Config(format!("unknown method {s:?}")))
}

fn train_cmd(c: &Common, method: &str) -> SimResult<()> {
    let cfg = c.load()?;
    let method = parse_method(method)?;
    let axis = SweepAxis::PowerDbm;
    let value = cfg.system.power_dbm;
    let mut log = Vec::new();
    for &seed in &cfg.dataset.seeds {
        let (train, _) = datasets(&cfg, seed)?;
        let t = train_method(&cfg, method, &train, seed)?;
        log.push(TrainLogRow::new(seed, axis, value, method, 0, &t.report.initial, 0.0));
        for e in &t.report.epochs {
            let secs = if cfg.output.record_wall_time { e.seconds } else { 0.0 };
            log.push(TrainLogRow::new(seed, axis, value, method, e.epoch, &e.objective, secs));
            eprintln!("seed {seed} epoch {}: cost {:.6e}", e.epoch, e.cost());
        }
        let path = cfg.output.dir.join(format!("{method}-seed{seed}.ckpt"));
        write_file(&path, &t.checkpoint.to_text())?;
        eprintln!("wrote {}", path.display());
    }
    write_file(&cfg.output.dir.join("train_log.csv"), &train_log_to_csv(&log)?)
}

fn evaluate_cmd(c: &Common, checkpoint: &Path, project: bool) -> SimResult<()> {
    let cfg = c.load()?;
    let p = cfg.system_params()?;
    let ck = Checkpoint::load(checkpoint)?;
    if ck.network.n_tx() != p.n_tx || ck.network.k_vehicles() != p.n_vehicles {
        return Err(SimError::Config(format!(
            "checkpoint is for Nt={} K={}, config has Nt={} K={}",
            ck.network.n_tx(),
            ck.network.k_vehicles(),
            p.n_tx,
            p.n_vehicles
        )));
    }
    let method = match ck.network {
        isac_sim::checkpoint::NetworkSpec::Hcl(_) => Method::Hcl,
        isac_sim::checkpoint::NetworkSpec::Naive(_) => Method::Naive,
    };
    let mut rows = Vec::new();
    for &seed in &cfg.dataset.seeds {
        let (_, test) = datasets(&cfg, seed)?;
        let (m, _) = evaluate_checkpoint(&ck, &test, &p, project)?;
        if !m.is_finite() {
            return Err(SimError::NonFinite {
                context: format!("{} on seed {seed}: {m:?}", checkpoint.display()),
            });
        }
        rows.push(ResultRow::new(seed, SweepAxis::PowerDbm, cfg.system.power_dbm, method, &m, 0.0));
    }
    let csv = results_to_csv(&rows)?;
    print!("{csv}");
    write_file(&cfg.output.dir.join("evaluation.csv"), &csv)
}

fn sweep_cmd(c: &Common, no_plots: bool, no_projection: bool) -> SimResult<()> {
    let cfg = c.load()?;
    let project = cfg.model.projection && !no_projection;
    let outcomes = run_sweep(&cfg, project)?;
    let files = sweep_files(&cfg, &outcomes, cfg.output.plots && !no_plots)?;
    write_files(&cfg.output.dir, &files)?;
    eprintln!("wrote {} files to {}", files.len(), cfg.output.dir.display());
    Ok(())
}

fn plot_cmd(
    results: &Path,
    metric: &str,
    axis: Option<String>,
    log: bool,
    methods: Option<Vec<String>>,
    out: &Path,
) -> SimResult<()> {
    let rows = read_results(results)?;
    let axis = match axis {
        Some(a) => a,
        None => rows
            .first()
            .map(|r| r.axis_name.clone())
            .ok_or_else(|| SimError::Schema(format!("{} has no rows", results.display())))?,
    };
    let methods = match methods {
        Some(list) => list.iter().map(|s| parse_method(s)).collect::<SimResult<Vec<_>>>()?,
        None => Method::ALL.to_vec(),
    };
    write_file(out, &plot_svg(&rows, &axis, metric, log, &methods)?)
}

fn crlb_cmd(
    config: Option<&Path>,
    theta: &[f64],
    dist: &[f64],
    beams: Option<&Path>,
    power_dbm: Option<f64>,
) -> SimResult<()> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if theta.len() != dist.len() {
        return Err(SimError::Config(format!(
            "{} angles but {} distances",
            theta.len(),
            dist.len()
        )));
    }
    cfg.system.n_vehicles = theta.len();
    if cfg.scenario.mean_positions_m.len() < theta.len() {
        cfg.scenario.mean_positions_m = theta.iter().zip(dist).map(|(t, d)| [d * t.cos(), d * t.sin()]).collect();
    }
    if let Some(pw) = power_dbm {
        cfg.system.power_dbm = pw;
    }
    let p = cfg.system_params()?;
    let states = theta
        .iter()
        .zip(dist)
        .map(|(&t, &d)| VehicleState::at_position((d * t.cos(), d * t.sin()), p.speed_min_mps))
        .collect::<isac_core::Result<Vec<_>>>()?;
    let w = match beams {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let cols: Vec<Vec<[f64; 2]>> =
                serde_json::from_str(&text).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
            let cols: Vec<Vec<Complex64>> = cols
                .iter()
                .map(|c| c.iter().map(|v| Complex64::new(v[0], v[1])).collect())
                .collect();
            BeamformingMatrix::from_columns(&cols)?
        }
        None => {
            let amp = (p.power_budget_w / states.len() as f64).sqrt();
            let cols = states
                .iter()
                .map(|s| Ok(steering_vector(s.theta, p.n_tx)?.into_iter().map(|v| v * amp).collect()))
                .collect::<isac_core::Result<Vec<Vec<Complex64>>>>()?;
            BeamformingMatrix::from_columns(&cols)?
        }
    };
    if w.n_tx() != p.n_tx || w.n_vehicles() != states.len() {
        return Err(SimError::Config(format!(
            "beams are {}x{}, expected {}x{}",
            w.n_tx(),
            w.n_vehicles(),
            p.n_tx,
            states.len()
        )));
    }
    for (k, s) in states.iter().enumerate() {
        let c = crlb_pair(&states, &w, k, &p)?;
        let line = serde_json::json!({
            "vehicle": k,
            "theta_rad": s.theta,
            "dist_m": s.dist,
            "crlb_theta": c.crlb_angle,
            "crlb_dist": c.crlb_dist,
            "sqrt_crlb_theta": c.crlb_angle.sqrt(),
            "sqrt_crlb_dist": c.crlb_dist.sqrt(),
        });
        println!("{line}");
    }
    Ok(())
}

fn complexity_cmd(config: Option<&Path>) -> SimResult<()> {
    let cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let r = complexity_report(
        &cfg.hcl_config(),
        cfg.model.epochs as u64,
        cfg.dataset.train_examples as u64,
    );
    println!("online  = tau * K * sum_l n_(l-1) s_l^2 n_l a_l b_l + 4 tau (k1 k2 + k2^2 + k2)");
    println!("offline = I_t * N_e * online");
    print!("tau = {}, K = {}", r.tau, r.k_vehicles);
    for (i, l) in r.conv_layers.iter().enumerate() {
        print!(
            ", n{i} = {}, s{} = {}, n{} = {}, a{} = {}, b{} = {}",
            l.in_channels,
            i + 1,
            l.kernel,
            i + 1,
            l.out_channels,
            i + 1,
            l.out_len,
            i + 1,
            l.out_width
        );
    }
    println!(", k1 = {}, k2 = {}, I_t = {}, N_e = {}", r.kappa1, r.kappa2, r.iterations, r.n_examples);
    println!("cnn_online = {}", r.cnn_online);
    println!("lstm_online = {}", r.lstm_online);
    println!("online = {}", r.online);
    println!("offline = {}", r.offline);
    Ok(())
}
