//! Experiment configuration files.
//!
//! TOML with `[section]` headers. Physical quantities carry their unit in the
//! key name (`power_dbm`, `slot_s`, `mean_positions_m`, ...). Unknown keys are
//! rejected with the offending key in the message.

use std::fmt;
use std::path::{Path, PathBuf};

use isac_core::autodiff::AdamConfig;
use isac_core::baselines::NaiveNetConfig;
use isac_core::hcl::HclConfig;
use isac_core::params::{db_to_linear, dbm_to_watts};
use isac_core::training::TrainConfig;
use isac_core::{Complex64, SystemParams};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, SimError, SimResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    UpperBound,
    Hcl,
    Naive,
    Random,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::UpperBound, Method::Hcl, Method::Naive, Method::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::UpperBound => "upper_bound",
            Method::Hcl => "hcl",
            Method::Naive => "naive",
            Method::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Whether the method has trainable parameters.
    pub fn is_learned(self) -> bool {
        matches!(self, Method::Hcl | Method::Naive)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PowerDbm,
    NAntennas,
    NVehicles,
    Velocity,
    Tau,
    Lambda,
    Gamma,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 7] = [
        SweepAxis::PowerDbm,
        SweepAxis::NAntennas,
        SweepAxis::NVehicles,
        SweepAxis::Velocity,
        SweepAxis::Tau,
        SweepAxis::Lambda,
        SweepAxis::Gamma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::PowerDbm => "power_dbm",
            SweepAxis::NAntennas => "n_antennas",
            SweepAxis::NVehicles => "n_vehicles",
            SweepAxis::Velocity => "velocity",
            SweepAxis::Tau => "tau",
            SweepAxis::Lambda => "lambda",
            SweepAxis::Gamma => "gamma",
        }
    }

    pub fn parse(s: &str) -> Option<SweepAxis> {
        SweepAxis::ALL.into_iter().find(|a| a.as_str() == s)
    }

    /// Axes whose values change the network dimensions.
    pub fn resizes_network(self) -> bool {
        matches!(self, SweepAxis::NAntennas | SweepAxis::NVehicles | SweepAxis::Tau)
    }

    fn is_integer(self) -> bool {
        self.resizes_network()
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_vehicles: usize,
    pub carrier_hz: f64,
    pub wave_speed_mps: f64,
    pub slot_s: f64,
    pub pathloss_exp: f64,
    pub pathloss_ref_db: f64,
    pub ref_dist_m: f64,
    /// Real and imaginary part of the reflection coefficient.
    pub rcs_coeff: [f64; 2],
    pub noise_echo_dbm: f64,
    pub noise_rx_dbm: f64,
    pub mf_gain: f64,
    pub delay_const: f64,
    pub doppler_const: f64,
    /// Angle observation noise; defaults to `mf_gain` times the echo noise.
    pub echo_obs_var_w: Option<f64>,
    pub power_dbm: f64,
    pub crlb_angle_max_rad2: f64,
    pub crlb_dist_max_m2: f64,
    pub penalty_angle: f64,
    pub penalty_dist: f64,
    pub penalty_power: f64,
    pub crlb_cap: f64,
    pub history_len: usize,
    pub history_nmse: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        let p = SystemParams::default();
        Self {
            n_tx: p.n_tx,
            n_rx: p.n_rx,
            n_vehicles: p.n_vehicles,
            carrier_hz: p.carrier_hz,
            wave_speed_mps: p.wave_speed_mps,
            slot_s: p.slot_s,
            pathloss_exp: p.pathloss_exp,
            pathloss_ref_db: -70.0,
            ref_dist_m: p.ref_dist_m,
            rcs_coeff: [p.rcs_coeff.re, p.rcs_coeff.im],
            noise_echo_dbm: -80.0,
            noise_rx_dbm: -80.0,
            mf_gain: p.mf_gain,
            delay_const: p.delay_const,
            doppler_const: p.doppler_const,
            echo_obs_var_w: None,
            power_dbm: 30.0,
            crlb_angle_max_rad2: p.crlb_angle_max,
            crlb_dist_max_m2: p.crlb_dist_max,
            penalty_angle: p.penalty_angle,
            penalty_dist: p.penalty_dist,
            penalty_power: p.penalty_power,
            crlb_cap: p.crlb_cap,
            history_len: p.history_len,
            history_nmse: p.history_nmse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    /// Mean initial `(x, y)` per vehicle; the first `n_vehicles` entries are used.
    pub mean_positions_m: Vec<[f64; 2]>,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            mean_positions_m: isac_core::training::DEFAULT_MEAN_POSITIONS
                .iter()
                .map(|&(x, y)| [x, y])
                .collect(),
            speed_min_mps: 8.0,
            speed_max_mps: 8.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub conv_filters: usize,
    pub conv_kernel: [usize; 2],
    /// Pool size and stride along the antenna axis.
    pub pool: [usize; 2],
    pub lstm_hidden: usize,
    pub naive_hidden: [usize; 2],
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Scale learned beams down onto the power budget at evaluation.
    pub projection: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            conv_filters: 4,
            conv_kernel: [3, 3],
            pool: [4, 4],
            lstm_hidden: 64,
            naive_hidden: [256, 256],
            learning_rate: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.eps,
            batch_size: 32,
            epochs: 6,
            projection: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub train_examples: usize,
    pub test_examples: usize,
    /// Top-level seeds; every random stream of a run derives from one of them.
    pub seeds: Vec<u64>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            train_examples: 2000,
            test_examples: 2000,
            seeds: vec![1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub plots: bool,
    pub checkpoints: bool,
    /// Write measured training time into the results; off keeps reruns byte-identical.
    pub record_wall_time: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            plots: true,
            checkpoints: true,
            record_wall_time: false,
        }
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: default_methods(),
            system: SystemSection::default(),
            scenario: ScenarioSection::default(),
            model: ModelSection::default(),
            dataset: DatasetSection::default(),
            sweep: None,
            output: OutputSection::default(),
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> SimError {
    SimError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> SimResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| cfg_err(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> SimResult<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SimError::Config(m) => cfg_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> SimResult<()> {
        if self.methods.is_empty() {
            return Err(cfg_err("methods must not be empty"));
        }
        if self.dataset.seeds.is_empty() {
            return Err(cfg_err("dataset.seeds must not be empty"));
        }
        if self.dataset.train_examples == 0 || self.dataset.test_examples == 0 {
            return Err(cfg_err("dataset sizes must be positive"));
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(cfg_err("sweep.values must not be empty"));
            }
            for &v in &s.values {
                self.at_point(s.axis, v)?;
            }
        } else {
            self.system_params()?;
        }
        Ok(())
    }

    /// Mean positions used for the configured number of vehicles.
    pub fn mean_positions(&self) -> SimResult<Vec<(f64, f64)>> {
        let k = self.system.n_vehicles;
        let all = &self.scenario.mean_positions_m;
        if all.len() < k {
            return Err(cfg_err(format!(
                "scenario.mean_positions_m lists {} positions for {k} vehicles",
                all.len()
            )));
        }
        Ok(all[..k].iter().map(|p| (p[0], p[1])).collect())
    }

    pub fn system_params(&self) -> SimResult<SystemParams> {
        let s = &self.system;
        let noise_echo_w = dbm_to_watts(s.noise_echo_dbm);
        let p = SystemParams {
            n_tx: s.n_tx,
            n_rx: s.n_rx,
            n_vehicles: s.n_vehicles,
            carrier_hz: s.carrier_hz,
            wave_speed_mps: s.wave_speed_mps,
            slot_s: s.slot_s,
            pathloss_exp: s.pathloss_exp,
            pathloss_ref: db_to_linear(s.pathloss_ref_db),
            ref_dist_m: s.ref_dist_m,
            rcs_coeff: Complex64::new(s.rcs_coeff[0], s.rcs_coeff[1]),
            noise_echo_w,
            noise_rx_w: dbm_to_watts(s.noise_rx_dbm),
            noise_rx_per_vehicle_w: None,
            mf_gain: s.mf_gain,
            delay_const: s.delay_const,
            doppler_const: s.doppler_const,
            echo_obs_var_w: s.echo_obs_var_w.unwrap_or(s.mf_gain * noise_echo_w),
            power_budget_w: dbm_to_watts(s.power_dbm),
            crlb_angle_max: s.crlb_angle_max_rad2,
            crlb_dist_max: s.crlb_dist_max_m2,
            penalty_angle: s.penalty_angle,
            penalty_dist: s.penalty_dist,
            penalty_power: s.penalty_power,
            crlb_cap: s.crlb_cap,
            history_len: s.history_len,
            history_nmse: s.history_nmse,
            speed_min_mps: self.scenario.speed_min_mps,
            speed_max_mps: self.scenario.speed_max_mps,
        };
        p.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.mean_positions()?;
        Ok(p)
    }

    /// Copy of the config with `axis` set to `value`.
    pub fn at_point(&self, axis: SweepAxis, value: f64) -> SimResult<ExperimentConfig> {
        if !value.is_finite() {
            return Err(cfg_err(format!("{axis} value {value} is not finite")));
        }
        if axis.is_integer() && (value.fract() != 0.0 || value < 1.0) {
            return Err(cfg_err(format!("{axis} value {value} must be a positive integer")));
        }
        let mut c = self.clone();
        let s = &mut c.system;
        match axis {
            SweepAxis::PowerDbm => s.power_dbm = value,
            SweepAxis::NAntennas => {
                s.n_tx = value as usize;
                s.n_rx = value as usize;
            }
            SweepAxis::NVehicles => s.n_vehicles = value as usize,
            SweepAxis::Velocity => {
                let width = c.scenario.speed_max_mps - c.scenario.speed_min_mps;
                c.scenario.speed_min_mps = value;
                c.scenario.speed_max_mps = value + width;
            }
            SweepAxis::Tau => s.history_len = value as usize,
            SweepAxis::Lambda => {
                s.penalty_angle = value;
                s.penalty_dist = value;
                s.penalty_power = value;
            }
            SweepAxis::Gamma => {
                s.crlb_angle_max_rad2 = value;
                s.crlb_dist_max_m2 = value;
            }
        }
        c.system_params()?;
        c.hcl_config().validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(c)
    }

    /// Network shape for the current system block; scales are left at 1.
    pub fn hcl_config(&self) -> HclConfig {
        let m = &self.model;
        HclConfig {
            conv_filters: m.conv_filters,
            conv_kernel: (m.conv_kernel[0], m.conv_kernel[1]),
            pool: (m.pool[0], m.pool[1]),
            lstm_hidden: m.lstm_hidden,
            ..HclConfig::new(self.system.history_len, self.system.n_vehicles, self.system.n_tx)
        }
    }

    pub fn naive_config(&self) -> NaiveNetConfig {
        NaiveNetConfig {
            hidden: self.model.naive_hidden,
            ..NaiveNetConfig::new(self.system.n_vehicles, self.system.n_tx)
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let m = &self.model;
        TrainConfig {
            adam: AdamConfig {
                lr: m.learning_rate,
                beta1: m.beta1,
                beta2: m.beta2,
                eps: m.epsilon,
            },
            batch_size: m.batch_size,
            epochs: m.epochs,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_table_defaults() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        let p = c.system_params().unwrap();
        let d = SystemParams::default();
        assert_eq!(p.n_tx, 32);
        assert!((p.power_budget_w - 1.0).abs() < 1e-12);
        assert!((p.noise_rx_w - d.noise_rx_w).abs() < 1e-25);
        assert!((p.echo_obs_var_w - d.echo_obs_var_w).abs() < 1e-25);
        assert!((p.pathloss_ref - d.pathloss_ref).abs() < 1e-20);
        assert_eq!(c.methods, Method::ALL.to_vec());
        assert_eq!(c.hcl_config().concat_dim(), 96);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = ExperimentConfig::from_toml_str("[system]\npower_w = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("power_w"), "{e}");
        let e = ExperimentConfig::from_toml_str("bogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn unknown_method_and_axis_rejected() {
        assert!(ExperimentConfig::from_toml_str("methods = [\"hcl\", \"magic\"]\n").is_err());
        let e = ExperimentConfig::from_toml_str("[sweep]\naxis = \"speed\"\nvalues = [1.0]\n").unwrap_err();
        assert!(e.to_string().contains("speed"), "{e}");
    }

    #[test]
    fn empty_sweep_values_rejected() {
        let e = ExperimentConfig::from_toml_str("[sweep]\naxis = \"power_dbm\"\nvalues = []\n").unwrap_err();
        assert!(e.to_string().contains("values"), "{e}");
    }

    #[test]
    fn axis_application() {
        let c = ExperimentConfig::default();
        let p = c.at_point(SweepAxis::PowerDbm, 20.0).unwrap().system_params().unwrap();
        assert!((p.power_budget_w - 0.1).abs() < 1e-12);
        let a = c.at_point(SweepAxis::NAntennas, 16.0).unwrap();
        assert_eq!((a.system.n_tx, a.system.n_rx, a.hcl_config().n_tx), (16, 16, 16));
        let k = c.at_point(SweepAxis::NVehicles, 2.0).unwrap();
        assert_eq!(k.mean_positions().unwrap(), vec![(15.0, 20.0), (25.0, 20.0)]);
        assert!(c.at_point(SweepAxis::NVehicles, 4.0).is_err());
        let v = c.at_point(SweepAxis::Velocity, 20.0).unwrap();
        assert_eq!((v.scenario.speed_min_mps, v.scenario.speed_max_mps), (20.0, 20.25));
        assert_eq!(c.at_point(SweepAxis::Tau, 3.0).unwrap().hcl_config().tau, 3);
        assert!(c.at_point(SweepAxis::Tau, 2.5).is_err());
        let l = c.at_point(SweepAxis::Lambda, 1.0).unwrap().system_params().unwrap();
        assert_eq!((l.penalty_angle, l.penalty_dist, l.penalty_power), (1.0, 1.0, 1.0));
        let g = c.at_point(SweepAxis::Gamma, 1e-3).unwrap().system_params().unwrap();
        assert_eq!((g.crlb_angle_max, g.crlb_dist_max), (1e-3, 1e-3));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::default();
        c.sweep = Some(SweepSection {
            axis: SweepAxis::Gamma,
            values: vec![1e-4, 1e-2],
        });
        c.system.echo_obs_var_w = Some(100.0);
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn method_and_axis_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.as_str()), Some(m));
        }
        for a in SweepAxis::ALL {
            assert_eq!(SweepAxis::parse(a.as_str()), Some(a));
        }
    }
}
