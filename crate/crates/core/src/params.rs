//! Physical and algorithmic constants, with dB/dBm conversions.
//!
//! Powers are held in watts and gains in linear scale. dBm only shows up at
//! the configuration boundary through [`dbm_to_watts`] and [`watts_to_dbm`].

use alloc::format;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::math;

/// Propagation speed used throughout (m/s).
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Converts a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    math::powf(10.0, (dbm - 30.0) / 10.0)
}

/// Converts a power in watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * math::log10(watts) + 30.0
}

/// Converts a power ratio in dB to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    math::powf(10.0, db / 10.0)
}

/// Converts a linear power ratio to dB.
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * math::log10(linear)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SystemParams {
    /// Transmit antennas of the roadside unit.
    pub n_tx: usize,
    /// Receive antennas of the roadside unit.
    pub n_rx: usize,
    pub n_vehicles: usize,
    pub carrier_hz: f64,
    pub wave_speed_mps: f64,
    pub slot_s: f64,
    pub pathloss_exp: f64,
    /// Linear path gain at `ref_dist_m`.
    pub pathloss_ref: f64,
    pub ref_dist_m: f64,
    /// Radar-cross-section fading coefficient.
    pub rcs_coeff: Complex64,
    pub noise_echo_w: f64,
    pub noise_rx_w: f64,
    /// Optional per-vehicle receiver noise; overrides `noise_rx_w` when set.
    pub noise_rx_per_vehicle_w: Option<Vec<f64>>,
    /// Matched-filtering gain.
    pub mf_gain: f64,
    pub delay_const: f64,
    pub doppler_const: f64,
    /// Noise variance of the matched-filter angle observation.
    pub echo_obs_var_w: f64,
    pub power_budget_w: f64,
    /// Angle CRLB threshold (rad^2).
    pub crlb_angle_max: f64,
    /// Distance CRLB threshold (m^2).
    pub crlb_dist_max: f64,
    pub penalty_angle: f64,
    pub penalty_dist: f64,
    pub penalty_power: f64,
    /// Saturation value standing in for an infinite CRLB inside the training cost.
    pub crlb_cap: f64,
    pub history_len: usize,
    /// Relative NMSE of the historical angle/distance estimates.
    pub history_nmse: f64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        let noise_echo_w = dbm_to_watts(-80.0);
        let mf_gain = 10.0;
        Self {
            n_tx: 32,
            n_rx: 32,
            n_vehicles: 3,
            carrier_hz: 30e9,
            wave_speed_mps: SPEED_OF_LIGHT,
            slot_s: 0.02,
            pathloss_exp: 2.55,
            pathloss_ref: db_to_linear(-70.0),
            ref_dist_m: 1.0,
            rcs_coeff: Complex64::new(10.0, 10.0),
            noise_echo_w,
            noise_rx_w: dbm_to_watts(-80.0),
            noise_rx_per_vehicle_w: None,
            mf_gain,
            delay_const: 2.0e-6,
            doppler_const: 2.0e-6,
            echo_obs_var_w: mf_gain * noise_echo_w,
            power_budget_w: dbm_to_watts(30.0),
            crlb_angle_max: 0.01,
            crlb_dist_max: 0.01,
            penalty_angle: 1e3,
            penalty_dist: 1e3,
            penalty_power: 1e3,
            crlb_cap: 1e6,
            history_len: 6,
            history_nmse: 0.01,
            speed_min_mps: 8.0,
            speed_max_mps: 8.25,
        }
    }
}

impl SystemParams {
    /// Receiver noise power of vehicle `k`.
    pub fn noise_rx(&self, k: usize) -> f64 {
        match &self.noise_rx_per_vehicle_w {
            Some(v) => v[k],
            None => self.noise_rx_w,
        }
    }

    /// Array gain `G = sqrt(Nt * Nr)` of the echo path.
    pub fn echo_array_gain(&self) -> f64 {
        math::sqrt((self.n_tx * self.n_rx) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tx < 2 {
            return Err(invalid(format!("n_tx must be >= 2, got {}", self.n_tx)));
        }
        if self.n_rx == 0 || self.n_vehicles == 0 || self.history_len == 0 {
            return Err(invalid("n_rx, n_vehicles and history_len must be positive"));
        }
        let positive = [
            ("carrier_hz", self.carrier_hz),
            ("wave_speed_mps", self.wave_speed_mps),
            ("slot_s", self.slot_s),
            ("pathloss_exp", self.pathloss_exp),
            ("pathloss_ref", self.pathloss_ref),
            ("ref_dist_m", self.ref_dist_m),
            ("noise_echo_w", self.noise_echo_w),
            ("noise_rx_w", self.noise_rx_w),
            ("mf_gain", self.mf_gain),
            ("delay_const", self.delay_const),
            ("doppler_const", self.doppler_const),
            ("echo_obs_var_w", self.echo_obs_var_w),
            ("power_budget_w", self.power_budget_w),
            ("crlb_angle_max", self.crlb_angle_max),
            ("crlb_dist_max", self.crlb_dist_max),
            ("crlb_cap", self.crlb_cap),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        let nonneg = [
            ("penalty_angle", self.penalty_angle),
            ("penalty_dist", self.penalty_dist),
            ("penalty_power", self.penalty_power),
            ("history_nmse", self.history_nmse),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.speed_min_mps.is_finite()
            && self.speed_max_mps.is_finite()
            && self.speed_min_mps <= self.speed_max_mps)
        {
            return Err(invalid("speed range must satisfy min <= max"));
        }
        if let Some(v) = &self.noise_rx_per_vehicle_w {
            if v.len() != self.n_vehicles || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(invalid("per-vehicle noise must list one positive value per vehicle"));
            }
        }
        Ok(())
    }

    /// Same parameters with every penalty weight set to `lambda`.
    pub fn with_penalties(mut self, lambda: f64) -> Self {
        self.penalty_angle = lambda;
        self.penalty_dist = lambda;
        self.penalty_power = lambda;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_validate() {
        SystemParams::default().validate().unwrap();
        assert!((SystemParams::default().power_budget_w - 1.0).abs() < 1e-15);
        assert!((SystemParams::default().pathloss_ref - 1e-7).abs() < 1e-22);
    }

    #[test]
    fn rejects_single_antenna() {
        let p = SystemParams {
            n_tx: 1,
            ..SystemParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn rejects_zero_noise() {
        let p = SystemParams {
            noise_rx_w: 0.0,
            ..SystemParams::default()
        };
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn dbm_round_trip(dbm in -150.0f64..80.0) {
            let back = watts_to_dbm(dbm_to_watts(dbm));
            prop_assert!((back - dbm).abs() <= 1e-12 * dbm.abs().max(1.0));
        }

        #[test]
        fn db_round_trip(lin in 1e-15f64..1e9) {
            let back = db_to_linear(linear_to_db(lin));
            prop_assert!(((back - lin) / lin).abs() <= 1e-12);
        }
    }
}
