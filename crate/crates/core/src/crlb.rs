//! Echo statistics and Cramer-Rao bounds for angle and range.
//!
//! The echo of vehicle `k` after spatial filtering and matched filtering gives
//! three observations: the complex gain `r = G β ξ aᴴ(θ) w_k`, the round-trip
//! delay `2d/c` and the Doppler shift `2 v̇ f_c / c`. Delay and Doppler errors
//! have variances `ρ²/SNR`, where the SNR counts the other vehicles' beams as
//! interference. The resulting Fisher information is diagonal, which gives
//!
//! ```text
//! CRLB(θ) = σ_r² / |∂r/∂θ|²        CRLB(d) = σ_ν² c² / 4
//! ```
//!
//! A zero beam gain makes a bound infinite. Analysis paths return
//! `f64::INFINITY` in that case; the training cost substitutes
//! [`SystemParams::crlb_cap`].

use alloc::format;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::kinematics::VehicleState;
use crate::math;
use crate::params::SystemParams;
use crate::system::{inner, reflection_coeff, steering_vector, BeamformingMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoStatistics {
    pub snr: f64,
    /// Delay-estimate variance (s²).
    pub var_delay: f64,
    /// Doppler-estimate variance (Hz²).
    pub var_doppler: f64,
    /// Angle-observation noise variance.
    pub var_obs: f64,
    pub dr_dtheta: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CrlbPair {
    pub crlb_angle: f64,
    pub crlb_dist: f64,
}

fn check(states: &[VehicleState], w: &BeamformingMatrix, k: usize, p: &SystemParams) -> Result<()> {
    if states.len() != w.n_vehicles() || w.n_tx() != p.n_tx {
        return Err(invalid(format!(
            "{} states vs beamformer {}x{} (n_tx = {})",
            states.len(),
            w.n_tx(),
            w.n_vehicles(),
            p.n_tx
        )));
    }
    if k >= states.len() {
        return Err(invalid(format!("vehicle index {k} out of range")));
    }
    Ok(())
}

/// Signal and interference-plus-noise powers of the echo of vehicle `k`.
pub fn echo_powers(
    states: &[VehicleState],
    w: &BeamformingMatrix,
    k: usize,
    p: &SystemParams,
) -> Result<(f64, f64)> {
    check(states, w, k, p)?;
    let g2 = (p.n_tx * p.n_rx) as f64;
    let a = steering_vector(states[k].theta, p.n_tx)?;
    let mut signal = 0.0;
    let mut rest = p.noise_echo_w;
    for (i, s) in states.iter().enumerate() {
        let beta2 = reflection_coeff(s.dist, p)?.norm_sqr();
        let term = g2 * beta2 * inner(&a, w.column(i)).norm_sqr();
        if i == k {
            signal = term;
        } else {
            rest += term;
        }
    }
    Ok((signal, rest))
}

/// Echo SNR of vehicle `k`, other vehicles' echoes counted as noise.
pub fn echo_snr(states: &[VehicleState], w: &BeamformingMatrix, k: usize, p: &SystemParams) -> Result<f64> {
    let (s, n) = echo_powers(states, w, k, p)?;
    Ok(s / n)
}

fn reciprocal_law(rho: f64, signal: f64, rest: f64) -> f64 {
    if rho == 0.0 {
        0.0
    } else if signal == 0.0 {
        f64::INFINITY
    } else {
        rho * rho * rest / signal
    }
}

/// Delay-estimate variance `ρ_ν² / SNR`; infinite when the beam misses the vehicle.
pub fn delay_variance(states: &[VehicleState], w: &BeamformingMatrix, k: usize, p: &SystemParams) -> Result<f64> {
    let (s, n) = echo_powers(states, w, k, p)?;
    Ok(reciprocal_law(p.delay_const, s, n))
}

/// Doppler-estimate variance `ρ_μ² / SNR`; infinite when the beam misses the vehicle.
pub fn doppler_variance(states: &[VehicleState], w: &BeamformingMatrix, k: usize, p: &SystemParams) -> Result<f64> {
    let (s, n) = echo_powers(states, w, k, p)?;
    Ok(reciprocal_law(p.doppler_const, s, n))
}

/// Derivative of the matched-filter angle observation with respect to θ.
pub fn dr_dtheta(theta: f64, beta: Complex64, w: &[Complex64], p: &SystemParams) -> Complex64 {
    let c = math::cos(theta);
    let s = math::sin(theta);
    let sum: Complex64 = w
        .iter()
        .enumerate()
        .skip(1)
        .map(|(m, wm)| {
            let m = m as f64;
            wm * Complex64::from_polar(1.0, PI * m * c) * Complex64::new(0.0, PI * m * s)
        })
        .sum();
    -(math::sqrt(p.n_rx as f64) * p.mf_gain) * beta * sum
}

/// `σ_r² / |∂r/∂θ|²`, infinite when the derivative vanishes.
pub fn crlb_angle(theta: f64, beta: Complex64, w: &[Complex64], p: &SystemParams) -> f64 {
    let d = dr_dtheta(theta, beta, w, p).norm_sqr();
    if d == 0.0 {
        f64::INFINITY
    } else {
        p.echo_obs_var_w / d
    }
}

/// `σ_ν² c² / 4`.
pub fn crlb_distance(states: &[VehicleState], w: &BeamformingMatrix, k: usize, p: &SystemParams) -> Result<f64> {
    let var = delay_variance(states, w, k, p)?;
    Ok(var * p.wave_speed_mps * p.wave_speed_mps / 4.0)
}

/// Both bounds of vehicle `k`, evaluated at its true angle and range.
pub fn crlb_pair(states: &[VehicleState], w: &BeamformingMatrix, k: usize, p: &SystemParams) -> Result<CrlbPair> {
    check(states, w, k, p)?;
    let beta = reflection_coeff(states[k].dist, p)?;
    Ok(CrlbPair {
        crlb_angle: crlb_angle(states[k].theta, beta, w.column(k), p),
        crlb_dist: crlb_distance(states, w, k, p)?,
    })
}

pub fn echo_statistics(
    states: &[VehicleState],
    w: &BeamformingMatrix,
    k: usize,
    p: &SystemParams,
) -> Result<EchoStatistics> {
    let (signal, rest) = echo_powers(states, w, k, p)?;
    let beta = reflection_coeff(states[k].dist, p)?;
    Ok(EchoStatistics {
        snr: signal / rest,
        var_delay: reciprocal_law(p.delay_const, signal, rest),
        var_doppler: reciprocal_law(p.doppler_const, signal, rest),
        var_obs: p.echo_obs_var_w,
        dr_dtheta: dr_dtheta(states[k].theta, beta, w.column(k), p),
    })
}

/// Mean of the observation vector (angle gain, delay, Doppler) for motion
/// parameters `(θ, d, v̇)` with the reflection coefficient held at `beta`.
pub fn observation_mean(
    x: [f64; 3],
    beta: Complex64,
    w: &[Complex64],
    p: &SystemParams,
) -> Result<[Complex64; 3]> {
    let a = steering_vector(x[0], p.n_tx)?;
    let gain = p.echo_array_gain() * p.mf_gain;
    let r = beta * gain * inner(&a, w);
    let delay = 2.0 * x[1] / p.wave_speed_mps;
    let doppler = 2.0 * x[2] * p.carrier_hz / p.wave_speed_mps;
    Ok([r, Complex64::new(delay, 0.0), Complex64::new(doppler, 0.0)])
}

/// Finite-difference steps for (θ, d, v̇).
pub const FIM_STEPS: [f64; 3] = [1e-6, 1e-4, 1e-4];

/// Fisher information of `(θ, d, v̇)` for vehicle `k` from central differences
/// of [`observation_mean`], using the default [`FIM_STEPS`].
pub fn numerical_fim_oracle(
    states: &[VehicleState],
    w: &BeamformingMatrix,
    k: usize,
    p: &SystemParams,
) -> Result<[[f64; 3]; 3]> {
    numerical_fim_with_steps(states, w, k, p, FIM_STEPS)
}

pub fn numerical_fim_with_steps(
    states: &[VehicleState],
    w: &BeamformingMatrix,
    k: usize,
    p: &SystemParams,
    steps: [f64; 3],
) -> Result<[[f64; 3]; 3]> {
    let stats = echo_statistics(states, w, k, p)?;
    let sigma = [stats.var_obs, stats.var_delay, stats.var_doppler];
    if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(invalid(format!("singular observation covariance {sigma:?}")));
    }
    let s = &states[k];
    let x0 = [s.theta, s.dist, s.radial_speed];
    let beta = reflection_coeff(s.dist, p)?;
    let col = w.column(k);
    let mut jac = [[Complex64::new(0.0, 0.0); 3]; 3];
    for j in 0..3 {
        let mut xp = x0;
        let mut xm = x0;
        xp[j] += steps[j];
        xm[j] -= steps[j];
        let gp = observation_mean(xp, beta, col, p)?;
        let gm = observation_mean(xm, beta, col, p)?;
        for i in 0..3 {
            jac[i][j] = (gp[i] - gm[i]) / (2.0 * steps[j]);
        }
    }
    let mut fim = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            fim[a][b] = (0..3)
                .map(|i| (jac[i][a].conj() * jac[i][b]).re / sigma[i])
                .sum();
        }
    }
    Ok(fim)
}

/// Inverse of a 3x3 matrix by cofactors.
pub fn invert3(m: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3]> {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    if det == 0.0 || !det.is_finite() {
        return Err(invalid("singular matrix"));
    }
    let inv_det = 1.0 / det;
    Ok([
        [
            c00 * inv_det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det,
        ],
        [
            c01 * inv_det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det,
        ],
        [
            c02 * inv_det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det,
        ],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::ComplexColumns;
    use alloc::vec;
    use alloc::vec::Vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn aligned_single(theta: f64, d: f64, p: &SystemParams) -> (Vec<VehicleState>, BeamformingMatrix) {
        let pos = (d * math::cos(theta), d * math::sin(theta));
        let s = VehicleState::at_position(pos, 8.0).unwrap();
        let a = steering_vector(s.theta, p.n_tx).unwrap();
        let w: Vec<_> = a.iter().map(|x| x * math::sqrt(p.power_budget_w)).collect();
        (vec![s], BeamformingMatrix::from_columns(&[w]).unwrap())
    }

    #[test]
    fn aligned_echo_snr() {
        let p = SystemParams::default();
        let (s, w) = aligned_single(PI / 2.0, 20.0, &p);
        assert_relative_eq!(echo_snr(&s, &w, 0, &p).unwrap(), 1.28e13, max_relative = 1e-9);
        assert!(echo_snr(&s, &w, 1, &p).is_err());
    }

    #[test]
    fn orthogonal_beam_has_zero_snr() {
        let p = SystemParams {
            n_tx: 4,
            n_rx: 4,
            ..SystemParams::default()
        };
        let s = vec![VehicleState::at_position((0.0, 20.0), 8.0).unwrap()];
        // a(π/2) is flat; an alternating beam is orthogonal to it.
        let w = vec![
            Complex64::new(0.5, 0.0),
            Complex64::new(-0.5, 0.0),
            Complex64::new(0.5, 0.0),
            Complex64::new(-0.5, 0.0),
        ];
        let w = BeamformingMatrix::from_columns(&[w]).unwrap();
        assert!(echo_snr(&s, &w, 0, &p).unwrap() < 1e-20);
    }

    #[test]
    fn aligned_interferer_lowers_snr() {
        let p = SystemParams::default();
        let s1 = VehicleState::at_position((0.0, 20.0), 8.0).unwrap();
        let s2 = VehicleState::at_position((10.0, 20.0), 8.0).unwrap();
        let a1 = steering_vector(s1.theta, p.n_tx).unwrap();
        let a2 = steering_vector(s2.theta, p.n_tx).unwrap();
        let alone = BeamformingMatrix::from_columns(&[a1.clone(), vec![Complex64::new(0.0, 0.0); p.n_tx]]).unwrap();
        let jammed = BeamformingMatrix::from_columns(&[a1.clone(), a1.clone()]).unwrap();
        let states = [s1, s2];
        let base = echo_snr(&states, &alone, 0, &p).unwrap();
        let worse = echo_snr(&states, &jammed, 0, &p).unwrap();
        assert!(worse < base);
        let _ = a2;
    }

    #[test]
    fn delay_variance_values() {
        let p = SystemParams::default();
        let (s, w) = aligned_single(PI / 2.0, 20.0, &p);
        assert_relative_eq!(delay_variance(&s, &w, 0, &p).unwrap(), 3.125e-25, max_relative = 1e-9);
        // Halving the SNR doubles the variance.
        let half = w.scaled(math::sqrt(0.5));
        let ratio = delay_variance(&s, &half, 0, &p).unwrap() / delay_variance(&s, &w, 0, &p).unwrap();
        assert_relative_eq!(ratio, 2.0, max_relative = 1e-6);
        let q = SystemParams {
            delay_const: 0.0,
            ..p.clone()
        };
        assert_eq!(delay_variance(&s, &w, 0, &q).unwrap(), 0.0);
        let zero = BeamformingMatrix::zeros(p.n_tx, 1);
        assert!(delay_variance(&s, &zero, 0, &p).unwrap().is_infinite());
        assert!(doppler_variance(&s, &zero, 0, &p).unwrap().is_infinite());
    }

    #[test]
    fn dr_dtheta_cases() {
        let p = SystemParams::default();
        let beta = reflection_coeff(20.0, &p).unwrap();
        let mut first_only = vec![Complex64::new(0.0, 0.0); p.n_tx];
        first_only[0] = Complex64::new(1.0, 0.0);
        assert_eq!(dr_dtheta(1.0, beta, &first_only, &p).norm(), 0.0);
        let any = steering_vector(0.4, p.n_tx).unwrap();
        assert!(dr_dtheta(0.0, beta, &any, &p).norm() < 1e-9);
        assert!(dr_dtheta(PI, beta, &any, &p).norm() < 1e-9);

        let theta = PI / 2.0;
        let w = steering_vector(theta, p.n_tx).unwrap();
        let nt = p.n_tx as f64;
        let closed = math::sqrt(p.n_rx as f64 / nt) * beta.norm() * p.mf_gain * PI * nt * (nt - 1.0) / 2.0;
        // Direct-summation oracle built from the observation mean.
        let h = 1e-7;
        let plus = observation_mean([theta + h, 20.0, 0.0], beta, &w, &p).unwrap()[0];
        let minus = observation_mean([theta - h, 20.0, 0.0], beta, &w, &p).unwrap()[0];
        let fd = (plus - minus) / (2.0 * h);
        let got = dr_dtheta(theta, beta, &w, &p);
        assert_relative_eq!(got.norm(), closed, max_relative = 1e-10);
        assert_relative_eq!((got - fd).norm() / got.norm(), 0.0, epsilon = 1e-6);
        assert_relative_eq!(got.norm(), 5.51e3, max_relative = 1e-3);
    }

    #[test]
    fn crlb_angle_cases() {
        let p = SystemParams::default();
        let beta = reflection_coeff(20.0, &p).unwrap();
        let w = steering_vector(PI / 2.0, p.n_tx).unwrap();
        let c = crlb_angle(PI / 2.0, beta, &w, &p);
        assert_relative_eq!(c, 1e-10 / (5509.3f64 * 5509.3), max_relative = 1e-3);
        assert!((c - 3.3e-18).abs() < 0.05e-18);
        assert!(crlb_angle(0.0, beta, &[Complex64::new(1.0, 0.0); 32], &p) > 1e20);
        let w2: Vec<_> = w.iter().map(|x| x * 2.0).collect();
        assert_relative_eq!(crlb_angle(PI / 2.0, beta, &w2, &p), c / 4.0, max_relative = 1e-12);
        let first_only = {
            let mut v = vec![Complex64::new(0.0, 0.0); p.n_tx];
            v[0] = Complex64::new(1.0, 0.0);
            v
        };
        assert!(crlb_angle(1.0, beta, &first_only, &p).is_infinite());
    }

    #[test]
    fn crlb_distance_cases() {
        let p = SystemParams::default();
        let (s, w) = aligned_single(PI / 2.0, 20.0, &p);
        let c = crlb_distance(&s, &w, 0, &p).unwrap();
        assert_relative_eq!(c, 3.125e-25 * 2.998e8 * 2.998e8 / 4.0, max_relative = 1e-9);
        assert_relative_eq!(math::sqrt(c), 8.38e-5, max_relative = 1e-3);
        let huge = w.scaled(1e8);
        assert!(crlb_distance(&s, &huge, 0, &p).unwrap() < c * 1e-15);
        // Same SNR at a different angle gives the same bound.
        let (s2, w2) = aligned_single(1.0, 20.0, &p);
        assert_relative_eq!(crlb_distance(&s2, &w2, 0, &p).unwrap(), c, max_relative = 1e-9);
    }

    #[test]
    fn fim_linear_rows_are_exact() {
        let p = SystemParams::default();
        let (s, w) = aligned_single(1.0, 25.0, &p);
        let fim = numerical_fim_oracle(&s, &w, 0, &p).unwrap();
        let st = echo_statistics(&s, &w, 0, &p).unwrap();
        let c = p.wave_speed_mps;
        assert_relative_eq!(fim[1][1], (2.0 / c) * (2.0 / c) / st.var_delay, max_relative = 1e-6);
        let dop = 2.0 * p.carrier_hz / c;
        assert_relative_eq!(fim[2][2], dop * dop / st.var_doppler, max_relative = 1e-6);
    }

    #[test]
    fn singular_covariance_rejected() {
        let p = SystemParams {
            delay_const: 0.0,
            ..SystemParams::default()
        };
        let (s, w) = aligned_single(1.0, 25.0, &p);
        assert!(numerical_fim_oracle(&s, &w, 0, &p).is_err());
    }

    #[test]
    fn fim_step_plateau() {
        // The oracle must be stable across a decade of step sizes before it is trusted.
        let p = SystemParams::default();
        let (s, w) = aligned_single(1.2, 30.0, &p);
        let base = invert3(&numerical_fim_oracle(&s, &w, 0, &p).unwrap()).unwrap();
        for scale in [0.3, 3.0, 10.0] {
            let steps = FIM_STEPS.map(|h| h * scale);
            let inv = invert3(&numerical_fim_with_steps(&s, &w, 0, &p, steps).unwrap()).unwrap();
            for i in 0..3 {
                assert!(((inv[i][i] - base[i][i]) / base[i][i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn invert3_identity() {
        let m = [[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]];
        let inv = invert3(&m).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|t| m[i][t] * inv[t][j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
        assert!(invert3(&[[0.0; 3]; 3]).is_err());
    }

    fn random_config() -> impl Strategy<Value = (Vec<VehicleState>, BeamformingMatrix)> {
        let pos = (-30.0f64..40.0, 5.0f64..40.0, 7.0f64..9.0);
        (
            proptest::collection::vec(pos, 3),
            proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3 * 8),
        )
            .prop_map(|(pos, w)| {
                let states = pos
                    .into_iter()
                    .map(|(x, y, v)| VehicleState::at_position((x, y), v).unwrap())
                    .collect();
                let entries = ComplexColumns {
                    rows: 8,
                    cols: 3,
                    data: w.into_iter().map(|(a, b)| Complex64::new(a, b)).collect(),
                };
                (states, BeamformingMatrix::new(entries))
            })
    }

    fn small_params() -> SystemParams {
        SystemParams {
            n_tx: 8,
            n_rx: 8,
            ..SystemParams::default()
        }
    }

    proptest! {
        #[test]
        fn snr_delay_identity((states, w) in random_config(), k in 0usize..3) {
            let p = small_params();
            let st = echo_statistics(&states, &w, k, &p).unwrap();
            let lhs = st.var_delay * st.snr;
            prop_assert!(((lhs - p.delay_const * p.delay_const) / (p.delay_const * p.delay_const)).abs() < 1e-12);
        }

        #[test]
        fn bounds_phase_invariant((states, w) in random_config(), k in 0usize..3, phase in 0.0f64..6.0) {
            let p = small_params();
            let base = crlb_pair(&states, &w, k, &p).unwrap();
            let mut e = w.entries().clone();
            let rot = Complex64::from_polar(1.0, phase);
            e.column_mut(k).iter_mut().for_each(|x| *x *= rot);
            let rotated = crlb_pair(&states, &BeamformingMatrix::new(e), k, &p).unwrap();
            prop_assert!(((rotated.crlb_angle - base.crlb_angle) / base.crlb_angle).abs() < 1e-10);
            prop_assert!(((rotated.crlb_dist - base.crlb_dist) / base.crlb_dist).abs() < 1e-10);
        }

        #[test]
        fn more_power_never_hurts((states, w) in random_config(), k in 0usize..3, s in 1.0f64..5.0) {
            let p = small_params();
            let base = crlb_pair(&states, &w, k, &p).unwrap();
            let mut e = w.entries().clone();
            e.column_mut(k).iter_mut().for_each(|x| *x *= s);
            let boosted = crlb_pair(&states, &BeamformingMatrix::new(e), k, &p).unwrap();
            prop_assert!(boosted.crlb_angle <= base.crlb_angle * (1.0 + 1e-12));
            prop_assert!(boosted.crlb_dist <= base.crlb_dist * (1.0 + 1e-12));
        }
    }
}
