//! Array response, LoS channel model and downlink rate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::math;
use crate::params::SystemParams;

/// `Σ conj(a_m) b_m`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// Complex `n_tx x n_vehicles` matrix stored column by column.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComplexColumns {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl ComplexColumns {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_columns(columns: &[Vec<Complex64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(invalid("columns differ in length"));
        }
        Ok(Self {
            rows,
            cols: columns.len(),
            data: columns.iter().flatten().copied().collect(),
        })
    }

    pub fn column(&self, k: usize) -> &[Complex64] {
        &self.data[k * self.rows..(k + 1) * self.rows]
    }

    pub fn column_mut(&mut self, k: usize) -> &mut [Complex64] {
        &mut self.data[k * self.rows..(k + 1) * self.rows]
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[col * self.rows + row]
    }

    pub fn frobenius_sqr(&self) -> f64 {
        norm_sqr(&self.data)
    }
}

/// Channel matrix of one slot; column `k` is the equivalent channel of vehicle `k`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelSnapshot {
    pub entries: ComplexColumns,
    pub slot_index: i64,
}

impl ChannelSnapshot {
    pub fn n_tx(&self) -> usize {
        self.entries.rows
    }

    pub fn n_vehicles(&self) -> usize {
        self.entries.cols
    }

    pub fn column(&self, k: usize) -> &[Complex64] {
        self.entries.column(k)
    }
}

/// Downlink precoder `W`; column `k` serves vehicle `k`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BeamformingMatrix {
    entries: ComplexColumns,
    power_used_w: f64,
}

impl BeamformingMatrix {
    pub fn new(entries: ComplexColumns) -> Self {
        let power_used_w = entries.frobenius_sqr();
        Self {
            entries,
            power_used_w,
        }
    }

    pub fn zeros(n_tx: usize, n_vehicles: usize) -> Self {
        Self::new(ComplexColumns::zeros(n_tx, n_vehicles))
    }

    pub fn from_columns(columns: &[Vec<Complex64>]) -> Result<Self> {
        ComplexColumns::from_columns(columns).map(Self::new)
    }

    pub fn entries(&self) -> &ComplexColumns {
        &self.entries
    }

    pub fn column(&self, k: usize) -> &[Complex64] {
        self.entries.column(k)
    }

    pub fn n_tx(&self) -> usize {
        self.entries.rows
    }

    pub fn n_vehicles(&self) -> usize {
        self.entries.cols
    }

    /// Squared Frobenius norm, i.e. total transmit power in watts.
    pub fn power_used_w(&self) -> f64 {
        self.power_used_w
    }

    /// Multiplies every entry by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut e = self.entries.clone();
        e.data.iter_mut().for_each(|x| *x *= s);
        Self::new(e)
    }

    /// Scales `W` onto the power ball `||W||_F^2 <= budget` when it lies outside.
    pub fn project_to_power(&self, budget_w: f64) -> Self {
        if self.power_used_w > budget_w {
            let mut w = self.scaled(math::sqrt(budget_w / self.power_used_w));
            // Rounding can leave the rescaled power a few ulps above the budget.
            while w.power_used_w > budget_w {
                w = w.scaled(1.0 - f64::EPSILON);
            }
            w
        } else {
            self.clone()
        }
    }
}

/// ULA response `a(θ)`: entry `m` is `exp(-jπ m cos θ) / sqrt(n)`.
pub fn steering_vector(theta: f64, n: usize) -> Result<Vec<Complex64>> {
    if n == 0 {
        return Err(invalid("steering vector length must be positive"));
    }
    if !theta.is_finite() {
        return Err(invalid(format!("non-finite angle {theta}")));
    }
    let scale = 1.0 / math::sqrt(n as f64);
    let c = math::cos(theta);
    Ok((0..n)
        .map(|m| Complex64::from_polar(scale, -PI * m as f64 * c))
        .collect())
}

/// Linear path gain `α0 (d/d0)^(-ζ)`.
pub fn path_loss(d: f64, p: &SystemParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(invalid(format!("distance must be > 0, got {d}")));
    }
    Ok(p.pathloss_ref * math::powf(d / p.ref_dist_m, -p.pathloss_exp))
}

/// Echo reflection coefficient `ϱ / (2d)`.
pub fn reflection_coeff(d: f64, p: &SystemParams) -> Result<Complex64> {
    if !(d > 0.0) {
        return Err(invalid(format!("distance must be > 0, got {d}")));
    }
    Ok(p.rcs_coeff / (2.0 * d))
}

/// Equivalent LoS channel `sqrt(Nt α(d)) a(θ)`.
pub fn channel_vector(theta: f64, d: f64, p: &SystemParams) -> Result<Vec<Complex64>> {
    let gain = math::sqrt(p.n_tx as f64 * path_loss(d, p)?);
    let mut a = steering_vector(theta, p.n_tx)?;
    a.iter_mut().for_each(|x| *x *= gain);
    Ok(a)
}

fn check_shapes(h: &ChannelSnapshot, w: &BeamformingMatrix) -> Result<()> {
    if h.n_tx() != w.n_tx() || h.n_vehicles() != w.n_vehicles() {
        return Err(Error::ShapeMismatch {
            op: "sinr",
            lhs: vec![h.n_tx(), h.n_vehicles()],
            rhs: vec![w.n_tx(), w.n_vehicles()],
        });
    }
    Ok(())
}

/// Downlink SINR of vehicle `k` with the other beams as interference.
pub fn sinr(h: &ChannelSnapshot, w: &BeamformingMatrix, k: usize, p: &SystemParams) -> Result<f64> {
    check_shapes(h, w)?;
    if k >= h.n_vehicles() {
        return Err(invalid(format!("vehicle index {k} out of range")));
    }
    let hk = h.column(k);
    let mut signal = 0.0;
    let mut interference = 0.0;
    for j in 0..w.n_vehicles() {
        let g = inner(hk, w.column(j)).norm_sqr();
        if j == k {
            signal = g;
        } else {
            interference += g;
        }
    }
    Ok(signal / (interference + p.noise_rx(k)))
}

/// `Σ_k log2(1 + SINR_k)` in bits/s/Hz.
pub fn sum_rate(h: &ChannelSnapshot, w: &BeamformingMatrix, p: &SystemParams) -> Result<f64> {
    check_shapes(h, w)?;
    (0..h.n_vehicles()).try_fold(0.0, |acc, k| Ok(acc + math::log2(1.0 + sinr(h, w, k, p)?)))
}
