//! Road-parallel vehicle motion and noisy channel histories.
//!
//! The roadside unit sits at the origin with its array along the x axis.
//! Vehicles drive parallel to the road in the -x direction, so one slot of
//! length `ΔT` at speed `v` moves a vehicle by `vΔT` and updates range and
//! angle by
//!
//! ```text
//! d_n^2 = d_{n-1}^2 + (vΔT)^2 - 2 d_{n-1} vΔT cos θ_{n-1}
//! θ_n   = θ_{n-1} + asin(vΔT sin θ_{n-1} / d_n)
//! ```
//!
//! Speeds are redrawn uniformly from `[speed_min, speed_max]` every slot.
//! The radial speed is the projection `v cos θ` of the road-parallel motion
//! onto the line of sight.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::math;
use crate::params::SystemParams;
use crate::system::{channel_vector, ChannelSnapshot, ComplexColumns};

/// Tolerance on the arcsine argument before it is treated as a domain error.
pub const ASIN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VehicleState {
    /// Angle between the vehicle and the array axis, in (0, π).
    pub theta: f64,
    pub dist: f64,
    pub speed: f64,
    pub radial_speed: f64,
    pub pos_xy: (f64, f64),
}

/// Radial speed `v cos θ`.
pub fn radial_velocity(s: &VehicleState) -> f64 {
    s.speed * math::cos(s.theta)
}

impl VehicleState {
    /// State of a vehicle at `pos` (relative to the roadside unit) moving at `speed`.
    pub fn at_position(pos: (f64, f64), speed: f64) -> Result<Self> {
        let (x, y) = pos;
        let dist = math::hypot(x, y);
        if !(dist > 0.0) || !dist.is_finite() {
            return Err(invalid(format!("degenerate vehicle position ({x}, {y})")));
        }
        // Only cos θ enters the array response, so positions below the axis are
        // folded onto the upper half plane.
        let theta = math::atan2(math::abs(y), x);
        if !(theta > 0.0 && theta < PI) {
            return Err(invalid(format!(
                "vehicle at ({x}, {y}) lies on the array axis"
            )));
        }
        let mut s = Self {
            theta,
            dist,
            speed,
            radial_speed: 0.0,
            pos_xy: pos,
        };
        s.radial_speed = radial_velocity(&s);
        Ok(s)
    }
}

/// Draws initial states around `mean_positions` with unit Gaussian jitter per axis.
pub fn init_scenario<R: Rng + ?Sized>(
    p: &SystemParams,
    mean_positions: &[(f64, f64)],
    rng: &mut R,
) -> Result<Vec<VehicleState>> {
    if mean_positions.iter().any(|&(_, y)| y == 0.0) {
        return Err(invalid("mean positions must be off the array axis"));
    }
    mean_positions
        .iter()
        .map(|&(mx, my)| {
            let dx: f64 = StandardNormal.sample(rng);
            let dy: f64 = StandardNormal.sample(rng);
            let v = draw_speed(p, rng);
            VehicleState::at_position((mx + dx, my + dy), v)
        })
        .collect()
}

fn draw_speed<R: Rng + ?Sized>(p: &SystemParams, rng: &mut R) -> f64 {
    if p.speed_min_mps == p.speed_max_mps {
        p.speed_min_mps
    } else {
        rng.random_range(p.speed_min_mps..=p.speed_max_mps)
    }
}

/// Moves `s` one slot using its current speed; the new state carries `next_speed`.
pub fn step_with_speed(s: &VehicleState, next_speed: f64, p: &SystemParams) -> Result<VehicleState> {
    let travel = s.speed * p.slot_s;
    let d2 = s.dist * s.dist + travel * travel - 2.0 * s.dist * travel * math::cos(s.theta);
    let dist = math::sqrt(d2.max(0.0));
    if !(dist > 0.0) {
        return Err(Error::NumericalDomain(format!(
            "vehicle reached the array (d = {dist})"
        )));
    }
    let mut arg = travel * math::sin(s.theta) / dist;
    if math::abs(arg) > 1.0 + ASIN_TOLERANCE || !arg.is_finite() {
        return Err(Error::NumericalDomain(format!(
            "arcsine argument {arg} outside [-1, 1]"
        )));
    }
    arg = arg.clamp(-1.0, 1.0);
    let theta = s.theta + math::asin(arg);
    let mut next = VehicleState {
        theta,
        dist,
        speed: next_speed,
        radial_speed: 0.0,
        pos_xy: (s.pos_xy.0 - travel, s.pos_xy.1),
    };
    next.radial_speed = radial_velocity(&next);
    Ok(next)
}

/// One slot of motion with a freshly drawn speed for the next slot.
pub fn step<R: Rng + ?Sized>(s: &VehicleState, p: &SystemParams, rng: &mut R) -> Result<VehicleState> {
    let v = draw_speed(p, rng);
    step_with_speed(s, v, p)
}

/// True states over slots `n - τ ..= n`, indexed `[slot][vehicle]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrajectoryWindow {
    pub states: Vec<Vec<VehicleState>>,
}

impl TrajectoryWindow {
    pub fn n_slots(&self) -> usize {
        self.states.len()
    }

    /// States at the prediction slot `n`.
    pub fn current(&self) -> &[VehicleState] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Largest relative residual of the range/angle recursion across the window.
    pub fn recursion_residual(&self, p: &SystemParams) -> f64 {
        let mut worst: f64 = 0.0;
        for pair in self.states.windows(2) {
            for (a, b) in pair[0].iter().zip(&pair[1]) {
                let travel = a.speed * p.slot_s;
                let d2 = a.dist * a.dist + travel * travel
                    - 2.0 * a.dist * travel * math::cos(a.theta);
                let r1 = math::abs(b.dist * b.dist - d2) / d2;
                let r2 = math::abs(
                    math::sin(b.theta - a.theta) * b.dist - travel * math::sin(a.theta),
                ) / b.dist;
                worst = worst.max(r1).max(r2);
            }
        }
        worst
    }
}

/// Builds `τ + 1` consecutive slots starting from a random initial scenario.
pub fn simulate_window<R: Rng + ?Sized>(
    p: &SystemParams,
    mean_positions: &[(f64, f64)],
    rng: &mut R,
) -> Result<TrajectoryWindow> {
    let mut states = Vec::with_capacity(p.history_len + 1);
    states.push(init_scenario(p, mean_positions, rng)?);
    for _ in 0..p.history_len {
        let prev = states.last().expect("window is non-empty");
        let next = prev
            .iter()
            .map(|s| step(s, p, rng))
            .collect::<Result<Vec<_>>>()?;
        states.push(next);
    }
    Ok(TrajectoryWindow { states })
}

/// Channel snapshot built from a list of (angle, distance) pairs.
pub fn snapshot_from_geometry(
    geometry: impl IntoIterator<Item = (f64, f64)>,
    p: &SystemParams,
    slot_index: i64,
) -> Result<ChannelSnapshot> {
    let cols = geometry
        .into_iter()
        .map(|(theta, d)| channel_vector(theta, d, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelSnapshot {
        entries: ComplexColumns::from_columns(&cols)?,
        slot_index,
    })
}

/// True channel of the given states.
pub fn true_snapshot(states: &[VehicleState], p: &SystemParams, slot_index: i64) -> Result<ChannelSnapshot> {
    snapshot_from_geometry(states.iter().map(|s| (s.theta, s.dist)), p, slot_index)
}

/// Estimated channels `Ω` of slots `n - τ .. n - 1`, oldest first.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EstimatedHistory {
    pub snapshots: Vec<ChannelSnapshot>,
    pub nmse_applied: f64,
}

impl EstimatedHistory {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Most recent estimate (slot `n - 1`).
    pub fn latest(&self) -> Option<&ChannelSnapshot> {
        self.snapshots.last()
    }
}

/// Perturbs the first `τ` slots of `w` with multiplicative Gaussian errors of
/// variance `history_nmse` on angle and distance, and rebuilds their channels.
pub fn perturb_history<R: Rng + ?Sized>(
    w: &TrajectoryWindow,
    p: &SystemParams,
    rng: &mut R,
) -> Result<EstimatedHistory> {
    if !(p.history_nmse >= 0.0) {
        return Err(invalid("history NMSE must be non-negative"));
    }
    let n_hist = w.n_slots().saturating_sub(1);
    let sd = math::sqrt(p.history_nmse);
    let mut snapshots = Vec::with_capacity(n_hist);
    for (l, slot) in w.states[..n_hist].iter().enumerate() {
        let mut geometry = Vec::with_capacity(slot.len());
        for s in slot {
            let e_theta: f64 = StandardNormal.sample(rng);
            let theta = s.theta * (1.0 + sd * e_theta);
            // A non-positive range estimate has no channel; redraw it.
            let dist = loop {
                let e_d: f64 = StandardNormal.sample(rng);
                let d = s.dist * (1.0 + sd * e_d);
                if d > 0.0 {
                    break d;
                }
            };
            geometry.push((theta, dist));
        }
        snapshots.push(snapshot_from_geometry(geometry, p, l as i64)?);
    }
    Ok(EstimatedHistory {
        snapshots,
        nmse_applied: p.history_nmse,
    })
}
