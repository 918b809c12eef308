//! Physical-layer and propulsion models: free-space link budgets between the
//! UAV and ground nodes, and the rotary-wing power curve that caps how fast
//! the UAV may fly.
//!
//! Everything here is a pure function of its inputs; all powers are linear
//! watts, distances meters, rates bit/s.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// log2(e), the slope factor that appears when differentiating `log2(1 + a/t)`.
pub const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// Rotary-wing propulsion model coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModelParams {
    /// Mean rotor induced velocity in hover, s0 [m/s]
    pub hover_induced_speed: f64,
    /// Blade profile power in hover, P0 [W]
    pub blade_profile_power: f64,
    /// Rotor blade tip speed [m/s]
    pub tip_speed: f64,
    /// Induced power in hover, Pi [W]
    pub induced_power: f64,
    /// Fuselage drag ratio
    pub fuselage_drag_ratio: f64,
    /// Air density [kg/m^3]
    pub air_density: f64,
    /// Rotor solidity
    pub rotor_solidity: f64,
    /// Rotor disc area [m^2]
    pub rotor_disc_area: f64,
}

impl Default for PowerModelParams {
    /// Reference parameter set for a small rotary-wing UAV.
    fn default() -> Self {
        Self {
            hover_induced_speed: 5.4,
            blade_profile_power: 3.4,
            tip_speed: 60.0,
            induced_power: 118.0,
            fuselage_drag_ratio: 0.6,
            air_density: 1.225,
            rotor_solidity: 0.05,
            rotor_disc_area: 0.503,
        }
    }
}

impl PowerModelParams {
    /// Parasitic drag coefficient `0.5 * d1 * rho * s_r * A`, multiplying the
    /// cubed speed in the power curve.
    pub fn parasite_coeff(&self) -> f64 {
        0.5 * self.fuselage_drag_ratio
            * self.air_density
            * self.rotor_solidity
            * self.rotor_disc_area
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let fields = [
            ("power_model.hover_induced_speed_mps", self.hover_induced_speed),
            ("power_model.blade_profile_power_w", self.blade_profile_power),
            ("power_model.tip_speed_mps", self.tip_speed),
            ("power_model.induced_power_w", self.induced_power),
            ("power_model.fuselage_drag_ratio", self.fuselage_drag_ratio),
            ("power_model.air_density_kg_m3", self.air_density),
            ("power_model.rotor_solidity", self.rotor_solidity),
            ("power_model.rotor_disc_area_m2", self.rotor_disc_area),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(LinkError::NonPositiveParam { field: name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("{field} must be strictly positive, got {value}")]
    NonPositiveParam { field: &'static str, value: f64 },
}

/// 3-D distance between a vehicle at planar `p_v` and the UAV at planar `p_u`
/// flying at altitude `z`: never smaller than `z`.
pub fn uav_vehicle_distance(p_v: [f64; 2], p_u: [f64; 2], z: f64) -> f64 {
    let dx = p_v[0] - p_u[0];
    let dy = p_v[1] - p_u[1];
    (dx * dx + dy * dy + z * z).sqrt()
}

/// Free-space channel gain at distance `d` given the reference gain `d0`
/// (linear, at 1 m): `d0 / d^2`.
pub fn channel_gain(d: f64, d0: f64) -> f64 {
    d0 / (d * d)
}

/// Received SNR for transmit power `p`, reference gain `d0`, noise power
/// `noise` and distance `d`.
pub fn snr(p: f64, d0: f64, noise: f64, d: f64) -> f64 {
    p * d0 / (noise * d * d)
}

/// Shannon rate over a `kappa` share of bandwidth `b`:
/// `b * kappa * log2(1 + p*d0 / (noise * d^2))`. Zero share means zero rate.
pub fn instantaneous_rate(kappa: f64, b: f64, p: f64, d0: f64, noise: f64, d: f64) -> f64 {
    if kappa == 0.0 {
        return 0.0;
    }
    b * kappa * (1.0 + snr(p, d0, noise, d)).log2()
}

/// Analytic derivative of [`instantaneous_rate`] with respect to distance:
///
/// `dR/dd = -2 b kappa a / (ln2 * d^3 * (1 + a/d^2))` with `a = p*d0/noise`.
///
/// Strictly negative for any positive link parameters.
pub fn rate_distance_derivative(
    kappa: f64,
    b: f64,
    p: f64,
    d0: f64,
    noise: f64,
    d: f64,
) -> f64 {
    let a = p * d0 / noise;
    -2.0 * b * kappa * a / (std::f64::consts::LN_2 * d * d * d * (1.0 + a / (d * d)))
}

/// The induced-power factor `D(s) = (sqrt(1 + s^4/(4 s0^4)) - s^2/(2 s0^2))^(1/2)`.
///
/// Equals 1 at hover and decreases with speed. The radicand is nonnegative in
/// exact arithmetic (`sqrt(1 + v^2) >= v`); a tiny negative value can only
/// come from rounding and is clamped to zero with a diagnostic.
pub fn induced_power_factor(speed: f64, s0: f64) -> f64 {
    let v = speed * speed / (2.0 * s0 * s0);
    let inner = (1.0 + v * v).sqrt() - v;
    if inner < 0.0 {
        log::warn!("induced-power radicand {inner:.3e} clamped to 0 at speed {speed} m/s");
        return 0.0;
    }
    inner.sqrt()
}

/// Total UAV power draw at flight speed `speed`: communication power plus
/// blade-profile, induced, and parasitic propulsion terms.
pub fn propulsion_plus_comm_power(speed: f64, params: &PowerModelParams, comm_power: f64) -> f64 {
    let ut2 = params.tip_speed * params.tip_speed;
    let profile = params.blade_profile_power * (1.0 + 3.0 * speed * speed / ut2);
    let induced = params.induced_power * induced_power_factor(speed, params.hover_induced_speed);
    let parasite = params.parasite_coeff() * speed * speed * speed;
    comm_power + profile + induced + parasite
}

/// Largest speed in `[0, s_max]` whose total power stays within `budget`.
///
/// The power curve dips below its hover value at moderate speed and then grows
/// without bound, so the cap is found by bisecting the increasing branch.
/// Returns `s_max` when the whole range fits the budget and 0 when even the
/// cheapest speed exceeds it.
pub fn max_speed_within_power(
    params: &PowerModelParams,
    comm_power: f64,
    budget: f64,
    s_max: f64,
) -> f64 {
    let power = |s: f64| propulsion_plus_comm_power(s, params, comm_power);
    if power(s_max) <= budget {
        return s_max;
    }
    // coarse scan for the power-minimizing speed
    let mut s_min_pow = 0.0;
    let mut best = power(0.0);
    let steps = 200;
    for k in 1..=steps {
        let s = s_max * k as f64 / steps as f64;
        let p = power(s);
        if p < best {
            best = p;
            s_min_pow = s;
        }
    }
    if best > budget {
        return 0.0;
    }
    let (mut lo, mut hi) = (s_min_pow, s_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if power(mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// 3-D distance from the UAV (planar `p_u`, altitude `z`) to the base station.
pub fn backhaul_distance(p_u: [f64; 2], z: f64, bs: [f64; 3]) -> f64 {
    let dx = bs[0] - p_u[0];
    let dy = bs[1] - p_u[1];
    let dz = bs[2] - z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Capacity of the base-station-to-UAV feed:
/// `b_bh * log2(1 + p_bs*d0 / (noise_uav * d_B^2))`.
pub fn backhaul_capacity(
    p_u: [f64; 2],
    z: f64,
    bs: [f64; 3],
    b_bh: f64,
    p_bs: f64,
    d0: f64,
    noise_uav: f64,
) -> f64 {
    let d = backhaul_distance(p_u, z, bs);
    b_bh * (1.0 + p_bs * d0 / (noise_uav * d * d)).log2()
}

/// UAV flight path: planar waypoints per slot (entry 0 is the start position)
/// at a fixed altitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Waypoints `[x, y]` in meters, indexed by slot `0..=J`.
    pub xy: Vec<[f64; 2]>,
    /// Flight altitude [m].
    pub altitude: f64,
}

impl Trajectory {
    /// Stationary trajectory pinned at `point` for `slots` slots.
    pub fn hover(point: [f64; 2], altitude: f64, slots: usize) -> Self {
        Self { xy: vec![point; slots + 1], altitude }
    }

    /// Number of flight slots J (waypoints minus the start).
    pub fn slot_count(&self) -> usize {
        self.xy.len().saturating_sub(1)
    }

    /// Per-slot speeds `|xy[j] - xy[j-1]| / slot_len` for `j = 1..=J`.
    pub fn speed_profile(&self, slot_len: f64) -> Vec<f64> {
        uav_speed_profile(self, slot_len)
    }

    /// Checks the mobility and box constraints; `expected_start`, when given,
    /// additionally pins waypoint 0.
    pub fn validate(
        &self,
        road_length: f64,
        road_width: f64,
        max_speed: f64,
        slot_len: f64,
        expected_start: Option<[f64; 2]>,
    ) -> Result<(), String> {
        if let Some(start) = expected_start {
            if self.xy[0] != start {
                return Err(format!(
                    "trajectory start {:?} does not match required start {:?}",
                    self.xy[0], start
                ));
            }
        }
        let step_cap = max_speed * slot_len * (1.0 + 1e-9);
        for (j, w) in self.xy.iter().enumerate() {
            if w[0] < -1e-9 || w[0] > road_length + 1e-9 || w[1] < -1e-9 || w[1] > road_width + 1e-9
            {
                return Err(format!("waypoint {j} {:?} outside the road box", w));
            }
            if j > 0 {
                let prev = self.xy[j - 1];
                let step = ((w[0] - prev[0]).powi(2) + (w[1] - prev[1]).powi(2)).sqrt();
                if step > step_cap {
                    return Err(format!(
                        "step into slot {j} is {step:.3} m, above the {:.3} m mobility limit",
                        max_speed * slot_len
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-slot UAV speeds from consecutive waypoint displacements.
pub fn uav_speed_profile(traj: &Trajectory, slot_len: f64) -> Vec<f64> {
    traj.xy
        .windows(2)
        .map(|w| {
            let dx = w[1][0] - w[0][0];
            let dy = w[1][1] - w[0][1];
            (dx * dx + dy * dy).sqrt() / slot_len
        })
        .collect()
}
