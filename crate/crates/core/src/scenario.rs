//! Problem instances: road geometry, time discretization, vehicle tracks, and
//! every link/power parameter the planner needs.
//!
//! A [`ScenarioSpec`] is a reusable template (vehicles given either as
//! explicit tracks or as a seeded sampler); [`ScenarioSpec::instantiate`]
//! produces the immutable [`ScenarioConfig`] the solvers consume. Experiment
//! drivers re-instantiate one spec under many seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::link::PowerModelParams;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse scenario file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("no normal-speed vehicles: the max-min objective is undefined")]
    NoNormalVehicles,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), message: message.into() }
}

/// Vehicle classification by speed relative to the legal limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleClass {
    /// Speed strictly above the limit; owed an instantaneous rate floor.
    HighSpeed,
    /// At or below the limit; shares the max-min average-rate objective.
    Normal,
}

/// One vehicle's kinematics over the whole flight window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrack {
    /// Constant speed [m/s].
    pub speed: f64,
    /// Lane y-coordinate [m].
    pub lane_y: f64,
    /// Position along the road per slot, indexed `0..=J` [m].
    pub x_positions: Vec<f64>,
    /// Whether the vehicle is inside the served road section, per slot `0..=J`.
    pub present: Vec<bool>,
    pub class: VehicleClass,
    /// Per-vehicle rate-floor override [bit/s]; `None` uses the scenario floor.
    pub rate_floor: Option<f64>,
}

impl VehicleTrack {
    /// Builds a track from initial position and constant speed.
    pub fn from_kinematics(
        initial_x: f64,
        speed: f64,
        lane_y: f64,
        speed_limit: f64,
        slot_count: usize,
        slot_len: f64,
        road_length: f64,
        rate_floor: Option<f64>,
    ) -> Self {
        let mut x_positions = Vec::with_capacity(slot_count + 1);
        x_positions.push(initial_x);
        x_positions.extend(propagate_positions(initial_x, speed, slot_len, slot_count));
        let present = presence_mask(&x_positions, road_length);
        let class = if speed > speed_limit { VehicleClass::HighSpeed } else { VehicleClass::Normal };
        Self { speed, lane_y, x_positions, present, class, rate_floor }
    }

    /// Planar position at slot `j`.
    pub fn position(&self, j: usize) -> [f64; 2] {
        [self.x_positions[j], self.lane_y]
    }

    /// Number of slots in `1..=J` the vehicle spends inside the road section.
    pub fn presence_count(&self) -> usize {
        self.present.iter().skip(1).filter(|&&p| p).count()
    }
}

/// Iteration controls shared by the convex solver and both outer loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative objective-improvement threshold terminating both the
    /// bandwidth/trajectory alternation and the inner trajectory loop.
    pub convergence_eps: f64,
    /// Cap on alternation rounds.
    pub max_outer_iterations: usize,
    /// Cap on convexified trajectory re-expansions per alternation round.
    pub max_sca_iterations: usize,
    /// Duality-gap surrogate target for the interior-point solver.
    pub gap_tol: f64,
    /// Feasibility tolerance for labeling a point optimal.
    pub feas_tol: f64,
    /// Total Newton-step budget per convex solve.
    pub max_newton_steps: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            convergence_eps: 1e-4,
            max_outer_iterations: 20,
            max_sca_iterations: 50,
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            max_newton_steps: 4000,
        }
    }
}

/// Fully resolved, immutable problem instance.
///
/// All powers are linear watts (dBm fields from scenario files are converted
/// at load time), distances meters, rates bit/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Served road length E_x [m].
    pub road_length: f64,
    /// Road width E_y [m].
    pub road_width: f64,
    /// Flight duration T_D [s]; equals `slot_count * slot_len`.
    pub flight_duration: f64,
    /// Number of slots J.
    pub slot_count: usize,
    /// Slot length [s].
    pub slot_len: f64,
    /// UAV altitude z [m].
    pub uav_altitude: f64,
    /// UAV start position (slot 0) [m].
    pub uav_start: [f64; 2],
    /// UAV maximum speed S_U [m/s].
    pub uav_max_speed: f64,
    /// Per-slot UAV power budget P_U [W].
    pub power_budget: f64,
    /// Transmit power toward each vehicle p [W].
    pub comm_power_per_vehicle: f64,
    /// Total communication power P = p * V [W].
    pub total_comm_power: f64,
    /// Access bandwidth B [Hz].
    pub bandwidth: f64,
    /// Backhaul bandwidth B_BH [Hz].
    pub backhaul_bandwidth: f64,
    /// Base-station position (may lie outside the road box) [m].
    pub bs_position: [f64; 3],
    /// Base-station transmit power [W].
    pub bs_power: f64,
    /// Noise power at each vehicle [W].
    pub noise_vehicle: f64,
    /// Noise power at the UAV [W].
    pub noise_uav: f64,
    /// Linear channel gain at 1 m, d0.
    pub reference_gain: f64,
    /// Instantaneous rate floor for high-speed vehicles [bit/s].
    pub rate_floor: f64,
    /// Legal speed limit S_V separating the two vehicle classes [m/s].
    pub speed_limit: f64,
    /// Vehicle speed bounds (min_s, max_s) [m/s].
    pub speed_bounds: (f64, f64),
    /// Convergence threshold for the alternating optimization.
    pub convergence_eps: f64,
    pub power_model: PowerModelParams,
    pub solver: SolverSettings,
    pub vehicles: Vec<VehicleTrack>,
}

impl ScenarioConfig {
    /// Indices of high-speed vehicles.
    pub fn high_speed_indices(&self) -> Vec<usize> {
        self.vehicles
            .iter()
            .enumerate()
            .filter(|(_, v)| v.class == VehicleClass::HighSpeed)
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices of normal-speed vehicles.
    pub fn normal_indices(&self) -> Vec<usize> {
        self.vehicles
            .iter()
            .enumerate()
            .filter(|(_, v)| v.class == VehicleClass::Normal)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn vehicle_count(&self) -> usize {
        self.vehicles.len()
    }

    /// Whether vehicle `v` is inside the road section at slot `j`.
    pub fn present(&self, v: usize, j: usize) -> bool {
        self.vehicles[v].present[j]
    }

    /// Number of vehicles present at slot `j`.
    pub fn presence_count(&self, j: usize) -> usize {
        self.vehicles.iter().filter(|t| t.present[j]).count()
    }

    /// Rate floor applying to vehicle `v` [bit/s].
    pub fn vehicle_floor(&self, v: usize) -> f64 {
        self.vehicles[v].rate_floor.unwrap_or(self.rate_floor)
    }

    /// Access-link SNR numerator `p * d0 / sigma^2` [m^2].
    pub fn access_snr_factor(&self) -> f64 {
        self.comm_power_per_vehicle * self.reference_gain / self.noise_vehicle
    }

    /// Backhaul SNR numerator `P_bs * d0 / sigma_B^2` [m^2].
    pub fn backhaul_snr_factor(&self) -> f64 {
        self.bs_power * self.reference_gain / self.noise_uav
    }

    /// Largest per-slot rate any vehicle could see (full bandwidth, directly
    /// under the UAV); a safe upper bound for the max-min objective.
    pub fn rate_upper_bound(&self) -> f64 {
        let z2 = self.uav_altitude * self.uav_altitude;
        self.bandwidth * (1.0 + self.access_snr_factor() / z2).log2()
    }

    /// Checks every structural invariant, naming the offending field.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = [
            ("road.length_m", self.road_length),
            ("road.width_m", self.road_width),
            ("time.flight_duration_s", self.flight_duration),
            ("time.slot_len_s", self.slot_len),
            ("uav.altitude_m", self.uav_altitude),
            ("uav.max_speed_mps", self.uav_max_speed),
            ("uav.power_budget", self.power_budget),
            ("uav.comm_power_per_vehicle", self.comm_power_per_vehicle),
            ("link.bandwidth_hz", self.bandwidth),
            ("link.backhaul_bandwidth_hz", self.backhaul_bandwidth),
            ("bs.power", self.bs_power),
            ("link.noise_vehicle", self.noise_vehicle),
            ("link.noise_uav", self.noise_uav),
            ("link.reference_gain", self.reference_gain),
            ("vehicles.speed_limit_mps", self.speed_limit),
            ("solver.convergence_eps", self.convergence_eps),
        ];
        for (field, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(invalid(field, format!("must be strictly positive, got {value}")));
            }
        }
        if self.rate_floor < 0.0 {
            return Err(invalid("link.rate_floor_bps", "must be nonnegative"));
        }
        if self.slot_count == 0 {
            return Err(invalid("time.slot_count", "must be at least 1"));
        }
        let td = self.slot_count as f64 * self.slot_len;
        if (td - self.flight_duration).abs() > 1e-9 * self.flight_duration.max(1.0) {
            return Err(invalid(
                "time",
                format!(
                    "flight_duration_s ({}) must equal slot_count * slot_len_s ({} * {} = {td})",
                    self.flight_duration, self.slot_count, self.slot_len
                ),
            ));
        }
        let (min_s, max_s) = self.speed_bounds;
        if !(min_s <= max_s) {
            return Err(invalid(
                "vehicles",
                format!("min_speed_mps ({min_s}) must not exceed max_speed_mps ({max_s})"),
            ));
        }
        if self.uav_start[0] < 0.0
            || self.uav_start[0] > self.road_length
            || self.uav_start[1] < 0.0
            || self.uav_start[1] > self.road_width
        {
            return Err(invalid(
                "uav.start_xy_m",
                format!("{:?} lies outside the road box", self.uav_start),
            ));
        }
        let expected_total = self.comm_power_per_vehicle * self.vehicle_count() as f64;
        if (self.total_comm_power - expected_total).abs() > 1e-9 * expected_total.max(1e-12) {
            return Err(invalid(
                "uav.comm_power_per_vehicle",
                format!(
                    "total_comm_power {} inconsistent with p * V = {expected_total}",
                    self.total_comm_power
                ),
            ));
        }
        self.power_model
            .validate()
            .map_err(|e| invalid("power_model", e.to_string()))?;
        for (i, track) in self.vehicles.iter().enumerate() {
            let field = format!("vehicles[{i}]");
            if track.x_positions.len() != self.slot_count + 1
                || track.present.len() != self.slot_count + 1
            {
                return Err(invalid(field, "track length must be slot_count + 1"));
            }
            if track.speed < min_s || track.speed > max_s {
                return Err(invalid(
                    field,
                    format!("speed {} outside bounds [{min_s}, {max_s}]", track.speed),
                ));
            }
            let expect_class = if track.speed > self.speed_limit {
                VehicleClass::HighSpeed
            } else {
                VehicleClass::Normal
            };
            if track.class != expect_class {
                return Err(invalid(field, "class inconsistent with speed vs. the limit"));
            }
            for j in 1..=self.slot_count {
                let expect = track.x_positions[0] + j as f64 * track.speed * self.slot_len;
                if (track.x_positions[j] - expect).abs() > 1e-6 * expect.abs().max(1.0) {
                    return Err(invalid(field, format!("position at slot {j} breaks the kinematic recursion")));
                }
                let inside = track.x_positions[j] >= 0.0 && track.x_positions[j] <= self.road_length;
                if track.present[j] != inside {
                    return Err(invalid(field, format!("presence flag at slot {j} inconsistent")));
                }
            }
            if let Some(floor) = track.rate_floor {
                if floor < 0.0 {
                    return Err(invalid(field, "rate_floor_bps must be nonnegative"));
                }
            }
        }
        if self.normal_indices().is_empty() {
            return Err(ScenarioError::NoNormalVehicles);
        }
        Ok(())
    }
}

/// Draws `count` i.i.d. samples from a Gaussian truncated to `[min_s, max_s]`,
/// deterministically for a given seed.
pub fn sample_speeds(
    count: usize,
    min_s: f64,
    max_s: f64,
    mean: f64,
    stddev: f64,
    seed: u64,
) -> Result<Vec<f64>, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_speeds_with_rng(count, min_s, max_s, mean, stddev, &mut rng)
}

/// [`sample_speeds`] drawing from a caller-owned stream, so one seed can feed
/// several truncation windows in a fixed order.
pub fn sample_speeds_with_rng(
    count: usize,
    min_s: f64,
    max_s: f64,
    mean: f64,
    stddev: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, ScenarioError> {
    if !(min_s <= max_s) {
        return Err(invalid("sampler", format!("empty speed interval [{min_s}, {max_s}]")));
    }
    if stddev < 0.0 {
        return Err(invalid("sampler.stddev_mps", "must be nonnegative"));
    }
    if stddev == 0.0 {
        if mean < min_s || mean > max_s {
            return Err(invalid(
                "sampler",
                format!("degenerate distribution at {mean} lies outside [{min_s}, {max_s}]"),
            ));
        }
        return Ok(vec![mean; count]);
    }
    if min_s == max_s {
        return Ok(vec![min_s; count]);
    }
    let normal = Normal::new(mean, stddev)
        .map_err(|e| invalid("sampler", format!("bad truncated-normal parameters: {e}")))?;
    let lo = normal.cdf(min_s);
    let hi = normal.cdf(max_s);
    let samples = (0..count)
        .map(|_| {
            let u: f64 = rng.gen();
            let p = lo + u * (hi - lo);
            // inverse-CDF sampling: exact truncation, no rejection loop
            normal.inverse_cdf(p).clamp(min_s, max_s)
        })
        .collect();
    Ok(samples)
}

/// Splits vehicle indices into (high-speed, normal) by strict comparison with
/// the limit. Logs a warning when the normal set comes out empty, since the
/// max-min objective is undefined there; the caller decides whether to fail.
pub fn classify_vehicles(speeds: &[f64], speed_limit: f64) -> (Vec<usize>, Vec<usize>) {
    let mut high = Vec::new();
    let mut normal = Vec::new();
    for (i, &s) in speeds.iter().enumerate() {
        if s > speed_limit {
            high.push(i);
        } else {
            normal.push(i);
        }
    }
    if normal.is_empty() {
        log::warn!("all {} vehicles are high-speed; the max-min objective is undefined", speeds.len());
    }
    (high, normal)
}

/// Positions for slots `1..=slots` under constant speed: `x0 + j * speed * slot_len`.
pub fn propagate_positions(x0: f64, speed: f64, slot_len: f64, slots: usize) -> Vec<f64> {
    (1..=slots).map(|j| x0 + j as f64 * speed * slot_len).collect()
}

/// Presence flags: inside the road section means `0 <= x <= road_length`.
pub fn presence_mask(x_positions: &[f64], road_length: f64) -> Vec<bool> {
    x_positions.iter().map(|&x| (0.0..=road_length).contains(&x)).collect()
}

/// Explicit vehicle description in a template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub speed: f64,
    pub lane_y: f64,
    pub initial_x: f64,
    pub rate_floor: Option<f64>,
}

/// Seeded vehicle generator: class counts are hit exactly by sampling each
/// class from its own truncation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub seed: u64,
    pub normal_count: usize,
    pub high_speed_count: usize,
    /// Truncated-normal location [m/s].
    pub mean: f64,
    /// Truncated-normal scale [m/s].
    pub stddev: f64,
    /// Initial positions drawn uniformly from `[0, initial_x_max]` [m].
    pub initial_x_max: f64,
    /// Lane count; vehicle `i` takes lane `i % lanes`.
    pub lanes: usize,
    /// Optional per-high-speed-vehicle speed windows `(lo, hi]`, e.g. to pin
    /// one vehicle above 38 m/s in rate-floor sweeps.
    pub high_speed_ranges: Option<Vec<(f64, f64)>>,
    /// Rate-floor override applied to the fastest sampled vehicle.
    pub fastest_rate_floor: Option<f64>,
}

/// Where a template's vehicles come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VehicleSource {
    Tracks(Vec<TrackSpec>),
    Sampler(SamplerSettings),
}

/// Reusable scenario template: everything but the realized vehicle tracks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub road_length: f64,
    pub road_width: f64,
    pub flight_duration: f64,
    pub slot_count: usize,
    pub slot_len: f64,
    pub uav_altitude: f64,
    pub uav_start: [f64; 2],
    pub uav_max_speed: f64,
    pub power_budget: f64,
    pub comm_power_per_vehicle: f64,
    pub bandwidth: f64,
    pub backhaul_bandwidth: f64,
    pub bs_position: [f64; 3],
    pub bs_power: f64,
    pub noise_vehicle: f64,
    pub noise_uav: f64,
    pub reference_gain: f64,
    pub rate_floor: f64,
    pub speed_limit: f64,
    pub speed_bounds: (f64, f64),
    pub convergence_eps: f64,
    pub power_model: PowerModelParams,
    pub solver: SolverSettings,
    pub vehicles: VehicleSource,
}

impl ScenarioSpec {
    /// Realizes the template into a validated instance. `seed_override`
    /// replaces the sampler seed (ignored for explicit tracks).
    pub fn instantiate(&self, seed_override: Option<u64>) -> Result<ScenarioConfig, ScenarioError> {
        let tracks = match &self.vehicles {
            VehicleSource::Tracks(specs) => specs
                .iter()
                .map(|t| {
                    VehicleTrack::from_kinematics(
                        t.initial_x,
                        t.speed,
                        t.lane_y,
                        self.speed_limit,
                        self.slot_count,
                        self.slot_len,
                        self.road_length,
                        t.rate_floor,
                    )
                })
                .collect(),
            VehicleSource::Sampler(sampler) => self.sample_tracks(sampler, seed_override)?,
        };
        let config = ScenarioConfig {
            road_length: self.road_length,
            road_width: self.road_width,
            flight_duration: self.flight_duration,
            slot_count: self.slot_count,
            slot_len: self.slot_len,
            uav_altitude: self.uav_altitude,
            uav_start: self.uav_start,
            uav_max_speed: self.uav_max_speed,
            power_budget: self.power_budget,
            comm_power_per_vehicle: self.comm_power_per_vehicle,
            total_comm_power: self.comm_power_per_vehicle * tracks.len() as f64,
            bandwidth: self.bandwidth,
            backhaul_bandwidth: self.backhaul_bandwidth,
            bs_position: self.bs_position,
            bs_power: self.bs_power,
            noise_vehicle: self.noise_vehicle,
            noise_uav: self.noise_uav,
            reference_gain: self.reference_gain,
            rate_floor: self.rate_floor,
            speed_limit: self.speed_limit,
            speed_bounds: self.speed_bounds,
            convergence_eps: self.convergence_eps,
            power_model: self.power_model,
            solver: self.solver,
            vehicles: tracks,
        };
        config.validate()?;
        Ok(config)
    }

    fn sample_tracks(
        &self,
        sampler: &SamplerSettings,
        seed_override: Option<u64>,
    ) -> Result<Vec<VehicleTrack>, ScenarioError> {
        let (min_s, max_s) = self.speed_bounds;
        let seed = seed_override.unwrap_or(sampler.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // strict-inequality nudge so a boundary draw cannot land in the wrong class
        let nudge = 1e-9 * self.speed_limit.abs().max(1.0);

        let mut speeds = Vec::with_capacity(sampler.normal_count + sampler.high_speed_count);
        for i in 0..sampler.high_speed_count {
            let (lo, hi) = sampler
                .high_speed_ranges
                .as_ref()
                .and_then(|r| r.get(i).copied())
                .unwrap_or((self.speed_limit, max_s));
            if lo >= hi {
                return Err(invalid(
                    "vehicles.sampler",
                    format!("high-speed window ({lo}, {hi}] is empty; check speed_limit vs max_speed"),
                ));
            }
            let s = sample_speeds_with_rng(1, lo + nudge, hi, sampler.mean, sampler.stddev, &mut rng)?;
            speeds.push(s[0]);
        }
        let normal_hi = self.speed_limit.min(max_s);
        if sampler.normal_count > 0 && min_s > normal_hi {
            return Err(invalid(
                "vehicles.sampler",
                format!("normal window [{min_s}, {normal_hi}] is empty"),
            ));
        }
        speeds.extend(sample_speeds_with_rng(
            sampler.normal_count,
            min_s,
            normal_hi,
            sampler.mean,
            sampler.stddev,
            &mut rng,
        )?);

        let total = speeds.len();
        let initial_x: Vec<f64> =
            (0..total).map(|_| rng.gen::<f64>() * sampler.initial_x_max).collect();

        let fastest = speeds
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i);

        let lanes = sampler.lanes.max(1);
        let tracks = speeds
            .iter()
            .enumerate()
            .map(|(i, &speed)| {
                let lane = i % lanes;
                let lane_y = self.road_width * (2 * lane + 1) as f64 / (2 * lanes) as f64;
                let floor = match (sampler.fastest_rate_floor, fastest) {
                    (Some(f), Some(fi)) if fi == i => Some(f),
                    _ => None,
                };
                VehicleTrack::from_kinematics(
                    initial_x[i],
                    speed,
                    lane_y,
                    self.speed_limit,
                    self.slot_count,
                    self.slot_len,
                    self.road_length,
                    floor,
                )
            })
            .collect();
        Ok(tracks)
    }
}

/// Loads and validates a scenario file (see the JSON schema in the README).
pub fn load_scenario(path: impl AsRef<std::path::Path>) -> Result<ScenarioConfig, ScenarioError> {
    load_template(path)?.instantiate(None)
}

/// Loads a scenario file as a template, leaving vehicle realization to the caller.
pub fn load_template(path: impl AsRef<std::path::Path>) -> Result<ScenarioSpec, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    let file: crate::schema::ScenarioFile = serde_json::from_str(&text)?;
    file.into_spec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_examples() {
        let (high, normal) = classify_vehicles(&[38.0, 39.0, 30.0, 25.0, 28.0], 36.0);
        assert_eq!(high, vec![0, 1]);
        assert_eq!(normal, vec![2, 3, 4]);

        // strict inequality at the boundary
        let (high, normal) = classify_vehicles(&[36.0], 36.0);
        assert!(high.is_empty());
        assert_eq!(normal, vec![0]);

        let (high, normal) = classify_vehicles(&[40.0, 22.0], 36.0);
        assert_eq!(high, vec![0]);
        assert_eq!(normal, vec![1]);
    }

    #[test]
    fn propagation_examples() {
        assert_eq!(propagate_positions(0.0, 30.0, 4.0, 1), vec![120.0]);
        assert_eq!(propagate_positions(100.0, 0.0, 4.0, 3), vec![100.0, 100.0, 100.0]);
        let xs = propagate_positions(0.0, 40.0, 4.0, 100);
        assert_eq!(xs[99], 16000.0);
        assert!(xs[99] > 10000.0, "vehicle must have exited the area");
    }

    #[test]
    fn recursion_matches_closed_form() {
        let (x0, s, dt) = (137.5, 33.25, 4.0);
        let xs = propagate_positions(x0, s, dt, 200);
        let mut prev = x0;
        for (j, &x) in xs.iter().enumerate() {
            let rec = prev + s * dt;
            assert!((x - rec).abs() <= 1e-9 * rec.abs().max(1.0), "slot {}", j + 1);
            prev = x;
        }
    }

    #[test]
    fn presence_examples() {
        let mask = presence_mask(&[-10.0, 0.0, 5000.0, 10000.0, 10001.0], 10000.0);
        assert_eq!(mask, vec![false, true, true, true, false]);
        assert!(presence_mask(&[1.0, 2.0, 3.0], 10.0).iter().all(|&m| m));
    }

    #[test]
    fn presence_popcount() {
        // 5 vehicles, a slot where 2 have exited leaves nu = 3
        let tracks = [[500.0], [900.0], [10001.0], [-3.0], [9999.0]];
        let nu = tracks
            .iter()
            .filter(|t| presence_mask(&t[..], 10000.0)[0])
            .count();
        assert_eq!(nu, 3);
    }

    #[test]
    fn samples_respect_bounds() {
        let s = sample_speeds(1000, 22.0, 40.0, 31.0, 4.5, 12345).unwrap();
        assert_eq!(s.len(), 1000);
        assert!(s.iter().all(|&v| (22.0..=40.0).contains(&v)));
    }

    #[test]
    fn degenerate_sampler() {
        let s = sample_speeds(25, 30.0, 30.0, 30.0, 0.0, 9).unwrap();
        assert!(s.iter().all(|&v| v == 30.0));
        assert!(sample_speeds(5, 22.0, 40.0, 50.0, 0.0, 9).is_err());
    }

    #[test]
    fn sampler_determinism() {
        let a = sample_speeds(100, 22.0, 40.0, 31.0, 4.5, 7).unwrap();
        let b = sample_speeds(100, 22.0, 40.0, 31.0, 4.5, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_speeds(100, 22.0, 40.0, 31.0, 4.5, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_mean_matches_quadrature_oracle() {
        // oracle: Simpson quadrature of x * pdf(x) over the window, with an
        // independent pdf implementation
        let (a, b, mu, sigma) = (22.0f64, 40.0f64, 31.0f64, 4.5f64);
        let pdf = |x: f64| {
            let z = (x - mu) / sigma;
            (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        };
        let n = 20_000;
        let h = (b - a) / n as f64;
        let simpson = |f: &dyn Fn(f64) -> f64| {
            let mut acc = f(a) + f(b);
            for k in 1..n {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * f(a + k as f64 * h);
            }
            acc * h / 3.0
        };
        let mass = simpson(&pdf);
        let first_moment = simpson(&|x| x * pdf(x));
        let oracle_mean = first_moment / mass;

        let samples = sample_speeds(100_000, a, b, mu, sigma, 7).unwrap();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        assert!(
            (mean - oracle_mean).abs() < 0.1,
            "sample mean {mean} vs truncated-normal mean {oracle_mean}"
        );
    }

    fn toy_spec() -> ScenarioSpec {
        ScenarioSpec {
            road_length: 10000.0,
            road_width: 50.0,
            flight_duration: 400.0,
            slot_count: 100,
            slot_len: 4.0,
            uav_altitude: 100.0,
            uav_start: [0.0, 25.0],
            uav_max_speed: 60.0,
            power_budget: crate::units::dbm_to_watt(57.0),
            comm_power_per_vehicle: 0.1,
            bandwidth: 1e6,
            backhaul_bandwidth: 2e6,
            bs_position: [-5000.0, 0.0, 30.0],
            bs_power: crate::units::dbm_to_watt(46.0),
            noise_vehicle: crate::units::dbm_to_watt(-113.0),
            noise_uav: crate::units::dbm_to_watt(-110.0),
            reference_gain: 1e-3,
            rate_floor: 1000.0,
            speed_limit: 36.0,
            speed_bounds: (22.0, 40.0),
            convergence_eps: 1e-4,
            power_model: PowerModelParams::default(),
            solver: SolverSettings::default(),
            vehicles: VehicleSource::Sampler(SamplerSettings {
                seed: 7,
                normal_count: 3,
                high_speed_count: 2,
                mean: 31.0,
                stddev: 4.5,
                initial_x_max: 1000.0,
                lanes: 4,
                high_speed_ranges: None,
                fastest_rate_floor: None,
            }),
        }
    }

    #[test]
    fn sampler_hits_class_counts() {
        let config = toy_spec().instantiate(None).unwrap();
        assert_eq!(config.vehicle_count(), 5);
        assert_eq!(config.high_speed_indices(), vec![0, 1]);
        assert_eq!(config.normal_indices(), vec![2, 3, 4]);
        assert!((config.total_comm_power - 0.5).abs() < 1e-12);
        config.validate().unwrap();
    }

    #[test]
    fn seed_override_changes_tracks() {
        let spec = toy_spec();
        let a = spec.instantiate(Some(1)).unwrap();
        let b = spec.instantiate(Some(2)).unwrap();
        let c = spec.instantiate(Some(1)).unwrap();
        assert_ne!(a.vehicles[0].speed, b.vehicles[0].speed);
        assert_eq!(a, c);
    }

    #[test]
    fn lane_layout_spans_road() {
        let config = toy_spec().instantiate(None).unwrap();
        for (i, v) in config.vehicles.iter().enumerate() {
            let lane = i % 4;
            let expect = 50.0 * (2 * lane + 1) as f64 / 8.0;
            assert_eq!(v.lane_y, expect);
        }
    }

    #[test]
    fn validation_rejects_bad_time_grid() {
        let mut spec = toy_spec();
        spec.slot_count = 99;
        let err = spec.instantiate(None).unwrap_err();
        assert!(err.to_string().contains("flight_duration"), "{err}");
    }

    #[test]
    fn validation_rejects_swapped_speed_bounds() {
        let mut spec = toy_spec();
        spec.speed_bounds = (40.0, 22.0);
        assert!(spec.instantiate(None).is_err());
    }

    #[test]
    fn validation_rejects_empty_normal_set() {
        let mut spec = toy_spec();
        spec.vehicles = VehicleSource::Sampler(SamplerSettings {
            seed: 7,
            normal_count: 0,
            high_speed_count: 2,
            mean: 31.0,
            stddev: 4.5,
            initial_x_max: 1000.0,
            lanes: 4,
            high_speed_ranges: None,
            fastest_rate_floor: None,
        });
        assert!(matches!(spec.instantiate(None), Err(ScenarioError::NoNormalVehicles)));
    }

    #[test]
    fn high_speed_ranges_are_respected() {
        let mut spec = toy_spec();
        spec.vehicles = VehicleSource::Sampler(SamplerSettings {
            seed: 11,
            normal_count: 3,
            high_speed_count: 2,
            mean: 31.0,
            stddev: 4.5,
            initial_x_max: 1000.0,
            lanes: 4,
            high_speed_ranges: Some(vec![(38.0, 40.0), (36.0, 38.0)]),
            fastest_rate_floor: Some(5e5),
        });
        let config = spec.instantiate(None).unwrap();
        assert!(config.vehicles[0].speed > 38.0 && config.vehicles[0].speed <= 40.0);
        assert!(config.vehicles[1].speed > 36.0 && config.vehicles[1].speed <= 38.0);
        assert_eq!(config.vehicles[0].rate_floor, Some(5e5));
        assert_eq!(config.vehicle_floor(0), 5e5);
        assert_eq!(config.vehicle_floor(1), 1000.0);
    }
}
