//! Small scenario builders shared by unit tests.

use crate::link::{PowerModelParams, Trajectory};
use crate::scenario::{
    SamplerSettings, ScenarioConfig, ScenarioSpec, SolverSettings, TrackSpec, VehicleSource,
};
use crate::units::dbm_to_watt;

/// Reference-parameter spec with explicit tracks.
pub fn spec_with_tracks(
    slot_count: usize,
    slot_len: f64,
    tracks: Vec<TrackSpec>,
) -> ScenarioSpec {
    ScenarioSpec {
        road_length: 10000.0,
        road_width: 50.0,
        flight_duration: slot_count as f64 * slot_len,
        slot_count,
        slot_len,
        uav_altitude: 100.0,
        uav_start: [0.0, 25.0],
        uav_max_speed: 60.0,
        power_budget: dbm_to_watt(57.0),
        comm_power_per_vehicle: 0.1,
        bandwidth: 1e6,
        backhaul_bandwidth: 2e6,
        bs_position: [-5000.0, 0.0, 30.0],
        bs_power: dbm_to_watt(46.0),
        noise_vehicle: dbm_to_watt(-113.0),
        noise_uav: dbm_to_watt(-110.0),
        reference_gain: 1e-3,
        rate_floor: 1000.0,
        speed_limit: 36.0,
        speed_bounds: (22.0, 40.0),
        convergence_eps: 1e-4,
        power_model: PowerModelParams::default(),
        solver: SolverSettings::default(),
        vehicles: VehicleSource::Tracks(tracks),
    }
}

/// One-slot scenario from `(speed, lane_y, initial_x, rate_floor)` tuples.
pub fn single_slot_scenario(vehicles: Vec<(f64, f64, f64, Option<f64>)>) -> ScenarioConfig {
    let tracks = vehicles
        .into_iter()
        .map(|(speed, lane_y, initial_x, rate_floor)| TrackSpec {
            speed,
            lane_y,
            initial_x,
            rate_floor,
        })
        .collect();
    spec_with_tracks(1, 4.0, tracks).instantiate(None).unwrap()
}

/// Sampled scenario with `slot_count` slots on a short clock: 2 high-speed
/// and 3 normal vehicles, all present throughout.
pub fn multi_slot_scenario(slot_count: usize) -> ScenarioConfig {
    let mut spec = spec_with_tracks(slot_count, 4.0, Vec::new());
    spec.vehicles = VehicleSource::Sampler(SamplerSettings {
        seed: 5,
        normal_count: 3,
        high_speed_count: 2,
        mean: 31.0,
        stddev: 4.5,
        initial_x_max: 1000.0,
        lanes: 4,
        high_speed_ranges: None,
        fastest_rate_floor: None,
    });
    spec.instantiate(None).unwrap()
}

/// Constant-speed straight-line trajectory from the scenario start.
pub fn cruise_trajectory(scenario: &ScenarioConfig, speed: f64) -> Trajectory {
    let mut xy = vec![scenario.uav_start];
    for j in 1..=scenario.slot_count {
        let x = (scenario.uav_start[0] + j as f64 * speed * scenario.slot_len)
            .min(scenario.road_length);
        xy.push([x, scenario.uav_start[1]]);
    }
    Trajectory { xy, altitude: scenario.uav_altitude }
}
