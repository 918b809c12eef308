//! On-disk scenario schema.
//!
//! Scenario files are JSON with top-level sections `road`, `time`, `uav`,
//! `bs`, `link`, `power_model`, `vehicles`, `solver`. Powers accept either a
//! `dbm` or a `watts` sub-key (exactly one); the reference channel gain takes
//! `db` or `linear`. Everything is converted to linear SI units while
//! building the [`ScenarioSpec`].

use serde::Deserialize;

use crate::link::PowerModelParams;
use crate::scenario::{
    SamplerSettings, ScenarioError, ScenarioSpec, SolverSettings, TrackSpec, VehicleSource,
};
use crate::units::{db_to_linear, dbm_to_watt};

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), message: message.into() }
}

/// A power given on exactly one of the two scales.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSpec {
    pub dbm: Option<f64>,
    pub watts: Option<f64>,
}

impl PowerSpec {
    fn to_watts(self, field: &str) -> Result<f64, ScenarioError> {
        match (self.dbm, self.watts) {
            (Some(dbm), None) => Ok(dbm_to_watt(dbm)),
            (None, Some(w)) => Ok(w),
            (None, None) => Err(invalid(field, "requires one of `dbm` or `watts`")),
            (Some(_), Some(_)) => Err(invalid(field, "give `dbm` or `watts`, not both")),
        }
    }
}

/// A gain given on exactly one of the two scales.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSpec {
    pub db: Option<f64>,
    pub linear: Option<f64>,
}

impl GainSpec {
    fn to_linear(self, field: &str) -> Result<f64, ScenarioError> {
        match (self.db, self.linear) {
            (Some(db), None) => Ok(db_to_linear(db)),
            (None, Some(g)) => Ok(g),
            (None, None) => Err(invalid(field, "requires one of `db` or `linear`")),
            (Some(_), Some(_)) => Err(invalid(field, "give `db` or `linear`, not both")),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSection {
    pub length_m: f64,
    pub width_m: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub flight_duration_s: f64,
    pub slot_count: usize,
    /// Optional; derived as `flight_duration_s / slot_count` when omitted.
    /// When present it must reproduce the flight duration exactly.
    pub slot_len_s: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavSection {
    pub altitude_m: f64,
    pub start_xy_m: [f64; 2],
    pub max_speed_mps: f64,
    pub power_budget: PowerSpec,
    pub comm_power_per_vehicle: PowerSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsSection {
    pub position_m: [f64; 3],
    pub power: PowerSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub bandwidth_hz: f64,
    pub backhaul_bandwidth_hz: f64,
    pub reference_gain: GainSpec,
    pub noise_vehicle: PowerSpec,
    pub noise_uav: PowerSpec,
    pub rate_floor_bps: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerModelSection {
    pub hover_induced_speed_mps: f64,
    pub blade_profile_power_w: f64,
    pub tip_speed_mps: f64,
    pub induced_power_w: f64,
    pub fuselage_drag_ratio: f64,
    pub air_density_kg_m3: f64,
    pub rotor_solidity: f64,
    pub rotor_disc_area_m2: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackEntry {
    pub speed_mps: f64,
    pub lane_y_m: f64,
    pub initial_x_m: f64,
    pub rate_floor_bps: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub seed: u64,
    pub normal_count: usize,
    pub high_speed_count: usize,
    pub mean_mps: Option<f64>,
    pub stddev_mps: Option<f64>,
    pub initial_x_max_m: Option<f64>,
    pub lanes: Option<usize>,
    pub high_speed_ranges_mps: Option<Vec<(f64, f64)>>,
    pub fastest_rate_floor_bps: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehiclesSection {
    pub speed_limit_mps: f64,
    pub min_speed_mps: f64,
    pub max_speed_mps: f64,
    pub tracks: Option<Vec<TrackEntry>>,
    pub sampler: Option<SamplerSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub convergence_eps: Option<f64>,
    pub max_outer_iterations: Option<usize>,
    pub max_sca_iterations: Option<usize>,
    pub gap_tol: Option<f64>,
    pub feas_tol: Option<f64>,
    pub max_newton_steps: Option<usize>,
}

/// Top-level scenario document.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub road: RoadSection,
    pub time: TimeSection,
    pub uav: UavSection,
    pub bs: BsSection,
    pub link: LinkSection,
    pub power_model: PowerModelSection,
    pub vehicles: VehiclesSection,
    #[serde(default)]
    pub solver: SolverSection,
}

impl ScenarioFile {
    /// Resolves units and defaults into a [`ScenarioSpec`].
    pub fn into_spec(self) -> Result<ScenarioSpec, ScenarioError> {
        if self.time.slot_count == 0 {
            return Err(invalid("time.slot_count", "must be at least 1"));
        }
        let slot_len = match self.time.slot_len_s {
            Some(dt) => {
                let product = dt * self.time.slot_count as f64;
                if (product - self.time.flight_duration_s).abs()
                    > 1e-9 * self.time.flight_duration_s.max(1.0)
                {
                    return Err(invalid(
                        "time",
                        format!(
                            "flight_duration_s ({}) != slot_count * slot_len_s ({} * {} = {product})",
                            self.time.flight_duration_s, self.time.slot_count, dt
                        ),
                    ));
                }
                dt
            }
            None => self.time.flight_duration_s / self.time.slot_count as f64,
        };

        let min_s = self.vehicles.min_speed_mps;
        let max_s = self.vehicles.max_speed_mps;
        if !(min_s <= max_s) {
            return Err(invalid(
                "vehicles",
                format!("min_speed_mps ({min_s}) must not exceed max_speed_mps ({max_s})"),
            ));
        }
        let vehicles = match (self.vehicles.tracks, self.vehicles.sampler) {
            (Some(tracks), None) => VehicleSource::Tracks(
                tracks
                    .into_iter()
                    .map(|t| TrackSpec {
                        speed: t.speed_mps,
                        lane_y: t.lane_y_m,
                        initial_x: t.initial_x_m,
                        rate_floor: t.rate_floor_bps,
                    })
                    .collect(),
            ),
            (None, Some(s)) => VehicleSource::Sampler(SamplerSettings {
                seed: s.seed,
                normal_count: s.normal_count,
                high_speed_count: s.high_speed_count,
                mean: s.mean_mps.unwrap_or(0.5 * (min_s + max_s)),
                stddev: s.stddev_mps.unwrap_or(0.25 * (max_s - min_s)),
                initial_x_max: s.initial_x_max_m.unwrap_or(self.road.length_m / 10.0),
                lanes: s.lanes.unwrap_or(4),
                high_speed_ranges: s.high_speed_ranges_mps,
                fastest_rate_floor: s.fastest_rate_floor_bps,
            }),
            (None, None) => {
                return Err(invalid("vehicles", "requires one of `tracks` or `sampler`"))
            }
            (Some(_), Some(_)) => {
                return Err(invalid("vehicles", "give `tracks` or `sampler`, not both"))
            }
        };

        let defaults = SolverSettings::default();
        let solver = SolverSettings {
            convergence_eps: self.solver.convergence_eps.unwrap_or(defaults.convergence_eps),
            max_outer_iterations: self
                .solver
                .max_outer_iterations
                .unwrap_or(defaults.max_outer_iterations),
            max_sca_iterations: self
                .solver
                .max_sca_iterations
                .unwrap_or(defaults.max_sca_iterations),
            gap_tol: self.solver.gap_tol.unwrap_or(defaults.gap_tol),
            feas_tol: self.solver.feas_tol.unwrap_or(defaults.feas_tol),
            max_newton_steps: self.solver.max_newton_steps.unwrap_or(defaults.max_newton_steps),
        };

        Ok(ScenarioSpec {
            road_length: self.road.length_m,
            road_width: self.road.width_m,
            flight_duration: self.time.flight_duration_s,
            slot_count: self.time.slot_count,
            slot_len,
            uav_altitude: self.uav.altitude_m,
            uav_start: self.uav.start_xy_m,
            uav_max_speed: self.uav.max_speed_mps,
            power_budget: self.uav.power_budget.to_watts("uav.power_budget")?,
            comm_power_per_vehicle: self
                .uav
                .comm_power_per_vehicle
                .to_watts("uav.comm_power_per_vehicle")?,
            bandwidth: self.link.bandwidth_hz,
            backhaul_bandwidth: self.link.backhaul_bandwidth_hz,
            bs_position: self.bs.position_m,
            bs_power: self.bs.power.to_watts("bs.power")?,
            noise_vehicle: self.link.noise_vehicle.to_watts("link.noise_vehicle")?,
            noise_uav: self.link.noise_uav.to_watts("link.noise_uav")?,
            reference_gain: self.link.reference_gain.to_linear("link.reference_gain")?,
            rate_floor: self.link.rate_floor_bps,
            speed_limit: self.vehicles.speed_limit_mps,
            speed_bounds: (min_s, max_s),
            convergence_eps: solver.convergence_eps,
            power_model: PowerModelParams {
                hover_induced_speed: self.power_model.hover_induced_speed_mps,
                blade_profile_power: self.power_model.blade_profile_power_w,
                tip_speed: self.power_model.tip_speed_mps,
                induced_power: self.power_model.induced_power_w,
                fuselage_drag_ratio: self.power_model.fuselage_drag_ratio,
                air_density: self.power_model.air_density_kg_m3,
                rotor_solidity: self.power_model.rotor_solidity,
                rotor_disc_area: self.power_model.rotor_disc_area_m2,
            },
            solver,
            vehicles,
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::scenario::{load_scenario, load_template, ScenarioError};
    use std::io::Write;

    fn default_json() -> String {
        r#"{
  "road": { "length_m": 10000.0, "width_m": 50.0 },
  "time": { "flight_duration_s": 400.0, "slot_count": 100, "slot_len_s": 4.0 },
  "uav": {
    "altitude_m": 100.0,
    "start_xy_m": [0.0, 25.0],
    "max_speed_mps": 60.0,
    "power_budget": { "dbm": 57.0 },
    "comm_power_per_vehicle": { "watts": 0.1 }
  },
  "bs": { "position_m": [-5000.0, 0.0, 30.0], "power": { "dbm": 46.0 } },
  "link": {
    "bandwidth_hz": 1e6,
    "backhaul_bandwidth_hz": 2e6,
    "reference_gain": { "db": -30.0 },
    "noise_vehicle": { "dbm": -113.0 },
    "noise_uav": { "dbm": -110.0 },
    "rate_floor_bps": 1000.0
  },
  "power_model": {
    "hover_induced_speed_mps": 5.4,
    "blade_profile_power_w": 3.4,
    "tip_speed_mps": 60.0,
    "induced_power_w": 118.0,
    "fuselage_drag_ratio": 0.6,
    "air_density_kg_m3": 1.225,
    "rotor_solidity": 0.05,
    "rotor_disc_area_m2": 0.503
  },
  "vehicles": {
    "speed_limit_mps": 36.0,
    "min_speed_mps": 22.0,
    "max_speed_mps": 40.0,
    "sampler": { "seed": 7, "normal_count": 3, "high_speed_count": 2 }
  },
  "solver": { "convergence_eps": 1e-4 }
}"#
        .to_string()
    }

    fn write_temp(content: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("uavnet-schema-test-{}.json", rand::random::<u64>()));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn default_file_loads() {
        let path = write_temp(&default_json());
        let config = load_scenario(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(config.slot_count, 100);
        assert_eq!(config.slot_len, 4.0);
        assert_eq!(config.bandwidth, 1e6);
        assert!((config.reference_gain - 1e-3).abs() < 1e-18);
        assert!((config.power_budget - 501.18723362727246).abs() < 1e-9);
        assert_eq!(config.vehicle_count(), 5);
    }

    #[test]
    fn inconsistent_time_grid_is_rejected() {
        let text = default_json().replace("\"slot_count\": 100", "\"slot_count\": 99");
        let path = write_temp(&text);
        let err = load_scenario(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(err.to_string().contains("slot_count * slot_len_s"), "{err}");
    }

    #[test]
    fn swapped_speed_bounds_are_rejected() {
        let text = default_json()
            .replace("\"min_speed_mps\": 22.0", "\"min_speed_mps\": 45.0");
        let path = write_temp(&text);
        let err = load_scenario(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(err.to_string().contains("min_speed_mps"), "{err}");
    }

    #[test]
    fn power_requires_exactly_one_scale() {
        let text = default_json().replace(
            "\"power_budget\": { \"dbm\": 57.0 }",
            "\"power_budget\": { \"dbm\": 57.0, \"watts\": 501.0 }",
        );
        let path = write_temp(&text);
        let err = load_scenario(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(err.to_string().contains("not both"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_scenario("/nonexistent/uavnet.json").unwrap_err();
        assert!(matches!(err, ScenarioError::Io(_)));
    }

    #[test]
    fn template_reinstantiates_with_seed() {
        let path = write_temp(&default_json());
        let spec = load_template(&path).unwrap();
        std::fs::remove_file(&path).ok();
        let a = spec.instantiate(Some(3)).unwrap();
        let b = spec.instantiate(Some(3)).unwrap();
        assert_eq!(a, b);
    }
}
