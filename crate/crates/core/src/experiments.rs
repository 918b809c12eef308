//! Seeded Monte Carlo batches and one-dimensional parameter sweeps.
//!
//! Every trial draws its own vehicle sample from the template (seed =
//! base + index) and runs each requested mode on the identical sample, so
//! mode comparisons are paired. Trials are independent and run in parallel
//! under the `parallel` feature; aggregation is keyed by trial index, so the
//! results do not depend on scheduling.

use serde::{Deserialize, Serialize};

use crate::driver::{run_mode, BcaOptions, DriverError, Mode};
use crate::scenario::{ScenarioSpec, VehicleSource};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    /// Achieved objective per requested mode; `None` marks an infeasible trial.
    pub etas: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub mode: Mode,
    pub mean_eta: f64,
    pub stddev_eta: f64,
    pub feasible_trials: usize,
    pub infeasible_trials: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub modes: Vec<Mode>,
    pub trials: Vec<TrialRecord>,
    pub aggregates: Vec<ModeAggregate>,
}

impl McReport {
    pub fn aggregate_for(&self, mode: Mode) -> Option<&ModeAggregate> {
        self.aggregates.iter().find(|a| a.mode == mode)
    }

    /// Paired per-seed objectives for two modes (feasible in both).
    pub fn paired(&self, a: Mode, b: Mode) -> Vec<(f64, f64)> {
        let ia = self.modes.iter().position(|&m| m == a);
        let ib = self.modes.iter().position(|&m| m == b);
        let (Some(ia), Some(ib)) = (ia, ib) else { return Vec::new() };
        self.trials
            .iter()
            .filter_map(|t| match (t.etas[ia], t.etas[ib]) {
                (Some(x), Some(y)) => Some((x, y)),
                _ => None,
            })
            .collect()
    }
}

fn run_one_trial(
    spec: &ScenarioSpec,
    seed: u64,
    modes: &[Mode],
) -> Result<TrialRecord, DriverError> {
    let scenario = spec.instantiate(Some(seed))?;
    let opts = BcaOptions::from_scenario(&scenario);
    let mut etas = Vec::with_capacity(modes.len());
    for &mode in modes {
        match run_mode(&scenario, mode, &opts) {
            Ok(sol) => etas.push(Some(sol.eta)),
            Err(err) if err.is_infeasible() => {
                log::warn!("seed {seed}, mode {mode}: infeasible trial ({err})");
                etas.push(None);
            }
            Err(err) => return Err(err),
        }
    }
    Ok(TrialRecord { seed, etas })
}

/// Sequential trial runner (always available; the benchmark baseline).
pub fn run_trials_sequential(
    spec: &ScenarioSpec,
    seeds: &[u64],
    modes: &[Mode],
) -> Result<Vec<TrialRecord>, DriverError> {
    seeds.iter().map(|&s| run_one_trial(spec, s, modes)).collect()
}

/// Data-parallel trial runner; trial index keys the output so results are
/// identical to the sequential path.
#[cfg(feature = "parallel")]
pub fn run_trials_parallel(
    spec: &ScenarioSpec,
    seeds: &[u64],
    modes: &[Mode],
) -> Result<Vec<TrialRecord>, DriverError> {
    use rayon::prelude::*;
    seeds
        .par_iter()
        .map(|&s| run_one_trial(spec, s, modes))
        .collect()
}

/// Caps the shared worker pool used for trial parallelism. A no-op without
/// the `parallel` feature; errors if a pool was already installed.
#[cfg(feature = "parallel")]
pub fn configure_thread_limit(threads: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

#[cfg(not(feature = "parallel"))]
pub fn configure_thread_limit(_threads: usize) -> Result<(), String> {
    Ok(())
}

fn run_trials(
    spec: &ScenarioSpec,
    seeds: &[u64],
    modes: &[Mode],
) -> Result<Vec<TrialRecord>, DriverError> {
    #[cfg(feature = "parallel")]
    {
        run_trials_parallel(spec, seeds, modes)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_trials_sequential(spec, seeds, modes)
    }
}

fn aggregate(modes: &[Mode], trials: &[TrialRecord]) -> Vec<ModeAggregate> {
    modes
        .iter()
        .enumerate()
        .map(|(mi, &mode)| {
            let values: Vec<f64> = trials.iter().filter_map(|t| t.etas[mi]).collect();
            let feasible = values.len();
            let infeasible = trials.len() - feasible;
            let mean = if feasible > 0 {
                values.iter().sum::<f64>() / feasible as f64
            } else {
                f64::NAN
            };
            let stddev = if feasible > 1 {
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    / (feasible - 1) as f64;
                var.sqrt()
            } else {
                0.0
            };
            ModeAggregate {
                mode,
                mean_eta: mean,
                stddev_eta: stddev,
                feasible_trials: feasible,
                infeasible_trials: infeasible,
            }
        })
        .collect()
}

/// Runs `trials` paired samples (seeds `base_seed..base_seed+trials`) of every
/// requested mode and aggregates the objectives.
pub fn monte_carlo(
    spec: &ScenarioSpec,
    trials: usize,
    base_seed: u64,
    modes: &[Mode],
) -> Result<McReport, DriverError> {
    assert!(trials >= 1, "at least one trial required");
    let seeds: Vec<u64> = (0..trials as u64).map(|k| base_seed + k).collect();
    let records = run_trials(spec, &seeds, modes)?;
    let aggregates = aggregate(modes, &records);
    Ok(McReport { modes: modes.to_vec(), trials: records, aggregates })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    /// Total vehicle count; each step adds one normal and one high-speed
    /// vehicle to the template's sampler.
    VehicleCount,
    /// Per-vehicle transmit power [W] (total communication power follows).
    TransmitPower,
    /// Rate floor [bit/s] of the fastest vehicle; one high-speed vehicle is
    /// sampled above 38 m/s to carry it, any others stay in (limit, 38].
    RateFloor,
}

impl SweepParameter {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParameter::VehicleCount => "vehicles",
            SweepParameter::TransmitPower => "power",
            SweepParameter::RateFloor => "rth",
        }
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vehicles" => Ok(SweepParameter::VehicleCount),
            "power" => Ok(SweepParameter::TransmitPower),
            "rth" => Ok(SweepParameter::RateFloor),
            other => Err(format!("unknown sweep parameter `{other}` (expected vehicles|power|rth)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: McReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub parameter: SweepParameter,
    pub points: Vec<SweepPoint>,
}

/// Applies one sweep value to a copy of the template.
pub fn apply_sweep_value(
    spec: &ScenarioSpec,
    parameter: SweepParameter,
    value: f64,
) -> Result<ScenarioSpec, String> {
    let mut out = spec.clone();
    match parameter {
        SweepParameter::VehicleCount => {
            let VehicleSource::Sampler(sampler) = &mut out.vehicles else {
                return Err("vehicle-count sweep requires a sampler-based template".into());
            };
            if value.fract() != 0.0 || value < 1.0 {
                return Err(format!("vehicle count must be a positive integer, got {value}"));
            }
            let base = (sampler.normal_count + sampler.high_speed_count) as f64;
            let extra = value - base;
            if extra < 0.0 || (extra as u64) % 2 != 0 {
                return Err(format!(
                    "vehicle count {value} must exceed the template's {base} by an even number \
                     (one normal and one high-speed vehicle are added per step)"
                ));
            }
            sampler.normal_count += (extra as usize) / 2;
            sampler.high_speed_count += (extra as usize) / 2;
        }
        SweepParameter::TransmitPower => {
            if !(value > 0.0) {
                return Err(format!("transmit power must be positive, got {value}"));
            }
            out.comm_power_per_vehicle = value;
        }
        SweepParameter::RateFloor => {
            if value < 0.0 {
                return Err(format!("rate floor must be nonnegative, got {value}"));
            }
            let speed_limit = out.speed_limit;
            let max_s = out.speed_bounds.1;
            let VehicleSource::Sampler(sampler) = &mut out.vehicles else {
                return Err("rate-floor sweep requires a sampler-based template".into());
            };
            sampler.fastest_rate_floor = Some(value);
            if sampler.high_speed_ranges.is_none() && sampler.high_speed_count >= 1 {
                // one vehicle fast enough to carry the swept floor, the rest
                // capped at 38 m/s
                let mut ranges = vec![(38.0f64.max(speed_limit), max_s)];
                ranges.extend(
                    std::iter::repeat((speed_limit, 38.0f64.min(max_s).max(speed_limit)))
                        .take(sampler.high_speed_count - 1),
                );
                sampler.high_speed_ranges = Some(ranges);
            }
        }
    }
    Ok(out)
}

/// Monte Carlo aggregates for each value of one swept parameter. Values must
/// be strictly ascending; seeds are paired across values.
pub fn sweep(
    spec: &ScenarioSpec,
    parameter: SweepParameter,
    values: &[f64],
    trials: usize,
    base_seed: u64,
    modes: &[Mode],
) -> Result<SweepReport, DriverError> {
    if values.is_empty() {
        return Err(DriverError::Scenario(crate::scenario::ScenarioError::Invalid {
            field: "sweep.values".into(),
            message: "at least one value required".into(),
        }));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DriverError::Scenario(crate::scenario::ScenarioError::Invalid {
            field: "sweep.values".into(),
            message: format!("values must be strictly ascending, got {values:?}"),
        }));
    }
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let spec_v = apply_sweep_value(spec, parameter, value).map_err(|message| {
            DriverError::Scenario(crate::scenario::ScenarioError::Invalid {
                field: format!("sweep.{}", parameter.as_str()),
                message,
            })
        })?;
        let report = monte_carlo(&spec_v, trials, base_seed, modes)?;
        points.push(SweepPoint { value, report });
    }
    Ok(SweepReport { parameter, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{SamplerSettings, VehicleSource};
    use crate::testkit;

    fn template(slots: usize) -> ScenarioSpec {
        let mut spec = testkit::spec_with_tracks(slots, 4.0, Vec::new());
        spec.vehicles = VehicleSource::Sampler(SamplerSettings {
            seed: 7,
            normal_count: 2,
            high_speed_count: 1,
            mean: 31.0,
            stddev: 4.5,
            initial_x_max: 800.0,
            lanes: 4,
            high_speed_ranges: None,
            fastest_rate_floor: None,
        });
        spec
    }

    #[test]
    fn single_trial_statistics_degenerate() {
        let spec = template(6);
        let report = monte_carlo(&spec, 1, 11, &[Mode::CenterHover]).unwrap();
        let agg = report.aggregate_for(Mode::CenterHover).unwrap();
        assert_eq!(agg.feasible_trials, 1);
        assert_eq!(agg.stddev_eta, 0.0);
        assert_eq!(Some(agg.mean_eta), report.trials[0].etas[0]);
    }

    #[test]
    fn repeated_batches_are_identical() {
        let spec = template(6);
        let a = monte_carlo(&spec, 3, 5, &[Mode::CenterHover]).unwrap();
        let b = monte_carlo(&spec, 3, 5, &[Mode::CenterHover]).unwrap();
        for (ta, tb) in a.trials.iter().zip(&b.trials) {
            assert_eq!(ta.etas, tb.etas);
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let spec = template(6);
        let seeds = [3, 4, 5, 6];
        let seq = run_trials_sequential(&spec, &seeds, &[Mode::CenterHover]).unwrap();
        #[cfg(feature = "parallel")]
        {
            let par = run_trials_parallel(&spec, &seeds, &[Mode::CenterHover]).unwrap();
            for (a, b) in seq.iter().zip(&par) {
                assert_eq!(a.seed, b.seed);
                assert_eq!(a.etas, b.etas);
            }
        }
        assert_eq!(seq.len(), 4);
    }

    #[test]
    fn sweep_rejects_unsorted_values() {
        let spec = template(4);
        let err = sweep(
            &spec,
            SweepParameter::TransmitPower,
            &[0.1, 0.05],
            1,
            1,
            &[Mode::CenterHover],
        )
        .unwrap_err();
        assert!(err.to_string().contains("ascending"), "{err}");
    }

    #[test]
    fn vehicle_count_sweep_adds_pairs() {
        let spec = template(4);
        let spec5 = apply_sweep_value(&spec, SweepParameter::VehicleCount, 5.0).unwrap();
        let VehicleSource::Sampler(s) = &spec5.vehicles else { panic!() };
        assert_eq!((s.normal_count, s.high_speed_count), (3, 2));
        assert!(apply_sweep_value(&spec, SweepParameter::VehicleCount, 4.0).is_err());
    }

    #[test]
    fn rate_floor_sweep_pins_fast_vehicle() {
        let spec = template(4);
        let spec_r = apply_sweep_value(&spec, SweepParameter::RateFloor, 1e5).unwrap();
        let VehicleSource::Sampler(s) = &spec_r.vehicles else { panic!() };
        assert_eq!(s.fastest_rate_floor, Some(1e5));
        let ranges = s.high_speed_ranges.as_ref().unwrap();
        assert_eq!(ranges[0], (38.0, 40.0));
        let scenario = spec_r.instantiate(Some(1)).unwrap();
        let fastest = scenario
            .vehicles
            .iter()
            .map(|v| v.speed)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(fastest > 38.0);
    }

    #[test]
    fn power_sweep_is_monotone_for_center_hover() {
        let spec = template(6);
        let report = sweep(
            &spec,
            SweepParameter::TransmitPower,
            &[0.02, 0.1],
            2,
            3,
            &[Mode::CenterHover],
        )
        .unwrap();
        let low = report.points[0].report.aggregate_for(Mode::CenterHover).unwrap().mean_eta;
        let high = report.points[1].report.aggregate_for(Mode::CenterHover).unwrap().mean_eta;
        assert!(high > low, "more transmit power must not lower the objective");
    }
}
