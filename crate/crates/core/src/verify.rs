//! Exact post-hoc verification: every constraint family is recomputed from
//! closed-form models (no linearization, no solver state) so a returned
//! solution can be audited independently of how it was produced.

use serde::{Deserialize, Serialize};

use crate::bandwidth::{backhaul_profile, per_slot_rates, rate_coefficients, BandwidthPlan};
use crate::link::{
    instantaneous_rate, propulsion_plus_comm_power, rate_distance_derivative,
    uav_vehicle_distance, Trajectory,
};
use crate::scenario::ScenarioConfig;

/// Relative tolerance for declaring a solution valid.
pub const VALID_REL_TOL: f64 = 1e-6;
/// Largest tolerated true backhaul excess after the repair pass, relative to
/// the slot's capacity.
pub const BACKHAUL_EXCESS_REL_TOL: f64 = 0.01;
/// A floor counts as binding when the achieved rate is within this relative
/// band of it.
pub const BINDING_REL_TOL: f64 = 1e-4;

/// 17-significant-digit scientific formatting: round-trips f64 exactly, so
/// recomputation from exported artifacts is bit-faithful.
pub fn fmt_float17(x: f64) -> String {
    format!("{x:.16e}")
}

/// One verified constraint family.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConstraintCheck {
    pub name: String,
    /// Whether the producing mode promised this family (an equal-share
    /// baseline reports rate floors without enforcing them).
    pub enforced: bool,
    pub max_violation_abs: f64,
    pub max_violation_rel: f64,
    pub worst: String,
}

impl ConstraintCheck {
    fn passes(&self) -> bool {
        !self.enforced || self.max_violation_rel <= VALID_REL_TOL
    }
}

/// Closed-form lower bound on the share a high-speed vehicle needs:
/// tightness against it exposes which floor rows actually bind.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KappaBoundCheck {
    pub checked: usize,
    /// Worst relative shortfall of `kappa` below the bound (0 when none).
    pub max_shortfall_rel: f64,
    /// Present high-speed slots where the floor binds within `BINDING_REL_TOL`.
    pub binding_slots: usize,
    /// Worst relative gap `|kappa c / floor - 1|` across binding slots.
    pub max_binding_gap_rel: f64,
}

/// Sign and finite-difference agreement of the analytic rate-distance slope
/// at geometries taken from the solution.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DerivativeCheck {
    pub points: usize,
    pub all_negative: bool,
    pub max_fd_rel_err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VerificationReport {
    pub floors_enforced: bool,
    pub checks: Vec<ConstraintCheck>,
    /// True backhaul excess of the plan as handed in (before any repair),
    /// worst slot [bit/s] and relative to that slot's capacity.
    pub backhaul_excess_pre_repair_bps: f64,
    pub backhaul_excess_pre_repair_rel: f64,
    pub repaired_slots: usize,
    pub kappa_bound: KappaBoundCheck,
    pub rate_derivative: DerivativeCheck,
    pub valid: bool,
}

impl VerificationReport {
    /// Deterministic text rendering (what `verify.txt` stores and what the
    /// validate command recomputes byte-for-byte).
    pub fn render_text(&self) -> String {
        let mut out = String::from("verification report\n");
        out.push_str(&format!("floors_enforced: {}\n", self.floors_enforced));
        for c in &self.checks {
            out.push_str(&format!(
                "check {}: enforced={} max_violation_abs={} max_violation_rel={} worst={}\n",
                c.name,
                c.enforced,
                fmt_float17(c.max_violation_abs),
                fmt_float17(c.max_violation_rel),
                c.worst
            ));
        }
        out.push_str(&format!(
            "backhaul_excess_pre_repair_bps: {}\n",
            fmt_float17(self.backhaul_excess_pre_repair_bps)
        ));
        out.push_str(&format!(
            "backhaul_excess_pre_repair_rel: {}\n",
            fmt_float17(self.backhaul_excess_pre_repair_rel)
        ));
        out.push_str(&format!("repaired_slots: {}\n", self.repaired_slots));
        out.push_str(&format!(
            "kappa_bound: checked={} max_shortfall_rel={} binding_slots={} max_binding_gap_rel={}\n",
            self.kappa_bound.checked,
            fmt_float17(self.kappa_bound.max_shortfall_rel),
            self.kappa_bound.binding_slots,
            fmt_float17(self.kappa_bound.max_binding_gap_rel)
        ));
        out.push_str(&format!(
            "rate_derivative: points={} all_negative={} max_fd_rel_err={}\n",
            self.rate_derivative.points,
            self.rate_derivative.all_negative,
            fmt_float17(self.rate_derivative.max_fd_rel_err)
        ));
        out.push_str(&format!("valid: {}\n", self.valid));
        out
    }
}

struct Worst {
    abs: f64,
    rel: f64,
    label: String,
}

impl Worst {
    fn new() -> Self {
        Self { abs: 0.0, rel: 0.0, label: "none".into() }
    }

    fn update(&mut self, violation: f64, scale: f64, label: impl FnOnce() -> String) {
        let rel = violation / scale.max(1e-300);
        if rel > self.rel {
            self.rel = rel;
            self.abs = violation;
            self.label = label();
        }
    }

    fn into_check(self, name: &str, enforced: bool) -> ConstraintCheck {
        ConstraintCheck {
            name: name.into(),
            enforced,
            max_violation_abs: self.abs.max(0.0),
            max_violation_rel: self.rel.max(0.0),
            worst: self.label,
        }
    }
}

/// Recomputes every constraint with exact formulas and assembles the report.
///
/// `repaired_slots` and the pre-repair backhaul numbers describe what the
/// caller did before verification; pass zeros when the plan is untouched.
pub fn verify_solution(
    scenario: &ScenarioConfig,
    traj: &Trajectory,
    plan: &BandwidthPlan,
    floors_enforced: bool,
    backhaul_excess_pre_repair_bps: f64,
    backhaul_excess_pre_repair_rel: f64,
    repaired_slots: usize,
) -> VerificationReport {
    let j_count = scenario.slot_count;
    let coeffs = rate_coefficients(scenario, traj);
    let rates = per_slot_rates(&coeffs, plan);
    let rb = backhaul_profile(scenario, traj);
    let speeds = traj.speed_profile(scenario.slot_len);

    // (9b) instantaneous floors for present high-speed slots
    let mut floors = Worst::new();
    for v in scenario.high_speed_indices() {
        let floor = scenario.vehicle_floor(v);
        for jm in 0..j_count {
            if scenario.present(v, jm + 1) {
                floors.update(floor - rates[v][jm], floor.max(1.0), || {
                    format!("v{v},slot{}", jm + 1)
                });
            }
        }
    }

    // (9c) true backhaul load vs capacity, per slot
    let mut backhaul = Worst::new();
    for jm in 0..j_count {
        let load: f64 = (0..scenario.vehicle_count()).map(|v| rates[v][jm]).sum();
        backhaul.update(load - rb[jm], rb[jm], || format!("slot{}", jm + 1));
    }

    // (9d) power on the true speed profile
    let mut power = Worst::new();
    for (jm, &s) in speeds.iter().enumerate() {
        let p = propulsion_plus_comm_power(s, &scenario.power_model, scenario.total_comm_power);
        power.update(p - scenario.power_budget, scenario.power_budget, || {
            format!("slot{}", jm + 1)
        });
    }

    // (9e) mobility steps
    let mut mobility = Worst::new();
    let step_cap = scenario.uav_max_speed * scenario.slot_len;
    for jm in 0..j_count {
        let a = traj.xy[jm];
        let b = traj.xy[jm + 1];
        let step = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        mobility.update(step - step_cap, step_cap, || format!("slot{}", jm + 1));
    }

    // (9f)/(9g) road box
    let mut road_box = Worst::new();
    for (j, w) in traj.xy.iter().enumerate() {
        road_box.update((-w[0]).max(w[0] - scenario.road_length), scenario.road_length, || {
            format!("x,slot{j}")
        });
        road_box.update((-w[1]).max(w[1] - scenario.road_width), scenario.road_width, || {
            format!("y,slot{j}")
        });
    }

    // (9h) share range, (9i) per-slot simplex, plus zero-share for absences
    let mut share_range = Worst::new();
    let mut simplex = Worst::new();
    let mut absent_zero = Worst::new();
    for jm in 0..j_count {
        let mut total = 0.0;
        for v in 0..scenario.vehicle_count() {
            let k = plan.kappa[v][jm];
            share_range.update((-k).max(k - 1.0), 1.0, || format!("v{v},slot{}", jm + 1));
            if !scenario.present(v, jm + 1) {
                absent_zero.update(k.abs(), 1.0, || format!("v{v},slot{}", jm + 1));
            }
            total += k;
        }
        simplex.update(total - 1.0, 1.0, || format!("slot{}", jm + 1));
    }

    // share lower bound implied by each floor: kappa >= floor / (B log2(1+snr))
    let mut kappa_bound = KappaBoundCheck {
        checked: 0,
        max_shortfall_rel: 0.0,
        binding_slots: 0,
        max_binding_gap_rel: 0.0,
    };
    for v in scenario.high_speed_indices() {
        let floor = scenario.vehicle_floor(v);
        if floor <= 0.0 {
            continue;
        }
        for jm in 0..j_count {
            if !scenario.present(v, jm + 1) {
                continue;
            }
            kappa_bound.checked += 1;
            let bound = floor / coeffs[v][jm];
            let shortfall = (bound - plan.kappa[v][jm]) / bound.max(1e-300);
            kappa_bound.max_shortfall_rel = kappa_bound.max_shortfall_rel.max(shortfall);
            let gap = (rates[v][jm] / floor - 1.0).abs();
            if gap <= BINDING_REL_TOL {
                kappa_bound.binding_slots += 1;
                kappa_bound.max_binding_gap_rel = kappa_bound.max_binding_gap_rel.max(gap);
            }
        }
    }

    // analytic rate-distance slope vs central differences on solution geometry
    let mut pairs = Vec::new();
    for v in 0..scenario.vehicle_count() {
        for jm in 0..j_count {
            if scenario.present(v, jm + 1) && plan.kappa[v][jm] > 0.0 {
                pairs.push((v, jm));
            }
        }
    }
    let stride = (pairs.len() / 100).max(1);
    let mut derivative = DerivativeCheck { points: 0, all_negative: true, max_fd_rel_err: 0.0 };
    for (v, jm) in pairs.into_iter().step_by(stride) {
        let d = uav_vehicle_distance(
            scenario.vehicles[v].position(jm + 1),
            traj.xy[jm + 1],
            scenario.uav_altitude,
        );
        let kappa = plan.kappa[v][jm];
        let analytic = rate_distance_derivative(
            kappa,
            scenario.bandwidth,
            scenario.comm_power_per_vehicle,
            scenario.reference_gain,
            scenario.noise_vehicle,
            d,
        );
        let h = d * 1e-6;
        let rate_at = |dist: f64| {
            instantaneous_rate(
                kappa,
                scenario.bandwidth,
                scenario.comm_power_per_vehicle,
                scenario.reference_gain,
                scenario.noise_vehicle,
                dist,
            )
        };
        let fd = (rate_at(d + h) - rate_at(d - h)) / (2.0 * h);
        derivative.points += 1;
        derivative.all_negative &= analytic < 0.0;
        let err = (analytic - fd).abs() / fd.abs().max(1e-300);
        derivative.max_fd_rel_err = derivative.max_fd_rel_err.max(err);
    }

    let checks = vec![
        floors.into_check("rate_floor_9b", floors_enforced),
        backhaul.into_check("backhaul_9c", false), // reported, gated separately
        power.into_check("power_9d", true),
        mobility.into_check("mobility_9e", true),
        road_box.into_check("road_box_9f_9g", true),
        share_range.into_check("share_range_9h", true),
        simplex.into_check("share_simplex_9i", true),
        absent_zero.into_check("absent_share_zero", true),
    ];
    let backhaul_now_rel = checks[1].max_violation_rel;
    let valid = checks.iter().all(ConstraintCheck::passes)
        && backhaul_now_rel <= BACKHAUL_EXCESS_REL_TOL
        && derivative.all_negative;

    VerificationReport {
        floors_enforced,
        checks,
        backhaul_excess_pre_repair_bps,
        backhaul_excess_pre_repair_rel,
        repaired_slots,
        kappa_bound,
        rate_derivative: derivative,
        valid,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandwidth::solve_bandwidth;
    use crate::testkit;

    #[test]
    fn lp_solution_verifies_clean() {
        let scenario = testkit::multi_slot_scenario(8);
        let traj = testkit::cruise_trajectory(&scenario, 25.0);
        let plan = solve_bandwidth(&scenario, &traj).unwrap();
        let report = verify_solution(&scenario, &traj, &plan, true, 0.0, 0.0, 0);
        assert!(report.valid, "{}", report.render_text());
        assert!(report.rate_derivative.all_negative);
        assert!(report.rate_derivative.max_fd_rel_err <= 1e-6);
        // the LP leaves floors binding at every present high-speed slot
        assert!(report.kappa_bound.binding_slots > 0);
        assert!(report.kappa_bound.max_shortfall_rel <= 1e-6);
    }

    #[test]
    fn planted_floor_violation_is_flagged() {
        let scenario = testkit::multi_slot_scenario(8);
        let traj = testkit::cruise_trajectory(&scenario, 25.0);
        let mut plan = solve_bandwidth(&scenario, &traj).unwrap();
        // cut the first high-speed vehicle's share in a present slot
        let v = scenario.high_speed_indices()[0];
        let jm = (0..scenario.slot_count)
            .find(|&jm| scenario.present(v, jm + 1))
            .unwrap();
        plan.kappa[v][jm] *= 0.5;
        let report = verify_solution(&scenario, &traj, &plan, true, 0.0, 0.0, 0);
        assert!(!report.valid);
        let floor_check = &report.checks[0];
        assert_eq!(floor_check.name, "rate_floor_9b");
        assert!(floor_check.max_violation_rel > 0.4);
        assert!(floor_check.worst.contains(&format!("v{v}")));
    }

    #[test]
    fn planted_mobility_violation_is_flagged() {
        let scenario = testkit::multi_slot_scenario(8);
        let mut traj = testkit::cruise_trajectory(&scenario, 25.0);
        traj.xy[3][0] += 1000.0; // impossible hop
        let plan = solve_bandwidth(&scenario, &testkit::cruise_trajectory(&scenario, 25.0)).unwrap();
        let report = verify_solution(&scenario, &traj, &plan, true, 0.0, 0.0, 0);
        assert!(!report.valid);
        let mobility = report.checks.iter().find(|c| c.name == "mobility_9e").unwrap();
        assert!(mobility.max_violation_abs > 0.0);
    }

    #[test]
    fn text_rendering_is_deterministic() {
        let scenario = testkit::multi_slot_scenario(5);
        let traj = testkit::cruise_trajectory(&scenario, 25.0);
        let plan = solve_bandwidth(&scenario, &traj).unwrap();
        let a = verify_solution(&scenario, &traj, &plan, true, 0.0, 0.0, 0);
        let b = verify_solution(&scenario, &traj, &plan, true, 0.0, 0.0, 0);
        assert_eq!(a.render_text(), b.render_text());
        assert!(a.render_text().contains("valid: true"));
    }

    #[test]
    fn float17_round_trips() {
        for &x in &[1.0f64, -2.5e-7, 3.9810717055349734e1, f64::MIN_POSITIVE, 12345.6789] {
            let s = fmt_float17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }
}
