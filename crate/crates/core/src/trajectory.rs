//! Trajectory subproblem: with bandwidth shares fixed, reshape the flight
//! path by successive convex approximation.
//!
//! Each rate is rewritten over a squared-distance surrogate `t` and bounded
//! below by its tangent at the current local point; the induced-power radical
//! is handled through an auxiliary factor `D` whose defining equality is
//! relaxed to an inequality and linearized the same way. The resulting convex
//! program (linear rate rows, quadratic distance rows, a norm epigraph cone
//! for the per-slot speed, and two smooth rows per slot) is re-solved around
//! the fresh solution until the true objective stops improving.
//!
//! Internally the builder works in km / km^2 / Mbit/s so every variable sits
//! within a few orders of magnitude of unity; results are unscaled on exit.

use thiserror::Error;

use crate::bandwidth::{min_normal_average, rate_coefficients, BandwidthPlan, KAPPA_ACTIVE_MIN};
use crate::link::{
    backhaul_distance, induced_power_factor, max_speed_within_power, uav_speed_profile,
    uav_vehicle_distance, Trajectory, LOG2_E,
};
use crate::scenario::ScenarioConfig;
use crate::solver::{
    solve, ConeCon, ConvexProgram, QuadCon, SmoothConstraint, SolveOptions, SolveStatus, SparseLin,
};

/// Position scale (m -> km); squared distances carry its square.
const POS_SCALE: f64 = 1e-3;
/// Rate scale (bit/s -> Mbit/s).
const RATE_SCALE: f64 = 1e6;
/// Lower bound replacing `D >= 0` so `1/D^2` stays differentiable.
const D_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory subproblem infeasible at iteration {iteration}: {constraint} (violation {violation:.3e})")]
    Infeasible { iteration: usize, constraint: String, violation: f64 },
    #[error("trajectory solver failure at iteration {iteration}: {status:?}")]
    Solver { iteration: usize, status: SolveStatus },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Tangent of the concave rate curve `t -> log2(1 + a/t)` at `t_r`:
/// intercept `alpha = log2(1 + a/t_r)` and slope magnitude
/// `phi = log2(e) * a / ((t_r + a) t_r)`, so that
/// `-phi (t - t_r) + alpha` bounds the curve from below everywhere.
pub fn linearize_rate(t_r: f64, a: f64) -> (f64, f64) {
    let alpha = (1.0 + a / t_r).log2();
    let phi = LOG2_E * a / ((t_r + a) * t_r);
    (alpha, phi)
}

/// Affine lower bound of `(D, s) -> D^2 + s^2/s0^2` at `(d_ref, s_ref)`.
#[derive(Debug, Clone, Copy)]
pub struct PowerRhsBound {
    pub d_coef: f64,
    pub s_coef: f64,
    pub constant: f64,
}

impl PowerRhsBound {
    pub fn eval(&self, d: f64, s: f64) -> f64 {
        self.d_coef * d + self.s_coef * s + self.constant
    }
}

/// First-order expansion of the convex right-hand side of the radical
/// identity: `2 d_ref D - d_ref^2 + (2 s_ref s - s_ref^2)/s0^2`.
pub fn linearize_power_rhs(d_ref: f64, s_ref: f64, s0: f64) -> PowerRhsBound {
    let s0_sq = s0 * s0;
    PowerRhsBound {
        d_coef: 2.0 * d_ref,
        s_coef: 2.0 * s_ref / s0_sq,
        constant: -d_ref * d_ref - s_ref * s_ref / s0_sq,
    }
}

/// Expansion point for one convexification round: exact squared distances,
/// the exact induced-power factor, and the speed profile of a trajectory.
#[derive(Debug, Clone)]
pub struct ScaLocalPoint {
    /// Squared UAV-vehicle distances `t[v][j-1]` [m^2].
    pub t: Vec<Vec<f64>>,
    /// Squared UAV-BS distances per slot [m^2].
    pub t_b: Vec<f64>,
    /// Induced-power factor per slot at the trajectory's speeds.
    pub radical: Vec<f64>,
    /// Speed profile [m/s].
    pub speeds: Vec<f64>,
    pub trajectory: Trajectory,
}

/// Builds the expansion point at `traj` with every surrogate tight: `t` holds
/// the exact squared distances and `D` the exact radical value, so all tangent
/// bounds coincide with the true curves at this point.
pub fn init_local_point(scenario: &ScenarioConfig, traj: &Trajectory) -> ScaLocalPoint {
    let j_count = scenario.slot_count;
    let z = scenario.uav_altitude;
    let t = (0..scenario.vehicle_count())
        .map(|v| {
            (1..=j_count)
                .map(|j| {
                    let d = uav_vehicle_distance(scenario.vehicles[v].position(j), traj.xy[j], z);
                    d * d
                })
                .collect()
        })
        .collect();
    let t_b = (1..=j_count)
        .map(|j| {
            let d = backhaul_distance(traj.xy[j], z, scenario.bs_position);
            d * d
        })
        .collect();
    let speeds = uav_speed_profile(traj, scenario.slot_len);
    let radical = speeds
        .iter()
        .map(|&s| induced_power_factor(s, scenario.power_model.hover_induced_speed))
        .collect();
    ScaLocalPoint { t, t_b, radical, speeds, trajectory: traj.clone() }
}

/// Column layout of the built subproblem.
pub struct TrajVarMap {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    pub s: Vec<usize>,
    pub d: Vec<usize>,
    /// `t[v][j-1]`, present+allocated pairs only.
    pub t: Vec<Vec<Option<usize>>>,
    pub eta: usize,
}

/// Per-slot total power cap: `const + pq s^2 + pi D + pc s^3 <= 0` form.
#[derive(Clone)]
struct PowerCapCon {
    support: Vec<usize>, // [s, d]
    profile_quad: f64,
    induced: f64,
    parasite: f64,
    constant: f64,
}

impl SmoothConstraint for PowerCapCon {
    fn support(&self) -> &[usize] {
        &self.support
    }
    fn value(&self, x: &[f64]) -> f64 {
        let s = x[self.support[0]];
        let d = x[self.support[1]];
        self.constant + self.profile_quad * s * s + self.induced * d + self.parasite * s * s * s
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let s = x[self.support[0]];
        out[0] = 2.0 * self.profile_quad * s + 3.0 * self.parasite * s * s;
        out[1] = self.induced;
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let s = x[self.support[0]];
        out.fill(0.0);
        out[0] = 2.0 * self.profile_quad + 6.0 * self.parasite * s;
    }
    fn clone_box(&self) -> Box<dyn SmoothConstraint> {
        Box::new(self.clone())
    }
}

/// Linearized radical identity: `1/D^2 <=` affine(D, s), kept as
/// `1/D^2 - affine <= 0`.
#[derive(Clone)]
struct RadicalBoundCon {
    support: Vec<usize>, // [d, s]
    bound: PowerRhsBound,
}

impl SmoothConstraint for RadicalBoundCon {
    fn support(&self) -> &[usize] {
        &self.support
    }
    fn value(&self, x: &[f64]) -> f64 {
        let d = x[self.support[0]];
        let s = x[self.support[1]];
        1.0 / (d * d) - self.bound.eval(d, s)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = x[self.support[0]];
        out[0] = -2.0 / (d * d * d) - self.bound.d_coef;
        out[1] = -self.bound.s_coef;
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = x[self.support[0]];
        out.fill(0.0);
        out[0] = 6.0 / (d * d * d * d);
    }
    fn clone_box(&self) -> Box<dyn SmoothConstraint> {
        Box::new(self.clone())
    }
}

/// Whether the pair `(v, j)` carries bandwidth worth modeling.
fn active(scenario: &ScenarioConfig, plan: &BandwidthPlan, v: usize, j: usize) -> bool {
    scenario.present(v, j) && plan.kappa[v][j - 1] > KAPPA_ACTIVE_MIN
}

/// Assembles the convexified trajectory program around `local`.
///
/// `floor_relax_bps` uniformly lowers the instantaneous floors (recovery
/// mode); `enforce_floors = false` drops them entirely (equal-share baseline,
/// where no share reallocation could restore them anyway).
pub fn build_trajectory_subproblem(
    scenario: &ScenarioConfig,
    plan: &BandwidthPlan,
    local: &ScaLocalPoint,
    enforce_floors: bool,
    floor_relax_bps: f64,
) -> (ConvexProgram, TrajVarMap) {
    let j_count = scenario.slot_count;
    let v_count = scenario.vehicle_count();
    let a_access = scenario.access_snr_factor() * POS_SCALE * POS_SCALE; // km^2
    let a_backhaul = scenario.backhaul_snr_factor() * POS_SCALE * POS_SCALE;
    let b_access = scenario.bandwidth / RATE_SCALE;
    let b_backhaul = scenario.backhaul_bandwidth / RATE_SCALE;
    let z_km = scenario.uav_altitude * POS_SCALE;
    let dz_km = (scenario.bs_position[2] - scenario.uav_altitude) * POS_SCALE;
    let ex_km = scenario.road_length * POS_SCALE;
    let ey_km = scenario.road_width * POS_SCALE;
    let dt_km = scenario.slot_len * POS_SCALE;

    // column layout: per slot [x, y, s, D, t_v...], then eta; the backhaul
    // distance surrogate is substituted away (it only ever relaxes its rows,
    // so at any optimum it sits at the exact squared distance)
    let mut x_idx = Vec::with_capacity(j_count);
    let mut y_idx = Vec::with_capacity(j_count);
    let mut s_idx = Vec::with_capacity(j_count);
    let mut d_idx = Vec::with_capacity(j_count);
    let mut t_idx = vec![vec![None; j_count]; v_count];
    let mut n = 0;
    for jm in 0..j_count {
        x_idx.push(n);
        y_idx.push(n + 1);
        s_idx.push(n + 2);
        d_idx.push(n + 3);
        n += 4;
        for (v, row) in t_idx.iter_mut().enumerate() {
            if active(scenario, plan, v, jm + 1) {
                row[jm] = Some(n);
                n += 1;
            }
        }
    }
    let eta = n;
    n += 1;

    let mut prog = ConvexProgram::new(n);
    prog.set_objective_coef(eta, 1.0);
    prog.name_var(eta, "eta");

    let t_v_hi = 1.01 * (z_km * z_km + ex_km * ex_km + ey_km * ey_km);
    let bs = scenario.bs_position;
    let eta_cap = scenario.rate_upper_bound() / RATE_SCALE + 1.0;

    for jm in 0..j_count {
        let j = jm + 1;
        prog.name_var(x_idx[jm], format!("x[{j}]"));
        prog.name_var(y_idx[jm], format!("y[{j}]"));
        prog.name_var(s_idx[jm], format!("speed[{j}]"));
        prog.name_var(d_idx[jm], format!("radical[{j}]"));
        prog.add_bounds(format!("x_range[{j}]"), x_idx[jm], Some(0.0), Some(ex_km));
        prog.add_bounds(format!("y_range[{j}]"), y_idx[jm], Some(0.0), Some(ey_km));
        prog.add_bounds(format!("speed_range[{j}]"), s_idx[jm], Some(0.0), Some(scenario.uav_max_speed));
        prog.add_bounds(format!("radical_range[{j}]"), d_idx[jm], Some(D_FLOOR), Some(1.05));
        for (v, row) in t_idx.iter().enumerate() {
            if let Some(idx) = row[jm] {
                prog.name_var(idx, format!("t[v{v},{j}]"));
                prog.add_bounds(
                    format!("t_range[v{v},{j}]"),
                    idx,
                    Some(0.9 * z_km * z_km),
                    Some(t_v_hi),
                );
            }
        }
    }
    prog.add_bounds("eta_range", eta, Some(-0.01 * eta_cap), Some(eta_cap));

    // average linearized rate per normal vehicle >= eta
    for v in scenario.normal_indices() {
        let mut entries = vec![(eta, 1.0)];
        let mut rhs = 0.0;
        for jm in 0..j_count {
            if let Some(idx) = t_idx[v][jm] {
                let kappa = plan.kappa[v][jm];
                let t_r = local.t[v][jm] * POS_SCALE * POS_SCALE;
                let (alpha, phi) = linearize_rate(t_r, a_access);
                let w = b_access * kappa / j_count as f64;
                entries.push((idx, w * phi));
                rhs += w * (alpha + phi * t_r);
            }
        }
        prog.add_linear(format!("avg_rate[v{v}]"), entries, rhs);
    }

    // instantaneous linearized floor per active high-speed slot
    if enforce_floors {
        for v in scenario.high_speed_indices() {
            let floor = ((scenario.vehicle_floor(v) - floor_relax_bps) / RATE_SCALE).max(0.0);
            for jm in 0..j_count {
                if let Some(idx) = t_idx[v][jm] {
                    let kappa = plan.kappa[v][jm];
                    let t_r = local.t[v][jm] * POS_SCALE * POS_SCALE;
                    let (alpha, phi) = linearize_rate(t_r, a_access);
                    let w = b_access * kappa;
                    prog.add_linear(
                        format!("rate_floor[v{v},slot{}]", jm + 1),
                        [(idx, w * phi)],
                        w * (alpha + phi * t_r) - floor,
                    );
                }
            }
        }
    }

    // per-slot: sum of linearized vehicle rates <= linearized backhaul rate,
    // with the backhaul squared distance written directly over (x, y)
    for jm in 0..j_count {
        let t_br = local.t_b[jm] * POS_SCALE * POS_SCALE;
        let (alpha_b, phi_b) = linearize_rate(t_br, a_backhaul);
        let c_b = b_backhaul * phi_b;
        let mut rhs_lin = Vec::new();
        let mut rhs_const = b_backhaul * (alpha_b + phi_b * t_br) - c_b * dz_km * dz_km;
        let mut any = false;
        for (v, row) in t_idx.iter().enumerate() {
            if let Some(idx) = row[jm] {
                let kappa = plan.kappa[v][jm];
                let t_r = local.t[v][jm] * POS_SCALE * POS_SCALE;
                let (alpha, phi) = linearize_rate(t_r, a_access);
                let w = b_access * kappa;
                rhs_lin.push((idx, w * phi));
                rhs_const -= w * (alpha + phi * t_r);
                any = true;
            }
        }
        if any {
            let root = c_b.sqrt();
            prog.add_quadratic(
                format!("backhaul[slot{}]", jm + 1),
                QuadCon {
                    support: vec![x_idx[jm], y_idx[jm]],
                    rows: vec![vec![root, 0.0], vec![0.0, root]],
                    offsets: vec![-root * bs[0] * POS_SCALE, -root * bs[1] * POS_SCALE],
                    rhs: SparseLin::new(rhs_lin),
                    rhs_const,
                },
            );
        }
    }

    // per-slot power cap and the linearized radical identity
    let pm = &scenario.power_model;
    for jm in 0..j_count {
        prog.add_smooth(
            format!("power_cap[slot{}]", jm + 1),
            Box::new(PowerCapCon {
                support: vec![s_idx[jm], d_idx[jm]],
                profile_quad: 3.0 * pm.blade_profile_power / (pm.tip_speed * pm.tip_speed),
                induced: pm.induced_power,
                parasite: pm.parasite_coeff(),
                constant: scenario.total_comm_power + pm.blade_profile_power
                    - scenario.power_budget,
            }),
        );
        prog.add_smooth(
            format!("radical_bound[slot{}]", jm + 1),
            Box::new(RadicalBoundCon {
                support: vec![d_idx[jm], s_idx[jm]],
                bound: linearize_power_rhs(
                    local.radical[jm],
                    local.speeds[jm],
                    pm.hover_induced_speed,
                ),
            }),
        );
    }

    // squared-distance epigraphs, mobility, and the speed cone per slot
    let start_km = [scenario.uav_start[0] * POS_SCALE, scenario.uav_start[1] * POS_SCALE];
    for jm in 0..j_count {
        let j = jm + 1;
        for (v, row) in t_idx.iter().enumerate() {
            if let Some(idx) = row[jm] {
                let p_v = scenario.vehicles[v].position(j);
                prog.add_quadratic(
                    format!("vehicle_distance[v{v},slot{j}]"),
                    QuadCon {
                        support: vec![x_idx[jm], y_idx[jm]],
                        rows: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                        offsets: vec![-p_v[0] * POS_SCALE, -p_v[1] * POS_SCALE],
                        rhs: SparseLin::new([(idx, 1.0)]),
                        rhs_const: -z_km * z_km,
                    },
                );
            }
        }
        let (support, rows, offsets) = if jm == 0 {
            (
                vec![x_idx[0], y_idx[0]],
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![-start_km[0], -start_km[1]],
            )
        } else {
            (
                vec![x_idx[jm], y_idx[jm], x_idx[jm - 1], y_idx[jm - 1]],
                vec![vec![1.0, 0.0, -1.0, 0.0], vec![0.0, 1.0, 0.0, -1.0]],
                vec![0.0, 0.0],
            )
        };
        let step_cap = scenario.uav_max_speed * dt_km;
        prog.add_quadratic(
            format!("mobility[slot{j}]"),
            QuadCon {
                support: support.clone(),
                rows: rows.clone(),
                offsets: offsets.clone(),
                rhs: SparseLin::empty(),
                rhs_const: step_cap * step_cap,
            },
        );
        prog.add_cone(
            format!("speed_epigraph[slot{j}]"),
            ConeCon {
                support,
                rows,
                offsets,
                rhs: SparseLin::new([(s_idx[jm], dt_km)]),
                rhs_const: 0.0,
            },
        );
    }

    (prog, TrajVarMap { x: x_idx, y: y_idx, s: s_idx, d: d_idx, t: t_idx, eta })
}

/// Packs the local point into solver coordinates for warm starting.
fn pack_hint(
    scenario: &ScenarioConfig,
    plan: &BandwidthPlan,
    local: &ScaLocalPoint,
    map: &TrajVarMap,
    n: usize,
) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for jm in 0..scenario.slot_count {
        x[map.x[jm]] = local.trajectory.xy[jm + 1][0] * POS_SCALE;
        x[map.y[jm]] = local.trajectory.xy[jm + 1][1] * POS_SCALE;
        x[map.s[jm]] = local.speeds[jm];
        x[map.d[jm]] = local.radical[jm].max(D_FLOOR * 2.0);
        for (v, row) in map.t.iter().enumerate() {
            if let Some(idx) = row[jm] {
                x[idx] = local.t[v][jm] * POS_SCALE * POS_SCALE;
            }
        }
    }
    let coeffs = rate_coefficients(scenario, &local.trajectory);
    let true_eta = min_normal_average(scenario, &coeffs, plan);
    x[map.eta] = true_eta / RATE_SCALE - 1e-6 * (1.0 + true_eta.abs() / RATE_SCALE);
    x
}

#[derive(Debug, Clone)]
pub struct ScaOptions {
    pub max_iterations: usize,
    /// Relative improvement threshold on the true objective.
    pub eps: f64,
    pub enforce_rate_floors: bool,
    /// Uniform floor relaxation for the feasibility-recovery pass [bit/s].
    pub floor_relax_bps: f64,
    pub solver: SolveOptions,
    /// Barrier weight used from the second expansion on, where the warm start
    /// is already near-optimal.
    pub warm_initial_t: f64,
}

impl ScaOptions {
    pub fn from_scenario(scenario: &ScenarioConfig) -> Self {
        Self {
            max_iterations: scenario.solver.max_sca_iterations,
            eps: scenario.convergence_eps,
            enforce_rate_floors: true,
            floor_relax_bps: 0.0,
            solver: SolveOptions {
                gap_tol: scenario.solver.gap_tol,
                feas_tol: scenario.solver.feas_tol,
                max_newton: scenario.solver.max_newton_steps,
                ..SolveOptions::default()
            },
            warm_initial_t: 100.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScaOutcome {
    pub trajectory: Trajectory,
    /// True (non-linearized) objective at the returned pair [bit/s].
    pub eta: f64,
    /// True objective per expansion, starting with the initial trajectory.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub newton_steps: usize,
}

/// True max-min objective of the fixed-share problem at `traj`.
pub fn true_objective(scenario: &ScenarioConfig, plan: &BandwidthPlan, traj: &Trajectory) -> f64 {
    let coeffs = rate_coefficients(scenario, traj);
    min_normal_average(scenario, &coeffs, plan)
}

/// Runs the convexify-solve-re-expand loop from `init_traj` with shares fixed.
///
/// The returned trace is nondecreasing: a re-expansion that fails to improve
/// the true objective (only possible through solver tolerance noise) ends the
/// loop with the previous trajectory kept.
pub fn optimize_trajectory(
    scenario: &ScenarioConfig,
    plan: &BandwidthPlan,
    init_traj: Trajectory,
    opts: &ScaOptions,
) -> Result<ScaOutcome, TrajectoryError> {
    init_traj
        .validate(
            scenario.road_length,
            scenario.road_width,
            scenario.uav_max_speed,
            scenario.slot_len,
            None,
        )
        .map_err(TrajectoryError::InvalidInput)?;
    let mut traj = init_traj;
    let mut trace = vec![true_objective(scenario, plan, &traj)];
    let mut newton_steps = 0;
    let mut iterations = 0;

    for iter in 1..=opts.max_iterations {
        iterations = iter;
        let local = init_local_point(scenario, &traj);
        let (prog, map) =
            build_trajectory_subproblem(scenario, plan, &local, opts.enforce_rate_floors, opts.floor_relax_bps);
        let mut solver_opts = opts.solver.clone();
        solver_opts.warm_start = Some(pack_hint(scenario, plan, &local, &map, prog.var_count()));
        if iter > 1 {
            solver_opts.initial_t = opts.warm_initial_t;
        }
        let t_solve = std::time::Instant::now();
        let report = solve(&prog, &solver_opts);
        log::debug!(
            "sca iter {iter}: n={} rows={} newton={} stages={} status={:?} in {:.2}s",
            prog.var_count(),
            prog.constraint_count(),
            report.newton_steps,
            report.barrier_stages,
            report.status,
            t_solve.elapsed().as_secs_f64()
        );
        newton_steps += report.newton_steps;
        match report.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => {
                return Err(TrajectoryError::Infeasible {
                    iteration: iter,
                    constraint: report.infeasible_constraint.unwrap_or_else(|| "unknown".into()),
                    violation: report.max_violation,
                })
            }
            status => return Err(TrajectoryError::Solver { iteration: iter, status }),
        }

        let mut xy = vec![scenario.uav_start];
        for jm in 0..scenario.slot_count {
            xy.push([
                report.point[map.x[jm]] / POS_SCALE,
                report.point[map.y[jm]] / POS_SCALE,
            ]);
        }
        let candidate = Trajectory { xy, altitude: scenario.uav_altitude };
        let f_prev = *trace.last().unwrap();
        let f_new = true_objective(scenario, plan, &candidate);
        if f_new < f_prev - 1e-9 * f_prev.abs().max(1e-12) {
            log::debug!(
                "expansion {iter} regressed the true objective ({f_prev} -> {f_new}); keeping previous trajectory"
            );
            break;
        }
        traj = candidate;
        trace.push(f_new);
        if f_new - f_prev <= opts.eps * f_prev.abs().max(1.0) {
            break;
        }
    }

    Ok(ScaOutcome {
        eta: *trace.last().unwrap(),
        trajectory: traj,
        trace,
        iterations,
        newton_steps,
    })
}

/// Straight-line start: cruise along the lane of the start point at the
/// largest speed that the road length, the speed limit, and the power budget
/// all allow, clipping at the far end of the road.
pub fn initial_trajectory(scenario: &ScenarioConfig) -> Trajectory {
    let cap = max_speed_within_power(
        &scenario.power_model,
        scenario.total_comm_power,
        scenario.power_budget,
        scenario.uav_max_speed,
    );
    let cruise = (scenario.road_length / scenario.flight_duration)
        .min(scenario.uav_max_speed)
        .min(0.999 * cap);
    let mut xy = vec![scenario.uav_start];
    for j in 1..=scenario.slot_count {
        let x = (scenario.uav_start[0] + j as f64 * cruise * scenario.slot_len)
            .min(scenario.road_length);
        xy.push([x, scenario.uav_start[1]]);
    }
    Trajectory { xy, altitude: scenario.uav_altitude }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linearize_rate_reference_point() {
        let (alpha, phi) = linearize_rate(1.0, 1.0);
        assert_relative_eq!(alpha, 1.0, max_relative = 1e-15);
        assert_relative_eq!(phi, LOG2_E / 2.0, max_relative = 1e-15);
    }

    #[test]
    fn rate_tangent_is_tight_and_global() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a = 10f64.powf(rng.gen_range(4.0..12.0));
            let t_r = 10f64.powf(rng.gen_range(3.0..9.0));
            let (alpha, phi) = linearize_rate(t_r, a);
            // tangency at the expansion point
            let truth_r = (1.0 + a / t_r).log2();
            assert_relative_eq!(alpha, truth_r, max_relative = 1e-14);
            // global lower bound at random probe points
            for _ in 0..10 {
                let t = 10f64.powf(rng.gen_range(3.0..9.0));
                let bound = -phi * (t - t_r) + alpha;
                let truth = (1.0 + a / t).log2();
                assert!(
                    bound <= truth + 1e-12 * truth.abs().max(1.0),
                    "bound {bound} above true {truth} at t={t}, t_r={t_r}, a={a}"
                );
            }
        }
    }

    #[test]
    fn power_rhs_tangency_examples() {
        // (d_ref, s_ref) = (1, 0): bound is 2D - 1, tight at D = 1
        let b = linearize_power_rhs(1.0, 0.0, 5.4);
        assert_relative_eq!(b.eval(1.0, 0.0), 1.0, max_relative = 1e-15);
        assert_relative_eq!(b.d_coef, 2.0);
        assert_relative_eq!(b.constant, -1.0);
        // (0, 0): bound is identically 0, below any sum of squares
        let zero = linearize_power_rhs(0.0, 0.0, 5.4);
        for (d, s) in [(0.5, 10.0), (1.0, 0.0), (0.2, 37.0)] {
            assert_eq!(zero.eval(d, s), 0.0);
            assert!(0.0 <= d * d + s * s / (5.4f64 * 5.4));
        }
    }

    #[test]
    fn power_rhs_global_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s0 = 5.4;
        for _ in 0..200 {
            let d_ref = rng.gen_range(0.0..1.5);
            let s_ref = rng.gen_range(0.0..60.0);
            let b = linearize_power_rhs(d_ref, s_ref, s0);
            // tight at the expansion point
            let exact_ref = d_ref * d_ref + s_ref * s_ref / (s0 * s0);
            assert_relative_eq!(b.eval(d_ref, s_ref), exact_ref, max_relative = 1e-12);
            let (d, s) = (rng.gen_range(0.0..1.5), rng.gen_range(0.0..60.0));
            let exact = d * d + s * s / (s0 * s0);
            assert!(b.eval(d, s) <= exact + 1e-12 * exact.max(1.0));
        }
    }

    #[test]
    fn local_point_is_consistent() {
        let scenario = testkit::multi_slot_scenario(6);
        let hover = Trajectory::hover(scenario.uav_start, scenario.uav_altitude, 6);
        let local = init_local_point(&scenario, &hover);
        // hover collapses the radical to exactly 1
        assert!(local.radical.iter().all(|&d| d == 1.0));
        assert!(local.speeds.iter().all(|&s| s == 0.0));

        let cruise = testkit::cruise_trajectory(&scenario, 30.0);
        let local = init_local_point(&scenario, &cruise);
        for jm in 0..6 {
            assert_relative_eq!(local.speeds[jm], 30.0, max_relative = 1e-12);
            assert_relative_eq!(local.radical[jm], 0.1799056947361243, max_relative = 1e-12);
            // surrogates equal the exact squared distances at initialization
            for v in 0..scenario.vehicle_count() {
                let d = uav_vehicle_distance(
                    scenario.vehicles[v].position(jm + 1),
                    cruise.xy[jm + 1],
                    scenario.uav_altitude,
                );
                assert_relative_eq!(local.t[v][jm], d * d, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn linearized_objective_matches_truth_at_expansion() {
        // at the expansion point every tangent is tight, so the linearized
        // average rates coincide with the true ones
        let scenario = testkit::multi_slot_scenario(5);
        let traj = testkit::cruise_trajectory(&scenario, 25.0);
        let plan = BandwidthPlan::equal_split_present(&scenario);
        let local = init_local_point(&scenario, &traj);
        let a = scenario.access_snr_factor();
        let coeffs = rate_coefficients(&scenario, &traj);
        for v in scenario.normal_indices() {
            let mut lin_avg = 0.0;
            for jm in 0..scenario.slot_count {
                if active(&scenario, &plan, v, jm + 1) {
                    let (alpha, _) = linearize_rate(local.t[v][jm], a);
                    lin_avg += scenario.bandwidth * plan.kappa[v][jm] * alpha;
                }
            }
            lin_avg /= scenario.slot_count as f64;
            let true_avg: f64 = coeffs[v]
                .iter()
                .zip(&plan.kappa[v])
                .map(|(&c, &k)| c * k)
                .sum::<f64>()
                / scenario.slot_count as f64;
            assert_relative_eq!(lin_avg, true_avg, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_slot_chase_matches_grid_oracle() {
        // J = 1, one normal vehicle: the best move is the longest step toward
        // the vehicle that mobility, the road box, and the power budget allow.
        let scenario = testkit::single_slot_scenario(vec![(30.0, 18.75, 400.0, None)]);
        let plan = BandwidthPlan { kappa: vec![vec![1.0]], eta: 0.0 };
        let init = Trajectory::hover(scenario.uav_start, scenario.uav_altitude, 1);

        let mut opts = ScaOptions::from_scenario(&scenario);
        opts.eps = 1e-7;
        opts.max_iterations = 40;
        let out = optimize_trajectory(&scenario, &plan, init, &opts).unwrap();

        // grid oracle at 1 m resolution over the reachable box
        let cap = max_speed_within_power(
            &scenario.power_model,
            scenario.total_comm_power,
            scenario.power_budget,
            scenario.uav_max_speed,
        );
        let reach = (cap * scenario.slot_len).min(scenario.uav_max_speed * scenario.slot_len);
        let target = scenario.vehicles[0].position(1);
        let start = scenario.uav_start;
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for xi in 0..=300 {
            for yi in 0..=50 {
                let p = [xi as f64, yi as f64];
                let step = ((p[0] - start[0]).powi(2) + (p[1] - start[1]).powi(2)).sqrt();
                if step > reach {
                    continue;
                }
                let d2 = (p[0] - target[0]).powi(2) + (p[1] - target[1]).powi(2);
                if d2 < best.0 {
                    best = (d2, p);
                }
            }
        }
        let got = out.trajectory.xy[1];
        let dist = ((got[0] - best.1[0]).powi(2) + (got[1] - best.1[1]).powi(2)).sqrt();
        assert!(
            dist <= 5.0,
            "final position {got:?} vs oracle {:?} ({dist:.2} m apart)",
            best.1
        );
        // trace is nondecreasing and improved over the hover start
        for w in out.trace.windows(2) {
            assert!(w[1] >= w[0] * (1.0 - 1e-9));
        }
        assert!(out.eta > out.trace[0]);
    }

    #[test]
    fn fixed_point_terminates_immediately() {
        // hovering over the only vehicle with zero room to improve: one
        // expansion, no movement beyond tolerance
        let scenario = testkit::single_slot_scenario(vec![(30.0, 25.0, 0.0, None)]);
        let target = scenario.vehicles[0].position(1);
        let plan = BandwidthPlan { kappa: vec![vec![1.0]], eta: 0.0 };
        // start exactly over the vehicle's slot-1 position (reachable: 120 m)
        let init = Trajectory {
            xy: vec![scenario.uav_start, target],
            altitude: scenario.uav_altitude,
        };
        let mut opts = ScaOptions::from_scenario(&scenario);
        opts.eps = 1e-6;
        let out = optimize_trajectory(&scenario, &plan, init, &opts).unwrap();
        assert!(out.iterations <= 2, "took {} iterations", out.iterations);
        let moved = ((out.trajectory.xy[1][0] - target[0]).powi(2)
            + (out.trajectory.xy[1][1] - target[1]).powi(2))
        .sqrt();
        assert!(moved < 1.0, "drifted {moved} m from the optimum");
    }

    #[test]
    fn initial_trajectory_is_feasible() {
        let scenario = testkit::multi_slot_scenario(10);
        let traj = initial_trajectory(&scenario);
        traj.validate(
            scenario.road_length,
            scenario.road_width,
            scenario.uav_max_speed,
            scenario.slot_len,
            Some(scenario.uav_start),
        )
        .unwrap();
        // strictly inside the power budget
        for &s in &traj.speed_profile(scenario.slot_len) {
            let p = crate::link::propulsion_plus_comm_power(
                s,
                &scenario.power_model,
                scenario.total_comm_power,
            );
            assert!(p < scenario.power_budget);
        }
    }
}
