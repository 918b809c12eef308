//! Artifact files written next to every run: plain CSV tables with
//! 17-significant-digit floats (exact f64 round trips), a text verification
//! report, and a JSON manifest. Writes go through a temp file plus rename.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use uavnet_core::bandwidth::{backhaul_profile, BandwidthPlan};
use uavnet_core::driver::{Mode, Solution};
use uavnet_core::link::{propulsion_plus_comm_power, Trajectory};
use uavnet_core::scenario::ScenarioConfig;
use uavnet_core::verify::fmt_float17;

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const RATES_CSV: &str = "rates.csv";
pub const ALLOCATION_CSV: &str = "allocation.csv";
pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const VERIFY_TXT: &str = "verify.txt";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const SWEEP_CSV: &str = "sweep.csv";

/// Everything needed to reproduce a run and to re-verify its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_path: String,
    pub seed: Option<u64>,
    pub modes: Vec<String>,
    pub eps_override: Option<f64>,
    pub max_outer_override: Option<usize>,
    pub output_dir: String,
    pub tool_version: String,
    /// Wall-clock duration; informational only, excluded from validation.
    pub duration_seconds: f64,
}

pub fn write_atomic(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let tmp = dir.join(format!(".tmp-{name}"));
    fs::write(&tmp, content).with_context(|| format!("writing {}", tmp.display()))?;
    let target = dir.join(name);
    fs::rename(&tmp, &target)
        .with_context(|| format!("renaming into place: {}", target.display()))?;
    Ok(target)
}

pub fn render_trajectory_csv(scenario: &ScenarioConfig, traj: &Trajectory) -> String {
    let mut out = String::from("slot,x_m,y_m,speed_mps,power_w\n");
    let speeds = traj.speed_profile(scenario.slot_len);
    for (j, w) in traj.xy.iter().enumerate() {
        let speed = if j == 0 { 0.0 } else { speeds[j - 1] };
        let power =
            propulsion_plus_comm_power(speed, &scenario.power_model, scenario.total_comm_power);
        out.push_str(&format!(
            "{j},{},{},{},{}\n",
            fmt_float17(w[0]),
            fmt_float17(w[1]),
            fmt_float17(speed),
            fmt_float17(power)
        ));
    }
    out
}

pub fn render_rates_csv(scenario: &ScenarioConfig, sol: &Solution) -> String {
    let mut header = String::from("slot");
    for v in 0..scenario.vehicle_count() {
        header.push_str(&format!(",rate_v{v}_bps"));
    }
    header.push_str(",backhaul_capacity_bps,offered_load_bps\n");
    let rb = backhaul_profile(scenario, &sol.trajectory);
    let mut out = header;
    for jm in 0..scenario.slot_count {
        out.push_str(&format!("{}", jm + 1));
        let mut load = 0.0;
        for v in 0..scenario.vehicle_count() {
            let r = sol.per_slot_rates[v][jm];
            load += r;
            out.push_str(&format!(",{}", fmt_float17(r)));
        }
        out.push_str(&format!(",{},{}\n", fmt_float17(rb[jm]), fmt_float17(load)));
    }
    out
}

pub fn render_allocation_csv(scenario: &ScenarioConfig, plan: &BandwidthPlan) -> String {
    let mut out = String::from("slot");
    for v in 0..scenario.vehicle_count() {
        out.push_str(&format!(",kappa_v{v}"));
    }
    out.push('\n');
    for jm in 0..scenario.slot_count {
        out.push_str(&format!("{}", jm + 1));
        for v in 0..scenario.vehicle_count() {
            out.push_str(&format!(",{}", fmt_float17(plan.kappa[v][jm])));
        }
        out.push('\n');
    }
    out
}

pub fn render_convergence_csv(sol: &Solution) -> String {
    let mut out = String::from("round,eta_bps\n");
    for (r, eta) in sol.outer_trace.iter().enumerate() {
        out.push_str(&format!("{r},{}\n", fmt_float17(*eta)));
    }
    out
}

pub struct ParsedTrajectory {
    pub trajectory: Trajectory,
}

pub fn parse_trajectory_csv(path: &Path, altitude: f64) -> Result<ParsedTrajectory> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut xy = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if !line.starts_with("slot,x_m,y_m") {
                bail!("unexpected trajectory.csv header: {line}");
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            bail!("trajectory.csv line {} has {} fields", i + 1, fields.len());
        }
        let x: f64 = fields[1].parse().context("trajectory x")?;
        let y: f64 = fields[2].parse().context("trajectory y")?;
        xy.push([x, y]);
    }
    if xy.is_empty() {
        bail!("trajectory.csv holds no waypoints");
    }
    Ok(ParsedTrajectory { trajectory: Trajectory { xy, altitude } })
}

pub fn parse_allocation_csv(path: &Path, vehicles: usize, slots: usize) -> Result<BandwidthPlan> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut kappa = vec![vec![0.0; slots]; vehicles];
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if !line.starts_with("slot,kappa_v0") {
                bail!("unexpected allocation.csv header: {line}");
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != vehicles + 1 {
            bail!("allocation.csv line {} has {} fields, expected {}", i + 1, fields.len(), vehicles + 1);
        }
        let slot: usize = fields[0].parse().context("allocation slot")?;
        if slot == 0 || slot > slots {
            bail!("allocation.csv slot {slot} out of range 1..={slots}");
        }
        for v in 0..vehicles {
            kappa[v][slot - 1] = fields[v + 1].parse().context("allocation share")?;
        }
        rows += 1;
    }
    if rows != slots {
        bail!("allocation.csv holds {rows} slot rows, expected {slots}");
    }
    Ok(BandwidthPlan { kappa, eta: 0.0 })
}

pub fn write_solution_artifacts(
    dir: &Path,
    scenario: &ScenarioConfig,
    sol: &Solution,
    manifest: &RunManifest,
) -> Result<()> {
    write_atomic(dir, TRAJECTORY_CSV, &render_trajectory_csv(scenario, &sol.trajectory))?;
    write_atomic(dir, RATES_CSV, &render_rates_csv(scenario, sol))?;
    write_atomic(dir, ALLOCATION_CSV, &render_allocation_csv(scenario, &sol.plan))?;
    write_atomic(dir, CONVERGENCE_CSV, &render_convergence_csv(sol))?;
    write_atomic(dir, VERIFY_TXT, &sol.verification.render_text())?;
    let manifest_json = serde_json::to_string_pretty(manifest)? + "\n";
    write_atomic(dir, MANIFEST_JSON, &manifest_json)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_JSON);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn mode_of_manifest(manifest: &RunManifest) -> Result<Mode> {
    let Some(first) = manifest.modes.first() else {
        bail!("manifest lists no modes");
    };
    first.parse::<Mode>().map_err(|e| anyhow::anyhow!(e))
}
