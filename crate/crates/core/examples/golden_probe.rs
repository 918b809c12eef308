// timing probe for the full-size reference run (removed before release if unneeded)
use std::time::Instant;
use uavnet_core::driver::{run_baseline, run_bca, BcaOptions, Mode};
use uavnet_core::scenario::load_scenario;

fn main() {
    env_logger::init();
    let scenario = load_scenario("scenarios/default.json").unwrap();
    let opts = BcaOptions::from_scenario(&scenario);
    println!(
        "scenario: V={} (high {:?}), J={}",
        scenario.vehicle_count(),
        scenario.high_speed_indices(),
        scenario.slot_count
    );
    let t0 = Instant::now();
    let sol = run_bca(&scenario, &opts).unwrap();
    println!(
        "proposed: eta={:.4e} bps, outer={} trace={:?} in {:.1}s",
        sol.eta,
        sol.outer_iterations,
        sol.outer_trace,
        t0.elapsed().as_secs_f64()
    );
    println!("valid={} report:\n{}", sol.verification.valid, sol.verification.render_text());
    let t1 = Instant::now();
    let hover = run_baseline(&scenario, Mode::CenterHover, &opts).unwrap();
    println!("center-hover: eta={:.4e} in {:.1}s", hover.eta, t1.elapsed().as_secs_f64());
    let t2 = Instant::now();
    let equal = run_baseline(&scenario, Mode::EqualBandwidth, &opts).unwrap();
    println!("equal-bandwidth: eta={:.4e} in {:.1}s", equal.eta, t2.elapsed().as_secs_f64());
    println!(
        "ratios: proposed/equal={:.2}, proposed/hover={:.2}",
        sol.eta / equal.eta,
        sol.eta / hover.eta
    );
}
