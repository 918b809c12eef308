// measures mode ordering across seeds and transmit powers
use uavnet_core::driver::Mode;
use uavnet_core::experiments::{monte_carlo, sweep, SweepParameter};
use uavnet_core::scenario::load_template;

fn main() {
    env_logger::init();
    let spec = load_template("scenarios/default.json").unwrap();
    let modes = [Mode::Proposed, Mode::CenterHover, Mode::EqualBandwidth];
    let report = sweep(&spec, SweepParameter::TransmitPower, &[0.06, 0.1], 3, 100, &modes).unwrap();
    for point in &report.points {
        println!("p = {} W", point.value);
        for agg in &point.report.aggregates {
            println!(
                "  {:>15}: mean {:.4e}  sd {:.3e}  feas {}/{}",
                agg.mode.as_str(),
                agg.mean_eta,
                agg.stddev_eta,
                agg.feasible_trials,
                agg.feasible_trials + agg.infeasible_trials
            );
        }
        let p = point.report.aggregate_for(Mode::Proposed).unwrap().mean_eta;
        let h = point.report.aggregate_for(Mode::CenterHover).unwrap().mean_eta;
        let e = point.report.aggregate_for(Mode::EqualBandwidth).unwrap().mean_eta;
        println!("  ratios: proposed/equal = {:.2}, proposed/hover = {:.2}", p / e, p / h);
        for t in &point.report.trials {
            println!("   seed {}: {:?}", t.seed, t.etas);
        }
    }
    let _ = monte_carlo(&spec, 1, 0, &[]); // keep linkage of both entry points
}
