use parthaz::sim::{power_linear_partly_spec, power_linear_scenario, run_monte_carlo, FitSpec};
use std::time::Instant;

#[test]
#[ignore]
fn diag_small_timing() {
    let sc = power_linear_scenario(2000);
    let specs = vec![FitSpec::Aalen, power_linear_partly_spec()];
    let start = Instant::now();
    let table = run_monte_carlo(&sc, &specs, &[0.3, 0.5, 0.7], 40, 20260809).unwrap();
    println!("40 reps: {:.1}s, failures {}, event fraction {:.4}",
        start.elapsed().as_secs_f64(), table.failures, table.event_fraction_mean());
    for s in table.summaries() {
        if s.estimand.starts_with("A3") || s.estimand.starts_with("A4") || s.estimand.starts_with("theta") {
            println!("{:7} {:9} mean_z={:+.3} sd_z={:.3} mc_sd={:.5}", s.estimator, s.estimand, s.mean_z, s.sd_z, s.mc_sd);
        }
    }
}
