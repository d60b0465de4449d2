use parthaz::sim::{power_linear_partly_spec, power_linear_scenario, run_monte_carlo, FitSpec};

#[test]
#[ignore]
fn diag_efficiency_ordering() {
    let sc = power_linear_scenario(2000);
    let specs = vec![FitSpec::Aalen, power_linear_partly_spec()];
    for seed in [20260809u64, 777, 123456] {
        let table = run_monte_carlo(&sc, &specs, &[0.3, 0.5, 0.7], 334, seed).unwrap();
        println!("seed {seed}: failures {}", table.failures);
        let summaries = table.summaries();
        for j in [3, 4] {
            for t in ["0.3", "0.5", "0.7"] {
                let key = format!("A{j}@{t}");
                let p = summaries.iter().find(|s| s.estimator == "partly" && s.estimand == key).unwrap();
                let a = summaries.iter().find(|s| s.estimator == "aalen" && s.estimand == key).unwrap();
                println!("  {key}: partly {:.6} vs aalen {:.6}  ratio {:.4}", p.mc_sd, a.mc_sd, p.mc_sd / a.mc_sd);
            }
        }
    }
}
