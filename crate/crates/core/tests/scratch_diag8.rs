use parthaz::sim::{power_linear_partly_spec, power_linear_scenario, run_monte_carlo, CovariateGen, FitSpec};
use std::time::Instant;

#[test]
#[ignore]
fn diag_allmix_tails() {
    let common: f64 = std::env::var("MIX").unwrap().parse().unwrap();
    let z1hi: f64 = std::env::var("Z1HI").unwrap().parse().unwrap();
    let zhi: f64 = std::env::var("ZHI").unwrap().parse().unwrap();
    let mut sc = power_linear_scenario(2000);
    sc.columns[0].generator = CovariateGen::MixedUniform { lo: 0.0, hi: z1hi, common };
    for j in [1usize, 3] {
        sc.columns[j].generator = CovariateGen::MixedUniform { lo: 0.0, hi: zhi, common };
    }
    let specs = vec![FitSpec::Aalen, power_linear_partly_spec()];
    let start = Instant::now();
    let table = run_monte_carlo(&sc, &specs, &[0.3, 0.5, 0.7], 200, 20260809).unwrap();
    println!("200 reps {:.0}s failures {} event frac {:.4}", start.elapsed().as_secs_f64(), table.failures, table.event_fraction_mean());
    // tail census of the shape estimates
    let t2: Vec<f64> = table.select("partly", "theta1_2").iter().map(|r| r.estimate).collect();
    let wild = t2.iter().filter(|&&v| (v - 2.0).abs() > 3.0).count();
    let max = t2.iter().cloned().fold(f64::MIN, f64::max);
    println!("theta2 draws: {}, wild (|err|>3): {}, max {:.2}", t2.len(), wild, max);
    let sm = table.summaries();
    for key in ["theta1_1", "theta1_2", "theta2_1"] {
        let s = sm.iter().find(|s| s.estimator == "partly" && s.estimand == key).unwrap();
        println!("  {key}: mean_z {:+.3} sd_z {:.3} cov {:.3} mc_sd {:.4}", s.mean_z, s.sd_z, s.coverage95, s.mc_sd);
    }
    for j in [3, 4] {
        for t in ["0.3", "0.5", "0.7"] {
            let key = format!("A{j}@{t}");
            let p = sm.iter().find(|s| s.estimator == "partly" && s.estimand == key).unwrap();
            let a = sm.iter().find(|s| s.estimator == "aalen" && s.estimand == key).unwrap();
            println!("  {key}: ratio {:.4}  partly(mean_z {:+.3} sd_z {:.3} cov {:.3})", p.mc_sd / a.mc_sd, p.mean_z, p.sd_z, p.coverage95);
        }
    }
}
