use parthaz::data::{build_time_grid, Dataset, TauSpec};
use parthaz::family::{HazardFamily, ParametricBlock};
use parthaz::partly::{fit_partly, PartlyOptions};
use parthaz::sim::{power_linear_scenario, sample_survival};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[test]
#[ignore]
fn diag_partly_failures() {
    let sc = power_linear_scenario(2000);
    let mut cov_rng = ChaCha8Rng::seed_from_u64(20260809);
    cov_rng.set_stream(0);
    let covariates = sc.draw_covariates(&mut cov_rng).unwrap();
    let names: Vec<String> = sc.columns.iter().map(|c| c.name.clone()).collect();
    let block = Arc::new(ParametricBlock::new(vec![HazardFamily::Power, HazardFamily::LinearTime]));
    let mut fails = 0;
    for rep in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(20260809);
        rng.set_stream(rep + 1);
        let mut times = Vec::new();
        let mut status = Vec::new();
        for z in &covariates {
            let (t, d) = sample_survival(&sc, z, &mut rng);
            times.push(t);
            status.push(d);
        }
        let ds = Arc::new(Dataset::new(times, status, covariates.clone(), names.clone(), 2).unwrap());
        let grid = Arc::new(build_time_grid(&ds, TauSpec::Fixed(0.9)).unwrap());
        match fit_partly(&ds, &grid, &block, &PartlyOptions::default()) {
            Ok(_) => {}
            Err(e) => {
                fails += 1;
                println!("rep {rep}: FAIL {e}");
            }
        }
    }
    println!("total failures: {fails}");
}
