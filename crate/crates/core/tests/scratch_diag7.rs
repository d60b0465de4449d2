use parthaz::aalen::{aalen_variance, VarianceOption};
use parthaz::data::{build_time_grid, Dataset, TauSpec};
use parthaz::family::{HazardFamily, ParametricBlock};
use parthaz::partly::{fit_partly, joint_covariance, PartlyOptions};
use parthaz::sim::{power_linear_scenario, sample_survival, CovariateGen};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[test]
#[ignore]
fn diag_asymptotic_ratios() {
    let n = 40000;
    for (label, design) in [("indep", 0usize), ("z2z4mix5", 1), ("allmix5", 2), ("z2z4mix7", 3)] {
        let mut sc = power_linear_scenario(n);
        match design {
            0 => {}
            1 => {
                for j in [1, 3] {
                    sc.columns[j].generator = CovariateGen::MixedUniform { lo: 0.0, hi: 17.0, common: 0.5 };
                }
            }
            2 => {
                for j in [0, 1, 3] {
                    sc.columns[j].generator = CovariateGen::MixedUniform { lo: 0.0, hi: 17.0, common: 0.5 };
                }
            }
            3 => {
                for j in [1, 3] {
                    sc.columns[j].generator = CovariateGen::MixedUniform { lo: 0.0, hi: 17.0, common: 0.7 };
                }
            }
            _ => unreachable!(),
        }
        sc.fit_tau = Some(0.9);
        let mut cov_rng = ChaCha8Rng::seed_from_u64(4242);
        cov_rng.set_stream(0);
        let covariates = sc.draw_covariates(&mut cov_rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        rng.set_stream(1);
        let mut times = Vec::new();
        let mut status = Vec::new();
        for z in &covariates {
            let (t, d) = sample_survival(&sc, z, &mut rng);
            times.push(t);
            status.push(d);
        }
        let names: Vec<String> = sc.columns.iter().map(|c| c.name.clone()).collect();
        let ds = Arc::new(Dataset::new(times, status, covariates, names, 2).unwrap());
        let grid = Arc::new(build_time_grid(&ds, TauSpec::Fixed(0.9)).unwrap());
        let block = Arc::new(ParametricBlock::new(vec![HazardFamily::Power, HazardFamily::LinearTime]));
        let fit = fit_partly(&ds, &grid, &block, &PartlyOptions::default()).unwrap();
        let jc = joint_covariance(&fit).unwrap();
        let avar = aalen_variance(&fit.aalen, VarianceOption::Counting).unwrap();
        print!("{label:9} theta=({:.3},{:.3},{:.3}) ", fit.theta_hat[0], fit.theta_hat[1], fit.theta_hat[2]);
        for t in [0.3, 0.5, 0.7] {
            let cov = jc.covariance(t).unwrap();
            let av = avar.value_at(t);
            let r3 = (cov[(2, 2)] / av[(2, 2)]).sqrt();
            let r4 = (cov[(3, 3)] / av[(3, 3)]).sqrt();
            print!(" t={t}: A3 {r3:.3} A4 {r4:.3};");
        }
        println!();
    }
}
