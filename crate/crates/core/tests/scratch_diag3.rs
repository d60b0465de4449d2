use nalgebra::{DMatrix, DVector};
use parthaz::aalen::{fit_aalen, AalenWeights};
use parthaz::data::{build_time_grid, Dataset, TauSpec};
use parthaz::family::{HazardFamily, ParametricBlock};
use parthaz::partly::{criterion, vn_path, VnChoice};
use parthaz::sim::{power_linear_scenario, sample_survival};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[test]
#[ignore]
fn diag_profile_theta2() {
    let sc = power_linear_scenario(2000);
    let mut cov_rng = ChaCha8Rng::seed_from_u64(20260809);
    cov_rng.set_stream(0);
    let covariates = sc.draw_covariates(&mut cov_rng).unwrap();
    let names: Vec<String> = sc.columns.iter().map(|c| c.name.clone()).collect();
    let block = ParametricBlock::new(vec![HazardFamily::Power, HazardFamily::LinearTime]);
    for rep in [1u64, 42, 53, 0, 2] {
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
        let grid = Arc::new(build_time_grid(&ds, TauSpec::Auto).unwrap());
        let aalen = fit_aalen(&ds, &grid, AalenWeights::Plain).unwrap();
        let vn = vn_path(&ds, &grid, VnChoice::Default, None).unwrap();
        // profile: for fixed theta2, C is quadratic in (theta1, theta3);
        // minimize by solving the 2x2 normal equations numerically
        println!("--- rep {rep} (tau = {:.4}) ---", grid.tau());
        for t2 in [1.0f64, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0, 10.0, 20.0, 40.0, 80.0] {
            // basis hazards: b1 = power(1, t2), b2 = linear(1)
            let eval = |c1: f64, c3: f64| {
                criterion(&aalen, &block, &[c1.max(1e-12), t2, c3], &vn).unwrap()
            };
            // quadratic in (c1, c3): fit from 6 evaluations
            let f00 = eval(0.0, 0.0);
            let f10 = eval(1.0, 0.0);
            let f01 = eval(0.0, 1.0);
            let f20 = eval(2.0, 0.0);
            let f02 = eval(0.0, 2.0);
            let f11 = eval(1.0, 1.0);
            let a11 = (f20 - 2.0 * f10 + f00) / 2.0;
            let a22 = (f02 - 2.0 * f01 + f00) / 2.0;
            let a12 = (f11 - f10 - f01 + f00) / 2.0;
            let b1 = f10 - f00 - a11;
            let b2 = f01 - f00 - a22;
            let amat = DMatrix::from_row_slice(2, 2, &[2.0 * a11, 2.0 * a12, 2.0 * a12, 2.0 * a22]);
            let bvec = DVector::from_vec(vec![-b1, -b2]);
            let sol = amat.lu().solve(&bvec).unwrap();
            let cmin = eval(sol[0], sol[1]);
            println!("  t2 = {t2:6.1}: c1* = {:+.4}, c3* = {:+.4}, C* = {:.6}", sol[0], sol[1], cmin);
        }
    }
}
