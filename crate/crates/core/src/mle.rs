//! Full maximum likelihood for the model in which every regressor function
//! is parametric. Used standalone and as the baseline for the sieve
//! information checks.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::family::ParametricBlock;
use crate::linalg;
use nalgebra::{DMatrix, DVector};

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
/// Panels per subject for the information quadrature.
const INFO_PANELS: usize = 16;

#[derive(Debug, Clone)]
pub struct IterRecord {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub score_norm: f64,
    pub step_norm: f64,
}

#[derive(Debug)]
pub struct MleFit {
    pub theta_hat: DVector<f64>,
    pub log_likelihood: f64,
    /// The martingale-free information estimate built from the optimally
    /// weighted at-risk moment at the optimum.
    pub information: DMatrix<f64>,
    /// Estimated covariance of the estimator: information^{-1} / n.
    pub covariance: DMatrix<f64>,
    pub trace: Vec<IterRecord>,
}

fn check_block(ds: &Dataset, block: &ParametricBlock) -> Result<()> {
    if block.p() != ds.r() {
        return Err(Error::Config(format!(
            "maximum likelihood requires a family per covariate column: block has {} components, data has {} columns",
            block.p(),
            ds.r()
        )));
    }
    Ok(())
}

/// Log-likelihood of the all-parametric model: event terms
/// log{z_i^t alpha(t_i, theta)} minus integrated exposures
/// z_i^t A(t_i and tau, theta). Errors if the fitted hazard is nonpositive
/// at an observed event.
pub fn log_likelihood(ds: &Dataset, block: &ParametricBlock, theta: &[f64], tau: f64) -> Result<f64> {
    check_block(ds, block)?;
    block.check_theta(theta)?;
    let mut ll = 0.0;
    for i in 0..ds.n() {
        let t = ds.time(i);
        if ds.is_event(i) && t <= tau {
            let h = ds.z(i).dot(&block.alpha(t, theta));
            if h <= 0.0 {
                return Err(Error::NonPositiveHazard { subject: i, time: t });
            }
            ll += h.ln();
        }
        ll -= ds.z(i).dot(&block.cumulative(t.min(tau), theta));
    }
    Ok(ll)
}

/// Score vector of the log-likelihood (exact: event terms analytic,
/// exposure terms via closed-form cumulative gradients).
pub fn score(ds: &Dataset, block: &ParametricBlock, theta: &[f64], tau: f64) -> Result<DVector<f64>> {
    check_block(ds, block)?;
    block.check_theta(theta)?;
    let m = block.m();
    let mut u = DVector::zeros(m);
    for i in 0..ds.n() {
        let t = ds.time(i);
        if ds.is_event(i) && t <= tau {
            let h = ds.z(i).dot(&block.alpha(t, theta));
            if h <= 0.0 {
                return Err(Error::NonPositiveHazard { subject: i, time: t });
            }
            let astar = block.alpha_star(t, theta);
            u += astar.transpose() * ds.z(i) / h;
        }
        let cstar = block.cumulative_star(t.min(tau), theta);
        u -= cstar.transpose() * ds.z(i);
    }
    Ok(u)
}

/// n^{-1} integral of the per-subject outer products
/// (alpha_star^t z)(alpha_star^t z)^t / (z^t alpha) over each subject's
/// exposure window; the limit form of the normalized information.
pub fn information(ds: &Dataset, block: &ParametricBlock, theta: &[f64], tau: f64) -> Result<DMatrix<f64>> {
    check_block(ds, block)?;
    block.check_theta(theta)?;
    let m = block.m();
    let mut info = DMatrix::zeros(m, m);
    for i in 0..ds.n() {
        let upper = ds.time(i).min(tau);
        if upper <= 0.0 {
            continue;
        }
        let h = upper / INFO_PANELS as f64;
        for k in 0..INFO_PANELS {
            for (s, w) in linalg::gl7(k as f64 * h, (k + 1) as f64 * h) {
                let hz = ds.z(i).dot(&block.alpha(s, theta));
                if hz <= 0.0 {
                    return Err(Error::NonPositiveHazard { subject: i, time: s });
                }
                let g = block.alpha_star(s, theta).transpose() * ds.z(i);
                info.syger(w / hz, &g, &g, 1.0);
            }
        }
    }
    for a in 0..m {
        for b in (a + 1)..m {
            info[(a, b)] = info[(b, a)];
        }
    }
    info /= ds.n() as f64;
    Ok(info)
}

/// Raw observed information -d^2 l / d theta^2, including the martingale
/// term that the limit form drops. Diagnostic only.
pub fn observed_information(
    ds: &Dataset,
    block: &ParametricBlock,
    theta: &[f64],
    tau: f64,
) -> Result<DMatrix<f64>> {
    check_block(ds, block)?;
    block.check_theta(theta)?;
    let m = block.m();
    // sum over components of z_{i,j} * hessian_j, embedded at the block's
    // parameter slices
    let stack_hessian = |s: f64, z: &DVector<f64>| -> DMatrix<f64> {
        let mut h = DMatrix::zeros(m, m);
        for (j, fam) in block.families().iter().enumerate() {
            let range = block.slice(j);
            let hj = fam.hessian(s, &theta[range.clone()]);
            for (a, ia) in range.clone().enumerate() {
                for (b, ib) in range.clone().enumerate() {
                    h[(ia, ib)] += z[j] * hj[(a, b)];
                }
            }
        }
        h
    };
    let mut neg_i = DMatrix::zeros(m, m);
    for i in 0..ds.n() {
        let t = ds.time(i);
        if ds.is_event(i) && t <= tau {
            let hz = ds.z(i).dot(&block.alpha(t, theta));
            if hz <= 0.0 {
                return Err(Error::NonPositiveHazard { subject: i, time: t });
            }
            let g = block.alpha_star(t, theta).transpose() * ds.z(i);
            let mut ev = DMatrix::zeros(m, m);
            ev.syger(1.0 / (hz * hz), &g, &g, 1.0);
            for a in 0..m {
                for b in (a + 1)..m {
                    ev[(a, b)] = ev[(b, a)];
                }
            }
            neg_i += ev - stack_hessian(t, ds.z(i)) / hz;
        }
        let upper = t.min(tau);
        if upper > 0.0 {
            let h = upper / INFO_PANELS as f64;
            for k in 0..INFO_PANELS {
                for (s, w) in linalg::gl7(k as f64 * h, (k + 1) as f64 * h) {
                    neg_i += w * stack_hessian(s, ds.z(i));
                }
            }
        }
    }
    Ok(neg_i)
}

/// Fisher-scoring fit with step-halving line search on the log-likelihood.
/// Positivity-constrained parameters are iterated on the log scale.
pub fn fit_mle(
    ds: &Dataset,
    block: &ParametricBlock,
    theta_init: &[f64],
    tau: f64,
) -> Result<MleFit> {
    check_block(ds, block)?;
    block.check_theta(theta_init)?;
    let m = block.m();
    let n = ds.n() as f64;

    let mut theta = DVector::from_column_slice(theta_init);
    let mut eta = block.to_unconstrained(theta.as_slice());
    let mut ll = log_likelihood(ds, block, theta.as_slice(), tau)?;
    let mut trace = Vec::new();

    let mut converged = false;
    for iteration in 0..MAX_ITER {
        let u = score(ds, block, theta.as_slice(), tau)?;
        let score_norm = u.norm();
        if score_norm <= SCORE_TOL * m as f64 {
            trace.push(IterRecord { iteration, log_likelihood: ll, score_norm, step_norm: 0.0 });
            converged = true;
            break;
        }
        let info = information(ds, block, theta.as_slice(), tau)?;
        let jac = block.unconstrained_jacobian(theta.as_slice());
        let mut info_eta = info.clone();
        let mut u_eta = u.clone();
        for a in 0..m {
            u_eta[a] *= jac[a];
            for b in 0..m {
                info_eta[(a, b)] *= jac[a] * jac[b];
            }
        }
        let info_inv = linalg::sym_inverse_pd(&(n * info_eta))?;
        let full_step = info_inv * &u_eta;

        // step-halving on the log-likelihood
        let mut accepted = false;
        let mut step = 1.0;
        for _ in 0..30 {
            let eta_new = &eta + step * &full_step;
            let theta_new = block.from_unconstrained(&eta_new);
            if block.check_theta(theta_new.as_slice()).is_ok() {
                if let Ok(ll_new) = log_likelihood(ds, block, theta_new.as_slice(), tau) {
                    if ll_new.is_finite() && ll_new >= ll - 1e-12 * ll.abs().max(1.0) {
                        trace.push(IterRecord {
                            iteration,
                            log_likelihood: ll_new,
                            score_norm,
                            step_norm: (step * &full_step).norm(),
                        });
                        eta = eta_new;
                        theta = theta_new;
                        ll = ll_new;
                        accepted = true;
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence { iterations: iteration, residual: score_norm });
        }
    }
    if !converged {
        let u = score(ds, block, theta.as_slice(), tau)?;
        if u.norm() > SCORE_TOL * m as f64 {
            return Err(Error::NonConvergence { iterations: MAX_ITER, residual: u.norm() });
        }
    }

    let info = information(ds, block, theta.as_slice(), tau)?;
    let min_eig = info.clone().symmetric_eigen().eigenvalues.min();
    if min_eig <= 0.0 {
        return Err(Error::IndefiniteInformation);
    }
    let covariance = linalg::sym_inverse_pd(&info)? / n;
    Ok(MleFit { theta_hat: theta, log_likelihood: ll, information: info, covariance, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::HazardFamily;
    use approx::assert_relative_eq;

    fn occurrence_exposure_data() -> Dataset {
        // times (1,2,3), status (1,1,0): D = 2 events, R = 6 exposure at tau = 3
        Dataset::new(
            vec![1.0, 2.0, 3.0],
            vec![1, 1, 0],
            (0..3).map(|_| DVector::from_vec(vec![1.0])).collect(),
            vec!["one".into()],
            1,
        )
        .unwrap()
    }

    #[test]
    fn scalar_loglik_closed_form() {
        let ds = occurrence_exposure_data();
        let block = ParametricBlock::new(vec![HazardFamily::Constant]);
        let theta = [1.0 / 3.0];
        let ll = log_likelihood(&ds, &block, &theta, 3.0).unwrap();
        assert_relative_eq!(ll, 2.0 * (1.0f64 / 3.0).ln() - 2.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_hazard_at_event_is_an_error() {
        let ds = occurrence_exposure_data();
        let block = ParametricBlock::new(vec![HazardFamily::LinearTime]);
        // linear family with slope 0 vanishes everywhere
        let err = log_likelihood(&ds, &block, &[0.0], 3.0).unwrap_err();
        assert!(matches!(err, Error::NonPositiveHazard { .. }));
    }

    #[test]
    fn doubling_the_dataset_doubles_loglik() {
        let ds = occurrence_exposure_data();
        let doubled = Dataset::new(
            vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0],
            vec![1, 1, 0, 1, 1, 0],
            (0..6).map(|_| DVector::from_vec(vec![1.0])).collect(),
            vec!["one".into()],
            1,
        )
        .unwrap();
        let block = ParametricBlock::new(vec![HazardFamily::Constant]);
        let l1 = log_likelihood(&ds, &block, &[0.4], 3.0).unwrap();
        let l2 = log_likelihood(&doubled, &block, &[0.4], 3.0).unwrap();
        assert_relative_eq!(l2, 2.0 * l1, epsilon = 1e-12);
    }

    #[test]
    fn constant_family_mle_is_occurrence_over_exposure() {
        let ds = occurrence_exposure_data();
        let block = ParametricBlock::new(vec![HazardFamily::Constant]);
        let fit = fit_mle(&ds, &block, &[1.0], 3.0).unwrap();
        assert_relative_eq!(fit.theta_hat[0], 2.0 / 6.0, epsilon = 1e-10);
        assert_relative_eq!(fit.information[(0, 0)], 6.0, epsilon = 1e-9);
        assert_relative_eq!(fit.covariance[(0, 0)], 1.0 / 18.0, epsilon = 1e-9);
        let u = score(&ds, &block, fit.theta_hat.as_slice(), 3.0).unwrap();
        assert!(u.norm() < 1e-8);
    }

    #[test]
    fn score_matches_finite_difference_gradient() {
        let ds = Dataset::new(
            vec![0.8, 1.5, 2.2, 3.0, 0.4],
            vec![1, 1, 0, 1, 1],
            vec![
                DVector::from_vec(vec![1.0, 0.2]),
                DVector::from_vec(vec![1.0, 1.4]),
                DVector::from_vec(vec![1.0, 0.7]),
                DVector::from_vec(vec![1.0, 0.1]),
                DVector::from_vec(vec![1.0, 2.0]),
            ],
            vec!["one".into(), "x".into()],
            2,
        )
        .unwrap();
        let block = ParametricBlock::new(vec![HazardFamily::Power, HazardFamily::LinearTime]);
        let theta = [0.5, 1.3, 0.4];
        let tau = 3.0;
        let u = score(&ds, &block, &theta, tau).unwrap();
        for k in 0..3 {
            let step = 1e-6 * (1.0 + theta[k].abs());
            let mut hi = theta.to_vec();
            hi[k] += step;
            let mut lo = theta.to_vec();
            lo[k] -= step;
            let fd = (log_likelihood(&ds, &block, &hi, tau).unwrap()
                - log_likelihood(&ds, &block, &lo, tau).unwrap())
                / (2.0 * step);
            assert_relative_eq!(u[k], fd, max_relative = 1e-5, epsilon = 1e-7);
        }
    }

    #[test]
    fn information_invariant_to_subject_order() {
        let times = vec![0.8, 1.5, 2.2, 3.0, 0.4];
        let status = vec![1u8, 1, 0, 1, 1];
        let zs: Vec<DVector<f64>> = vec![
            DVector::from_vec(vec![1.0, 0.2]),
            DVector::from_vec(vec![1.0, 1.4]),
            DVector::from_vec(vec![1.0, 0.7]),
            DVector::from_vec(vec![1.0, 0.1]),
            DVector::from_vec(vec![1.0, 2.0]),
        ];
        let names = vec!["one".to_string(), "x".to_string()];
        let ds = Dataset::new(times.clone(), status.clone(), zs.clone(), names.clone(), 2).unwrap();
        let perm = [3usize, 1, 4, 0, 2];
        let ds2 = Dataset::new(
            perm.iter().map(|&i| times[i]).collect(),
            perm.iter().map(|&i| status[i]).collect(),
            perm.iter().map(|&i| zs[i].clone()).collect(),
            names,
            2,
        )
        .unwrap();
        let block = ParametricBlock::new(vec![HazardFamily::Constant, HazardFamily::Constant]);
        let theta = [0.4, 0.3];
        let i1 = information(&ds, &block, &theta, 3.0).unwrap();
        let i2 = information(&ds2, &block, &theta, 3.0).unwrap();
        assert_relative_eq!(i1, i2, epsilon = 1e-12);
    }

    #[test]
    fn observed_information_close_to_limit_form_at_optimum() {
        let ds = occurrence_exposure_data();
        let block = ParametricBlock::new(vec![HazardFamily::Constant]);
        let fit = fit_mle(&ds, &block, &[0.9], 3.0).unwrap();
        // intercept-only constant hazard: -i_n = D / theta^2 and
        // n J_n = R / theta; equal at theta = D/R
        let oi = observed_information(&ds, &block, fit.theta_hat.as_slice(), 3.0).unwrap();
        assert_relative_eq!(oi[(0, 0)], 3.0 * fit.information[(0, 0)], max_relative = 1e-8);
    }
}
