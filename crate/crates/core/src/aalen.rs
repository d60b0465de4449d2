//! Fully nonparametric weighted least-squares estimation of the cumulative
//! regressor functions, martingale variance estimation, and kernel smoothing
//! of the increments for plug-in optimal weights.

use crate::data::{Dataset, StepPath, TimeGrid};
use crate::error::{Error, Result};
use crate::linalg;
use crate::risk::{risk_paths, RiskPaths, Weights};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Weight scheme for the least-squares estimator.
pub enum AalenWeights<'a> {
    /// w_i(s) = 1, the default.
    Plain,
    /// Previsible per-subject weight function w(subject, s).
    Supplied(&'a (dyn Fn(usize, f64) -> f64 + Sync)),
}

/// Which estimate of the martingale variance increment dH to plug in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceOption {
    /// n^{-1} sum w_i^2 z_i z_i^t dN_i(s); the default.
    #[default]
    Counting,
    /// n^{-1} sum Y_i w_i^2 z_i z_i^t (z_i^t dA(s)).
    RiskSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightTag {
    Plain,
    Supplied,
    EstimatedOptimal,
}

/// Rank-guard record: the fit was cut short at `time` because the weighted
/// at-risk moment matrix became numerically singular there.
#[derive(Debug, Clone, Copy)]
pub struct Truncation {
    pub time: f64,
    pub condition: f64,
}

/// One fitted jump of the cumulative estimate.
#[derive(Debug, Clone)]
pub struct AalenEvent {
    pub time: f64,
    /// Grid knot (and interval) index.
    pub knot: usize,
    /// Increment of the cumulative estimate at this knot.
    pub delta: DVector<f64>,
    pub(crate) g_inv: DMatrix<f64>,
    pub(crate) dh_count: DMatrix<f64>,
}

/// Result of the nonparametric fit.
#[derive(Debug)]
pub struct AalenFit {
    pub(crate) ds: Arc<Dataset>,
    pub(crate) grid: Arc<TimeGrid>,
    pub weight_scheme: WeightTag,
    /// Cumulative estimate at every grid knot.
    pub cumulative: StepPath<DVector<f64>>,
    /// Fitted jumps, one per event knot up to any truncation point.
    pub events: Vec<AalenEvent>,
    /// Plug-in covariance of the cumulative estimate at every knot.
    pub variance_path: StepPath<DMatrix<f64>>,
    pub truncation: Option<Truncation>,
    /// Last interval index for which the fit is valid.
    pub(crate) end_interval: usize,
    /// Stored per-interval weights for non-plain schemes (indexed by
    /// subject), needed to rebuild risk-set variance estimates lazily.
    stored_weights: Option<Vec<Vec<f64>>>,
}

impl AalenFit {
    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.ds
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    /// Largest time up to which the fit is valid (tau, or the truncation
    /// point when the rank guard fired).
    pub fn end_time(&self) -> f64 {
        self.grid.knots()[self.end_interval]
    }

    /// Plug-in increment of the variance of the scaled estimator at each
    /// event: G_n^{-1} dH G_n^{-1}, using the counting-process dH.
    pub(crate) fn q_increment(&self, e: &AalenEvent) -> DMatrix<f64> {
        &e.g_inv * &e.dh_count * &e.g_inv
    }

    fn weight_at(&self, i: usize, interval: usize) -> f64 {
        match &self.stored_weights {
            None => 1.0,
            Some(w) => w[interval - 1][i],
        }
    }
}

fn fit_with_weights(
    ds: &Arc<Dataset>,
    grid: &Arc<TimeGrid>,
    w: &Weights,
    tag: WeightTag,
    stored_weights: Option<Vec<Vec<f64>>>,
) -> Result<AalenFit> {
    let paths: RiskPaths = risk_paths(ds, grid, w);
    let r = ds.r();
    let n_knots = grid.knots().len();

    let mut events = Vec::with_capacity(paths.events.len());
    let mut truncation = None;
    let mut end_interval = grid.n_intervals();
    for ev in &paths.events {
        let g = &paths.g[ev.knot - 1];
        match linalg::sym_inverse(g, ev.time) {
            Ok(g_inv) => {
                let delta = &g_inv * &ev.num;
                events.push(AalenEvent {
                    time: ev.time,
                    knot: ev.knot,
                    delta,
                    g_inv,
                    dh_count: ev.dh.clone(),
                });
            }
            Err(Error::RankFailure { time, cond }) => {
                log::warn!("aalen fit truncated at t = {time}: condition {cond:.3e}");
                truncation = Some(Truncation { time, condition: cond });
                end_interval = ev.knot - 1;
                break;
            }
            Err(e) => return Err(e),
        }
    }

    // cumulative and default variance path on the full knot set
    let mut cum_values = Vec::with_capacity(n_knots);
    let mut var_values = Vec::with_capacity(n_knots);
    let mut cum = DVector::zeros(r);
    let mut var = DMatrix::zeros(r, r);
    let inv_n = 1.0 / ds.n() as f64;
    let mut ev_iter = events.iter().peekable();
    for knot in 0..n_knots {
        if let Some(ev) = ev_iter.peek() {
            if ev.knot == knot {
                let ev = ev_iter.next().unwrap();
                cum += &ev.delta;
                var += inv_n * &ev.g_inv * &ev.dh_count * &ev.g_inv;
            }
        }
        cum_values.push(cum.clone());
        var_values.push(var.clone());
    }

    Ok(AalenFit {
        ds: ds.clone(),
        grid: grid.clone(),
        weight_scheme: tag,
        cumulative: StepPath::new(grid.knots().to_vec(), cum_values),
        events,
        variance_path: StepPath::new(grid.knots().to_vec(), var_values),
        truncation,
        end_interval,
        stored_weights,
    })
}

/// Weighted least-squares fit of the cumulative regressor functions: at each
/// event knot the increment solves the normal equations of the at-risk
/// moment matrix against the counting-process jumps.
pub fn fit_aalen(ds: &Arc<Dataset>, grid: &Arc<TimeGrid>, weights: AalenWeights) -> Result<AalenFit> {
    match weights {
        AalenWeights::Plain => fit_with_weights(ds, grid, &Weights::Plain, WeightTag::Plain, None),
        AalenWeights::Supplied(f) => {
            let stored = store_weights(ds, grid, f);
            fit_with_weights(ds, grid, &Weights::Fn(&f), WeightTag::Supplied, Some(stored))
        }
    }
}

fn store_weights(ds: &Dataset, grid: &TimeGrid, f: &(dyn Fn(usize, f64) -> f64 + Sync)) -> Vec<Vec<f64>> {
    (1..=grid.n_intervals())
        .map(|l| {
            let knot = grid.knots()[l];
            (0..ds.n()).map(|i| f(i, knot)).collect()
        })
        .collect()
}

/// Plug-in covariance path of the cumulative estimate under either variance
/// increment option.
pub fn aalen_variance(fit: &AalenFit, option: VarianceOption) -> Result<StepPath<DMatrix<f64>>> {
    match option {
        VarianceOption::Counting => Ok(fit.variance_path.clone()),
        VarianceOption::RiskSet => {
            let ds = &fit.ds;
            let r = ds.r();
            let n = ds.n();
            let inv_n = 1.0 / n as f64;
            let mut values = Vec::with_capacity(fit.grid.knots().len());
            let mut var = DMatrix::zeros(r, r);
            let mut ev_iter = fit.events.iter().peekable();
            for knot in 0..fit.grid.knots().len() {
                if let Some(ev) = ev_iter.peek() {
                    if ev.knot == knot {
                        let ev = ev_iter.next().unwrap();
                        let mut dh = DMatrix::zeros(r, r);
                        for i in 0..n {
                            if ds.time(i) >= ev.time {
                                let w = fit.weight_at(i, ev.knot);
                                let scale = w * w * inv_n * ds.z(i).dot(&ev.delta);
                                dh.syger(scale, ds.z(i), ds.z(i), 1.0);
                            }
                        }
                        for a in 0..r {
                            for b in (a + 1)..r {
                                dh[(a, b)] = dh[(b, a)];
                            }
                        }
                        var += inv_n * &ev.g_inv * dh * &ev.g_inv;
                    }
                }
                values.push(var.clone());
            }
            Ok(StepPath::new(fit.grid.knots().to_vec(), values))
        }
    }
}

/// Kernel-smoothed hazard increments: a continuous estimate of the
/// regressor functions built from the fitted jumps, Epanechnikov kernel with
/// reflection at both ends of the observation window.
pub struct SmoothedAlpha {
    events: Vec<(f64, DVector<f64>)>,
    pub bandwidth: f64,
    tau: f64,
    dim: usize,
}

impl SmoothedAlpha {
    pub fn value(&self, s: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        self.add_into(s, &mut out);
        out
    }

    fn add_into(&self, s: f64, out: &mut DVector<f64>) {
        let b = self.bandwidth;
        let kern = |x: f64| -> f64 {
            let u = x / b;
            if u.abs() < 1.0 {
                0.75 * (1.0 - u * u) / b
            } else {
                0.0
            }
        };
        for (t, delta) in &self.events {
            let k = kern(s - t) + kern(s + t) + kern(2.0 * self.tau - s - t);
            if k != 0.0 {
                out.axpy(k, delta, 1.0);
            }
        }
    }
}

/// Default smoothing bandwidth: 1.5 tau n^{-1/5}.
pub fn default_bandwidth(grid: &TimeGrid, n: usize) -> f64 {
    1.5 * grid.tau() * (n as f64).powf(-0.2)
}

/// Smooth the fitted increments into a continuous hazard estimate.
pub fn smooth_alpha(fit: &AalenFit, bandwidth: f64) -> Result<SmoothedAlpha> {
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::Config("bandwidth must be positive".into()));
    }
    Ok(SmoothedAlpha {
        events: fit.events.iter().map(|e| (e.time, e.delta.clone())).collect(),
        bandwidth,
        tau: fit.grid.tau(),
        dim: fit.ds.r(),
    })
}

/// Refit with estimated optimal weights w_i(s) = 1 / {z_i^t smoothed(s)}.
///
/// The returned fit's variance path is the integrated inverse of the
/// optimally weighted at-risk moment, divided by n.
pub fn fit_aalen_optimal(ds: &Arc<Dataset>, grid: &Arc<TimeGrid>, bandwidth: f64) -> Result<AalenFit> {
    let plain = fit_aalen(ds, grid, AalenWeights::Plain)?;
    let smoothed = smooth_alpha(&plain, bandwidth)?;

    let n_int = grid.n_intervals();
    let mut hazards: Vec<Vec<f64>> = Vec::with_capacity(n_int);
    let mut max_h: f64 = 0.0;
    for l in 1..=n_int {
        let knot = grid.knots()[l];
        let alpha = smoothed.value(knot);
        let hs: Vec<f64> = (0..ds.n()).map(|i| ds.z(i).dot(&alpha)).collect();
        for (i, &h) in hs.iter().enumerate() {
            if ds.time(i) >= knot {
                max_h = max_h.max(h);
            }
        }
        hazards.push(hs);
    }
    let floor = 1e-8 * max_h;
    for l in 1..=n_int.min(plain.end_interval) {
        let knot = grid.knots()[l];
        for i in 0..ds.n() {
            if ds.time(i) >= knot && hazards[l - 1][i] <= floor {
                return Err(Error::HazardFloor { subject: i, time: knot });
            }
        }
    }

    let weights: Vec<Vec<f64>> = hazards
        .iter()
        .map(|hs| hs.iter().map(|&h| if h > floor { 1.0 / h } else { 0.0 }).collect())
        .collect();
    let weight_fn = |i: usize, s: f64| -> f64 {
        let l = grid.interval_of(s);
        weights[l - 1][i]
    };
    let mut fit = fit_with_weights(
        ds,
        grid,
        &Weights::Fn(&weight_fn),
        WeightTag::EstimatedOptimal,
        Some(weights.clone()),
    )?;

    // variance from the integrated inverse of the optimally weighted moment
    let paths = risk_paths(ds, grid, &Weights::Fn(&weight_fn));
    let n_knots = grid.knots().len();
    let r = ds.r();
    let inv_n = 1.0 / ds.n() as f64;
    let mut values = Vec::with_capacity(n_knots);
    let mut acc = DMatrix::zeros(r, r);
    values.push(acc.clone());
    for l in 1..=n_int {
        if l <= fit.end_interval {
            let (a, b) = grid.interval(l);
            match linalg::sym_inverse(&paths.g[l - 1], b) {
                Ok(f_inv) => acc += (b - a) * inv_n * f_inv,
                Err(Error::RankFailure { time, cond }) => {
                    if fit.truncation.is_none() {
                        log::warn!("optimal-weight variance truncated at t = {time}");
                        fit.truncation = Some(Truncation { time, condition: cond });
                    }
                    fit.end_interval = fit.end_interval.min(l - 1);
                }
                Err(e) => return Err(e),
            }
        }
        values.push(acc.clone());
    }
    fit.variance_path = StepPath::new(grid.knots().to_vec(), values);
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{at_risk_moment, build_time_grid, Dataset, TauSpec};
    use approx::assert_relative_eq;

    fn three_subject() -> Arc<Dataset> {
        Arc::new(
            Dataset::new(
                vec![1.0, 2.0, 3.0],
                vec![1, 1, 0],
                vec![
                    DVector::from_vec(vec![1.0, 0.0]),
                    DVector::from_vec(vec![1.0, 1.0]),
                    DVector::from_vec(vec![1.0, 0.0]),
                ],
                vec!["z1".into(), "z2".into()],
                0,
            )
            .unwrap(),
        )
    }

    #[test]
    fn hand_computed_increments() {
        let ds = three_subject();
        let grid = Arc::new(build_time_grid(&ds, TauSpec::Auto).unwrap());
        let fit = fit_aalen(&ds, &grid, AalenWeights::Plain).unwrap();
        assert_eq!(fit.events.len(), 2);
        assert_relative_eq!(fit.events[0].delta[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(fit.events[0].delta[1], -0.5, epsilon = 1e-12);
        assert_relative_eq!(fit.events[1].delta[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(fit.events[1].delta[1], 1.0, epsilon = 1e-12);
        let total = fit.cumulative.last();
        assert_relative_eq!(total[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(total[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn hand_computed_counting_variance() {
        let ds = three_subject();
        let grid = Arc::new(build_time_grid(&ds, TauSpec::Auto).unwrap());
        let fit = fit_aalen(&ds, &grid, AalenWeights::Plain).unwrap();
        let var = aalen_variance(&fit, VarianceOption::Counting).unwrap();
        let v1 = var.value_at(1.0);
        let expect = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert_relative_eq!(v1.clone(), expect, epsilon = 1e-12);
        assert_eq!(var.value_at(0.0).clone(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn risk_set_variance_matches_direct_formula() {
        let ds = three_subject();
        let grid = Arc::new(build_time_grid(&ds, TauSpec::Auto).unwrap());
        let fit = fit_aalen(&ds, &grid, AalenWeights::Plain).unwrap();
        let var = aalen_variance(&fit, VarianceOption::RiskSet).unwrap();
        // independent oracle built from at_risk_moment with weights
        // w_i = z_i^t delta per event
        let n = ds.n() as f64;
        let mut expect = DMatrix::zeros(2, 2);
        for ev in &fit.events {
            let all = ds.all_cols();
            let dh = at_risk_moment(&ds, ev.time, |i| ds.z(i).dot(&ev.delta), &all, &all);
            let g = at_risk_moment(&ds, ev.time, |_| 1.0, &all, &all);
            let g_inv = linalg::sym_inverse(&g, ev.time).unwrap();
            expect += (&g_inv * dh * &g_inv) / n;
            assert_relative_eq!(var.value_at(ev.time).clone(), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn intercept_only_reduces_to_nelson_aalen() {
        let times = vec![0.5, 1.0, 1.5, 2.0, 3.0, 4.5];
        let status = vec![1, 1, 0, 1, 1, 0];
        let n = times.len();
        let ds = Arc::new(
            Dataset::new(
                times.clone(),
                status.clone(),
                (0..n).map(|_| DVector::from_vec(vec![1.0])).collect(),
                vec!["one".into()],
                0,
            )
            .unwrap(),
        );
        let grid = Arc::new(build_time_grid(&ds, TauSpec::Auto).unwrap());
        let fit = fit_aalen(&ds, &grid, AalenWeights::Plain).unwrap();
        let var = aalen_variance(&fit, VarianceOption::Counting).unwrap();
        // Nelson-Aalen oracle: sum dN/Y and sum dN/Y^2
        let mut na = 0.0;
        let mut na_var = 0.0;
        for ev in &fit.events {
            let at_risk = times.iter().filter(|&&t| t >= ev.time).count() as f64;
            let d = times
                .iter()
                .zip(&status)
                .filter(|(&t, &s)| t == ev.time && s == 1)
                .count() as f64;
            na += d / at_risk;
            na_var += d / (at_risk * at_risk);
            assert_relative_eq!(fit.cumulative.value_at(ev.time)[0], na, epsilon = 1e-14);
            assert_relative_eq!(var.value_at(ev.time)[(0, 0)], na_var, epsilon = 1e-14);
        }
    }

    #[test]
    fn duplicate_columns_truncate_at_first_event() {
        let ds = Arc::new(
            Dataset::new(
                vec![1.0, 2.0, 3.0],
                vec![1, 1, 0],
                vec![
                    DVector::from_vec(vec![1.0, 1.0]),
                    DVector::from_vec(vec![1.0, 1.0]),
                    DVector::from_vec(vec![1.0, 1.0]),
                ],
                vec!["a".into(), "b".into()],
                0,
            )
            .unwrap(),
        );
        let grid = Arc::new(build_time_grid(&ds, TauSpec::Auto).unwrap());
        let fit = fit_aalen(&ds, &grid, AalenWeights::Plain).unwrap();
        let trunc = fit.truncation.expect("expected rank failure");
        assert_eq!(trunc.time, 1.0);
        assert!(fit.events.is_empty());
    }

    #[test]
    fn common_weight_factor_leaves_increments_unchanged() {
        let ds = three_subject();
        let grid = Arc::new(build_time_grid(&ds, TauSpec::Auto).unwrap());
        let plain = fit_aalen(&ds, &grid, AalenWeights::Plain).unwrap();
        let scaled = fit_aalen(&ds, &grid, AalenWeights::Supplied(&|_, s| 2.5 + s)).unwrap();
        for (a, b) in plain.events.iter().zip(&scaled.events) {
            assert_relative_eq!(a.delta, b.delta, epsilon = 1e-12);
        }
    }

    #[test]
    fn smoother_kernel_value_at_jump() {
        // single jump of size 1 at s = 0.5 with bandwidth 0.1
        let ds = Arc::new(
            Dataset::new(
                vec![0.5, 5.0],
                vec![1, 0],
                vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![1.0])],
                vec!["one".into()],
                0,
            )
            .unwrap(),
        );
        let grid = Arc::new(build_time_grid(&ds, TauSpec::Fixed(5.0)).unwrap());
        let fit = fit_aalen(&ds, &grid, AalenWeights::Plain).unwrap();
        assert_relative_eq!(fit.events[0].delta[0], 0.5, epsilon = 1e-14);
        let sm = smooth_alpha(&fit, 0.1).unwrap();
        assert_relative_eq!(sm.value(0.5)[0], 7.5 * 0.5, epsilon = 1e-12);
        // farther than the bandwidth from every jump: zero
        assert_eq!(sm.value(2.0)[0], 0.0);
    }

    #[test]
    fn smoother_mass_matches_cumulative() {
        // interior mass: many events well away from the boundaries
        let times: Vec<f64> = (1..=40).map(|k| 0.3 + 0.01 * k as f64).collect();
        let n = times.len();
        let mut all: Vec<f64> = times.clone();
        all.push(2.0);
        let mut status = vec![1u8; n];
        status.push(0);
        let ds = Arc::new(
            Dataset::new(
                all,
                status,
                (0..=n).map(|_| DVector::from_vec(vec![1.0])).collect(),
                vec!["one".into()],
                0,
            )
            .unwrap(),
        );
        let grid = Arc::new(build_time_grid(&ds, TauSpec::Fixed(2.0)).unwrap());
        let fit = fit_aalen(&ds, &grid, AalenWeights::Plain).unwrap();
        let sm = smooth_alpha(&fit, 0.05).unwrap();
        let integral = linalg::integrate_gl7_panels(0.0, 2.0, 400, |s| sm.value(s)[0]);
        let total = fit.cumulative.last()[0];
        assert_relative_eq!(integral, total, max_relative = 0.02);
    }

    #[test]
    fn optimal_weights_with_constant_hazard_match_plain() {
        // z^t alpha constant across subjects: weights cancel exactly in the
        // increments
        let ds = Arc::new(
            Dataset::new(
                vec![0.4, 0.9, 1.3, 2.0, 2.8],
                vec![1, 1, 1, 1, 0],
                (0..5).map(|_| DVector::from_vec(vec![1.0])).collect(),
                vec!["one".into()],
                0,
            )
            .unwrap(),
        );
        let grid = Arc::new(build_time_grid(&ds, TauSpec::Auto).unwrap());
        let plain = fit_aalen(&ds, &grid, AalenWeights::Plain).unwrap();
        let optimal = fit_aalen_optimal(&ds, &grid, 0.8).unwrap();
        for (a, b) in plain.events.iter().zip(&optimal.events) {
            assert_relative_eq!(a.delta, b.delta, epsilon = 1e-10);
        }
        assert_eq!(optimal.weight_scheme, WeightTag::EstimatedOptimal);
    }

    #[test]
    fn optimal_weight_variance_intercept_only() {
        // single covariate identically one with smoothed hazard theta:
        // variance is theta * integral of 1 / Ybar / n
        let ds = Arc::new(
            Dataset::new(
                vec![0.4, 0.9, 1.3, 2.0, 2.8],
                vec![1, 1, 1, 1, 0],
                (0..5).map(|_| DVector::from_vec(vec![1.0])).collect(),
                vec!["one".into()],
                0,
            )
            .unwrap(),
        );
        let grid = Arc::new(build_time_grid(&ds, TauSpec::Auto).unwrap());
        let optimal = fit_aalen_optimal(&ds, &grid, 0.8).unwrap();
        let plain = fit_aalen(&ds, &grid, AalenWeights::Plain).unwrap();
        let sm = smooth_alpha(&plain, 0.8).unwrap();
        let n = ds.n() as f64;
        let mut expect = 0.0;
        for l in 1..=grid.n_intervals() {
            let (a, b) = grid.interval(l);
            let ybar = (0..ds.n()).filter(|&i| ds.time(i) >= b).count() as f64 / n;
            let alpha = sm.value(b)[0];
            expect += (b - a) * alpha / ybar / n;
            assert_relative_eq!(optimal.variance_path.value_at(b)[(0, 0)], expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_smoothed_hazard_triggers_floor_error() {
        // bandwidth too narrow to reach the censoring knot at t = 1.2, so
        // the smoothed hazard is exactly zero there
        let ds = Arc::new(
            Dataset::new(
                vec![0.5, 1.2, 2.0, 2.5],
                vec![1, 0, 1, 0],
                (0..4).map(|_| DVector::from_vec(vec![1.0])).collect(),
                vec!["one".into()],
                0,
            )
            .unwrap(),
        );
        let grid = Arc::new(build_time_grid(&ds, TauSpec::Auto).unwrap());
        let err = fit_aalen_optimal(&ds, &grid, 0.1).unwrap_err();
        assert!(matches!(err, Error::HazardFloor { .. }));
    }
}
