//! Goodness-of-fit monitoring for the parametric components: cumulative
//! discrepancy processes between the nonparametric increments and the fitted
//! parametric hazards, their plug-in covariance function, chi-squared window
//! tests, and Kolmogorov-Smirnov tests calibrated by simulation.

use crate::aalen::AalenFit;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::partly::{fit_partly, PartlyFit, PartlyOptions};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::sync::Arc;

/// Weight specification for the monitoring process. Weights are previsible
/// step functions, constant on each grid interval.
pub enum GofWeight {
    /// K = 1 on the monitored component.
    Unit,
    /// Scalar weight per grid interval on the monitored component.
    PerInterval(Vec<f64>),
    /// Full p-vector weight per grid interval; the monitoring process is
    /// then the weighted linear combination over all parametric components.
    Vector(Vec<DVector<f64>>),
}

/// A monitoring-process path evaluated on the grid knots, with left limits
/// kept so the supremum over the whole interval is available.
#[derive(Debug)]
pub struct MonitorPath {
    pub component: Option<usize>,
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub left_values: Vec<f64>,
}

impl MonitorPath {
    /// max over t of |R(t)|, scanning knot values and left limits.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .chain(self.left_values.iter())
            .fold(0.0_f64, |a, &v| a.max(v.abs()))
    }
}

/// Which test a report came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GofTestKind {
    ChiSquared,
    KolmogorovSmirnov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsMethod {
    /// Simulate the limit process from Gaussian increments with the plug-in
    /// variance structure.
    Gaussian,
    /// Regenerate full datasets from the fitted cumulative hazards and
    /// refit.
    Bootstrap,
}

#[derive(Debug)]
pub struct GofReport {
    pub component: usize,
    pub test: GofTestKind,
    pub statistic: f64,
    pub p_value: f64,
    /// Window boundaries (chi-squared).
    pub windows: Option<Vec<f64>>,
    /// Window increments (chi-squared).
    pub increments: Option<DVector<f64>>,
    /// Estimated covariance of the increments (chi-squared).
    pub sigma: Option<DMatrix<f64>>,
    /// Rank-adjusted degrees of freedom (chi-squared).
    pub df: Option<usize>,
    pub method: Option<KsMethod>,
    pub replications: Option<usize>,
    pub seed: Option<u64>,
}

/// How to divide the observation window for the chi-squared test.
pub enum WindowSpec {
    /// k windows with boundaries at event-count quantiles.
    Count(usize),
    /// Explicit interior boundaries (ascending, within the fitted range).
    Boundaries(Vec<f64>),
}

fn check_compatible(fit: &PartlyFit, aalen: &AalenFit) -> Result<()> {
    if fit.grid().knots() != aalen.grid().knots() {
        return Err(Error::Config("monitoring needs the fits to share one grid".into()));
    }
    Ok(())
}

/// Everything the monitoring statistics need, precomputed once.
struct MonitorEngine<'a> {
    fit: &'a PartlyFit,
    aalen: &'a AalenFit,
    /// Weight vector per interval.
    kappa: Vec<DVector<f64>>,
    /// Events up to the fitted end: (knot, time, kappa^t dA_1 jump,
    /// q-increment block, alpha_star at the event).
    events: Vec<EngineEvent>,
    gamma_inv: DMatrix<f64>,
    ctheta: DMatrix<f64>,
    end: usize,
    sqrt_n: f64,
    component: Option<usize>,
}

struct EngineEvent {
    knot: usize,
    time: f64,
    jump: f64,
    /// kappa at the event's interval.
    kappa: DVector<f64>,
    /// [G^{-1} dH G^{-1}]_(1,1) block, p x p.
    q_inc: DMatrix<f64>,
    /// alpha_star_(1)(s, theta-hat)^t V_n(s), m x p.
    astar_v: DMatrix<f64>,
}

impl<'a> MonitorEngine<'a> {
    fn new(
        fit: &'a PartlyFit,
        aalen: &'a AalenFit,
        component: Option<usize>,
        weight: &GofWeight,
    ) -> Result<Self> {
        check_compatible(fit, aalen)?;
        let p = fit.dataset().p();
        if p == 0 {
            return Err(Error::Config("monitoring needs at least one parametric component".into()));
        }
        if let Some(j) = component {
            if j == 0 || j > p {
                return Err(Error::Config(format!(
                    "component {j} out of range 1..={p}"
                )));
            }
        }
        let grid = fit.grid();
        let n_int = grid.n_intervals();
        let kappa: Vec<DVector<f64>> = match weight {
            GofWeight::Unit => {
                let j = component.ok_or_else(|| Error::Config("unit weight needs a component".into()))?;
                let mut e = DVector::zeros(p);
                e[j - 1] = 1.0;
                vec![e; n_int]
            }
            GofWeight::PerInterval(vals) => {
                let j = component.ok_or_else(|| Error::Config("scalar weight needs a component".into()))?;
                if vals.len() != n_int {
                    return Err(Error::Config("per-interval weight length mismatch".into()));
                }
                vals.iter()
                    .map(|&v| {
                        let mut e = DVector::zeros(p);
                        e[j - 1] = v;
                        e
                    })
                    .collect()
            }
            GofWeight::Vector(vals) => {
                if vals.len() != n_int || vals.iter().any(|v| v.len() != p) {
                    return Err(Error::Config("vector weight shape mismatch".into()));
                }
                vals.clone()
            }
        };

        let end = fit.end_interval.min(aalen.end_interval);
        let theta = fit.theta_hat.as_slice();
        let mut events = Vec::new();
        for ev in &aalen.events {
            if ev.knot > end {
                break;
            }
            let q_full = aalen.q_increment(ev);
            let q_inc = q_full.view((0, 0), (p, p)).into_owned();
            let astar = fit.block.alpha_star(ev.time, theta);
            let astar_v = astar.transpose() * fit.vn.at_interval(ev.knot);
            let k = kappa[ev.knot - 1].clone();
            let jump = k.dot(&ev.delta.rows(0, p).into_owned());
            events.push(EngineEvent { knot: ev.knot, time: ev.time, jump, kappa: k, q_inc, astar_v });
        }

        let m = fit.block.m();
        let gamma_inv = if m > 0 {
            linalg::sym_inverse_pd(&fit.gamma)?
        } else {
            DMatrix::zeros(0, 0)
        };
        let ctheta = &gamma_inv * &fit.omega * &gamma_inv;
        Ok(Self {
            fit,
            aalen,
            kappa,
            events,
            gamma_inv,
            ctheta,
            end,
            sqrt_n: (fit.dataset().n() as f64).sqrt(),
            component,
        })
    }

    fn knots(&self) -> &[f64] {
        &self.fit.grid().knots()[..=self.end]
    }

    /// Drift integrand over one full interval: kappa^t (A_1(b) - A_1(a)).
    fn drift_over(&self, l: usize, a: f64, b: f64) -> f64 {
        let inc = self.fit.block.cumulative_between(a, b, self.fit.theta_hat.as_slice());
        self.kappa[l - 1].dot(&inc)
    }

    /// The monitoring path on the knots, with left limits.
    fn path(&self) -> MonitorPath {
        let knots = self.knots().to_vec();
        let mut values = Vec::with_capacity(knots.len());
        let mut left_values = Vec::with_capacity(knots.len());
        let mut acc = 0.0;
        let mut ev = self.events.iter().peekable();
        for (k, &knot) in knots.iter().enumerate() {
            if k >= 1 {
                acc -= self.drift_over(k, knots[k - 1], knot);
            }
            left_values.push(self.sqrt_n * acc);
            if let Some(e) = ev.peek() {
                if e.knot == k {
                    acc += ev.next().unwrap().jump;
                }
            }
            values.push(self.sqrt_n * acc);
        }
        MonitorPath { component: self.component, knots, values, left_values }
    }

    /// R(t) at an arbitrary time within the fitted range.
    fn value(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for e in &self.events {
            if e.time <= t {
                acc += e.jump;
            }
        }
        let knots = self.knots();
        for l in 1..=self.end {
            let (a, b) = (knots[l - 1], knots[l]);
            if a >= t {
                break;
            }
            acc -= self.drift_over(l, a, b.min(t));
        }
        self.sqrt_n * acc
    }

    /// psi(t) = integral of alpha_star^t kappa over (0, t], m x 1.
    fn psi(&self, t: f64) -> DVector<f64> {
        let m = self.fit.block.m();
        let mut out = DVector::zeros(m);
        let knots = self.knots();
        let theta = self.fit.theta_hat.as_slice();
        for l in 1..=self.end {
            let (a, b) = (knots[l - 1], knots[l]);
            if a >= t {
                break;
            }
            let inc = self.fit.block.cumulative_star_between(a, b.min(t), theta); // p x m
            out.gemv(1.0, &inc.transpose(), &self.kappa[l - 1], 1.0);
        }
        out
    }

    /// phi(t) = sum over events of astar^t V dQ kappa, m x 1.
    fn phi(&self, t: f64) -> DVector<f64> {
        let m = self.fit.block.m();
        let mut out = DVector::zeros(m);
        for e in &self.events {
            if e.time <= t {
                out.gemv(1.0, &(&e.astar_v * &e.q_inc), &e.kappa, 1.0);
            }
        }
        out
    }

    fn qterm(&self, t: f64) -> f64 {
        self.events
            .iter()
            .filter(|e| e.time <= t)
            .map(|e| linalg::quad_form(&e.q_inc, &e.kappa))
            .sum()
    }

    /// Plug-in covariance of (R(t1), R(t2)).
    fn cov(&self, t1: f64, t2: f64) -> f64 {
        let qt = self.qterm(t1.min(t2));
        if self.fit.block.m() == 0 {
            return qt;
        }
        let psi1 = self.psi(t1);
        let psi2 = self.psi(t2);
        let phi1 = self.phi(t1);
        let phi2 = self.phi(t2);
        qt + (psi1.transpose() * &self.ctheta * &psi2)[(0, 0)]
            - (psi1.transpose() * &self.gamma_inv * phi2)[(0, 0)]
            - (psi2.transpose() * &self.gamma_inv * phi1)[(0, 0)]
    }
}

/// Monitoring process for parametric component j (1-based): the root-n
/// scaled cumulative gap between the nonparametric increments and the
/// fitted parametric hazard.
pub fn monitoring_process(
    fit: &PartlyFit,
    aalen: &AalenFit,
    component: usize,
    weight: &GofWeight,
) -> Result<MonitorPath> {
    let engine = MonitorEngine::new(fit, aalen, Some(component), weight)?;
    Ok(engine.path())
}

/// Plug-in covariance of the monitoring process for component j between two
/// times.
pub fn gof_covariance(
    fit: &PartlyFit,
    aalen: &AalenFit,
    component: usize,
    weight: &GofWeight,
    t1: f64,
    t2: f64,
) -> Result<f64> {
    let engine = MonitorEngine::new(fit, aalen, Some(component), weight)?;
    Ok(engine.cov(t1, t2))
}

/// Sum over all parametric components of the sup-norm of their unit-weight
/// monitoring processes (a simultaneous discrepancy statistic).
pub fn simultaneous_sup(fit: &PartlyFit, aalen: &AalenFit) -> Result<f64> {
    let mut total = 0.0;
    for j in 1..=fit.dataset().p() {
        total += monitoring_process(fit, aalen, j, &GofWeight::Unit)?.sup_norm();
    }
    Ok(total)
}

fn resolve_windows(engine: &MonitorEngine, spec: &WindowSpec) -> Result<Vec<f64>> {
    let end_time = *engine.knots().last().unwrap();
    let event_times: Vec<f64> = engine.events.iter().map(|e| e.time).collect();
    let boundaries = match spec {
        WindowSpec::Count(k) => {
            let k = *k;
            if k == 0 {
                return Err(Error::Config("window count must be at least one".into()));
            }
            if event_times.len() < k {
                return Err(Error::EmptyWindow { index: event_times.len() + 1 });
            }
            let mut b = vec![0.0];
            for l in 1..k {
                let idx = (l * event_times.len()).div_euclid(k);
                b.push(event_times[idx.saturating_sub(1).min(event_times.len() - 1)]);
            }
            b.push(end_time);
            b
        }
        WindowSpec::Boundaries(interior) => {
            let mut b = vec![0.0];
            b.extend(interior.iter().copied());
            if *b.last().unwrap() < end_time {
                b.push(end_time);
            }
            b
        }
    };
    for w in boundaries.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Config("window boundaries must be strictly increasing".into()));
        }
    }
    if boundaries.last().copied().unwrap_or(0.0) > end_time + 1e-12 {
        return Err(Error::Config("window boundary beyond the fitted range".into()));
    }
    // every window must contain at least one event
    for (idx, w) in boundaries.windows(2).enumerate() {
        if !event_times.iter().any(|&t| t > w[0] && t <= w[1]) {
            return Err(Error::EmptyWindow { index: idx + 1 });
        }
    }
    Ok(boundaries)
}

/// Chi-squared window test: increments of the monitoring process over time
/// windows, standardized by their estimated covariance. The degrees of
/// freedom drop to the retained rank when the covariance estimate is
/// numerically singular.
pub fn chi_squared_test(
    fit: &PartlyFit,
    aalen: &AalenFit,
    component: usize,
    windows: WindowSpec,
    weight: &GofWeight,
) -> Result<GofReport> {
    let engine = MonitorEngine::new(fit, aalen, Some(component), weight)?;
    let boundaries = resolve_windows(&engine, &windows)?;
    let k = boundaries.len() - 1;

    let r_at: Vec<f64> = boundaries.iter().map(|&c| engine.value(c)).collect();
    let delta = DVector::from_iterator(k, (0..k).map(|l| r_at[l + 1] - r_at[l]));

    let cov_at: Vec<Vec<f64>> = boundaries
        .iter()
        .map(|&a| boundaries.iter().map(|&b| engine.cov(a, b)).collect())
        .collect();
    let mut sigma = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            sigma[(a, b)] = cov_at[a + 1][b + 1] - cov_at[a + 1][b] - cov_at[a][b + 1] + cov_at[a][b];
        }
    }
    linalg::symmetrize(&mut sigma);

    let (sigma_inv, rank) = linalg::sym_pseudo_inverse(&sigma, 1e-12);
    if rank < k {
        log::warn!("chi-squared window covariance rank {rank} < {k}; df reduced");
    }
    let statistic = (delta.transpose() * &sigma_inv * &delta)[(0, 0)].max(0.0);
    let p_value = if rank == 0 {
        1.0
    } else {
        let chi = ChiSquared::new(rank as f64).expect("positive df");
        1.0 - chi.cdf(statistic)
    };
    Ok(GofReport {
        component,
        test: GofTestKind::ChiSquared,
        statistic,
        p_value,
        windows: Some(boundaries),
        increments: Some(delta),
        sigma: Some(sigma),
        df: Some(rank),
        method: None,
        replications: None,
        seed: None,
    })
}

/// Kolmogorov-Smirnov test of the parametric component: the sup-norm of the
/// monitoring process, calibrated either from the Gaussian limit process or
/// by semiparametric bootstrap at the fitted model.
pub fn ks_test(
    fit: &PartlyFit,
    aalen: &AalenFit,
    component: usize,
    weight: &GofWeight,
    method: KsMethod,
    replications: usize,
    seed: u64,
) -> Result<GofReport> {
    if replications < 100 {
        return Err(Error::Config("B >= 100 required for simulated calibration".into()));
    }
    let engine = MonitorEngine::new(fit, aalen, Some(component), weight)?;
    let observed = engine.path().sup_norm();

    let sups: Vec<f64> = match method {
        KsMethod::Gaussian => gaussian_sups(&engine, replications, seed),
        KsMethod::Bootstrap => {
            if !matches!(weight, GofWeight::Unit) {
                return Err(Error::Config(
                    "bootstrap calibration supports the unit weight (the grid changes per replicate)"
                        .into(),
                ));
            }
            bootstrap_sups(fit, component, replications, seed)?
        }
    };
    let count = sups.iter().filter(|&&s| s >= observed).count();
    let p_value = (1 + count) as f64 / (replications + 1) as f64;
    Ok(GofReport {
        component,
        test: GofTestKind::KolmogorovSmirnov,
        statistic: observed,
        p_value,
        windows: None,
        increments: None,
        sigma: None,
        df: None,
        method: Some(method),
        replications: Some(replications),
        seed: Some(seed),
    })
}

/// Simulate sup norms of the limit process: Gaussian increments with the
/// plug-in variance structure at the event knots, minus the estimated
/// parameter-estimation drift. Replicates are scanned over the same knots
/// (values and left limits) as the observed statistic.
fn gaussian_sups(engine: &MonitorEngine, replications: usize, seed: u64) -> Vec<f64> {
    let p = engine.fit.dataset().p();
    let m = engine.fit.block.m();
    let factors: Vec<DMatrix<f64>> = engine.events.iter().map(|e| linalg::psd_factor(&e.q_inc)).collect();
    let knots = engine.knots();
    let theta = engine.fit.theta_hat.as_slice();
    // Gamma^{-1} psi at every knot; psi is continuous so left limits share it
    let rho_at_knot: Vec<DVector<f64>> = {
        let mut acc = DVector::zeros(m);
        let mut out = Vec::with_capacity(knots.len());
        out.push(&engine.gamma_inv * &acc);
        for l in 1..knots.len() {
            let inc = engine.fit.block.cumulative_star_between(knots[l - 1], knots[l], theta);
            acc.gemv(1.0, &inc.transpose(), &engine.kappa[l - 1], 1.0);
            out.push(&engine.gamma_inv * &acc);
        }
        out
    };

    (0..replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64 + 1);
            let n_ev = engine.events.len();
            let mut incr = vec![0.0; n_ev];
            let mut s_star = DVector::zeros(m);
            let mut xi = DVector::zeros(p);
            for (idx, e) in engine.events.iter().enumerate() {
                for k in 0..p {
                    xi[k] = rng.sample(StandardNormal);
                }
                let dw = &factors[idx] * &xi;
                incr[idx] = e.kappa.dot(&dw);
                s_star.gemv(1.0, &e.astar_v, &dw, 1.0);
            }
            let mut sup: f64 = 0.0;
            let mut cum = 0.0;
            let mut ev_idx = 0usize;
            for (k, _) in knots.iter().enumerate() {
                let drift = rho_at_knot[k].dot(&s_star);
                sup = sup.max((cum - drift).abs());
                if ev_idx < n_ev && engine.events[ev_idx].knot == k {
                    cum += incr[ev_idx];
                    ev_idx += 1;
                    sup = sup.max((cum - drift).abs());
                }
            }
            sup
        })
        .collect()
}

/// Kaplan-Meier estimate of the censoring survival function (statuses
/// reversed), as step levels for inversion sampling.
struct CensorKm {
    times: Vec<f64>,
    /// survival level just after each time
    levels: Vec<f64>,
}

impl CensorKm {
    fn fit(ds: &Dataset) -> Self {
        let n = ds.n();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| ds.time(a).partial_cmp(&ds.time(b)).unwrap());
        let mut times = Vec::new();
        let mut levels = Vec::new();
        let mut surv = 1.0;
        let mut i = 0;
        while i < n {
            let t = ds.time(order[i]);
            let mut censored = 0usize;
            let mut tied = 0usize;
            while i < n && ds.time(order[i]) == t {
                if !ds.is_event(order[i]) {
                    censored += 1;
                }
                tied += 1;
                i += 1;
            }
            let at_risk = n - (i - tied);
            if censored > 0 {
                surv *= 1.0 - censored as f64 / at_risk as f64;
                times.push(t);
                levels.push(surv);
            }
        }
        Self { times, levels }
    }

    /// Sample a censoring time by inversion; `None` means beyond the data
    /// (no censoring before the administrative horizon).
    fn sample(&self, u: f64) -> Option<f64> {
        for (t, lvl) in self.times.iter().zip(&self.levels) {
            if *lvl <= u {
                return Some(*t);
            }
        }
        None
    }
}

/// Fitted cumulative hazard paths used by the bootstrap generator, clamped
/// to be nondecreasing via running maximum before inversion.
struct FittedHazard<'a> {
    fit: &'a PartlyFit,
    knots: Vec<f64>,
    /// Per subject: clamped cumulative hazard at each knot (jumps included),
    /// and the raw value at each knot before clamping.
    clamped: Vec<Vec<f64>>,
    raw: Vec<Vec<f64>>,
    tau: f64,
}

impl<'a> FittedHazard<'a> {
    fn build(fit: &'a PartlyFit) -> Self {
        let grid = fit.grid();
        let end = fit.end_interval;
        let knots: Vec<f64> = grid.knots()[..=end].to_vec();
        let ds = fit.dataset();
        let p = ds.p();
        let q = ds.q();
        let a1: Vec<DVector<f64>> = knots.iter().map(|&t| fit.a1_at(t)).collect();
        let a2: Vec<DVector<f64>> = knots.iter().map(|&t| fit.a2_at(t)).collect();
        let mut clamped_any = false;
        let mut clamped = Vec::with_capacity(ds.n());
        let mut raw = Vec::with_capacity(ds.n());
        for i in 0..ds.n() {
            let z1 = ds.z(i).rows(0, p).into_owned();
            let z2 = ds.z(i).rows(p, q).into_owned();
            let mut run = 0.0_f64;
            let mut c_row = Vec::with_capacity(knots.len());
            let mut r_row = Vec::with_capacity(knots.len());
            for k in 0..knots.len() {
                let h = z1.dot(&a1[k]) + z2.dot(&a2[k]);
                if h < run {
                    clamped_any = true;
                }
                run = run.max(h);
                r_row.push(h);
                c_row.push(run);
            }
            clamped.push(c_row);
            raw.push(r_row);
        }
        if clamped_any {
            log::warn!("bootstrap generator clamped a decreasing fitted cumulative hazard");
        }
        FittedHazard { fit, tau: *knots.last().unwrap(), knots, clamped, raw }
    }

    /// Drift of subject i's raw cumulative hazard over (t0, t] inside
    /// interval l: (z_1 - M_l^t z_2)^t {A_1(t) - A_1(t0)}.
    fn drift(&self, i: usize, l: usize, t0: f64, t: f64) -> f64 {
        let ds = self.fit.dataset();
        let p = ds.p();
        let q = ds.q();
        let z1 = ds.z(i).rows(0, p).into_owned();
        let z2 = ds.z(i).rows(p, q).into_owned();
        let c = z1 - self.fit.backfit.m_drift[l - 1].transpose() * z2;
        let inc = self.fit.block.cumulative_between(t0, t, self.fit.theta_hat.as_slice());
        c.dot(&inc)
    }

    /// Invert the clamped cumulative hazard of subject i at level e by
    /// monotone bisection; `None` means the subject survives past the fitted
    /// horizon. Levels falling inside a jump resolve to the jump time.
    fn invert(&self, i: usize, e: f64) -> Option<f64> {
        let h = &self.clamped[i];
        if e > *h.last().unwrap() {
            return None;
        }
        let k = h.partition_point(|&v| v < e);
        if k == 0 {
            return Some(self.knots[0]);
        }
        let (t0, t1) = (self.knots[k - 1], self.knots[k]);
        let base = h[k - 1];
        // raw continuous value just before the jump at t1
        let raw_start = self.raw[i][k - 1];
        let cont_end = base.max(raw_start + self.drift(i, k, t0, t1));
        if e > cont_end {
            // the jump at t1 carries the level across e
            return Some(t1);
        }
        let g = |t: f64| base.max(raw_start + self.drift(i, k, t0, t));
        Some(linalg::bisect_increasing(t0, t1, e, 1e-10 * self.tau, 200, g))
    }
}

fn bootstrap_sups(fit: &PartlyFit, component: usize, replications: usize, seed: u64) -> Result<Vec<f64>> {
    let ds = fit.dataset();
    let hazard = FittedHazard::build(fit);
    let km = CensorKm::fit(ds);
    let tau = hazard.tau;
    let opts = PartlyOptions {
        vn: fit.vn.choice,
        backfit_weights: fit.backfit_weights,
        theta_init: Some(fit.theta_hat.as_slice().to_vec()),
        bandwidth: None,
    };

    let results: Vec<Option<f64>> = (0..replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64 + 1);
            let mut times = Vec::with_capacity(ds.n());
            let mut status = Vec::with_capacity(ds.n());
            for i in 0..ds.n() {
                let e: f64 = -(1.0 - rng.gen::<f64>()).ln();
                let t_event = hazard.invert(i, e);
                let u: f64 = rng.gen();
                let c = km.sample(u).unwrap_or(f64::INFINITY).min(tau);
                match t_event {
                    Some(t) if t <= c && t > 0.0 => {
                        times.push(t);
                        status.push(1u8);
                    }
                    _ => {
                        times.push(c.max(f64::MIN_POSITIVE));
                        status.push(0u8);
                    }
                }
            }
            let boot_ds = Arc::new(
                Dataset::new(
                    times,
                    status,
                    (0..ds.n()).map(|i| ds.z(i).clone()).collect(),
                    ds.names().to_vec(),
                    ds.p(),
                )
                .ok()?,
            );
            let grid = Arc::new(crate::data::build_time_grid(&boot_ds, crate::data::TauSpec::Auto).ok()?);
            let refit = fit_partly(&boot_ds, &grid, &fit.block, &opts).ok()?;
            let path = monitoring_process(&refit, &refit.aalen, component, &GofWeight::Unit).ok()?;
            Some(path.sup_norm())
        })
        .collect();

    let failed = results.iter().filter(|r| r.is_none()).count();
    if failed * 20 > replications {
        return Err(Error::BootstrapFailures { failed, total: replications });
    }
    if failed > 0 {
        log::warn!("{failed} of {replications} bootstrap refits failed; treated as non-rejections");
    }
    Ok(results.into_iter().map(|r| r.unwrap_or(0.0)).collect())
}
