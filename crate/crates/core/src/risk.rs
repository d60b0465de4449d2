//! Shared per-interval at-risk snapshots. Between consecutive grid knots all
//! at-risk indicators are constant, so every path built from them (G_n, V_n,
//! backfit blocks) is stored once per interval. Interval `l` covers
//! `(knots[l-1], knots[l]]`; its risk set is every subject with
//! `t_i >= knots[l]`, which is also the risk set used for jumps at
//! `knots[l]` itself.

use crate::data::{Dataset, TimeGrid};
use nalgebra::{DMatrix, DVector};

/// Per-subject weights evaluated per interval.
pub(crate) enum Weights<'a> {
    Plain,
    /// w(subject, s) evaluated at each interval's right knot.
    Fn(&'a dyn Fn(usize, f64) -> f64),
}

impl Weights<'_> {
    pub(crate) fn eval(&self, i: usize, s: f64) -> f64 {
        match self {
            Weights::Plain => 1.0,
            Weights::Fn(f) => f(i, s),
        }
    }
}

/// Jump information at one event-flagged knot.
pub(crate) struct EventPoint {
    /// Knot index in the grid; the event belongs to interval `knot`.
    pub knot: usize,
    pub time: f64,
    /// n^{-1} sum of w_i z_i over events at this knot.
    pub num: DVector<f64>,
    /// n^{-1} sum of w_i^2 z_i z_i^t over events at this knot.
    pub dh: DMatrix<f64>,
}

pub(crate) struct RiskPaths {
    /// Weighted at-risk moment per interval: `g[l-1]` holds
    /// n^{-1} sum_{t_i >= knots[l]} w_i z_i z_i^t.
    pub g: Vec<DMatrix<f64>>,
    pub events: Vec<EventPoint>,
}

pub(crate) fn risk_paths(ds: &Dataset, grid: &TimeGrid, weights: &Weights) -> RiskPaths {
    let n = ds.n();
    let r = ds.r();
    let knots = grid.knots();
    let n_intervals = grid.n_intervals();
    let inv_n = 1.0 / n as f64;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ds.time(b).partial_cmp(&ds.time(a)).unwrap());

    let mut g = vec![DMatrix::zeros(r, r); n_intervals];
    match weights {
        Weights::Plain => {
            // accumulate suffix sums walking intervals from the last one down
            let mut acc = DMatrix::zeros(r, r);
            let mut ptr = 0;
            for l in (1..=n_intervals).rev() {
                let knot = knots[l];
                while ptr < n && ds.time(order[ptr]) >= knot {
                    let z = ds.z(order[ptr]);
                    acc.syger(inv_n, z, z, 1.0);
                    ptr += 1;
                }
                let mut snap = acc.clone();
                for i in 0..r {
                    for j in (i + 1)..r {
                        snap[(i, j)] = snap[(j, i)];
                    }
                }
                g[l - 1] = snap;
            }
        }
        Weights::Fn(_) => {
            // weights vary with time; rebuild each interval over its risk set
            let mut ptr = 0;
            let mut at_risk: Vec<usize> = Vec::with_capacity(n);
            for l in (1..=n_intervals).rev() {
                let knot = knots[l];
                while ptr < n && ds.time(order[ptr]) >= knot {
                    at_risk.push(order[ptr]);
                    ptr += 1;
                }
                let mut m = DMatrix::zeros(r, r);
                for &i in &at_risk {
                    let w = weights.eval(i, knot);
                    if w != 0.0 {
                        m.syger(w * inv_n, ds.z(i), ds.z(i), 1.0);
                    }
                }
                for i in 0..r {
                    for j in (i + 1)..r {
                        m[(i, j)] = m[(j, i)];
                    }
                }
                g[l - 1] = m;
            }
        }
    }

    let mut ev_subjects: Vec<usize> = (0..n)
        .filter(|&i| ds.is_event(i) && ds.time(i) <= grid.tau())
        .collect();
    ev_subjects.sort_by(|&a, &b| ds.time(a).partial_cmp(&ds.time(b)).unwrap());

    let mut events = Vec::new();
    let mut ptr = 0;
    for (l, &knot) in knots.iter().enumerate() {
        if !grid.event_flags()[l] {
            continue;
        }
        let mut num = DVector::zeros(r);
        let mut dh = DMatrix::zeros(r, r);
        while ptr < ev_subjects.len() && ds.time(ev_subjects[ptr]) == knot {
            let i = ev_subjects[ptr];
            let w = weights.eval(i, knot);
            num.axpy(w * inv_n, ds.z(i), 1.0);
            dh.syger(w * w * inv_n, ds.z(i), ds.z(i), 1.0);
            ptr += 1;
        }
        for i in 0..r {
            for j in (i + 1)..r {
                dh[(i, j)] = dh[(j, i)];
            }
        }
        events.push(EventPoint { knot: l, time: knot, num, dh });
    }

    RiskPaths { g, events }
}
