//! Dataset representation, time grid, step paths, and at-risk moment
//! matrices. Everything here is immutable after construction; the estimators
//! are pure functions of these inputs.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Right-censored survival data with a covariate matrix split into a
/// parametric block (first `p` columns) and a nonparametric block (last `q`).
#[derive(Debug, Clone)]
pub struct Dataset {
    times: Vec<f64>,
    status: Vec<u8>,
    covariates: Vec<DVector<f64>>,
    names: Vec<String>,
    p: usize,
}

impl Dataset {
    /// Build a dataset from raw columns. The covariate columns must already
    /// be ordered with the `p` parametric columns first.
    pub fn new(
        times: Vec<f64>,
        status: Vec<u8>,
        covariates: Vec<DVector<f64>>,
        names: Vec<String>,
        p: usize,
    ) -> Result<Self> {
        let n = times.len();
        if n == 0 {
            return Err(Error::Validation("dataset has no rows".into()));
        }
        if status.len() != n || covariates.len() != n {
            return Err(Error::Validation("column lengths differ".into()));
        }
        let r = covariates[0].len();
        if r == 0 {
            return Err(Error::Validation("dataset has no covariates".into()));
        }
        if names.len() != r {
            return Err(Error::Validation("covariate name count mismatch".into()));
        }
        if p > r {
            return Err(Error::Validation(format!(
                "parametric block size {p} exceeds covariate count {r}"
            )));
        }
        for (i, &t) in times.iter().enumerate() {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::Validation(format!("nonpositive time at row {i}")));
            }
        }
        for (i, &d) in status.iter().enumerate() {
            if d > 1 {
                return Err(Error::Validation(format!("status outside {{0,1}} at row {i}")));
            }
        }
        for (i, z) in covariates.iter().enumerate() {
            if z.len() != r {
                return Err(Error::Validation(format!("ragged covariate row {i}")));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("missing covariate cell at row {i}")));
            }
        }
        Ok(Self { times, status, covariates, names, p })
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    /// Total number of covariate columns, r = p + q.
    pub fn r(&self) -> usize {
        self.covariates[0].len()
    }

    /// Size of the parametric block.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Size of the nonparametric block.
    pub fn q(&self) -> usize {
        self.r() - self.p
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn is_event(&self, i: usize) -> bool {
        self.status[i] == 1
    }

    pub fn status(&self) -> &[u8] {
        &self.status
    }

    pub fn z(&self, i: usize) -> &DVector<f64> {
        &self.covariates[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Column indices of the parametric block.
    pub fn par_cols(&self) -> Vec<usize> {
        (0..self.p).collect()
    }

    /// Column indices of the nonparametric block.
    pub fn nonpar_cols(&self) -> Vec<usize> {
        (self.p..self.r()).collect()
    }

    pub fn all_cols(&self) -> Vec<usize> {
        (0..self.r()).collect()
    }

    /// Copy with all non-constant covariate columns centred and scaled to
    /// unit standard deviation. Constant columns (intercepts) are untouched.
    pub fn standardized(&self) -> Dataset {
        let n = self.n() as f64;
        let r = self.r();
        let mut out = self.clone();
        for j in 0..r {
            let mean = self.covariates.iter().map(|z| z[j]).sum::<f64>() / n;
            let var = self.covariates.iter().map(|z| (z[j] - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                let sd = var.sqrt();
                for z in out.covariates.iter_mut() {
                    z[j] = (z[j] - mean) / sd;
                }
            }
        }
        out
    }
}

/// How to pick the upper end of the observation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauSpec {
    /// Largest observed event time.
    Auto,
    Fixed(f64),
}

/// The evaluation grid: knot 0 is time zero, interior knots are the distinct
/// observed times up to tau, the last knot is tau itself. Between
/// consecutive knots every at-risk indicator is constant, and counting
/// process jumps occur only at event-flagged knots.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    knots: Vec<f64>,
    event_flags: Vec<bool>,
    tau: f64,
}

impl TimeGrid {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn event_flags(&self) -> &[bool] {
        &self.event_flags
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of inter-knot intervals; interval `l` (1-based index into
    /// `knots`) covers `(knots[l-1], knots[l]]`.
    pub fn n_intervals(&self) -> usize {
        self.knots.len() - 1
    }

    /// Interval bounds (a, b] for interval index `l` in `1..=n_intervals()`.
    pub fn interval(&self, l: usize) -> (f64, f64) {
        (self.knots[l - 1], self.knots[l])
    }

    /// Index of the interval containing `s` (with `s` in `(a, b]`), i.e. the
    /// smallest knot index `l >= 1` with `knots[l] >= s`. Returns
    /// `n_intervals()` for `s > tau` queries clamped to the last interval.
    pub fn interval_of(&self, s: f64) -> usize {
        match self.knots.binary_search_by(|k| k.partial_cmp(&s).unwrap()) {
            Ok(idx) => idx.max(1),
            Err(idx) => idx.min(self.knots.len() - 1).max(1),
        }
    }
}

/// Build the time grid for a dataset. Observed times beyond tau are
/// excluded from the knots; those subjects simply stay at risk through tau.
pub fn build_time_grid(ds: &Dataset, tau: TauSpec) -> Result<TimeGrid> {
    let tau = match tau {
        TauSpec::Fixed(t) => {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Validation("tau must be positive and finite".into()));
            }
            t
        }
        TauSpec::Auto => {
            let mut last_event: f64 = 0.0;
            for i in 0..ds.n() {
                if ds.is_event(i) {
                    last_event = last_event.max(ds.time(i));
                }
            }
            if last_event == 0.0 {
                return Err(Error::Validation("no events in dataset".into()));
            }
            last_event
        }
    };
    let mut knots: Vec<f64> = ds
        .times()
        .iter()
        .copied()
        .filter(|&t| t <= tau)
        .collect();
    knots.push(0.0);
    knots.push(tau);
    knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    knots.dedup();
    let event_flags: Vec<bool> = knots
        .iter()
        .map(|&k| {
            (0..ds.n()).any(|i| ds.is_event(i) && ds.time(i) == k && k > 0.0)
        })
        .collect();
    if !event_flags.iter().any(|&e| e) {
        return Err(Error::Validation("no events at or before tau".into()));
    }
    Ok(TimeGrid { knots, event_flags, tau })
}

/// Right-continuous piecewise-constant path on the grid: `values[k]` is the
/// value at and after `knots[k]`, until the next knot.
#[derive(Debug, Clone)]
pub struct StepPath<T> {
    knots: Vec<f64>,
    values: Vec<T>,
}

impl<T: Clone> StepPath<T> {
    pub fn new(knots: Vec<f64>, values: Vec<T>) -> Self {
        assert_eq!(knots.len(), values.len(), "knot/value length mismatch");
        assert!(!knots.is_empty());
        Self { knots, values }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Value at the largest knot <= s.
    pub fn value_at(&self, s: f64) -> &T {
        let idx = match self.knots.binary_search_by(|k| k.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        &self.values[idx]
    }

    pub fn last(&self) -> &T {
        self.values.last().unwrap()
    }
}

/// n^{-1} sum over subjects at risk at `s` of w_i(s) z_{i,rows} z_{i,cols}^t.
///
/// With full row/column sets and unit weights this is the at-risk moment
/// matrix G_n(s); restricted to the parametric block it is the default
/// criterion weight matrix V_n(s).
pub fn at_risk_moment(
    ds: &Dataset,
    s: f64,
    mut weight: impl FnMut(usize) -> f64,
    rows: &[usize],
    cols: &[usize],
) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), cols.len());
    for i in 0..ds.n() {
        if ds.time(i) >= s {
            let w = weight(i);
            if w == 0.0 {
                continue;
            }
            let z = ds.z(i);
            for (a, &ra) in rows.iter().enumerate() {
                for (b, &cb) in cols.iter().enumerate() {
                    m[(a, b)] += w * z[ra] * z[cb];
                }
            }
        }
    }
    m /= ds.n() as f64;
    m
}

/// Column roles used when parsing CSV input.
#[derive(Debug, Clone)]
pub struct LoadSchema {
    pub time_column: String,
    pub status_column: String,
    /// Covariate columns forming the parametric block, in order.
    pub parametric: Vec<String>,
    /// Nonparametric covariate columns; `None` means every remaining column
    /// in file order.
    pub nonparametric: Option<Vec<String>>,
    /// Standardize non-constant covariate columns after loading.
    pub standardize: bool,
}

impl Default for LoadSchema {
    fn default() -> Self {
        Self {
            time_column: "time".into(),
            status_column: "status".into(),
            parametric: Vec::new(),
            nonparametric: None,
            standardize: false,
        }
    }
}

/// Parse CSV text (header row required) into a dataset, reordering columns
/// so the parametric block comes first.
pub fn load_dataset(text: &str, schema: &LoadSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv { line: 1, msg: e.to_string() })?
        .iter()
        .map(|h| h.to_string())
        .collect();

    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Csv { line: 1, msg: format!("missing column `{name}`") })
    };
    let time_idx = col_index(&schema.time_column)?;
    let status_idx = col_index(&schema.status_column)?;

    let mut ordered: Vec<(String, usize)> = Vec::new();
    for name in &schema.parametric {
        ordered.push((name.clone(), col_index(name)?));
    }
    match &schema.nonparametric {
        Some(cols) => {
            for name in cols {
                ordered.push((name.clone(), col_index(name)?));
            }
        }
        None => {
            for (j, h) in headers.iter().enumerate() {
                if j != time_idx && j != status_idx && !schema.parametric.iter().any(|c| c == h) {
                    ordered.push((h.clone(), j));
                }
            }
        }
    }
    if ordered.is_empty() {
        return Err(Error::Csv { line: 1, msg: "no covariate columns".into() });
    }
    {
        let mut seen = std::collections::HashSet::new();
        for (name, _) in &ordered {
            if !seen.insert(name.clone()) {
                return Err(Error::Csv { line: 1, msg: format!("duplicate covariate `{name}`") });
            }
        }
    }

    let mut times = Vec::new();
    let mut status = Vec::new();
    let mut covariates = Vec::new();
    for (rec_no, record) in reader.records().enumerate() {
        let line = rec_no + 2;
        let record = record.map_err(|e| Error::Csv { line, msg: e.to_string() })?;
        let field = |idx: usize| -> Result<f64> {
            record
                .get(idx)
                .ok_or_else(|| Error::Csv { line, msg: "short row".into() })?
                .parse::<f64>()
                .map_err(|_| Error::Csv { line, msg: format!("nonnumeric field `{}`", record.get(idx).unwrap_or("")) })
        };
        let t = field(time_idx)?;
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::Csv { line, msg: "nonpositive time".into() });
        }
        let d = field(status_idx)?;
        if d != 0.0 && d != 1.0 {
            return Err(Error::Csv { line, msg: "status outside {0,1}".into() });
        }
        let mut z = DVector::zeros(ordered.len());
        for (slot, (_, idx)) in ordered.iter().enumerate() {
            z[slot] = field(*idx)?;
        }
        times.push(t);
        status.push(d as u8);
        covariates.push(z);
    }

    let names: Vec<String> = ordered.into_iter().map(|(n, _)| n).collect();
    let ds = Dataset::new(times, status, covariates, names, schema.parametric.len())?;
    Ok(if schema.standardize { ds.standardized() } else { ds })
}

/// Serialize a dataset back to CSV with its current column order.
pub fn dataset_to_csv(ds: &Dataset) -> String {
    let mut out = String::from("time,status");
    for name in ds.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..ds.n() {
        out.push_str(&format!("{},{}", ds.time(i), ds.status()[i]));
        for j in 0..ds.r() {
            out.push_str(&format!(",{}", ds.z(i)[j]));
        }
        out.push('\n');
    }
    out
}

/// Write a vector-valued step path as CSV: `time` column then one column per
/// component.
pub fn step_path_to_csv(path: &StepPath<DVector<f64>>, labels: &[String]) -> String {
    let mut out = String::from("time");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (k, t) in path.knots().iter().enumerate() {
        out.push_str(&format!("{t}"));
        for v in path.values()[k].iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
