//! Parametric hazard-factor functions with analytic parameter derivatives
//! and cumulatives, plus their composition into the parametric block.

use crate::error::{Error, Result};
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::sync::Arc;

/// Evaluators for a user-supplied family without a built-in form. Cumulative
/// evaluators are optional; when absent, integration falls back to
/// Gauss-Legendre quadrature.
pub struct CustomFamily {
    pub name: String,
    pub params: usize,
    /// alpha(s, theta)
    pub value: Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    /// d alpha / d theta into `out`
    pub grad: Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>,
    /// A(t, theta) = integral of alpha from 0 to t, if available in closed form
    pub cumulative: Option<Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>>,
    /// d A / d theta into `out`, if available in closed form
    pub cumulative_grad: Option<Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>>,
    /// Which parameters are constrained positive (log-reparameterized in
    /// the optimizers).
    pub positive: Vec<bool>,
}

impl fmt::Debug for CustomFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFamily")
            .field("name", &self.name)
            .field("params", &self.params)
            .finish()
    }
}

/// A single hazard-factor function alpha_j(s, theta_j).
#[derive(Debug, Clone)]
pub enum HazardFamily {
    /// alpha(s, theta) = theta
    Constant,
    /// alpha(s, (t1, t2)) = t1 t2 s^{t2 - 1}, t1 > 0, t2 > 0
    Power,
    /// alpha(s, theta) = theta s
    LinearTime,
    Custom(Arc<CustomFamily>),
}

impl HazardFamily {
    pub fn param_count(&self) -> usize {
        match self {
            HazardFamily::Constant | HazardFamily::LinearTime => 1,
            HazardFamily::Power => 2,
            HazardFamily::Custom(c) => c.params,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            HazardFamily::Constant => "constant",
            HazardFamily::Power => "power",
            HazardFamily::LinearTime => "linear",
            HazardFamily::Custom(c) => &c.name,
        }
    }

    /// Whether the cumulative and its gradient have closed forms.
    pub fn closed_form(&self) -> bool {
        match self {
            HazardFamily::Custom(c) => c.cumulative.is_some() && c.cumulative_grad.is_some(),
            _ => true,
        }
    }

    fn positive_mask(&self) -> Vec<bool> {
        match self {
            HazardFamily::Constant | HazardFamily::LinearTime => vec![false],
            HazardFamily::Power => vec![true, true],
            HazardFamily::Custom(c) => c.positive.clone(),
        }
    }

    /// Check that theta lies in the admissible region.
    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::Config(format!(
                "family `{}` takes {} parameter(s), got {}",
                self.name(),
                self.param_count(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("family `{}`: nonfinite parameter", self.name())));
        }
        for (k, pos) in self.positive_mask().iter().enumerate() {
            if *pos && theta[k] <= 0.0 {
                return Err(Error::Config(format!(
                    "family `{}`: parameter {} must be positive",
                    self.name(),
                    k + 1
                )));
            }
        }
        Ok(())
    }

    pub fn value(&self, s: f64, theta: &[f64]) -> f64 {
        match self {
            HazardFamily::Constant => theta[0],
            HazardFamily::Power => theta[0] * theta[1] * s.powf(theta[1] - 1.0),
            HazardFamily::LinearTime => theta[0] * s,
            HazardFamily::Custom(c) => (c.value)(s, theta),
        }
    }

    pub fn grad(&self, s: f64, theta: &[f64], out: &mut [f64]) {
        match self {
            HazardFamily::Constant => out[0] = 1.0,
            HazardFamily::Power => {
                let pow = s.powf(theta[1] - 1.0);
                out[0] = theta[1] * pow;
                out[1] = theta[0] * pow * (1.0 + theta[1] * s.ln());
            }
            HazardFamily::LinearTime => out[0] = s,
            HazardFamily::Custom(c) => (c.grad)(s, theta, out),
        }
    }

    /// Matrix of second parameter derivatives at (s, theta). Built-in
    /// families are analytic; custom families fall back to central
    /// differences of the gradient. Exposed for diagnostics only.
    pub fn hessian(&self, s: f64, theta: &[f64]) -> DMatrix<f64> {
        let m = self.param_count();
        match self {
            HazardFamily::Constant | HazardFamily::LinearTime => DMatrix::zeros(1, 1),
            HazardFamily::Power => {
                let pow = s.powf(theta[1] - 1.0);
                let ln = s.ln();
                let d12 = pow * (1.0 + theta[1] * ln);
                let d22 = theta[0] * pow * ln * (2.0 + theta[1] * ln);
                DMatrix::from_row_slice(2, 2, &[0.0, d12, d12, d22])
            }
            HazardFamily::Custom(c) => {
                let mut h = DMatrix::zeros(m, m);
                let mut hi = vec![0.0; m];
                let mut lo = vec![0.0; m];
                let mut th = theta.to_vec();
                for k in 0..m {
                    let step = 1e-6 * (1.0 + theta[k].abs());
                    th[k] = theta[k] + step;
                    (c.grad)(s, &th, &mut hi);
                    th[k] = theta[k] - step;
                    (c.grad)(s, &th, &mut lo);
                    th[k] = theta[k];
                    for l in 0..m {
                        h[(l, k)] = (hi[l] - lo[l]) / (2.0 * step);
                    }
                }
                linalg::symmetrize(&mut h);
                h
            }
        }
    }

    /// A(t, theta), closed form where available, otherwise one order-7
    /// Gauss-Legendre panel over (0, t).
    pub fn cumulative(&self, t: f64, theta: &[f64]) -> f64 {
        match self {
            HazardFamily::Constant => theta[0] * t,
            HazardFamily::Power => theta[0] * t.powf(theta[1]),
            HazardFamily::LinearTime => 0.5 * theta[0] * t * t,
            HazardFamily::Custom(c) => match &c.cumulative {
                Some(f) => f(t, theta),
                None => linalg::integrate_gl7(0.0, t, |s| (c.value)(s, theta)),
            },
        }
    }

    pub fn cumulative_grad(&self, t: f64, theta: &[f64], out: &mut [f64]) {
        match self {
            HazardFamily::Constant => out[0] = t,
            HazardFamily::Power => {
                let pow = t.powf(theta[1]);
                out[0] = pow;
                out[1] = if t > 0.0 { theta[0] * pow * t.ln() } else { 0.0 };
            }
            HazardFamily::LinearTime => out[0] = 0.5 * t * t,
            HazardFamily::Custom(c) => match &c.cumulative_grad {
                Some(f) => f(t, theta, out),
                None => {
                    let m = c.params;
                    let mut buf = vec![0.0; m];
                    out.iter_mut().for_each(|v| *v = 0.0);
                    for (x, w) in linalg::gl7(0.0, t) {
                        (c.grad)(x, theta, &mut buf);
                        for k in 0..m {
                            out[k] += w * buf[k];
                        }
                    }
                }
            },
        }
    }
}

/// The stacked parametric block: an ordered list of families, one per
/// parametric covariate column, with disjoint parameter slices.
#[derive(Debug, Clone)]
pub struct ParametricBlock {
    families: Vec<HazardFamily>,
    offsets: Vec<usize>,
    m: usize,
}

impl ParametricBlock {
    pub fn new(families: Vec<HazardFamily>) -> Self {
        let mut offsets = Vec::with_capacity(families.len());
        let mut m = 0;
        for f in &families {
            offsets.push(m);
            m += f.param_count();
        }
        Self { families, offsets, m }
    }

    /// Number of parametric components p.
    pub fn p(&self) -> usize {
        self.families.len()
    }

    /// Total parameter length m.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn families(&self) -> &[HazardFamily] {
        &self.families
    }

    /// Parameter slice of component j within the stacked theta.
    pub fn slice(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j] + self.families[j].param_count()
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.m {
            return Err(Error::Config(format!(
                "parameter vector length {} does not match block size {}",
                theta.len(),
                self.m
            )));
        }
        for (j, f) in self.families.iter().enumerate() {
            f.check_theta(&theta[self.slice(j)])?;
        }
        Ok(())
    }

    /// Stacked alpha_(1)(s, theta) in R^p.
    pub fn alpha(&self, s: f64, theta: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.p(),
            self.families
                .iter()
                .enumerate()
                .map(|(j, f)| f.value(s, &theta[self.slice(j)])),
        )
    }

    /// The p x m gradient matrix of the stacked block; rows have disjoint
    /// nonzero slices (block-diagonal structure).
    pub fn alpha_star(&self, s: f64, theta: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.p(), self.m);
        let mut buf = [0.0; 8];
        for (j, f) in self.families.iter().enumerate() {
            let k = f.param_count();
            let range = self.slice(j);
            if k <= buf.len() {
                f.grad(s, &theta[range.clone()], &mut buf[..k]);
                for (col, off) in range.enumerate() {
                    out[(j, off)] = buf[col];
                }
            } else {
                let mut big = vec![0.0; k];
                f.grad(s, &theta[range.clone()], &mut big);
                for (col, off) in range.enumerate() {
                    out[(j, off)] = big[col];
                }
            }
        }
        out
    }

    /// Stacked cumulative A_(1)(t, theta) in R^p.
    pub fn cumulative(&self, t: f64, theta: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.p(),
            self.families
                .iter()
                .enumerate()
                .map(|(j, f)| f.cumulative(t, &theta[self.slice(j)])),
        )
    }

    /// Integral of alpha_(1) over (t0, t1].
    pub fn cumulative_between(&self, t0: f64, t1: f64, theta: &[f64]) -> DVector<f64> {
        self.cumulative(t1, theta) - self.cumulative(t0, theta)
    }

    /// The p x m matrix of cumulative gradients at t: dA_j(t, theta)/dtheta.
    pub fn cumulative_star(&self, t: f64, theta: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.p(), self.m);
        let mut buf = vec![0.0; 8];
        for (j, f) in self.families.iter().enumerate() {
            let k = f.param_count();
            if buf.len() < k {
                buf.resize(k, 0.0);
            }
            let range = self.slice(j);
            f.cumulative_grad(t, &theta[range.clone()], &mut buf[..k]);
            for (col, off) in range.enumerate() {
                out[(j, off)] = buf[col];
            }
        }
        out
    }

    /// Integral of alpha_star over (t0, t1].
    pub fn cumulative_star_between(&self, t0: f64, t1: f64, theta: &[f64]) -> DMatrix<f64> {
        self.cumulative_star(t1, theta) - self.cumulative_star(t0, theta)
    }

    /// Positivity mask over the stacked parameter vector, used for the
    /// log-reparameterization inside the optimizers.
    pub fn positive_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.m);
        for f in &self.families {
            mask.extend(f.positive_mask());
        }
        mask
    }

    /// Map natural parameters to the unconstrained optimization scale
    /// (log for positivity-constrained coordinates).
    pub fn to_unconstrained(&self, theta: &[f64]) -> DVector<f64> {
        let mask = self.positive_mask();
        DVector::from_iterator(
            self.m,
            theta.iter().zip(mask).map(|(&v, pos)| if pos { v.ln() } else { v }),
        )
    }

    /// Inverse of [`Self::to_unconstrained`].
    pub fn from_unconstrained(&self, eta: &DVector<f64>) -> DVector<f64> {
        let mask = self.positive_mask();
        DVector::from_iterator(
            self.m,
            eta.iter().zip(mask).map(|(&v, pos)| if pos { v.exp() } else { v }),
        )
    }

    /// Diagonal of d theta / d eta at theta.
    pub fn unconstrained_jacobian(&self, theta: &[f64]) -> DVector<f64> {
        let mask = self.positive_mask();
        DVector::from_iterator(
            self.m,
            theta.iter().zip(mask).map(|(&v, pos)| if pos { v } else { 1.0 }),
        )
    }
}

/// Stacked evaluation of the block: (alpha, alpha_star) at (s, theta), with
/// admissibility checks; errors if the power family is evaluated at s = 0
/// with a shape parameter below one (unbounded hazard).
pub fn evaluate(block: &ParametricBlock, s: f64, theta: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    block.check_theta(theta)?;
    for (j, f) in block.families().iter().enumerate() {
        if let HazardFamily::Power = f {
            let shape = theta[block.slice(j)][1];
            if s == 0.0 && shape < 1.0 {
                return Err(Error::Validation(
                    "power family with shape < 1 is unbounded at s = 0".into(),
                ));
            }
        }
    }
    Ok((block.alpha(s, theta), block.alpha_star(s, theta)))
}

/// Stacked integration of the block over (t0, t1): cumulative vector and its
/// p x m parameter gradient.
pub fn integrate(
    block: &ParametricBlock,
    t0: f64,
    t1: f64,
    theta: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    block.check_theta(theta)?;
    if !(0.0 <= t0 && t0 <= t1) {
        return Err(Error::Validation("integration bounds must satisfy 0 <= t0 <= t1".into()));
    }
    Ok((
        block.cumulative_between(t0, t1, theta),
        block.cumulative_star_between(t0, t1, theta),
    ))
}
