//! Small least-squares toolbox shared by the fitting procedures: weighted
//! linear regression and a Levenberg–Marquardt minimizer over weighted
//! residual vectors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value with one-standard-deviation uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

impl Estimate {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    /// |value − truth| / sigma.
    pub fn pull(&self, truth: f64) -> f64 {
        (self.value - truth).abs() / self.sigma
    }
}

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub params: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    /// Normalized residuals (y − model)/σ.
    pub residuals: DVector<f64>,
}

impl LinearFit {
    pub fn estimate(&self, i: usize) -> Estimate {
        Estimate::new(self.params[i], self.covariance[(i, i)].max(0.0).sqrt())
    }
}

/// Minimizes Σ ((y − A p)/σ)² and returns absolute-σ covariance (AᵀWA)⁻¹.
pub fn weighted_linear_fit(design: &DMatrix<f64>, y: &[f64], sigma: &[f64]) -> Result<LinearFit> {
    let (n, k) = design.shape();
    if y.len() != n || sigma.len() != n {
        return Err(Error::InvalidParameter("design, data and sigma lengths differ".into()));
    }
    if n < k {
        return Err(Error::Degenerate(format!("{n} observations for {k} parameters")));
    }
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidParameter("uncertainties must be positive".into()));
    }
    let mut a = design.clone();
    let mut b = DVector::zeros(n);
    for i in 0..n {
        let w = 1.0 / sigma[i];
        a.row_mut(i).scale_mut(w);
        b[i] = y[i] * w;
    }
    // Column equilibration keeps the rank test meaningful across units.
    let scales: Vec<f64> = (0..k)
        .map(|j| {
            let s = a.column(j).norm();
            if s > 0.0 { s } else { 1.0 }
        })
        .collect();
    for (j, s) in scales.iter().enumerate() {
        a.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|s| **s > 1e-10 * smax).count();
    if rank < k {
        return Err(Error::Degenerate(format!("design matrix rank {rank} < {k}")));
    }
    let u = svd.u.as_ref().expect("u computed");
    let v_t = svd.v_t.as_ref().expect("v_t computed");
    let utb = u.transpose() * &b;
    let mut p = DVector::zeros(k);
    let mut cov = DMatrix::zeros(k, k);
    for i in 0..k {
        let s = svd.singular_values[i];
        let vi = v_t.row(i).transpose();
        p += &vi * (utb[i] / s);
        cov += &vi * vi.transpose() / (s * s);
    }
    for j in 0..k {
        p[j] /= scales[j];
        for l in 0..k {
            cov[(j, l)] /= scales[j] * scales[l];
        }
    }
    let model = design * &p;
    let residuals = DVector::from_iterator(n, (0..n).map(|i| (y[i] - model[i]) / sigma[i]));
    let chi2 = residuals.norm_squared();
    Ok(LinearFit { params: p, covariance: cov, chi2, residuals })
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Relative χ² decrease below which the search stops.
    pub ftol: f64,
    /// Relative step size below which the search stops.
    pub xtol: f64,
    /// Largest scaled gradient component |gᵢ|/(√(JᵀJ)ᵢᵢ ‖r‖) treated as zero.
    pub gtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iterations: 200, ftol: 1e-10, xtol: 1e-12, gtol: 1e-7, initial_lambda: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: DVector<f64>,
    pub chi2: f64,
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LmResult {
    /// (JᵀJ)⁻¹ of the weighted residual Jacobian; `None` when singular.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        let jtj = self.jacobian.transpose() * &self.jacobian;
        jtj.try_inverse()
    }
}

/// Central-difference Jacobian of the residual map. Steps assume parameters
/// scaled to order unity.
pub fn numeric_jacobian<F>(f: &F, x: &DVector<f64>, r0: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    for j in 0..x.len() {
        let h = 1e-7 * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let d = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &d);
    }
    jac
}

/// Levenberg–Marquardt on weighted residuals r(x); minimizes ‖r‖².
pub fn levenberg_marquardt<F>(f: F, x0: DVector<f64>, config: LmConfig) -> LmResult
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut x = x0;
    let mut r = f(&x);
    let mut chi2 = r.norm_squared();
    let mut lambda = config.initial_lambda;
    let mut nu = 2.0;
    let mut jac = numeric_jacobian(&f, &x, &r);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let scaled = (0..g.len())
            .map(|i| g[i].abs() / (jtj[(i, i)].sqrt() * chi2.sqrt()).max(1e-300))
            .fold(0.0, f64::max);
        if scaled < config.gtol || chi2 == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= nu;
                nu *= 2.0;
                continue;
            };
            let x_new = &x + &step;
            let r_new = f(&x_new);
            let chi2_new = r_new.norm_squared();
            let predicted = -2.0 * g.dot(&step) - (&jac * &step).norm_squared();
            let rho = if predicted > 0.0 { (chi2 - chi2_new) / predicted } else { -1.0 };
            if chi2_new.is_finite() && chi2_new <= chi2 && (rho > 0.0 || chi2_new == chi2) {
                let rel = (chi2 - chi2_new) / chi2.max(1e-300);
                let step_rel = step.norm() / (x.norm() + 1e-300);
                x = x_new;
                r = r_new;
                chi2 = chi2_new;
                lambda = (lambda * (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3))).max(1e-12);
                nu = 2.0;
                accepted = true;
                if rel < config.ftol || step_rel < config.xtol || chi2 == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= nu;
            nu *= 2.0;
        }
        if !accepted {
            // No downhill step at any damping: at a (numerical) minimum.
            converged = true;
            break;
        }
        jac = numeric_jacobian(&f, &x, &r);
        if converged {
            break;
        }
    }
    LmResult { params: x, chi2, residuals: r, jacobian: jac, iterations, converged }
}
