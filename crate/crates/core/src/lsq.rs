//! Damped nonlinear least squares and weighted linear regression.
//!
//! The nonlinear solver is a Levenberg-Marquardt iteration on the
//! column-scaled Jacobian (Moré's scaling). Standard errors come from the
//! pseudo-inverse of JᵀJ multiplied by the residual variance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single fitted parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<FitParam>,
    /// Parameter covariance, present only when the normal matrix has full rank.
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Euclidean norm of the final residual vector.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Diagnostics such as parameters pinned at a bound.
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn stderr(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).and_then(|p| p.stderr)
    }

    pub fn values(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.value).collect()
    }

    /// Value of a parameter that is known to exist.
    pub(crate) fn expect(&self, name: &str) -> f64 {
        self.value(name).unwrap_or_else(|| panic!("fit result has no parameter `{name}`"))
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }
}

/// A residual vector r(p) to be minimized in the 2-norm.
pub trait Residuals {
    fn count(&self) -> usize;

    fn eval(&self, p: &[f64], out: &mut [f64]);

    /// Writes the analytic Jacobian and returns true, or returns false to
    /// request central finite differences.
    fn jacobian(&self, _p: &[f64], _jac: &mut DMatrix<f64>) -> bool {
        false
    }
}

/// Residuals given by a closure writing into the output slice.
pub struct FnResiduals<F> {
    pub len: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64])> Residuals for FnResiduals<F> {
    fn count(&self) -> usize {
        self.len
    }

    fn eval(&self, p: &[f64], out: &mut [f64]) {
        (self.f)(p, out)
    }
}

#[derive(Clone, Debug)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative step tolerance (scaled parameter norm).
    pub xtol: f64,
    /// Relative cost reduction tolerance.
    pub ftol: f64,
    /// Optional box constraints, one (lower, upper) per parameter.
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Relative finite-difference step.
    pub fd_step: f64,
    /// Typical parameter magnitudes, used to size finite-difference steps
    /// for parameters starting at zero.
    pub typical: Option<Vec<f64>>,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: 200, xtol: 1e-10, ftol: 1e-12, bounds: None, fd_step: 1e-6, typical: None }
    }
}

/// Flag set when a parameter ends on one of its box constraints.
pub const FLAG_AT_BOUND: &str = "at_bound";

fn clamp_into(p: &mut [f64], bounds: Option<&Vec<(f64, f64)>>) {
    if let Some(b) = bounds {
        for (x, &(lo, hi)) in p.iter_mut().zip(b) {
            *x = x.clamp(lo, hi);
        }
    }
}

fn finite_difference_jacobian<R: Residuals + ?Sized>(
    problem: &R,
    p: &[f64],
    scale: &[f64],
    rel: f64,
    bounds: Option<&Vec<(f64, f64)>>,
    jac: &mut DMatrix<f64>,
) {
    let m = problem.count();
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let h = rel * p[j].abs().max(scale[j]);
        let (mut hp, mut hm) = (h, h);
        if let Some(b) = bounds {
            let (lo, hi) = b[j];
            hp = hp.min(hi - p[j]);
            hm = hm.min(p[j] - lo);
        }
        if hp <= 0.0 && hm <= 0.0 {
            jac.column_mut(j).fill(0.0);
            continue;
        }
        q[j] = p[j] + hp;
        problem.eval(&q, &mut plus);
        q[j] = p[j] - hm;
        problem.eval(&q, &mut minus);
        q[j] = p[j];
        let denom = hp + hm;
        for i in 0..m {
            jac[(i, j)] = (plus[i] - minus[i]) / denom;
        }
    }
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|x| x * x).sum::<f64>()
}

/// Covariance s²·(JᵀJ)⁺ from the Jacobian at the optimum, or `None` when
/// the scaled Jacobian is numerically rank deficient or there are no
/// residual degrees of freedom.
pub fn covariance_from_jacobian(jac: &DMatrix<f64>, residual_ss: f64) -> Option<DMatrix<f64>> {
    let (m, n) = jac.shape();
    if m <= n {
        return None;
    }
    let d: Vec<f64> = (0..n).map(|j| jac.column(j).norm()).collect();
    if d.iter().any(|&x| x == 0.0 || !x.is_finite()) {
        return None;
    }
    let mut js = jac.clone();
    for (j, &dj) in d.iter().enumerate() {
        js.column_mut(j).scale_mut(1.0 / dj);
    }
    let svd = js.svd(false, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return None;
    }
    let v_t = svd.v_t.as_ref()?;
    let s2 = residual_ss / (m - n) as f64;
    let mut cov = DMatrix::zeros(n, n);
    for k in 0..n {
        let inv = 1.0 / svd.singular_values[k].powi(2);
        let row = v_t.row(k);
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] += row[i] * row[j] * inv;
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            cov[(i, j)] *= s2 / (d[i] * d[j]);
        }
    }
    Some(cov)
}

fn assemble(
    names: &[&str],
    values: &[f64],
    cov: Option<DMatrix<f64>>,
    residual_norm: f64,
    converged: bool,
    iterations: usize,
    flags: Vec<String>,
) -> FitResult {
    let params = names
        .iter()
        .enumerate()
        .map(|(i, name)| FitParam {
            name: (*name).to_string(),
            value: values[i],
            stderr: cov.as_ref().map(|c| c[(i, i)].max(0.0).sqrt()),
        })
        .collect();
    let covariance = cov.map(|c| (0..c.nrows()).map(|i| c.row(i).iter().copied().collect()).collect());
    FitResult { params, covariance, residual_norm, converged, iterations, flags }
}

/// Minimizes ‖r(p)‖² starting from `p0`.
pub fn levenberg_marquardt<R: Residuals + ?Sized>(
    problem: &R,
    p0: &[f64],
    names: &[&str],
    opts: &LmOptions,
) -> Result<FitResult> {
    let n = p0.len();
    let m = problem.count();
    if names.len() != n {
        return Err(Error::input("parameter names and initial values differ in length"));
    }
    if m < n {
        return Err(Error::RankDeficient(format!("{m} residuals cannot determine {n} parameters")));
    }
    let bounds = opts.bounds.as_ref();
    let scale: Vec<f64> = match &opts.typical {
        Some(t) => t.iter().map(|x| x.abs()).collect(),
        None => p0.iter().map(|x| if *x == 0.0 { 1.0 } else { x.abs() }).collect(),
    };

    let mut p = p0.to_vec();
    clamp_into(&mut p, bounds);
    let mut r = vec![0.0; m];
    problem.eval(&p, &mut r);
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("residuals are not finite at the initial guess"));
    }
    let mut cost = half_sq(&r);
    let mut jac = DMatrix::zeros(m, n);
    let mut diag = vec![0.0f64; n];
    let mut lambda = 1e-3;
    let mut r_new = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        if !problem.jacobian(&p, &mut jac) {
            finite_difference_jacobian(problem, &p, &scale, opts.fd_step, bounds, &mut jac);
        }
        for (j, d) in diag.iter_mut().enumerate() {
            *d = d.max(jac.column(j).norm());
            if *d == 0.0 {
                *d = 1.0;
            }
        }
        let mut js = jac.clone();
        for (j, d) in diag.iter().enumerate() {
            js.column_mut(j).scale_mut(1.0 / d);
        }
        let rv = DVector::from_column_slice(&r);
        let mut gs = js.transpose() * &rv;
        let mut a = js.transpose() * &js;
        // Parameters pinned on a bound with the gradient pointing outward
        // are frozen for this step.
        if let Some(b) = bounds {
            for j in 0..n {
                let (lo, hi) = b[j];
                if (p[j] >= hi && gs[j] < 0.0) || (p[j] <= lo && gs[j] > 0.0) {
                    gs[j] = 0.0;
                    for k in 0..n {
                        a[(j, k)] = 0.0;
                        a[(k, j)] = 0.0;
                    }
                    a[(j, j)] = 1.0;
                }
            }
        }
        if cost == 0.0 || gs.amax() <= 1e-15 * rv.norm() {
            converged = true;
            break;
        }

        loop {
            let mut mat = a.clone();
            for i in 0..n {
                mat[(i, i)] += lambda;
            }
            let z = match mat.clone().cholesky() {
                Some(ch) => -ch.solve(&gs),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e20 {
                        converged = true;
                        break 'outer;
                    }
                    continue;
                }
            };
            let mut p_new: Vec<f64> = (0..n).map(|j| p[j] + z[j] / diag[j]).collect();
            clamp_into(&mut p_new, bounds);
            problem.eval(&p_new, &mut r_new);
            let cost_new = if r_new.iter().all(|x| x.is_finite()) { half_sq(&r_new) } else { f64::INFINITY };
            if cost_new < cost {
                let predicted = -(gs.dot(&z) + 0.5 * z.dot(&(&a * &z)));
                let actual = cost - cost_new;
                let step: f64 = (0..n).map(|j| ((p_new[j] - p[j]) * diag[j]).powi(2)).sum::<f64>().sqrt();
                let pnorm: f64 = (0..n).map(|j| (p[j] * diag[j]).powi(2)).sum::<f64>().sqrt();
                p = p_new;
                std::mem::swap(&mut r, &mut r_new);
                let old = cost;
                cost = cost_new;
                lambda = (lambda / 3.0).max(1e-15);
                if step <= opts.xtol * (pnorm + opts.xtol)
                    || (actual <= opts.ftol * old && predicted <= opts.ftol * old)
                    || cost == 0.0
                {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e20 {
                // No descent direction left at working precision.
                converged = true;
                break 'outer;
            }
        }
    }

    let residual_norm = (2.0 * cost).sqrt();
    if !converged {
        return Err(Error::NoConvergence { iterations, residual_norm, last: p });
    }
    if !problem.jacobian(&p, &mut jac) {
        finite_difference_jacobian(problem, &p, &scale, opts.fd_step, bounds, &mut jac);
    }
    let cov = covariance_from_jacobian(&jac, 2.0 * cost);
    let mut flags = Vec::new();
    if let Some(b) = bounds {
        for (j, &(lo, hi)) in b.iter().enumerate() {
            if p[j] <= lo || p[j] >= hi {
                flags.push(format!("{FLAG_AT_BOUND}:{}", names[j]));
            }
        }
    }
    Ok(assemble(names, &p, cov, residual_norm, true, iterations, flags))
}

/// Weighted linear least squares y ≈ X·β with weights 1/σ².
///
/// Fails with a rank-deficiency error when the design matrix does not
/// determine every coefficient.
pub fn linear_least_squares(
    design: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    names: &[&str],
) -> Result<FitResult> {
    let (m, n) = design.shape();
    if y.len() != m || names.len() != n {
        return Err(Error::input("design matrix, data and names disagree in size"));
    }
    if let Some(w) = weights {
        if w.len() != m || w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::input("weights must be positive and one per point"));
        }
    }
    let sw: Vec<f64> = (0..m).map(|i| weights.map_or(1.0, |w| w[i].sqrt())).collect();
    let mut xw = design.clone();
    let mut yw = DVector::from_column_slice(y);
    for i in 0..m {
        xw.row_mut(i).scale_mut(sw[i]);
        yw[i] *= sw[i];
    }
    let d: Vec<f64> = (0..n).map(|j| xw.column(j).norm()).collect();
    if d.contains(&0.0) {
        return Err(Error::RankDeficient("a regressor is identically zero".into()));
    }
    let mut xs = xw.clone();
    for (j, &dj) in d.iter().enumerate() {
        xs.column_mut(j).scale_mut(1.0 / dj);
    }
    let svd = xs.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if m < n || !(smin > 1e-10 * smax) {
        return Err(Error::RankDeficient(format!("design matrix is singular (condition {:.3e})", smax / smin)));
    }
    let beta_s = svd.solve(&yw, 0.0).map_err(|e| Error::RankDeficient(e.to_string()))?;
    let beta: Vec<f64> = (0..n).map(|j| beta_s[j] / d[j]).collect();
    let resid = &yw - &xw * DVector::from_column_slice(&beta);
    let ss = resid.norm_squared();
    let cov = covariance_from_jacobian(&xw, ss);
    Ok(assemble(names, &beta, cov, ss.sqrt(), true, 1, Vec::new()))
}

/// Zero-intercept line y = s·x, weighted by 1/σ² when given.
pub fn fit_proportional(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<FitResult> {
    let design = DMatrix::from_column_slice(x.len(), 1, x);
    linear_least_squares(&design, y, weights, &["slope"])
}
