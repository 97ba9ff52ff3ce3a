//! Damped Newton minimization of the smoothed objectives, used for MAP fits
//! inside cross-validation and for the frequentist quantile regression baseline.

use crate::error::{BsqrError, Result};
use crate::model::{residuals, Dataset, Priors};
use crate::smoothing::{Kernel, QuantileSpec};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-8, max_iters: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Objective with value, gradient and Hessian.
pub trait SmoothObjective {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// Minimizes a convex objective with Levenberg-damped Newton steps and an
/// Armijo backtracking line search. Falls back to the steepest-descent
/// direction whenever the damped system cannot be factored.
pub fn minimize_newton<O: SmoothObjective>(
    obj: &O,
    x0: DVector<f64>,
    opts: NewtonOptions,
) -> Result<OptimResult> {
    let mut x = x0;
    let mut f = obj.value(&x);
    let mut lambda = 0.0f64;
    for it in 0..opts.max_iters {
        let g = obj.gradient(&x);
        let gnorm = g.norm();
        if gnorm < opts.grad_tol {
            return Ok(OptimResult { x, value: f, grad_norm: gnorm, iterations: it });
        }
        let hess = obj.hessian(&x);
        // near-flat pieces of the objective give enormous Newton steps; clip them
        let radius = 10.0 * (1.0 + x.norm());
        let scale = (0..hess.nrows())
            .map(|j| hess[(j, j)].abs())
            .fold(0.0, f64::max)
            .max(gnorm / radius);
        let dir = loop {
            let mut damped = hess.clone();
            for j in 0..damped.nrows() {
                damped[(j, j)] += lambda * scale + 1e-14 * scale;
            }
            match damped.cholesky() {
                Some(ch) => break -ch.solve(&g),
                None if lambda < 1e6 => lambda = (lambda * 10.0).max(1e-8),
                None => break -&g / scale,
            }
        };
        let descent = dir.iter().all(|v| v.is_finite()) && g.dot(&dir) < 0.0;
        let dir = if descent { dir } else { -&g * (radius / gnorm) };
        let len = dir.norm();
        let dir = if len > radius { dir * (radius / len) } else { dir };
        let slope = g.dot(&dir);
        let min_step = 1e-16 * (1.0 + x.norm()) / dir.norm().max(1e-300);

        let mut step = 1.0;
        let mut accepted = false;
        while step > min_step {
            let cand = &x + step * &dir;
            let fc = obj.value(&cand);
            if fc.is_finite() && fc <= f + 1e-4 * step * slope {
                // a full step that needed no backtracking lets the damping relax
                if step == 1.0 {
                    lambda *= 0.1;
                    if lambda < 1e-12 {
                        lambda = 0.0;
                    }
                } else {
                    lambda = (lambda * 4.0).max(1e-8);
                }
                x = cand;
                f = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no representable decrease left: we are at the minimum to working precision
            let gnorm = obj.gradient(&x).norm();
            let precision = 1e3 * f64::EPSILON * (1.0 + f.abs());
            if gnorm < opts.grad_tol.max(precision) || -slope < precision {
                return Ok(OptimResult { x, value: f, grad_norm: gnorm, iterations: it });
            }
            return Err(BsqrError::Numeric(format!(
                "line search failed after {it} iterations; gradient norm {gnorm:e}, last iterate {:?}",
                x.as_slice()
            )));
        }
    }
    let gnorm = obj.gradient(&x).norm();
    if gnorm < opts.grad_tol {
        return Ok(OptimResult { x, value: f, grad_norm: gnorm, iterations: opts.max_iters });
    }
    Err(BsqrError::Numeric(format!(
        "Newton iteration cap ({}) reached; gradient norm {gnorm:e}, last iterate {:?}",
        opts.max_iters,
        x.as_slice()
    )))
}

/// `w · Σ L_h(e_i) + ‖β - β₀‖²/(2σ²)` (prior optional).
pub struct SmoothedQrObjective<'a> {
    pub data: &'a Dataset,
    pub spec: QuantileSpec,
    pub weight: f64,
    pub priors: Option<&'a Priors>,
}

impl SmoothObjective for SmoothedQrObjective<'_> {
    fn value(&self, b: &DVector<f64>) -> f64 {
        let e = residuals(self.data, b).expect("dimension checked by caller");
        let s: f64 = e.iter().map(|&v| self.spec.loss(v)).sum();
        let prior = self.priors.map_or(0.0, |p| -p.log_beta_prior(b));
        self.weight * s + prior
    }

    fn gradient(&self, b: &DVector<f64>) -> DVector<f64> {
        let e = residuals(self.data, b).expect("dimension checked by caller");
        let psi = e.map(|v| self.spec.score(v));
        let mut g = -self.weight * self.data.x().tr_mul(&psi);
        if let Some(p) = self.priors {
            g += (b - &p.beta_mean) / p.beta_var;
        }
        g
    }

    fn hessian(&self, b: &DVector<f64>) -> DMatrix<f64> {
        let mut hess = crate::model::likelihood_hessian_beta(self.data, b, self.weight, &self.spec)
            .expect("dimension checked by caller");
        if let Some(p) = self.priors {
            for j in 0..hess.nrows() {
                hess[(j, j)] += 1.0 / p.beta_var;
            }
        }
        hess
    }
}

/// Ordinary least squares via QR; `None` when the design is rank deficient.
pub fn ols(data: &Dataset) -> Option<DVector<f64>> {
    let x = data.x();
    let sv = x.clone().svd(false, false).singular_values;
    if sv.min() <= 1e-10 * sv.max() {
        return None;
    }
    let qr = x.clone().qr();
    let qty = qr.q().tr_mul(data.y());
    qr.r().solve_upper_triangular(&qty)
}

/// Least-squares coefficients with their classical standard errors. Standard
/// errors are floored at `1e-3 (|β_j| + sd(y))` so exact fits still give a
/// usable proposal scale.
pub fn ols_with_se(data: &Dataset) -> Option<(DVector<f64>, DVector<f64>)> {
    let beta = ols(data)?;
    let (n, d) = (data.n(), data.d());
    let e = data.y() - data.x() * &beta;
    let sigma2 = e.norm_squared() / (n.saturating_sub(d)).max(1) as f64;
    let xtx_inv = data.x().tr_mul(data.x()).try_inverse()?;
    let y_sd = if n > 1 { data.y().variance().sqrt() } else { 0.0 };
    let se = DVector::from_fn(d, |j, _| {
        let floor = 1e-3 * (beta[j].abs() + y_sd) + 1e-12;
        (sigma2 * xtx_inv[(j, j)]).sqrt().max(floor)
    });
    Some((beta, se))
}

/// Minimizer of `w Σ L_h(e_i) (+ prior)` by Newton continuation in `h`: the
/// bandwidth starts at `start_h` and shrinks tenfold per stage, each stage
/// warm-started from the previous one, until `spec.h` is reached.
pub fn minimize_smoothed_qr(
    data: &Dataset,
    spec: &QuantileSpec,
    weight: f64,
    priors: Option<&Priors>,
    start_h: f64,
    x0: DVector<f64>,
    opts: NewtonOptions,
) -> Result<OptimResult> {
    let mut stages = Vec::new();
    let mut h = start_h.max(spec.h);
    while h > spec.h * 10.0 {
        stages.push(h);
        h /= 10.0;
    }
    stages.push(spec.h);

    let mut x = x0;
    let mut last = None;
    let loose = NewtonOptions { grad_tol: opts.grad_tol.max(1e-6), ..opts };
    for (k, &hk) in stages.iter().enumerate() {
        let stage_spec = QuantileSpec { h: hk, ..*spec };
        let obj = SmoothedQrObjective { data, spec: stage_spec, weight, priors };
        let o = if k + 1 == stages.len() { opts } else { loose };
        let r = minimize_newton(&obj, x, o)?;
        x = r.x.clone();
        last = Some(r);
    }
    Ok(last.expect("at least one stage"))
}

/// Frequentist quantile regression through the tiny-bandwidth smoothed
/// surrogate: Uniform kernel with `h = 1e-4 · scale`, `scale` the mean
/// absolute deviation of the least-squares residuals (or of `y` when the
/// least-squares fit interpolates).
pub fn std_qr_fit(data: &Dataset, tau: f64) -> Result<DVector<f64>> {
    let beta0 = ols(data).ok_or_else(|| BsqrError::Data("design matrix is rank deficient".into()))?;
    let e = residuals(data, &beta0)?;
    let mad = |v: &DVector<f64>| v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64;
    let y_scale = mad(&data.y().add_scalar(-data.y().mean())).max(f64::MIN_POSITIVE);
    let resid_scale = mad(&e);
    let scale = if resid_scale > 1e-8 * y_scale { resid_scale } else { 1e-4 * y_scale };
    let spec = QuantileSpec::new(tau, 1e-4 * scale, Kernel::Uniform)?;
    let start = resid_scale.max(y_scale);
    Ok(minimize_smoothed_qr(data, &spec, 1.0, None, start, beta0, NewtonOptions::default())?.x)
}
