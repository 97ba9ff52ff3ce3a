//! The smoothed quantile likelihood, its normalizing constant and the
//! potential energies used by the samplers.

use crate::error::{check_positive, check_tau, BsqrError, Result};
use crate::quadrature::integrate_relative;
use crate::smoothing::{loss_minimum, rho, Kernel, QuantileSpec};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::HashMap;
use std::sync::RwLock;

/// Response vector and design matrix. The first column of `x` is the intercept.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.is_empty() || x.ncols() == 0 {
            return Err(BsqrError::Data("dataset needs n >= 1 rows and d >= 1 columns".into()));
        }
        if x.nrows() != y.len() {
            return Err(BsqrError::Dimension {
                what: "design rows vs response length",
                expected: y.len(),
                got: x.nrows(),
            });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(BsqrError::Data(format!("response has a non-finite value at row {i}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(BsqrError::Data("design matrix has non-finite entries".into()));
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(BsqrError::Data("first design column must be the all-ones intercept".into()));
        }
        Ok(Self { y, x })
    }

    /// Builds a dataset from covariate columns, prepending the intercept.
    pub fn with_intercept(y: DVector<f64>, covariates: &DMatrix<f64>) -> Result<Self> {
        let n = covariates.nrows();
        let x = DMatrix::from_fn(n, covariates.ncols() + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                covariates[(i, j - 1)]
            }
        });
        Self::new(y, x)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Rows picked by `rows`, in order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        let x = self.x.select_rows(rows.iter());
        Self::new(y, x)
    }

    fn check_beta(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.d() {
            return Err(BsqrError::Dimension {
                what: "coefficient vector",
                expected: self.d(),
                got: beta.len(),
            });
        }
        Ok(())
    }
}

/// Isotropic Gaussian prior on β and Gamma(shape, rate) prior on θ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Priors {
    pub beta_mean: DVector<f64>,
    pub beta_var: f64,
    pub theta_shape: f64,
    pub theta_rate: f64,
}

impl Priors {
    pub fn new(beta_mean: DVector<f64>, beta_var: f64, theta_shape: f64, theta_rate: f64) -> Result<Self> {
        check_positive("beta prior variance", beta_var)?;
        check_positive("theta prior shape", theta_shape)?;
        check_positive("theta prior rate", theta_rate)?;
        Ok(Self { beta_mean, beta_var, theta_shape, theta_rate })
    }

    /// β ~ N(0, 1000 I), θ ~ Gamma(0.01, 0.01).
    pub fn weakly_informative(d: usize) -> Self {
        Self {
            beta_mean: DVector::zeros(d),
            beta_var: 1000.0,
            theta_shape: 0.01,
            theta_rate: 0.01,
        }
    }

    /// `(a - 1) log θ - b θ`, the Gamma log density without its constant.
    pub fn log_theta_prior(&self, theta: f64) -> f64 {
        (self.theta_shape - 1.0) * theta.ln() - self.theta_rate * theta
    }

    /// `-‖β - β₀‖² / (2σ²)`, the Gaussian log density without its constant.
    pub fn log_beta_prior(&self, beta: &DVector<f64>) -> f64 {
        -(beta - &self.beta_mean).norm_squared() / (2.0 * self.beta_var)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub beta: DVector<f64>,
    pub theta: f64,
}

impl ModelState {
    pub fn new(beta: DVector<f64>, theta: f64) -> Result<Self> {
        check_positive("theta", theta)?;
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(BsqrError::Domain("coefficients must be finite".into()));
        }
        Ok(Self { beta, theta })
    }
}

pub fn residuals(data: &Dataset, beta: &DVector<f64>) -> Result<DVector<f64>> {
    data.check_beta(beta)?;
    Ok(data.y() - data.x() * beta)
}

/// `S(β) = Σ L_h(e_i)`.
pub fn loss_sum(data: &Dataset, beta: &DVector<f64>, spec: &QuantileSpec) -> Result<f64> {
    Ok(residuals(data, beta)?.iter().map(|&e| spec.loss(e)).sum())
}

/// Above `θh` of this size compact kernels switch to the Laplace approximation.
pub const LAPLACE_SWITCH_COMPACT: f64 = 200.0;
/// Same switch for the Gaussian kernel.
pub const LAPLACE_SWITCH_GAUSSIAN: f64 = 500.0;

const Z_REL_TOL: f64 = 1e-10;
const Z_MAX_DEPTH: u32 = 20;
const Z_PANELS: usize = 32;
/// Half width, in bandwidths, of the Gaussian-kernel quadrature window around
/// `[min(u_min, 0), max(u_min, 0)]`. Beyond it `L_h - ρ_τ < 1e-22 h`.
const GAUSSIAN_WINDOW: f64 = 10.0;

/// Which evaluation path produced a value of `log Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ZBranch {
    Quadrature,
    Laplace,
}

/// Branch taken for `(θ, spec)`; the switch is strict, so `θh` equal to the
/// threshold still uses quadrature.
pub fn z_branch(theta: f64, spec: &QuantileSpec) -> ZBranch {
    let limit = if spec.kernel.is_compact() {
        LAPLACE_SWITCH_COMPACT
    } else {
        LAPLACE_SWITCH_GAUSSIAN
    };
    if theta * spec.h > limit {
        ZBranch::Laplace
    } else {
        ZBranch::Quadrature
    }
}

/// `log Z(θ)` with `Z(θ) = ∫ exp(-θ L_h(u)) du`.
pub fn log_normalizing_constant(theta: f64, spec: &QuantileSpec) -> Result<f64> {
    check_positive("theta", theta)?;
    match z_branch(theta, spec) {
        ZBranch::Quadrature => log_z_quadrature(theta, spec),
        ZBranch::Laplace => Ok(log_z_laplace(theta, spec)),
    }
}

pub fn normalizing_constant(theta: f64, spec: &QuantileSpec) -> Result<f64> {
    log_normalizing_constant(theta, spec).map(f64::exp)
}

/// Laplace approximation `½ log(2π / (θ L''(u_min))) - θ L_min`.
pub fn log_z_laplace(theta: f64, spec: &QuantileSpec) -> f64 {
    let m = loss_minimum(spec);
    let curv = spec.curvature(m.argmin);
    0.5 * (2.0 * std::f64::consts::PI / (theta * curv)).ln() - theta * m.value
}

/// Quadrature evaluation of `log Z`, whatever the size of `θh`.
///
/// The integrand is rescaled by `exp(θ L_min)` so that it peaks at one; the
/// offset is added back in log space. Tails beyond the kernel band are
/// integrated in closed form using `L_h = ρ_τ` there.
pub fn log_z_quadrature(theta: f64, spec: &QuantileSpec) -> Result<f64> {
    check_positive("theta", theta)?;
    let QuantileSpec { tau, h, kernel } = *spec;
    let m = loss_minimum(spec);
    let f = |u: f64| (-theta * (spec.loss(u) - m.value)).exp();

    let (a, b) = match kernel {
        Kernel::Gaussian => (
            m.argmin.min(0.0) - GAUSSIAN_WINDOW * h,
            m.argmin.max(0.0) + GAUSSIAN_WINDOW * h,
        ),
        _ => (-h, h),
    };

    let mut core = 0.0;
    let mut unconverged = 0;
    let mut pieces = vec![(a, b)];
    if kernel == Kernel::Triangular {
        // kink of the kernel density at zero
        pieces = vec![(a, 0.0), (0.0, b)];
    }
    for (lo, hi) in pieces {
        let q = integrate_relative(&f, lo, hi, Z_REL_TOL, Z_MAX_DEPTH, Z_PANELS)?;
        core += q.value;
        unconverged += q.unconverged;
    }
    if unconverged > 0 {
        log::debug!("log Z quadrature: {unconverged} panels hit the depth cap (theta={theta}, {spec:?})");
    }

    // ∫_{-∞}^{a} exp(-θ((1-τ)|u| - L_min)) and ∫_{b}^{∞} exp(-θ(τu - L_min))
    let left = (-theta * ((1.0 - tau) * -a - m.value)).exp() / (theta * (1.0 - tau));
    let right = (-theta * (tau * b - m.value)).exp() / (theta * tau);
    let total = core + left + right;
    if !(total.is_finite() && total > 0.0) {
        return Err(BsqrError::Numeric(format!(
            "normalizing constant not finite/positive: core={core}, tails=({left}, {right}), theta={theta}, {spec:?}"
        )));
    }
    Ok(total.ln() - theta * m.value)
}

/// Read-mostly memo table for `log Z`, shareable across chains.
#[derive(Debug, Default)]
pub struct ZCache {
    table: RwLock<HashMap<ZKey, f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct ZKey {
    theta: u64,
    tau: u64,
    h: u64,
    kernel: Kernel,
}

impl ZKey {
    fn new(rounded: f64, spec: &QuantileSpec) -> Self {
        Self {
            theta: rounded.to_bits(),
            tau: spec.tau.to_bits(),
            h: spec.h.to_bits(),
            kernel: spec.kernel,
        }
    }
}

impl ZCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// `log Z` at `θ` rounded to 1e-12. The value is computed at the rounded
    /// `θ` itself, so results never depend on which caller filled an entry.
    pub fn log_z(&self, theta: f64, spec: &QuantileSpec) -> Result<f64> {
        check_positive("theta", theta)?;
        let rounded = (theta * 1e12).round() / 1e12;
        let rounded = if rounded > 0.0 { rounded } else { theta };
        let key = ZKey::new(rounded, spec);
        if let Some(&v) = self.table.read().expect("Z cache poisoned").get(&key) {
            return Ok(v);
        }
        let v = log_normalizing_constant(rounded, spec)?;
        self.table.write().expect("Z cache poisoned").insert(key, v);
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.table.read().expect("Z cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `ℓ(β, θ) = -n log Z(θ) - θ S(β)`.
pub fn log_likelihood(data: &Dataset, state: &ModelState, spec: &QuantileSpec) -> Result<f64> {
    let s = loss_sum(data, &state.beta, spec)?;
    let log_z = log_normalizing_constant(state.theta, spec)?;
    Ok(-(data.n() as f64) * log_z - state.theta * s)
}

/// `U(β) = θ S(β) + ‖β - β₀‖² / (2σ²)`; constants free of β are dropped.
pub fn potential_beta(
    data: &Dataset,
    beta: &DVector<f64>,
    theta: f64,
    spec: &QuantileSpec,
    priors: &Priors,
) -> Result<f64> {
    Ok(theta * loss_sum(data, beta, spec)? - priors.log_beta_prior(beta))
}

pub fn grad_potential_beta(
    data: &Dataset,
    beta: &DVector<f64>,
    theta: f64,
    spec: &QuantileSpec,
    priors: &Priors,
) -> Result<DVector<f64>> {
    let e = residuals(data, beta)?;
    let psi = e.map(|v| spec.score(v));
    Ok(-theta * data.x().tr_mul(&psi) + (beta - &priors.beta_mean) / priors.beta_var)
}

/// Likelihood part of the β Hessian, `(θ/h) Σ K(e_i/h) x_i x_iᵀ`.
pub fn likelihood_hessian_beta(
    data: &Dataset,
    beta: &DVector<f64>,
    theta: f64,
    spec: &QuantileSpec,
) -> Result<DMatrix<f64>> {
    let e = residuals(data, beta)?;
    let w = e.map(|v| theta * spec.curvature(v));
    let x = data.x();
    let mut wx = x.clone();
    for (i, mut row) in wx.row_iter_mut().enumerate() {
        row *= w[i];
    }
    Ok(x.tr_mul(&wx))
}

pub fn hessian_potential_beta(
    data: &Dataset,
    beta: &DVector<f64>,
    theta: f64,
    spec: &QuantileSpec,
    priors: &Priors,
) -> Result<DMatrix<f64>> {
    let mut hess = likelihood_hessian_beta(data, beta, theta, spec)?;
    for j in 0..hess.nrows() {
        hess[(j, j)] += 1.0 / priors.beta_var;
    }
    Ok(hess)
}

/// `U(θ) = θ S + n log Z(θ) - (a-1) log θ + b θ`, from a precomputed loss sum.
pub fn potential_theta_from_sum(
    loss_sum: f64,
    n: usize,
    theta: f64,
    spec: &QuantileSpec,
    priors: &Priors,
) -> Result<f64> {
    check_positive("theta", theta)?;
    let log_z = if n == 0 { 0.0 } else { log_normalizing_constant(theta, spec)? };
    Ok(theta * loss_sum + n as f64 * log_z - priors.log_theta_prior(theta))
}

pub fn potential_theta(
    data: &Dataset,
    beta: &DVector<f64>,
    theta: f64,
    spec: &QuantileSpec,
    priors: &Priors,
) -> Result<f64> {
    check_positive("theta", theta)?;
    let s = loss_sum(data, beta, spec)?;
    potential_theta_from_sum(s, data.n(), theta, spec, priors)
}

/// Asymmetric Laplace log-likelihood `n log(τ(1-τ)θ) - θ Σ ρ_τ(e_i)`.
pub fn ald_log_likelihood(data: &Dataset, state: &ModelState, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    check_positive("theta", state.theta)?;
    let e = residuals(data, &state.beta)?;
    let s: f64 = e.iter().map(|&v| rho(tau, v)).sum();
    Ok(data.n() as f64 * (tau * (1.0 - tau) * state.theta).ln() - state.theta * s)
}

/// Numeric probe of `∫ Z(θ)^{-n} π(θ) dθ` on a log-spaced θ grid.
#[derive(Debug, Clone, Serialize)]
pub struct ThetaIntegralProbe {
    pub theta_min: f64,
    pub theta_max: f64,
    /// log of the trapezoid estimate over the grid (in log θ, Jacobian included).
    pub log_integral: f64,
    /// log-integrand at the two largest grid points; must be falling for a finite integral.
    pub upper_tail_log_integrand: (f64, f64),
    pub finite: bool,
    /// Asymptotic requirement `b > n L_min` of the large-θ tail.
    pub asymptotic_rate_condition: bool,
}

/// Constants entering the propriety conditions.
#[derive(Debug, Clone, Serialize)]
pub struct ProprietyReport {
    pub n: usize,
    pub d: usize,
    pub tau: f64,
    pub h: f64,
    pub kernel: Kernel,
    pub c_tau: f64,
    pub m_k: f64,
    pub c1: f64,
    pub c3: f64,
    pub c_s: f64,
    pub l_min: f64,
    pub full_rank: bool,
    pub warnings: Vec<String>,
    /// A proper Gaussian β prior makes the fixed-θ posterior proper.
    pub beta_prior_proper: bool,
    /// `b > C_S + n L_min`; `None` when the design is rank deficient.
    pub gamma_rate_condition: Option<bool>,
    pub required_rate: f64,
    pub theta_probe: Option<ThetaIntegralProbe>,
    /// Fitted slope of `-n log Z` against `log θ` on `[1e-4, 1e-2]`.
    pub k_z_slope: f64,
}

pub fn propriety_report(data: &Dataset, spec: &QuantileSpec, priors: &Priors) -> Result<ProprietyReport> {
    let n = data.n();
    let tau = spec.tau;
    let c_tau = tau.min(1.0 - tau);
    let m_k = spec.kernel.first_abs_moment();
    let c1 = c_tau * spec.h * m_k;
    let sv = data.x().clone().svd(false, false).singular_values;
    let s_max = sv.max();
    let c3 = sv.min();
    let full_rank = c3 > 1e-10 * s_max;
    let c_s = c_tau * data.y().norm() + n as f64 * c1;
    let l_min = loss_minimum(spec).value;
    let required_rate = c_s + n as f64 * l_min;

    let mut warnings = Vec::new();
    if !full_rank {
        warnings.push(format!(
            "design matrix is rank deficient (smallest singular value {c3:e}, largest {s_max:e}); \
             Gamma-rate condition not applicable"
        ));
    }

    let theta_probe = if full_rank {
        Some(theta_integral_probe(n, spec, priors)?)
    } else {
        None
    };

    let k_z_slope = {
        let grid: Vec<f64> = (0..=20).map(|i| 10f64.powf(-4.0 + 0.1 * i as f64)).collect();
        let pts: Vec<(f64, f64)> = grid
            .iter()
            .map(|&t| log_normalizing_constant(t, spec).map(|lz| (t.ln(), -(n as f64) * lz)))
            .collect::<Result<_>>()?;
        slope(&pts)
    };

    Ok(ProprietyReport {
        n,
        d: data.d(),
        tau,
        h: spec.h,
        kernel: spec.kernel,
        c_tau,
        m_k,
        c1,
        c3,
        c_s,
        l_min,
        full_rank,
        warnings,
        beta_prior_proper: true,
        gamma_rate_condition: full_rank.then(|| priors.theta_rate > required_rate),
        required_rate,
        theta_probe,
        k_z_slope,
    })
}

fn theta_integral_probe(n: usize, spec: &QuantileSpec, priors: &Priors) -> Result<ThetaIntegralProbe> {
    let (lo, hi) = (-8.0f64, 6.0f64);
    let count = 141;
    let mut pts = Vec::with_capacity(count);
    for i in 0..count {
        let lt = lo + (hi - lo) * i as f64 / (count - 1) as f64;
        let theta = 10f64.powf(lt);
        let log_z = log_normalizing_constant(theta, spec)?;
        // integrand in log θ: Z^{-n} π(θ) θ
        let g = -(n as f64) * log_z + priors.theta_shape * theta.ln() - priors.theta_rate * theta;
        pts.push((theta.ln(), g));
    }
    let peak = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    for w in pts.windows(2) {
        acc += 0.5 * (w[1].0 - w[0].0) * ((w[0].1 - peak).exp() + (w[1].1 - peak).exp());
    }
    let log_integral = acc.ln() + peak;
    let tail = (pts[count - 2].1, pts[count - 1].1);
    let l_min = loss_minimum(spec).value;
    let asymptotic = priors.theta_rate > n as f64 * l_min;
    Ok(ThetaIntegralProbe {
        theta_min: 10f64.powf(lo),
        theta_max: 10f64.powf(hi),
        log_integral,
        upper_tail_log_integrand: tail,
        finite: log_integral.is_finite() && tail.1 < tail.0 && asymptotic,
        asymptotic_rate_condition: asymptotic,
    })
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::from_element(2, 1, 1.0)).unwrap()
    }

    #[test]
    fn residual_examples() {
        let d = toy();
        assert_eq!(residuals(&d, &DVector::from_vec(vec![1.0])).unwrap().as_slice(), &[0.0, 1.0]);
        assert_eq!(residuals(&d, &DVector::zeros(1)).unwrap(), *d.y());
        assert!(residuals(&d, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn dataset_validation() {
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(Dataset::new(y.clone(), DMatrix::from_element(3, 1, 1.0)).is_err());
        assert!(Dataset::new(y.clone(), DMatrix::from_element(2, 1, 2.0)).is_err());
        let bad = DVector::from_vec(vec![1.0, f64::NAN]);
        assert!(Dataset::new(bad, DMatrix::from_element(2, 1, 1.0)).is_err());
    }

    #[test]
    fn loss_sum_examples() {
        let d = Dataset::new(DVector::zeros(4), DMatrix::from_element(4, 1, 1.0)).unwrap();
        let b = DVector::zeros(1);
        let u = QuantileSpec::new(0.3, 2.0, Kernel::Uniform).unwrap();
        assert!((loss_sum(&d, &b, &u).unwrap() - 4.0 * 0.5).abs() < 1e-15);
        let t = QuantileSpec::new(0.3, 2.0, Kernel::Triangular).unwrap();
        assert!((loss_sum(&d, &b, &t).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        let one = Dataset::new(DVector::from_vec(vec![10.0]), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let u1 = QuantileSpec::new(0.3, 1.0, Kernel::Uniform).unwrap();
        assert!((loss_sum(&one, &b, &u1).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn branch_switch_is_strict() {
        let s = QuantileSpec::new(0.5, 1.0, Kernel::Uniform).unwrap();
        assert_eq!(z_branch(200.0, &s), ZBranch::Quadrature);
        assert_eq!(z_branch(200.0 + 1e-9, &s), ZBranch::Laplace);
        let g = QuantileSpec::new(0.5, 1.0, Kernel::Gaussian).unwrap();
        assert_eq!(z_branch(400.0, &g), ZBranch::Quadrature);
    }

    #[test]
    fn z_rejects_bad_theta() {
        let s = QuantileSpec::new(0.5, 1.0, Kernel::Uniform).unwrap();
        assert!(normalizing_constant(0.0, &s).is_err());
        assert!(normalizing_constant(-1.0, &s).is_err());
    }

    #[test]
    fn uniform_z_closed_form() {
        // central band is a Gaussian integral when τ = 0.5
        let (theta, h) = (1.0, 1.0);
        let s = QuantileSpec::new(0.5, h, Kernel::Uniform).unwrap();
        let z = normalizing_constant(theta, &s).unwrap();
        let sd = (2.0 * h / theta).sqrt();
        let core = (-theta * h / 4.0).exp()
            * (2.0 * std::f64::consts::PI).sqrt()
            * sd
            * (crate::normal::cdf(h / sd) - crate::normal::cdf(-h / sd));
        let tails = 2.0 * (-theta * 0.5 * h).exp() / (theta * 0.5);
        assert!((z / (core + tails) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cache_returns_same_value() {
        let s = QuantileSpec::new(0.3, 0.7, Kernel::Epanechnikov).unwrap();
        let c = ZCache::new();
        let a = c.log_z(3.0, &s).unwrap();
        let b = c.log_z(3.0 + 1e-14, &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(c.len(), 1);
        assert_eq!(a, log_normalizing_constant(3.0, &s).unwrap());
        assert!(c.log_z(0.0, &s).is_err());
    }

    #[test]
    fn hessian_example() {
        let d = Dataset::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let s = QuantileSpec::new(0.5, 2.0, Kernel::Uniform).unwrap();
        let hl = likelihood_hessian_beta(&d, &DVector::zeros(1), 4.0, &s).unwrap();
        assert_eq!(hl[(0, 0)], 1.0);
    }

    #[test]
    fn ald_single_zero_residual() {
        let d = Dataset::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let st = ModelState::new(DVector::zeros(1), 2.0).unwrap();
        let v = ald_log_likelihood(&d, &st, 0.3).unwrap();
        assert!((v - (0.3f64 * 0.7 * 2.0).ln()).abs() < 1e-15);
    }
}
