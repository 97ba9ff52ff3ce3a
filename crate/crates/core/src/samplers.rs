//! Block MCMC for the smoothed model: HMC on β given θ, then a log-normal
//! random-walk Metropolis step on θ given β. Also hosts the random-walk
//! sampler for the asymmetric Laplace baseline.

use crate::error::{check_tau, BsqrError, Result};
use crate::model::{residuals, Dataset, Priors, ZCache};
use crate::optim::ols_with_se;
use crate::rng::{stream_rng, StreamRng};
use crate::smoothing::{rho, QuantileSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

/// Energy error above which an HMC transition is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, Serialize)]
pub struct HmcConfig {
    /// Initial step size; replaced by dual averaging when `adapt` is set.
    pub step_size: f64,
    pub leapfrog_steps: usize,
    /// Diagonal mass matrix. `None` starts from the Hessian diagonal at the initial point.
    pub mass_diag: Option<DVector<f64>>,
    pub target_accept: f64,
    /// Relative jitter of the path length, drawn uniformly per iteration.
    pub jitter: f64,
    pub adapt: bool,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            leapfrog_steps: 32,
            mass_diag: None,
            target_accept: 0.8,
            jitter: 0.2,
            adapt: true,
        }
    }
}

impl HmcConfig {
    fn validate(&self, d: usize) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(BsqrError::Domain(format!("HMC step size must be positive, got {}", self.step_size)));
        }
        if self.leapfrog_steps == 0 {
            return Err(BsqrError::Domain("HMC needs at least one leapfrog step".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(BsqrError::Domain("target acceptance must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(BsqrError::Domain("path-length jitter must lie in [0, 1)".into()));
        }
        if let Some(m) = &self.mass_diag {
            if m.len() != d {
                return Err(BsqrError::Dimension { what: "mass diagonal", expected: d, got: m.len() });
            }
            if m.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(BsqrError::Domain("mass diagonal entries must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MhThetaConfig {
    /// Proposal sd on the log scale; `None` uses `min(1, 2/√n)`.
    pub proposal_sd: Option<f64>,
    /// Robbins-Monro tuning toward 40% acceptance during warmup.
    pub adapt: bool,
}

impl MhThetaConfig {
    pub fn adaptive() -> Self {
        Self { proposal_sd: None, adapt: true }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SamplerSettings {
    pub n_chains: usize,
    /// Total iterations per chain, warmup included.
    pub n_iters: usize,
    pub n_warmup: usize,
    pub seed: u64,
}

impl SamplerSettings {
    fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(BsqrError::Domain("need at least one chain".into()));
        }
        if self.n_iters <= self.n_warmup {
            return Err(BsqrError::Domain(format!(
                "iterations ({}) must exceed warmup ({})",
                self.n_iters, self.n_warmup
            )));
        }
        Ok(())
    }
}

/// Draws and bookkeeping of one chain. Only post-warmup iterations are stored.
#[derive(Debug, Clone, Serialize)]
pub struct ChainResult {
    pub chain: usize,
    pub seed: u64,
    /// One row per retained draw.
    pub beta_draws: DMatrix<f64>,
    pub theta_draws: Vec<f64>,
    pub accept_rate_beta: f64,
    pub accept_rate_theta: f64,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub divergent: Vec<bool>,
    /// Hamiltonian of the retained state (negative log target for random-walk chains).
    pub energies: Vec<f64>,
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub mass_diag: Vec<f64>,
    pub proposal_sd: f64,
    /// Proposals rejected because `log Z` could not be evaluated.
    pub z_failures: usize,
}

impl ChainResult {
    pub fn n_draws(&self) -> usize {
        self.theta_draws.len()
    }

    pub fn beta_column(&self, j: usize) -> Vec<f64> {
        self.beta_draws.column(j).iter().copied().collect()
    }
}

/// A differentiable potential energy `U(q)`.
pub trait PotentialTarget {
    fn dim(&self) -> usize;
    fn potential_and_gradient(&self, q: &DVector<f64>) -> (f64, DVector<f64>);
}

/// `U(β) = θ S(β) + ‖β - β₀‖²/(2σ²)` at fixed θ.
pub struct BetaPotential<'a> {
    pub data: &'a Dataset,
    pub spec: QuantileSpec,
    pub priors: &'a Priors,
    pub theta: f64,
}

impl PotentialTarget for BetaPotential<'_> {
    fn dim(&self) -> usize {
        self.data.d()
    }

    fn potential_and_gradient(&self, q: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut e = self.data.y() - self.data.x() * q;
        let mut s = 0.0;
        for v in e.iter_mut() {
            s += self.spec.loss(*v);
            *v = self.spec.score(*v);
        }
        let diff = q - &self.priors.beta_mean;
        let u = self.theta * s + diff.norm_squared() / (2.0 * self.priors.beta_var);
        let g = -self.theta * self.data.x().tr_mul(&e) + diff / self.priors.beta_var;
        (u, g)
    }
}

/// `U(q) = ½ Σ_j q_j² / s_j²`, a diagonal Gaussian with standard deviations `s`.
pub struct GaussianPotential {
    pub sd: DVector<f64>,
}

impl PotentialTarget for GaussianPotential {
    fn dim(&self) -> usize {
        self.sd.len()
    }

    fn potential_and_gradient(&self, q: &DVector<f64>) -> (f64, DVector<f64>) {
        let g = q.component_div(&self.sd).component_div(&self.sd);
        (0.5 * q.dot(&g), g)
    }
}

/// End point of a leapfrog trajectory.
#[derive(Debug, Clone)]
pub struct LeapfrogOutcome {
    pub beta: DVector<f64>,
    pub momentum: DVector<f64>,
    /// A non-finite gradient or potential was met along the way.
    pub divergent: bool,
}

/// `steps` leapfrog steps (half kick, drift with `M⁻¹p`, half kick) driven by `grad_fn`.
pub fn leapfrog<F>(
    beta: &DVector<f64>,
    momentum: &DVector<f64>,
    step_size: f64,
    steps: usize,
    mass_diag: &DVector<f64>,
    mut grad_fn: F,
) -> LeapfrogOutcome
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    if steps == 0 {
        return LeapfrogOutcome { beta: beta.clone(), momentum: momentum.clone(), divergent: false };
    }
    let g0 = grad_fn(beta);
    let inv_mass = mass_diag.map(|m| 1.0 / m);
    let (q, p, _, _, ok) = integrate(beta, momentum, 0.0, g0, step_size, steps, &inv_mass, |q| {
        (0.0, grad_fn(q))
    });
    LeapfrogOutcome { beta: q, momentum: p, divergent: !ok }
}

type Integrated = (DVector<f64>, DVector<f64>, f64, DVector<f64>, bool);

#[allow(clippy::too_many_arguments)]
fn integrate<F>(
    q0: &DVector<f64>,
    p0: &DVector<f64>,
    u0: f64,
    g0: DVector<f64>,
    eps: f64,
    steps: usize,
    inv_mass: &DVector<f64>,
    mut eval: F,
) -> Integrated
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut q = q0.clone();
    let mut p = p0.clone();
    let (mut u, mut g) = (u0, g0);
    if steps == 0 {
        return (q, p, u, g, true);
    }
    p.axpy(-0.5 * eps, &g, 1.0);
    for s in 0..steps {
        q += eps * p.component_mul(inv_mass);
        (u, g) = eval(&q);
        if !u.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return (q, p, u, g, false);
        }
        let kick = if s + 1 < steps { eps } else { 0.5 * eps };
        p.axpy(-kick, &g, 1.0);
    }
    (q, p, u, g, true)
}

/// Result of one HMC transition.
#[derive(Debug, Clone)]
pub struct HmcStep {
    pub beta: DVector<f64>,
    pub accepted: bool,
    pub accept_prob: f64,
    /// `H* - H_c`; infinite when the trajectory broke down.
    pub delta_h: f64,
    pub divergent: bool,
    /// Hamiltonian of the state kept.
    pub energy: f64,
}

fn kinetic(p: &DVector<f64>, inv_mass: &DVector<f64>) -> f64 {
    0.5 * p.iter().zip(inv_mass.iter()).map(|(a, m)| a * a * m).sum::<f64>()
}

/// One HMC transition from `beta` with momentum `p ~ N(0, M)`.
pub fn hmc_update<T: PotentialTarget, R: Rng + ?Sized>(
    target: &T,
    beta: &DVector<f64>,
    step_size: f64,
    steps: usize,
    mass_diag: &DVector<f64>,
    rng: &mut R,
) -> HmcStep {
    let inv_mass = mass_diag.map(|m| 1.0 / m);
    let p0 = DVector::from_fn(beta.len(), |j, _| mass_diag[j].sqrt() * rng.sample::<f64, _>(StandardNormal));
    let (u0, g0) = target.potential_and_gradient(beta);
    let h0 = u0 + kinetic(&p0, &inv_mass);
    let (q1, p1, u1, _, ok) = integrate(beta, &p0, u0, g0, step_size, steps, &inv_mass, |q| {
        target.potential_and_gradient(q)
    });
    let h1 = if ok { u1 + kinetic(&p1, &inv_mass) } else { f64::INFINITY };
    let delta_h = if h1.is_nan() { f64::INFINITY } else { h1 - h0 };
    let divergent = !ok || delta_h > DIVERGENCE_THRESHOLD;
    let accept_prob = if divergent {
        0.0
    } else if delta_h <= 0.0 {
        1.0
    } else {
        (-delta_h).exp()
    };
    let u: f64 = rng.random();
    let accepted = u < accept_prob;
    if accepted {
        HmcStep { beta: q1, accepted, accept_prob, delta_h, divergent, energy: h1 }
    } else {
        HmcStep { beta: beta.clone(), accepted, accept_prob, delta_h, divergent, energy: h0 }
    }
}

/// `log r` for the move `θ_c → θ*` of the log-normal random walk, Hastings
/// correction `θ*/θ_c` included.
pub fn log_accept_ratio_theta(
    theta_c: f64,
    theta_star: f64,
    loss_sum: f64,
    n: usize,
    log_z_c: f64,
    log_z_star: f64,
    priors: &Priors,
) -> f64 {
    -(theta_star - theta_c) * loss_sum - n as f64 * (log_z_star - log_z_c)
        + priors.theta_shape * (theta_star.ln() - theta_c.ln())
        - priors.theta_rate * (theta_star - theta_c)
}

#[derive(Debug, Clone, Copy)]
pub struct MhStep {
    pub theta: f64,
    pub log_z: f64,
    pub accepted: bool,
    pub accept_prob: f64,
    pub z_failed: bool,
}

/// One Metropolis-Hastings update of θ given `S(β_c)`.
#[allow(clippy::too_many_arguments)]
pub fn mh_theta_update<R: Rng + ?Sized>(
    theta_c: f64,
    log_z_c: f64,
    loss_sum: f64,
    n: usize,
    spec: &QuantileSpec,
    priors: &Priors,
    proposal_sd: f64,
    cache: &ZCache,
    rng: &mut R,
) -> MhStep {
    let z: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.random();
    let reject = |z_failed| MhStep { theta: theta_c, log_z: log_z_c, accepted: false, accept_prob: 0.0, z_failed };
    let theta_star = theta_c * (proposal_sd * z).exp();
    if !(theta_star.is_finite() && theta_star > 0.0) {
        return reject(false);
    }
    let log_z_star = match cache.log_z(theta_star, spec) {
        Ok(v) => v,
        Err(e) => {
            log::warn!("rejecting theta proposal {theta_star}: {e}");
            return reject(true);
        }
    };
    let log_r = log_accept_ratio_theta(theta_c, theta_star, loss_sum, n, log_z_c, log_z_star, priors);
    let accept_prob = if log_r >= 0.0 { 1.0 } else { log_r.exp() };
    if u.ln() < log_r {
        MhStep { theta: theta_star, log_z: log_z_star, accepted: true, accept_prob, z_failed: false }
    } else {
        MhStep { theta: theta_c, log_z: log_z_c, accepted: false, accept_prob, z_failed: false }
    }
}

/// Nesterov dual averaging of `log ε` toward a target acceptance rate.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    t: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
}

impl DualAveraging {
    pub fn new(step_size: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * step_size).ln(),
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            t: 0.0,
            h_bar: 0.0,
            log_eps: step_size.ln(),
            log_eps_bar: step_size.ln(),
        }
    }

    /// Feeds one acceptance probability and returns the next step size.
    pub fn update(&mut self, accept_prob: f64) -> f64 {
        let a = if accept_prob.is_finite() { accept_prob.clamp(0.0, 1.0) } else { 0.0 };
        self.t += 1.0;
        let eta = 1.0 / (self.t + self.t0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - a);
        self.log_eps = self.mu - self.t.sqrt() / self.gamma * self.h_bar;
        let w = self.t.powf(-self.kappa);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
        self.log_eps.exp()
    }

    pub fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    /// Averaged iterate, used once adaptation ends.
    pub fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// What a warmup observation changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmupEvent {
    Nothing,
    /// The mass matrix was replaced; the step size should be re-initialized.
    MassUpdated,
}

/// Warmup schedule: dual averaging throughout; draw variances collected over
/// `[w/2, 0.85w)` and turned into a diagonal mass at `0.85w`, after which
/// dual averaging restarts. `σ_logθ` follows a Robbins-Monro recursion.
#[derive(Debug, Clone)]
pub struct WarmupAdapter {
    da: DualAveraging,
    target_accept: f64,
    mass: DVector<f64>,
    initial_var: DVector<f64>,
    window: (usize, usize),
    count: usize,
    mean: DVector<f64>,
    m2: DVector<f64>,
    log_sigma: f64,
    sigma_iter: usize,
}

/// Output of warmup.
#[derive(Debug, Clone)]
pub struct AdaptedParams {
    pub step_size: f64,
    pub mass_diag: DVector<f64>,
    pub proposal_sd: f64,
}

impl WarmupAdapter {
    pub fn new(n_warmup: usize, step_size: f64, mass: DVector<f64>, proposal_sd: f64, target_accept: f64) -> Self {
        let d = mass.len();
        let start = n_warmup / 2;
        let end = (0.85 * n_warmup as f64) as usize;
        // too short a window gives a noisier mass than the initial guess
        let window = if end >= start + 10 { (start, end) } else { (usize::MAX, usize::MAX) };
        Self {
            da: DualAveraging::new(step_size, target_accept),
            target_accept,
            initial_var: mass.map(|m| 1.0 / m),
            mass,
            window,
            count: 0,
            mean: DVector::zeros(d),
            m2: DVector::zeros(d),
            log_sigma: proposal_sd.ln(),
            sigma_iter: 0,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.da.current()
    }

    pub fn mass(&self) -> &DVector<f64> {
        &self.mass
    }

    pub fn proposal_sd(&self) -> f64 {
        self.log_sigma.exp()
    }

    /// Records the HMC acceptance probability and the new draw of warmup iteration `iter`.
    pub fn observe_hmc(&mut self, iter: usize, accept_prob: f64, beta: &DVector<f64>) -> WarmupEvent {
        self.da.update(accept_prob);
        let (start, end) = self.window;
        if iter >= start && iter < end {
            self.count += 1;
            let delta = beta - &self.mean;
            self.mean += &delta / self.count as f64;
            let delta2 = beta - &self.mean;
            self.m2 += delta.component_mul(&delta2);
            if iter + 1 == end {
                let n = self.count as f64;
                let var = &self.m2 / (n - 1.0);
                let shrink = n / (n + 5.0);
                let reg = var * shrink + &self.initial_var * (1e-3 * (1.0 - shrink));
                self.mass = reg.map(|v| 1.0 / v);
                return WarmupEvent::MassUpdated;
            }
        }
        WarmupEvent::Nothing
    }

    /// Robbins-Monro step `log σ += t^{-0.6} (α - 0.4)`.
    pub fn observe_theta(&mut self, accept_prob: f64) {
        self.sigma_iter += 1;
        let a = if accept_prob.is_finite() { accept_prob } else { 0.0 };
        self.log_sigma += (self.sigma_iter as f64).powf(-0.6) * (a - 0.4);
        self.log_sigma = self.log_sigma.clamp(1e-6f64.ln(), 10f64.ln());
    }

    pub fn restart_step_size(&mut self, step_size: f64) {
        self.da = DualAveraging::new(step_size, self.target_accept);
    }

    pub fn finish(&self) -> AdaptedParams {
        AdaptedParams {
            step_size: self.da.adapted(),
            mass_diag: self.mass.clone(),
            proposal_sd: self.proposal_sd(),
        }
    }
}

/// Doubles or halves `step_size` until a single leapfrog step crosses 50%
/// acceptance.
pub fn find_reasonable_step_size<T: PotentialTarget, R: Rng + ?Sized>(
    target: &T,
    q: &DVector<f64>,
    mass_diag: &DVector<f64>,
    step_size: f64,
    rng: &mut R,
) -> f64 {
    let inv_mass = mass_diag.map(|m| 1.0 / m);
    let (u0, g0) = target.potential_and_gradient(q);
    let accept = |eps: f64, rng: &mut R| {
        let p = DVector::from_fn(q.len(), |j, _| mass_diag[j].sqrt() * rng.sample::<f64, _>(StandardNormal));
        let h0 = u0 + kinetic(&p, &inv_mass);
        let (_, p1, u1, _, ok) = integrate(q, &p, u0, g0.clone(), eps, 1, &inv_mass, |x| {
            target.potential_and_gradient(x)
        });
        let h1 = u1 + kinetic(&p1, &inv_mass);
        if ok && h1.is_finite() {
            (h0 - h1).exp().min(1.0)
        } else {
            0.0
        }
    };
    let mut eps = step_size;
    let up = accept(eps, rng) > 0.5;
    for _ in 0..60 {
        let next = if up { eps * 2.0 } else { eps * 0.5 };
        let a = accept(next, rng);
        if up && a <= 0.5 {
            break;
        }
        eps = next;
        if !up && a > 0.5 {
            break;
        }
    }
    eps.clamp(1e-12, 1e6)
}

fn jittered_steps<R: Rng + ?Sized>(steps: usize, jitter: f64, rng: &mut R) -> usize {
    if jitter == 0.0 {
        return steps;
    }
    let factor = 1.0 + jitter * (2.0 * rng.random::<f64>() - 1.0);
    ((steps as f64 * factor).round() as usize).max(1)
}

/// Starting point shared by both samplers: least squares plus one standard
/// error of Gaussian jitter (zeros when the design is rank deficient).
fn initial_beta(data: &Dataset, rng: &mut StreamRng) -> (DVector<f64>, DVector<f64>) {
    let (beta, se) = ols_with_se(data).unwrap_or_else(|| (DVector::zeros(data.d()), DVector::from_element(data.d(), 1.0)));
    let jittered = DVector::from_fn(beta.len(), |j, _| beta[j] + se[j] * rng.sample::<f64, _>(StandardNormal));
    (jittered, se)
}

/// Hessian diagonal of `U(β)` at the start, floored at a tenth of the value
/// expected when residuals have density `0.4/sd(e)` at zero. The floor keeps
/// the mass sensible when few residuals fall inside a compact kernel's band.
fn initial_mass(data: &Dataset, beta: &DVector<f64>, theta: f64, spec: &QuantileSpec, priors: &Priors) -> DVector<f64> {
    let e = residuals(data, beta).expect("dimension checked");
    let w = e.map(|v| spec.curvature(v));
    let sd = if e.len() > 1 { e.variance().sqrt() } else { 0.0 };
    let density = 0.4 / sd.max(spec.h);
    let x = data.x();
    DVector::from_fn(data.d(), |j, _| {
        let col = x.column(j);
        let hjj: f64 = col.iter().zip(w.iter()).map(|(xij, wi)| xij * xij * wi).sum::<f64>() * theta;
        let floor = 0.1 * theta * density * col.norm_squared();
        hjj.max(floor) + 1.0 / priors.beta_var
    })
}

fn check_priors(data: &Dataset, priors: &Priors) -> Result<()> {
    if priors.beta_mean.len() != data.d() {
        return Err(BsqrError::Dimension {
            what: "prior mean",
            expected: data.d(),
            got: priors.beta_mean.len(),
        });
    }
    Ok(())
}

/// Runs `n_chains` independent block-sampler chains in parallel.
pub fn run_block_sampler(
    data: &Dataset,
    spec: &QuantileSpec,
    priors: &Priors,
    hmc: &HmcConfig,
    mh: &MhThetaConfig,
    settings: &SamplerSettings,
) -> Result<Vec<ChainResult>> {
    settings.validate()?;
    hmc.validate(data.d())?;
    check_priors(data, priors)?;
    if let Some(s) = mh.proposal_sd {
        if !(s.is_finite() && s > 0.0) {
            return Err(BsqrError::Domain(format!("theta proposal sd must be positive, got {s}")));
        }
    }
    let cache = ZCache::new();
    (0..settings.n_chains)
        .into_par_iter()
        .map(|c| run_chain(data, spec, priors, hmc, mh, settings, c, &cache))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_chain(
    data: &Dataset,
    spec: &QuantileSpec,
    priors: &Priors,
    hmc: &HmcConfig,
    mh: &MhThetaConfig,
    settings: &SamplerSettings,
    chain: usize,
    cache: &ZCache,
) -> Result<ChainResult> {
    let mut rng = stream_rng(settings.seed, chain as u64);
    let (n, d) = (data.n(), data.d());
    let n_warmup = settings.n_warmup;

    let (mut beta, _) = initial_beta(data, &mut rng);
    let s0: f64 = residuals(data, &beta)?.iter().map(|&e| spec.loss(e)).sum();
    let mut theta = n as f64 / s0 * (0.1 * rng.sample::<f64, _>(StandardNormal)).exp();
    let mut log_z = cache.log_z(theta, spec)?;

    let mut mass = hmc.mass_diag.clone().unwrap_or_else(|| initial_mass(data, &beta, theta, spec, priors));
    let mut step_size = hmc.step_size;
    if hmc.adapt && n_warmup > 0 {
        let target = BetaPotential { data, spec: *spec, priors, theta };
        step_size = find_reasonable_step_size(&target, &beta, &mass, step_size, &mut rng);
    }
    let mut sigma = mh.proposal_sd.unwrap_or_else(|| (2.0 / (n as f64).sqrt()).min(1.0));
    let mut adapter = WarmupAdapter::new(n_warmup, step_size, mass.clone(), sigma, hmc.target_accept);

    let kept = settings.n_iters - n_warmup;
    let mut beta_draws = DMatrix::zeros(kept, d);
    let mut theta_draws = Vec::with_capacity(kept);
    let mut energies = Vec::with_capacity(kept);
    let mut divergent = Vec::with_capacity(kept);
    let (mut acc_beta, mut acc_theta, mut divergences, mut warm_div, mut z_failures) = (0usize, 0usize, 0usize, 0usize, 0usize);

    for iter in 0..settings.n_iters {
        let warming = iter < n_warmup;
        let eps = if warming && hmc.adapt { adapter.step_size() } else { step_size };
        let steps = jittered_steps(hmc.leapfrog_steps, hmc.jitter, &mut rng);
        let target = BetaPotential { data, spec: *spec, priors, theta };
        let step = hmc_update(&target, &beta, eps, steps, &mass, &mut rng);
        beta = step.beta;

        let s: f64 = residuals(data, &beta)?.iter().map(|&e| spec.loss(e)).sum();
        let m = mh_theta_update(theta, log_z, s, n, spec, priors, sigma, cache, &mut rng);
        theta = m.theta;
        log_z = m.log_z;
        z_failures += m.z_failed as usize;

        if warming {
            warm_div += step.divergent as usize;
            if hmc.adapt && adapter.observe_hmc(iter, step.accept_prob, &beta) == WarmupEvent::MassUpdated {
                let target = BetaPotential { data, spec: *spec, priors, theta };
                let eps0 = find_reasonable_step_size(&target, &beta, adapter.mass(), adapter.step_size(), &mut rng);
                adapter.restart_step_size(eps0);
                mass = adapter.mass().clone();
            }
            if mh.adapt {
                adapter.observe_theta(m.accept_prob);
                sigma = adapter.proposal_sd();
            }
            if iter + 1 == n_warmup {
                if warm_div == n_warmup {
                    return Err(BsqrError::Sampler(format!(
                        "chain {chain}: all {n_warmup} warmup iterations diverged (last step size {eps:e})"
                    )));
                }
                if hmc.adapt {
                    let adapted = adapter.finish();
                    step_size = adapted.step_size;
                    mass = adapted.mass_diag;
                }
            }
        } else {
            let row = iter - n_warmup;
            beta_draws.row_mut(row).tr_copy_from(&beta);
            theta_draws.push(theta);
            energies.push(step.energy);
            divergent.push(step.divergent);
            acc_beta += step.accepted as usize;
            acc_theta += m.accepted as usize;
            divergences += step.divergent as usize;
        }
    }

    Ok(ChainResult {
        chain,
        seed: settings.seed,
        beta_draws,
        theta_draws,
        accept_rate_beta: acc_beta as f64 / kept as f64,
        accept_rate_theta: acc_theta as f64 / kept as f64,
        divergences,
        warmup_divergences: warm_div,
        divergent,
        energies,
        step_size,
        leapfrog_steps: hmc.leapfrog_steps,
        mass_diag: mass.iter().copied().collect(),
        proposal_sd: sigma,
        z_failures,
    })
}

/// Random-walk Metropolis on `(β, log θ)` for the asymmetric Laplace
/// likelihood, chains run in parallel.
pub fn run_ald_baseline(
    data: &Dataset,
    tau: f64,
    priors: &Priors,
    settings: &SamplerSettings,
) -> Result<Vec<ChainResult>> {
    check_tau(tau)?;
    settings.validate()?;
    check_priors(data, priors)?;
    (0..settings.n_chains)
        .into_par_iter()
        .map(|c| run_ald_chain(data, tau, priors, settings, c))
        .collect()
}

/// Log posterior of `(β, log θ)`: ALD likelihood, Gaussian β prior and the
/// Gamma prior on θ with the `log θ` Jacobian.
fn ald_log_target(data: &Dataset, tau: f64, priors: &Priors, q: &DVector<f64>) -> f64 {
    let d = data.d();
    let beta = q.rows(0, d).into_owned();
    let log_theta = q[d];
    let theta = log_theta.exp();
    let e = data.y() - data.x() * &beta;
    let s: f64 = e.iter().map(|&v| rho(tau, v)).sum();
    data.n() as f64 * ((tau * (1.0 - tau)).ln() + log_theta) - theta * s + priors.log_beta_prior(&beta)
        + priors.theta_shape * log_theta
        - priors.theta_rate * theta
}

fn run_ald_chain(data: &Dataset, tau: f64, priors: &Priors, settings: &SamplerSettings, chain: usize) -> Result<ChainResult> {
    let mut rng = stream_rng(settings.seed, chain as u64);
    let (n, d) = (data.n(), data.d());
    let dim = d + 1;
    let n_warmup = settings.n_warmup;

    let (beta, se) = initial_beta(data, &mut rng);
    let s0: f64 = residuals(data, &beta)?.iter().map(|&e| rho(tau, e)).sum();
    let log_theta0 = (n as f64 / s0.max(f64::MIN_POSITIVE)).ln() + 0.1 * rng.sample::<f64, _>(StandardNormal);
    let mut q = DVector::from_fn(dim, |j, _| if j < d { beta[j] } else { log_theta0 });
    let mut lp = ald_log_target(data, tau, priors, &q);
    if !lp.is_finite() {
        return Err(BsqrError::Sampler(format!("chain {chain}: non-finite initial ALD log posterior")));
    }

    let mut scales = DVector::from_fn(dim, |j, _| if j < d { se[j] } else { 1.0 / (n as f64).sqrt() });
    let base_log_lambda = (2.38 / (dim as f64).sqrt()).ln();
    let mut log_lambda = base_log_lambda;
    let window = (n_warmup / 4, (3 * n_warmup) / 4);
    let (mut count, mut mean, mut m2) = (0usize, DVector::zeros(dim), DVector::zeros(dim));

    let kept = settings.n_iters - n_warmup;
    let mut beta_draws = DMatrix::zeros(kept, d);
    let mut theta_draws = Vec::with_capacity(kept);
    let mut energies = Vec::with_capacity(kept);
    let mut accepted_total = 0usize;

    for iter in 0..settings.n_iters {
        let lambda = log_lambda.exp();
        let prop = DVector::from_fn(dim, |j, _| q[j] + lambda * scales[j] * rng.sample::<f64, _>(StandardNormal));
        let lp_prop = ald_log_target(data, tau, priors, &prop);
        let log_r = lp_prop - lp;
        let u: f64 = rng.random();
        let accepted = lp_prop.is_finite() && u.ln() < log_r;
        if accepted {
            q = prop;
            lp = lp_prop;
        }
        if iter < n_warmup {
            let a = if lp_prop.is_finite() { log_r.min(0.0).exp() } else { 0.0 };
            log_lambda += ((iter + 1) as f64).powf(-0.6) * (a - 0.234);
            if iter >= window.0 && iter < window.1 {
                count += 1;
                let delta = &q - &mean;
                mean += &delta / count as f64;
                m2 += delta.component_mul(&(&q - &mean));
                if iter + 1 == window.1 && count >= 10 {
                    let fresh = &m2 / (count as f64 - 1.0);
                    scales = DVector::from_fn(dim, |j, _| fresh[j].sqrt().max(1e-6 * scales[j]));
                    log_lambda = base_log_lambda;
                }
            }
        } else {
            let row = iter - n_warmup;
            beta_draws.row_mut(row).tr_copy_from(&q.rows(0, d));
            theta_draws.push(q[d].exp());
            energies.push(-lp);
            accepted_total += accepted as usize;
        }
    }

    let rate = accepted_total as f64 / kept as f64;
    let lambda = log_lambda.exp();
    Ok(ChainResult {
        chain,
        seed: settings.seed,
        beta_draws,
        theta_draws,
        accept_rate_beta: rate,
        accept_rate_theta: rate,
        divergences: 0,
        warmup_divergences: 0,
        divergent: vec![false; kept],
        energies,
        step_size: lambda,
        leapfrog_steps: 0,
        mass_diag: scales.iter().take(d).copied().collect(),
        proposal_sd: lambda * scales[d],
        z_failures: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn zero_steps_is_identity() {
        let b = DVector::from_vec(vec![0.3, -1.0]);
        let p = DVector::from_vec(vec![1.0, 2.0]);
        let out = leapfrog(&b, &p, 0.1, 0, &DVector::from_element(2, 1.0), |q| q.clone());
        assert_eq!(out.beta, b);
        assert_eq!(out.momentum, p);
    }

    #[test]
    fn dual_averaging_direction() {
        let mut up = DualAveraging::new(0.1, 0.8);
        let mut down = DualAveraging::new(0.1, 0.8);
        let (mut prev_up, mut prev_down) = (up.update(1.0), down.update(0.0));
        for _ in 0..200 {
            let (a, b) = (up.update(1.0), down.update(0.0));
            assert!(a > prev_up);
            assert!(b < prev_down);
            prev_up = a;
            prev_down = b;
        }
    }

    #[test]
    fn accept_ratio_is_antisymmetric() {
        let p = Priors::weakly_informative(1);
        let f = log_accept_ratio_theta(1.3, 2.1, 5.0, 7, -0.4, -0.9, &p);
        let b = log_accept_ratio_theta(2.1, 1.3, 5.0, 7, -0.9, -0.4, &p);
        assert!((f + b).abs() < 1e-12);
        assert_eq!(log_accept_ratio_theta(1.3, 1.3, 5.0, 7, -0.4, -0.4, &p), 0.0);
    }

    #[test]
    fn lower_energy_proposals_are_accepted() {
        // a flat potential keeps H fixed up to rounding; every move is accepted
        struct Flat;
        impl PotentialTarget for Flat {
            fn dim(&self) -> usize {
                2
            }
            fn potential_and_gradient(&self, q: &DVector<f64>) -> (f64, DVector<f64>) {
                (0.0, DVector::zeros(q.len()))
            }
        }
        let mut rng = stream_rng(3, 0);
        for _ in 0..100 {
            let s = hmc_update(&Flat, &DVector::zeros(2), 0.5, 5, &DVector::from_element(2, 1.0), &mut rng);
            assert!(s.accepted);
            assert_eq!(s.accept_prob, 1.0);
        }
    }
}
