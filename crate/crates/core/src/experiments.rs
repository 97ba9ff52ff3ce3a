//! Simulation study: data generation, baselines, metrics and replications.

use crate::error::{check_tau, BsqrError, Result};
use crate::fit::{fit_ald, fit_bsqr, BandwidthPolicy, FitConfig};
use crate::model::Dataset;
use crate::normal;
use crate::optim::std_qr_fit;
use crate::rng::{derive_seed, stream_rng, StreamRng};
use crate::samplers::SamplerSettings;
use crate::smoothing::{rho, Kernel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Normal,
    StudentT3,
    /// `0.2 N(0, 3) + 0.8 N(0, 4)`, parameters read as variances.
    NormalMixture,
    /// `N(0, σ_i²)` with `σ_i = exp(-0.25 + 0.5 x_{i1})`.
    Heteroscedastic,
}

impl ErrorKind {
    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Normal => "normal",
            ErrorKind::StudentT3 => "t3",
            ErrorKind::NormalMixture => "mixture",
            ErrorKind::Heteroscedastic => "heteroscedastic",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ErrorKind {
    type Err = BsqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "gaussian" => Ok(ErrorKind::Normal),
            "t3" | "student_t3" | "t" => Ok(ErrorKind::StudentT3),
            "mixture" | "normal_mixture" => Ok(ErrorKind::NormalMixture),
            "heteroscedastic" | "hetero" => Ok(ErrorKind::Heteroscedastic),
            other => Err(BsqrError::Domain(format!(
                "unknown error distribution '{other}' (expected normal|t3|mixture|heteroscedastic)"
            ))),
        }
    }
}

/// One simulation setting. `beta0` holds the slopes; the intercept column is
/// prepended with true value zero before the error quantile shift.
#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub rho: f64,
    pub beta0: Vec<f64>,
    pub error_kind: ErrorKind,
    pub tau: f64,
}

impl Scenario {
    /// Eight covariates, all slopes 0.85.
    pub fn dense(n_train: usize, n_test: usize, error_kind: ErrorKind, tau: f64) -> Self {
        Self {
            name: "dense".into(),
            n_train,
            n_test,
            rho: 0.5,
            beta0: vec![0.85; 8],
            error_kind,
            tau,
        }
    }

    /// `d` covariates with slopes `(3, 1.5, 0, 0, 2, 0, ..., 0)`.
    pub fn sparse(d: usize, n_train: usize, n_test: usize, error_kind: ErrorKind, tau: f64) -> Self {
        let mut beta0 = vec![0.0; d];
        for (j, v) in [(0, 3.0), (1, 1.5), (4, 2.0)] {
            if j < d {
                beta0[j] = v;
            }
        }
        Self {
            name: "sparse".into(),
            n_train,
            n_test,
            rho: 0.5,
            beta0,
            error_kind,
            tau,
        }
    }

    pub fn d(&self) -> usize {
        self.beta0.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if self.n_train == 0 || self.n_test == 0 || self.beta0.is_empty() {
            return Err(BsqrError::Domain("scenario sizes must be at least 1".into()));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(BsqrError::Domain(format!("AR correlation must satisfy |rho| < 1, got {}", self.rho)));
        }
        Ok(())
    }

    /// `Σ_X` with `(Σ_X)_jk = ρ^{|j-k|}`.
    pub fn sigma_x(&self) -> DMatrix<f64> {
        ar_covariance(self.d(), self.rho)
    }

    /// Coefficients including the zero intercept, before any quantile shift.
    pub fn beta_full(&self) -> DVector<f64> {
        DVector::from_iterator(self.d() + 1, std::iter::once(0.0).chain(self.beta0.iter().copied()))
    }
}

pub fn ar_covariance(d: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |j, k| rho.powi((j as i32 - k as i32).abs()))
}

/// `n` rows from `N(0, Σ)` with AR correlation, intercept column prepended.
pub fn gen_design<R: Rng + ?Sized>(n: usize, d: usize, rho: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(BsqrError::Domain(format!("AR correlation must satisfy |rho| < 1, got {rho}")));
    }
    let chol = ar_covariance(d, rho)
        .cholesky()
        .ok_or_else(|| BsqrError::Numeric("Cholesky factorization of the design covariance failed".into()))?;
    let l = chol.l();
    let mut x = DMatrix::from_element(n, d + 1, 1.0);
    let mut z = DVector::zeros(d);
    for i in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let row = &l * &z;
        for j in 0..d {
            x[(i, j + 1)] = row[j];
        }
    }
    Ok(x)
}

/// Error draws; the heteroscedastic kind needs the first covariate column.
pub fn gen_errors<R: Rng + ?Sized>(kind: ErrorKind, n: usize, x_first: Option<&[f64]>, rng: &mut R) -> Result<Vec<f64>> {
    match kind {
        ErrorKind::Normal => Ok((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()),
        ErrorKind::StudentT3 => {
            let t = StudentT::new(3.0).expect("valid degrees of freedom");
            Ok((0..n).map(|_| t.sample(rng)).collect())
        }
        ErrorKind::NormalMixture => Ok((0..n)
            .map(|_| {
                let sd = if rng.random::<f64>() < 0.2 { 3f64.sqrt() } else { 2.0 };
                sd * rng.sample::<f64, _>(StandardNormal)
            })
            .collect()),
        ErrorKind::Heteroscedastic => {
            let x1 = x_first.ok_or_else(|| BsqrError::Domain("heteroscedastic errors need the first covariate".into()))?;
            if x1.len() != n {
                return Err(BsqrError::Dimension { what: "first covariate", expected: n, got: x1.len() });
            }
            Ok(x1.iter().map(|&x| (-0.25 + 0.5 * x).exp() * rng.sample::<f64, _>(StandardNormal)).collect())
        }
    }
}

fn t3_cdf(t: f64) -> f64 {
    let s = 3f64.sqrt();
    0.5 + (t / (s * (1.0 + t * t / 3.0)) + (t / s).atan()) / std::f64::consts::PI
}

fn mixture_cdf(x: f64) -> f64 {
    0.2 * normal::cdf(x / 3f64.sqrt()) + 0.8 * normal::cdf(x / 2.0)
}

fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// τ-quantile of a homoscedastic error law.
pub fn error_quantile(kind: ErrorKind, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    match kind {
        ErrorKind::Normal => Ok(normal::inv_cdf(tau)),
        ErrorKind::StudentT3 => Ok(bisect(t3_cdf, tau, -1e4, 1e4)),
        ErrorKind::NormalMixture => Ok(bisect(mixture_cdf, tau, -100.0, 100.0)),
        ErrorKind::Heteroscedastic => Err(BsqrError::Domain(
            "heteroscedastic errors have no single quantile; use the oracle fit".into(),
        )),
    }
}

/// Observations drawn from a scenario.
fn simulate<R: Rng + ?Sized>(sc: &Scenario, n: usize, rng: &mut R) -> Result<Dataset> {
    let x = gen_design(n, sc.d(), sc.rho, rng)?;
    let x1: Vec<f64> = x.column(1).iter().copied().collect();
    let e = gen_errors(sc.error_kind, n, Some(&x1), rng)?;
    let y = &x * sc.beta_full() + DVector::from_vec(e);
    Dataset::new(y, x)
}

/// Default sample size of the brute-force oracle used for heteroscedastic truth.
pub const ORACLE_N: usize = 1_000_000;

/// Coefficients of the true conditional τ-quantile.
///
/// Homoscedastic errors shift the intercept by the error quantile. With
/// heteroscedastic errors the conditional quantile is not linear in `x`; the
/// truth is then the best linear quantile predictor, estimated by a
/// quantile regression on `oracle_n` fresh draws.
pub fn true_beta_at_tau(sc: &Scenario, oracle_n: usize, seed: u64) -> Result<DVector<f64>> {
    sc.validate()?;
    let mut beta = sc.beta_full();
    match sc.error_kind {
        ErrorKind::Heteroscedastic => {
            let mut rng = stream_rng(seed, 0x0_7ac1e);
            let data = simulate(sc, oracle_n, &mut rng)?;
            beta = std_qr_fit(&data, sc.tau)?;
        }
        kind => beta[0] += error_quantile(kind, sc.tau)?,
    }
    Ok(beta)
}

/// Accuracy metrics of one fitted coefficient vector.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub mse: f64,
    pub mae: f64,
    pub wmse: f64,
    pub check_loss: f64,
    pub coverage: Option<f64>,
    pub width: Option<f64>,
}

/// `MSE = ‖Δ‖²`, `MAE = ‖Δ‖₁ / p`, `WMSE = Δᵀ W Δ` with `W = diag(1, Σ_X)`
/// over (intercept, slopes), and the mean test check loss of `x'β̂`.
pub fn evaluate_metrics(
    beta_hat: &DVector<f64>,
    truth: &DVector<f64>,
    sigma_x: &DMatrix<f64>,
    test: &Dataset,
    tau: f64,
    intervals: Option<&[(f64, f64)]>,
) -> Result<MetricRow> {
    let p = truth.len();
    if beta_hat.len() != p || test.d() != p || sigma_x.nrows() + 1 != p {
        return Err(BsqrError::Dimension { what: "coefficients for metrics", expected: p, got: beta_hat.len() });
    }
    let delta = beta_hat - truth;
    let slopes = delta.rows(1, p - 1);
    let wmse = delta[0] * delta[0] + (slopes.transpose() * sigma_x * slopes)[(0, 0)];
    let e = test.y() - test.x() * beta_hat;
    let check_loss = e.iter().map(|&v| rho(tau, v)).sum::<f64>() / e.len() as f64;
    let (coverage, width) = match intervals {
        Some(iv) => {
            if iv.len() != p {
                return Err(BsqrError::Dimension { what: "credible intervals", expected: p, got: iv.len() });
            }
            let inside = iv.iter().zip(truth.iter()).filter(|((lo, hi), t)| lo <= t && *t <= hi).count();
            let width = iv.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / p as f64;
            (Some(inside as f64 / p as f64), Some(width))
        }
        None => (None, None),
    };
    Ok(MetricRow {
        mse: delta.norm_squared(),
        mae: delta.iter().map(|v| v.abs()).sum::<f64>() / p as f64,
        wmse,
        check_loss,
        coverage,
        width,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Method {
    Bsqr(Kernel),
    Ald,
    StdQr,
}

impl Method {
    pub fn label(self) -> String {
        match self {
            Method::Bsqr(k) => {
                let name = k.name();
                format!("BSQR-{}{}", name[..1].to_ascii_uppercase(), &name[1..])
            }
            Method::Ald => "BQR-ALD".into(),
            Method::StdQr => "StdQR".into(),
        }
    }
}

impl FromStr for Method {
    type Err = BsqrError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "ald" | "bqr-ald" => Ok(Method::Ald),
            "stdqr" | "qr" => Ok(Method::StdQr),
            _ => {
                let k = t.strip_prefix("bsqr-").unwrap_or(&t);
                k.parse::<Kernel>().map(Method::Bsqr)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimSettings {
    pub chains: usize,
    pub iters: usize,
    pub warmup: usize,
    pub bandwidth: BandwidthPolicy,
    pub oracle_n: usize,
}

impl SimSettings {
    /// Reduced budget: two chains of 2000 iterations (1000 warmup).
    pub fn desk() -> Self {
        Self {
            chains: 2,
            iters: 2000,
            warmup: 1000,
            bandwidth: BandwidthPolicy::default_cv(),
            oracle_n: ORACLE_N,
        }
    }

    /// Two chains of 4000 iterations (2000 warmup).
    pub fn full() -> Self {
        Self { iters: 4000, warmup: 2000, ..Self::desk() }
    }
}

/// Outcome of one method on one replication.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub method: String,
    pub metrics: Option<MetricRow>,
    pub rhat_max: Option<f64>,
    pub ess_min: Option<f64>,
    pub divergences_per_chain: Option<f64>,
    pub selected_h: Option<f64>,
    /// ALD only: check loss of the posterior predictive mean `x'β̄ + E[u]`.
    pub predictive_mean_check_loss: Option<f64>,
    pub wall_time: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mse: f64,
    pub mse_mcse: f64,
    pub mae: f64,
    pub wmse: f64,
    pub check_loss: f64,
    pub coverage: Option<f64>,
    pub width: Option<f64>,
    pub rhat_max: Option<f64>,
    pub ess_min: Option<f64>,
    pub divergences_per_chain: Option<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationSummary {
    pub scenario: Scenario,
    pub replications: usize,
    pub seed: u64,
    pub truth: Vec<f64>,
    pub methods: Vec<MethodSummary>,
    pub records: Vec<ReplicationRecord>,
}

impl ReplicationSummary {
    pub fn method(&self, label: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == label)
    }

    /// Successful records of one method, in replication order.
    pub fn records_for(&self, label: &str) -> Vec<&ReplicationRecord> {
        self.records.iter().filter(|r| r.method == label && r.metrics.is_some()).collect()
    }
}

fn run_method(
    method: Method,
    sc: &Scenario,
    train: &Dataset,
    test: &Dataset,
    truth: &DVector<f64>,
    sigma_x: &DMatrix<f64>,
    settings: &SimSettings,
    seed: u64,
) -> Result<ReplicationRecord> {
    let start = Instant::now();
    let sampler = SamplerSettings { n_chains: settings.chains, n_iters: settings.iters, n_warmup: settings.warmup, seed };
    let mut rec = ReplicationRecord {
        replication: 0,
        method: method.label(),
        metrics: None,
        rhat_max: None,
        ess_min: None,
        divergences_per_chain: None,
        selected_h: None,
        predictive_mean_check_loss: None,
        wall_time: 0.0,
        error: None,
    };
    let (beta_hat, intervals) = match method {
        Method::StdQr => (std_qr_fit(train, sc.tau)?, None),
        Method::Bsqr(kernel) => {
            let cfg = FitConfig::new(sc.tau, kernel, settings.bandwidth.clone(), sampler);
            let out = fit_bsqr(train, &cfg)?;
            rec.rhat_max = out.summary.rhat_max;
            rec.ess_min = Some(out.summary.ess_min);
            rec.divergences_per_chain = Some(out.summary.divergence_total as f64 / out.chains.len() as f64);
            rec.selected_h = out.summary.selected_h;
            let iv: Vec<(f64, f64)> = out.summary.params.iter().take(train.d()).map(|p| (p.q025, p.q975)).collect();
            (DVector::from_vec(out.summary.beta_mean()), Some(iv))
        }
        Method::Ald => {
            let out = fit_ald(train, sc.tau, None, &sampler)?;
            rec.rhat_max = out.summary.rhat_max;
            rec.ess_min = Some(out.summary.ess_min);
            rec.divergences_per_chain = Some(0.0);
            let iv: Vec<(f64, f64)> = out.summary.params.iter().take(train.d()).map(|p| (p.q025, p.q975)).collect();
            let beta = DVector::from_vec(out.summary.beta_mean());
            let tau = sc.tau;
            let shift = {
                let draws: Vec<f64> = out.chains.iter().flat_map(|c| c.theta_draws.iter().copied()).collect();
                draws.iter().map(|t| (1.0 - 2.0 * tau) / (t * tau * (1.0 - tau))).sum::<f64>() / draws.len() as f64
            };
            let e = test.y() - test.x() * &beta;
            rec.predictive_mean_check_loss =
                Some(e.iter().map(|&v| rho(tau, v - shift)).sum::<f64>() / e.len() as f64);
            (beta, Some(iv))
        }
    };
    rec.metrics = Some(evaluate_metrics(&beta_hat, truth, sigma_x, test, sc.tau, intervals.as_deref())?);
    rec.wall_time = start.elapsed().as_secs_f64();
    Ok(rec)
}

fn mean_of(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (c > 0).then(|| s / c as f64)
}

/// Runs `m` replications of `methods` on fresh data and averages the metrics.
pub fn run_replications(
    sc: &Scenario,
    methods: &[Method],
    m: usize,
    seed: u64,
    settings: &SimSettings,
) -> Result<ReplicationSummary> {
    sc.validate()?;
    if m == 0 {
        return Err(BsqrError::Domain("need at least one replication".into()));
    }
    let truth = true_beta_at_tau(sc, settings.oracle_n, seed)?;
    let sigma_x = sc.sigma_x();
    let per_rep: Vec<Vec<ReplicationRecord>> = (0..m)
        .into_par_iter()
        .map(|r| {
            let mut rng: StreamRng = stream_rng(seed, r as u64 + 1);
            let data = simulate(sc, sc.n_train, &mut rng).and_then(|tr| Ok((tr, simulate(sc, sc.n_test, &mut rng)?)));
            methods
                .iter()
                .enumerate()
                .map(|(k, &method)| {
                    let fit_seed = derive_seed(seed, ((r as u64 + 1) << 8) | k as u64);
                    let res = data
                        .as_ref()
                        .map_err(|e| BsqrError::Data(e.to_string()))
                        .and_then(|(train, test)| run_method(method, sc, train, test, &truth, &sigma_x, settings, fit_seed));
                    match res {
                        Ok(mut rec) => {
                            rec.replication = r;
                            rec
                        }
                        Err(e) => {
                            log::warn!("replication {r}, {}: {e}", method.label());
                            ReplicationRecord {
                                replication: r,
                                method: method.label(),
                                metrics: None,
                                rhat_max: None,
                                ess_min: None,
                                divergences_per_chain: None,
                                selected_h: None,
                                predictive_mean_check_loss: None,
                                wall_time: 0.0,
                                error: Some(e.to_string()),
                            }
                        }
                    }
                })
                .collect()
        })
        .collect();
    let records: Vec<ReplicationRecord> = per_rep.into_iter().flatten().collect();

    let methods_out = methods
        .iter()
        .map(|method| {
            let label = method.label();
            let recs: Vec<&ReplicationRecord> = records.iter().filter(|r| r.method == label).collect();
            let ok: Vec<&ReplicationRecord> = recs.iter().copied().filter(|r| r.metrics.is_some()).collect();
            let metric = |f: &dyn Fn(&MetricRow) -> f64| mean_of(ok.iter().map(|r| f(r.metrics.as_ref().unwrap())));
            let mse = metric(&|x| x.mse).unwrap_or(f64::NAN);
            let mse_mcse = if ok.len() > 1 {
                let var = ok.iter().map(|r| (r.metrics.as_ref().unwrap().mse - mse).powi(2)).sum::<f64>()
                    / (ok.len() - 1) as f64;
                (var / ok.len() as f64).sqrt()
            } else {
                f64::NAN
            };
            MethodSummary {
                method: label,
                n_ok: ok.len(),
                n_failed: recs.len() - ok.len(),
                mse,
                mse_mcse,
                mae: metric(&|x| x.mae).unwrap_or(f64::NAN),
                wmse: metric(&|x| x.wmse).unwrap_or(f64::NAN),
                check_loss: metric(&|x| x.check_loss).unwrap_or(f64::NAN),
                coverage: mean_of(ok.iter().filter_map(|r| r.metrics.as_ref().unwrap().coverage)),
                width: mean_of(ok.iter().filter_map(|r| r.metrics.as_ref().unwrap().width)),
                rhat_max: mean_of(ok.iter().filter_map(|r| r.rhat_max)),
                ess_min: mean_of(ok.iter().filter_map(|r| r.ess_min)),
                divergences_per_chain: mean_of(ok.iter().filter_map(|r| r.divergences_per_chain)),
                wall_time: mean_of(ok.iter().map(|r| r.wall_time)).unwrap_or(0.0),
            }
        })
        .collect();

    Ok(ReplicationSummary {
        scenario: sc.clone(),
        replications: m,
        seed,
        truth: truth.iter().copied().collect(),
        methods: methods_out,
        records,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row per method.
pub fn write_summary_csv<W: std::io::Write>(summary: &ReplicationSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| BsqrError::Io(std::io::Error::other(e));
    w.write_record([
        "scenario", "error", "tau", "method", "n_ok", "n_failed", "mse", "mse_mcse", "mae", "wmse",
        "check_loss", "coverage", "width", "rhat_max", "ess_min", "divergences_per_chain", "wall_time",
    ])
    .map_err(io)?;
    let sc = &summary.scenario;
    for m in &summary.methods {
        w.write_record([
            sc.name.clone(),
            sc.error_kind.to_string(),
            sc.tau.to_string(),
            m.method.clone(),
            m.n_ok.to_string(),
            m.n_failed.to_string(),
            m.mse.to_string(),
            m.mse_mcse.to_string(),
            m.mae.to_string(),
            m.wmse.to_string(),
            m.check_loss.to_string(),
            opt(m.coverage),
            opt(m.width),
            opt(m.rhat_max),
            opt(m.ess_min),
            opt(m.divergences_per_chain),
            m.wall_time.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
