//! Rolling-window tail betas of an asset on the market.
//!
//! Window `k` covers rows `[k·step, k·step + window)` and is scored on the
//! one-step-ahead row `k·step + window`; windows without a following row are
//! dropped.

use crate::data::AlignedPair;
use crate::{CliError, Result};
use bsqr::bandwidth::BandwidthGrid;
use bsqr::fit::select_bandwidth;
use bsqr::optim::std_qr_fit;
use bsqr::rng::derive_seed;
use bsqr::samplers::SamplerSettings;
use bsqr::{check_loss, fit_ald, fit_bsqr, BandwidthPolicy, Dataset, FitConfig, Kernel, Method};
use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HPolicy {
    /// Cross-validate h afresh in every window.
    CvPerWindow,
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct RollingConfig {
    pub window: usize,
    pub step: usize,
    pub taus: Vec<f64>,
    pub methods: Vec<Method>,
    pub h_policy: HPolicy,
    pub cv_multipliers: Vec<f64>,
    pub cv_folds: usize,
    /// Returns are multiplied by this before fitting (100 gives percent).
    /// Coefficients and forecast losses are reported on the raw scale; `h` is
    /// on the fitting scale.
    pub return_scale: f64,
    pub settings: SamplerSettings,
}

impl RollingConfig {
    pub fn new(settings: SamplerSettings) -> Self {
        Self {
            window: 252,
            step: 21,
            taus: vec![0.05, 0.95],
            methods: vec![Method::Bsqr(Kernel::Uniform), Method::Ald],
            h_policy: HPolicy::CvPerWindow,
            cv_multipliers: BandwidthGrid::DEFAULT_MULTIPLIERS.to_vec(),
            cv_folds: 5,
            return_scale: 1.0,
            settings,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.step < 1 || self.window <= self.step {
            return Err(CliError::Usage(format!(
                "need window > step >= 1, got window {} and step {}",
                self.window, self.step
            )));
        }
        if let Some(t) = self.taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(CliError::Usage(format!("quantile level tau must lie in (0, 1), got {t}")));
        }
        if self.taus.is_empty() || self.methods.is_empty() {
            return Err(CliError::Usage("need at least one tau and one method".into()));
        }
        if !(self.return_scale.is_finite() && self.return_scale > 0.0) {
            return Err(CliError::Usage(format!("return scale must be positive, got {}", self.return_scale)));
        }
        if let HPolicy::Fixed(h) = self.h_policy {
            if !(h.is_finite() && h > 0.0) {
                return Err(CliError::Usage(format!("bandwidth h must be positive, got {h}")));
            }
        }
        Ok(())
    }

    fn bandwidth(&self) -> BandwidthPolicy {
        match self.h_policy {
            HPolicy::CvPerWindow => {
                BandwidthPolicy::CrossValidated { multipliers: self.cv_multipliers.clone(), folds: self.cv_folds }
            }
            HPolicy::Fixed(h) => BandwidthPolicy::Fixed(h),
        }
    }
}

/// Number of complete windows that still have a row to forecast.
pub fn window_count(n: usize, window: usize, step: usize) -> usize {
    if step == 0 || n < window + 1 {
        0
    } else {
        (n - 1 - window) / step + 1
    }
}

pub fn window_starts(n: usize, window: usize, step: usize) -> Vec<usize> {
    (0..window_count(n, window, step)).map(|k| k * step).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub window: usize,
    pub start_date: String,
    pub end_date: String,
    pub forecast_date: String,
    pub tau: f64,
    pub method: String,
    pub h: Option<f64>,
    pub alpha: f64,
    pub alpha_lo: Option<f64>,
    pub alpha_hi: Option<f64>,
    pub beta: f64,
    pub beta_lo: Option<f64>,
    pub beta_hi: Option<f64>,
    pub ess_min: Option<f64>,
    pub rhat_max: Option<f64>,
    pub divergences: Option<usize>,
    pub wall_time: f64,
    pub forecast_loss: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RollingOutput {
    pub records: Vec<WindowRecord>,
    /// Windows skipped because the market return was constant.
    pub skipped: Vec<usize>,
    pub expected_windows: usize,
}

struct Estimate {
    h: Option<f64>,
    coef: [f64; 2],
    lo: Option<[f64; 2]>,
    hi: Option<[f64; 2]>,
    ess_min: Option<f64>,
    rhat_max: Option<f64>,
    divergences: Option<usize>,
}

fn estimate(data: &Dataset, tau: f64, method: Method, cfg: &RollingConfig, seed: u64) -> bsqr::Result<Estimate> {
    let settings = SamplerSettings { seed, ..cfg.settings };
    let two = |v: &[f64]| [v[0], v[1]];
    match method {
        Method::StdQr => {
            let b = std_qr_fit(data, tau)?;
            Ok(Estimate {
                h: None,
                coef: [b[0], b[1]],
                lo: None,
                hi: None,
                ess_min: None,
                rhat_max: None,
                divergences: None,
            })
        }
        Method::Bsqr(kernel) => {
            let out = fit_bsqr(data, &FitConfig::new(tau, kernel, cfg.bandwidth(), settings))?;
            let s = &out.summary;
            Ok(Estimate {
                h: s.selected_h,
                coef: two(&s.beta_mean()),
                lo: Some([s.params[0].q025, s.params[1].q025]),
                hi: Some([s.params[0].q975, s.params[1].q975]),
                ess_min: Some(s.ess_min),
                rhat_max: s.rhat_max,
                divergences: Some(s.divergence_total),
            })
        }
        Method::Ald => {
            let out = fit_ald(data, tau, None, &settings)?;
            let s = &out.summary;
            Ok(Estimate {
                h: None,
                coef: two(&s.beta_mean()),
                lo: Some([s.params[0].q025, s.params[1].q025]),
                hi: Some([s.params[0].q975, s.params[1].q975]),
                ess_min: Some(s.ess_min),
                rhat_max: s.rhat_max,
                divergences: Some(0),
            })
        }
    }
}

fn constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

pub fn rolling_fit(pair: &AlignedPair, cfg: &RollingConfig) -> Result<RollingOutput> {
    cfg.validate()?;
    let n = pair.len();
    if n < cfg.window + 1 {
        return Err(CliError::Usage(format!(
            "series has {n} aligned returns, need at least window + 1 = {}",
            cfg.window + 1
        )));
    }
    let starts = window_starts(n, cfg.window, cfg.step);
    let mut skipped = Vec::new();
    let mut jobs = Vec::new();
    for (k, &s) in starts.iter().enumerate() {
        if constant(&pair.x[s..s + cfg.window]) {
            log::warn!("window {k} ({} to {}): market return is constant, skipped", pair.dates[s], pair.dates[s + cfg.window - 1]);
            skipped.push(k);
            continue;
        }
        for (ti, &tau) in cfg.taus.iter().enumerate() {
            for (mi, &method) in cfg.methods.iter().enumerate() {
                jobs.push((k, s, ti, tau, mi, method));
            }
        }
    }
    let scale = cfg.return_scale;
    let records: Vec<WindowRecord> = jobs
        .into_par_iter()
        .map(|(k, s, ti, tau, mi, method)| {
            let start = Instant::now();
            let seed = derive_seed(cfg.settings.seed, ((k as u64) << 16) | ((ti as u64) << 8) | mi as u64);
            let t = s + cfg.window;
            let date = |i: usize| pair.dates[i].to_string();
            let mut rec = WindowRecord {
                window: k,
                start_date: date(s),
                end_date: date(t - 1),
                forecast_date: date(t),
                tau,
                method: method.label(),
                h: None,
                alpha: f64::NAN,
                alpha_lo: None,
                alpha_hi: None,
                beta: f64::NAN,
                beta_lo: None,
                beta_hi: None,
                ess_min: None,
                rhat_max: None,
                divergences: None,
                wall_time: 0.0,
                forecast_loss: f64::NAN,
                error: None,
            };
            match pair.dataset(s..t, scale).and_then(|d| estimate(&d, tau, method, cfg, seed)) {
                Ok(e) => {
                    rec.h = e.h;
                    rec.alpha = e.coef[0] / scale;
                    rec.beta = e.coef[1];
                    rec.alpha_lo = e.lo.map(|v| v[0] / scale);
                    rec.alpha_hi = e.hi.map(|v| v[0] / scale);
                    rec.beta_lo = e.lo.map(|v| v[1]);
                    rec.beta_hi = e.hi.map(|v| v[1]);
                    rec.ess_min = e.ess_min;
                    rec.rhat_max = e.rhat_max;
                    rec.divergences = e.divergences;
                    let u = pair.y[t] - rec.alpha - rec.beta * pair.x[t];
                    rec.forecast_loss = check_loss(tau, u).unwrap_or(f64::NAN);
                }
                Err(err) => {
                    log::warn!("window {k}, tau {tau}, {}: {err}", rec.method);
                    rec.error = Some(err.to_string());
                }
            }
            rec.wall_time = start.elapsed().as_secs_f64();
            rec
        })
        .collect();
    Ok(RollingOutput { records, skipped, expected_windows: starts.len() })
}

/// Averages over windows for one (τ, method) pair.
#[derive(Debug, Clone, Serialize)]
pub struct RollingSummaryRow {
    pub tau: f64,
    pub method: String,
    pub windows: usize,
    pub failed: usize,
    pub mean_forecast_loss: f64,
    pub mean_h: Option<f64>,
    pub mean_beta: f64,
    pub mean_ess_min: Option<f64>,
    pub divergences_per_window: Option<f64>,
}

pub fn summarize_windows(out: &RollingOutput, cfg: &RollingConfig) -> Vec<RollingSummaryRow> {
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mut rows = Vec::new();
    for &tau in &cfg.taus {
        for m in &cfg.methods {
            let label = m.label();
            let all: Vec<&WindowRecord> = out.records.iter().filter(|r| r.tau == tau && r.method == label).collect();
            let ok: Vec<&WindowRecord> = all.iter().copied().filter(|r| r.error.is_none()).collect();
            rows.push(RollingSummaryRow {
                tau,
                method: label,
                windows: ok.len(),
                failed: all.len() - ok.len(),
                mean_forecast_loss: mean(ok.iter().map(|r| r.forecast_loss).collect()).unwrap_or(f64::NAN),
                mean_h: mean(ok.iter().filter_map(|r| r.h).collect()),
                mean_beta: mean(ok.iter().map(|r| r.beta).collect()).unwrap_or(f64::NAN),
                mean_ess_min: mean(ok.iter().filter_map(|r| r.ess_min).collect()),
                divergences_per_window: mean(ok.iter().filter_map(|r| r.divergences.map(|d| d as f64)).collect()),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub tau: f64,
    pub multiplier: f64,
    pub h: f64,
    pub alpha: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub beta: f64,
    pub beta_sd: f64,
    pub beta_lo: f64,
    pub beta_hi: f64,
    /// Posterior probability that β exceeds 1.
    pub prob_beta_gt_one: f64,
    pub ess_min: f64,
    pub divergences: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutput {
    pub start_date: String,
    pub end_date: String,
    /// Reference bandwidth per τ; the cross-validated one unless h is fixed.
    pub base_h: Vec<f64>,
    pub records: Vec<SweepRecord>,
}

/// Refits the window ending on or before `end` at multiples of the reference
/// bandwidth. The same seed is reused across multipliers so that equal
/// bandwidths give identical posteriors.
pub fn sensitivity_sweep(
    pair: &AlignedPair,
    end: NaiveDate,
    kernel: Kernel,
    multipliers: &[f64],
    cfg: &RollingConfig,
) -> Result<SweepOutput> {
    cfg.validate()?;
    if multipliers.is_empty() || multipliers.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(CliError::Usage("bandwidth multipliers must be positive".into()));
    }
    let last = pair.dates.partition_point(|d| *d <= end);
    if last < cfg.window {
        return Err(CliError::Usage(format!(
            "no complete {}-day window ends on or before {end}",
            cfg.window
        )));
    }
    let rows = last - cfg.window..last;
    if constant(&pair.x[rows.clone()]) {
        return Err(CliError::Usage("market return is constant over the sweep window".into()));
    }
    let data = pair.dataset(rows.clone(), cfg.return_scale)?;
    let scale = cfg.return_scale;
    let mut base_h = Vec::new();
    let mut jobs = Vec::new();
    for (ti, &tau) in cfg.taus.iter().enumerate() {
        let seed = derive_seed(cfg.settings.seed, ti as u64);
        let h0 = match cfg.h_policy {
            HPolicy::Fixed(h) => h,
            HPolicy::CvPerWindow => select_bandwidth(&data, tau, kernel, &cfg.bandwidth(), seed)?.0,
        };
        base_h.push(h0);
        for &m in multipliers {
            jobs.push((tau, m, m * h0, seed));
        }
    }
    let records = jobs
        .into_par_iter()
        .map(|(tau, m, h, seed)| {
            let settings = SamplerSettings { seed, ..cfg.settings };
            let out = fit_bsqr(&data, &FitConfig::new(tau, kernel, BandwidthPolicy::Fixed(h), settings))?;
            let (a, b) = (&out.summary.params[0], &out.summary.params[1]);
            let draws: Vec<f64> = out.chains.iter().flat_map(|c| c.beta_column(1)).collect();
            Ok(SweepRecord {
                tau,
                multiplier: m,
                h,
                alpha: a.mean / scale,
                alpha_lo: a.q025 / scale,
                alpha_hi: a.q975 / scale,
                beta: b.mean,
                beta_sd: b.sd,
                beta_lo: b.q025,
                beta_hi: b.q975,
                prob_beta_gt_one: draws.iter().filter(|&&v| v > 1.0).count() as f64 / draws.len() as f64,
                ess_min: out.summary.ess_min,
                divergences: out.summary.divergence_total,
            })
        })
        .collect::<bsqr::Result<Vec<_>>>()?;
    Ok(SweepOutput {
        start_date: pair.dates[rows.start].to_string(),
        end_date: pair.dates[rows.end - 1].to_string(),
        base_h,
        records,
    })
}
