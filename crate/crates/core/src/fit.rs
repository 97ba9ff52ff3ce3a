//! End-to-end fits: bandwidth choice, sampling and summary.

use crate::bandwidth::{cv_select, pilot_bandwidth, BandwidthGrid, CvResult};
use crate::diagnostics::{summarize, FitSummary};
use crate::error::{check_tau, Result};
use crate::model::{Dataset, Priors};
use crate::samplers::{run_ald_baseline, run_block_sampler, ChainResult, HmcConfig, MhThetaConfig, SamplerSettings};
use crate::smoothing::{Kernel, QuantileSpec};
use serde::Serialize;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthPolicy {
    Fixed(f64),
    /// Silverman's rule on least-squares residuals.
    Silverman,
    /// Cross-validation over multiples of the Silverman bandwidth.
    CrossValidated { multipliers: Vec<f64>, folds: usize },
}

impl BandwidthPolicy {
    pub fn default_cv() -> Self {
        BandwidthPolicy::CrossValidated {
            multipliers: BandwidthGrid::DEFAULT_MULTIPLIERS.to_vec(),
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitConfig {
    pub tau: f64,
    pub kernel: Kernel,
    pub bandwidth: BandwidthPolicy,
    pub settings: SamplerSettings,
    pub hmc: HmcConfig,
    pub mh: MhThetaConfig,
    /// `None` uses β ~ N(0, 1000 I), θ ~ Gamma(0.01, 0.01).
    pub priors: Option<Priors>,
}

impl FitConfig {
    pub fn new(tau: f64, kernel: Kernel, bandwidth: BandwidthPolicy, settings: SamplerSettings) -> Self {
        Self {
            tau,
            kernel,
            bandwidth,
            settings,
            hmc: HmcConfig::default(),
            mh: MhThetaConfig::adaptive(),
            priors: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitOutput {
    pub spec: QuantileSpec,
    pub base_h: Option<f64>,
    pub cv: Option<CvResult>,
    pub chains: Vec<ChainResult>,
    pub summary: FitSummary,
}

/// Resolves the bandwidth policy to a concrete `h`.
pub fn select_bandwidth(
    data: &Dataset,
    tau: f64,
    kernel: Kernel,
    policy: &BandwidthPolicy,
    seed: u64,
) -> Result<(f64, Option<f64>, Option<CvResult>)> {
    match policy {
        BandwidthPolicy::Fixed(h) => Ok((*h, None, None)),
        BandwidthPolicy::Silverman => {
            let h0 = pilot_bandwidth(data)?;
            Ok((h0, Some(h0), None))
        }
        BandwidthPolicy::CrossValidated { multipliers, folds } => {
            let h0 = pilot_bandwidth(data)?;
            let grid = BandwidthGrid::new(h0, multipliers.clone(), *folds)?;
            let cv = cv_select(data, tau, kernel, &grid, seed)?;
            Ok((cv.h_star, Some(h0), Some(cv)))
        }
    }
}

pub fn fit_bsqr(data: &Dataset, cfg: &FitConfig) -> Result<FitOutput> {
    check_tau(cfg.tau)?;
    let start = Instant::now();
    let (h, base_h, cv) = select_bandwidth(data, cfg.tau, cfg.kernel, &cfg.bandwidth, cfg.settings.seed)?;
    let spec = QuantileSpec::new(cfg.tau, h, cfg.kernel)?;
    let priors = cfg.priors.clone().unwrap_or_else(|| Priors::weakly_informative(data.d()));
    let chains = run_block_sampler(data, &spec, &priors, &cfg.hmc, &cfg.mh, &cfg.settings)?;
    let summary = summarize(&chains, start.elapsed().as_secs_f64(), Some(h))?;
    Ok(FitOutput { spec, base_h, cv, chains, summary })
}

#[derive(Debug, Clone, Serialize)]
pub struct AldOutput {
    pub tau: f64,
    pub chains: Vec<ChainResult>,
    pub summary: FitSummary,
}

pub fn fit_ald(data: &Dataset, tau: f64, priors: Option<&Priors>, settings: &SamplerSettings) -> Result<AldOutput> {
    let start = Instant::now();
    let default = Priors::weakly_informative(data.d());
    let chains = run_ald_baseline(data, tau, priors.unwrap_or(&default), settings)?;
    let summary = summarize(&chains, start.elapsed().as_secs_f64(), None)?;
    Ok(AldOutput { tau, chains, summary })
}
