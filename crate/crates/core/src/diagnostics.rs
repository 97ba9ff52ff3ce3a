//! Convergence diagnostics and posterior summaries.

use crate::error::{BsqrError, Result};
use crate::samplers::ChainResult;
use serde::Serialize;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split potential scale reduction factor.
///
/// Each chain is cut into two halves (a middle draw of an odd-length chain is
/// dropped). Returns NaN when every half-chain is constant, since the ratio
/// is then undefined.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(BsqrError::Domain(format!("split R-hat needs at least 2 chains, got {}", chains.len())));
    }
    let len = chains.iter().map(Vec::len).min().unwrap_or(0);
    if len < 4 {
        return Err(BsqrError::Domain(format!("split R-hat needs at least 4 draws per chain, got {len}")));
    }
    let half = len / 2;
    let mut halves: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        halves.push(&c[..half]);
        halves.push(&c[len - half..len]);
    }
    let m = halves.len() as f64;
    let n = half as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = halves.iter().map(|h| sample_var(h)).sum::<f64>() / m;
    let b = n * sample_var(&means);
    if w == 0.0 {
        if b == 0.0 {
            log::warn!("split R-hat undefined for constant chains");
            return Ok(f64::NAN);
        }
        return Ok(f64::INFINITY);
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt())
}

fn autocovariance(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n - lag {
        acc += (x[i] - m) * (x[i + lag] - m);
    }
    acc / n as f64
}

/// Multi-chain effective sample size.
///
/// Autocorrelations are combined across chains as in the classic Stan
/// estimator; the sum is truncated by Geyer's initial positive sequence with
/// the monotone adjustment. The result is capped at the total draw count.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.is_empty() {
        return Err(BsqrError::Domain("ESS needs at least one chain".into()));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 8 {
        return Err(BsqrError::Domain(format!("ESS needs at least 8 draws per chain, got {n}")));
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let m = chains.len() as f64;
    let nf = n as f64;
    let total = m * nf;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov0: Vec<f64> = chains.iter().zip(&means).map(|(c, &mu)| autocovariance(c, mu, 0)).collect();
    let w = acov0.iter().map(|a| a * nf / (nf - 1.0)).sum::<f64>() / m;
    let mut var_plus = w * (nf - 1.0) / nf;
    if chains.len() > 1 {
        var_plus += sample_var(&means);
    }
    if var_plus <= 0.0 || !var_plus.is_finite() {
        log::warn!("ESS of a zero-variance sequence reported as 0");
        return Ok(0.0);
    }
    let rho = |lag: usize| -> f64 {
        let mean_acov = chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocovariance(c, mu, lag))
            .sum::<f64>()
            / m;
        1.0 - (w - mean_acov) / var_plus
    };

    // Geyer: pair sums Γ_k = ρ_{2k} + ρ_{2k+1} while positive, made non-increasing.
    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum_pairs += pair;
        prev_pair = pair;
        k += 1;
    }
    // τ = -1 + 2 Σ Γ_k, i.e. 1 + 2 Σ_{t≥1} ρ_t
    let tau = -1.0 + 2.0 * sum_pairs;
    if tau <= 0.0 {
        return Ok(total);
    }
    Ok((total / tau).min(total))
}

/// Equal-tailed interval from type-7 (linear interpolation) quantiles.
pub fn credible_interval(draws: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(BsqrError::Domain(format!("interval level must lie in (0, 1), got {level}")));
    }
    if draws.len() < 2 {
        return Err(BsqrError::Domain("credible interval needs at least 2 draws".into()));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&sorted, alpha), quantile_sorted(&sorted, 1.0 - alpha)))
}

/// Type-7 quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    /// Present only with at least two chains.
    pub rhat: Option<f64>,
    pub ess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub params: Vec<ParamSummary>,
    pub rhat_max: Option<f64>,
    pub ess_min: f64,
    pub divergence_total: usize,
    pub wall_time: f64,
    pub selected_h: Option<f64>,
    pub accept_rate_beta: f64,
    pub accept_rate_theta: f64,
    pub n_chains: usize,
    pub draws_per_chain: usize,
}

impl FitSummary {
    /// Posterior means of the coefficients (θ excluded).
    pub fn beta_mean(&self) -> Vec<f64> {
        self.params.iter().filter(|p| p.name != "theta").map(|p| p.mean).collect()
    }

    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Summarizes the coefficients `beta[0..d)` and θ of a set of chains.
pub fn summarize(chains: &[ChainResult], wall_time: f64, selected_h: Option<f64>) -> Result<FitSummary> {
    let first = chains.first().ok_or_else(|| BsqrError::Domain("no chains to summarize".into()))?;
    let d = first.beta_draws.ncols();
    let mut params = Vec::with_capacity(d + 1);
    for j in 0..=d {
        let name = if j < d { format!("beta[{j}]") } else { "theta".to_string() };
        let per_chain: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| if j < d { c.beta_column(j) } else { c.theta_draws.clone() })
            .collect();
        let pooled: Vec<f64> = per_chain.iter().flatten().copied().collect();
        let (q025, q975) = credible_interval(&pooled, 0.95)?;
        let rhat = if chains.len() >= 2 { Some(split_rhat(&per_chain)?) } else { None };
        params.push(ParamSummary {
            name,
            mean: mean(&pooled),
            sd: sample_var(&pooled).sqrt(),
            q025,
            q975,
            rhat,
            ess: ess(&per_chain)?,
        });
    }
    let rhat_max = if chains.len() >= 2 {
        Some(params.iter().filter_map(|p| p.rhat).fold(f64::NEG_INFINITY, f64::max))
    } else {
        None
    };
    let ess_min = params.iter().map(|p| p.ess).fold(f64::INFINITY, f64::min);
    let k = chains.len() as f64;
    Ok(FitSummary {
        params,
        rhat_max,
        ess_min,
        divergence_total: chains.iter().map(|c| c.divergences).sum(),
        wall_time,
        selected_h,
        accept_rate_beta: chains.iter().map(|c| c.accept_rate_beta).sum::<f64>() / k,
        accept_rate_theta: chains.iter().map(|c| c.accept_rate_theta).sum::<f64>() / k,
        n_chains: chains.len(),
        draws_per_chain: first.n_draws(),
    })
}
