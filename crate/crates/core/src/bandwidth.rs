//! Bandwidth selection: Silverman's reference rule and K-fold cross-validation.

use crate::diagnostics::quantile_sorted;
use crate::error::{check_tau, BsqrError, Result};
use crate::model::{residuals, Dataset, Priors};
use crate::optim::{minimize_smoothed_qr, ols, NewtonOptions};
use crate::rng::stream_rng;
use crate::smoothing::{rho, Kernel, QuantileSpec};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

/// `0.9 · min(sd, IQR/1.34) · n^{-1/5}`.
///
/// A zero IQR with positive sd (heavily tied residuals) falls back to the sd.
pub fn silverman_base(residuals: &[f64]) -> Result<f64> {
    let n = residuals.len();
    if n < 2 {
        return Err(BsqrError::Data("Silverman's rule needs at least 2 residuals".into()));
    }
    let m = residuals.iter().sum::<f64>() / n as f64;
    let sd = (residuals.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(BsqrError::Data(
            "residuals have zero spread; Silverman's rule is undefined, set the bandwidth manually".into(),
        ));
    }
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

/// Silverman bandwidth from least-squares pilot residuals.
pub fn pilot_bandwidth(data: &Dataset) -> Result<f64> {
    let beta = ols(data).ok_or_else(|| BsqrError::Data("design matrix is rank deficient".into()))?;
    let e = residuals(data, &beta)?;
    silverman_base(e.as_slice())
}

#[derive(Debug, Clone, Serialize)]
pub struct BandwidthGrid {
    pub base_h: f64,
    pub multipliers: Vec<f64>,
    pub folds: usize,
}

impl BandwidthGrid {
    pub const DEFAULT_MULTIPLIERS: [f64; 5] = [0.5, 0.75, 1.0, 1.5, 2.0];

    pub fn new(base_h: f64, multipliers: Vec<f64>, folds: usize) -> Result<Self> {
        if !(base_h.is_finite() && base_h > 0.0) {
            return Err(BsqrError::Domain(format!("base bandwidth must be positive, got {base_h}")));
        }
        if multipliers.is_empty() || multipliers.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(BsqrError::Domain("bandwidth multipliers must be positive and non-empty".into()));
        }
        if folds < 2 {
            return Err(BsqrError::Domain(format!("cross-validation needs at least 2 folds, got {folds}")));
        }
        Ok(Self { base_h, multipliers, folds })
    }

    pub fn with_defaults(base_h: f64) -> Result<Self> {
        Self::new(base_h, Self::DEFAULT_MULTIPLIERS.to_vec(), 5)
    }

    pub fn candidates(&self) -> Vec<f64> {
        self.multipliers.iter().map(|m| m * self.base_h).collect()
    }
}

/// Seeded partition of `0..n` into `folds` groups of near-equal size.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, 0x0cf0_1d5e));
    let mut out = vec![Vec::with_capacity(n / folds + 1); folds];
    for (k, i) in perm.into_iter().enumerate() {
        out[k % folds].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CvResult {
    pub h_star: f64,
    pub candidates: Vec<f64>,
    pub multipliers: Vec<f64>,
    /// Mean held-out check loss per candidate (NaN when every fold failed).
    pub losses: Vec<f64>,
    pub skipped_folds: usize,
}

/// K-fold cross-validation of the bandwidth. Inner fits are MAP estimates at
/// `θ = 1/h₀`; ties go to the smaller bandwidth.
pub fn cv_select(data: &Dataset, tau: f64, kernel: Kernel, grid: &BandwidthGrid, seed: u64) -> Result<CvResult> {
    check_tau(tau)?;
    if grid.folds > data.n() {
        return Err(BsqrError::Domain(format!(
            "more folds ({}) than observations ({})",
            grid.folds,
            data.n()
        )));
    }
    let folds = fold_partition(data.n(), grid.folds, seed);
    let splits: Vec<Option<(Dataset, Dataset)>> = (0..grid.folds)
        .map(|k| {
            let train: Vec<usize> = folds.iter().enumerate().filter(|(j, _)| *j != k).flat_map(|(_, f)| f.iter().copied()).collect();
            let (Ok(tr), Ok(te)) = (data.subset(&train), data.subset(&folds[k])) else {
                return None;
            };
            if ols(&tr).is_none() {
                log::warn!("cross-validation fold {k} has a rank-deficient training design; skipped");
                return None;
            }
            Some((tr, te))
        })
        .collect();
    let skipped = splits.iter().filter(|s| s.is_none()).count();
    if skipped == grid.folds {
        return Err(BsqrError::Data("every cross-validation fold has a degenerate design".into()));
    }

    let theta = 1.0 / grid.base_h;
    let priors = Priors::weakly_informative(data.d());
    let candidates = grid.candidates();
    let losses: Vec<f64> = candidates
        .par_iter()
        .map(|&h| {
            let spec = QuantileSpec::new(tau, h, kernel).expect("validated tau and positive h");
            let mut acc = 0.0;
            let mut used = 0usize;
            for (k, split) in splits.iter().enumerate() {
                let Some((train, test)) = split else { continue };
                let start = ols(train).expect("checked above");
                match minimize_smoothed_qr(train, &spec, theta, Some(&priors), h, start, NewtonOptions { grad_tol: 1e-8, max_iters: 200 }) {
                    Ok(fit) => {
                        let e = residuals(test, &fit.x).expect("same width");
                        acc += e.iter().map(|&v| rho(tau, v)).sum::<f64>() / e.len() as f64;
                        used += 1;
                    }
                    Err(err) => log::warn!("cross-validation fit failed (h={h}, fold {k}): {err}"),
                }
            }
            if used == 0 {
                f64::NAN
            } else {
                acc / used as f64
            }
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, &l) in losses.iter().enumerate() {
        if l.is_nan() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) if l < losses[b] || (l == losses[b] && candidates[i] < candidates[b]) => Some(i),
            keep => keep,
        };
    }
    let b = best.ok_or_else(|| BsqrError::Numeric("every cross-validation fit failed".into()))?;
    Ok(CvResult {
        h_star: candidates[b],
        candidates,
        multipliers: grid.multipliers.clone(),
        losses,
        skipped_folds: skipped,
    })
}
