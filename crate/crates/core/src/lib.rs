//! Bayesian smoothed quantile regression.
//!
//! The check loss of quantile regression is replaced by its convolution with a
//! kernel of bandwidth `h`. The resulting loss defines a proper error density
//! `exp(-θ L_h(e)) / Z(θ)` whose normalizing constant is evaluated numerically.
//! Coefficients are sampled by HMC and the scale `θ` by a log-normal
//! Metropolis step.

pub mod bandwidth;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod model;
pub mod normal;
pub mod optim;
pub mod quadrature;
pub mod rng;
pub mod samplers;
pub mod smoothing;

pub use error::{BsqrError, Result};
pub use smoothing::{
    check_loss, kernel_cdf, kernel_pdf, loss_curvature, loss_minimum, smoothed_loss,
    smoothed_score, Kernel, LossMinimum, QuantileSpec,
};
pub use model::{
    ald_log_likelihood, grad_potential_beta, hessian_potential_beta, likelihood_hessian_beta,
    log_likelihood, log_normalizing_constant, loss_sum, normalizing_constant, potential_beta,
    potential_theta, propriety_report, residuals, Dataset, ModelState, Priors, ProprietyReport,
    ZCache,
};
pub use experiments::{
    evaluate_metrics, gen_design, gen_errors, run_replications, true_beta_at_tau, ErrorKind,
    Method, MetricRow, ReplicationSummary, Scenario, SimSettings,
};
pub use fit::{fit_ald, fit_bsqr, BandwidthPolicy, FitConfig, FitOutput};
