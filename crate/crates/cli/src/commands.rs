//! Argument parsing and the subcommand drivers.

use crate::config::ConfigFile;
use crate::data::{align_series, describe, load_design, load_prices};
use crate::output::{cv_rows, ensure_dir, write_rows, write_summary, DrawTable};
use crate::rolling::{rolling_fit, sensitivity_sweep, summarize_windows, HPolicy, RollingConfig};
use crate::{CliError, Result, VERSION};
use bsqr::bandwidth::{cv_select, pilot_bandwidth, BandwidthGrid};
use bsqr::diagnostics::{credible_interval, ess, split_rhat};
use bsqr::experiments::write_summary_csv;
use bsqr::samplers::SamplerSettings;
use bsqr::{
    fit_ald, fit_bsqr, run_replications, BandwidthPolicy, ErrorKind, FitConfig, Kernel, Method, Scenario,
    SimSettings,
};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "bsqr", version = VERSION, about = "Bayesian smoothed quantile regression")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed; every chain, fold and replication derives its stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat `key = value` file; keys are long flag names.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// gaussian, uniform, epanechnikov or triangular.
    #[arg(long, global = true)]
    pub kernel: Option<Kernel>,
    /// Quantile level in (0, 1).
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    /// Fixed bandwidth; skips bandwidth selection.
    #[arg(long, global = true)]
    pub h: Option<f64>,
    #[arg(long, global = true)]
    pub chains: Option<usize>,
    /// Iterations per chain, warmup included.
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    #[arg(long, global = true)]
    pub warmup: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model to a design CSV (`y,x1,...,xd`).
    Fit(FitArgs),
    /// Monte Carlo comparison of methods on simulated data.
    Simulate(SimulateArgs),
    /// Cross-validate the bandwidth on a design CSV.
    Cv(CvArgs),
    /// Rolling-window tail betas of an asset on the market.
    Rolling(RollingArgs),
    /// Refit one window at several bandwidths.
    Sweep(SweepArgs),
    /// Convergence diagnostics of a draws.csv.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// bsqr or ald.
    #[arg(long)]
    pub method: Option<String>,
    /// cv or silverman; ignored when --h is given.
    #[arg(long)]
    pub bandwidth: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Multiples of the Silverman bandwidth tried by cross-validation.
    #[arg(long, value_delimiter = ',')]
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// dense or sparse.
    #[arg(long)]
    pub scenario: Option<String>,
    /// normal, t3, mixture or heteroscedastic.
    #[arg(long)]
    pub error: Option<ErrorKind>,
    /// Number of replications.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Covariate count of the sparse scenario.
    #[arg(long)]
    pub d: Option<usize>,
    /// Comma-separated methods, e.g. `uniform,ald,stdqr`.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<Method>,
    /// Larger sampling budget (4000 iterations, 2000 warmup).
    #[arg(long)]
    pub full: bool,
    /// Sample size of the oracle fit for the heteroscedastic truth.
    #[arg(long)]
    pub oracle_n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// Asset prices, `date,adj_close`.
    #[arg(long)]
    pub asset: Option<PathBuf>,
    /// Market prices, `date,adj_close`.
    #[arg(long)]
    pub market: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub taus: Vec<f64>,
    /// Multiply returns by this before fitting (100 for percent).
    #[arg(long)]
    pub return_scale: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub cv_multipliers: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct RollingArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<Method>,
    /// cv (re-selected in every window) or fixed (requires --h).
    #[arg(long)]
    pub h_policy: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    /// Last date of the window (YYYY-MM-DD).
    #[arg(long)]
    pub end_date: Option<NaiveDate>,
    /// Multiples of the reference bandwidth.
    #[arg(long, value_delimiter = ',')]
    pub multipliers: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub draws: Option<PathBuf>,
}

/// Global settings after merging flags, config file and defaults.
#[derive(Debug, Clone, Serialize)]
pub struct Common {
    pub seed: u64,
    pub out: PathBuf,
    pub kernel: Kernel,
    pub tau: f64,
    /// Whether τ was given explicitly rather than defaulted.
    pub tau_given: bool,
    pub h: Option<f64>,
    /// Sampler budget; `None` leaves the command's default in place.
    pub chains: Option<usize>,
    pub iters: Option<usize>,
    pub warmup: Option<usize>,
}

impl Common {
    fn resolve(g: &GlobalArgs, cfg: &ConfigFile) -> Result<Self> {
        let tau = cfg.pick(g.tau, "tau")?;
        let c = Common {
            seed: cfg.pick_or(g.seed, "seed", 1)?,
            out: cfg.pick_or(g.out.clone(), "out", PathBuf::from("bsqr-out"))?,
            kernel: cfg.pick_or(g.kernel, "kernel", Kernel::Uniform)?,
            tau: tau.unwrap_or(0.5),
            tau_given: tau.is_some(),
            h: cfg.pick(g.h, "h")?,
            chains: cfg.pick(g.chains, "chains")?,
            iters: cfg.pick(g.iters, "iters")?,
            warmup: cfg.pick(g.warmup, "warmup")?,
        };
        if !(c.tau > 0.0 && c.tau < 1.0) {
            return Err(CliError::Usage(format!("--tau must lie in the open interval (0, 1), got {}", c.tau)));
        }
        if let Some(h) = c.h {
            if !(h.is_finite() && h > 0.0) {
                return Err(CliError::Usage(format!("--h must be positive, got {h}")));
            }
        }
        if c.chains == Some(0) {
            return Err(CliError::Usage("--chains must be at least 1".into()));
        }
        c.budget(2, 4000, 2000)?;
        Ok(c)
    }

    /// Chains, iterations and warmup with the given fallbacks.
    fn budget(&self, chains: usize, iters: usize, warmup: usize) -> Result<(usize, usize, usize)> {
        // an explicit --iters without --warmup spends half of it on warmup
        let it = self.iters.unwrap_or(iters);
        let wu = self.warmup.unwrap_or(if self.iters.is_some() { it / 2 } else { warmup });
        let b = (self.chains.unwrap_or(chains), it, wu);
        if b.1 <= b.2 {
            return Err(CliError::Usage(format!("--iters ({}) must exceed --warmup ({})", b.1, b.2)));
        }
        Ok(b)
    }

    fn sampler(&self) -> SamplerSettings {
        let (n_chains, n_iters, n_warmup) = self.budget(2, 4000, 2000).expect("validated in resolve");
        SamplerSettings { n_chains, n_iters, n_warmup, seed: self.seed }
    }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| CliError::Usage(format!("missing required --{flag} (flag or config key)")))
}

fn bandwidth_policy(common: &Common, choice: &str, folds: usize, multipliers: Vec<f64>) -> Result<BandwidthPolicy> {
    if let Some(h) = common.h {
        return Ok(BandwidthPolicy::Fixed(h));
    }
    match choice {
        "cv" => Ok(BandwidthPolicy::CrossValidated { multipliers, folds }),
        "silverman" => Ok(BandwidthPolicy::Silverman),
        other => Err(CliError::Usage(format!("--bandwidth must be cv or silverman, got '{other}'"))),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.global.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let common = Common::resolve(&cli.global, &cfg)?;
    match cli.command {
        Command::Fit(a) => cmd_fit(&common, &cfg, a),
        Command::Simulate(a) => cmd_simulate(&common, &cfg, a),
        Command::Cv(a) => cmd_cv(&common, &cfg, a),
        Command::Rolling(a) => cmd_rolling(&common, &cfg, a),
        Command::Sweep(a) => cmd_sweep(&common, &cfg, a),
        Command::Diagnose(a) => cmd_diagnose(&common, &cfg, a),
    }
}

fn cmd_fit(common: &Common, cfg: &ConfigFile, a: FitArgs) -> Result<()> {
    let path: PathBuf = required(cfg.pick(a.data, "data")?, "data")?;
    let method: String = cfg.pick_or(a.method, "method", "bsqr".to_string())?;
    let choice: String = cfg.pick_or(a.bandwidth, "bandwidth", "cv".to_string())?;
    let folds = cfg.pick_or(a.folds, "folds", 5)?;
    let multipliers = cfg.pick_list(Some(a.multipliers), "multipliers", BandwidthGrid::DEFAULT_MULTIPLIERS.to_vec())?;
    cfg.check_all_used()?;

    let data = load_design(&path)?;
    ensure_dir(&common.out)?;
    let config = json!({ "common": common, "sampler": common.sampler(), "data": path, "method": method, "n": data.n(), "d": data.d() });
    match method.to_ascii_lowercase().as_str() {
        "bsqr" => {
            let policy = bandwidth_policy(common, &choice, folds, multipliers)?;
            let fc = FitConfig::new(common.tau, common.kernel, policy, common.sampler());
            let out = fit_bsqr(&data, &fc)?;
            DrawTable::from_chains(&out.chains).write(&common.out.join("draws.csv"))?;
            if let Some(cv) = &out.cv {
                write_rows(&common.out.join("cv.csv"), &cv_rows(cv))?;
            }
            print_params(&out.summary);
            let result = json!({ "summary": out.summary, "bandwidth": fc.bandwidth, "base_h": out.base_h, "cv": out.cv });
            write_summary(&common.out, "fit", common.seed, json!({ "fit": config, "bandwidth_policy": fc.bandwidth }), result)?;
        }
        "ald" => {
            let out = fit_ald(&data, common.tau, None, &common.sampler())?;
            DrawTable::from_chains(&out.chains).write(&common.out.join("draws.csv"))?;
            print_params(&out.summary);
            write_summary(&common.out, "fit", common.seed, json!({ "fit": config }), json!({ "summary": out.summary }))?;
        }
        other => return Err(CliError::Usage(format!("--method must be bsqr or ald, got '{other}'"))),
    }
    Ok(())
}

fn print_params(s: &bsqr::diagnostics::FitSummary) {
    println!("{:<10} {:>12} {:>12} {:>12} {:>12} {:>8} {:>9}", "param", "mean", "sd", "q2.5", "q97.5", "rhat", "ess");
    for p in &s.params {
        let rhat = p.rhat.map_or("-".to_string(), |r| format!("{r:.3}"));
        println!(
            "{:<10} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>8} {:>9.1}",
            p.name, p.mean, p.sd, p.q025, p.q975, rhat, p.ess
        );
    }
    println!(
        "h = {}, divergences = {}, accept(beta) = {:.3}, accept(theta) = {:.3}, {:.1}s",
        s.selected_h.map_or("-".to_string(), |h| h.to_string()),
        s.divergence_total,
        s.accept_rate_beta,
        s.accept_rate_theta,
        s.wall_time
    );
}

#[derive(Serialize)]
struct ReplicationRow<'a> {
    replication: usize,
    method: &'a str,
    mse: Option<f64>,
    mae: Option<f64>,
    wmse: Option<f64>,
    check_loss: Option<f64>,
    coverage: Option<f64>,
    width: Option<f64>,
    rhat_max: Option<f64>,
    ess_min: Option<f64>,
    divergences_per_chain: Option<f64>,
    selected_h: Option<f64>,
    predictive_mean_check_loss: Option<f64>,
    wall_time: f64,
    error: Option<&'a str>,
}

fn cmd_simulate(common: &Common, cfg: &ConfigFile, a: SimulateArgs) -> Result<()> {
    let scenario: String = cfg.pick_or(a.scenario, "scenario", "dense".to_string())?;
    let kind = cfg.pick_or(a.error, "error", ErrorKind::Normal)?;
    let m = cfg.pick_or(a.m, "m", 20)?;
    let n_train = cfg.pick_or(a.n_train, "n-train", 200)?;
    let n_test = cfg.pick_or(a.n_test, "n-test", 1000)?;
    let d = cfg.pick_or(a.d, "d", 20)?;
    let methods = cfg.pick_list(
        Some(a.methods),
        "methods",
        vec![Method::Bsqr(common.kernel), Method::Ald, Method::StdQr],
    )?;
    let full = cfg.pick_or(a.full.then_some(true), "full", false)?;
    let oracle_n = cfg.pick(a.oracle_n, "oracle-n")?;
    cfg.check_all_used()?;

    let sc = match scenario.as_str() {
        "dense" => Scenario::dense(n_train, n_test, kind, common.tau),
        "sparse" => Scenario::sparse(d, n_train, n_test, kind, common.tau),
        other => return Err(CliError::Usage(format!("--scenario must be dense or sparse, got '{other}'"))),
    };
    sc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut settings = if full { SimSettings::full() } else { SimSettings::desk() };
    (settings.chains, settings.iters, settings.warmup) = common.budget(settings.chains, settings.iters, settings.warmup)?;
    if let Some(h) = common.h {
        settings.bandwidth = BandwidthPolicy::Fixed(h);
    }
    if let Some(n) = oracle_n {
        settings.oracle_n = n;
    }
    ensure_dir(&common.out)?;
    let summary = run_replications(&sc, &methods, m, common.seed, &settings)?;

    let path = common.out.join("metrics.csv");
    let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_summary_csv(&summary, file)?;
    let rows: Vec<ReplicationRow> = summary
        .records
        .iter()
        .map(|r| {
            let mt = r.metrics.as_ref();
            ReplicationRow {
                replication: r.replication,
                method: &r.method,
                mse: mt.map(|x| x.mse),
                mae: mt.map(|x| x.mae),
                wmse: mt.map(|x| x.wmse),
                check_loss: mt.map(|x| x.check_loss),
                coverage: mt.and_then(|x| x.coverage),
                width: mt.and_then(|x| x.width),
                rhat_max: r.rhat_max,
                ess_min: r.ess_min,
                divergences_per_chain: r.divergences_per_chain,
                selected_h: r.selected_h,
                predictive_mean_check_loss: r.predictive_mean_check_loss,
                wall_time: r.wall_time,
                error: r.error.as_deref(),
            }
        })
        .collect();
    write_rows(&common.out.join("replications.csv"), &rows)?;

    println!("{:<16} {:>4} {:>12} {:>12} {:>12} {:>12} {:>9}", "method", "ok", "mse", "wmse", "check", "coverage", "div/chain");
    for s in &summary.methods {
        println!(
            "{:<16} {:>4} {:>12.6} {:>12.6} {:>12.6} {:>12} {:>9}",
            s.method,
            s.n_ok,
            s.mse,
            s.wmse,
            s.check_loss,
            s.coverage.map_or("-".into(), |c| format!("{c:.3}")),
            s.divergences_per_chain.map_or("-".into(), |c| format!("{c:.2}")),
        )
    }
    let config = json!({
        "common": common, "scenario": sc, "replications": m,
        "methods": methods.iter().map(|m| m.label()).collect::<Vec<_>>(), "settings": settings,
    });
    let result = json!({ "truth": summary.truth, "methods": summary.methods });
    write_summary(&common.out, "simulate", common.seed, config, result)?;
    Ok(())
}

fn cmd_cv(common: &Common, cfg: &ConfigFile, a: CvArgs) -> Result<()> {
    let path: PathBuf = required(cfg.pick(a.data, "data")?, "data")?;
    let folds = cfg.pick_or(a.folds, "folds", 5)?;
    let multipliers = cfg.pick_list(Some(a.multipliers), "multipliers", BandwidthGrid::DEFAULT_MULTIPLIERS.to_vec())?;
    cfg.check_all_used()?;
    let data = load_design(&path)?;
    let base = match common.h {
        Some(h) => h,
        None => pilot_bandwidth(&data)?,
    };
    let grid = BandwidthGrid::new(base, multipliers, folds)?;
    let cv = cv_select(&data, common.tau, common.kernel, &grid, common.seed)?;
    ensure_dir(&common.out)?;
    write_rows(&common.out.join("cv.csv"), &cv_rows(&cv))?;
    for r in cv_rows(&cv) {
        println!("h = {:<14.8} loss = {:<14.8}{}", r.h, r.loss, if r.selected { "  <- selected" } else { "" });
    }
    let config = json!({ "common": common, "data": path, "grid": grid });
    write_summary(&common.out, "cv", common.seed, config, &cv)?;
    Ok(())
}

fn rolling_config(common: &Common, cfg: &ConfigFile, p: &mut PairArgs) -> Result<RollingConfig> {
    let mut rc = RollingConfig::new(common.sampler());
    rc.window = cfg.pick_or(p.window, "window", rc.window)?;
    let default_taus = if common.tau_given { vec![common.tau] } else { rc.taus.clone() };
    rc.taus = cfg.pick_list(Some(std::mem::take(&mut p.taus)), "taus", default_taus)?;
    rc.return_scale = cfg.pick_or(p.return_scale, "return-scale", rc.return_scale)?;
    rc.cv_folds = cfg.pick_or(p.folds, "folds", rc.cv_folds)?;
    rc.cv_multipliers = cfg.pick_list(Some(std::mem::take(&mut p.cv_multipliers)), "cv-multipliers", rc.cv_multipliers)?;
    if let Some(h) = common.h {
        rc.h_policy = HPolicy::Fixed(h);
    }
    Ok(rc)
}

fn load_pair(cfg: &ConfigFile, p: &PairArgs) -> Result<(PathBuf, PathBuf)> {
    let asset: PathBuf = required(cfg.pick(p.asset.clone(), "asset")?, "asset")?;
    let market: PathBuf = required(cfg.pick(p.market.clone(), "market")?, "market")?;
    Ok((asset, market))
}

fn cmd_rolling(common: &Common, cfg: &ConfigFile, mut a: RollingArgs) -> Result<()> {
    let (asset_path, market_path) = load_pair(cfg, &a.pair)?;
    let mut rc = rolling_config(common, cfg, &mut a.pair)?;
    rc.step = cfg.pick_or(a.step, "step", rc.step)?;
    rc.methods = cfg.pick_list(Some(a.methods), "methods", vec![Method::Bsqr(common.kernel), Method::Ald])?;
    let policy: String = cfg.pick_or(a.h_policy, "h-policy", "cv".to_string())?;
    match (policy.as_str(), common.h) {
        ("cv", None) => rc.h_policy = HPolicy::CvPerWindow,
        ("cv", Some(_)) => {
            return Err(CliError::Usage("--h fixes the bandwidth; use --h-policy fixed or drop --h".into()))
        }
        ("fixed", Some(h)) => rc.h_policy = HPolicy::Fixed(h),
        ("fixed", None) => return Err(CliError::Usage("--h-policy fixed requires --h".into())),
        (other, _) => return Err(CliError::Usage(format!("--h-policy must be cv or fixed, got '{other}'"))),
    }
    cfg.check_all_used()?;
    rc.validate()?;

    let asset = load_prices(&asset_path)?;
    let market = load_prices(&market_path)?;
    let pair = align_series(&asset, &market)?;
    let stats = json!({ "asset": describe(&asset.log_returns), "market": describe(&market.log_returns) });
    ensure_dir(&common.out)?;
    let out = rolling_fit(&pair, &rc)?;
    write_rows(&common.out.join("windows.csv"), &out.records)?;
    let rows = summarize_windows(&out, &rc);
    println!("{} windows of {} days, step {}", out.expected_windows, rc.window, rc.step);
    println!("{:<6} {:<16} {:>8} {:>14} {:>10} {:>10}", "tau", "method", "windows", "forecast loss", "mean h", "mean beta");
    for r in &rows {
        println!(
            "{:<6} {:<16} {:>8} {:>14.8} {:>10} {:>10.4}",
            r.tau,
            r.method,
            r.windows,
            r.mean_forecast_loss,
            r.mean_h.map_or("-".into(), |h| format!("{h:.4}")),
            r.mean_beta
        );
    }
    let config = json!({
        "common": common, "asset": asset_path, "market": market_path, "rolling": rc,
        "methods": rc.methods.iter().map(|m| m.label()).collect::<Vec<_>>(),
    });
    let result = json!({
        "descriptive": stats,
        "aligned": pair.len(), "dropped_asset": pair.dropped_asset, "dropped_market": pair.dropped_market,
        "expected_windows": out.expected_windows, "skipped_windows": out.skipped, "summary": rows,
    });
    write_summary(&common.out, "rolling", common.seed, config, result)?;
    Ok(())
}

fn cmd_sweep(common: &Common, cfg: &ConfigFile, mut a: SweepArgs) -> Result<()> {
    let (asset_path, market_path) = load_pair(cfg, &a.pair)?;
    let rc = rolling_config(common, cfg, &mut a.pair)?;
    let end: NaiveDate = required(cfg.pick(a.end_date, "end-date")?, "end-date")?;
    let multipliers = cfg.pick_list(Some(a.multipliers), "multipliers", vec![0.5, 1.0, 2.0])?;
    cfg.check_all_used()?;

    let pair = align_series(&load_prices(&asset_path)?, &load_prices(&market_path)?)?;
    ensure_dir(&common.out)?;
    let out = sensitivity_sweep(&pair, end, common.kernel, &multipliers, &rc)?;
    write_rows(&common.out.join("sweep.csv"), &out.records)?;
    println!("window {} to {}", out.start_date, out.end_date);
    for r in &out.records {
        println!(
            "tau {:<5} h x{:<4} h = {:<10.5} beta = {:.4} [{:.4}, {:.4}]  P(beta > 1) = {:.3}",
            r.tau, r.multiplier, r.h, r.beta, r.beta_lo, r.beta_hi, r.prob_beta_gt_one
        );
    }
    let config = json!({ "common": common, "asset": asset_path, "market": market_path, "end_date": end.to_string(), "rolling": rc, "multipliers": multipliers });
    write_summary(&common.out, "sweep", common.seed, config, &out)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct DiagRow {
    param: String,
    mean: f64,
    sd: f64,
    q025: f64,
    q975: f64,
    rhat: Option<f64>,
    ess: f64,
}

fn cmd_diagnose(common: &Common, cfg: &ConfigFile, a: DiagnoseArgs) -> Result<()> {
    let path: PathBuf = required(cfg.pick(a.draws, "draws")?, "draws")?;
    cfg.check_all_used()?;
    let table = DrawTable::read(&path)?;
    let rows = diagnose_table(&table)?;
    ensure_dir(&common.out)?;
    write_rows(&common.out.join("diagnostics.csv"), &rows)?;
    for r in &rows {
        println!(
            "{:<10} mean {:>12.6}  sd {:>10.6}  rhat {:>7}  ess {:>8.1}",
            r.param,
            r.mean,
            r.sd,
            r.rhat.map_or("-".into(), |v| format!("{v:.3}")),
            r.ess
        );
    }
    let divergent = table.divergent.iter().filter(|&&d| d).count();
    println!("{divergent} divergent draws of {}", table.values.len());
    let result = json!({ "params": rows, "divergent": divergent, "draws": table.values.len() });
    write_summary(&common.out, "diagnose", common.seed, json!({ "common": common, "draws": path }), result)?;
    Ok(())
}

fn diagnose_table(t: &DrawTable) -> Result<Vec<DiagRow>> {
    let mut rows = Vec::new();
    for (j, name) in t.names.iter().enumerate() {
        let chains = t.per_chain(j);
        let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let sd = (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        let (q025, q975) = credible_interval(&pooled, 0.95)?;
        let rhat = if chains.len() >= 2 { Some(split_rhat(&chains)?) } else { None };
        rows.push(DiagRow { param: name.clone(), mean, sd, q025, q975, rhat, ess: ess(&chains)? });
    }
    Ok(rows)
}

/// Caps the global rayon pool at `BSQR_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("BSQR_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("BSQR_THREADS must be a positive integer, got '{v}'")))?;
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("rayon pool already initialised");
        }
    }
    Ok(())
}
