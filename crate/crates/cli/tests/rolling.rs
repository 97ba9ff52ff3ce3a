use bsqr::rng::stream_rng;
use bsqr::samplers::SamplerSettings;
use bsqr::{Kernel, Method};
use bsqr_cli::data::{align_series, load_prices, AlignedPair};
use bsqr_cli::output::{read_rows, write_rows, DrawTable};
use bsqr_cli::rolling::{
    rolling_fit, sensitivity_sweep, window_count, window_starts, HPolicy, RollingConfig, SweepRecord, WindowRecord,
};
use chrono::{Days, NaiveDate};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use std::path::Path;

fn pair(x: Vec<f64>, y: Vec<f64>) -> AlignedPair {
    let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    AlignedPair { dates: (0..x.len() as u64).map(|i| d0 + Days::new(i)).collect(), y, x, dropped_asset: 0, dropped_market: 0 }
}

fn noise(n: usize, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn cfg(window: usize, step: usize, taus: Vec<f64>, h: f64) -> RollingConfig {
    let mut c = RollingConfig::new(SamplerSettings { n_chains: 2, n_iters: 600, n_warmup: 300, seed: 5 });
    c.window = window;
    c.step = step;
    c.taus = taus;
    c.methods = vec![Method::Bsqr(Kernel::Uniform)];
    c.h_policy = HPolicy::Fixed(h);
    c
}

#[test]
fn window_boundaries() {
    assert_eq!(window_starts(300, 252, 21), vec![0, 21, 42]);
    assert_eq!(window_count(253, 252, 21), 1);
    assert_eq!(window_count(252, 252, 21), 0);
    assert_eq!(window_count(2011, 252, 21), 84);
}

proptest! {
    #[test]
    fn windows_are_complete_and_maximal(n in 1usize..3000, window in 2usize..400, step in 1usize..60) {
        let starts = window_starts(n, window, step);
        for (k, &s) in starts.iter().enumerate() {
            prop_assert_eq!(s, k * step);
            // the forecast row exists
            prop_assert!(s + window < n);
        }
        let next = starts.len() * step;
        prop_assert!(next + window >= n);
    }
}

#[test]
fn constant_response_gives_flat_line() {
    let x = noise(160, 1.0, 1);
    let p = pair(x, vec![0.7; 160]);
    let c = cfg(60, 50, vec![0.25, 0.75], 0.05);
    let out = rolling_fit(&p, &c).unwrap();
    assert_eq!(out.records.len(), 2 * 2);
    for r in &out.records {
        assert!(r.error.is_none());
        assert!(r.beta.abs() < 0.05, "{r:?}");
        assert!((r.alpha - 0.7).abs() < 0.05, "{r:?}");
    }
}

#[test]
fn noiseless_line_is_recovered_with_shrinking_intervals() {
    let x = noise(200, 1.0, 2);
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let p = pair(x, y);
    let width = |window: usize| {
        let out = rolling_fit(&p, &cfg(window, window / 2, vec![0.1, 0.9], 0.01)).unwrap();
        let r = &out.records[0];
        for r in &out.records {
            assert!((r.beta - 2.0).abs() < 0.02, "{r:?}");
            assert!(r.forecast_loss < 0.02);
        }
        r.beta_hi.unwrap() - r.beta_lo.unwrap()
    };
    let (short, long) = (width(30), width(150));
    assert!(long < short, "{long} vs {short}");
}

#[test]
fn constant_market_windows_are_skipped() {
    let mut x = noise(120, 1.0, 3);
    x[..40].iter_mut().for_each(|v| *v = 0.01);
    let y: Vec<f64> = x.iter().zip(noise(120, 0.3, 4)).map(|(a, e)| a + e).collect();
    let out = rolling_fit(&pair(x, y), &cfg(40, 20, vec![0.5], 0.2)).unwrap();
    assert_eq!(out.expected_windows, 4);
    assert_eq!(out.skipped, vec![0]);
    assert_eq!(out.records.iter().map(|r| r.window).collect::<Vec<_>>(), vec![1, 2, 3]);
}

#[test]
fn rolling_rejects_bad_settings() {
    let p = pair(noise(50, 1.0, 5), noise(50, 1.0, 6));
    assert!(rolling_fit(&p, &cfg(60, 10, vec![0.5], 0.2)).is_err());
    assert!(rolling_fit(&p, &cfg(10, 10, vec![0.5], 0.2)).is_err());
    assert!(rolling_fit(&p, &cfg(20, 5, vec![1.5], 0.2)).is_err());
}

#[test]
fn csv_outputs_round_trip() {
    let x = noise(90, 1.0, 7);
    let y: Vec<f64> = x.iter().zip(noise(90, 0.5, 8)).map(|(a, e)| 1.0 / 3.0 + a + e).collect();
    let p = pair(x, y);
    let mut c = cfg(40, 20, vec![0.3], 0.2);
    c.methods = vec![Method::Bsqr(Kernel::Epanechnikov), Method::Ald, Method::StdQr];
    let out = rolling_fit(&p, &c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("windows.csv");
    write_rows(&path, &out.records).unwrap();
    let back: Vec<WindowRecord> = read_rows(&path).unwrap();
    assert_eq!(back, out.records);

    let data = p.dataset(0..60, 1.0).unwrap();
    let fit = bsqr::fit_bsqr(
        &data,
        &bsqr::FitConfig::new(0.3, Kernel::Gaussian, bsqr::BandwidthPolicy::Fixed(0.3), c.settings),
    )
    .unwrap();
    let t = DrawTable::from_chains(&fit.chains);
    let path = dir.path().join("draws.csv");
    t.write(&path).unwrap();
    let back = DrawTable::read(&path).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.values[7][0].to_bits(), fit.chains[0].beta_draws[(7, 0)].to_bits());
}

fn snapshot() -> AlignedPair {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    align_series(&load_prices(&dir.join("jpm.csv")).unwrap(), &load_prices(&dir.join("gspc.csv")).unwrap()).unwrap()
}

#[test]
fn sweep_with_equal_bandwidths_is_identical() {
    let p = snapshot();
    let mut c = cfg(252, 21, vec![0.05], 0.004);
    c.settings.n_iters = 400;
    c.settings.n_warmup = 200;
    let end = NaiveDate::from_ymd_opt(2019, 6, 28).unwrap();
    let out = sensitivity_sweep(&p, end, Kernel::Uniform, &[1.0, 1.0], &c).unwrap();
    let strip = |r: &SweepRecord| SweepRecord { multiplier: 0.0, ..r.clone() };
    assert_eq!(strip(&out.records[0]), strip(&out.records[1]));
    assert_eq!(out.end_date, "2019-06-28");
    assert!(sensitivity_sweep(&p, NaiveDate::from_ymd_opt(2017, 3, 1).unwrap(), Kernel::Uniform, &[1.0], &c).is_err());
}

#[test]
fn crisis_window_tail_betas_exceed_one_at_every_bandwidth() {
    let p = snapshot();
    let mut c = cfg(252, 21, vec![0.05], 1.0);
    c.h_policy = HPolicy::CvPerWindow;
    c.settings.n_iters = 1000;
    c.settings.n_warmup = 500;
    let end = NaiveDate::from_ymd_opt(2020, 6, 30).unwrap();
    let out = sensitivity_sweep(&p, end, Kernel::Uniform, &[0.5, 1.0, 2.0], &c).unwrap();
    for r in &out.records {
        eprintln!("h x{}: beta {:.4} [{:.4}, {:.4}] P(beta>1) {:.3}", r.multiplier, r.beta, r.beta_lo, r.beta_hi, r.prob_beta_gt_one);
        assert!(r.beta_lo > 1.0, "{r:?}");
    }
    let betas: Vec<f64> = out.records.iter().map(|r| r.beta).collect();
    eprintln!("posterior mean deltas across h: {:?}", betas.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>());
}
