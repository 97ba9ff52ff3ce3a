use bsqr::diagnostics::{credible_interval, ess, split_rhat};
use bsqr::rng::stream_rng;
use rand::Rng;
use rand_distr::StandardNormal;

fn iid(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
    (0..n)
        .map(|_| {
            x = phi * x + rng.sample::<f64, _>(StandardNormal);
            x
        })
        .collect()
}

#[test]
fn iid_ess_near_draw_count() {
    for seed in 0..5 {
        let e = ess(&[iid(4000, seed)]).unwrap();
        assert!((3200.0..=4800.0).contains(&e), "seed {seed}: {e}");
    }
    let e = ess(&[iid(2000, 10), iid(2000, 11)]).unwrap();
    assert!((3200.0..=4000.0).contains(&e), "{e}");
}

#[test]
fn ar1_ess_matches_analytic_value() {
    let n = 20_000;
    let expect = n as f64 * 0.1 / 1.9;
    for seed in 0..3 {
        let e = ess(&[ar1(n, 0.9, seed)]).unwrap();
        assert!(((e - expect) / expect).abs() < 0.3, "seed {seed}: {e} vs {expect}");
    }
}

#[test]
fn ess_is_capped_and_shrinks_under_thinning() {
    let alt: Vec<f64> = (0..500).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    assert_eq!(ess(&[alt]).unwrap(), 500.0);

    let x = ar1(20_000, 0.5, 3);
    let full = ess(&[x.clone()]).unwrap();
    let thinned: Vec<f64> = x.iter().step_by(4).copied().collect();
    let t = ess(&[thinned]).unwrap();
    assert!(t <= 1.1 * full, "{t} vs {full}");
    assert!(full <= 20_000.0);
}

#[test]
fn rhat_of_identical_distributions_is_one() {
    let r = split_rhat(&[iid(50_000, 1), iid(50_000, 2)]).unwrap();
    assert!((0.99..=1.01).contains(&r), "{r}");
    let r = split_rhat(&[iid(50_000, 3), iid(50_000, 4), iid(50_000, 5), iid(50_000, 6)]).unwrap();
    assert!((r - 1.0).abs() < 0.01, "{r}");
}

#[test]
fn rhat_flags_separated_chains() {
    let a = iid(1000, 7);
    let b: Vec<f64> = iid(1000, 8).iter().map(|v| v + 10.0).collect();
    assert!(split_rhat(&[a.clone(), b]).unwrap() > 1.2);
    // a drifting chain is caught by the split even with a single pair
    let drift: Vec<f64> = (0..1000).map(|i| i as f64 / 100.0 + a[i]).collect();
    assert!(split_rhat(&[drift, a]).unwrap() > 1.2);
}

#[test]
fn conjugate_gaussian_intervals_are_calibrated() {
    // μ ~ N(0, 1), y_i | μ ~ N(μ, 1), i = 1..5; posterior N(Σy/6, 1/6)
    let mut rng = stream_rng(2024, 0);
    let trials = 1000;
    let mut covered = 0;
    for _ in 0..trials {
        let mu: f64 = rng.sample(StandardNormal);
        let sum: f64 = (0..5).map(|_| mu + rng.sample::<f64, _>(StandardNormal)).sum();
        let (m, s) = (sum / 6.0, (1.0f64 / 6.0).sqrt());
        let draws: Vec<f64> = (0..2000).map(|_| m + s * rng.sample::<f64, _>(StandardNormal)).collect();
        let (lo, hi) = credible_interval(&draws, 0.95).unwrap();
        covered += (lo <= mu && mu <= hi) as usize;
    }
    let rate = covered as f64 / trials as f64;
    assert!((0.93..=0.97).contains(&rate), "{rate}");
}

#[test]
fn symmetric_draws_give_symmetric_interval() {
    let x = iid(100_000, 9);
    let (lo, hi) = credible_interval(&x, 0.95).unwrap();
    assert!((lo + hi).abs() < 0.05);
    assert!(lo <= hi);
}
