use bsqr::bandwidth::{cv_select, fold_partition, pilot_bandwidth, silverman_base, BandwidthGrid};
use bsqr::experiments::{gen_design, gen_errors};
use bsqr::normal::inv_cdf;
use bsqr::rng::stream_rng;
use bsqr::{Dataset, ErrorKind, Kernel, Scenario};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn dense_draw(n: usize, seed: u64) -> Dataset {
    let sc = Scenario::dense(n, 10, ErrorKind::Normal, 0.5);
    let mut rng = stream_rng(seed, 0);
    let x = gen_design(n, sc.d(), sc.rho, &mut rng).unwrap();
    let e = gen_errors(ErrorKind::Normal, n, None, &mut rng).unwrap();
    Dataset::new(&x * sc.beta_full() + DVector::from_vec(e), x).unwrap()
}

#[test]
fn silverman_on_standard_normal_residuals() {
    let mut rng = stream_rng(3, 0);
    let r: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
    let h = silverman_base(&r).unwrap();
    assert!((h - 0.3112).abs() < 0.1 * 0.3112, "{h}");
    let scaled: Vec<f64> = r.iter().map(|v| 3.5 * v).collect();
    assert!((silverman_base(&scaled).unwrap() - 3.5 * h).abs() < 1e-12);
}

#[test]
fn silverman_shrinks_with_sample_size() {
    // exact normal scores so the spread is essentially fixed
    let scores = |n: usize| (1..=n).map(|i| inv_cdf((i as f64 - 0.5) / n as f64)).collect::<Vec<_>>();
    let hs: Vec<f64> = [50, 100, 400, 1600, 6400].iter().map(|&n| silverman_base(&scores(n)).unwrap()).collect();
    assert!(hs.windows(2).all(|w| w[1] < w[0]), "{hs:?}");
}

#[test]
fn cv_single_and_duplicate_candidates() {
    let data = dense_draw(150, 1);
    let h0 = pilot_bandwidth(&data).unwrap();
    let one = BandwidthGrid::new(h0, vec![1.0], 5).unwrap();
    assert_eq!(cv_select(&data, 0.5, Kernel::Uniform, &one, 3).unwrap().h_star, h0);

    let dup = BandwidthGrid::new(h0, vec![1.5, 1.5, 1.5], 5).unwrap();
    let r = cv_select(&data, 0.5, Kernel::Uniform, &dup, 3).unwrap();
    assert_eq!(r.h_star, 1.5 * h0);
    assert!(r.losses.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn cv_reports_its_own_minimum_deterministically() {
    let data = dense_draw(200, 2);
    let grid = BandwidthGrid::with_defaults(pilot_bandwidth(&data).unwrap()).unwrap();
    let a = cv_select(&data, 0.25, Kernel::Triangular, &grid, 11).unwrap();
    let b = cv_select(&data, 0.25, Kernel::Triangular, &grid, 11).unwrap();
    assert_eq!(a.h_star, b.h_star);
    assert_eq!(a.losses, b.losses);
    assert!(a.losses.iter().all(|&l| l >= 0.0));
    let min = a.losses.iter().copied().fold(f64::INFINITY, f64::min);
    let at = a.candidates.iter().position(|&h| h == a.h_star).unwrap();
    assert_eq!(a.losses[at], min);
    let m = a.h_star / grid.base_h;
    assert!(BandwidthGrid::DEFAULT_MULTIPLIERS.iter().any(|&g| (g - m).abs() < 1e-12));
    eprintln!("cv multipliers {:?} losses {:?}", a.multipliers, a.losses);
}

#[test]
fn cv_rejects_too_many_folds() {
    let data = dense_draw(12, 4);
    let grid = BandwidthGrid::new(0.3, vec![1.0], 13).unwrap();
    assert!(cv_select(&data, 0.5, Kernel::Uniform, &grid, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_indices(n in 2usize..500, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = fold_partition(n, k, seed);
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0u8; n];
        for f in &folds {
            for &i in f {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}
