mod common;

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatial_lfdr::lfdr::{
    fit_bum_mle, fit_pvalue_density, lfdr_smom, lfdr_smom_spatial, FitConfig,
};
use spatial_lfdr::smom::{estimate_with_intermediates, PVectorSet};
use spatial_lfdr::stats::{mixture_cdf, mixture_pdf, BetaMixtureModel};
use spatial_lfdr::Error;

fn uniform(n: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| r.random::<f64>()).collect()
}

/// BUM draws by inversion: with probability w uniform, else U^(1/a).
fn bum_sample(w: f64, a: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = r.random();
            if r.random::<f64>() < w {
                u
            } else {
                u.powf(1.0 / a)
            }
        })
        .collect()
}

/// Midpoint-rule grid on (0, 1).
fn midpoints(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| (i as f64 + 0.5) / n as f64)
}

#[test]
fn uniform_data_fits_uniform_density() {
    let p = uniform(10_000, 1);
    let (m, info) = fit_pvalue_density(&p, &FitConfig::default()).unwrap();
    let ks = midpoints(10_000)
        .map(|x| (mixture_cdf(&m, x) - x).abs())
        .fold(0.0, f64::max);
    let min_f = midpoints(10_000)
        .map(|x| mixture_pdf(&m, x))
        .fold(f64::INFINITY, f64::min);
    assert!(
        ks <= 0.02,
        "KS to uniform {ks} (d = {}, K = {})",
        info.chosen_d,
        info.chosen_k
    );
    assert!(min_f >= 0.9, "min density {min_f}");
}

#[test]
fn bum_data_fits_within_w1() {
    let truth = BetaMixtureModel::bum(0.8, 0.2).unwrap();
    let p = bum_sample(0.8, 0.2, 10_000, 2);
    let (m, _) = fit_pvalue_density(&p, &FitConfig::default()).unwrap();
    // W1 between two distributions on [0, 1] is the L1 distance of their CDFs
    let n = 20_000;
    let w1: f64 = midpoints(n)
        .map(|x| (mixture_cdf(&m, x) - mixture_cdf(&truth, x)).abs())
        .sum::<f64>()
        / n as f64;
    assert!(w1 <= 0.01, "W1 {w1}");
}

#[test]
fn fit_is_deterministic_under_seed() {
    let p = bum_sample(0.7, 0.3, 3000, 3);
    let cfg = FitConfig::default().with_seed(42);
    let a = fit_pvalue_density(&p, &cfg).unwrap();
    let b = fit_pvalue_density(&p, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!((a.1.chosen_d, a.1.chosen_k), (b.1.chosen_d, b.1.chosen_k));
}

#[test]
fn pure_null_lfdrs_stay_high() {
    let p = uniform(5000, 4);
    let r = lfdr_smom(&p, &FitConfig::default()).unwrap();
    let high = r.lfdrs.iter().filter(|&&l| l >= 0.8).count();
    assert!(
        high as f64 >= 0.99 * p.len() as f64,
        "{high} of {} lfdr's >= 0.8",
        p.len()
    );
    assert!(r.lfdrs.iter().all(|l| (0.0..=1.0).contains(l)));
}

#[test]
fn spatial_variant_returns_lfdrs_in_input_order() {
    let p = bum_sample(0.7, 0.2, 900, 5);
    let coords: Vec<[f64; 2]> = (0..900)
        .map(|i| [(i % 30) as f64, (i / 30) as f64])
        .collect();
    let r = lfdr_smom_spatial(&p, &coords, &FitConfig::default()).unwrap();
    // lfdr is a function of p under one fitted model, so order must follow p
    for (i, j) in [(0usize, 1usize), (10, 500), (899, 3)] {
        let expect = (r.pi0_hat / mixture_pdf(&r.model, p[i])).min(1.0);
        assert!((r.lfdrs[i] - expect).abs() < 1e-12, "{i}");
        if p[i] < p[j] {
            assert!(r.lfdrs[i] <= r.lfdrs[j] + 1e-12);
        }
    }
    assert!(matches!(
        lfdr_smom_spatial(&p, &coords[..10], &FitConfig::default()),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn bum_mle_examples() {
    let f = fit_bum_mle(&bum_sample(0.8, 0.2, 10_000, 6)).unwrap();
    assert!(
        (f.w - 0.8).abs() <= 0.05 && (f.a - 0.2).abs() <= 0.05,
        "{f:?}"
    );
    let f = fit_bum_mle(&uniform(10_000, 7)).unwrap();
    assert!(f.w >= 0.95, "{f:?}");
    assert!(matches!(
        fit_bum_mle(&uniform(10, 8)),
        Err(Error::InsufficientData(_))
    ));
}

#[test]
fn smom_moments_are_equivariant_to_coordinate_permutation() {
    let mut r = ChaCha8Rng::seed_from_u64(10);
    let model = common::equal_variance_model(2, 6, &mut r);
    let rows: Vec<Vec<f64>> = (0..20_000).map(|_| model.sample_vector(&mut r)).collect();
    let vs = PVectorSet::from_rows(6, &rows).unwrap();
    let perm = [3, 0, 5, 1, 4, 2];
    // the half split depends only on the seed, so both runs see the same halves
    let a = estimate_with_intermediates(&vs, 2, 1, 11)
        .unwrap()
        .intermediates;
    let b = estimate_with_intermediates(&vs.permute_coordinates(&perm), 2, 1, 11)
        .unwrap()
        .intermediates;
    assert!((a.sigma2 - b.sigma2).abs() < 1e-12);
    for i in 0..6 {
        assert!((b.mean[i] - a.mean[perm[i]]).abs() < 1e-12);
        for j in 0..6 {
            assert!((b.m2[(i, j)] - a.m2[(perm[i], perm[j])]).abs() < 1e-10);
            for h in 0..6 {
                assert!((b.m3.get(i, j, h) - a.m3.get(perm[i], perm[j], perm[h])).abs() < 1e-10);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn lfdrs_monotone_for_decreasing_fits(w in 0.3f64..0.95, a in 0.05f64..0.9, seed in 0u64..1000) {
        let p = bum_sample(w, a, 400, seed);
        let (fit, r) = spatial_lfdr::lfdr::lfdr_bum(&p).unwrap();
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
        if fit.a <= 1.0 {
            for k in idx.windows(2) {
                prop_assert!(r.lfdrs[k[0]] <= r.lfdrs[k[1]] + 1e-12);
            }
        }
        prop_assert!(r.lfdrs.iter().all(|l| (0.0..=1.0).contains(l)));
        prop_assert!((r.pi0_hat - fit.pi0()).abs() < 1e-9);
    }
}
