use exciton_pimc::stats::{chi2_quantile, ljung_box_q, MatrixAccumulator, DEFAULT_LJUNG_BOX_LAGS};
use exciton_pimc::SiteMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// χ² CDF by composite Simpson quadrature of the density, written
/// independently of the library's incomplete-gamma code. The substitution
/// x = u² removes the integrable singularity at 0 for one degree of freedom.
fn chi2_cdf_quadrature(x: f64, k: usize) -> f64 {
    let half_k = k as f64 / 2.0;
    // Γ(k/2) from the recurrence on 1 and √π
    let mut gamma = if k.is_multiple_of(2) { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut a = if k.is_multiple_of(2) { 1.0 } else { 0.5 };
    while a < half_k {
        gamma *= a;
        a += 1.0;
    }
    let norm = 1.0 / (2f64.powf(half_k) * gamma);
    // density in u: f(u²)·2u = norm · u^{k-1} · 2 · e^{-u²/2}
    let g = |u: f64| norm * 2.0 * u.powi(k as i32 - 1) * (-0.5 * u * u).exp();
    let n = 20_000;
    let b = x.sqrt();
    let h = b / n as f64;
    let mut s = g(0.0) + g(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn chi2_quantile_inverts_independent_cdf() {
    for k in [1, 2, 5, 13, 30] {
        for p in [0.05, 0.5, 0.95, 0.99] {
            let x = chi2_quantile(p, k).unwrap();
            let back = chi2_cdf_quadrature(x, k);
            assert!((back - p).abs() < 1e-9, "k={k} p={p}: x={x} cdf={back}");
        }
    }
    assert!((chi2_quantile(0.95, 13).unwrap() - 22.362).abs() < 0.01);
    assert!((chi2_quantile(0.95, 1).unwrap() - 3.841).abs() < 0.005);
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn ar1(rng: &mut ChaCha8Rng, n: usize, phi: f64) -> Vec<f64> {
    let mut x = 0.0;
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            x = phi * x + e;
            x
        })
        .collect()
}

/// With 400 batch means the χ² limit of Q is accurate; at 40 the test is
/// known to run above its nominal size.
#[test]
fn ljung_box_false_rejection_rate_is_nominal() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let trials = 1000;
    let rejected = (0..trials)
        .filter(|_| ljung_box_q(&normals(&mut rng, 400), DEFAULT_LJUNG_BOX_LAGS).unwrap().reject)
        .count();
    let rate = rejected as f64 / trials as f64;
    assert!((rate - 0.05).abs() <= 0.02, "rate {rate}");
}

#[test]
fn shuffling_destroys_detected_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let trials = 1000;
    let (mut raw, mut shuffled) = (0, 0);
    for _ in 0..trials {
        let mut series = ar1(&mut rng, 40, 0.8);
        raw += ljung_box_q(&series, 13).unwrap().reject as usize;
        series.shuffle(&mut rng);
        shuffled += ljung_box_q(&series, 13).unwrap().reject as usize;
    }
    assert!(raw as f64 / trials as f64 > 0.8, "raw rejections {raw}");
    assert!(shuffled as f64 / (trials as f64) < 0.1, "shuffled rejections {shuffled}");
}

fn filled(stream: u64, values: &[f64], batch: u64) -> MatrixAccumulator {
    let mut acc = MatrixAccumulator::new(2, batch, stream);
    for &v in values {
        acc.push(&SiteMatrix::from_rows(&[[v, 0.5 * v], [0.5 * v, 1.0 - v]])).unwrap();
    }
    acc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_is_associative_and_commutative(
        a in prop::collection::vec(-1.0..1.0f64, 0..60),
        b in prop::collection::vec(-1.0..1.0f64, 0..60),
        c in prop::collection::vec(-1.0..1.0f64, 0..60),
    ) {
        let (x, y, z) = (filled(0, &a, 5), filled(1, &b, 5), filled(2, &c, 5));
        let mut left = x.clone();
        left.merge(&y).unwrap();
        left.merge(&z).unwrap();
        let mut yz = y.clone();
        yz.merge(&z).unwrap();
        let mut right = yz.clone();
        right.merge(&x).unwrap();
        prop_assert_eq!(left.batches(), right.batches());
        prop_assert_eq!(left.total_count(), right.total_count());
        prop_assert!(left.n_batches() as u64 * 5 <= left.total_count());
    }

    #[test]
    fn stderr_ignores_batch_order(values in prop::collection::vec(-1.0..1.0f64, 20..200), seed in any::<u64>()) {
        let acc = filled(0, &values, 4);
        let want = acc.batch_means_stderr().unwrap();
        // same batches, pushed in a shuffled order
        let mut means: Vec<f64> = acc.element_series(0, 0);
        means.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut again = MatrixAccumulator::new(2, 1, 0);
        for &v in &means {
            again.push(&SiteMatrix::from_rows(&[[v, 0.5 * v], [0.5 * v, 1.0 - v]])).unwrap();
        }
        let got = again.batch_means_stderr().unwrap();
        prop_assert_eq!(got.n_batches, want.n_batches);
        prop_assert!(got.mean.max_abs_diff(&want.mean) < 1e-15);
        prop_assert!(got.stderr.max_abs_diff(&want.stderr) < 1e-15);
    }
}

#[test]
fn two_and_a_half_batches() {
    let acc = filled(0, &[1.0, 2.0, 3.0, 4.0, 5.0], 2);
    assert_eq!(acc.n_batches(), 2);
    assert_eq!(acc.total_count(), 5);
    assert_eq!(acc.pending(), 1);
    assert_eq!(acc.element_series(0, 0), vec![1.5, 3.5]);
}
