//! Randomized invariance checks. Each property encodes something the
//! statistic must satisfy for *every* dataset, not just the benchmark ones:
//! invariance to common rescaling of the responses, to observation order,
//! and to response sign flips under the equality transform; non-negativity
//! of the one-sided functionals; and linearity of the drift integrals.

use ineqtest::data::{Dataset, DomainBox};
use ineqtest::lambda::Mode;
use ineqtest::power::{eta, Field, PowerQuery, Rate};
use ineqtest::statistic::{run_test, Bandwidth, TestConfig};
use ineqtest::Error;
use proptest::prelude::*;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    let scale = a.abs().max(b.abs()).max(1e-9);
    (a - b).abs() <= tol * scale
}

/// A dataset strategy: n points with x on [0, 1] and bounded responses.
/// Responses are bumped away from the all-zero corner so the variance
/// estimate cannot degenerate.
fn dataset_strategy(n: usize) -> impl Strategy<Value = Dataset> {
    (
        proptest::collection::vec(0.0..1.0f64, n),
        proptest::collection::vec(-2.0..2.0f64, n),
    )
        .prop_map(move |(x, mut y)| {
            for (i, v) in y.iter_mut().enumerate() {
                *v += if i % 2 == 0 { 0.6 } else { -0.6 };
            }
            Dataset::new(x, 1, y, 1).expect("generated dataset")
        })
}

fn cfg(p: f64, mode: Mode) -> TestConfig {
    let mut cfg = TestConfig::baseline(DomainBox::segment(0.2, 0.8).unwrap());
    cfg.p = p;
    cfg.mode = mode;
    cfg.bandwidth = Bandwidth::Absolute(0.15);
    cfg.grid = Some(vec![64]);
    cfg
}

fn p_mode() -> impl Strategy<Value = (f64, Mode)> {
    (
        prop_oneof![Just(1.0f64), Just(2.0f64)],
        prop_oneof![Just(Mode::OneSided), Just(Mode::TwoSided)],
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Multiplying every response by a common positive constant rescales
    /// the numerator and the standard error identically, so the statistic,
    /// p-value, and decision are unchanged.
    #[test]
    fn statistic_is_scale_invariant(
        data in dataset_strategy(60),
        (p, mode) in p_mode(),
        c in 0.2..5.0f64,
    ) {
        let cfg = cfg(p, mode);
        let base = run_test(&data, &cfg).unwrap();
        let scaled_y: Vec<f64> = (0..data.n()).map(|i| c * data.y_value(i, 0)).collect();
        let scaled = Dataset::new(data.x_raw().to_vec(), 1, scaled_y, 1).unwrap();
        let report = run_test(&scaled, &cfg).unwrap();
        prop_assert!(
            rel_close(report.t_stat, base.t_stat, 1e-9),
            "T changed under rescaling: {} vs {}", report.t_stat, base.t_stat
        );
        prop_assert_eq!(report.reject, base.reject);
    }

    /// The statistic is a function of the empirical distribution, so the
    /// order observations arrive in cannot matter (up to floating-point
    /// reassociation of the kernel sums).
    #[test]
    fn statistic_ignores_observation_order(
        data in dataset_strategy(50),
        (p, mode) in p_mode(),
        seed in 0..u64::MAX,
    ) {
        let cfg = cfg(p, mode);
        let base = run_test(&data, &cfg).unwrap();

        // Fisher-Yates with a splitmix-style counter keeps this test
        // self-contained and deterministic per generated seed.
        let n = data.n();
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (state >> 33) as usize % (i + 1);
            order.swap(i, j);
        }
        let x: Vec<f64> = order.iter().map(|&i| data.x_value(i, 0)).collect();
        let y: Vec<f64> = order.iter().map(|&i| data.y_value(i, 0)).collect();
        let shuffled = Dataset::new(x, 1, y, 1).unwrap();
        let report = run_test(&shuffled, &cfg).unwrap();
        prop_assert!(
            rel_close(report.t_stat, base.t_stat, 1e-10),
            "T changed under permutation: {} vs {}", report.t_stat, base.t_stat
        );
    }

    /// The equality transform |v|^p is even, and the variance pieces only
    /// see squared responses, so flipping every response sign leaves the
    /// equality-mode statistic unchanged.
    #[test]
    fn equality_statistic_is_sign_flip_invariant(
        data in dataset_strategy(60),
        p in prop_oneof![Just(1.0f64), Just(2.0f64)],
    ) {
        let cfg = cfg(p, Mode::TwoSided);
        let base = run_test(&data, &cfg).unwrap();
        let flipped_y: Vec<f64> = (0..data.n()).map(|i| -data.y_value(i, 0)).collect();
        let flipped = Dataset::new(data.x_raw().to_vec(), 1, flipped_y, 1).unwrap();
        let report = run_test(&flipped, &cfg).unwrap();
        prop_assert!(
            rel_close(report.t_stat, base.t_stat, 1e-10),
            "T changed under sign flip: {} vs {}", report.t_stat, base.t_stat
        );
    }

    /// The penalty transform is non-negative, so the integrated functional
    /// and the centering term are too, and the p-value is a probability.
    #[test]
    fn functionals_are_nonnegative_and_pvalue_is_a_probability(
        data in dataset_strategy(60),
        (p, mode) in p_mode(),
    ) {
        let report = run_test(&data, &cfg(p, mode)).unwrap();
        for &g in &report.gamma {
            prop_assert!(g >= 0.0, "gamma = {g}");
        }
        for &a in &report.a_hat {
            prop_assert!(a >= 0.0, "a_hat = {a}");
        }
        prop_assert!(report.sigma_hat_sq > 0.0);
        prop_assert!((0.0..=1.0).contains(&report.p_value), "p = {}", report.p_value);
        prop_assert!(report.t_stat.is_finite());
    }

    /// CSV round trip: writing a dataset out and ingesting it back yields
    /// the same values, regardless of column order in the header.
    #[test]
    fn csv_round_trips_with_shuffled_columns(
        data in dataset_strategy(40),
        swap in any::<bool>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.csv");
        let mut text = String::new();
        if swap {
            text.push_str("y1,x1\n");
        } else {
            text.push_str("x1,y1\n");
        }
        for i in 0..data.n() {
            let (x, y) = (data.x_value(i, 0), data.y_value(i, 0));
            if swap {
                text.push_str(&format!("{y},{x}\n"));
            } else {
                text.push_str(&format!("{x},{y}\n"));
            }
        }
        std::fs::write(&path, text).unwrap();
        let ingest = ineqtest::data::ingest_csv(&path).unwrap();
        prop_assert!(ingest.skipped_lines.is_empty());
        prop_assert_eq!(ingest.dataset.n(), data.n());
        for i in 0..data.n() {
            prop_assert_eq!(ingest.dataset.x_value(i, 0), data.x_value(i, 0));
            prop_assert_eq!(ingest.dataset.y_value(i, 0), data.y_value(i, 0));
        }
    }

    /// The drift integrals are linear in the weight field and polynomial
    /// in the direction: scaling delta by c scales the s-th integral by
    /// c^s, and scaling w by c scales every integral by c.
    #[test]
    fn eta_integrals_scale_polynomially(
        c in 0.25..4.0f64,
        s in 1u32..=2,
        z in -1i32..=1,
    ) {
        let domain = DomainBox::segment(0.1, 0.9).unwrap();
        let query = |dc: f64, wc: f64| PowerQuery {
            delta: vec![Field::func(move |x: &[f64]| dc * (1.0 + x[0]))],
            rho: vec![Field::func(|x: &[f64]| 1.0 + 0.5 * x[0])],
            weights: vec![Field::constant(wc)],
            sigma: 1.0,
            alpha: 0.05,
            p: 1.0,
            rate: Rate::RootN,
            domain: domain.clone(),
            grid: None,
        };
        let base = eta(s, z, &query(1.0, 1.0)).unwrap();
        let delta_scaled = eta(s, z, &query(c, 1.0)).unwrap();
        let weight_scaled = eta(s, z, &query(1.0, c)).unwrap();
        let expect = c.powi(s as i32) * base;
        prop_assert!(rel_close(delta_scaled, expect, 1e-12),
            "delta scaling: {delta_scaled} vs {expect}");
        prop_assert!(rel_close(weight_scaled, c * base, 1e-12),
            "weight scaling: {weight_scaled} vs {}", c * base);
    }

    /// Domain strings round-trip through parse and display.
    #[test]
    fn domain_strings_round_trip(
        lo in -5.0..5.0f64,
        width in 0.1..10.0f64,
    ) {
        let hi = lo + width;
        let parsed = DomainBox::parse(&format!("{lo}:{hi}")).unwrap();
        prop_assert_eq!(parsed.lo()[0], lo);
        prop_assert_eq!(parsed.hi()[0], hi);
        let reparsed = DomainBox::parse(&parsed.to_string()).unwrap();
        prop_assert_eq!(&reparsed, &parsed);
    }

    /// Nonsense configurations fail loudly rather than producing numbers:
    /// a test level outside (0, 1) is always an invalid-config error.
    #[test]
    fn bad_alpha_is_always_rejected(
        alpha in prop_oneof![-1.0..=0.0f64, 1.0..3.0f64],
        data in dataset_strategy(40),
    ) {
        let mut bad = cfg(1.0, Mode::OneSided);
        bad.alpha = alpha;
        match run_test(&data, &bad) {
            Err(Error::InvalidConfig(_)) => {}
            other => prop_assert!(false, "expected InvalidConfig, got {other:?}"),
        }
    }
}
