//! Randomized invariant checks over the public API: correlation structure,
//! design generators, model identities, metrics, and archive round-trips.

use cgp_core::bench::{coverage, interval_score, rmspe};
use cgp_core::cgp::{CgpParams, FittedCgp};
use cgp_core::design::{maximin_lhd, random_lhd, Design};
use cgp_core::estimate::{fit_cgp, FitOptions};
use cgp_core::kernels::{corr_matrix, corr_vector, design_stats, JitterPolicy};
use cgp_core::kriging::fit_ok;
use cgp_core::persistence::{load_model, save_model, AnyModel};
use cgp_core::{Dataset, StandardizationMap};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Columns of an LHD, multiplied by `n` and floored, must each be a
/// permutation of `{0, .., n-1}`.
fn assert_lhd(design: &Design) {
    let n = design.n();
    for j in 0..design.p() {
        let mut cells: Vec<usize> = (0..n)
            .map(|i| (design.points()[(i, j)] * n as f64).floor() as usize)
            .collect();
        cells.sort_unstable();
        let expected: Vec<usize> = (0..n).collect();
        assert_eq!(cells, expected, "column {j} is not stratified");
    }
}

fn min_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..x.nrows() {
        for k in (i + 1)..x.nrows() {
            let d: f64 = (0..x.ncols())
                .map(|j| (x[(i, j)] - x[(k, j)]).powi(2))
                .sum();
            best = best.min(d.sqrt());
        }
    }
    best
}

/// A dataset on a random LHD with a guaranteed minimum point separation, so
/// correlation matrices stay honestly positive definite.
fn lhd_dataset(n: usize, p: usize, seed: u64, y: &[f64]) -> Option<Dataset> {
    let design = random_lhd(n, p, seed).unwrap();
    if min_pairwise_distance(design.points()) < 0.05 {
        return None;
    }
    let y = DVector::from_row_slice(&y[..n]);
    Some(Dataset::new(design.points().clone(), y).unwrap())
}

/// Feasible composite parameters: `theta_j <= alpha_lower` and
/// `alpha_j = theta_j + kappa >= alpha_lower`.
fn feasible_params(
    alpha_lower: f64,
    lambda: f64,
    theta_frac: &[f64],
    kappa_slack: f64,
    b: f64,
) -> CgpParams {
    let theta: Vec<f64> = theta_frac
        .iter()
        .map(|t| (t * alpha_lower).max(1e-4))
        .collect();
    let min_theta = theta.iter().cloned().fold(f64::INFINITY, f64::min);
    let kappa = (alpha_lower - min_theta).max(0.0) + kappa_slack * alpha_lower;
    CgpParams::with_kappa(lambda, theta, kappa, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn correlation_matrix_is_symmetric_with_unit_diagonal(
        n in 2usize..9,
        p in 1usize..4,
        seed in any::<u64>(),
        scale in 0.1f64..200.0,
    ) {
        let design = random_lhd(n, p, seed).unwrap();
        let scales = vec![scale; p];
        let r = corr_matrix(design.points(), &scales).unwrap();
        let m = r.as_matrix();
        for i in 0..n {
            prop_assert_eq!(m[(i, i)], 1.0);
            for j in 0..n {
                prop_assert_eq!(m[(i, j)], m[(j, i)]);
                prop_assert!((0.0..=1.0).contains(&m[(i, j)]));
            }
        }
    }

    #[test]
    fn correlation_matrix_has_no_eigenvalue_below_rounding(
        n in 2usize..9,
        p in 1usize..4,
        seed in any::<u64>(),
        scale in 0.1f64..200.0,
    ) {
        let design = random_lhd(n, p, seed).unwrap();
        let scales = vec![scale; p];
        let r = corr_matrix(design.points(), &scales).unwrap();
        let eigs = r.as_matrix().clone().symmetric_eigenvalues();
        let floor = -(n as f64) * f64::EPSILON * n as f64;
        for e in eigs.iter() {
            prop_assert!(*e >= floor, "eigenvalue {e} below {floor}");
        }
    }

    #[test]
    fn correlation_vector_peaks_exactly_at_the_matching_design_point(
        n in 2usize..9,
        p in 1usize..4,
        seed in any::<u64>(),
        scale in 0.1f64..200.0,
        pick in any::<prop::sample::Index>(),
    ) {
        let design = random_lhd(n, p, seed).unwrap();
        prop_assume!(min_pairwise_distance(design.points()) > 1e-6);
        let scales = vec![scale; p];
        let i = pick.index(n);
        let query: Vec<f64> = (0..p).map(|j| design.points()[(i, j)]).collect();
        let r = corr_vector(design.points(), &query, &scales).unwrap();
        for k in 0..n {
            if k == i {
                prop_assert_eq!(r.as_vector()[k], 1.0);
            } else {
                prop_assert!(r.as_vector()[k] < 1.0);
            }
        }
    }

    #[test]
    fn design_stats_ignore_row_order(
        n in 3usize..10,
        p in 1usize..4,
        seed in any::<u64>(),
        swap_a in any::<prop::sample::Index>(),
        swap_b in any::<prop::sample::Index>(),
    ) {
        let design = random_lhd(n, p, seed).unwrap();
        let base = design_stats(design.points()).unwrap();
        let mut shuffled = design.points().clone();
        shuffled.swap_rows(swap_a.index(n), swap_b.index(n));
        let moved = design_stats(&shuffled).unwrap();
        prop_assert!((base.d_avg - moved.d_avg).abs() <= 1e-10 * base.d_avg);
        prop_assert!(
            (base.alpha_lower - moved.alpha_lower).abs() <= 1e-10 * base.alpha_lower
        );
    }

    #[test]
    fn lhd_columns_stay_stratified(
        n in 2usize..40,
        p in 1usize..5,
        seed in any::<u64>(),
    ) {
        assert_lhd(&random_lhd(n, p, seed).unwrap());
        assert_lhd(&maximin_lhd(n, p, seed, 50).unwrap());
    }

    #[test]
    fn maximin_search_never_loses_separation(
        n in 4usize..20,
        p in 1usize..4,
        seed in any::<u64>(),
    ) {
        let plain = random_lhd(n, p, seed).unwrap();
        let improved = maximin_lhd(n, p, seed, 200).unwrap();
        let before = min_pairwise_distance(plain.points());
        let after = min_pairwise_distance(improved.points());
        prop_assert!(after >= before - 1e-12, "separation {after} < {before}");
    }

    #[test]
    fn rmspe_is_a_norm_on_differences(
        a in prop::collection::vec(-100.0f64..100.0, 1..30),
        shift in -10.0f64..10.0,
    ) {
        let b: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let c: Vec<f64> = a.iter().map(|v| v * 0.5).collect();
        let ab = rmspe(&a, &b).unwrap();
        let bc = rmspe(&b, &c).unwrap();
        let ac = rmspe(&a, &c).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - shift.abs()).abs() <= 1e-9);
        prop_assert!(ac <= ab + bc + 1e-9, "triangle bound violated");
    }

    #[test]
    fn interval_score_is_nonnegative_and_rewards_coverage(
        lower in -10.0f64..10.0,
        width in 0.0f64..10.0,
        value in -20.0f64..20.0,
        alpha in 0.01f64..0.5,
    ) {
        let upper = lower + width;
        let exact_width = upper - lower;
        let score = interval_score(lower, upper, value, alpha).unwrap();
        prop_assert!(score >= exact_width);
        if value >= lower && value <= upper {
            prop_assert_eq!(score, exact_width);
        } else {
            prop_assert!(score > exact_width);
        }
    }

    #[test]
    fn coverage_stays_in_the_unit_interval(
        values in prop::collection::vec(-5.0f64..5.0, 1..40),
        half_width in 0.0f64..2.0,
    ) {
        let lowers: Vec<f64> = values.iter().map(|v| v.round() - half_width).collect();
        let uppers: Vec<f64> = values.iter().map(|v| v.round() + half_width).collect();
        let c = coverage(&lowers, &uppers, &values).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The two-step form (global fit, then residual interpolation) must give
    /// the same mean as the single-stage predictor.
    #[test]
    fn sequential_and_single_stage_means_agree(
        n in 4usize..12,
        p in 1usize..4,
        seed in any::<u64>(),
        y_raw in prop::collection::vec(-5.0f64..5.0, 12),
        lambda in 0.0f64..1.0,
        theta_frac in prop::collection::vec(0.01f64..1.0, 3),
        kappa_slack in 0.0f64..5.0,
        b in 0.0f64..1.0,
        query_seed in any::<u64>(),
    ) {
        let data = match lhd_dataset(n, p, seed, &y_raw) {
            Some(d) => d,
            None => return Ok(()),
        };
        let range = y_raw[..n].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - y_raw[..n].iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(range > 1e-9);
        let stats = design_stats(data.x()).unwrap();
        let params = feasible_params(stats.alpha_lower, lambda, &theta_frac[..p], kappa_slack, b);
        let model = FittedCgp::with_params(data, params, JitterPolicy::Ladder).unwrap();
        let queries = random_lhd(16, p, query_seed).unwrap();
        let single = model.predict(queries.points()).unwrap();
        let sequential = model.predict_sequential(queries.points()).unwrap();
        for (s, q) in single.iter().zip(&sequential) {
            prop_assert!(
                (s.mean - q).abs() <= 1e-8 * range,
                "means differ: {} vs {}", s.mean, q
            );
        }
    }

    /// With the bandwidth power at zero the volatility surface is flat.
    #[test]
    fn zero_bandwidth_forces_unit_volatility(
        n in 4usize..10,
        p in 1usize..3,
        seed in any::<u64>(),
        y_raw in prop::collection::vec(-5.0f64..5.0, 10),
        lambda in 0.0f64..1.0,
        theta_frac in prop::collection::vec(0.01f64..1.0, 2),
        kappa_slack in 0.0f64..5.0,
        query_seed in any::<u64>(),
    ) {
        let data = match lhd_dataset(n, p, seed, &y_raw) {
            Some(d) => d,
            None => return Ok(()),
        };
        let stats = design_stats(data.x()).unwrap();
        let params = feasible_params(stats.alpha_lower, lambda, &theta_frac[..p], kappa_slack, 0.0);
        let model = FittedCgp::with_params(data, params, JitterPolicy::Ladder).unwrap();
        let queries = random_lhd(8, p, query_seed).unwrap();
        for pred in model.predict(queries.points()).unwrap() {
            prop_assert!((pred.v_at_query - 1.0).abs() <= 1e-10);
        }
    }

    /// Deterministic composite models reproduce their training responses.
    #[test]
    fn composite_model_interpolates_training_data(
        n in 4usize..10,
        p in 1usize..3,
        seed in any::<u64>(),
        y_raw in prop::collection::vec(-5.0f64..5.0, 10),
        lambda in 0.0f64..1.0,
        theta_frac in prop::collection::vec(0.01f64..1.0, 2),
        kappa_slack in 0.0f64..5.0,
        b in 0.0f64..1.0,
    ) {
        let data = match lhd_dataset(n, p, seed, &y_raw) {
            Some(d) => d,
            None => return Ok(()),
        };
        let range = y_raw[..n].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - y_raw[..n].iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(range > 1e-6);
        let stats = design_stats(data.x()).unwrap();
        let params = feasible_params(stats.alpha_lower, lambda, &theta_frac[..p], kappa_slack, b);
        let model =
            FittedCgp::with_params(data.clone(), params, JitterPolicy::Ladder).unwrap();
        let preds = model.predict(data.x()).unwrap();
        for (pred, y) in preds.iter().zip(data.y().iter()) {
            prop_assert!(
                (pred.mean - y).abs() <= 1e-6 * range,
                "prediction {} for response {}", pred.mean, y
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Save then load reproduces predictions bit for bit.
    #[test]
    fn archive_round_trip_preserves_predictions_exactly(
        n in 5usize..9,
        p in 1usize..3,
        seed in any::<u64>(),
        y_raw in prop::collection::vec(-5.0f64..5.0, 9),
        lambda in 0.0f64..1.0,
        theta_frac in prop::collection::vec(0.01f64..1.0, 2),
        kappa_slack in 0.0f64..5.0,
        b in 0.0f64..1.0,
        query_seed in any::<u64>(),
    ) {
        let data = match lhd_dataset(n, p, seed, &y_raw) {
            Some(d) => d,
            None => return Ok(()),
        };
        let stats = design_stats(data.x()).unwrap();
        let params = feasible_params(stats.alpha_lower, lambda, &theta_frac[..p], kappa_slack, b);
        let model =
            FittedCgp::with_params(data.clone(), params, JitterPolicy::Ladder).unwrap();
        let queries = random_lhd(16, p, query_seed).unwrap();
        let before = model.predict(queries.points()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let archived = AnyModel::from(model);
        let map = StandardizationMap::identity(p);
        save_model(&archived, &map, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        let after = loaded.model.predict(queries.points()).unwrap();

        for (a, b) in before.iter().zip(&after) {
            prop_assert_eq!(a.mean, b.mean);
            prop_assert_eq!(a.sd, b.sd);
            prop_assert_eq!(a.global, b.global);
            prop_assert_eq!(a.local, b.local);
            prop_assert_eq!(a.v_at_query, b.v_at_query);
        }
    }

    /// Adding a constant to the responses shifts predictions by exactly that
    /// constant and leaves the fitted roughness alone.
    #[test]
    fn fits_are_shift_equivariant(
        n in 5usize..8,
        seed in any::<u64>(),
        y_raw in prop::collection::vec(-2.0f64..2.0, 8),
        shift in -50.0f64..50.0,
        query_seed in any::<u64>(),
    ) {
        let data = match lhd_dataset(n, 1, seed, &y_raw) {
            Some(d) => d,
            None => return Ok(()),
        };
        let range = y_raw[..n].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - y_raw[..n].iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(range > 1e-3);
        let shifted = Dataset::new(
            data.x().clone(),
            DVector::from_iterator(n, data.y().iter().map(|v| v + shift)),
        )
        .unwrap();
        let opts = FitOptions {
            restarts: Some(3),
            max_evals_per_restart: Some(60),
            seed: 7,
            ..FitOptions::default()
        };
        let (base, _) = fit_ok(&data, None, &opts).unwrap();
        let (moved, _) = fit_ok(&shifted, None, &opts).unwrap();
        for (a, b) in base.theta().iter().zip(moved.theta()) {
            prop_assert!((a - b).abs() <= 1e-6 * a.abs(), "roughness moved: {a} vs {b}");
        }
        let queries = random_lhd(8, 1, query_seed).unwrap();
        let before = base.predict(queries.points()).unwrap();
        let after = moved.predict(queries.points()).unwrap();
        for (a, b) in before.iter().zip(&after) {
            prop_assert!(
                (b.mean - a.mean - shift).abs() <= 1e-8 * (1.0 + shift.abs()),
                "shift not preserved: {} vs {}", a.mean, b.mean
            );
        }
    }

    /// The composite fit never reports a worse objective than a stationary
    /// fit of the same data.
    #[test]
    fn composite_objective_nests_the_stationary_one(
        n in 5usize..8,
        seed in any::<u64>(),
        y_raw in prop::collection::vec(-2.0f64..2.0, 8),
    ) {
        let data = match lhd_dataset(n, 1, seed, &y_raw) {
            Some(d) => d,
            None => return Ok(()),
        };
        let range = y_raw[..n].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - y_raw[..n].iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(range > 1e-3);
        let opts = FitOptions {
            restarts: Some(3),
            max_evals_per_restart: Some(60),
            seed: 7,
            ..FitOptions::default()
        };
        let (_, ok_report) = fit_ok(&data, None, &opts).unwrap();
        let (_, cgp_report) = fit_cgp(&data, &opts).unwrap();
        prop_assert!(
            cgp_report.objective <= ok_report.objective + 1e-6,
            "composite {} vs stationary {}", cgp_report.objective, ok_report.objective
        );
    }
}
