//! Acceptance suite: the ten release-gate checks, each printing one
//! `ACCEPTANCE nn PASS|FAIL` line (visible under `--nocapture`, or in the
//! failure report) before asserting its clauses.
//!
//! Check 10 needs a user-supplied station CSV (`MADRID_CSV`); without it
//! the test prints SKIP and passes vacuously.

use std::f64::consts::PI;
use std::time::Instant;

use airdyn::dataset::{load_csv, select_window, CsvSchema, SpeciesId, TimeWindow};
use airdyn::embedding::{
    delay_embed, fit_orthogonal_correction, pearson, reconstruct, select_lag, DelayEmbedding,
};
use airdyn::ode::{integrate, select_feasible_model, IntegratorConfig, OdeError, QuadraticModel};
use airdyn::preprocess::{process, standardize, MakimaSpline, SmoothingFactor};
use airdyn::regression::{
    best_subset, build_library, fit_subset, lasso, lasso_lambda_max, Criterion, FeatureLibrary,
    ModelRanking, RankedFit, RegressionFit, SubsetMask,
};
use airdyn::stability::{
    classify_eigenvalues, critical_points, destandardize_model, eigenvalues_2x2, StabilityClass,
};
use airdyn::synth::{
    oracle_config, ref_5h, simulate_kinetics, synth_dataset, ActinicFlux, KineticsState,
    LeightonParams, REF_5H_COEFFS,
};
use airdyn::StationId;
use chrono::Duration;
use nalgebra::{Matrix2, Vector2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const UNIT_NORMS: [(f64, f64); 2] = [(0.0, 1.0), (0.0, 1.0)];

fn verdict(n: u32, ok: bool, detail: &str) {
    println!(
        "ACCEPTANCE {n:02} {} {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
}

/// Random regression instance: Gaussian planar states, a sparse planted
/// coefficient row, and a small additive disturbance on the target.
fn random_instance(rng: &mut ChaCha8Rng, m: usize, noise: f64) -> FeatureLibrary {
    let states: Vec<[f64; 2]> = (0..m)
        .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect();
    let mask = SubsetMask::from_bits(rng.random_range(0..32));
    let mut beta = [0.0; 6];
    beta[0] = rng.random_range(-1.0..1.0);
    for c in mask.selected_columns() {
        beta[c] = rng.random_range(-2.0..2.0);
    }
    let target: Vec<f64> = states
        .iter()
        .map(|&[y1, y2]| {
            let feats = [1.0, y1, y2, y1 * y1, y1 * y2, y2 * y2];
            let clean: f64 = feats.iter().zip(&beta).map(|(f, b)| f * b).sum();
            clean + noise * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    FeatureLibrary::from_states(&states, [&target, &target]).unwrap()
}

fn linear_model(a: [[f64; 2]; 2]) -> QuadraticModel {
    QuadraticModel::new(
        [
            [0.0, a[0][0], a[0][1], 0.0, 0.0, 0.0],
            [0.0, a[1][0], a[1][1], 0.0, 0.0, 0.0],
        ],
        UNIT_NORMS,
    )
}

// ---------------------------------------------------------------------------
// 01: planted short-window recovery
// ---------------------------------------------------------------------------

#[test]
fn acceptance_01_planted_short_window_recovery() {
    let spec = ref_5h();
    let ds = synth_dataset(&spec).unwrap();

    let start = Instant::now();
    let window = TimeWindow::new(spec.t0, spec.t0 + Duration::hours(4)).unwrap();
    let species = [SpeciesId::no2(), SpeciesId::o3()];
    let windowed = select_window(&ds, &spec.station, &species, &window).unwrap();
    let normalized = [
        standardize(&windowed[0]).unwrap(),
        standardize(&windowed[1]).unwrap(),
    ];
    let alpha = SmoothingFactor::new(0.01).unwrap();
    let processed = [
        process(&normalized[0], alpha, 100).unwrap(),
        process(&normalized[1], alpha, 100).unwrap(),
    ];
    let lib = build_library(&processed).unwrap();
    let rankings = [
        best_subset(&lib, 0, Criterion::Aic).unwrap(),
        best_subset(&lib, 1, Criterion::Aic).unwrap(),
    ];
    let norm_params = [
        (normalized[0].mu, normalized[0].sigma),
        (normalized[1].mu, normalized[1].sigma),
    ];
    let y0 = Vector2::new(processed[0].y[0], processed[1].y[0]);
    let selected = select_feasible_model(
        &rankings,
        norm_params,
        y0,
        (0.0, 4.0),
        &IntegratorConfig::default(),
    )
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    // The generating rows have one structural zero each (the y1^2 term).
    let planted_support = [true, true, false, true, true];
    let support_ok =
        (0..2).all(|i| rankings[i].fits[selected.ranks[i] - 1].fit.mask.0 == planted_support);

    let physical = destandardize_model(&selected.model).unwrap();
    let mut max_rel = 0.0_f64;
    for i in 0..2 {
        for c in 0..6 {
            let truth = REF_5H_COEFFS[i][c];
            if truth != 0.0 {
                max_rel = max_rel.max(((physical.coeffs[i][c] - truth) / truth).abs());
            }
        }
    }
    let coeff_ok = max_rel <= 0.05;
    let time_ok = elapsed <= 10.0;

    verdict(
        1,
        support_ok && coeff_ok && time_ok,
        &format!(
            "support {}, max coefficient error {max_rel:.2e} (limit 5e-2), {elapsed:.2} s",
            if support_ok { "exact" } else { "wrong" },
        ),
    );
    assert!(support_ok, "selected support differs from the planted rows");
    assert!(time_ok, "pipeline took {elapsed:.2} s (limit 10 s)");
    assert!(
        coeff_ok,
        "nonzero coefficients deviate by up to {:.0}% (limit 5%): with hourly \
         samples the spline derivative targets carry irreducible interpolation \
         bias, so support recovery succeeds but coefficient values do not",
        100.0 * max_rel
    );
}

// ---------------------------------------------------------------------------
// 02: exhaustive search equals an independent enumeration
// ---------------------------------------------------------------------------

/// Independent argmin: normal equations per mask, the same score formula,
/// and the tie order (score, then fewer features, then smaller mask).
fn enumeration_argmin(lib: &FeatureLibrary) -> SubsetMask {
    let x = &lib.matrix;
    let t = &lib.targets[0];
    let m = x.nrows() as f64;
    let mut best: Option<(f64, usize, SubsetMask)> = None;
    for mask in SubsetMask::enumerate() {
        let cols: Vec<usize> = std::iter::once(0).chain(mask.selected_columns()).collect();
        let xs = x.select_columns(&cols);
        let gram = xs.transpose() * &xs;
        let beta = gram
            .cholesky()
            .expect("Gaussian designs are full rank")
            .solve(&(xs.transpose() * t));
        let rss = (t - xs * beta).norm_squared();
        let k = mask.k();
        let aic = m * (rss.max(1e-12 * m) / m).ln() + 2.0 * k as f64;
        let better = match &best {
            None => true,
            Some((ba, bk, bm)) => {
                aic < *ba || (aic == *ba && (k < *bk || (k == *bk && mask < *bm)))
            }
        };
        if better {
            best = Some((aic, k, mask));
        }
    }
    best.unwrap().2
}

#[test]
fn acceptance_02_best_subset_matches_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let start = Instant::now();
    let mut agreements = 0usize;
    for _ in 0..100 {
        let lib = random_instance(&mut rng, 50, 0.05);
        let ranking = best_subset(&lib, 0, Criterion::Aic).unwrap();
        if ranking.best().fit.mask == enumeration_argmin(&lib) {
            agreements += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = agreements == 100 && elapsed <= 5.0;
    verdict(
        2,
        ok,
        &format!("{agreements}/100 argmin agreements, {elapsed:.2} s"),
    );
    assert_eq!(agreements, 100);
    assert!(
        elapsed <= 5.0,
        "enumeration took {elapsed:.2} s (limit 5 s)"
    );
}

// ---------------------------------------------------------------------------
// 03: coordinate-descent shrinkage
// ---------------------------------------------------------------------------

/// Stationarity violation computed from first principles: the intercept
/// gradient must vanish, active coordinates must sit at the subgradient
/// equality, inactive ones inside the subgradient interval.
fn kkt_violation(lib: &FeatureLibrary, lambda: f64, beta: &[f64; 6]) -> f64 {
    let x = &lib.matrix;
    let bv = nalgebra::DVector::from_column_slice(beta);
    let grad = x.transpose() * (x * bv - &lib.targets[0]);
    let mut worst = grad[0].abs();
    for j in 1..6 {
        let v = if beta[j] != 0.0 {
            (grad[j] + lambda * beta[j].signum()).abs()
        } else {
            (grad[j].abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

#[test]
fn acceptance_03_lasso_ols_limit_kkt_and_null_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    // Unpenalized limit: coordinate descent must land on the least-squares
    // solution of the full design.
    let mut ols_gap = 0.0_f64;
    for _ in 0..5 {
        let lib = random_instance(&mut rng, 50, 0.1);
        let relaxed = lasso(&lib, 0, 0.0).unwrap();
        let exact = fit_subset(&lib, 0, SubsetMask::all()).unwrap().beta;
        for j in 0..6 {
            ols_gap = ols_gap.max((relaxed[j] - exact[j]).abs());
        }
    }
    let ols_ok = ols_gap <= 1e-8;

    // Stationarity across the path on fresh random instances.
    let mut worst_kkt = 0.0_f64;
    for _ in 0..50 {
        let lib = random_instance(&mut rng, 60, 0.1);
        let lambda = lasso_lambda_max(&lib, 0).unwrap() * rng.random_range(0.05..0.95);
        let beta = lasso(&lib, 0, lambda).unwrap();
        worst_kkt = worst_kkt.max(kkt_violation(&lib, lambda, &beta));
    }
    let kkt_ok = worst_kkt <= 1e-6;

    // At and beyond the critical penalty every slope is exactly zero.
    let mut null_ok = true;
    let lib = random_instance(&mut rng, 50, 0.1);
    let lmax = lasso_lambda_max(&lib, 0).unwrap();
    for lambda in [lmax * (1.0 + 1e-12), 2.0 * lmax] {
        let beta = lasso(&lib, 0, lambda).unwrap();
        null_ok &= beta[1..] == [0.0; 5];
    }

    verdict(
        3,
        ols_ok && kkt_ok && null_ok,
        &format!(
            "OLS gap {ols_gap:.2e} (limit 1e-8), worst KKT {worst_kkt:.2e} (limit 1e-6), \
             null model {}",
            if null_ok { "exact" } else { "violated" }
        ),
    );
    assert!(
        ols_ok,
        "lambda = 0 drifted {ols_gap:.2e} from least squares"
    );
    assert!(kkt_ok, "stationarity violated by {worst_kkt:.2e}");
    assert!(
        null_ok,
        "penalties above the critical value left nonzero slopes"
    );
}

// ---------------------------------------------------------------------------
// 04: implicit integrator against closed-form linear flows
// ---------------------------------------------------------------------------

#[test]
fn acceptance_04_stiff_linear_systems_match_matrix_exponential() {
    let cfg = IntegratorConfig {
        rtol: 1e-8,
        atol: 1e-12,
        ..IntegratorConfig::default()
    };

    // Non-normal system with eigenvalues {-1, -2}: y0 = (2, 3) splits into
    // one unit of each eigenmode, (1, 2) e^-t + (1, 1) e^-2t.
    let mild = linear_model([[-3.0, 1.0], [-2.0, 0.0]]);
    let traj = integrate(&mild, Vector2::new(2.0, 3.0), (0.0, 10.0), &cfg).unwrap();
    let exact_mild = |t: f64| {
        Vector2::new(
            (-t).exp() + (-2.0 * t).exp(),
            2.0 * (-t).exp() + (-2.0 * t).exp(),
        )
    };
    let mut err_mild = 0.0_f64;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        err_mild = err_mild.max((s - exact_mild(*t)).norm());
    }
    for k in 0..=200 {
        let t = 10.0 * k as f64 / 200.0;
        err_mild = err_mild.max((traj.sample(t) - exact_mild(t)).norm());
    }

    // Stiffness ratio 1000: the fast mode dies within milliseconds but the
    // window runs to t = 10, so explicit stepping would need ~10^4 steps
    // just for stability while the implicit scheme tracks accuracy only.
    let stiff = linear_model([[-1.0, 0.0], [1.0, -1000.0]]);
    let traj = integrate(&stiff, Vector2::new(1.0, 1.0), (0.0, 10.0), &cfg).unwrap();
    let exact_stiff = |t: f64| {
        let slow = (-t).exp();
        let fast = (-1000.0 * t).exp();
        Vector2::new(slow, fast + (slow - fast) / 999.0)
    };
    let mut err_stiff = 0.0_f64;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        err_stiff = err_stiff.max((s - exact_stiff(*t)).norm());
    }
    for k in 0..=200 {
        let t = 10.0 * k as f64 / 200.0;
        err_stiff = err_stiff.max((traj.sample(t) - exact_stiff(t)).norm());
    }
    let steps = traj.times.len() - 1;

    let ok = err_mild <= 1e-6 && err_stiff <= 1e-6 && steps <= 10_000;
    verdict(
        4,
        ok,
        &format!("errors {err_mild:.2e} / {err_stiff:.2e} (limit 1e-6), stiff case {steps} steps"),
    );
    assert!(err_mild <= 1e-6, "mild system error {err_mild:.2e}");
    assert!(err_stiff <= 1e-6, "stiff system error {err_stiff:.2e}");
    assert!(steps <= 10_000, "stiff case needed {steps} steps");
}

// ---------------------------------------------------------------------------
// 05: derivative guard and ranked-selection advance
// ---------------------------------------------------------------------------

#[test]
fn acceptance_05_blowup_guard_trips_and_selection_advances() {
    // dy1 = y1^2 from y1 = 1 reaches the guard (|dy| = 1e6 at y = 1000,
    // t = 0.999) just before its true singularity at t = 1.
    let blowup_row = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let quadratic = QuadraticModel::new([blowup_row, [0.0; 6]], UNIT_NORMS);
    let err = integrate(
        &quadratic,
        Vector2::new(1.0, 0.0),
        (0.0, 2.0),
        &IntegratorConfig::default(),
    )
    .unwrap_err();
    let guard_t = match err {
        OdeError::DerivativeBlowup { t, .. } => Some(t),
        _ => None,
    };
    let guard_ok = guard_t.is_some_and(|t| t < 1.0);

    // A two-deep ranking whose first pair contains the blow-up row: the
    // failure must advance both species to their rank-2 fits.
    let entry = |beta: [f64; 6]| RankedFit {
        fit: RegressionFit {
            mask: SubsetMask::all(),
            beta,
            rss: 1.0,
            tss: 2.0,
            k: 5,
            m: 10,
            aic: 0.0,
            bic: 0.0,
            adj_r2: 0.5,
        },
        feasible: true,
    };
    let decay1 = [0.0, -1.0, 0.0, 0.0, 0.0, 0.0];
    let decay2 = [0.0, 0.0, -1.0, 0.0, 0.0, 0.0];
    let rankings = [
        ModelRanking {
            criterion: Criterion::Aic,
            fits: vec![entry(blowup_row), entry(decay1)],
        },
        ModelRanking {
            criterion: Criterion::Aic,
            fits: vec![entry(decay2), entry(decay2)],
        },
    ];
    let selected = select_feasible_model(
        &rankings,
        UNIT_NORMS,
        Vector2::new(1.0, 1.0),
        (0.0, 2.0),
        &IntegratorConfig::default(),
    )
    .unwrap();
    let advance_ok = selected.ranks == [2, 2];

    verdict(
        5,
        guard_ok && advance_ok,
        &format!(
            "guard tripped at t = {}, selection settled at ranks {:?}",
            guard_t.map_or("never".into(), |t| format!("{t:.4}")),
            selected.ranks
        ),
    );
    assert!(guard_ok, "guard did not trip before t = 1: {guard_t:?}");
    assert!(
        advance_ok,
        "selection ranks {:?}, wanted [2, 2]",
        selected.ranks
    );
}

// ---------------------------------------------------------------------------
// 06: logistic-product critical points and one Jacobian per class
// ---------------------------------------------------------------------------

#[test]
fn acceptance_06_unit_square_critical_points_and_jacobian_classes() {
    // dy1 = y1(1 - y1), dy2 = y2(1 - y2): corners of the unit square, with
    // a diagonal +-1 Jacobian at each one.
    let model = QuadraticModel::new(
        [
            [0.0, 1.0, 0.0, -1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0, 0.0, -1.0],
        ],
        UNIT_NORMS,
    );
    let report = critical_points(&model).unwrap();
    let expected = [
        ([0.0, 0.0], StabilityClass::UnstableNode),
        ([1.0, 1.0], StabilityClass::StableNode),
        ([0.0, 1.0], StabilityClass::Saddle),
        ([1.0, 0.0], StabilityClass::Saddle),
    ];
    let mut corners_ok = report.points.len() == 4;
    let mut worst_residual = 0.0_f64;
    let mut matched = 0usize;
    for (corner, class) in expected {
        let found = report.points.iter().find(|p| {
            p.is_real
                && (p.z[0].re - corner[0]).abs() <= 1e-10
                && (p.z[1].re - corner[1]).abs() <= 1e-10
        });
        match found {
            Some(p) => {
                worst_residual = worst_residual.max(p.residual);
                if p.class == Some(class) {
                    matched += 1;
                } else {
                    corners_ok = false;
                }
            }
            None => corners_ok = false,
        }
    }
    corners_ok &= matched == 4 && worst_residual <= 1e-10;

    // One hand-built Jacobian per classification outcome.
    let cases: [(Matrix2<f64>, StabilityClass); 5] = [
        (
            Matrix2::new(-2.0, 0.0, 0.0, -1.0),
            StabilityClass::StableNode,
        ),
        (
            Matrix2::new(3.0, 0.0, 0.0, 1.0),
            StabilityClass::UnstableNode,
        ),
        (Matrix2::new(2.0, 0.0, 0.0, -3.0), StabilityClass::Saddle),
        (
            Matrix2::new(-1.0, -2.0, 2.0, -1.0),
            StabilityClass::StableSpiral,
        ),
        (
            Matrix2::new(1.0, -4.0, 1.0, 1.0),
            StabilityClass::UnstableSpiral,
        ),
    ];
    let classes_ok = cases
        .iter()
        .all(|(j, class)| classify_eigenvalues(eigenvalues_2x2(j)) == *class);

    verdict(
        6,
        corners_ok && classes_ok,
        &format!(
            "{matched}/4 corners classified, worst residual {worst_residual:.2e}, \
             5/5 Jacobian classes {}",
            if classes_ok { "correct" } else { "wrong" }
        ),
    );
    assert!(corners_ok, "unit-square critical points wrong: {report:?}");
    assert!(classes_ok, "a hand-built Jacobian classified incorrectly");
}

// ---------------------------------------------------------------------------
// 07: classification survives the coordinate change
// ---------------------------------------------------------------------------

#[test]
fn acceptance_07_classes_invariant_under_destandardization() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut compared = 0usize;
    let mut class_mismatches = 0usize;
    for _ in 0..20 {
        let mut coeffs = [[0.0; 6]; 2];
        for row in &mut coeffs {
            for c in row.iter_mut() {
                *c = rng.random_range(-1.5..1.5);
            }
        }
        let norm_params = [
            (rng.random_range(-4.0..4.0), rng.random_range(0.5..2.5)),
            (rng.random_range(-4.0..4.0), rng.random_range(0.5..2.5)),
        ];
        let standardized = QuadraticModel::new(coeffs, norm_params);
        let out = critical_points(&standardized).unwrap();
        let physical_model = destandardize_model(&standardized).unwrap();
        let physical = critical_points(&physical_model).unwrap();

        let real_std: Vec<_> = out.points.iter().filter(|p| p.is_real).collect();
        let real_phys: Vec<_> = physical.points.iter().filter(|p| p.is_real).collect();
        assert_eq!(
            real_std.len(),
            real_phys.len(),
            "the affine map must not create or destroy real critical points"
        );
        for p in &real_std {
            let w = p.physical.expect("real points carry physical coordinates");
            let partner = real_phys
                .iter()
                .min_by(|a, b| {
                    let da = (a.z[0].re - w[0]).hypot(a.z[1].re - w[1]);
                    let db = (b.z[0].re - w[0]).hypot(b.z[1].re - w[1]);
                    da.total_cmp(&db)
                })
                .expect("same point count");
            let dist = (partner.z[0].re - w[0]).hypot(partner.z[1].re - w[1]);
            assert!(
                dist <= 1e-5 * (1.0 + w[0].hypot(w[1])),
                "no matching point near {w:?} (closest at distance {dist:.2e})"
            );
            compared += 1;
            if partner.class != p.class {
                class_mismatches += 1;
            }
        }
    }
    let ok = class_mismatches == 0 && compared >= 12;
    verdict(
        7,
        ok,
        &format!(
            "{compared} real points compared across 20 models, {class_mismatches} class changes"
        ),
    );
    assert_eq!(
        class_mismatches, 0,
        "classification changed under the affine map"
    );
    assert!(
        compared >= 12,
        "only {compared} real points seen; draw was degenerate"
    );
}

// ---------------------------------------------------------------------------
// 08: kinetics invariant and steady state
// ---------------------------------------------------------------------------

#[test]
fn acceptance_08_kinetics_conserves_nitrogen_and_settles() {
    let params = LeightonParams::new(ActinicFlux::Constant(0.5), 1.2).unwrap();
    let y0 = KineticsState::new(2.0, 1.0, 3.0).unwrap();

    let day = simulate_kinetics(&params, &y0, 24.0, &oracle_config()).unwrap();
    let n0 = y0.no2 + y0.no;
    let mut drift = 0.0_f64;
    for s in &day.states {
        drift = drift.max(((s[0] + s[1]) - n0).abs() / n0);
    }
    for k in 0..=480 {
        let s = day.sample(24.0 * k as f64 / 480.0);
        drift = drift.max(((s[0] + s[1]) - n0).abs() / n0);
    }
    let drift_ok = drift <= 1e-9;

    let two_days = simulate_kinetics(&params, &y0, 48.0, &oracle_config()).unwrap();
    let end = two_days.end_state();
    let residual = (0.5 / 1.2 - end[1] * end[2] / end[0]).abs();
    let steady_ok = residual <= 1e-6;

    verdict(
        8,
        drift_ok && steady_ok,
        &format!("nitrogen drift {drift:.2e} over 24 h, steady-state residual {residual:.2e}"),
    );
    assert!(drift_ok, "nitrogen drifted by {drift:.2e} (limit 1e-9)");
    assert!(
        steady_ok,
        "steady-state residual {residual:.2e} (limit 1e-6)"
    );
}

// ---------------------------------------------------------------------------
// 09: delay reconstruction on a damped oscillation
// ---------------------------------------------------------------------------

#[test]
fn acceptance_09_delay_embedding_lag_partner_and_rotation() {
    // A stable spiral observed through one coordinate: x(t) = e^(-t/50) cos t,
    // sampled at half-unit knots and refined tenfold the same way the
    // pipeline refines hourly readings.
    let knots: Vec<f64> = (0..71)
        .map(|k| {
            let t = 0.5 * k as f64;
            (-0.02 * t).exp() * t.cos()
        })
        .collect();
    let spline = MakimaSpline::new(&knots, 0.5).unwrap();
    let (grid, series) = spline.refine(10).unwrap();
    let dt = grid[1] - grid[0];

    let lag = select_lag(&series, series.len() / 4, 11).unwrap();
    let quarter_period = (PI / 2.0) / dt;
    let lag_gap = (lag.tau as f64 - quarter_period).abs();
    let lag_ok = lag_gap <= 2.0;

    let emb = delay_embed(&series, lag.tau).unwrap();
    let n = emb.points.len();
    let corr = fit_orthogonal_correction(&emb, &series[..n]).unwrap();
    let corrected = reconstruct(&emb, &corr);
    let partner: Vec<f64> = corrected.iter().map(|p| p[1]).collect();
    let hidden: Vec<f64> = grid[..n]
        .iter()
        .map(|&t| (-0.02 * t).exp() * t.sin())
        .collect();
    let partner_corr = pearson(&partner, &hidden);
    let partner_ok = partner_corr >= 0.9;

    // Rotating the embedded cloud by a known angle must be undone by the
    // best rotation-branch candidate (the inverse angle).
    let theta0 = 0.7_f64;
    let rotated = DelayEmbedding {
        tau: emb.tau,
        d: emb.d,
        points: emb
            .points
            .iter()
            .map(|&[u, v]| {
                [
                    theta0.cos() * u - theta0.sin() * v,
                    theta0.sin() * u + theta0.cos() * v,
                ]
            })
            .collect(),
    };
    let undo = fit_orthogonal_correction(&rotated, &series[..n]).unwrap();
    let best_rotation = undo
        .candidates
        .iter()
        .filter(|c| !c.reflected)
        .min_by(|a, b| a.loss.total_cmp(&b.loss))
        .expect("rotation branch has candidates");
    let angle_gap = (best_rotation.theta - (2.0 * PI - theta0)).abs();
    let rotation_ok = angle_gap <= 1e-6;

    verdict(
        9,
        lag_ok && partner_ok && rotation_ok,
        &format!(
            "tau {} vs quarter period {quarter_period:.1}, partner correlation \
             {partner_corr:.4}, rotation recovered within {angle_gap:.2e}",
            lag.tau
        ),
    );
    assert!(
        lag_ok,
        "tau = {} is {lag_gap:.1} steps from the oracle",
        lag.tau
    );
    assert!(partner_ok, "partner correlation {partner_corr:.4} < 0.9");
    assert!(rotation_ok, "rotation angle off by {angle_gap:.2e}");
}

// ---------------------------------------------------------------------------
// 10: optional checks against a user-supplied station CSV
// ---------------------------------------------------------------------------

#[test]
fn acceptance_10_external_station_csv_when_available() {
    let Some(path) = std::env::var_os("MADRID_CSV") else {
        println!("ACCEPTANCE 10 SKIP (MADRID_CSV not set)");
        return;
    };
    let ds = load_csv(std::path::Path::new(&path), &CsvSchema::default()).unwrap();
    let t0 = airdyn::synth::default_t0();
    let noon_window = TimeWindow::new(t0 + Duration::hours(7), t0 + Duration::hours(17)).unwrap();
    let cfg = airdyn::sweep::SweepConfig::default();

    // Gentle smoothing must beat aggressive smoothing on both species for
    // the Tres Olivos station over the eleven-hour midday window.
    let station = StationId("28079024".into());
    let soft = airdyn::sweep::station_fit(
        &ds,
        &station,
        &noon_window,
        SmoothingFactor::new(0.10).unwrap(),
        &cfg,
    )
    .unwrap();
    let hard = airdyn::sweep::station_fit(
        &ds,
        &station,
        &noon_window,
        SmoothingFactor::new(0.90).unwrap(),
        &cfg,
    )
    .unwrap();
    let (soft_rmse, hard_rmse) = (soft.rmse.unwrap(), hard.rmse.unwrap());
    let ordering_ok = soft_rmse[0] < hard_rmse[0] && soft_rmse[1] < hard_rmse[1];

    // The Villaverde midday window identifies a field with one stable node
    // and one saddle.
    let villaverde = StationId("28079017".into());
    let vfit = airdyn::sweep::station_fit(
        &ds,
        &villaverde,
        &noon_window,
        SmoothingFactor::new(0.10).unwrap(),
        &cfg,
    )
    .unwrap();
    let report = critical_points(&vfit.model.unwrap()).unwrap();
    let classes: Vec<_> = report.points.iter().filter_map(|p| p.class).collect();
    let classes_ok =
        classes.contains(&StabilityClass::StableNode) && classes.contains(&StabilityClass::Saddle);

    // Lag selection on the splined Villaverde morning series lands near 136
    // refined steps.
    let morning = TimeWindow::new(t0 + Duration::hours(8), t0 + Duration::hours(16)).unwrap();
    let windowed = select_window(&ds, &villaverde, &[SpeciesId::no2()], &morning).unwrap();
    let normalized = standardize(&windowed[0]).unwrap();
    let refined = process(&normalized, SmoothingFactor::new(0.01).unwrap(), 100).unwrap();
    let lag = select_lag(
        &refined.y,
        airdyn::embedding::default_tau_max(refined.y.len()),
        airdyn::embedding::default_bins(refined.y.len()),
    )
    .unwrap();
    let tau_ok = (lag.tau as i64 - 136).unsigned_abs() <= 20;

    verdict(
        10,
        ordering_ok && classes_ok && tau_ok,
        &format!(
            "rmse {:?} vs {:?}, classes {classes:?}, tau {}",
            soft_rmse, hard_rmse, lag.tau
        ),
    );
    assert!(
        ordering_ok,
        "soft smoothing lost: {soft_rmse:?} vs {hard_rmse:?}"
    );
    assert!(classes_ok, "classes found: {classes:?}");
    assert!(tau_ok, "tau = {} (expected near 136)", lag.tau);
}
