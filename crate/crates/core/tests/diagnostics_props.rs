mod common;

use proptest::prelude::*;
use stratw::diagnostics::{
    balance_report, coefficient_of_variation, ess, pooled_sd, variance_inflation, BalanceOptions,
    Scope,
};
use stratw::simulate::{simulate_cohort, SimConfig};
use stratw::{compute_weights, DesignSpec, WeightingConfig};

/// Mean and sample variance of a slice, computed the long way.
fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (
        m,
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn n_over_ess_is_one_plus_cv_squared(w in prop::collection::vec(1e-4f64..1e4, 1..200)) {
        let lhs = w.len() as f64 / ess(&w).unwrap();
        let cv = coefficient_of_variation(&w).unwrap();
        prop_assert!((lhs - (1.0 + cv * cv)).abs() <= 1e-10 * lhs);
        prop_assert!((variance_inflation(&w).unwrap() - lhs).abs() <= 1e-10 * lhs);
    }

    #[test]
    fn ess_ignores_global_scale(
        w in prop::collection::vec(1e-3f64..1e3, 1..200),
        c in 1e-6f64..1e6,
    ) {
        let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
        let (a, b) = (ess(&w).unwrap(), ess(&scaled).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * a);
        prop_assert!(a <= w.len() as f64 * (1.0 + 1e-12) && a >= 1.0 - 1e-12);
    }

    #[test]
    fn unit_weights_reproduce_unadjusted_columns(seed in any::<u64>()) {
        let cohort = simulate_cohort(&SimConfig::default().with_seed(seed)).unwrap();
        let ones = vec![1.0; cohort.len()];
        let r = balance_report(&cohort, &ones, &["age", "stage_IV"], Scope::Overall, &BalanceOptions::default()).unwrap();
        for row in &r.rows {
            prop_assert!((row.adj_smd.unwrap() - row.unadj_smd.unwrap()).abs() < 1e-12);
        }
        prop_assert!((r.ess_exposed - 80.0).abs() < 1e-9);
        prop_assert!((r.ess_unexposed - 100.0).abs() < 1e-9);
    }
}

#[test]
fn smd_matches_hand_computed_moments() {
    let cohort = simulate_cohort(&SimConfig::default()).unwrap();
    let z = cohort.exposures();
    let age = cohort.column("age").unwrap();
    let stage = cohort.column("stage_IV").unwrap();
    let split = |x: &[f64], arm: bool| -> Vec<f64> {
        x.iter()
            .zip(&z)
            .filter(|(_, &a)| a == arm)
            .map(|(&v, _)| v)
            .collect()
    };
    let (m1, v1) = moments(&split(&age, true));
    let (m0, v0) = moments(&split(&age, false));
    let age_smd = (m1 - m0) / ((v1 + v0) / 2.0).sqrt();
    let (p1, _) = moments(&split(&stage, true));
    let (p0, _) = moments(&split(&stage, false));
    let stage_smd = (p1 - p0) / ((p1 * (1.0 - p1) + p0 * (1.0 - p0)) / 2.0).sqrt();

    let r = balance_report(
        &cohort,
        &vec![1.0; cohort.len()],
        &["age", "stage_IV"],
        Scope::Overall,
        &BalanceOptions::default(),
    )
    .unwrap();
    assert!((r.rows[0].unadj_smd.unwrap() - age_smd).abs() < 1e-12);
    assert!((r.rows[1].unadj_smd.unwrap() - stage_smd).abs() < 1e-12);
    assert!(r.rows[1].binary && !r.rows[0].binary);
}

#[test]
fn constant_covariate_has_no_smd() {
    assert_eq!(
        pooled_sd(&[3.0, 3.0, 3.0, 3.0], &[true, true, false, false]),
        None
    );
    assert_eq!(pooled_sd(&[1.0, 1.0, 1.0], &[true, false, false]), None);
}

#[test]
fn stratified_weights_shrink_within_stratum_age_imbalance() {
    let cohort = simulate_cohort(&SimConfig::default()).unwrap();
    let ws = compute_weights(
        &cohort,
        &WeightingConfig::stratified(DesignSpec::main(&["age", "stage_IV"])),
    )
    .unwrap();
    for s in ["S1", "S2"] {
        let r = balance_report(
            &cohort,
            ws.final_weights(),
            &["age"],
            Scope::Stratum(s.into()),
            &BalanceOptions::default(),
        )
        .unwrap();
        let row = &r.rows[0];
        assert!(
            row.adj_smd.unwrap().abs() < row.unadj_smd.unwrap().abs(),
            "{s}: {row:?}"
        );
        assert!(r.ess_exposed <= r.n_exposed as f64 && r.ess_unexposed <= r.n_unexposed as f64);
    }
}

#[test]
fn report_serializes_missing_smd_as_null() {
    let cohort = simulate_cohort(&SimConfig {
        stage4_props: [0.0; 4],
        ..SimConfig::default()
    })
    .unwrap();
    let r = balance_report(
        &cohort,
        &vec![1.0; cohort.len()],
        &["stage_IV"],
        Scope::Overall,
        &BalanceOptions::default(),
    )
    .unwrap();
    let json = serde_json::to_value(&r).unwrap();
    assert!(json["rows"][0]["unadj_smd"].is_null());
    assert!(r.to_markdown().contains("n/a"));
}
