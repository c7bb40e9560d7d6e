use prmix_core::bench::{rate_experiment, scenario, simulate, Metric, RateExperiment};
use prmix_core::diagnostics::{kl_oracle_fstar, OracleOptions};
use prmix_core::math::median;
use prmix_core::search::objective;
use prmix_core::{pr_run, MixingVector, SnapshotPlan, WeightSchedule};

#[test]
fn median_error_shrinks_with_n() {
    let sc = scenario("a").unwrap();
    let truth = sc.model.weights.clone();
    let sched = WeightSchedule::new(0.9).unwrap();
    let checkpoints = vec![100, 1000, 10_000];
    let mut errors = vec![Vec::new(); 3];
    for seed in 0..21 {
        let y = simulate(&sc.model, 10_000, 500 + seed).unwrap();
        let trace = pr_run(
            &y,
            &sc.kernel,
            &sc.fitted,
            &sched,
            &MixingVector::uniform(3),
            &SnapshotPlan::At(checkpoints.clone()),
        )
        .unwrap();
        for (k, (_, f)) in trace.snapshots.iter().enumerate() {
            errors[k].push(f.euclidean_distance(&truth));
        }
    }
    let med: Vec<f64> = errors.iter().map(|e| median(e)).collect();
    assert!(med[0] > med[1] && med[1] > med[2], "medians {med:?}");
}

#[test]
fn different_orders_differ_but_agree_asymptotically() {
    let sc = scenario("b").unwrap();
    let pop = sc.population().unwrap();
    let fstar = kl_oracle_fstar(&pop, &OracleOptions::default()).unwrap().fstar;
    let sched = WeightSchedule::new(0.75).unwrap();
    let f0 = MixingVector::uniform(3);
    let y = simulate(&sc.model, 50_000, 9).unwrap();
    let mut reversed = y.clone();
    reversed.reverse();

    let short_a = pr_run(&y[..100], &sc.kernel, &sc.fitted, &sched, &f0, &SnapshotPlan::None).unwrap();
    let short_b = pr_run(
        &reversed[..100],
        &sc.kernel,
        &sc.fitted,
        &sched,
        &f0,
        &SnapshotPlan::None,
    )
    .unwrap();
    assert_ne!(short_a.final_mixing, short_b.final_mixing);

    let long_a = pr_run(&y, &sc.kernel, &sc.fitted, &sched, &f0, &SnapshotPlan::None).unwrap();
    let long_b = pr_run(&reversed, &sc.kernel, &sc.fitted, &sched, &f0, &SnapshotPlan::None).unwrap();
    assert_ne!(long_a.final_mixing, long_b.final_mixing);
    assert!(long_a.final_mixing.euclidean_distance(&fstar) < 0.05);
    assert!(long_b.final_mixing.euclidean_distance(&fstar) < 0.05);
}

/// `L_n(U)/n` against the empirical mean of `−log m_{f*,U}` on the same
/// sample; the gap closes as `n` grows.
#[test]
fn objective_gap_closes() {
    let sc = scenario("a").unwrap();
    let sched = WeightSchedule::new(0.9).unwrap();
    let sizes = [1_000usize, 10_000, 100_000];
    let mut gaps = vec![Vec::new(); sizes.len()];
    for seed in 0..11 {
        let y = simulate(&sc.model, 100_000, 77 + seed).unwrap();
        for (k, &n) in sizes.iter().enumerate() {
            let obj = objective(&y[..n], &sc.kernel, &sc.fitted, &sched).unwrap();
            let oracle: f64 = y[..n].iter().map(|&v| -sc.model.log_density(v)).sum::<f64>() / n as f64;
            gaps[k].push((obj.value / n as f64 - oracle).abs());
        }
    }
    let med: Vec<f64> = gaps.iter().map(|g| median(g)).collect();
    assert!(med[0] > med[1] && med[1] > med[2], "gaps {med:?}");
}

fn full_experiment(name: &str) -> prmix_core::bench::RateReport {
    rate_experiment(&RateExperiment::new(scenario(name).unwrap())).unwrap()
}

#[test]
fn well_specified_rate_invariants() {
    let report = full_experiment("a");
    let slope = |g: f64, m: Metric| report.summary(g, m).unwrap().slope;
    assert!(slope(0.9, Metric::MixingError) < slope(0.6, Metric::MixingError));
    for g in [0.6, 0.75, 0.9] {
        let s = report.summary(g, Metric::MixingError).unwrap();
        assert_eq!(
            s.pass,
            Some(true),
            "gamma {g}: slope {} vs reference {}",
            s.slope,
            s.reference
        );
    }
    let gap = (slope(0.9, Metric::MixingError) - slope(0.9, Metric::MixtureL1)).abs();
    assert!(gap < 0.05, "L1 vs Euclidean slope gap {gap}");
    assert!(report.summaries.iter().all(|s| s.slope.is_finite()));
}

#[test]
fn misspecified_rate_moderate_gamma() {
    let report = full_experiment("b");
    assert!(report.oracle.kstar > 0.0);
    for g in [0.6, 0.75] {
        let s = report.summary(g, Metric::MixingError).unwrap();
        assert_eq!(
            s.pass,
            Some(true),
            "gamma {g}: slope {} vs reference {}",
            s.slope,
            s.reference
        );
    }
}

#[test]
#[ignore = "known miss: the slow Jacobian mode of this scenario (eigenvalue near -0.096) still dominates at n = 1e5 when gamma = 0.9"]
fn misspecified_rate_fast_gamma() {
    let report = full_experiment("b");
    let s = report.summary(0.9, Metric::MixingError).unwrap();
    assert_eq!(s.pass, Some(true), "slope {} vs reference {}", s.slope, s.reference);
}

#[test]
fn boundary_scenario_is_report_only() {
    let mut cfg = RateExperiment::new(scenario("c").unwrap());
    cfg.seeds = 4;
    cfg.checkpoints.truncate(5);
    let report = rate_experiment(&cfg).unwrap();
    assert!(!report.oracle.interior);
    assert!(report.summaries.iter().all(|s| s.pass.is_none()));
}
