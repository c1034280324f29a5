use sri_core::harness::{
    format_table, machine_predictions, oracle_effect, read_raw, read_report, replication_dataset, run_monte_carlo,
    write_raw, write_report, Design, EstimatorKind, RunOptions, SimPlan,
};

fn small(design: Design) -> SimPlan {
    SimPlan {
        design,
        n: 600,
        d: 8,
        label_fraction: 0.3,
        machine_accuracies: vec![0.75, 0.9],
        coder_accuracies: vec![0.9],
        replications: 3,
        oracle_draws: 20_000,
        max_epochs: 4,
        base_seed: 17,
        ..Default::default()
    }
}

fn serial() -> RunOptions {
    RunOptions {
        workers: Some(1),
        timing: false,
    }
}

#[test]
fn single_naive_replication_is_the_sample_effect() {
    let plan = SimPlan {
        machine_accuracies: vec![1.0],
        replications: 1,
        estimators: vec![EstimatorKind::Naive],
        ..small(Design::Perfect)
    };
    let report = run_monte_carlo(&plan, &serial()).unwrap();
    assert_eq!(report.rows.len(), 1);
    let ds = replication_dataset(&plan, 0, 0).unwrap();
    let sample = ds.gold_effect().unwrap();
    let row = &report.rows[0];
    assert!((row.bias.unwrap() - (sample - report.oracle.effect)).abs() < 1e-12);
    assert_eq!(row.failures, 0);
    assert_eq!(row.coverage_95.unwrap() == 1.0, report.raw[0].ci_low.unwrap() <= report.oracle.effect);
}

#[test]
fn machine_predictions_hit_their_accuracy() {
    let plan = SimPlan { n: 20_000, ..small(Design::Perfect) };
    let ds = replication_dataset(&plan, 0, 0).unwrap();
    for acc in [0.7, 0.9, 1.0] {
        let preds = machine_predictions(&ds, acc, 5).unwrap();
        let hits = ds.observations.iter().zip(&preds).filter(|(o, &p)| o.gold.unwrap() as f64 == p).count();
        let rate = hits as f64 / ds.n() as f64;
        assert!((rate - acc).abs() < 4.0 * (acc * (1.0 - acc) / ds.n() as f64).sqrt() + 1e-12);
    }
}

#[test]
fn report_is_recomputable_from_raw_records() {
    let dir = tempfile::tempdir().unwrap();
    let plan = small(Design::Perfect);
    let report = run_monte_carlo(&plan, &serial()).unwrap();
    assert_eq!(report.rows.len(), 2 * 4);
    let (rp, rawp) = (dir.path().join("report.csv"), dir.path().join("raw.csv"));
    write_report(&report, &rp).unwrap();
    write_raw(&report, &rawp).unwrap();
    let rows = read_report(&rp).unwrap();
    let raw = read_raw(&rawp).unwrap();
    assert_eq!(rows, report.rows);
    assert_eq!(raw, report.raw);
    let oracle = oracle_effect(&plan).unwrap().effect;
    for row in &rows {
        let errs: Vec<f64> = raw
            .iter()
            .filter(|r| r.estimator == row.estimator && r.machine_acc == row.machine_acc && r.coder_acc == row.coder_acc)
            .filter_map(|r| r.estimate)
            .map(|e| e - oracle)
            .collect();
        let n = errs.len() as f64;
        let bias = errs.iter().sum::<f64>() / n;
        let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
        assert!((row.bias.unwrap() - bias).abs() < 1e-12);
        assert!((row.rmse.unwrap() - rmse).abs() < 1e-12);
        assert!(row.rmse.unwrap().powi(2) >= row.bias.unwrap().powi(2) - 1e-12);
        let cov = row.coverage_95.unwrap();
        assert!((0.0..=1.0).contains(&cov));
        assert!(row.mean_runtime.is_none());
    }
    let table = format_table(&rows);
    assert_eq!(table.lines().count(), rows.len() + 2);
}

#[test]
fn sri_is_shared_across_the_machine_grid() {
    let report = run_monte_carlo(&small(Design::Noisy), &serial()).unwrap();
    let sri: Vec<_> = report.raw.iter().filter(|r| r.estimator == EstimatorKind::Sri).collect();
    for r in &sri {
        let twin = sri
            .iter()
            .find(|o| o.replication == r.replication && o.machine_acc != r.machine_acc)
            .unwrap();
        assert_eq!(r.estimate, twin.estimate);
        assert_eq!(r.error, twin.error);
    }
    let dsl: Vec<_> = report.raw.iter().filter(|r| r.estimator == EstimatorKind::Dsl).collect();
    assert_ne!(dsl[0].estimate, dsl[3].estimate);
}

#[test]
fn worker_count_does_not_change_the_report() {
    let plan = small(Design::Noisy);
    let a = run_monte_carlo(&plan, &serial()).unwrap();
    let b = run_monte_carlo(&plan, &RunOptions { workers: Some(3), timing: false }).unwrap();
    assert_eq!(a, b);
}

#[test]
fn failures_are_counted_not_fatal() {
    let plan = SimPlan {
        n: 60,
        label_fraction: 0.02,
        estimators: vec![EstimatorKind::Sri, EstimatorKind::Dsl, EstimatorKind::Naive],
        ..small(Design::Perfect)
    };
    let report = run_monte_carlo(&plan, &serial()).unwrap();
    let sri = report.row(EstimatorKind::Sri, 0.75, 1.0).unwrap();
    assert_eq!(sri.failures, 3);
    assert_eq!(sri.bias, None);
    assert_eq!(report.row(EstimatorKind::Dsl, 0.75, 1.0).unwrap().failures, 3);
    assert_eq!(report.row(EstimatorKind::Naive, 0.75, 1.0).unwrap().failures, 0);
    assert!(report.raw.iter().filter(|r| r.estimator == EstimatorKind::Sri).all(|r| r.error.is_some()));
}

#[test]
fn timing_is_opt_in() {
    let plan = SimPlan { replications: 1, estimators: vec![EstimatorKind::Naive], ..small(Design::Perfect) };
    let report = run_monte_carlo(&plan, &RunOptions { workers: Some(1), timing: true }).unwrap();
    assert!(report.rows.iter().all(|r| r.mean_runtime.is_some_and(|t| t >= 0.0)));
}
