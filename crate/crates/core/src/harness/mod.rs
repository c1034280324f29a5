//! Monte Carlo sweeps over machine and coder accuracy with CSV reports.

mod plan;

pub use plan::{Design, EstimatorKind, SimPlan};

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    corrupt_labels, flip_label, generate_synthetic, monte_carlo_effect, sample_annotations, Dataset, OracleEffect,
    SynthConfig,
};
use crate::error::{Error, Result};
use crate::estimators::{dsl_estimate, naive_estimate, ppi_estimate, sri_noisy, sri_perfect, Estimate, SriConfig};
use crate::network::NetworkConfig;
use crate::rng::{derive_seed, stream, tag};

pub const WORKERS_ENV: &str = "SRI_WORKERS";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Worker threads; falls back to `SRI_WORKERS`, then to all cores.
    pub workers: Option<usize>,
    /// Record wall-clock runtimes. Off by default so that reports are reproducible byte for byte.
    pub timing: bool,
}

impl RunOptions {
    pub fn worker_count(&self) -> usize {
        self.workers
            .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
            .filter(|&w| w > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

/// One estimator on one replication of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub design: Design,
    pub machine_acc: f64,
    pub coder_acc: f64,
    pub estimator: EstimatorKind,
    pub replication: usize,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub runtime: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub design: Design,
    pub machine_acc: f64,
    pub coder_acc: f64,
    pub estimator: EstimatorKind,
    pub replications: usize,
    pub failures: usize,
    pub bias: Option<f64>,
    pub abs_bias: Option<f64>,
    pub rmse: Option<f64>,
    pub mean_se: Option<f64>,
    pub coverage_95: Option<f64>,
    pub mean_runtime: Option<f64>,
    pub oracle_effect: f64,
    pub oracle_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub rows: Vec<ReportRow>,
    pub raw: Vec<RawRecord>,
    pub oracle: OracleEffect,
}

impl SimulationReport {
    pub fn row(&self, estimator: EstimatorKind, machine_acc: f64, coder_acc: f64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.machine_acc == machine_acc && r.coder_acc == coder_acc)
    }
}

fn synth_config(plan: &SimPlan, seed: u64) -> SynthConfig {
    SynthConfig {
        n: plan.n,
        d: plan.d,
        seed,
        coef_seed: Some(plan.coef_seed.unwrap_or(plan.base_seed)),
        ..Default::default()
    }
}

/// Annotated dataset of replication `rep` in coder cell `cell`, before machine predictions.
pub fn replication_dataset(plan: &SimPlan, cell: usize, rep: usize) -> Result<Dataset> {
    let seed = derive_seed(plan.base_seed, &[cell as u64, rep as u64]);
    let gold = generate_synthetic(&synth_config(plan, derive_seed(seed, &[tag::UNITS])))?;
    let coded = match plan.design {
        Design::Perfect => gold,
        Design::Noisy => {
            let acc = plan.coder_accuracies[cell];
            corrupt_labels(&gold, &[acc, acc], derive_seed(seed, &[tag::CORRUPTION]))?
        }
    };
    sample_annotations(&coded, plan.label_fraction, derive_seed(seed, &[tag::ANNOTATION]))
}

/// Machine predictions made by flipping gold labels. Every accuracy reuses the
/// same uniform draws, so the grid cells share their randomness.
pub fn machine_predictions(ds: &Dataset, accuracy: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = stream(seed, tag::MACHINE, 0);
    ds.observations
        .iter()
        .map(|o| {
            let gold = o
                .gold
                .ok_or_else(|| Error::InvalidConfig("machine predictions need gold labels".into()))?;
            Ok(flip_label(gold, accuracy, ds.num_classes, &mut rng) as f64)
        })
        .collect()
}

struct Outcome {
    estimate: Result<Estimate>,
    runtime: f64,
}

fn timed(f: impl FnOnce() -> Result<Estimate>) -> Outcome {
    let start = Instant::now();
    let estimate = f();
    Outcome {
        estimate,
        runtime: start.elapsed().as_secs_f64(),
    }
}

fn record(plan: &SimPlan, machine_acc: f64, coder_acc: f64, kind: EstimatorKind, rep: usize, out: &Outcome, timing: bool) -> RawRecord {
    let (estimate, se, ci, error) = match &out.estimate {
        Ok(e) => (Some(e.diff), Some(e.se_diff), Some(e.ci), None),
        Err(err) => (None, None, None, Some(err.to_string())),
    };
    RawRecord {
        design: plan.design,
        machine_acc,
        coder_acc,
        estimator: kind,
        replication: rep,
        estimate,
        se,
        ci_low: ci.map(|c| c.0),
        ci_high: ci.map(|c| c.1),
        runtime: timing.then_some(out.runtime),
        error,
    }
}

/// All records of one replication in one coder cell, ordered by machine
/// accuracy and then by the plan's estimator order.
fn run_replication(plan: &SimPlan, cell: usize, rep: usize, timing: bool) -> Vec<RawRecord> {
    let coder_acc = plan.coder_grid()[cell];
    let ds = replication_dataset(plan, cell, rep);
    let rep_seed = derive_seed(plan.base_seed, &[cell as u64, rep as u64]);
    let failed = |e: &Error| Outcome {
        estimate: Err(Error::InvalidConfig(format!("replication setup: {e}"))),
        runtime: 0.0,
    };
    // the SRI estimators ignore machine predictions, so one fit serves the whole grid
    let sri = plan.estimators.contains(&EstimatorKind::Sri).then(|| match &ds {
        Ok(ds) => {
            let cfg = SriConfig {
                k: plan.folds(),
                seed: rep_seed,
                network: NetworkConfig {
                    learning_rate: plan.learning_rate,
                    max_epochs: plan.max_epochs,
                    batch_size: plan.batch_size,
                    patience: plan.patience,
                    ..Default::default()
                },
                ..Default::default()
            };
            timed(|| match plan.design {
                Design::Perfect => sri_perfect(ds, &cfg),
                Design::Noisy => sri_noisy(ds, &cfg),
            })
        }
        Err(e) => failed(e),
    });
    let mut out = Vec::new();
    for &machine_acc in &plan.machine_accuracies {
        let with_preds = ds.as_ref().map_err(|e| Error::InvalidConfig(e.to_string())).and_then(|ds| {
            let preds = machine_predictions(ds, machine_acc, rep_seed)?;
            ds.clone().with_predictions(preds)
        });
        for &kind in &plan.estimators {
            let outcome = match (kind, &with_preds) {
                (EstimatorKind::Sri, _) => None,
                (_, Err(e)) => Some(failed(e)),
                (EstimatorKind::Naive, Ok(ds)) => Some(timed(|| naive_estimate(ds))),
                (EstimatorKind::Ppi, Ok(ds)) => Some(timed(|| ppi_estimate(ds))),
                (EstimatorKind::Dsl, Ok(ds)) => Some(timed(|| dsl_estimate(ds))),
            };
            let outcome = outcome.as_ref().or(sri.as_ref()).expect("sri outcome computed");
            out.push(record(plan, machine_acc, coder_acc, kind, rep, outcome, timing));
        }
    }
    out
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Aggregates the records of one (cell, estimator) in replication order.
pub fn aggregate(records: &[&RawRecord], oracle: &OracleEffect) -> ReportRow {
    let first = records[0];
    let ok: Vec<&&RawRecord> = records.iter().filter(|r| r.estimate.is_some()).collect();
    let errors = || ok.iter().map(|r| r.estimate.unwrap() - oracle.effect);
    let bias = mean(errors());
    ReportRow {
        design: first.design,
        machine_acc: first.machine_acc,
        coder_acc: first.coder_acc,
        estimator: first.estimator,
        replications: records.len(),
        failures: records.len() - ok.len(),
        bias,
        abs_bias: bias.map(f64::abs),
        rmse: mean(errors().map(|e| e * e)).map(f64::sqrt),
        mean_se: mean(ok.iter().map(|r| r.se.unwrap())),
        coverage_95: mean(ok.iter().map(|r| {
            let covered = r.ci_low.unwrap() <= oracle.effect && oracle.effect <= r.ci_high.unwrap();
            f64::from(u8::from(covered))
        })),
        mean_runtime: if records.iter().all(|r| r.runtime.is_some()) {
            mean(records.iter().map(|r| r.runtime.unwrap()))
        } else {
            None
        },
        oracle_effect: oracle.effect,
        oracle_se: oracle.se,
    }
}

pub fn oracle_effect(plan: &SimPlan) -> Result<OracleEffect> {
    monte_carlo_effect(&synth_config(plan, 0), plan.oracle_draws, derive_seed(plan.base_seed, &[tag::ORACLE]))
}

pub fn run_monte_carlo(plan: &SimPlan, options: &RunOptions) -> Result<SimulationReport> {
    plan.validate()?;
    let oracle = oracle_effect(plan)?;
    let cells = plan.coder_grid().len();
    let jobs: Vec<(usize, usize)> = (0..cells)
        .flat_map(|c| (0..plan.replications).map(move |r| (c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.worker_count())
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let mut raw: Vec<RawRecord> = pool.install(|| {
        jobs.par_iter()
            .flat_map_iter(|&(c, r)| run_replication(plan, c, r, options.timing))
            .collect()
    });
    let coder_grid = plan.coder_grid();
    let position = |r: &RawRecord| {
        (
            coder_grid.iter().position(|&a| a == r.coder_acc).unwrap_or(usize::MAX),
            plan.machine_accuracies.iter().position(|&a| a == r.machine_acc).unwrap_or(usize::MAX),
            plan.estimators.iter().position(|&e| e == r.estimator).unwrap_or(usize::MAX),
            r.replication,
        )
    };
    raw.sort_by_key(position);
    let rows = raw
        .chunk_by(|a, b| {
            let (pa, pb) = (position(a), position(b));
            (pa.0, pa.1, pa.2) == (pb.0, pb.1, pb.2)
        })
        .map(|group| aggregate(&group.iter().collect::<Vec<_>>(), &oracle))
        .collect();
    Ok(SimulationReport { rows, raw, oracle })
}

fn write_rows<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report(report: &SimulationReport, path: impl AsRef<Path>) -> Result<()> {
    write_rows(&report.rows, path)
}

pub fn write_raw(report: &SimulationReport, path: impl AsRef<Path>) -> Result<()> {
    write_rows(&report.raw, path)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    read_rows(path)
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    read_rows(path)
}

/// Aligned plain-text summary of report rows.
pub fn format_table(rows: &[ReportRow]) -> String {
    let num = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    let header = [
        "design", "machine", "coder", "estimator", "reps", "fail", "bias", "abs_bias", "rmse", "mean_se", "cover95",
        "runtime",
    ];
    let body: Vec<[String; 12]> = rows
        .iter()
        .map(|r| {
            [
                r.design.to_string(),
                format!("{:.2}", r.machine_acc),
                format!("{:.2}", r.coder_acc),
                r.estimator.to_string(),
                r.replications.to_string(),
                r.failures.to_string(),
                num(r.bias),
                num(r.abs_bias),
                num(r.rmse),
                num(r.mean_se),
                num(r.coverage_95),
                r.mean_runtime.map_or("-".into(), |v| format!("{v:.2}s")),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i < 4 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut header.iter().copied());
    for row in &body {
        line(&mut row.iter().map(String::as_str));
    }
    if let Some(r) = rows.first() {
        let _ = writeln!(out, "oracle effect {:.5} (se {:.5})", r.oracle_effect, r.oracle_se);
    }
    out
}
