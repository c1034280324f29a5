use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sri_core::dataset::{load_csv, CsvSchema, Dataset};
use sri_core::diagnostics::{
    accuracy_check, agreement_check, equivalence_permutation_test, AccuracyReport, AgreementCell, EquivTestConfig,
    StratumStatistic,
};
use sri_core::estimators::{
    dsl_estimate, naive_estimate, ppi_estimate, sri_noisy, sri_perfect, Estimate, EstimateSummary, SriConfig,
};
use sri_core::harness::{format_table, read_report, run_monte_carlo, write_raw, write_report, RunOptions, SimPlan};
use sri_core::labelmodel::CoderErrorModel;
use sri_core::network::{NetworkConfig, TrainReport};

#[derive(Parser)]
#[command(name = "sri", version, about = "Surrogate representation inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo sweep and write the summary CSV.
    Simulate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write one row per estimator and replication.
        #[arg(long)]
        raw_out: Option<PathBuf>,
        /// Worker threads (default: SRI_WORKERS, then all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Original-study sample size, embedding width and replications.
        #[arg(long)]
        paper_scale: bool,
        /// Record wall-clock runtimes; the output is then no longer reproducible.
        #[arg(long)]
        timing: bool,
    },
    /// Estimate the difference in adjusted outcome means on a CSV dataset.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        estimator: EstimatorArg,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Number of label classes (default: largest label seen plus one).
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, default_value_t = 2e-5)]
        learning_rate: f64,
        #[arg(long, default_value_t = 200)]
        max_epochs: usize,
    },
    /// Check the coder assumptions on gold-labeled rows and write a JSON report.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        /// Equivalence margin; without it only the equivalence interval is reported.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 999)]
        b: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        pca_dims: usize,
        /// Pool agreement rates over the predictor.
        #[arg(long)]
        pooled_t: bool,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a simulation summary CSV as an aligned table.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Sri,
    SriNoisy,
    Naive,
    Ppi,
    Dsl,
}

#[derive(Serialize)]
struct FoldOutput<'a> {
    fold: usize,
    training: Option<&'a TrainReport>,
    error_model: Option<&'a CoderErrorModel>,
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    #[serde(flatten)]
    summary: EstimateSummary,
    folds: Vec<FoldOutput<'a>>,
}

#[derive(Serialize)]
struct TestOutput {
    delta: Option<f64>,
    p_value: Option<f64>,
    t_observed: Option<f64>,
    b: usize,
    pca_dims: usize,
    per_stratum: Vec<StratumStatistic>,
    equivalence_interval: Option<f64>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct DiagnoseOutput {
    gold_units: usize,
    equivalence_test: TestOutput,
    agreement: Vec<AgreementCell>,
    accuracy: Vec<AccuracyReport>,
}

fn load(path: &Path, classes: Option<usize>) -> anyhow::Result<Dataset> {
    load_csv(path, CsvSchema { num_classes: classes }).with_context(|| format!("reading {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn estimate(ds: &Dataset, which: EstimatorArg, cfg: &SriConfig) -> sri_core::Result<Estimate> {
    match which {
        EstimatorArg::Sri => sri_perfect(ds, cfg),
        EstimatorArg::SriNoisy => sri_noisy(ds, cfg),
        EstimatorArg::Naive => naive_estimate(ds),
        EstimatorArg::Ppi => ppi_estimate(ds),
        EstimatorArg::Dsl => dsl_estimate(ds),
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Simulate {
            plan,
            out,
            raw_out,
            workers,
            paper_scale,
            timing,
        } => {
            let mut plan = SimPlan::from_file(&plan).with_context(|| format!("reading plan {}", plan.display()))?;
            if paper_scale {
                plan = plan.paper_scale();
            }
            let report = run_monte_carlo(&plan, &RunOptions { workers, timing })?;
            write_report(&report, &out).with_context(|| format!("writing {}", out.display()))?;
            if let Some(raw) = raw_out {
                write_raw(&report, &raw).with_context(|| format!("writing {}", raw.display()))?;
            }
        }
        Command::Estimate {
            data,
            estimator,
            k,
            seed,
            out,
            classes,
            learning_rate,
            max_epochs,
        } => {
            let ds = load(&data, classes)?;
            if ds.labeled_count() == 0 {
                bail!("cannot fit outcome head: {} has no annotated rows", data.display());
            }
            let cfg = SriConfig {
                k,
                seed,
                network: NetworkConfig {
                    learning_rate,
                    max_epochs,
                    ..Default::default()
                },
                ..Default::default()
            };
            let est = estimate(&ds, estimator, &cfg)?;
            let output = EstimateOutput {
                summary: est.summary(),
                folds: est
                    .folds
                    .iter()
                    .map(|f| FoldOutput {
                        fold: f.fold,
                        training: f.report.as_ref(),
                        error_model: f.error_model.as_ref(),
                    })
                    .collect(),
            };
            write_json(&out, &output)?;
        }
        Command::Diagnose {
            data,
            delta,
            b,
            seed,
            pca_dims,
            pooled_t,
            classes,
            out,
        } => {
            let ds = load(&data, classes)?;
            let gold: Vec<usize> = (0..ds.n())
                .filter(|&i| ds.observations[i].is_labeled() && ds.observations[i].gold.is_some())
                .collect();
            if gold.is_empty() {
                bail!("{} has no annotated rows with a gold label", data.display());
            }
            let config = EquivTestConfig {
                delta: delta.unwrap_or(0.0),
                b,
                pca_dims: pca_dims.min(ds.d),
                seed,
                ..Default::default()
            };
            let test = equivalence_permutation_test(&ds, &gold, &config)?;
            let units: Vec<usize> = (0..ds.n()).collect();
            let (strata, _) = ds.strata();
            let output = DiagnoseOutput {
                gold_units: gold.len(),
                equivalence_test: TestOutput {
                    delta,
                    p_value: delta.map(|_| test.p_value),
                    t_observed: delta.map(|_| test.t_observed),
                    b,
                    pca_dims: config.pca_dims,
                    per_stratum: test.per_stratum,
                    equivalence_interval: test.equivalence_interval,
                    warnings: test.warnings,
                },
                agreement: agreement_check(&ds, &units, Some(&strata), pooled_t)?,
                accuracy: (0..ds.num_coders)
                    .map(|j| accuracy_check(&ds, &gold, j))
                    .collect::<sri_core::Result<_>>()?,
            };
            write_json(&out, &output)?;
        }
        Command::Report { input } => {
            let rows = read_report(&input).with_context(|| format!("reading {}", input.display()))?;
            print!("{}", format_table(&rows));
        }
    }
    Ok(())
}

fn missing_input(command: &Command) -> Option<&Path> {
    let inputs: Vec<&Path> = match command {
        Command::Simulate { plan, .. } => vec![plan],
        Command::Estimate { data, .. } | Command::Diagnose { data, .. } => vec![data],
        Command::Report { input } => vec![input],
    };
    inputs.into_iter().find(|p| !p.is_file())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(path) = missing_input(&cli.command) {
        eprintln!("error: no such file: {}", path.display());
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": ").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
