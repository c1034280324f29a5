use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use super::nuisance::{fit_mbar, fit_propensity, DEFAULT_CLAMP};
use super::{eif_perfect, Estimate, UnitTerms};
use crate::dataset::{split_folds, Dataset};
use crate::error::{Error, Result};
use crate::labelmodel::{build_joint_matrices, recover_error_matrices, surrogate_outcomes, CoderErrorModel};
use crate::network::{predict, train, Network, NetworkConfig, TrainReport, TrainingData};
use crate::rng::{derive_seed, stream, tag};

/// Outcome and surrogacy predictions for a list of units.
#[derive(Debug, Clone)]
pub struct Predictions {
    /// One column per outcome head.
    pub outcome: DMatrix<f64>,
    /// `P(T = 1 | representation, Z)`.
    pub score: Vec<f64>,
}

pub trait OutcomeModel {
    fn predict(&self, ds: &Dataset, units: &[usize]) -> Result<Predictions>;

    fn report(&self) -> Option<&TrainReport> {
        None
    }
}

/// Fits the outcome model and surrogacy score on one training portion.
pub trait OutcomeLearner: Sync {
    fn fit(&self, data: &TrainingData, seed: u64) -> Result<Box<dyn OutcomeModel>>;
}

/// The joint network.
#[derive(Debug, Clone)]
pub struct NetworkLearner(pub NetworkConfig);

struct FittedModel {
    network: Network,
    report: TrainReport,
}

impl OutcomeModel for FittedModel {
    fn predict(&self, ds: &Dataset, units: &[usize]) -> Result<Predictions> {
        let out = predict(&self.network, ds, units)?;
        Ok(Predictions {
            score: out.surrogacy_scores(),
            outcome: out.outcome,
        })
    }

    fn report(&self) -> Option<&TrainReport> {
        Some(&self.report)
    }
}

impl OutcomeLearner for NetworkLearner {
    fn fit(&self, data: &TrainingData, seed: u64) -> Result<Box<dyn OutcomeModel>> {
        let config = NetworkConfig {
            seed,
            ..self.0.clone()
        };
        let fit = train(data, &config)?;
        Ok(Box::new(FittedModel {
            network: fit.network,
            report: fit.report,
        }))
    }
}

#[derive(Debug, Clone)]
pub struct SriConfig {
    pub k: usize,
    pub seed: u64,
    pub network: NetworkConfig,
    /// Propensity clamp.
    pub clamp: f64,
}

impl Default for SriConfig {
    fn default() -> Self {
        Self {
            k: 2,
            seed: 0,
            network: NetworkConfig::default(),
            clamp: DEFAULT_CLAMP,
        }
    }
}

/// Which units fed each nuisance model of one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldRecord {
    pub fold: usize,
    pub evaluated: Vec<usize>,
    pub propensity_units: Vec<usize>,
    pub network_units: Vec<usize>,
    pub mbar_units: Vec<usize>,
    pub label_model_units: Vec<usize>,
    pub report: Option<TrainReport>,
    pub error_model: Option<CoderErrorModel>,
}

fn halves(mut units: Vec<usize>, seed: u64, index: u64) -> (Vec<usize>, Vec<usize>) {
    units.shuffle(&mut stream(seed, tag::SPLITS, index));
    let second = units.split_off(units.len().div_ceil(2));
    let mut first = units;
    first.sort_unstable();
    let mut second = second;
    second.sort_unstable();
    (first, second)
}

fn merged(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut v = [a, b].concat();
    v.sort_unstable();
    v
}

fn check_config(ds: &Dataset, cfg: &SriConfig) -> Result<()> {
    if cfg.k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {}", cfg.k)));
    }
    if cfg.k > ds.n() {
        return Err(Error::InvalidConfig(format!("{} folds for {} units", cfg.k, ds.n())));
    }
    if ds.labeled_count() == 0 {
        return Err(Error::NoLabeledUnits("the dataset has no annotated units".into()));
    }
    Ok(())
}

/// Per-fold nuisances evaluated on the held-out units, one `UnitTerms` per
/// outcome column.
struct FoldOutput {
    terms: Vec<(usize, Vec<UnitTerms>)>,
    record: FoldRecord,
}

/// Shared tail of a fold: m-bar per column on the second unlabeled half (the
/// network's own units when the fold has no unannotated units) and
/// evaluation on the held-out units. `outcomes` gives each held-out labeled
/// unit's outcome per column.
#[allow(clippy::too_many_arguments)]
fn evaluate_fold(
    ds: &Dataset,
    model: &dyn OutcomeModel,
    propensity: &super::Propensity,
    mbar_units: &[usize],
    held_out: &[usize],
    p_labeled: f64,
    outcomes: &dyn Fn(usize) -> Result<Vec<f64>>,
) -> Result<Vec<(usize, Vec<UnitTerms>)>> {
    if mbar_units.is_empty() {
        return Err(Error::EmptySplit("no unlabeled units left to fit the outcome regression".into()));
    }
    let fitted = model.predict(ds, mbar_units)?;
    let cols = fitted.outcome.ncols();
    let mut mbar = Vec::with_capacity(cols);
    for c in 0..cols {
        let col: Vec<f64> = fitted.outcome.column(c).iter().copied().collect();
        mbar.push([fit_mbar(ds, mbar_units, &col, 0)?, fit_mbar(ds, mbar_units, &col, 1)?]);
    }
    let pred = model.predict(ds, held_out)?;
    let mut out = Vec::with_capacity(held_out.len());
    for (r, &i) in held_out.iter().enumerate() {
        let o = &ds.observations[i];
        let values = if o.is_labeled() { outcomes(i)? } else { vec![0.0; cols] };
        let terms = (0..cols)
            .map(|c| UnitTerms {
                s: o.is_labeled(),
                t: o.t,
                outcome: values[c],
                mu: pred.outcome[(r, c)],
                score: pred.score[r],
                propensity: propensity.treated(&o.z),
                mbar: [mbar[c][0].predict(&o.z), mbar[c][1].predict(&o.z)],
                p_labeled,
            })
            .collect();
        out.push((i, terms));
    }
    Ok(out)
}

fn assemble(
    name: &str,
    ds: &Dataset,
    cfg: &SriConfig,
    folds: Vec<FoldOutput>,
    weights: &[f64],
) -> Result<Estimate> {
    let n = ds.n();
    let mut per_unit: Vec<Option<Vec<UnitTerms>>> = vec![None; n];
    let mut records = Vec::with_capacity(folds.len());
    for f in folds {
        for (i, terms) in f.terms {
            per_unit[i] = Some(terms);
        }
        records.push(f.record);
    }
    let units: Vec<Vec<UnitTerms>> = per_unit
        .into_iter()
        .map(|u| u.expect("every unit belongs to one fold"))
        .collect();
    let mut psi = [0.0; 2];
    let mut values = [vec![0.0; n], vec![0.0; n]];
    for t in 0..2 {
        for (c, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let column: Vec<UnitTerms> = units.iter().map(|u| u[c]).collect();
            let psi_tc = super::solve_psi(&column, t);
            psi[t] += w * psi_tc;
            for (v, u) in values[t].iter_mut().zip(&column) {
                *v += w * eif_perfect(u, t, psi_tc);
            }
        }
    }
    let mut est = Estimate::from_influence(name, psi, values)?;
    est.k = Some(cfg.k);
    est.seed = Some(cfg.seed);
    est.folds = records;
    Ok(est)
}

pub fn sri_perfect(ds: &Dataset, cfg: &SriConfig) -> Result<Estimate> {
    sri_perfect_with(ds, cfg, &NetworkLearner(cfg.network.clone()))
}

/// Cross-fitted estimator with perfect annotations (first coder's label).
pub fn sri_perfect_with(ds: &Dataset, cfg: &SriConfig, learner: &dyn OutcomeLearner) -> Result<Estimate> {
    check_config(ds, cfg)?;
    let folds = split_folds(ds.n(), cfg.k, derive_seed(cfg.seed, &[tag::FOLDS]))?;
    let p_labeled = ds.labeled_fraction();
    let mut outputs = Vec::with_capacity(cfg.k);
    for fold in 0..cfg.k {
        let run = || -> Result<FoldOutput> {
            let held_out = folds.members(fold);
            let train_units = folds.complement(fold);
            let propensity = fit_propensity(ds, &train_units, cfg.clamp)?;
            let (labeled, unlabeled): (Vec<usize>, Vec<usize>) =
                train_units.iter().partition(|&&i| ds.observations[i].is_labeled());
            let (u1, u2) = halves(unlabeled, cfg.seed, fold as u64);
            let network_units = merged(&labeled, &u1);
            let data = TrainingData::perfect(ds, &network_units);
            let model = learner.fit(&data, derive_seed(cfg.seed, &[tag::INIT, fold as u64]))?;
            let outcome = |i: usize| -> Result<Vec<f64>> {
                Ok(vec![ds.observations[i].primary_label().map_or(0.0, |l| l as f64)])
            };
            let u2 = if u2.is_empty() { network_units.clone() } else { u2 };
            let terms = evaluate_fold(ds, model.as_ref(), &propensity, &u2, &held_out, p_labeled, &outcome)?;
            Ok(FoldOutput {
                terms,
                record: FoldRecord {
                    fold,
                    evaluated: held_out,
                    propensity_units: train_units,
                    network_units,
                    mbar_units: u2,
                    label_model_units: Vec::new(),
                    report: model.report().cloned(),
                    error_model: None,
                },
            })
        };
        outputs.push(run().map_err(|e| e.in_fold(fold))?);
    }
    assemble("sri", ds, cfg, outputs, &[1.0])
}

pub fn sri_noisy(ds: &Dataset, cfg: &SriConfig) -> Result<Estimate> {
    sri_noisy_with(ds, cfg, &NetworkLearner(cfg.network.clone()))
}

/// Cross-fitted estimator with two error-prone coders. Class estimates are
/// combined with weights equal to the integer class codes.
pub fn sri_noisy_with(ds: &Dataset, cfg: &SriConfig, learner: &dyn OutcomeLearner) -> Result<Estimate> {
    check_config(ds, cfg)?;
    if ds.num_coders < 2 {
        return Err(Error::InvalidConfig(format!(
            "the noisy estimator needs two coders, the data has {}",
            ds.num_coders
        )));
    }
    let (strata, _) = ds.strata();
    let strata = (ds.p > 0).then_some(strata);
    let folds = split_folds(ds.n(), cfg.k, derive_seed(cfg.seed, &[tag::FOLDS]))?;
    let p_labeled = ds.labeled_fraction();
    let mut outputs = Vec::with_capacity(cfg.k);
    for fold in 0..cfg.k {
        let run = || -> Result<FoldOutput> {
            let held_out = folds.members(fold);
            let train_units = folds.complement(fold);
            let propensity = fit_propensity(ds, &train_units, cfg.clamp)?;
            let (labeled, unlabeled): (Vec<usize>, Vec<usize>) =
                train_units.iter().partition(|&&i| ds.observations[i].is_labeled());
            let (u1, u2) = halves(unlabeled, cfg.seed, fold as u64);
            let (h1, h2) = halves(labeled, cfg.seed, (cfg.k + fold) as u64);
            let jm = build_joint_matrices(ds, &h1, [0, 1], strata.as_deref())?;
            let cem = recover_error_matrices(&jm)?;
            if !cem.valid {
                return Err(Error::LabelModel(
                    "Assumption 8 violated: a recovered diagonal entry is not above 0.5".into(),
                ));
            }
            let m_of = |i: usize| -> Result<Vec<f64>> {
                let l = &ds.observations[i].labels;
                surrogate_outcomes(l[0], l[1], &cem)
            };
            let network_units = merged(&h2, &u1);
            let surrogate = network_units
                .iter()
                .map(|&i| ds.observations[i].is_labeled().then(|| m_of(i)).transpose())
                .collect::<Result<Vec<_>>>()?;
            let data = TrainingData::noisy(ds, &network_units, &surrogate)?;
            let model = learner.fit(&data, derive_seed(cfg.seed, &[tag::INIT, fold as u64]))?;
            let u2 = if u2.is_empty() { network_units.clone() } else { u2 };
            let terms = evaluate_fold(ds, model.as_ref(), &propensity, &u2, &held_out, p_labeled, &m_of)?;
            Ok(FoldOutput {
                terms,
                record: FoldRecord {
                    fold,
                    evaluated: held_out,
                    propensity_units: train_units,
                    network_units,
                    mbar_units: u2,
                    label_model_units: h1,
                    report: model.report().cloned(),
                    error_model: Some(cem),
                },
            })
        };
        outputs.push(run().map_err(|e| e.in_fold(fold))?);
    }
    let weights: Vec<f64> = (0..ds.num_classes).map(|c| c as f64).collect();
    assemble("sri-noisy", ds, cfg, outputs, &weights)
}
