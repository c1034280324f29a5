//! Assumption checks: distance correlation, the stratified equivalence
//! permutation test, coder agreement and coder accuracy against gold labels.

mod dcor;

pub use dcor::{distance_correlation, CenteredDistances, DistanceCorrelation};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

pub const LEVEL: f64 = 0.05;

/// Projection of the rows of `y` on their leading principal components.
pub fn pca_reduce(y: &DMatrix<f64>, dims: usize) -> DMatrix<f64> {
    let (n, d) = y.shape();
    let mut centered = y.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let dims = dims.min(d).min(n);
    if n < d {
        // Gram trick: scores are eigenvectors of X X^T scaled by sqrt(eigenvalue)
        let eig = (&centered * centered.transpose()).symmetric_eigen();
        let order = sorted_desc(eig.eigenvalues.as_slice());
        DMatrix::from_fn(n, dims, |i, k| {
            let j = order[k];
            eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt()
        })
    } else {
        let eig = (centered.transpose() * &centered / (n.max(2) - 1) as f64).symmetric_eigen();
        let order = sorted_desc(eig.eigenvalues.as_slice());
        let basis = DMatrix::from_fn(d, dims, |r, k| eig.eigenvectors[(r, order[k])]);
        centered * basis
    }
}

fn sorted_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

fn one_hot(labels: &[usize], classes: usize) -> DMatrix<f64> {
    DMatrix::from_fn(labels.len(), classes, |i, c| f64::from(u8::from(labels[i] == c)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DependenceMeasure {
    #[default]
    DistanceCorrelation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivTestConfig {
    pub delta: f64,
    pub b: usize,
    pub pca_dims: usize,
    pub seed: u64,
    pub measure: DependenceMeasure,
}

impl Default for EquivTestConfig {
    fn default() -> Self {
        Self {
            delta: 0.0,
            b: 999,
            pca_dims: 30,
            seed: 0,
            measure: DependenceMeasure::DistanceCorrelation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumStatistic {
    pub class: usize,
    pub size: usize,
    /// Dependence between the two coders.
    pub d1: f64,
    /// Dependence between the reduced embedding and the coder pair.
    pub d2: f64,
    pub t1: f64,
    pub t2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivTestResult {
    pub delta: f64,
    pub p_value: f64,
    pub t_observed: f64,
    pub t_permuted: Vec<f64>,
    pub per_stratum: Vec<StratumStatistic>,
    /// Smallest margin with `p <= 0.05`; `None` when no margin reaches it.
    pub equivalence_interval: Option<f64>,
    pub warnings: Vec<String>,
}

/// Monte Carlo p-value `(1 + #{T_b <= T}) / (B + 1)`.
pub fn monte_carlo_p(t: f64, permuted: &[f64]) -> f64 {
    let hits = permuted.iter().filter(|&&tb| tb <= t).count();
    (1 + hits) as f64 / (permuted.len() + 1) as f64
}

fn shifted(d: f64, delta: f64) -> f64 {
    (d - delta).max(0.0)
}

/// Tests, within strata of the gold label, that the two coders are
/// independent of each other and of the embedding. The coder pair is permuted
/// jointly within each stratum; permuted statistics carry no margin, so small
/// p-values say the observed dependence exceeds chance by less than `delta`.
pub fn equivalence_permutation_test(ds: &Dataset, units: &[usize], config: &EquivTestConfig) -> Result<EquivTestResult> {
    if config.b == 0 {
        return Err(Error::InvalidConfig("permutation count must be at least 1".into()));
    }
    if !(config.delta >= 0.0) {
        return Err(Error::InvalidConfig(format!("equivalence margin {} is negative", config.delta)));
    }
    if config.pca_dims == 0 || config.pca_dims > ds.d {
        return Err(Error::InvalidConfig(format!(
            "PCA dimension {} outside [1, {}]",
            config.pca_dims, ds.d
        )));
    }
    if ds.num_coders < 2 {
        return Err(Error::InvalidConfig("the test needs two coders".into()));
    }
    let mut warnings = Vec::new();
    if config.b < 19 {
        warnings.push(format!("B = {} is too coarse for a 0.05 level", config.b));
    }
    let units: Vec<usize> = units
        .iter()
        .copied()
        .filter(|&i| ds.observations[i].is_labeled())
        .collect();
    if let Some(&i) = units.iter().find(|&&i| ds.observations[i].gold.is_none()) {
        return Err(Error::InvalidConfig(format!("unit {i} has no gold label")));
    }
    let y = DMatrix::from_fn(units.len(), ds.d, |r, c| ds.observations[units[r]].y_embed[c]);
    let reduced = pca_reduce(&y, config.pca_dims);
    let k = ds.num_classes;

    struct Stratum {
        class: usize,
        l1: CenteredDistances,
        l2: CenteredDistances,
        embed: CenteredDistances,
        pair: CenteredDistances,
    }
    let mut strata = Vec::new();
    for class in 0..k {
        let rows: Vec<usize> = (0..units.len())
            .filter(|&r| ds.observations[units[r]].gold == Some(class))
            .collect();
        if rows.is_empty() {
            continue;
        }
        if rows.len() < 2 {
            return Err(Error::EmptySplit(format!("gold stratum {class} has fewer than 2 units")));
        }
        let l1: Vec<usize> = rows.iter().map(|&r| ds.observations[units[r]].labels[0]).collect();
        let l2: Vec<usize> = rows.iter().map(|&r| ds.observations[units[r]].labels[1]).collect();
        let (h1, h2) = (one_hot(&l1, k), one_hot(&l2, k));
        let mut pair = DMatrix::zeros(rows.len(), 2 * k);
        pair.columns_mut(0, k).copy_from(&h1);
        pair.columns_mut(k, k).copy_from(&h2);
        strata.push(Stratum {
            class,
            l1: CenteredDistances::new(&h1),
            l2: CenteredDistances::new(&h2),
            embed: CenteredDistances::new(&reduced.select_rows(&rows)),
            pair: CenteredDistances::new(&pair),
        });
    }
    if strata.is_empty() {
        return Err(Error::EmptySplit("no gold-labeled units".into()));
    }

    let mut per_stratum = Vec::new();
    for s in &strata {
        let d1 = s.l1.correlation(&s.l2, None);
        let d2 = s.embed.correlation(&s.pair, None);
        if s.embed.degenerate() || s.l1.degenerate() || s.l2.degenerate() {
            warnings.push(format!("stratum {}: zero-variance input, dependence set to 0", s.class));
        }
        per_stratum.push(StratumStatistic {
            class: s.class,
            size: s.embed.len(),
            d1,
            d2,
            t1: shifted(d1, config.delta),
            t2: shifted(d2, config.delta),
        });
    }
    let raw_max = per_stratum.iter().map(|s| s.d1.max(s.d2)).fold(0.0, f64::max);
    let t_observed = observed_at(&per_stratum, config.delta);

    let t_permuted: Vec<f64> = (0..config.b)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(config.seed, tag::PERMUTATION, b as u64);
            strata
                .iter()
                .map(|s| {
                    let mut pair: Vec<usize> = (0..s.embed.len()).collect();
                    pair.shuffle(&mut rng);
                    // the joint permutation leaves the coder-coder dependence
                    // intact, so that statistic is referred to coder 2 permuted alone
                    let mut second = pair.clone();
                    second.shuffle(&mut rng);
                    s.l1.correlation(&s.l2, Some(&second)).max(s.embed.correlation(&s.pair, Some(&pair)))
                })
                .fold(0.0, f64::max)
        })
        .collect();

    let p_value = monte_carlo_p(t_observed, &t_permuted);
    let equivalence_interval = equivalence_interval(&per_stratum, &t_permuted, raw_max);
    Ok(EquivTestResult {
        delta: config.delta,
        p_value,
        t_observed,
        t_permuted,
        per_stratum,
        equivalence_interval,
        warnings,
    })
}

fn observed_at(stats: &[StratumStatistic], delta: f64) -> f64 {
    stats
        .iter()
        .map(|s| shifted(s.d1, delta).max(shifted(s.d2, delta)))
        .fold(0.0, f64::max)
}

impl EquivTestResult {
    /// p-value at another margin with the same permutation draws.
    pub fn p_value_at(&self, delta: f64) -> f64 {
        monte_carlo_p(observed_at(&self.per_stratum, delta), &self.t_permuted)
    }
}

/// Bisection over the margin with the permutation draws held fixed.
fn equivalence_interval(stats: &[StratumStatistic], permuted: &[f64], upper: f64) -> Option<f64> {
    let p_at = |delta: f64| monte_carlo_p(observed_at(stats, delta), permuted);
    if p_at(upper) > LEVEL {
        return None;
    }
    if p_at(0.0) <= LEVEL {
        return Some(0.0);
    }
    let (mut lo, mut hi) = (0.0, upper);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if p_at(mid) <= LEVEL {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    /// Exactly at the threshold, which the strict inequality rejects.
    Borderline,
    Fail,
    NotEvaluable,
}

fn status(rate: Option<f64>) -> CheckStatus {
    match rate {
        None => CheckStatus::NotEvaluable,
        Some(r) if r > 0.5 => CheckStatus::Pass,
        Some(0.5) => CheckStatus::Borderline,
        Some(_) => CheckStatus::Fail,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementCell {
    pub class: usize,
    /// `None` when pooled over the predictor.
    pub t: Option<u8>,
    pub stratum: usize,
    pub units: usize,
    pub rate: Option<f64>,
    pub status: CheckStatus,
}

/// `P(L1 = L2 = l, T = t | stratum, S = 1)` per cell, or with `pooled_t`
/// `P(L1 = L2 = l | stratum, S = 1)`.
pub fn agreement_check(ds: &Dataset, units: &[usize], strata: Option<&[usize]>, pooled_t: bool) -> Result<Vec<AgreementCell>> {
    if ds.num_coders < 2 {
        return Err(Error::InvalidConfig("agreement needs two coders".into()));
    }
    let num_strata = strata.map_or(1, |s| s.iter().copied().max().map_or(1, |m| m + 1));
    let mut totals = vec![0usize; num_strata];
    let mut agree = vec![vec![[0usize; 2]; ds.num_classes]; num_strata];
    for &i in units {
        let o = &ds.observations[i];
        if !o.is_labeled() {
            continue;
        }
        let st = strata.map_or(0, |s| s[i]);
        totals[st] += 1;
        if o.labels[0] == o.labels[1] {
            agree[st][o.labels[0]][o.t as usize] += 1;
        }
    }
    let mut cells = Vec::new();
    for st in 0..num_strata {
        for class in 0..ds.num_classes {
            let counts = agree[st][class];
            let ts: Vec<Option<u8>> = if pooled_t { vec![None] } else { vec![Some(0), Some(1)] };
            for t in ts {
                let hits = t.map_or(counts[0] + counts[1], |t| counts[t as usize]);
                let rate = (totals[st] > 0).then(|| hits as f64 / totals[st] as f64);
                cells.push(AgreementCell {
                    class,
                    t,
                    stratum: st,
                    units: totals[st],
                    rate,
                    status: status(rate),
                });
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub coder: usize,
    /// `confusion[c][l] = P(L_j = l | L = c)`; `None` rows have no gold units.
    pub confusion: Vec<Option<Vec<f64>>>,
    pub status: Vec<CheckStatus>,
}

pub fn accuracy_check(ds: &Dataset, units: &[usize], coder: usize) -> Result<AccuracyReport> {
    if coder >= ds.num_coders {
        return Err(Error::InvalidConfig(format!("coder {coder} out of {}", ds.num_coders)));
    }
    let k = ds.num_classes;
    let mut counts = vec![vec![0usize; k]; k];
    for &i in units {
        let o = &ds.observations[i];
        if let (true, Some(g)) = (o.is_labeled(), o.gold) {
            counts[g][o.labels[coder]] += 1;
        }
    }
    let confusion: Vec<Option<Vec<f64>>> = counts
        .iter()
        .map(|row| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row.iter().map(|&c| c as f64 / n as f64).collect())
        })
        .collect();
    let status = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| status(row.as_ref().map(|r| r[c])))
        .collect();
    Ok(AccuracyReport {
        coder,
        confusion,
        status,
    })
}
