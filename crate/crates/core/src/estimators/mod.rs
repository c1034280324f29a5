//! Cross-fitted surrogate representation inference and baseline estimators
//! with influence-function standard errors.

mod baselines;
mod nuisance;
mod sri;

pub use baselines::{dsl_estimate, naive_estimate, ppi_estimate};
pub use nuisance::{fit_mbar, fit_propensity, Mbar, Propensity, DEFAULT_CLAMP};
pub use sri::{
    sri_noisy, sri_noisy_with, sri_perfect, sri_perfect_with, FoldRecord, NetworkLearner,
    OutcomeLearner, OutcomeModel, Predictions, SriConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const Z_95: f64 = 1.96;

/// Nuisance values for one unit and one outcome column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitTerms {
    pub s: bool,
    pub t: u8,
    /// Annotation, or surrogate outcome `M_c` in the noisy case; unused when `s` is false.
    pub outcome: f64,
    /// Outcome-model prediction.
    pub mu: f64,
    /// Surrogacy score `P(T = 1 | representation, Z)`.
    pub score: f64,
    /// Propensity `P(T = 1 | Z)`.
    pub propensity: f64,
    /// `mbar_t(Z)` for t = 0, 1.
    pub mbar: [f64; 2],
    pub p_labeled: f64,
}

fn level(p1: f64, t: usize) -> f64 {
    if t == 1 {
        p1
    } else {
        1.0 - p1
    }
}

/// `S / P(S=1) * rho_t / pi_t * (L - mu) + 1{T=t} / pi_t * (mu - mbar_t) + mbar_t - psi`.
pub fn eif_perfect(u: &UnitTerms, t: usize, psi: f64) -> f64 {
    let rho = level(u.score, t);
    let pi = level(u.propensity, t);
    let labeled = if u.s {
        rho / pi * (u.outcome - u.mu) / u.p_labeled
    } else {
        0.0
    };
    let treated = if u.t as usize == t {
        (u.mu - u.mbar[t]) / pi
    } else {
        0.0
    };
    labeled + treated + u.mbar[t] - psi
}

/// Same form with the surrogate outcome `M_c`, the class-`c` outcome head and
/// `mbar_{t,c}` carried in `u`.
pub fn eif_noisy(u: &UnitTerms, t: usize, psi_tc: f64) -> f64 {
    eif_perfect(u, t, psi_tc)
}

/// Closed-form root of the estimating equation: the mean of the remaining terms.
pub fn solve_psi(units: &[UnitTerms], t: usize) -> f64 {
    units.iter().map(|u| eif_perfect(u, t, 0.0)).sum::<f64>() / units.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub estimator: String,
    pub psi: [f64; 2],
    pub se: [f64; 2],
    pub diff: f64,
    pub se_diff: f64,
    pub ci: (f64, f64),
    /// Per-unit influence values for each predictor level.
    pub psi_values: [Vec<f64>; 2],
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub folds: Vec<FoldRecord>,
}

fn se_of(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    (values.iter().map(|v| v * v).sum::<f64>() / n / n).sqrt()
}

impl Estimate {
    pub fn from_influence(estimator: &str, psi: [f64; 2], psi_values: [Vec<f64>; 2]) -> Result<Self> {
        let n = psi_values[0].len();
        if n == 0 || psi_values[1].len() != n {
            return Err(Error::Dimension {
                what: "influence values",
                expected: n,
                got: psi_values[1].len(),
            });
        }
        let diff_values: Vec<f64> = psi_values[1].iter().zip(&psi_values[0]).map(|(a, b)| a - b).collect();
        let se_diff = se_of(&diff_values);
        let diff = psi[1] - psi[0];
        if !diff.is_finite() || !se_diff.is_finite() {
            return Err(Error::Numerical(format!("non-finite estimate {diff} (se {se_diff})")));
        }
        Ok(Self {
            estimator: estimator.to_string(),
            psi,
            se: [se_of(&psi_values[0]), se_of(&psi_values[1])],
            diff,
            se_diff,
            ci: (diff - Z_95 * se_diff, diff + Z_95 * se_diff),
            psi_values,
            k: None,
            seed: None,
            folds: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.psi_values[0].len()
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci.0 <= value && value <= self.ci.1
    }

    pub fn summary(&self) -> EstimateSummary {
        EstimateSummary {
            estimator: self.estimator.clone(),
            psi_0: self.psi[0],
            psi_1: self.psi[1],
            diff: self.diff,
            se_diff: self.se_diff,
            ci_low: self.ci.0,
            ci_high: self.ci.1,
            n: self.n(),
            k: self.k,
            seed: self.seed,
        }
    }
}

/// The serialized form of an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub estimator: String,
    pub psi_0: f64,
    pub psi_1: f64,
    pub diff: f64,
    pub se_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub k: Option<usize>,
    pub seed: Option<u64>,
}
