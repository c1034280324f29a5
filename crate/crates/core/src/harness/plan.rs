use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Perfect,
    Noisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Sri,
    Naive,
    Ppi,
    Dsl,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [Self::Sri, Self::Naive, Self::Ppi, Self::Dsl];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sri => "sri",
            Self::Naive => "naive",
            Self::Ppi => "ppi",
            Self::Dsl => "dsl",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown estimator `{s}` (expected sri, naive, ppi or dsl)")))
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::Perfect => "perfect",
            Design::Noisy => "noisy",
        })
    }
}

/// A Monte Carlo sweep.
///
/// Plan files are flat `key = value` lines; `#` starts a comment and lists are
/// comma separated:
///
/// ```text
/// design = noisy
/// machine_accuracies = 0.7, 0.8, 0.9
/// coder_accuracies = 0.9
/// replications = 100
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SimPlan {
    pub design: Design,
    pub n: usize,
    pub d: usize,
    pub label_fraction: f64,
    pub machine_accuracies: Vec<f64>,
    /// Accuracy shared by both coders; ignored by the perfect design.
    pub coder_accuracies: Vec<f64>,
    pub replications: usize,
    pub estimators: Vec<EstimatorKind>,
    /// Cross-fitting folds; 2 for the perfect design and 5 for the noisy one when unset.
    pub k: Option<usize>,
    pub base_seed: u64,
    /// Seed of the embedding loadings, shared by every replication. Defaults to `base_seed`.
    pub coef_seed: Option<u64>,
    pub oracle_draws: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
}

impl Default for SimPlan {
    fn default() -> Self {
        Self {
            design: Design::Perfect,
            n: 5000,
            d: 64,
            label_fraction: 0.1,
            machine_accuracies: vec![0.7, 0.8, 0.9],
            coder_accuracies: vec![0.9],
            replications: 100,
            estimators: EstimatorKind::ALL.to_vec(),
            k: None,
            base_seed: 0,
            coef_seed: None,
            oracle_draws: 1_000_000,
            learning_rate: 1e-3,
            max_epochs: 200,
            batch_size: 256,
            patience: 5,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse_value(key, v))
        .collect()
}

impl SimPlan {
    /// Sample size, embedding width, replication count and learning rate of
    /// the original study.
    pub fn paper_scale(mut self) -> Self {
        self.n = 20_000;
        self.d = 2048;
        self.replications = 200;
        self.learning_rate = 2e-5;
        self
    }

    pub fn folds(&self) -> usize {
        self.k.unwrap_or(match self.design {
            Design::Perfect => 2,
            Design::Noisy => 5,
        })
    }

    pub fn coder_grid(&self) -> Vec<f64> {
        match self.design {
            Design::Perfect => vec![1.0],
            Design::Noisy => self.coder_accuracies.clone(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.n == 0 || self.d == 0 {
            return bad("n and d must be positive".into());
        }
        if !(self.label_fraction > 0.0 && self.label_fraction < 1.0) {
            return bad(format!("label_fraction {} outside (0, 1)", self.label_fraction));
        }
        if self.machine_accuracies.is_empty() || self.estimators.is_empty() {
            return bad("machine_accuracies and estimators must be non-empty".into());
        }
        if self.design == Design::Noisy && self.coder_accuracies.is_empty() {
            return bad("coder_accuracies must be non-empty for the noisy design".into());
        }
        let coder = if self.design == Design::Noisy { &self.coder_accuracies[..] } else { &[] };
        if let Some(a) = self.machine_accuracies.iter().chain(coder).find(|&&a| !(a > 0.5 && a <= 1.0)) {
            return bad(format!("accuracy {a} outside (0.5, 1.0]"));
        }
        if self.folds() < 2 {
            return bad("k must be at least 2".into());
        }
        if self.oracle_draws < 4 {
            return bad("oracle_draws must be at least 4".into());
        }
        if !(self.learning_rate > 0.0) || self.max_epochs == 0 || self.batch_size == 0 {
            return bad("learning_rate, max_epochs and batch_size must be positive".into());
        }
        Ok(())
    }
}

impl FromStr for SimPlan {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut plan = SimPlan::default();
        let mut paper_scale = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "design" => {
                    plan.design = match value {
                        "perfect" => Design::Perfect,
                        "noisy" => Design::Noisy,
                        _ => return Err(Error::InvalidConfig(format!("unknown design `{value}`"))),
                    }
                }
                "n" => plan.n = parse_value(key, value)?,
                "d" => plan.d = parse_value(key, value)?,
                "label_fraction" => plan.label_fraction = parse_value(key, value)?,
                "machine_accuracies" => plan.machine_accuracies = parse_list(key, value)?,
                "coder_accuracies" => plan.coder_accuracies = parse_list(key, value)?,
                "replications" => plan.replications = parse_value(key, value)?,
                "estimators" => plan.estimators = parse_list(key, value)?,
                "k" => plan.k = Some(parse_value(key, value)?),
                "base_seed" => plan.base_seed = parse_value(key, value)?,
                "coef_seed" => plan.coef_seed = Some(parse_value(key, value)?),
                "oracle_draws" => plan.oracle_draws = parse_value(key, value)?,
                "learning_rate" => plan.learning_rate = parse_value(key, value)?,
                "max_epochs" => plan.max_epochs = parse_value(key, value)?,
                "batch_size" => plan.batch_size = parse_value(key, value)?,
                "patience" => plan.patience = parse_value(key, value)?,
                "paper_scale" => paper_scale = parse_value(key, value)?,
                _ => return Err(Error::InvalidConfig(format!("line {}: unknown key `{key}`", lineno + 1))),
            }
        }
        if paper_scale {
            plan = plan.paper_scale();
        }
        plan.validate()?;
        Ok(plan)
    }
}
