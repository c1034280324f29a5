//! Observational data model, synthetic data generation, label corruption,
//! annotation sampling and fold assignment.

mod csv_io;
mod synth;

pub use csv_io::{load_csv, write_csv, CsvSchema};
pub use synth::{
    corrupt_labels, flip_label, generate_synthetic, monte_carlo_effect, sample_annotations,
    split_folds, FoldAssignment, NoiseMode, OracleEffect, SynthConfig,
};

use crate::error::{Error, Result};

/// One unit of the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Binary predictor of interest.
    pub t: u8,
    /// Embedding of the unit's unstructured content.
    pub y_embed: Vec<f64>,
    /// Control covariates, possibly empty.
    pub z: Vec<f64>,
    /// Annotation indicator.
    pub s: u8,
    /// One label per coder; empty when `s == 0`.
    pub labels: Vec<usize>,
    /// True label, known only for synthetic data or a researcher-coded gold set.
    pub gold: Option<usize>,
}

impl Observation {
    pub fn is_labeled(&self) -> bool {
        self.s == 1
    }

    /// Label of the first coder, the outcome used by single-coder estimators.
    pub fn primary_label(&self) -> Option<usize> {
        self.labels.first().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    /// Embedding dimension.
    pub d: usize,
    /// Covariate length.
    pub p: usize,
    /// Number of label classes, `C + 1`.
    pub num_classes: usize,
    /// Number of coders whose labels are attached to annotated units.
    pub num_coders: usize,
    /// Optional machine predictions, one per unit, used by the baseline estimators.
    pub predictions: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        observations: Vec<Observation>,
        d: usize,
        p: usize,
        num_classes: usize,
        num_coders: usize,
    ) -> Result<Self> {
        let ds = Self {
            observations,
            d,
            p,
            num_classes,
            num_coders,
            predictions: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn with_predictions(mut self, preds: Vec<f64>) -> Result<Self> {
        if preds.len() != self.n() {
            return Err(Error::Dimension {
                what: "machine predictions",
                expected: self.n(),
                got: preds.len(),
            });
        }
        self.predictions = Some(preds);
        Ok(self)
    }

    /// Checks the per-unit and cross-unit invariants.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        for (i, o) in self.observations.iter().enumerate() {
            let bad = |msg: String| Error::InvalidConfig(format!("unit {i}: {msg}"));
            if o.t > 1 {
                return Err(bad(format!("t must be 0 or 1, got {}", o.t)));
            }
            if o.s > 1 {
                return Err(bad(format!("s must be 0 or 1, got {}", o.s)));
            }
            if o.y_embed.len() != self.d {
                return Err(bad(format!("embedding length {} != {}", o.y_embed.len(), self.d)));
            }
            if o.z.len() != self.p {
                return Err(bad(format!("covariate length {} != {}", o.z.len(), self.p)));
            }
            match (o.s, o.labels.len()) {
                (1, k) if k != self.num_coders => {
                    return Err(bad(format!("expected {} labels, got {k}", self.num_coders)))
                }
                (0, k) if k != 0 => return Err(bad("unlabeled unit carries labels".into())),
                _ => {}
            }
            if let Some(l) = o.labels.iter().find(|&&l| l >= self.num_classes) {
                return Err(bad(format!("label {l} outside 0..{}", self.num_classes)));
            }
            if let Some(g) = o.gold {
                if g >= self.num_classes {
                    return Err(bad(format!("gold label {g} outside 0..{}", self.num_classes)));
                }
            }
        }
        if let Some(p) = &self.predictions {
            if p.len() != self.n() {
                return Err(Error::Dimension {
                    what: "machine predictions",
                    expected: self.n(),
                    got: p.len(),
                });
            }
        }
        Ok(())
    }

    pub fn labeled_count(&self) -> usize {
        self.observations.iter().filter(|o| o.is_labeled()).count()
    }

    /// Sample share of annotated units.
    pub fn labeled_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.labeled_count() as f64 / self.n() as f64
        }
    }

    /// Difference in gold-label group means, the in-sample effect.
    pub fn gold_effect(&self) -> Option<f64> {
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for o in &self.observations {
            let g = o.gold? as f64;
            sums[o.t as usize] += g;
            counts[o.t as usize] += 1;
        }
        if counts[0] == 0 || counts[1] == 0 {
            return None;
        }
        Some(sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64)
    }

    /// Discrete strata from the covariate vectors: units with identical `z`
    /// share a stratum. Strata are numbered in order of first appearance after
    /// sorting the distinct covariate vectors.
    pub fn strata(&self) -> (Vec<usize>, usize) {
        let mut keys: Vec<Vec<u64>> = self
            .observations
            .iter()
            .map(|o| o.z.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut distinct = keys.clone();
        distinct.sort();
        distinct.dedup();
        let ids = keys
            .drain(..)
            .map(|k| distinct.binary_search(&k).expect("key present"))
            .collect();
        (ids, distinct.len())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            observations: indices.iter().map(|&i| self.observations[i].clone()).collect(),
            d: self.d,
            p: self.p,
            num_classes: self.num_classes,
            num_coders: self.num_coders,
            predictions: self
                .predictions
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
        }
    }
}
