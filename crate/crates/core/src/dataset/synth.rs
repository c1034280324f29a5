use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// How the Gaussian noise enters the embedding coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// One draw per unit shared by every coordinate.
    #[default]
    PerUnit,
    /// An independent draw per coordinate.
    PerCoordinate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub treat_prob: f64,
    pub coef_low: f64,
    pub coef_high: f64,
    pub intercept: f64,
    pub slope: f64,
    pub noise: NoiseMode,
    /// Number of levels of a single discrete covariate; 0 emits empty `z`.
    pub z_levels: usize,
    /// Shift of the label index per covariate level.
    pub z_shift: f64,
    pub seed: u64,
    /// Seed for the embedding loadings. Defaults to `seed`; fix it to keep
    /// the same data-generating process across replications.
    pub coef_seed: Option<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 20_000,
            d: 2048,
            treat_prob: 0.5,
            coef_low: 0.0,
            coef_high: 1.0,
            intercept: 1.0,
            slope: 0.2,
            noise: NoiseMode::PerUnit,
            z_levels: 0,
            z_shift: 0.5,
            seed: 0,
            coef_seed: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.coef_low <= self.coef_high) {
            return Err(Error::InvalidConfig(format!(
                "coef_low {} exceeds coef_high {}",
                self.coef_low, self.coef_high
            )));
        }
        if !(0.0..=1.0).contains(&self.treat_prob) {
            return Err(Error::InvalidConfig(format!(
                "treat_prob {} outside [0, 1]",
                self.treat_prob
            )));
        }
        if self.d == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        Ok(())
    }

    /// Embedding loadings, one per coordinate.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut rng = stream(self.coef_seed.unwrap_or(self.seed), tag::COEFFICIENTS, 0);
        (0..self.d)
            .map(|_| rng.random_range(self.coef_low..=self.coef_high))
            .collect()
    }

    fn gold_from_sum(&self, sum: f64, z: Option<f64>) -> usize {
        let index = self.intercept + self.slope * sum + z.map_or(0.0, |z| self.z_shift * z);
        usize::from(sigmoid(index) > 0.5)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws a dataset from the embedding DGP. All units are annotated with a
/// single label equal to the gold label; corruption and sampling are applied
/// by [`corrupt_labels`] and [`sample_annotations`].
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let alpha = config.coefficients();
    let observations = (0..config.n)
        .map(|i| {
            let mut rng = stream(config.seed, tag::UNITS, i as u64);
            let t = u8::from(rng.random::<f64>() < config.treat_prob);
            let z = (config.z_levels > 0).then(|| rng.random_range(0..config.z_levels) as f64);
            let y_embed: Vec<f64> = match config.noise {
                NoiseMode::PerUnit => {
                    let eps: f64 = rng.sample(StandardNormal);
                    alpha.iter().map(|a| a * t as f64 + eps).collect()
                }
                NoiseMode::PerCoordinate => alpha
                    .iter()
                    .map(|a| a * t as f64 + rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            };
            let gold = config.gold_from_sum(y_embed.iter().sum(), z);
            Observation {
                t,
                y_embed,
                z: z.into_iter().collect(),
                s: 1,
                labels: vec![gold],
                gold: Some(gold),
            }
        })
        .collect();
    Dataset::new(
        observations,
        config.d,
        usize::from(config.z_levels > 0),
        2,
        1,
    )
}

/// Reference effect `P(L=1 | T=1) - P(L=1 | T=0)` of the DGP with the
/// configured loadings, by brute-force simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEffect {
    pub effect: f64,
    pub se: f64,
    pub draws: usize,
}

pub fn monte_carlo_effect(config: &SynthConfig, draws: usize, seed: u64) -> Result<OracleEffect> {
    config.validate()?;
    if draws < 4 {
        return Err(Error::InvalidConfig("oracle needs at least 4 draws".into()));
    }
    let loading: f64 = config.coefficients().iter().sum();
    let d = config.d as f64;
    let mut rng = stream(seed, tag::ORACLE, 0);
    let mut hits = [0usize; 2];
    let per_arm = draws / 2;
    for arm in 0..2 {
        for _ in 0..per_arm {
            let noise: f64 = rng.sample(StandardNormal);
            let noise_sum = match config.noise {
                NoiseMode::PerUnit => d * noise,
                NoiseMode::PerCoordinate => d.sqrt() * noise,
            };
            let z = (config.z_levels > 0).then(|| rng.random_range(0..config.z_levels) as f64);
            hits[arm] += config.gold_from_sum(arm as f64 * loading + noise_sum, z);
        }
    }
    let p0 = hits[0] as f64 / per_arm as f64;
    let p1 = hits[1] as f64 / per_arm as f64;
    Ok(OracleEffect {
        effect: p1 - p0,
        se: ((p1 * (1.0 - p1) + p0 * (1.0 - p0)) / per_arm as f64).sqrt(),
        draws: 2 * per_arm,
    })
}

/// Keeps `label` with probability `accuracy`, else draws uniformly among the
/// other classes.
pub fn flip_label<R: Rng>(label: usize, accuracy: f64, num_classes: usize, rng: &mut R) -> usize {
    if rng.random::<f64>() < accuracy {
        return label;
    }
    let other = rng.random_range(0..num_classes - 1);
    if other >= label {
        other + 1
    } else {
        other
    }
}

/// Replaces each unit's labels by one corrupted copy of the gold label per
/// coder. Flips are independent across coders and units.
pub fn corrupt_labels(dataset: &Dataset, coder_accuracies: &[f64], seed: u64) -> Result<Dataset> {
    if coder_accuracies.is_empty() {
        return Err(Error::InvalidConfig("at least one coder accuracy required".into()));
    }
    if let Some(a) = coder_accuracies.iter().find(|&&a| !(a > 0.5 && a <= 1.0)) {
        return Err(Error::InvalidConfig(format!(
            "coder accuracy {a} outside (0.5, 1.0]: coders must be more likely right than wrong"
        )));
    }
    let mut out = dataset.clone();
    for (i, o) in out.observations.iter_mut().enumerate() {
        let gold = o
            .gold
            .ok_or_else(|| Error::InvalidConfig(format!("unit {i} has no gold label")))?;
        if o.s == 0 {
            continue;
        }
        let mut rng = stream(seed, tag::CORRUPTION, i as u64);
        o.labels = coder_accuracies
            .iter()
            .map(|&a| flip_label(gold, a, dataset.num_classes, &mut rng))
            .collect();
    }
    out.num_coders = coder_accuracies.len();
    Ok(out)
}

/// Keeps annotations on a uniformly random subset of `round(n * fraction)`
/// units and removes them elsewhere. Gold labels are kept for evaluation.
pub fn sample_annotations(dataset: &Dataset, label_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(label_fraction > 0.0 && label_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "label fraction {label_fraction} outside (0, 1]"
        )));
    }
    if let Some(i) = dataset.observations.iter().position(|o| o.s == 0) {
        return Err(Error::InvalidConfig(format!(
            "unit {i} is already unannotated; sampling expects a fully annotated dataset"
        )));
    }
    let n = dataset.n();
    let keep = (n as f64 * label_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, tag::ANNOTATION, 0));
    let mut out = dataset.clone();
    for &i in &order[keep..] {
        let o = &mut out.observations[i];
        o.s = 0;
        o.labels.clear();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
}

impl FoldAssignment {
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }

    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Balanced random partition of `0..n` into `k` folds.
pub fn split_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 1 || k > n {
        return Err(Error::InvalidConfig(format!(
            "fold count {k} must lie in 1..={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, tag::FOLDS, 0));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(FoldAssignment { fold_of, k })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n,
            d: 16,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn empty_config_yields_empty_dataset() {
        let ds = generate_synthetic(&small(0, 1)).unwrap();
        assert_eq!(ds.n(), 0);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&small(50, 3)).unwrap();
        let b = generate_synthetic(&small(50, 3)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(50, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn per_unit_noise_is_shared_across_coordinates() {
        let ds = generate_synthetic(&small(20, 9)).unwrap();
        let alpha = small(20, 9).coefficients();
        for o in &ds.observations {
            let eps0 = o.y_embed[0] - alpha[0] * o.t as f64;
            for (y, a) in o.y_embed.iter().zip(&alpha) {
                assert!((y - a * o.t as f64 - eps0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_slope_positive_intercept_labels_everything_one() {
        let cfg = SynthConfig {
            slope: 0.0,
            intercept: 0.3,
            ..small(200, 5)
        };
        let ds = generate_synthetic(&cfg).unwrap();
        assert!(ds.observations.iter().all(|o| o.gold == Some(1)));
    }

    #[test]
    fn perfect_coders_reproduce_gold() {
        let ds = generate_synthetic(&small(300, 2)).unwrap();
        let c = corrupt_labels(&ds, &[1.0, 1.0], 8).unwrap();
        assert_eq!(c.num_coders, 2);
        for o in &c.observations {
            assert_eq!(o.labels, vec![o.gold.unwrap(); 2]);
        }
    }

    #[test]
    fn corruption_rejects_uninformative_coders() {
        let ds = generate_synthetic(&small(10, 2)).unwrap();
        assert!(corrupt_labels(&ds, &[0.5], 1).is_err());
        assert!(corrupt_labels(&ds, &[0.9, 1.2], 1).is_err());
    }

    #[test]
    fn multiclass_flips_never_return_the_true_class() {
        let mut rng = stream(1, 99, 0);
        for label in 0..4 {
            for _ in 0..200 {
                let l = flip_label(label, 0.0, 4, &mut rng);
                assert_ne!(l, label);
                assert!(l < 4);
            }
        }
    }

    #[test]
    fn sampling_keeps_exact_count() {
        let ds = generate_synthetic(&small(101, 2)).unwrap();
        let s = sample_annotations(&ds, 0.1, 3).unwrap();
        assert_eq!(s.labeled_count(), 10);
        assert!(s
            .observations
            .iter()
            .all(|o| (o.s == 1) == !o.labels.is_empty() && o.gold.is_some()));
        assert_eq!(sample_annotations(&ds, 1.0, 3).unwrap().labeled_count(), 101);
        assert!(sample_annotations(&ds, 0.0, 3).is_err());
        assert!(sample_annotations(&s, 0.5, 3).is_err());
    }

    #[test]
    fn folds_balance_and_remainder() {
        assert_eq!(split_folds(10, 2, 1).unwrap().sizes(), vec![5, 5]);
        let mut sizes = split_folds(11, 2, 1).unwrap().sizes();
        sizes.sort();
        assert_eq!(sizes, vec![5, 6]);
        assert!(split_folds(3, 4, 1).is_err());
        assert!(split_folds(3, 0, 1).is_err());
    }
}
