use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sri_core::dataset::{
    corrupt_labels, flip_label, generate_synthetic, sample_annotations, Dataset, Observation, SynthConfig,
};
use sri_core::estimators::{
    dsl_estimate, eif_noisy, eif_perfect, fit_propensity, naive_estimate, ppi_estimate, sri_noisy,
    sri_noisy_with, sri_perfect, sri_perfect_with, Estimate, OutcomeLearner, OutcomeModel, Predictions,
    SriConfig, UnitTerms,
};
use sri_core::network::{NetworkConfig, TrainingData, Variant};

/// Predictions that ignore the training data.
struct Fixed;

struct FixedModel {
    noisy: bool,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl OutcomeModel for FixedModel {
    fn predict(&self, ds: &Dataset, units: &[usize]) -> sri_core::Result<Predictions> {
        let mu: Vec<f64> = units
            .iter()
            .map(|&i| logistic(1.0 + 0.2 * ds.observations[i].y_embed.iter().sum::<f64>()))
            .collect();
        let score = units
            .iter()
            .map(|&i| logistic(0.3 * ds.observations[i].y_embed.iter().sum::<f64>() - 0.4))
            .collect();
        let outcome = if self.noisy {
            DMatrix::from_fn(units.len(), 2, |r, c| if c == 1 { mu[r] } else { 1.0 - mu[r] })
        } else {
            DMatrix::from_column_slice(units.len(), 1, &mu)
        };
        Ok(Predictions { outcome, score })
    }
}

impl OutcomeLearner for Fixed {
    fn fit(&self, data: &TrainingData, _seed: u64) -> sri_core::Result<Box<dyn OutcomeModel>> {
        Ok(Box::new(FixedModel {
            noisy: data.variant == Variant::Noisy,
        }))
    }
}

/// Predicts each unit's own first-coder label and scores with the treated share.
struct Memorize;

struct MemorizeModel {
    share: f64,
}

impl OutcomeModel for MemorizeModel {
    fn predict(&self, ds: &Dataset, units: &[usize]) -> sri_core::Result<Predictions> {
        let mu: Vec<f64> = units
            .iter()
            .map(|&i| ds.observations[i].primary_label().unwrap() as f64)
            .collect();
        Ok(Predictions {
            outcome: DMatrix::from_column_slice(units.len(), 1, &mu),
            score: vec![self.share; units.len()],
        })
    }
}

impl OutcomeLearner for Memorize {
    fn fit(&self, data: &TrainingData, _seed: u64) -> sri_core::Result<Box<dyn OutcomeModel>> {
        let share = data.t.iter().sum::<f64>() / data.t.len() as f64;
        Ok(Box::new(MemorizeModel { share }))
    }
}

fn synthetic(n: usize, d: usize, fraction: f64, seed: u64) -> Dataset {
    let cfg = SynthConfig {
        n,
        d,
        seed,
        coef_seed: Some(7),
        ..Default::default()
    };
    sample_annotations(&generate_synthetic(&cfg).unwrap(), fraction, seed + 1).unwrap()
}

fn with_flipped_predictions(ds: Dataset, accuracy: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let preds = ds
        .observations
        .iter()
        .map(|o| flip_label(o.gold.unwrap(), accuracy, 2, &mut rng) as f64)
        .collect();
    ds.with_predictions(preds).unwrap()
}

fn fixed_point(e: &Estimate) {
    for t in 0..2 {
        let mean = e.psi_values[t].iter().sum::<f64>() / e.n() as f64;
        assert!(mean.abs() < 1e-10, "{}: mean influence {mean}", e.estimator);
    }
}

#[test]
fn hand_evaluated_noisy_influence() {
    // M_1 = 1.265625 for two agreeing 0.9/0.1 coders
    let u = UnitTerms {
        s: true,
        t: 1,
        outcome: 1.265625,
        mu: 0.8,
        score: 0.6,
        propensity: 0.5,
        mbar: [0.3, 0.7],
        p_labeled: 0.25,
    };
    let expected = 4.0 * (0.6 / 0.5) * (1.265625 - 0.8) + 2.0 * (0.8 - 0.7) + 0.7 - 0.5;
    assert!((eif_noisy(&u, 1, 0.5) - expected).abs() < 1e-14);
    let v = UnitTerms { t: 0, s: false, ..u };
    assert!((eif_perfect(&v, 0, 0.1) - ((0.8 - 0.3) / 0.5 + 0.3 - 0.1)).abs() < 1e-14);
}

#[test]
fn influence_values_average_to_zero() {
    let ds = with_flipped_predictions(synthetic(1200, 8, 0.2, 3), 0.8, 1);
    let cfg = SriConfig { k: 3, seed: 4, ..Default::default() };
    fixed_point(&sri_perfect_with(&ds, &cfg, &Fixed).unwrap());
    fixed_point(&naive_estimate(&ds).unwrap());
    fixed_point(&dsl_estimate(&ds).unwrap());
    fixed_point(&ppi_estimate(&ds).unwrap());
    let noisy = corrupt_labels(&generate_synthetic(&SynthConfig { n: 4000, d: 64, seed: 5, ..Default::default() }).unwrap(), &[0.9, 0.85], 6).unwrap();
    let noisy = sample_annotations(&noisy, 0.5, 7).unwrap();
    fixed_point(&sri_noisy_with(&noisy, &cfg, &Fixed).unwrap());
}

#[test]
fn identity_coders_reduce_to_the_perfect_estimator() {
    let base = synthetic(3000, 8, 0.3, 11);
    let obs = base
        .observations
        .iter()
        .map(|o| Observation {
            labels: o.labels.iter().map(|&l| vec![l, l]).next().unwrap_or_default(),
            ..o.clone()
        })
        .collect();
    let twin = Dataset::new(obs, base.d, base.p, 2, 2).unwrap();
    for k in [2, 5] {
        let cfg = SriConfig { k, seed: 8, ..Default::default() };
        let p = sri_perfect_with(&twin, &cfg, &Fixed).unwrap();
        let q = sri_noisy_with(&twin, &cfg, &Fixed).unwrap();
        for f in &q.folds {
            let a = &f.error_model.as_ref().unwrap().a;
            assert!((&a[0] - DMatrix::identity(2, 2)).amax() < 1e-12);
        }
        assert!((p.diff - q.diff).abs() < 1e-6, "{} vs {}", p.diff, q.diff);
        assert!((p.se_diff - q.se_diff).abs() < 1e-6);
        for t in 0..2 {
            assert!((p.psi[t] - q.psi[t]).abs() < 1e-6);
        }
    }
}

#[test]
fn all_labeled_with_exact_outcome_gives_the_labeled_mean() {
    let ds = synthetic(2000, 8, 1.0, 21);
    let cfg = SriConfig { k: 2, seed: 1, ..Default::default() };
    let e = sri_perfect_with(&ds, &cfg, &Memorize).unwrap();
    // the outcome residual vanishes, leaving the m-bar adjusted mean
    let mut expected = [0.0; 2];
    for f in &e.folds {
        let share = f.propensity_units.iter().map(|&i| ds.observations[i].t as f64).sum::<f64>()
            / f.propensity_units.len() as f64;
        for t in 0..2u8 {
            let pi = if t == 1 { share } else { 1.0 - share };
            let (s, n) = f.mbar_units.iter().filter(|&&i| ds.observations[i].t == t).fold((0.0, 0.0), |(s, n), &i| {
                (s + ds.observations[i].primary_label().unwrap() as f64, n + 1.0)
            });
            let mbar = s / n;
            for &i in &f.evaluated {
                let o = &ds.observations[i];
                let l = o.primary_label().unwrap() as f64;
                expected[t as usize] += mbar + if o.t == t { (l - mbar) / pi } else { 0.0 };
            }
        }
    }
    for t in 0..2 {
        assert!((e.psi[t] - expected[t] / ds.n() as f64).abs() < 1e-12);
        let (s, n) = ds.observations.iter().filter(|o| o.t as usize == t).fold((0.0, 0.0), |(s, n), o| {
            (s + o.primary_label().unwrap() as f64, n + 1.0)
        });
        assert!((e.psi[t] - s / n).abs() < 0.02);
    }
}

#[test]
fn folds_never_train_on_their_own_units() {
    let ds = synthetic(1500, 8, 0.2, 5);
    let e = sri_perfect_with(&ds, &SriConfig { k: 4, seed: 2, ..Default::default() }, &Fixed).unwrap();
    let mut seen = vec![0; ds.n()];
    for f in &e.folds {
        for &i in &f.evaluated {
            seen[i] += 1;
            assert!(f.propensity_units.binary_search(&i).is_err());
            assert!(f.network_units.binary_search(&i).is_err());
            assert!(f.mbar_units.binary_search(&i).is_err());
        }
        assert!(f.network_units.iter().all(|i| f.mbar_units.binary_search(i).is_err()));
    }
    assert!(seen.iter().all(|&c| c == 1));
}

#[test]
fn naive_estimator_identities() {
    let ds = synthetic(4000, 8, 0.1, 31);
    let gold: Vec<f64> = ds.observations.iter().map(|o| o.gold.unwrap() as f64).collect();
    let exact = naive_estimate(&ds.clone().with_predictions(gold).unwrap()).unwrap();
    assert!((exact.diff - ds.gold_effect().unwrap()).abs() < 1e-12);
    let flat = naive_estimate(&ds.clone().with_predictions(vec![0.7; ds.n()]).unwrap()).unwrap();
    assert_eq!(flat.diff, 0.0);
}

#[test]
fn symmetric_flips_attenuate_the_naive_estimate() {
    let ds = synthetic(40_000, 8, 0.1, 41);
    let truth = ds.gold_effect().unwrap();
    let e = naive_estimate(&with_flipped_predictions(ds, 0.8, 3)).unwrap();
    assert!((e.diff - 0.6 * truth).abs() < 3.0 * e.se_diff, "{} vs {}", e.diff, 0.6 * truth);
}

#[test]
fn dsl_identities() {
    let ds = synthetic(3000, 8, 0.2, 51);
    // predictions equal to the annotation on labeled units, noise elsewhere
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let preds: Vec<f64> = ds
        .observations
        .iter()
        .map(|o| o.primary_label().map_or_else(|| rng.random_range(0.0..1.0), |l| l as f64))
        .collect();
    let ds = ds.with_predictions(preds.clone()).unwrap();
    let e = dsl_estimate(&ds).unwrap();
    for t in 0..2u8 {
        let (s, n) = ds.observations.iter().zip(&preds).filter(|(o, _)| o.t == t).fold((0.0, 0.0), |(s, n), (_, p)| (s + p, n + 1.0));
        assert_eq!(e.psi[t as usize], s / n);
    }

    let all = synthetic(1000, 8, 1.0, 52);
    let all = with_flipped_predictions(all, 0.7, 9);
    let e = dsl_estimate(&all).unwrap();
    for t in 0..2u8 {
        let (s, n) = all.observations.iter().filter(|o| o.t == t).fold((0.0, 0.0), |(s, n), o| {
            (s + o.primary_label().unwrap() as f64, n + 1.0)
        });
        assert!((e.psi[t as usize] - s / n).abs() < 1e-12);
    }
}

#[test]
fn dsl_equals_ppi_on_balanced_data() {
    // per arm: 2 labeled and 4 unlabeled units, equal prediction means in both parts
    let mut obs = Vec::new();
    let mut preds = Vec::new();
    for t in 0..2u8 {
        for (s, p, l) in [(1, 0.2, 0), (1, 0.6, 1), (0, 0.1, 0), (0, 0.3, 0), (0, 0.5, 0), (0, 0.7, 0)] {
            obs.push(Observation {
                t,
                y_embed: vec![0.0],
                z: vec![],
                s,
                labels: if s == 1 { vec![l] } else { vec![] },
                gold: None,
            });
            preds.push(p + 0.1 * t as f64);
        }
    }
    let ds = Dataset::new(obs, 1, 0, 2, 1).unwrap().with_predictions(preds).unwrap();
    let d = dsl_estimate(&ds).unwrap();
    let p = ppi_estimate(&ds).unwrap();
    assert!((d.psi[0] - p.psi[0]).abs() < 1e-15 && (d.psi[1] - p.psi[1]).abs() < 1e-15);
}

#[test]
fn propensity_recovers_a_logistic_coefficient() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let obs = (0..10_000)
        .map(|_| {
            let z: f64 = rng.random_range(-2.0..2.0);
            let t = u8::from(rng.random::<f64>() < logistic(-0.3 + 1.2 * z));
            Observation { t, y_embed: vec![0.0], z: vec![z], s: 0, labels: vec![], gold: None }
        })
        .collect();
    let ds = Dataset::new(obs, 1, 1, 2, 1).unwrap();
    let units: Vec<usize> = (0..ds.n()).collect();
    let p = fit_propensity(&ds, &units, 0.01).unwrap();
    assert!((p.coef[1] - 1.2).abs() < 0.1 && (p.coef[0] + 0.3).abs() < 0.1);
}

#[test]
fn missing_annotations_cannot_fit_outcome_head() {
    let mut ds = synthetic(200, 4, 0.5, 1);
    for o in &mut ds.observations {
        o.s = 0;
        o.labels.clear();
    }
    let err = sri_perfect(&ds, &SriConfig::default()).unwrap_err().to_string();
    assert!(err.contains("cannot fit outcome head"), "{err}");
    let one = SriConfig { k: 1, ..Default::default() };
    assert!(sri_perfect(&synthetic(200, 4, 0.5, 1), &one).is_err());
}

fn desk_network() -> NetworkConfig {
    NetworkConfig { learning_rate: 1e-3, ..Default::default() }
}

#[test]
fn fold_counts_agree() {
    let ds = synthetic(5000, 64, 0.1, 61);
    let two = sri_perfect(&ds, &SriConfig { k: 2, seed: 3, network: desk_network(), ..Default::default() }).unwrap();
    let five = sri_perfect(&ds, &SriConfig { k: 5, seed: 3, network: desk_network(), ..Default::default() }).unwrap();
    let se = two.se_diff.max(five.se_diff);
    assert!((two.diff - five.diff).abs() < 3.0 * se, "{} vs {}", two.diff, five.diff);
}

#[test]
fn noisy_estimates_stay_in_range() {
    let g = generate_synthetic(&SynthConfig { n: 5000, d: 16, seed: 71, ..Default::default() }).unwrap();
    let ds = sample_annotations(&corrupt_labels(&g, &[0.9, 0.9], 72).unwrap(), 0.4, 73).unwrap();
    let e = sri_noisy(&ds, &SriConfig { k: 2, seed: 1, network: desk_network(), ..Default::default() }).unwrap();
    for t in 0..2 {
        assert!((-0.1..=1.1).contains(&e.psi[t]), "{:?}", e.psi);
    }
    let summary = serde_json::to_value(e.summary()).unwrap();
    assert_eq!(summary["estimator"], "sri-noisy");
    assert_eq!(summary["k"], 2);
}
