use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sri_core::dataset::{corrupt_labels, flip_label, generate_synthetic, Dataset, SynthConfig};
use sri_core::diagnostics::{
    accuracy_check, agreement_check, distance_correlation, equivalence_permutation_test, monte_carlo_p,
    CheckStatus, EquivTestConfig,
};
use sri_core::Error;

fn normals(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
}

/// `V^2 = S1 + S2 - 2 S3` on raw distances.
fn brute_dcor(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let dist = |m: &DMatrix<f64>, i: usize, j: usize| (m.row(i) - m.row(j)).norm();
    let v2 = |p: &DMatrix<f64>, q: &DMatrix<f64>| {
        let (mut s1, mut sa, mut sb, mut s3) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (dist(p, i, j), dist(q, i, j));
                s1 += a * b;
                sa += a;
                sb += b;
                for k in 0..n {
                    s3 += a * dist(q, i, k);
                }
            }
        }
        let nf = n as f64;
        s1 / (nf * nf) + sa * sb / nf.powi(4) - 2.0 * s3 / nf.powi(3)
    };
    (v2(x, y) / (v2(x, x) * v2(y, y)).sqrt()).sqrt()
}

#[test]
fn self_and_affine_dependence() {
    let x = normals(50, 3, 1);
    assert!((distance_correlation(&x, &x).value - 1.0).abs() < 1e-12);
    let y = x.map(|v| 2.0 * v + 1.0);
    assert!((distance_correlation(&x, &y).value - 1.0).abs() < 1e-12);
}

#[test]
fn agrees_with_brute_force_formula() {
    for seed in 0..5 {
        let x = normals(25, 3, seed);
        let y = normals(25, 2, seed + 100).map(|v| v * v) + x.columns(0, 2);
        let got = distance_correlation(&x, &y).value;
        assert!((got - brute_dcor(&x, &y)).abs() < 1e-12, "seed {seed}");
    }
}

#[test]
fn independent_normals_are_nearly_uncorrelated() {
    let r = distance_correlation(&normals(2000, 1, 3), &normals(2000, 1, 4));
    assert!(r.value < 0.08, "{}", r.value);
    assert!(!r.degenerate);
}

#[test]
fn rotation_invariance() {
    let x = normals(80, 4, 5);
    let y = x.map(|v| v.sin()) + normals(80, 4, 6) * 0.3;
    let q = normals(4, 4, 7).qr().q();
    let base = distance_correlation(&x, &y).value;
    assert!((distance_correlation(&(&x * &q), &y).value - base).abs() < 1e-8);
    assert!((distance_correlation(&x, &(&y * q.transpose())).value - base).abs() < 1e-8);
}

#[test]
fn zero_variance_is_flagged() {
    let r = distance_correlation(&DMatrix::from_element(10, 2, 3.0), &normals(10, 1, 0));
    assert_eq!(r.value, 0.0);
    assert!(r.degenerate);
}

fn gold_set(n: usize, seed: u64, accs: [f64; 2]) -> Dataset {
    let ds = generate_synthetic(&SynthConfig {
        n,
        d: 16,
        seed,
        coef_seed: Some(7),
        ..Default::default()
    })
    .unwrap();
    corrupt_labels(&ds, &accs, seed + 1).unwrap()
}

fn all(ds: &Dataset) -> Vec<usize> {
    (0..ds.n()).collect()
}

fn config(delta: f64, b: usize) -> EquivTestConfig {
    EquivTestConfig {
        delta,
        b,
        pca_dims: 8,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn margin_above_every_statistic_gives_minimal_p() {
    let ds = gold_set(120, 2, [0.9, 0.9]);
    let r = equivalence_permutation_test(&ds, &all(&ds), &config(10.0, 9)).unwrap();
    assert_eq!(r.t_observed, 0.0);
    assert!(r.t_permuted.iter().all(|&t| t > 0.0));
    assert!((r.p_value - 0.1).abs() < 1e-15);
    assert_eq!(r.t_permuted.len(), 9);
    assert!(!r.warnings.is_empty());
}

#[test]
fn p_value_never_increases_with_margin() {
    let ds = gold_set(150, 3, [0.85, 0.9]);
    let r = equivalence_permutation_test(&ds, &all(&ds), &config(0.0, 199)).unwrap();
    let mut last = (f64::INFINITY, f64::INFINITY);
    for i in 0..=40 {
        let delta = i as f64 * 0.025;
        let rerun = equivalence_permutation_test(&ds, &all(&ds), &config(delta, 199)).unwrap();
        assert_eq!(rerun.p_value, r.p_value_at(delta));
        assert!(rerun.t_observed <= last.0 && rerun.p_value <= last.1);
        last = (rerun.t_observed, rerun.p_value);
    }
    let interval = r.equivalence_interval.unwrap();
    assert!(r.p_value_at(interval) <= 0.05);
    assert!(r.p_value_at(interval - 1e-9) > 0.05);
}

#[test]
fn test_is_deterministic() {
    let ds = gold_set(100, 4, [0.9, 0.8]);
    let a = equivalence_permutation_test(&ds, &all(&ds), &config(0.1, 49)).unwrap();
    let b = equivalence_permutation_test(&ds, &all(&ds), &config(0.1, 49)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn copied_coder_is_not_declared_independent() {
    let mut ds = gold_set(150, 5, [0.85, 0.85]);
    for o in &mut ds.observations {
        o.labels[1] = o.labels[0];
    }
    let r = equivalence_permutation_test(&ds, &all(&ds), &config(0.0, 199)).unwrap();
    assert!(r.per_stratum.iter().all(|s| (s.d1 - 1.0).abs() < 1e-12));
    for f in [0.0, 0.25, 0.5] {
        assert!(r.p_value_at(f * r.t_observed) > 0.05);
    }
}

#[test]
fn invalid_inputs() {
    let ds = gold_set(60, 6, [0.9, 0.9]);
    let units = all(&ds);
    let one_of_class_one: Vec<usize> = units
        .iter()
        .copied()
        .filter(|&i| ds.observations[i].gold == Some(0))
        .chain(units.iter().copied().find(|&i| ds.observations[i].gold == Some(1)))
        .collect();
    assert!(matches!(
        equivalence_permutation_test(&ds, &one_of_class_one, &config(0.1, 19)),
        Err(Error::EmptySplit(_))
    ));
    let wide = EquivTestConfig { pca_dims: 17, ..config(0.1, 19) };
    assert!(matches!(equivalence_permutation_test(&ds, &units, &wide), Err(Error::InvalidConfig(_))));
    assert!(equivalence_permutation_test(&ds, &units, &config(-0.1, 19)).is_err());
    assert!(equivalence_permutation_test(&ds, &units, &config(0.1, 0)).is_err());
}

#[test]
fn accurate_coder_diagonals() {
    let ds = gold_set(2000, 7, [0.9, 0.9]);
    let r = accuracy_check(&ds, &all(&ds), 0).unwrap();
    for c in 0..2 {
        let row = r.confusion[c].as_ref().unwrap();
        assert!((row[c] - 0.9).abs() < 0.03, "{row:?}");
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(r.status.iter().all(|s| *s == CheckStatus::Pass));
}

#[test]
fn inaccurate_coder_fails_everywhere() {
    let mut ds = gold_set(2000, 8, [1.0, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for o in &mut ds.observations {
        o.labels[1] = flip_label(o.gold.unwrap(), 0.4, 2, &mut rng);
    }
    let r = accuracy_check(&ds, &all(&ds), 1).unwrap();
    assert!(r.status.iter().all(|s| *s == CheckStatus::Fail));
}

#[test]
fn agreement_matches_tabulation() {
    let ds = generate_synthetic(&SynthConfig {
        n: 3000,
        d: 8,
        z_levels: 3,
        seed: 9,
        coef_seed: Some(7),
        ..Default::default()
    })
    .unwrap();
    let ds = corrupt_labels(&ds, &[0.9, 0.9], 10).unwrap();
    let (strata, count) = ds.strata();
    let cells = agreement_check(&ds, &all(&ds), Some(&strata), false).unwrap();
    assert_eq!(cells.len(), count * 2 * 2);
    for cell in cells {
        let members: Vec<_> = ds.observations.iter().zip(&strata).filter(|(_, &s)| s == cell.stratum).collect();
        let hits = members
            .iter()
            .filter(|(o, _)| Some(o.t) == cell.t && o.labels[0] == cell.class && o.labels[1] == cell.class)
            .count();
        let rate = hits as f64 / members.len() as f64;
        assert!((cell.rate.unwrap() - rate).abs() < 1e-15);
        assert_eq!(cell.status == CheckStatus::Pass, rate > 0.5);
    }
}

proptest! {
    #[test]
    fn p_value_lattice(t in 0.0f64..1.0, draws in prop::collection::vec(0.0f64..1.0, 1..60), rot in 0usize..60) {
        let b = draws.len();
        let p = monte_carlo_p(t, &draws);
        let scaled = p * (b + 1) as f64;
        prop_assert!((scaled - scaled.round()).abs() < 1e-9);
        prop_assert!(p > 0.0 && p <= 1.0);
        let mut rotated = draws.clone();
        rotated.rotate_left(rot % b);
        prop_assert_eq!(monte_carlo_p(t, &rotated), p);
    }
}
