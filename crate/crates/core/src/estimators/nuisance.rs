use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_CLAMP: f64 = 0.01;

fn design(ds: &Dataset, units: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(units.len(), ds.p + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            ds.observations[units[r]].z[c - 1]
        }
    })
}

fn linear(coef: &DVector<f64>, z: &[f64]) -> f64 {
    coef[0] + z.iter().zip(coef.iter().skip(1)).map(|(a, b)| a * b).sum::<f64>()
}

/// Logistic model for `P(T = 1 | Z)`, clamped to `[c2, 1 - c2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Propensity {
    /// Intercept first.
    pub coef: DVector<f64>,
    pub clamp: f64,
}

impl Propensity {
    pub fn treated(&self, z: &[f64]) -> f64 {
        let p = 1.0 / (1.0 + (-linear(&self.coef, z)).exp());
        p.clamp(self.clamp, 1.0 - self.clamp)
    }

    /// `pi_t(z)`.
    pub fn prob(&self, t: usize, z: &[f64]) -> f64 {
        let p = self.treated(z);
        if t == 1 {
            p
        } else {
            1.0 - p
        }
    }
}

/// Newton-Raphson logistic regression of `T` on `Z` over `units`.
pub fn fit_propensity(ds: &Dataset, units: &[usize], clamp: f64) -> Result<Propensity> {
    if !(0.0..0.5).contains(&clamp) {
        return Err(Error::InvalidConfig(format!("propensity clamp {clamp} outside [0, 0.5)")));
    }
    let t: Vec<f64> = units.iter().map(|&i| ds.observations[i].t as f64).collect();
    let treated = t.iter().sum::<f64>();
    if treated == 0.0 || treated == t.len() as f64 {
        return Err(Error::EmptySplit(
            "propensity needs both predictor values in the training units".into(),
        ));
    }
    let x = design(ds, units);
    let mean = treated / t.len() as f64;
    let mut coef = DVector::zeros(ds.p + 1);
    coef[0] = (mean / (1.0 - mean)).ln();
    if ds.p == 0 {
        return Ok(Propensity { coef, clamp });
    }
    for _ in 0..100 {
        let eta = &x * &coef;
        let p = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let resid = DVector::from_fn(t.len(), |i, _| t[i] - p[i]);
        let grad = x.tr_mul(&resid);
        let w = p.map(|v| (v * (1.0 - v)).max(1e-10));
        let mut h = x.tr_mul(&DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * w[i]));
        for j in 0..h.nrows() {
            h[(j, j)] += 1e-9;
        }
        let step = h
            .lu()
            .solve(&grad)
            .ok_or_else(|| Error::Numerical("singular propensity Hessian".into()))?;
        coef += &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    Ok(Propensity { coef, clamp })
}

/// Least-squares fit of outcome predictions on `Z` within one predictor level.
#[derive(Debug, Clone, PartialEq)]
pub struct Mbar {
    pub coef: DVector<f64>,
}

impl Mbar {
    pub fn predict(&self, z: &[f64]) -> f64 {
        linear(&self.coef, z)
    }
}

/// Regresses `outcome` (aligned with `units`) on `Z` among the units with `T = t`.
pub fn fit_mbar(ds: &Dataset, units: &[usize], outcome: &[f64], t: u8) -> Result<Mbar> {
    if outcome.len() != units.len() {
        return Err(Error::Dimension {
            what: "outcome predictions",
            expected: units.len(),
            got: outcome.len(),
        });
    }
    let (rows, y): (Vec<usize>, Vec<f64>) = units
        .iter()
        .zip(outcome)
        .filter(|(&i, _)| ds.observations[i].t == t)
        .map(|(&i, &v)| (i, v))
        .unzip();
    if rows.is_empty() {
        return Err(Error::EmptySplit(format!("no units with t={t} to fit the outcome regression")));
    }
    let x = design(ds, &rows);
    let y = DVector::from_vec(y);
    let coef = x
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(Mbar { coef })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Observation;

    fn ds(rows: &[(u8, f64)]) -> Dataset {
        let obs = rows
            .iter()
            .map(|&(t, z)| Observation {
                t,
                y_embed: vec![0.0],
                z: vec![z],
                s: 0,
                labels: vec![],
                gold: None,
            })
            .collect();
        Dataset::new(obs, 1, 1, 2, 1).unwrap()
    }

    #[test]
    fn intercept_only_propensity() {
        let mut d = ds(&[(1, 0.0), (1, 0.0), (1, 0.0), (0, 0.0), (0, 0.0)]);
        d.p = 0;
        for o in &mut d.observations {
            o.z.clear();
        }
        let p = fit_propensity(&d, &[0, 1, 2, 3, 4], 0.01).unwrap();
        assert!((p.treated(&[]) - 0.6).abs() < 1e-12);
        assert!((p.prob(0, &[]) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn separable_propensity_hits_the_clamp() {
        let d = ds(&[(0, -2.0), (0, -1.0), (1, 1.0), (1, 2.0)]);
        let p = fit_propensity(&d, &[0, 1, 2, 3], 0.01).unwrap();
        assert_eq!(p.treated(&[3.0]), 0.99);
        assert_eq!(p.treated(&[-3.0]), 0.01);
    }

    #[test]
    fn single_valued_t_is_an_error() {
        let d = ds(&[(1, 0.0), (1, 1.0)]);
        assert!(fit_propensity(&d, &[0, 1], 0.01).is_err());
    }

    #[test]
    fn mbar_recovers_linear_truth() {
        let d = ds(&[(1, 0.0), (1, 1.0), (1, 2.5), (0, 4.0)]);
        let out: Vec<f64> = [0.0, 1.0, 2.5, 4.0].iter().map(|z| 2.0 + 3.0 * z).collect();
        let m = fit_mbar(&d, &[0, 1, 2, 3], &out, 1).unwrap();
        assert!((m.coef[0] - 2.0).abs() < 1e-8 && (m.coef[1] - 3.0).abs() < 1e-8);
        assert!(fit_mbar(&d, &[0, 1, 2], &out[..3], 0).is_err());
    }
}
