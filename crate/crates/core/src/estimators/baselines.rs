use super::Estimate;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

fn predictions(ds: &Dataset) -> Result<&[f64]> {
    ds.predictions
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("machine predictions are required".into()))
}

fn mean_over(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (if n > 0 { s / n as f64 } else { f64::NAN }, n)
}

/// Difference in mean predictions between predictor levels.
pub fn naive_estimate(ds: &Dataset) -> Result<Estimate> {
    let h = predictions(ds)?;
    let n = ds.n() as f64;
    let mut psi = [0.0; 2];
    let mut values = [vec![0.0; ds.n()], vec![0.0; ds.n()]];
    for t in 0..2u8 {
        let (m, count) = mean_over(ds.observations.iter().zip(h).filter(|(o, _)| o.t == t).map(|(_, &v)| v));
        if count == 0 {
            return Err(Error::EmptySplit(format!("no units with t={t}")));
        }
        let p = count as f64 / n;
        for (i, o) in ds.observations.iter().enumerate() {
            if o.t == t {
                values[t as usize][i] = (h[i] - m) / p;
            }
        }
        psi[t as usize] = m;
    }
    Estimate::from_influence("naive", psi, values)
}

/// Prediction mean minus the mean labeled residual, where the prediction
/// mean runs over all units (`all_units`) or only unannotated ones.
fn corrected(ds: &Dataset, name: &str, all_units: bool) -> Result<Estimate> {
    let h = predictions(ds)?;
    let n = ds.n() as f64;
    let mut psi = [0.0; 2];
    let mut values = [vec![0.0; ds.n()], vec![0.0; ds.n()]];
    for t in 0..2u8 {
        let in_first = |o: &crate::dataset::Observation| o.t == t && (all_units || !o.is_labeled());
        let (m, big) = mean_over(ds.observations.iter().zip(h).filter(|(o, _)| in_first(o)).map(|(_, &v)| v));
        let residual = |i: usize| h[i] - ds.observations[i].primary_label().map_or(0.0, |l| l as f64);
        let (r, small) = mean_over(
            ds.observations
                .iter()
                .enumerate()
                .filter(|(_, o)| o.t == t && o.is_labeled())
                .map(|(i, _)| residual(i)),
        );
        if small == 0 {
            return Err(Error::NoLabeledUnits(format!("no annotated units with t={t}")));
        }
        if big == 0 {
            return Err(Error::EmptySplit(format!("no units for the prediction mean at t={t}")));
        }
        let (p, q) = (big as f64 / n, small as f64 / n);
        for (i, o) in ds.observations.iter().enumerate() {
            let mut v = 0.0;
            if in_first(o) {
                v += (h[i] - m) / p;
            }
            if o.t == t && o.is_labeled() {
                v -= (residual(i) - r) / q;
            }
            values[t as usize][i] = v;
        }
        psi[t as usize] = m - r;
    }
    Estimate::from_influence(name, psi, values)
}

pub fn dsl_estimate(ds: &Dataset) -> Result<Estimate> {
    corrected(ds, "dsl", true)
}

pub fn ppi_estimate(ds: &Dataset) -> Result<Estimate> {
    corrected(ds, "ppi", false)
}
